# -*- coding: utf-8 -*-
"""散度测试：离散散度、高斯闭式解与蒙特卡洛、转换阶梯、熵"""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from distributions import NoiseModel
from divergences import (DiscreteDistribution, DivergenceKind, DivergenceValue, collision_entropy,
                         divergence, hellinger_discrete, kl_discrete, renyi_discrete,
                         renyi_gaussian_shift, renyi_mc, renyi_to_ladder, renyi_to_tv,
                         separation_discrete, shannon_entropy, sup_log_ratio, tv_discrete)
from errors import ValidationError
from renoir_config import DEFAULTS


# ==================== 离散分布 ====================
def test_distribution_must_sum_to_one():
    with pytest.raises(ValidationError):
        DiscreteDistribution([0.6, 0.6])
    with pytest.raises(ValidationError):
        DiscreteDistribution([1.2, -0.2])


def test_distribution_is_read_only():
    p = DiscreteDistribution([0.5, 0.5])
    with pytest.raises(ValueError):
        p.probs[0] = 1.0


def test_from_counts_and_push_forward():
    p = DiscreteDistribution.from_counts([2, 1, 1])
    np.testing.assert_allclose(p.probs, [0.5, 0.25, 0.25])
    merged = p.push_forward([0, 1, 1], 2)
    np.testing.assert_allclose(merged.probs, [0.5, 0.5])


def test_divergence_value_clamps_bounded_metrics():
    assert DivergenceValue(DivergenceKind.TV, 1.3).value == 1.0
    assert DivergenceValue(DivergenceKind.HELLINGER, 5.0).value == pytest.approx(math.sqrt(2))
    assert DivergenceValue(DivergenceKind.RENYI, math.inf, lam=2.0).value == math.inf


# ==================== Rényi / TV ====================
def test_renyi_reference_values():
    assert renyi_discrete([0.5, 0.5], [0.5, 0.5], 2) == 0.0
    assert renyi_discrete([1.0, 0.0], [0.5, 0.5], 2) == pytest.approx(math.log(2), abs=1e-12)
    expected_kl = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)
    assert renyi_discrete([0.75, 0.25], [0.5, 0.5], 1) == pytest.approx(expected_kl, abs=1e-12)
    assert kl_discrete([0.75, 0.25], [0.5, 0.5]) == pytest.approx(0.130812, abs=1e-6)


def test_renyi_absolute_continuity_failure_is_infinite():
    assert renyi_discrete([0.5, 0.5], [1.0, 0.0], 2) == math.inf
    assert renyi_discrete([0.5, 0.5], [1.0, 0.0], 1) == math.inf


def test_renyi_infinite_order_is_max_log_ratio():
    assert renyi_discrete([0.8, 0.2], [0.5, 0.5], math.inf) == pytest.approx(math.log(1.6))


def test_renyi_non_decreasing_in_order():
    rng = np.random.default_rng(4)
    for _ in range(50):
        p, q = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
        values = [renyi_discrete(p, q, lam) for lam in (1, 1.5, 2, 5, 20, math.inf)]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))


def test_renyi_rejects_order_below_one():
    with pytest.raises(ValidationError) as exc:
        renyi_discrete([0.5, 0.5], [0.5, 0.5], 0.5)
    assert exc.value.field == 'lambda'


def test_renyi_shape_mismatch():
    with pytest.raises(ValidationError):
        renyi_discrete([0.5, 0.5], [0.2, 0.3, 0.5], 2)


def test_tv_reference_values():
    assert tv_discrete([1, 0], [0, 1]) == 1.0
    assert tv_discrete([0.7, 0.3], [0.5, 0.5]) == pytest.approx(0.2)
    assert tv_discrete([0.3, 0.7], [0.3, 0.7]) == 0.0


def test_other_discrete_metrics():
    assert hellinger_discrete([1, 0], [0, 1]) == pytest.approx(math.sqrt(2))
    assert separation_discrete([0.25, 0.75], [0.5, 0.5]) == pytest.approx(0.5)
    assert divergence([0.7, 0.3], [0.5, 0.5], 'tv').value == pytest.approx(0.2)
    assert divergence([1, 0], [0.5, 0.5], 'renyi', 2).lam == 2.0


def test_divergence_only_computes_direct_metrics():
    with pytest.raises(ValidationError) as exc:
        divergence([0.5, 0.5], [0.5, 0.5], 'wasserstein')
    assert exc.value.field == 'metric'


def test_data_processing_inequality():
    """类别合并不会增大 Rényi 散度"""
    rng = np.random.default_rng(20)
    violations = 0
    for _ in range(200):
        p = DiscreteDistribution(rng.dirichlet(np.ones(8)))
        q = DiscreteDistribution(rng.dirichlet(np.ones(8)))
        for _ in range(50):
            mapping = rng.integers(0, 4, size=8)
            pm, qm = p.push_forward(mapping, 4), q.push_forward(mapping, 4)
            for lam in (1, 2, 10):
                if renyi_discrete(pm, qm, lam) > renyi_discrete(p, q, lam) + 1e-9:
                    violations += 1
    assert violations == 0


# ==================== 高斯闭式解 / 蒙特卡洛 ====================
def test_gaussian_shift_closed_form():
    assert renyi_gaussian_shift([0, 0], [0, 0], np.eye(2), 2) == 0.0
    assert renyi_gaussian_shift([0, 0], [1, 0], np.eye(2), 2) == pytest.approx(1.0)
    assert renyi_gaussian_shift([0, 0], [2, 0], np.diag([4.0, 1.0]), 1) == pytest.approx(0.5)


def test_gaussian_shift_rejects_singular_cov():
    with pytest.raises(ValidationError):
        renyi_gaussian_shift([0, 0], [1, 0], [[1.0, 1.0], [1.0, 1.0]], 2)


def test_renyi_mc_zero_shift():
    est, se = renyi_mc(NoiseModel.gaussian(1.0, 2), [0.0, 0.0], 2, 2000, seed=1)
    assert abs(est) <= 3 * se + 1e-12


def test_renyi_mc_matches_closed_form():
    est, se = renyi_mc(NoiseModel.gaussian(1.0, 2), [1.0, 0.0], 2, 100000, seed=5)
    assert abs(est - 1.0) <= 3 * se + 2e-3


def test_renyi_mc_requires_enough_samples():
    with pytest.raises(ValidationError) as exc:
        renyi_mc(NoiseModel.gaussian(1.0, 1), [0.5], 2, 999, seed=0)
    assert exc.value.field == 'n'


def test_renyi_mc_is_deterministic():
    model = NoiseModel.laplace(0.5, 2)
    assert renyi_mc(model, [0.2, 0.1], 1.5, 1000, 3) == renyi_mc(model, [0.2, 0.1], 1.5, 1000, 3)


def test_laplace_sup_ratio_bounded_by_shift_over_scale():
    model = NoiseModel.laplace(1.0, 1)
    est, se = renyi_mc(model, [0.5], math.inf, 5000, seed=2)
    assert se == 0.0
    assert est <= 0.5 + 1e-6
    grid = np.linspace(-5, 5, 2001)[:, None]
    assert sup_log_ratio(model, [0.5], grid) == pytest.approx(0.5, abs=1e-6)


def test_gaussian_infinite_order_is_unbounded():
    model = NoiseModel.gaussian(1.0, 2)
    assert renyi_mc(model, [0.3, 0.0], math.inf, 1000, seed=4) == (math.inf, 0.0)
    est, _ = renyi_mc(model, [0.0, 0.0], math.inf, 1000, seed=4)
    assert est == 0.0


def test_renyi_mc_sample_floor_follows_defaults(monkeypatch):
    monkeypatch.setattr(DEFAULTS, 'RENYI_MC_MIN_SAMPLES', 2000)
    with pytest.raises(ValidationError):
        renyi_mc(NoiseModel.gaussian(1.0, 1), [0.5], 2, 1500, seed=0)


@pytest.mark.slow
def test_renyi_mc_random_gaussian_cases():
    rng = np.random.default_rng(2024)
    for case in range(20):
        d = int(rng.integers(1, 4))
        a = rng.normal(size=(d, d))
        cov = a @ a.T + 0.5 * np.eye(d)
        lam = float(rng.uniform(1.0, 2.5))
        shift = rng.normal(size=d)
        # 马氏距离缩放到 0.5 以内，保持权重方差有限
        maha = float(shift @ np.linalg.solve(cov, shift))
        shift = shift * math.sqrt(rng.uniform(0.05, 0.5) / maha)
        exact = renyi_gaussian_shift(np.zeros(d), shift, cov, lam)
        est, se = renyi_mc(NoiseModel.gaussian_cov(cov), shift, lam, 1000000, seed=case)
        assert abs(est - exact) <= 3 * se + 2e-3, (case, est, exact, se)


# ==================== 转换阶梯 ====================
def test_renyi_to_tv_reference_values():
    assert renyi_to_tv(0.0) == 0.0
    assert renyi_to_tv(1.0) == pytest.approx(0.673916, abs=1e-6)
    assert renyi_to_tv(10.0) == pytest.approx(math.tanh(5.5), abs=1e-12)
    assert renyi_to_tv(10.0) == pytest.approx(0.999967, abs=1e-6)
    assert renyi_to_tv(math.inf) == 1.0


def test_renyi_to_tv_rejects_negative():
    with pytest.raises(ValidationError):
        renyi_to_tv(-0.1)


def test_ladder_reference_values():
    zero = renyi_to_ladder(0.0)
    assert all(v == 0.0 for v in zero.values())
    assert DivergenceKind.SEPARATION not in zero

    one = renyi_to_ladder(1.0)
    assert one[DivergenceKind.HELLINGER] == pytest.approx(1.0)
    assert one[DivergenceKind.PROKHOROV] == pytest.approx(0.673916, abs=1e-6)
    assert one[DivergenceKind.DISCREPANCY] == pytest.approx(0.673916, abs=1e-6)
    assert renyi_to_ladder(1.0, diam=2.0)[DivergenceKind.WASSERSTEIN] == pytest.approx(0.673916 / 2, abs=1e-6)

    assert renyi_to_ladder(0.25, lambda_is_inf=True)[DivergenceKind.SEPARATION] == 0.25


def test_renyi_to_tv_is_sound_for_gaussian_pairs():
    """积分得到的TV不超过由 λ=2 闭式 Rényi 转换得到的上界"""
    rng = np.random.default_rng(9)
    for _ in range(50):
        m1, m2 = rng.uniform(-2, 2, size=2)
        s = rng.uniform(0.3, 2.0)
        p, q = stats.norm(m1, s), stats.norm(m2, s)
        lo, hi = min(m1, m2) - 12 * s, max(m1, m2) + 12 * s
        tv, _ = integrate.quad(lambda z: 0.5 * abs(p.pdf(z) - q.pdf(z)), lo, hi,
                               points=[0.5 * (m1 + m2)], limit=200)
        eps = renyi_gaussian_shift([m1], [m2], [[s ** 2]], 2)
        assert tv <= renyi_to_tv(eps) + 1e-3


# ==================== 熵 ====================
def test_entropies_reference_values():
    point = [1.0] + [0.0] * 4
    assert shannon_entropy(point) == 0.0
    assert collision_entropy(point) == pytest.approx(0.0, abs=1e-12)

    uniform = np.full(10, 0.1)
    assert shannon_entropy(uniform) == pytest.approx(math.log(10), abs=1e-9)
    assert collision_entropy(uniform) == pytest.approx(math.log(10), abs=1e-9)

    p = [0.5, 0.25, 0.25]
    assert shannon_entropy(p) == pytest.approx(1.5 * math.log(2), abs=1e-9)
    assert collision_entropy(p) == pytest.approx(-math.log(0.375), abs=1e-9)


def test_collision_entropy_never_exceeds_shannon():
    rng = np.random.default_rng(13)
    for _ in range(10000):
        k = int(rng.integers(2, 12))
        p = rng.dirichlet(np.full(k, 0.5))
        p = p / p.sum()
        assert collision_entropy(p) <= shannon_entropy(p) + 1e-12
