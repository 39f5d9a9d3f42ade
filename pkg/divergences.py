# -*- coding: utf-8 -*-
"""
================================================================================
散度与概率度量
================================================================================
- 离散分布上的 Rényi / KL / TV / Hellinger / Separation
- 高斯平移的 Rényi 闭式解与蒙特卡洛估计
- Rényi -> TV / Hellinger / Prokhorov / Discrepancy / Wasserstein / Separation 的转换阶梯
- Shannon 熵与碰撞熵

+∞ 是合法的散度值（绝对连续性不成立），不是错误。
================================================================================
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import linalg
from scipy.special import logsumexp, xlogy
from scipy.stats import entropy

import rng_utils
from distributions import NoiseModel, log_density, sample
from errors import ValidationError
from renoir_config import DEFAULTS

logger = logging.getLogger(__name__)

SUM_TOL = 1e-9
HELLINGER_MAX = math.sqrt(2.0)


class DivergenceKind(str, Enum):
    RENYI = 'renyi'
    KL = 'kl'
    TV = 'tv'
    HELLINGER = 'hellinger'
    PROKHOROV = 'prokhorov'
    DISCREPANCY = 'discrepancy'
    WASSERSTEIN = 'wasserstein'
    SEPARATION = 'separation'


def as_kind(kind):
    try:
        return DivergenceKind(kind)
    except ValueError:
        names = '|'.join(k.value for k in DivergenceKind)
        raise ValidationError(f"未知度量: {kind!r}（可选 {names}）", field='metric')


# ==================== [1. 数据类型] ====================
@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """K个类别上的归一化概率向量"""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).reshape(-1)
        if p.size < 1:
            raise ValidationError("分布至少需要1个类别", field='probs')
        if np.any(~np.isfinite(p)) or np.any(p < 0):
            raise ValidationError(f"概率不能为负或非有限: {p}", field='probs')
        if abs(p.sum() - 1.0) > SUM_TOL:
            raise ValidationError(f"概率之和必须为1（得到 {p.sum():.12f}）", field='probs')
        p.setflags(write=False)
        object.__setattr__(self, 'probs', p)

    @classmethod
    def from_counts(cls, counts):
        counts = np.asarray(counts, dtype=float)
        total = counts.sum()
        if total <= 0:
            raise ValidationError("计数总和必须>0", field='counts')
        return cls(counts / total)

    @property
    def k(self):
        return self.probs.size

    def push_forward(self, mapping, k_out):
        """确定性映射 ρ:[K]->[k_out] 的前推分布（类别合并）"""
        mapping = np.asarray(mapping, dtype=int)
        if mapping.shape != (self.k,) or mapping.min() < 0 or mapping.max() >= k_out:
            raise ValidationError("映射与类别数不匹配", field='mapping')
        return DiscreteDistribution(np.bincount(mapping, weights=self.probs, minlength=k_out))


@dataclass(frozen=True)
class DivergenceValue:
    """带种类的散度值；有界度量被截断到其取值范围"""

    kind: DivergenceKind
    value: float
    lam: float = None

    def __post_init__(self):
        v = float(self.value)
        if np.isnan(v) or v < 0:
            raise ValidationError(f"散度值必须非负: {v}", field='value')
        if self.kind in (DivergenceKind.TV, DivergenceKind.PROKHOROV, DivergenceKind.DISCREPANCY):
            v = min(v, 1.0)
        elif self.kind == DivergenceKind.HELLINGER:
            v = min(v, HELLINGER_MAX)
        object.__setattr__(self, 'value', v)


def _as_probs(p):
    if isinstance(p, DiscreteDistribution):
        return p.probs
    return DiscreteDistribution(p).probs


def _pair(p, q):
    p, q = _as_probs(p), _as_probs(q)
    if p.shape != q.shape:
        raise ValidationError(f"维度不匹配: {p.size} vs {q.size}", field='q')
    return p, q


def _check_lambda(lam):
    lam = float(lam)
    if np.isnan(lam) or lam < 1:
        raise ValidationError(f"λ必须≥1: {lam}", field='lambda')
    return lam


# ==================== [2. 离散散度] ====================
def renyi_discrete(p, q, lam):
    """
    d_{R,λ}(p, q)

    λ=1 为KL极限，λ=∞ 为最大散度 ln max p_i/q_i。
    存在 q_i=0 而 p_i>0 时返回 +∞。
    """
    lam = _check_lambda(lam)
    p, q = _pair(p, q)
    support = p > 0
    if np.any(q[support] == 0):
        return math.inf
    ps, qs = p[support], q[support]
    if lam == 1.0:
        return max(float(np.sum(xlogy(ps, ps) - xlogy(ps, qs))), 0.0)
    if math.isinf(lam):
        return max(float(np.max(np.log(ps) - np.log(qs))), 0.0)
    log_terms = lam * np.log(ps) + (1.0 - lam) * np.log(qs)
    return max(float(logsumexp(log_terms)) / (lam - 1.0), 0.0)


def kl_discrete(p, q):
    return renyi_discrete(p, q, 1.0)


def tv_discrete(p, q):
    """½ Σ|p_i − q_i|"""
    p, q = _pair(p, q)
    return float(min(0.5 * np.sum(np.abs(p - q)), 1.0))


def hellinger_discrete(p, q):
    """[Σ(√p_i − √q_i)²]^{1/2} ∈ [0, √2]"""
    p, q = _pair(p, q)
    return float(min(np.sqrt(np.sum((np.sqrt(p) - np.sqrt(q)) ** 2)), HELLINGER_MAX))


def separation_discrete(p, q):
    """sup_{q_i>0} 1 − p_i/q_i"""
    p, q = _pair(p, q)
    mask = q > 0
    return float(max(np.max(1.0 - p[mask] / q[mask]), 0.0))


# ==================== [3. 高斯闭式解与蒙特卡洛] ====================
def renyi_gaussian_shift(m1, m2, cov, lam):
    """N(m1,Σ) 与 N(m2,Σ) 之间的 Rényi 散度：(λ/2)(m1−m2)ᵀΣ⁻¹(m1−m2)"""
    lam = _check_lambda(lam)
    m1 = np.atleast_1d(np.asarray(m1, dtype=float))
    m2 = np.atleast_1d(np.asarray(m2, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if m1.shape != m2.shape or cov.shape != (m1.size, m1.size):
        raise ValidationError(f"维度不匹配: m1{m1.shape}, m2{m2.shape}, Σ{cov.shape}", field='cov')
    diff = m1 - m2
    if not np.any(diff):
        return 0.0
    try:
        factor = linalg.cho_factor(cov)
    except linalg.LinAlgError:
        raise ValidationError("协方差奇异或非正定", field='cov')
    maha = float(diff @ linalg.cho_solve(factor, diff))
    if math.isinf(lam):
        return math.inf
    return 0.5 * lam * maha


def renyi_mc(model, shift, lam, n, seed):
    """
    噪声分布 P 与其平移 Q = P(· − shift) 之间 Rényi 散度的蒙特卡洛估计

    λ>1: (1/(λ−1))·ln E_P[(p/q)^{λ−1}]，标准误用delta方法；
    λ=1: E_P[ln p/q]；
    λ=∞: 高斯的对数比无界，返回 +∞；拉普拉斯返回样本上 |ln p/q| 的最大值，
          它是真实上确界 ‖shift‖₁/b 的下界（标准误记为0）。

    返回: (估计值, 标准误)
    """
    lam = _check_lambda(lam)
    n = int(n)
    if n < DEFAULTS.RENYI_MC_MIN_SAMPLES:
        raise ValidationError(f"蒙特卡洛样本数必须≥{DEFAULTS.RENYI_MC_MIN_SAMPLES}: {n}", field='n')
    shift = np.atleast_1d(np.asarray(shift, dtype=float))
    if shift.shape != (model.dim,):
        raise ValidationError(f"平移维度不匹配: {shift.shape}", field='shift')
    if math.isinf(lam) and model.is_gaussian and np.any(shift != 0):
        return math.inf, 0.0

    z = sample(model, n, seed, stream=(rng_utils.STREAM_MC,))
    log_ratio = log_density(model, z) - log_density(model, z - shift)

    if math.isinf(lam):
        return float(np.max(np.abs(log_ratio))), 0.0
    if lam == 1.0:
        return float(np.mean(log_ratio)), float(np.std(log_ratio, ddof=1) / math.sqrt(n))

    a = lam - 1.0
    log_w = a * log_ratio
    log_mean = logsumexp(log_w) - math.log(n)
    # 以均值归一化后的权重，避免溢出
    w = np.exp(log_w - log_mean)
    estimate = log_mean / a
    stderr = float(np.std(w, ddof=1) / math.sqrt(n)) / a
    return float(estimate), stderr


def divergence(p, q, kind=DivergenceKind.RENYI, lam=1.0):
    """按种类分派的离散散度（命令行 divergence 子命令使用）"""
    kind = as_kind(kind)
    if kind == DivergenceKind.RENYI:
        return DivergenceValue(kind, renyi_discrete(p, q, lam), lam=float(lam))
    if kind == DivergenceKind.KL:
        return DivergenceValue(kind, kl_discrete(p, q))
    if kind == DivergenceKind.TV:
        return DivergenceValue(kind, tv_discrete(p, q))
    if kind == DivergenceKind.HELLINGER:
        return DivergenceValue(kind, hellinger_discrete(p, q))
    if kind == DivergenceKind.SEPARATION:
        return DivergenceValue(kind, separation_discrete(p, q))
    raise ValidationError(f"{kind.value} 只提供转换上界，不做直接计算", field='metric')


def sup_log_ratio(model, shift, grid):
    """网格上的 sup_z |ln p(z) − ln p(z − shift)|"""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    shift = np.atleast_1d(np.asarray(shift, dtype=float))
    return float(np.max(np.abs(log_density(model, grid) - log_density(model, grid - shift))))


# ==================== [4. 转换阶梯] ====================
def _check_eps(eps):
    eps = float(eps)
    if np.isnan(eps) or eps < 0:
        raise ValidationError(f"ε必须非负: {eps}", field='epsilon')
    return eps


def _tv_branches(eps):
    """(3/2)(√(1+4ε/9) − 1)^{1/2} 与 (e^{ε+1}−1)/(e^{ε+1}+1)"""
    if math.isinf(eps):
        return math.inf, 1.0
    first = 1.5 * math.sqrt(math.sqrt(1.0 + 4.0 * eps / 9.0) - 1.0)
    second = math.tanh((eps + 1.0) / 2.0)
    return first, second


def renyi_to_tv(eps):
    """Rényi-(α,ε) 鲁棒 ⇒ TV-(α,ε′) 鲁棒，返回 ε′ ∈ [0,1]"""
    eps = _check_eps(eps)
    return float(min(min(_tv_branches(eps)), 1.0))


def renyi_to_ladder(eps, lambda_is_inf=False, diam=1.0):
    """
    Rényi ε 转换到其余度量的上界

    Hellinger: √ε；Prokhorov、Discrepancy: 与TV相同的 ε′；
    Wasserstein: 两个分支分别除以 diam(Y)；Separation: ε（仅 λ=∞）。
    """
    eps = _check_eps(eps)
    diam = float(diam)
    if not diam > 0:
        raise ValidationError(f"diam必须>0: {diam}", field='diam')
    tv = renyi_to_tv(eps)
    bounds = {
        DivergenceKind.HELLINGER: min(math.sqrt(eps), HELLINGER_MAX),
        DivergenceKind.PROKHOROV: tv,
        DivergenceKind.DISCREPANCY: tv,
        DivergenceKind.WASSERSTEIN: min(_tv_branches(eps)) / diam,
    }
    if lambda_is_inf:
        bounds[DivergenceKind.SEPARATION] = eps
    return bounds


# ==================== [5. 熵] ====================
def shannon_entropy(p):
    """H = −Σ p_i ln p_i，0·ln0 = 0"""
    probs = _as_probs(p)
    return float(max(entropy(probs), 0.0))


def collision_entropy(p):
    """H_c = −ln Σ p_i²"""
    probs = _as_probs(p)
    return float(max(-math.log(float(np.sum(probs ** 2))), 0.0))
