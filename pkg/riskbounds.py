# -*- coding: utf-8 -*-
"""
================================================================================
概率映射的风险、对抗风险与泛化差距界
================================================================================
Risk(M)      = E_(x,y) P_{y'~M(x)}(y' ≠ y)
Risk^adv(M)  = E_(x,y) sup_{‖τ‖≤α} P_{y'~M(x+τ)}(y' ≠ y)   （用攻击估计，是上确界的下界）

|Risk^adv − Risk| ≤ 1 − e^{−ε}·E_x[e^{−H(M(x))}]              （Rényi鲁棒）
|Risk^adv − Risk| ≤ 1 − (E_x[e^{−H_c(M(x))}] − ε_TV)，截断到[0,1]   （TV鲁棒）

保证准确率 = max(0, 自然准确率 − 差距界)

第i个输入的蒙特卡洛流为 (seed, STREAM_MC, i)，结果与线程数无关。
================================================================================
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict

import numpy as np
import pandas as pd

import rng_utils
from attacks import run_attack
from certify import Sensitivity, SensitivityMethod, certificate, certificate_norm, sensitivity_lipschitz
from divergences import (DiscreteDistribution, collision_entropy, renyi_discrete, renyi_to_tv,
                         shannon_entropy)
from errors import ValidationError
from net import label_counts
from renoir_config import DEFAULTS

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ['alpha', 'epsilon', 'exp_neg_shannon', 'gap_bound', 'guaranteed_accuracy']
CURVE_FLOAT_FORMAT = '%.9g'
SWEEP_COLUMNS = ['family', 'scale', 'alpha', 'epsilon', 'natural_accuracy', 'guaranteed_accuracy']
ATTACK_SWEEP_COLUMNS = ['family', 'scale', 'attack', 'alpha', 'natural_accuracy', 'adversarial_accuracy']


# ==================== [1. 报告类型] ====================
@dataclass(frozen=True)
class RiskReport:
    natural_risk: float
    adversarial_risk: float
    alpha: float
    exp_neg_shannon: float
    exp_neg_collision: float
    gap_bound_renyi: float
    gap_bound_tv: float
    mc_samples: int
    seed: int
    natural_risk_se: float = 0.0
    adversarial_risk_se: float = 0.0
    epsilon: float = 0.0
    epsilon_tv: float = 0.0

    def to_dict(self):
        raw = asdict(self)
        for key, value in raw.items():
            if isinstance(value, float) and math.isinf(value):
                raw[key] = 'inf'
        return raw


@dataclass(frozen=True)
class PredictionChangeReport:
    alpha: float
    epsilon: float
    fraction: float

    def to_dict(self):
        raw = asdict(self)
        if math.isinf(self.epsilon):
            raw['epsilon'] = 'inf'
        return raw


# ==================== [2. 逐输入蒙特卡洛] ====================
def _map_inputs(fn, n, threads=1):
    """按输入编号并行执行；返回顺序与编号一致"""
    threads = max(1, int(threads or 1))
    if threads == 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


def _check_data(data):
    if len(data) == 0:
        raise ValidationError("数据集为空", field='data')


def _counts(net, inputs, n_mc, seed, threads):
    rows = _map_inputs(
        lambda i: label_counts(net, inputs[i], n_mc, seed, (rng_utils.STREAM_MC, i)),
        len(inputs), threads)
    return np.stack(rows)


def _adversarial_inputs(net, data, attack_spec, threads):
    """第i个输入的攻击种子由 (attack_spec.seed, STREAM_ATTACK, i) 派生"""
    _check_attack(data, attack_spec)

    def attack_one(i):
        spec = attack_spec.with_seed(rng_utils.derive_seed(attack_spec.seed, rng_utils.STREAM_ATTACK, i))
        return run_attack(net, data.inputs[i], int(data.labels[i]), spec)

    return np.stack(_map_inputs(attack_one, len(data), threads))


def _check_attack(data, spec):
    if math.isinf(spec.alpha):
        return
    if spec.alpha > data.domain_diameter(spec.norm):
        raise ValidationError(f"预算 {spec.alpha} 超过定义域直径 {data.domain_diameter(spec.norm):g}",
                              field='alpha')


def _risk_from_counts(counts, labels, n_mc):
    """返回 (风险, 蒙特卡洛标准误)"""
    wrong = 1.0 - counts[np.arange(len(labels)), labels] / n_mc
    risk = float(np.mean(wrong))
    se = float(math.sqrt(np.sum(wrong * (1.0 - wrong) / n_mc)) / len(labels))
    return risk, se


def _exp_neg_from_counts(counts, kind):
    entropy_fn = {'shannon': shannon_entropy, 'collision': collision_entropy}.get(kind)
    if entropy_fn is None:
        raise ValidationError(f"熵种类必须是 shannon|collision: {kind!r}", field='kind')
    values = [math.exp(-entropy_fn(DiscreteDistribution.from_counts(c))) for c in counts]
    return float(min(max(np.mean(values), 0.0), 1.0))


# ==================== [3. 风险估计] ====================
def risk_estimate(net, data, n_mc, seed, threads=1):
    """(自然风险, 标准误)"""
    _check_data(data)
    if n_mc < 1:
        raise ValidationError(f"n_mc必须≥1: {n_mc}", field='n_mc')
    counts = _counts(net, data.inputs, n_mc, seed, threads)
    return _risk_from_counts(counts, data.labels, n_mc)


def empirical_risk(net, data, n_mc, seed, threads=1):
    return risk_estimate(net, data, n_mc, seed, threads)[0]


def adv_risk_estimate(net, data, attack_spec, n_mc, seed, threads=1):
    """(对抗风险, 标准误)；风险在攻击给出的点上用与自然风险相同的流估计"""
    _check_data(data)
    adv = _adversarial_inputs(net, data, attack_spec, threads)
    counts = _counts(net, adv, n_mc, seed, threads)
    return _risk_from_counts(counts, data.labels, n_mc)


def empirical_adv_risk(net, data, attack_spec, n_mc, seed, threads=1):
    return adv_risk_estimate(net, data, attack_spec, n_mc, seed, threads)[0]


def exp_neg_entropy(net, data, n_mc, seed, kind='shannon', threads=1):
    """E_x[e^{−H(M(x))}]，H 用经验标签分布的插件估计"""
    _check_data(data)
    if n_mc < DEFAULTS.ENTROPY_MIN_SAMPLES:
        raise ValidationError(f"n_mc必须≥{DEFAULTS.ENTROPY_MIN_SAMPLES}: {n_mc}", field='n_mc')
    counts = _counts(net, data.inputs, n_mc, seed, threads)
    return _exp_neg_from_counts(counts, kind)


# ==================== [4. 差距界] ====================
def _check_unit(value, name):
    value = float(value)
    if math.isnan(value) or value < -1e-12 or value > 1 + 1e-12:
        raise ValidationError(f"{name}必须在[0,1]: {value}", field=name)
    return min(max(value, 0.0), 1.0)


def gap_bound_renyi(epsilon, exp_neg_shannon):
    """1 − e^{−ε}·E[e^{−H}]"""
    epsilon = float(epsilon)
    if math.isnan(epsilon) or epsilon < 0:
        raise ValidationError(f"ε必须非负: {epsilon}", field='epsilon')
    term = _check_unit(exp_neg_shannon, 'exp_neg_shannon')
    return float(min(max(1.0 - math.exp(-epsilon) * term, 0.0), 1.0))


def gap_bound_tv(epsilon_tv, exp_neg_collision):
    """1 − (E[e^{−H_c}] − ε_TV)，截断到[0,1]"""
    eps = _check_unit(epsilon_tv, 'epsilon_tv')
    term = _check_unit(exp_neg_collision, 'exp_neg_collision')
    return float(min(max(1.0 - (term - eps), 0.0), 1.0))


def certified_epsilon(net, alpha, lam, noise=None, prefix_lipschitz=None):
    """
    预算α下的 Rényi ε

    零噪声模型没有证书：α=0 时 ε=0，否则 ε=+∞（界退化为1）。
    """
    noise = net.noise if noise is None else noise
    if noise is None:
        return 0.0 if alpha == 0 else math.inf
    norm = certificate_norm(noise)
    if prefix_lipschitz is not None:
        delta = Sensitivity(alpha, norm, norm, alpha * float(prefix_lipschitz),
                            SensitivityMethod.LIPSCHITZ_PRODUCT)
    elif not net.prefix:
        delta = Sensitivity(alpha, norm, norm, alpha, SensitivityMethod.EXACT_LINEAR)
    else:
        delta = sensitivity_lipschitz(net.prefix, alpha, norm)
    return certificate(noise, delta, lam).epsilon


# ==================== [5. 保证准确率曲线] ====================
def guaranteed_accuracy_curve(net, data, noise, alpha_grid, lam, n_mc, seed,
                              prefix_lipschitz=None, threads=1):
    """
    每个α一行：alpha, epsilon, exp_neg_shannon, gap_bound, guaranteed_accuracy

    noise 不为 None 时，计数与证书都改用该噪声（网络结构与权重不变）。
    """
    _check_data(data)
    grid = [float(a) for a in alpha_grid]
    if not grid:
        raise ValidationError("alpha网格为空", field='alpha_grid')
    if any(a < 0 for a in grid):
        raise ValidationError("alpha必须非负", field='alpha_grid')
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValidationError("alpha网格必须升序", field='alpha_grid')
    if noise is not None:
        net = net.with_noise(noise)
    if net.noise is None:
        logger.warning("[风险] 零噪声模型没有证书，α>0 的保证准确率为0")

    counts = _counts(net, data.inputs, n_mc, seed, threads)
    risk, _ = _risk_from_counts(counts, data.labels, n_mc)
    accuracy = 1.0 - risk
    term = _exp_neg_from_counts(counts, 'shannon')

    rows = []
    for alpha in grid:
        eps = certified_epsilon(net, alpha, lam, prefix_lipschitz=prefix_lipschitz)
        gap = gap_bound_renyi(eps, term)
        rows.append({
            'alpha': alpha,
            'epsilon': eps,
            'exp_neg_shannon': term,
            'gap_bound': gap,
            'guaranteed_accuracy': max(0.0, accuracy - gap),
        })
    logger.info(f"[风险] 曲线 {len(rows)} 行，自然准确率={accuracy:.4f}，E[e^-H]={term:.4f}")
    return pd.DataFrame(rows, columns=CURVE_COLUMNS)


def write_curve_csv(curve, path_or_buf):
    curve.to_csv(path_or_buf, index=False, float_format=CURVE_FLOAT_FORMAT, columns=CURVE_COLUMNS)


# ==================== [6. 预测改变率] ====================
def prediction_change_fraction(net, data, attack_spec, epsilon, n_mc, seed, threads=1):
    """攻击找到 τ 使 KL(M(x+τ) ‖ M(x)) > ε 的输入比例（两侧使用同一组种子）"""
    _check_data(data)
    epsilon = float(epsilon)
    if math.isnan(epsilon) or epsilon < 0:
        raise ValidationError(f"ε必须非负: {epsilon}", field='epsilon')
    natural = _counts(net, data.inputs, n_mc, seed, threads)
    adv = _counts(net, _adversarial_inputs(net, data, attack_spec, threads), n_mc, seed, threads)
    changed = [
        renyi_discrete(DiscreteDistribution.from_counts(q), DiscreteDistribution.from_counts(p), 1.0) > epsilon
        for p, q in zip(natural, adv)
    ]
    return PredictionChangeReport(attack_spec.alpha, epsilon, float(np.mean(changed)))


# ==================== [7. 完整报告] ====================
def risk_report(net, data, attack_spec, lam, n_mc, seed, threads=1):
    """一个 (模型, 数据集, α) 配置的完整风险报告"""
    _check_data(data)
    natural = _counts(net, data.inputs, n_mc, seed, threads)
    adv = _counts(net, _adversarial_inputs(net, data, attack_spec, threads), n_mc, seed, threads)
    nat_risk, nat_se = _risk_from_counts(natural, data.labels, n_mc)
    adv_risk, adv_se = _risk_from_counts(adv, data.labels, n_mc)

    alpha = attack_spec.alpha
    eps = certified_epsilon(net, alpha, lam)
    eps_tv = renyi_to_tv(eps)
    term_h = _exp_neg_from_counts(natural, 'shannon')
    term_c = _exp_neg_from_counts(natural, 'collision')

    report = RiskReport(
        natural_risk=nat_risk,
        adversarial_risk=adv_risk,
        alpha=alpha,
        exp_neg_shannon=term_h,
        exp_neg_collision=term_c,
        gap_bound_renyi=gap_bound_renyi(eps, term_h),
        gap_bound_tv=gap_bound_tv(eps_tv, term_c),
        mc_samples=int(n_mc),
        seed=int(seed),
        natural_risk_se=nat_se,
        adversarial_risk_se=adv_se,
        epsilon=eps,
        epsilon_tv=eps_tv,
    )
    logger.info(f"[风险] α={alpha:g} 自然={nat_risk:.4f} 对抗={adv_risk:.4f} "
                f"界(Rényi)={report.gap_bound_renyi:.4f}")
    return report


# ==================== [8. 噪声水平扫描] ====================
@dataclass
class NoiseLevelSummary:
    """一个噪声水平（一个训练好的模型）的自然准确率、保证准确率与攻击下准确率"""

    family: str
    scale: float
    natural_accuracy: float
    curve: pd.DataFrame
    attack_accuracy: list

    def rows(self):
        return [{'family': self.family, 'scale': self.scale, 'alpha': r.alpha, 'epsilon': r.epsilon,
                 'natural_accuracy': self.natural_accuracy,
                 'guaranteed_accuracy': r.guaranteed_accuracy}
                for r in self.curve.itertuples(index=False)]

    def attack_rows(self):
        return [{'family': self.family, 'scale': self.scale, 'attack': spec.kind.value,
                 'alpha': spec.alpha, 'natural_accuracy': self.natural_accuracy,
                 'adversarial_accuracy': acc}
                for spec, acc in self.attack_accuracy]


def noise_level_summary(net, data, family, scale, alpha_grid, lam, n_mc, seed, attacks=(), threads=1):
    """
    汇总一个噪声水平

    attacks: AttackSpec 序列；每个攻击的准确率 = 1 − 对抗风险
    """
    curve = guaranteed_accuracy_curve(net, data, None, alpha_grid, lam, n_mc, seed, threads=threads)
    natural = 1.0 - risk_estimate(net, data, n_mc, seed, threads)[0]
    attack_accuracy = [(spec, 1.0 - adv_risk_estimate(net, data, spec, n_mc, seed, threads)[0])
                       for spec in attacks]
    logger.info(f"[扫描] {family} scale={scale:g} 自然准确率={natural:.4f}")
    return NoiseLevelSummary(family, float(scale), natural, curve, attack_accuracy)


def sweep_tables(summaries):
    """(保证准确率表, 攻击准确率表)，每个噪声水平按输入顺序排列"""
    rows = [row for s in summaries for row in s.rows()]
    attack_rows = [row for s in summaries for row in s.attack_rows()]
    return (pd.DataFrame(rows, columns=SWEEP_COLUMNS),
            pd.DataFrame(attack_rows, columns=ATTACK_SWEEP_COLUMNS))


def write_sweep_csv(table, path):
    table.to_csv(path, index=False, float_format=CURVE_FLOAT_FORMAT)
