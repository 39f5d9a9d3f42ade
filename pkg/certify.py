# -*- coding: utf-8 -*-
"""
================================================================================
敏感度与 Rényi 鲁棒性证书
================================================================================
Δ^{A,B}_α(f) = sup_{‖x−y‖_A ≤ α} ‖f(x) − f(y)‖_B

证书（对所有输入一致成立，γ=0）：
- 高斯: ε = λ·Δ²/(2·σ_min(Σ))，Δ 在 ℓ2 下计算
- 拉普拉斯: ε = ‖θ‖₂·ω_t(Δ) + ω_k(Δ) = Δ/b，Δ 在 ℓ1 下计算，对任意λ（含∞）成立

噪声之后的层是确定性后处理，由数据处理不等式保证证书不变。
暴力敏感度只给出下界，只作为测试基准，不进入证书。
================================================================================
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

import rng_utils
from distributions import (NoiseFamily, NormTag, as_norm, carrier_modulus,
                           statistic_modulus, vector_norm)
from divergences import DivergenceKind, as_kind, renyi_to_ladder, renyi_to_tv
from errors import ValidationError, UnsupportedPathError
from renoir_config import DEFAULTS

logger = logging.getLogger(__name__)

MAX_VERTEX_DIM = 16


class SensitivityMethod(str, Enum):
    EXACT_LINEAR = 'ExactLinear'
    LIPSCHITZ_PRODUCT = 'LipschitzProduct'
    BRUTE_FORCE = 'BruteForce'


# ==================== [1. 数据类型] ====================
@dataclass(frozen=True)
class Sensitivity:
    alpha: float
    input_norm: NormTag
    output_norm: NormTag
    value: float
    method: SensitivityMethod

    def __post_init__(self):
        if self.alpha < 0:
            raise ValidationError(f"α必须非负: {self.alpha}", field='alpha')
        if self.value < 0 or math.isnan(self.value):
            raise ValidationError(f"敏感度必须非负: {self.value}", field='value')

    def to_dict(self):
        return {
            'value': self.value,
            'norms': [self.input_norm.value, self.output_norm.value],
            'method': self.method.value,
        }


@dataclass(frozen=True)
class RobustnessCertificate:
    """d-(α, ε, γ) 鲁棒性"""

    alpha: float
    epsilon: float
    lam: float
    gamma: float = 0.0
    metric: DivergenceKind = DivergenceKind.RENYI
    noise: dict = field(default=None)
    delta: Sensitivity = None

    def __post_init__(self):
        if self.epsilon < 0 or math.isnan(self.epsilon):
            raise ValidationError(f"ε必须非负: {self.epsilon}", field='epsilon')
        if not 0.0 <= self.gamma <= 1.0:
            raise ValidationError(f"γ必须在[0,1]: {self.gamma}", field='gamma')

    def to_dict(self):
        return {
            'alpha': self.alpha,
            'epsilon': _json_float(self.epsilon),
            'lambda': _json_float(self.lam),
            'gamma': self.gamma,
            'metric': self.metric.value,
            'noise': self.noise,
            'delta': None if self.delta is None else self.delta.to_dict(),
        }


def _json_float(value):
    return 'inf' if math.isinf(value) else value


def _check_alpha(alpha):
    alpha = float(alpha)
    if math.isnan(alpha) or alpha < 0:
        raise ValidationError(f"α必须非负: {alpha}", field='alpha')
    return alpha


# ==================== [2. 敏感度] ====================
def sensitivity_linear(w, alpha, input_norm='l2', output_norm='l2'):
    """
    线性映射的精确敏感度 Δ = α·‖W‖_{A→B}

    (l2,l2) 最大奇异值；(l1,·) 列范数最大值；(linf,linf) 行ℓ1最大值；
    (l2,linf) 行ℓ2最大值；(linf,·) 其余情形枚举 2^d 个顶点（d ≤ 16）。
    """
    alpha = _check_alpha(alpha)
    a, b = as_norm(input_norm), as_norm(output_norm)
    w = np.atleast_2d(np.asarray(w, dtype=float))
    d = w.shape[1]

    if a == NormTag.L2 and b == NormTag.L2:
        op = float(np.linalg.norm(w, 2))
    elif a == NormTag.L1:
        # ℓ1球的极点是 ±e_i
        op = float(np.max(vector_norm(w.T, b)))
    elif a == NormTag.LINF and b == NormTag.LINF:
        op = float(np.linalg.norm(w, np.inf))
    elif a == NormTag.L2 and b == NormTag.LINF:
        op = float(np.max(np.linalg.norm(w, axis=1)))
    elif a == NormTag.LINF:
        if d > MAX_VERTEX_DIM:
            raise UnsupportedPathError(f"d={d} 顶点过多：use BruteForce method", field='norms')
        vertices = np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
        op = float(np.max(vector_norm(vertices @ w.T, b)))
    else:
        raise UnsupportedPathError(f"范数对 ({a.value},{b.value}) 无精确解：use BruteForce method",
                                   field='norms')
    return Sensitivity(alpha, a, b, alpha * op, SensitivityMethod.EXACT_LINEAR)


def _unit_directions(rng, n, d, norm):
    """在给定范数的单位球面上取方向"""
    if norm == NormTag.L2:
        u = rng.standard_normal((n, d))
    elif norm == NormTag.L1:
        u = rng.laplace(size=(n, d))
    else:
        # 一半取顶点，一半取面上的点
        u = rng.uniform(-1.0, 1.0, size=(n, d))
        half = n // 2
        u[:half] = np.sign(u[:half])
        face = rng.integers(0, d, size=n - half)
        u[half + np.arange(n - half), face] = np.sign(u[half + np.arange(n - half), face])
    norms = vector_norm(u, norm)
    norms[norms == 0] = 1.0
    return u / norms[:, None]


def sensitivity_bruteforce(f, alpha, input_norm, output_norm, low, high,
                           n_pairs=DEFAULTS.BRUTEFORCE_MIN_PAIRS, seed=0):
    """
    黑盒函数敏感度的下界（采样对上的最大值）

    f: 批量函数，(n, d) -> (n, k)
    low, high: 输入域的坐标下界/上界（标量或长度d）
    """
    alpha = _check_alpha(alpha)
    a, b = as_norm(input_norm), as_norm(output_norm)
    if n_pairs < DEFAULTS.BRUTEFORCE_MIN_PAIRS:
        raise ValidationError(f"采样对数量必须≥{DEFAULTS.BRUTEFORCE_MIN_PAIRS}: {n_pairs}", field='n_pairs')
    low = np.atleast_1d(np.asarray(low, dtype=float))
    high = np.atleast_1d(np.asarray(high, dtype=float))
    d = max(low.size, high.size)
    if alpha == 0:
        return Sensitivity(alpha, a, b, 0.0, SensitivityMethod.BRUTE_FORCE)

    rng = rng_utils.derive_rng(seed, rng_utils.STREAM_PAIRS)
    x = rng.uniform(np.broadcast_to(low, d), np.broadcast_to(high, d), size=(n_pairs, d))
    y = x + alpha * _unit_directions(rng, n_pairs, d, a)
    gaps = vector_norm(np.asarray(f(y)) - np.asarray(f(x)), b)
    return Sensitivity(alpha, a, b, float(np.max(gaps)), SensitivityMethod.BRUTE_FORCE)


def sensitivity_lipschitz(prefix, alpha, norm='l2'):
    """
    网络前缀的上界 Δ ≤ α·Π 各层Lipschitz常数

    空前缀（噪声直接加在输入上）给出 Δ = α。
    """
    alpha = _check_alpha(alpha)
    tag = as_norm(norm)
    product = 1.0
    for idx, layer in enumerate(prefix):
        kind = getattr(layer, 'kind', None)
        if kind not in ('linear', 'leaky_relu'):
            raise ValidationError(f"第{idx}层类型未知: {kind!r}", field='prefix')
        product *= layer.lipschitz(tag)
    return Sensitivity(alpha, tag, tag, alpha * product, SensitivityMethod.LIPSCHITZ_PRODUCT)


# ==================== [3. 证书] ====================
def _check_lambda(lam):
    lam = float(lam)
    if math.isnan(lam) or lam < 1:
        raise ValidationError(f"λ必须≥1: {lam}", field='lambda')
    return lam


def certificate(noise, delta, lam=1.0):
    """由噪声模型与敏感度给出 d_{R,λ}-(α, ε) 证书"""
    lam = _check_lambda(lam)
    if noise is None:
        raise ValidationError("certificate requires a noise model", field='noise')

    if noise.family == NoiseFamily.GAUSSIAN:
        if delta.output_norm != NormTag.L2:
            raise ValidationError("高斯证书需要 ℓ2 输出范数的敏感度", field='delta.norms')
        if delta.value == 0:
            eps = 0.0
        elif math.isinf(lam):
            eps = math.inf
        else:
            eps = lam * delta.value ** 2 / (2.0 * noise.sigma_min)
    else:
        if delta.output_norm != NormTag.L1:
            raise ValidationError("拉普拉斯证书需要 ℓ1 输出范数的敏感度", field='delta.norms')
        # ω_t 是零模，ε 与 λ 无关
        eps = statistic_modulus(noise)(delta.value) + carrier_modulus(noise)(delta.value)

    cert = RobustnessCertificate(alpha=delta.alpha, epsilon=float(eps), lam=lam, gamma=0.0,
                                 metric=DivergenceKind.RENYI, noise=noise.to_dict(), delta=delta)
    logger.info(f"[认证] {noise.family.value} α={delta.alpha:g} Δ={delta.value:.6g} λ={lam:g} ε={eps:.6g}")
    return cert


def certificate_norm(noise):
    """噪声族对应的敏感度范数"""
    return NormTag.L2 if noise.family == NoiseFamily.GAUSSIAN else NormTag.L1


def certify_net(net, alpha, lam=1.0):
    """
    对随机化网络给出证书：Δ 取噪声之前前缀的 Lipschitz 上界（空前缀即 α）
    """
    if net.noise is None:
        raise ValidationError("certificate requires a noise model", field='noise')
    delta = sensitivity_lipschitz(net.prefix, alpha, certificate_norm(net.noise))
    if not net.prefix:
        delta = Sensitivity(delta.alpha, delta.input_norm, delta.output_norm, delta.value,
                            SensitivityMethod.EXACT_LINEAR)
    return certificate(net.noise, delta, lam)


def convert_certificate(cert, target_metric, diam=1.0):
    """把 Rényi 证书转换到其它度量（α、γ不变）"""
    target = as_kind(target_metric)
    if cert.metric != DivergenceKind.RENYI:
        raise ValidationError(f"只能从 Rényi 证书转换: {cert.metric.value}", field='metric')
    lam_inf = math.isinf(cert.lam)

    if target in (DivergenceKind.RENYI, DivergenceKind.KL):
        # λ ≥ 1 时 d_KL ≤ d_{R,λ}
        eps = cert.epsilon
    elif target == DivergenceKind.TV:
        eps = renyi_to_tv(cert.epsilon)
    else:
        if target == DivergenceKind.SEPARATION and not lam_inf:
            raise ValidationError("Separation 转换要求 λ=∞", field='metric')
        eps = renyi_to_ladder(cert.epsilon, lambda_is_inf=lam_inf, diam=diam)[target]

    return RobustnessCertificate(alpha=cert.alpha, epsilon=float(eps), lam=cert.lam,
                                 gamma=cert.gamma, metric=target, noise=cert.noise,
                                 delta=cert.delta)
