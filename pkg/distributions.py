# -*- coding: utf-8 -*-
"""
================================================================================
指数族噪声模型
================================================================================
- NoiseModel: 高斯（协方差Σ或各向同性σ²I）与拉普拉斯（尺度b，坐标独立同分布）
- ContinuityModulus: 连续性模 ω（线性或零）
- sample / log_density / carrier_modulus / statistic_modulus

新的指数族只需提供 (log_density, ω_t, ω_k) 即可接入认证流程。
所有对数均为自然对数。
================================================================================
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import stats

import rng_utils
from errors import ValidationError, UnsupportedPathError

logger = logging.getLogger(__name__)

SYMMETRY_RTOL = 1e-12
DEGENERATE_EIG = 1e-12


class NoiseFamily(str, Enum):
    GAUSSIAN = 'gaussian'
    LAPLACE = 'laplace'


class NormTag(str, Enum):
    L1 = 'l1'
    L2 = 'l2'
    LINF = 'linf'

    @property
    def ord(self):
        return {'l1': 1, 'l2': 2, 'linf': np.inf}[self.value]


def as_norm(tag):
    """'l2' / NormTag -> NormTag"""
    try:
        return NormTag(tag)
    except ValueError:
        raise ValidationError(f"未知范数: {tag!r}（可选 l1|l2|linf）", field='norm')


def vector_norm(v, tag):
    """沿最后一维计算范数"""
    return np.linalg.norm(np.asarray(v, dtype=float), ord=as_norm(tag).ord, axis=-1)


# ==================== [1. 连续性模] ====================
@dataclass(frozen=True)
class ContinuityModulus:
    """非减连续性模 ω，ω(0)=0"""

    kind: str            # 'linear' | 'zero'
    slope: float
    input_norm: NormTag
    output_norm: NormTag

    def __call__(self, delta):
        if delta < 0:
            raise ValidationError(f"δ必须非负: {delta}", field='delta')
        if self.kind == 'zero':
            return 0.0
        return self.slope * delta


# ==================== [2. 噪声模型] ====================
@dataclass(frozen=True, eq=False)
class NoiseModel:
    """
    指数族噪声

    高斯: cov 为 d×d 对称正定矩阵，sigma_min 为其最小特征值；
          isotropic_sigma 不为空时表示 σ²I 的快捷形式（序列化时保留）。
    拉普拉斯: scale_b > 0，各坐标独立同分布。
    """

    family: NoiseFamily
    dim: int
    cov: np.ndarray = None
    sigma_min: float = None
    scale_b: float = None
    isotropic_sigma: float = None

    def __post_init__(self):
        if not isinstance(self.dim, (int, np.integer)) or self.dim < 1:
            raise ValidationError(f"维度必须≥1: {self.dim!r}", field='dim')

    # ---------- 构造 ----------
    @classmethod
    def gaussian(cls, sigma, dim):
        """各向同性高斯 N(0, σ²I)"""
        sigma = float(sigma)
        if not np.isfinite(sigma) or sigma ** 2 <= DEGENERATE_EIG:
            raise ValidationError(f"退化协方差（σ={sigma}），请使用零噪声模式", field='sigma')
        cov = np.eye(int(dim)) * sigma ** 2
        return cls(NoiseFamily.GAUSSIAN, int(dim), cov=cov, sigma_min=sigma ** 2,
                   isotropic_sigma=sigma)

    @classmethod
    def gaussian_cov(cls, cov):
        """一般协方差高斯 N(0, Σ)"""
        cov = np.array(cov, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or cov.shape[0] < 1:
            raise ValidationError(f"协方差必须是方阵: shape={cov.shape}", field='cov')
        scale = max(np.max(np.abs(cov)), 1e-300)
        if np.max(np.abs(cov - cov.T)) > SYMMETRY_RTOL * scale:
            raise ValidationError("协方差不对称", field='cov')
        cov = 0.5 * (cov + cov.T)
        eig = np.linalg.eigvalsh(cov)
        if eig[0] <= DEGENERATE_EIG:
            raise ValidationError(f"退化协方差（最小特征值 {eig[0]:.3e}）", field='cov')
        return cls(NoiseFamily.GAUSSIAN, cov.shape[0], cov=cov, sigma_min=float(eig[0]))

    @classmethod
    def laplace(cls, b, dim):
        """拉普拉斯噪声，密度 Π 1/(2b)·exp(-|z_i|/b)"""
        b = float(b)
        if not np.isfinite(b) or b <= 0:
            raise ValidationError(f"拉普拉斯尺度必须>0: {b}", field='b')
        return cls(NoiseFamily.LAPLACE, int(dim), scale_b=b)

    @property
    def is_gaussian(self):
        return self.family == NoiseFamily.GAUSSIAN

    # ---------- 序列化 ----------
    def to_dict(self):
        if self.family == NoiseFamily.LAPLACE:
            return {'family': 'laplace', 'b': self.scale_b, 'dim': self.dim}
        if self.isotropic_sigma is not None:
            return {'family': 'gaussian', 'sigma': self.isotropic_sigma, 'dim': self.dim}
        return {'family': 'gaussian', 'cov': self.cov.tolist()}

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ValidationError(f"噪声描述必须是对象: {raw!r}", field='noise')
        family = raw.get('family')
        if family == 'gaussian':
            if 'cov' in raw:
                return cls.gaussian_cov(raw['cov'])
            if 'sigma' not in raw or 'dim' not in raw:
                raise ValidationError("高斯噪声需要 sigma+dim 或 cov", field='noise')
            return cls.gaussian(raw['sigma'], raw['dim'])
        if family == 'laplace':
            if 'b' not in raw or 'dim' not in raw:
                raise ValidationError("拉普拉斯噪声需要 b+dim", field='noise')
            return cls.laplace(raw['b'], raw['dim'])
        raise ValidationError(f"未知噪声族: {family!r}", field='noise.family')

    def __repr__(self):
        return f"NoiseModel({self.to_dict()})"


def noise_from_spec(spec):
    """'none' / None -> None（零噪声哨兵），否则 NoiseModel"""
    if spec is None or spec == 'none':
        return None
    if isinstance(spec, NoiseModel):
        return spec
    return NoiseModel.from_dict(spec)


def noise_to_spec(model):
    return 'none' if model is None else model.to_dict()


# ==================== [3. 采样与密度] ====================
def _draw_fn(model):
    d = model.dim
    if model.family == NoiseFamily.LAPLACE:
        b = model.scale_b
        return lambda rng, k: rng.laplace(0.0, b, size=(k, d))
    if model.isotropic_sigma is not None:
        s = model.isotropic_sigma
        return lambda rng, k: rng.standard_normal((k, d)) * s
    chol = np.linalg.cholesky(model.cov)
    return lambda rng, k: rng.standard_normal((k, d)) @ chol.T


def sample(model, n, seed, stream=()):
    """
    采样 n 个噪声向量 (n × d)

    第i行只依赖 (seed, stream, i // BLOCK_SIZE)，与并行度无关。
    """
    n = int(n)
    if n < 1:
        raise ValidationError(f"采样数必须≥1: {n}", field='n')
    stream = tuple(stream) or (rng_utils.STREAM_NOISE,)
    return rng_utils.blocked_draws(seed, stream, n, _draw_fn(model))


def sample_indexed(model, ids, seed, stream=(rng_utils.STREAM_NOISE,)):
    """按样本编号采样：编号k的噪声只依赖 (seed, stream, k)"""
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    return rng_utils.indexed_draws(seed, stream, ids, _draw_fn(model))


def log_density(model, z):
    """
    自然对数密度

    z: 长度d的向量，或 (n, d) 矩阵（返回长度n的数组）
    """
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != model.dim or z.ndim > 2:
        raise ValidationError(f"维度不匹配: 期望{model.dim}, 得到{z.shape}", field='z')
    if model.family == NoiseFamily.LAPLACE:
        out = np.sum(stats.laplace.logpdf(z, loc=0.0, scale=model.scale_b), axis=-1)
    else:
        out = stats.multivariate_normal.logpdf(z, mean=np.zeros(model.dim), cov=model.cov)
    if z.ndim == 2:
        return np.asarray(out, dtype=float).reshape(z.shape[0])
    return float(out)


# ==================== [4. 连续性模] ====================
def carrier_modulus(model):
    """ω_k：拉普拉斯载体 k(z) = -‖z‖₁/b 的模，ω_k(δ) = δ/b（输入ℓ1）"""
    _require_laplace(model)
    return ContinuityModulus('linear', 1.0 / model.scale_b, NormTag.L1, NormTag.L1)


def statistic_modulus(model):
    """ω_t：拉普拉斯的θ项为零"""
    _require_laplace(model)
    return ContinuityModulus('zero', 0.0, NormTag.L1, NormTag.L2)


def _require_laplace(model):
    if model.family != NoiseFamily.LAPLACE:
        raise UnsupportedPathError("高斯噪声没有通用模：use Gaussian certificate path", field='family')
