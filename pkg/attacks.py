# -*- coding: utf-8 -*-
"""
================================================================================
对随机化网络的梯度攻击（EoT包装）
================================================================================
- eot_gradient: m 次噪声采样下损失梯度的均值
- pgd:  ℓ∞，x^{t+1} = P_{x⊕r}(x^t + step·sign(∇)), 球内随机起点
- cw_l2: ℓ2，tanh重参数化，目标 c·‖r‖₂ + g(x+r)，对 c 二分搜索
- ead_l1: ℓ1，目标 c1·‖r‖₁ + c2·‖r‖₂ + g(x+r)，迭代收缩阈值（ISTA）
- grid_attack: 1~3维输入上的穷举网格，作为真实上确界的基准

攻击是否成功由评估种子上100次采样的多数投票判定，与EoT种子分开。
所有输出都在 [−1,1]^d 内。
================================================================================
"""

import dataclasses
import itertools
import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import softmax

import rng_utils
from distributions import NormTag, as_norm, vector_norm
from errors import ValidationError
from net import DOMAIN_HIGH, DOMAIN_LOW, predict_distribution
from renoir_config import DEFAULTS

logger = logging.getLogger(__name__)

TANH_EPS = 1e-6
MAX_GRID_DIM = 3


class AttackKind(str, Enum):
    PGD = 'pgd'
    CW = 'cw'
    EAD = 'ead'
    GRID = 'grid'


# 每种攻击的范数
KIND_NORM = {
    AttackKind.PGD: NormTag.LINF,
    AttackKind.CW: NormTag.L2,
    AttackKind.EAD: NormTag.L1,
}


# ==================== [1. 攻击参数] ====================
@dataclass(frozen=True)
class AttackSpec:
    """
    攻击参数

    alpha 对 PGD/Grid 是预算；对 C&W/EAD 是风险估计时的预算（超出视为失败）。
    C&W/EAD 的 steps / step_size 是内层学习器的步数与学习率。
    """

    kind: AttackKind
    norm: NormTag
    alpha: float
    steps: int
    step_size: float
    eot_samples: int = DEFAULTS.EOT_SAMPLES
    seed: int = 0
    eval_samples: int = DEFAULTS.EVAL_SAMPLES
    eval_seed: int = None
    random_start: bool = True
    eot_mode: str = 'loss'
    # C&W
    c_init: float = DEFAULTS.CW_INITIAL_CONST
    confidence: float = DEFAULTS.CW_CONFIDENCE
    binary_steps: int = DEFAULTS.CW_BINARY_STEPS
    # EAD
    c1: float = DEFAULTS.EAD_C1
    c2: float = DEFAULTS.EAD_C2
    # Grid
    grid_resolution: int = DEFAULTS.GRID_RESOLUTION

    def __post_init__(self):
        object.__setattr__(self, 'kind', AttackKind(self.kind))
        object.__setattr__(self, 'norm', as_norm(self.norm))
        if math.isnan(self.alpha) or self.alpha < 0:
            raise ValidationError(f"预算必须非负: {self.alpha}", field='alpha')
        if self.steps < 1:
            raise ValidationError(f"步数必须≥1: {self.steps}", field='steps')
        if self.eot_samples < 1:
            raise ValidationError(f"EoT采样数必须≥1: {self.eot_samples}", field='eot_samples')
        if self.eval_samples < 1:
            raise ValidationError(f"评估采样数必须≥1: {self.eval_samples}", field='eval_samples')
        if self.step_size < 0:
            raise ValidationError(f"步长必须非负: {self.step_size}", field='step_size')
        if self.eot_mode not in ('loss', 'logits'):
            raise ValidationError(f"EoT模式必须是 loss|logits: {self.eot_mode!r}", field='eot_mode')
        if self.confidence < 0:
            raise ValidationError(f"κ必须非负: {self.confidence}", field='confidence')
        if self.grid_resolution < 1:
            raise ValidationError(f"网格分辨率必须≥1: {self.grid_resolution}", field='grid_resolution')
        expected = KIND_NORM.get(self.kind)
        if expected is not None and self.norm != expected:
            raise ValidationError(f"{self.kind.value} 只支持 {expected.value} 范数", field='norm')

    @classmethod
    def default(cls, kind, **overrides):
        """按攻击种类填充默认值"""
        kind = AttackKind(kind)
        base = {
            AttackKind.PGD: dict(norm=NormTag.LINF, alpha=DEFAULTS.PGD_ALPHA,
                                 steps=DEFAULTS.PGD_STEPS, step_size=DEFAULTS.PGD_STEP_SIZE),
            AttackKind.CW: dict(norm=NormTag.L2, alpha=math.inf, steps=DEFAULTS.CW_LEARNER_STEPS,
                                step_size=DEFAULTS.CW_LEARNING_RATE),
            AttackKind.EAD: dict(norm=NormTag.L1, alpha=math.inf, steps=DEFAULTS.EAD_STEPS,
                                 step_size=DEFAULTS.EAD_LEARNING_RATE),
            AttackKind.GRID: dict(norm=NormTag.L2, alpha=DEFAULTS.PGD_ALPHA, steps=1, step_size=0.0),
        }[kind]
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(kind=kind, **base)

    @property
    def resolved_eval_seed(self):
        if self.eval_seed is not None:
            return self.eval_seed
        return rng_utils.derive_seed(self.seed, rng_utils.STREAM_EVAL)

    def with_seed(self, seed):
        return dataclasses.replace(self, seed=int(seed), eval_seed=self.eval_seed)

    def to_dict(self):
        raw = dataclasses.asdict(self)
        raw['kind'] = self.kind.value
        raw['norm'] = self.norm.value
        if math.isinf(self.alpha):
            raw['alpha'] = 'inf'
        return raw

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        if 'kind' not in raw:
            raise ValidationError("攻击缺少kind", field='attack.kind')
        try:
            kind = AttackKind(raw.pop('kind'))
        except ValueError as e:
            raise ValidationError(str(e), field='attack.kind')
        if raw.get('alpha') == 'inf':
            raw['alpha'] = math.inf
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"未知字段: {sorted(unknown)}", field='attack')
        return cls.default(kind, **raw)


@dataclass(frozen=True, eq=False)
class AttackResult:
    """C&W/EAD 的结果：失败时 x_adv 为原输入"""

    x_adv: np.ndarray
    success: bool
    perturbation_norm: float


# ==================== [2. EoT梯度] ====================
def _eot_backward(net, x, m, seed, stream, dlogits_fn):
    """m 次噪声下 Σ_i ∂/∂x 的均值；零噪声网络只算一次"""
    x = np.asarray(x, dtype=float)
    if net.is_deterministic:
        rows, draws = x[None, :], None
    else:
        rows = np.repeat(x[None, :], m, axis=0)
        draws = net.draw_noise(m, seed, stream)
    logits, cache = net.forward(rows, draws, keep_cache=True)
    dlogits = dlogits_fn(logits) / rows.shape[0]
    _, dx = net.backward(cache, dlogits)
    return dx.sum(axis=0)


def eot_gradient(net, x, y, m, seed, stream=(rng_utils.STREAM_EOT,), mode='loss'):
    """
    交叉熵对输入的EoT梯度

    mode='loss'   : 逐次采样的损失梯度取平均
    mode='logits' : 先平均logits再求交叉熵的梯度
    """
    if m < 1:
        raise ValidationError(f"m必须≥1: {m}", field='m')

    def dloss(logits):
        p = softmax(logits, axis=1)
        p[:, y] -= 1.0
        return p

    def dloss_mean_logits(logits):
        p = softmax(logits.mean(axis=0))
        p[y] -= 1.0
        return np.tile(p, (logits.shape[0], 1))

    fn = dloss if mode == 'loss' else dloss_mean_logits
    return _eot_backward(net, x, m, seed, stream, fn)


def input_gradient(net, x, y):
    """零噪声下的交叉熵输入梯度"""
    return eot_gradient(net.with_noise(None), x, y, 1, 0)


def eot_margin_gradient(net, x, y, m, seed, stream, kappa=0.0):
    """g(x) = max(Z_y − max_{j≠y} Z_j, −κ) 的EoT梯度"""

    def dmargin(logits):
        other = logits.copy()
        other[:, y] = -np.inf
        j = np.argmax(other, axis=1)
        rows = np.arange(logits.shape[0])
        active = ((logits[rows, y] - logits[rows, j]) > -kappa).astype(float)
        grad = np.zeros_like(logits)
        grad[rows, y] = active
        grad[rows, j] -= active
        return grad

    return _eot_backward(net, x, m, seed, stream, dmargin)


# ==================== [3. 工具] ====================
def clip_domain(x):
    return np.clip(x, DOMAIN_LOW, DOMAIN_HIGH)


def majority_prediction(net, x, spec):
    """评估种子上 eval_samples 次采样的多数投票"""
    dist = predict_distribution(net, x, spec.eval_samples, spec.resolved_eval_seed,
                                stream=(rng_utils.STREAM_EVAL,))
    return int(np.argmax(dist.probs))


def _is_success(net, x, y, spec):
    return majority_prediction(net, x, spec) != y


# ==================== [4. PGD] ====================
def pgd(net, x, y, spec, callback=None):
    """ℓ∞ PGD；callback(t, x_t) 在每一步投影之后调用"""
    if spec.kind != AttackKind.PGD:
        raise ValidationError(f"需要PGD参数: {spec.kind.value}", field='kind')
    x0 = np.asarray(x, dtype=float)
    alpha = spec.alpha

    def project(z):
        return clip_domain(x0 + np.clip(z - x0, -alpha, alpha))

    if spec.random_start:
        rng = rng_utils.derive_rng(spec.seed, rng_utils.STREAM_ATTACK)
        x_t = project(x0 + rng.uniform(-alpha, alpha, size=x0.shape))
    else:
        x_t = x0.copy()

    for t in range(spec.steps):
        grad = eot_gradient(net, x_t, y, spec.eot_samples, spec.seed,
                            stream=(rng_utils.STREAM_EOT, t), mode=spec.eot_mode)
        x_t = project(x_t + spec.step_size * np.sign(grad))
        if callback is not None:
            callback(t, x_t)
    return x_t


# ==================== [5. C&W ℓ2] ====================
def cw_l2(net, x, y, spec):
    """
    C&W ℓ2（EoT）

    x′ = tanh(w) 保证落在 [−1,1]；学习器为固定学习率的梯度下降。
    c 越大距离项权重越大：成功则增大 c，失败则减小 c。
    """
    if spec.kind != AttackKind.CW:
        raise ValidationError(f"需要C&W参数: {spec.kind.value}", field='kind')
    x = np.asarray(x, dtype=float)
    if _is_success(net, x, y, spec):
        return AttackResult(x.copy(), True, 0.0)

    w0 = np.arctanh(np.clip(x, -1.0 + TANH_EPS, 1.0 - TANH_EPS))
    lower, upper = 0.0, math.inf
    c = spec.c_init
    best, best_norm = None, math.inf

    for bs in range(spec.binary_steps):
        w = w0.copy()
        found = False
        for t in range(spec.steps):
            x_adv = np.tanh(w)
            r = x_adv - x
            rn = float(np.linalg.norm(r))
            g = eot_margin_gradient(net, x_adv, y, spec.eot_samples, spec.seed,
                                    (rng_utils.STREAM_EOT, bs, t), spec.confidence)
            grad_x = c * (r / rn if rn > 0 else 0.0) + g
            w = w - spec.step_size * grad_x * (1.0 - x_adv ** 2)
            candidate = np.tanh(w)
            if _is_success(net, candidate, y, spec):
                found = True
                norm = float(np.linalg.norm(candidate - x))
                if norm < best_norm:
                    best, best_norm = candidate, norm
        if found:
            lower = c
            c = c * 10.0 if math.isinf(upper) else 0.5 * (c + upper)
        else:
            upper = c
            c = 0.5 * (lower + upper)
        logger.debug(f"[攻击] C&W 二分第{bs}步 c={c:.4g} 最优‖r‖₂={best_norm:.4g}")

    if best is None:
        return AttackResult(x.copy(), False, math.inf)
    return AttackResult(best, True, best_norm)


# ==================== [6. EAD ℓ1] ====================
def ead_l1(net, x, y, spec):
    """
    EAD（EoT）：光滑部分 c2·‖r‖₂ + g(x+r) 做梯度步，
    然后以阈值 c1·step_size 做软阈值收缩，再投影回定义域。
    """
    if spec.kind != AttackKind.EAD:
        raise ValidationError(f"需要EAD参数: {spec.kind.value}", field='kind')
    x = np.asarray(x, dtype=float)
    if _is_success(net, x, y, spec):
        return AttackResult(x.copy(), True, 0.0)

    lr = spec.step_size
    threshold = spec.c1 * lr
    r = np.zeros_like(x)
    best, best_norm = None, math.inf

    for t in range(spec.steps):
        rn = float(np.linalg.norm(r))
        g = eot_margin_gradient(net, x + r, y, spec.eot_samples, spec.seed,
                                (rng_utils.STREAM_EOT, t), spec.confidence)
        z = r - lr * (spec.c2 * (r / rn if rn > 0 else 0.0) + g)
        r = np.sign(z) * np.maximum(np.abs(z) - threshold, 0.0)
        r = clip_domain(x + r) - x
        candidate = x + r
        if _is_success(net, candidate, y, spec):
            norm = float(np.sum(np.abs(r)))
            if norm < best_norm:
                best, best_norm = candidate, norm

    if best is None:
        return AttackResult(x.copy(), False, math.inf)
    return AttackResult(best, True, best_norm)


# ==================== [7. 网格攻击] ====================
def grid_offsets(alpha, resolution, d, norm):
    """B(α) 内的网格偏移，按范数从小到大排列（第一个是零偏移）"""
    ticks = alpha * np.arange(-resolution, resolution + 1) / resolution
    offsets = np.array(list(itertools.product(ticks, repeat=d)))
    norms = vector_norm(offsets, norm)
    keep = norms <= alpha * (1.0 + 1e-12)
    offsets, norms = offsets[keep], norms[keep]
    return offsets[np.argsort(norms, kind='stable')]


def grid_attack(net, x, y, spec):
    """
    穷举网格：返回 B(α) 内蒙特卡洛误分类概率最大的网格点

    所有候选点共用同一组噪声（公共随机数），并列时取扰动最小者。
    """
    x = np.asarray(x, dtype=float)
    d = x.size
    if d > MAX_GRID_DIM:
        raise ValidationError(f"网格攻击只支持 d ≤ {MAX_GRID_DIM}: d={d}", field='x')
    if spec.alpha == 0:
        return x.copy()
    if math.isinf(spec.alpha):
        raise ValidationError("网格攻击需要有限预算", field='alpha')

    candidates = clip_domain(x + grid_offsets(spec.alpha, spec.grid_resolution, d, spec.norm))
    if net.is_deterministic:
        wrong = (np.argmax(net.forward(candidates), axis=1) != y).astype(float)
    else:
        m = spec.eot_samples
        draws = net.draw_noise(m, spec.seed, (rng_utils.STREAM_ATTACK,))
        rows = np.repeat(candidates, m, axis=0)
        logits = net.forward(rows, np.tile(draws, (len(candidates), 1)))
        wrong = (np.argmax(logits, axis=1) != y).reshape(len(candidates), m).mean(axis=1)
    return candidates[int(np.argmax(wrong))].copy()


# ==================== [8. 分派] ====================
def run_attack(net, x, y, spec):
    """
    返回预算内的对抗样本

    α=0 时原样返回 x；C&W/EAD 失败或扰动超出 α 时返回 x。
    """
    x = np.asarray(x, dtype=float)
    if spec.alpha == 0:
        return x.copy()
    if spec.kind == AttackKind.PGD:
        return pgd(net, x, y, spec)
    if spec.kind == AttackKind.GRID:
        return grid_attack(net, x, y, spec)
    result = cw_l2(net, x, y, spec) if spec.kind == AttackKind.CW else ead_l1(net, x, y, spec)
    if not result.success or float(vector_norm(result.x_adv - x, spec.norm)) > spec.alpha:
        return x.copy()
    return result.x_adv
