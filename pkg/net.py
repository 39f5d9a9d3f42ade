# -*- coding: utf-8 -*-
"""
================================================================================
随机化网络（带噪声注入层的小型前馈网络）
================================================================================
N(x) = φ^n ∘ ... ∘ φ^{i+1}( N_{|i}(x) + X )

- 层: 线性层 / LeakyReLU；最后一层必须是输出num_classes个logits的线性层
- noise_layer_index = i: 噪声加在前i层的输出上（i=0 即加在输入上）
- noise = None 为零噪声哨兵（确定性模式）
- 手写反向传播、交叉熵训练（动量SGD + 分段常数学习率）
- 每个样本每次前向独立采一次噪声
================================================================================
"""

import copy
import json
import logging
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

import rng_utils
from distributions import noise_from_spec, noise_to_spec, sample, sample_indexed
from divergences import DiscreteDistribution
from errors import ValidationError, ModelFileError, NumericError
from renoir_config import DEFAULTS

logger = logging.getLogger(__name__)

DOMAIN_LOW = -1.0
DOMAIN_HIGH = 1.0
DOMAIN_TOL = 1e-12


# ==================== [1. 层] ====================
class LinearLayer:
    """y = x Wᵀ + b，W形状 (out, in)"""

    kind = 'linear'

    def __init__(self, w, b=None):
        self.w = np.array(w, dtype=float)
        if self.w.ndim != 2:
            raise ValidationError(f"权重必须是矩阵: shape={self.w.shape}", field='w')
        self.b = np.zeros(self.w.shape[0]) if b is None else np.array(b, dtype=float).reshape(-1)
        if self.b.shape != (self.w.shape[0],):
            raise ValidationError(f"偏置维度不匹配: {self.b.shape}", field='b')

    @property
    def in_dim(self):
        return self.w.shape[1]

    @property
    def out_dim(self):
        return self.w.shape[0]

    def forward(self, x):
        return x @ self.w.T + self.b

    def backward(self, x, dout):
        """返回 (dx, dw, db)"""
        return dout @ self.w, dout.T @ x, dout.sum(axis=0)

    def lipschitz(self, norm='l2'):
        """精确算子范数"""
        order = {'l1': 1, 'l2': 2, 'linf': np.inf}[str(getattr(norm, 'value', norm))]
        return float(np.linalg.norm(self.w, ord=order))

    def to_dict(self):
        return {'kind': 'linear', 'w': self.w.tolist(), 'b': self.b.tolist()}


class LeakyReLULayer:
    """逐坐标 max(x, slope·x)"""

    kind = 'leaky_relu'

    def __init__(self, slope=None):
        self.slope = DEFAULTS.LEAKY_SLOPE if slope is None else float(slope)

    def forward(self, x):
        return np.where(x > 0, x, self.slope * x)

    def backward(self, x, dout):
        return np.where(x > 0, dout, self.slope * dout), None, None

    def lipschitz(self, norm='l2'):
        # 逐坐标作用，在任何ℓp范数下常数相同
        return max(1.0, abs(self.slope))

    def to_dict(self):
        return {'kind': 'leaky_relu', 'slope': self.slope}


def layer_from_dict(raw, index=0):
    """模型文件中的一层；结构不对时抛 ModelFileError（字段名带层号）"""
    where = f'layers[{index}]'
    if not isinstance(raw, dict):
        raise ModelFileError(f"层描述必须是对象: {raw!r}", field=where)
    kind = raw.get('kind')
    if kind not in (LinearLayer.kind, LeakyReLULayer.kind):
        raise ModelFileError(f"未知层类型: {kind!r}", field=f'{where}.kind')
    if kind == LinearLayer.kind and 'w' not in raw:
        raise ModelFileError("线性层缺少权重", field=f'{where}.w')
    try:
        if kind == LinearLayer.kind:
            return LinearLayer(raw['w'], raw.get('b'))
        return LeakyReLULayer(raw.get('slope', DEFAULTS.LEAKY_SLOPE))
    except ValidationError as e:
        raise ModelFileError(e.args[0], field=f'{where}.{e.field}' if e.field else where)
    except (TypeError, ValueError) as e:
        raise ModelFileError(f"层参数无效: {e}", field=where)


# ==================== [2. 数据集] ====================
@dataclass(frozen=True, eq=False)
class Dataset:
    """输入 n×d（取值在[−1,1]）与整数标签"""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.array(self.inputs, dtype=float)
        y = np.asarray(self.labels)
        if x.ndim != 2:
            raise ValidationError(f"输入必须是 n×d 矩阵: shape={x.shape}", field='inputs')
        if y.shape != (x.shape[0],):
            raise ValidationError(f"标签数量与输入不一致: {y.shape}", field='labels')
        if not np.all(np.isfinite(x)) or x.min(initial=0) < DOMAIN_LOW - DOMAIN_TOL \
                or x.max(initial=0) > DOMAIN_HIGH + DOMAIN_TOL:
            raise ValidationError("输入超出[−1,1]定义域", field='inputs')
        if y.size and (not np.all(np.equal(np.mod(y, 1), 0)) or y.min() < 0):
            raise ValidationError("标签必须是非负整数", field='labels')
        object.__setattr__(self, 'inputs', x)
        object.__setattr__(self, 'labels', y.astype(np.int64))

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1 if len(self) else 0

    def domain_diameter(self, norm='linf'):
        """[−1,1]^d 定义域在给定范数下的直径"""
        d = self.dim
        span = DOMAIN_HIGH - DOMAIN_LOW
        return {'l1': span * d, 'l2': span * math.sqrt(d), 'linf': span}[str(getattr(norm, 'value', norm))]


# ==================== [3. 随机化网络] ====================
class RandomizedNet:
    """前i层之后注入噪声的前馈网络（概率映射 M）"""

    def __init__(self, layers, noise=None, noise_layer_index=0, num_classes=None):
        if not layers:
            raise ValidationError("网络至少需要一层", field='layers')
        self.layers = list(layers)
        self.noise = noise_from_spec(noise)
        self.noise_layer_index = int(noise_layer_index)

        linear = [l for l in self.layers if l.kind == 'linear']
        if not linear:
            raise ValidationError("网络没有线性层", field='layers')
        last = self.layers[-1]
        if last.kind != 'linear':
            raise ValidationError("最后一层必须是输出logits的线性层", field='layers')
        self.input_dim = linear[0].in_dim
        self.num_classes = last.out_dim if num_classes is None else int(num_classes)
        if last.out_dim != self.num_classes:
            raise ValidationError(f"logits维度{last.out_dim}与类别数{self.num_classes}不符",
                                  field='num_classes')

        # 维度链检查
        dim = self.input_dim
        dims = [dim]
        for idx, layer in enumerate(self.layers):
            if layer.kind == 'linear':
                if layer.in_dim != dim:
                    raise ValidationError(f"第{idx}层输入维度{layer.in_dim}≠{dim}", field='layers')
                dim = layer.out_dim
            dims.append(dim)
        if not 0 <= self.noise_layer_index < len(self.layers):
            raise ValidationError(f"噪声层编号越界: {self.noise_layer_index}", field='noise_layer_index')
        self.noise_dim = dims[self.noise_layer_index]
        if self.noise is not None and self.noise.dim != self.noise_dim:
            raise ValidationError(
                f"噪声维度{self.noise.dim}≠第{self.noise_layer_index}层输出维度{self.noise_dim}",
                field='noise.dim')

    @classmethod
    def mlp(cls, sizes, noise=None, noise_layer_index=0, slope=None, seed=0):
        """sizes=[d, h1, ..., K] 的多层感知机，He初始化"""
        layers = []
        for idx, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            rng = rng_utils.derive_rng(seed, rng_utils.STREAM_INIT, idx)
            w = rng.standard_normal((n_out, n_in)) * math.sqrt(2.0 / n_in)
            layers.append(LinearLayer(w, np.zeros(n_out)))
            if idx < len(sizes) - 2:
                layers.append(LeakyReLULayer(slope))
        return cls(layers, noise=noise, noise_layer_index=noise_layer_index)

    @property
    def is_deterministic(self):
        return self.noise is None

    @property
    def prefix(self):
        """噪声之前的层（敏感度只依赖这部分）"""
        return self.layers[:self.noise_layer_index]

    def with_noise(self, noise):
        return RandomizedNet(copy.deepcopy(self.layers), noise, self.noise_layer_index, self.num_classes)

    def copy(self):
        return self.with_noise(self.noise)

    def linear_layers(self):
        return [l for l in self.layers if l.kind == 'linear']

    # ---------- 前向/反向 ----------
    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.input_dim:
            raise ValidationError(f"输入维度不匹配: 期望{self.input_dim}, 得到{x.shape[1]}", field='x')
        return x, single

    def forward(self, x, noise_draws=None, keep_cache=False):
        """
        批量前向

        noise_draws: (n, noise_dim) 或 None（不加噪声）
        返回 logits，keep_cache=True 时返回 (logits, cache)
        """
        h = x
        cache = []
        for idx, layer in enumerate(self.layers):
            if idx == self.noise_layer_index and noise_draws is not None:
                h = h + noise_draws
            cache.append(h)
            h = layer.forward(h)
        if keep_cache:
            return h, cache
        return h

    def backward(self, cache, dlogits):
        """返回 (按线性层顺序的 [(dw, db), ...], dx)"""
        grads = []
        dout = dlogits
        for layer, h in zip(reversed(self.layers), reversed(cache)):
            dout, dw, db = layer.backward(h, dout)
            if layer.kind == 'linear':
                grads.append((dw, db))
        grads.reverse()
        return grads, dout

    def draw_noise(self, n, seed, stream=()):
        if self.noise is None:
            return None
        return sample(self.noise, n, seed, stream=tuple(stream) or (rng_utils.STREAM_NOISE,))

    # ---------- 序列化 ----------
    def to_dict(self, meta=None):
        raw = {
            'layers': [l.to_dict() for l in self.layers],
            'noise': noise_to_spec(self.noise),
            'noise_layer_index': self.noise_layer_index,
            'num_classes': self.num_classes,
            'version': DEFAULTS.MODEL_FILE_VERSION,
        }
        if meta is not None:
            raw['meta'] = meta
        return raw

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ModelFileError("模型文件顶层必须是对象")
        version = raw.get('version')
        if version != DEFAULTS.MODEL_FILE_VERSION:
            raise ModelFileError(f"版本不符: {version!r}（支持 {DEFAULTS.MODEL_FILE_VERSION}）",
                                 field='version')
        for key in ('layers', 'noise', 'noise_layer_index', 'num_classes'):
            if key not in raw:
                raise ModelFileError("缺少字段", field=key)
        if not isinstance(raw['layers'], list) or not raw['layers']:
            raise ModelFileError("layers必须是非空数组", field='layers')
        for key in ('noise_layer_index', 'num_classes'):
            if not isinstance(raw[key], int) or isinstance(raw[key], bool):
                raise ModelFileError(f"必须是整数: {raw[key]!r}", field=key)
        layers = [layer_from_dict(l, i) for i, l in enumerate(raw['layers'])]
        try:
            return cls(layers, noise=raw['noise'], noise_layer_index=raw['noise_layer_index'],
                       num_classes=raw['num_classes'])
        except ValidationError:
            raise
        except (TypeError, ValueError) as e:
            raise ModelFileError(f"噪声描述无效: {e}", field='noise')


# ==================== [4. 概率映射] ====================
def forward_noisy(net, x, seed, stream=()):
    """一次噪声采样的前向；x为单个向量时返回logits向量，批量时第i行用第i个噪声"""
    x, single = net._check_input(x)
    logits = net.forward(x, net.draw_noise(x.shape[0], seed, stream))
    return logits[0] if single else logits


def predict_distribution(net, x, n_mc, seed, stream=()):
    """n_mc 次噪声采样下 argmax 的经验分布"""
    counts = label_counts(net, x, n_mc, seed, stream)
    return DiscreteDistribution.from_counts(counts)


def label_counts(net, x, n_mc, seed, stream):
    n_mc = int(n_mc)
    if n_mc < 1:
        raise ValidationError(f"n_mc必须≥1: {n_mc}", field='n_mc')
    x, _ = net._check_input(x)
    if x.shape[0] != 1:
        raise ValidationError("只接受单个输入", field='x')
    if net.is_deterministic:
        counts = np.zeros(net.num_classes)
        counts[int(np.argmax(net.forward(x)[0]))] = n_mc
        return counts
    rows = np.repeat(x, n_mc, axis=0)
    logits = net.forward(rows, net.draw_noise(n_mc, seed, stream))
    return np.bincount(np.argmax(logits, axis=1), minlength=net.num_classes).astype(float)


def predict_counts(net, inputs, n_mc, seed):
    """批量输入的标签计数 (N, K)；第i个输入使用流 (STREAM_MC, i)"""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    return np.stack([label_counts(net, x, n_mc, seed, (rng_utils.STREAM_MC, i))
                     for i, x in enumerate(inputs)])


# ==================== [5. 损失与训练] ====================
def cross_entropy(logits, labels):
    """逐样本交叉熵"""
    logp = log_softmax(logits, axis=1)
    return -logp[np.arange(len(labels)), labels]


def loss_and_grad(net, x, y, seed, example_ids=None):
    """
    批量平均交叉熵及其对参数的梯度

    样本k的噪声来自流 (seed, STREAM_NOISE, example_ids[k])，默认编号为 0..n−1。
    返回: (loss, [(dw, db), ...])
    """
    x, _ = net._check_input(x)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    n = x.shape[0]
    if n == 0 or y.shape[0] != n:
        raise ValidationError("批次为空或标签数量不符", field='batch')
    ids = np.arange(n) if example_ids is None else np.asarray(example_ids)
    draws = None if net.noise is None else sample_indexed(net.noise, ids, seed)

    logits, cache = net.forward(x, draws, keep_cache=True)
    loss = float(np.mean(cross_entropy(logits, y)))
    dlogits = softmax(logits, axis=1)
    dlogits[np.arange(n), y] -= 1.0
    grads, _ = net.backward(cache, dlogits / n)
    return loss, grads


def lr_at(schedule, epoch):
    """分段常数学习率：float 或 [[起始epoch, lr], ...]"""
    if isinstance(schedule, (int, float)):
        return float(schedule)
    current = None
    for start, lr in sorted(schedule, key=lambda item: item[0]):
        if epoch >= start:
            current = float(lr)
    if current is None:
        raise ValidationError(f"学习率表未覆盖第{epoch}轮", field='lr_schedule')
    return current


def train(net, data, epochs, lr_schedule, momentum=0.9, batch_size=32, seed=0):
    """
    动量SGD训练（训练与推理都带噪声）

    返回: (训练后的新网络, 每轮平均损失列表)
    """
    if epochs < 1:
        raise ValidationError(f"epochs必须≥1: {epochs}", field='epochs')
    if batch_size < 1:
        raise ValidationError(f"batch_size必须≥1: {batch_size}", field='batch_size')
    if len(data) == 0:
        raise ValidationError("数据集为空", field='data')

    model = net.copy()
    linear = model.linear_layers()
    velocity = [(np.zeros_like(l.w), np.zeros_like(l.b)) for l in linear]
    n = len(data)
    trace = []

    for epoch in range(epochs):
        lr = lr_at(lr_schedule, epoch)
        order = rng_utils.derive_rng(seed, rng_utils.STREAM_TRAIN, epoch).permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            # 每轮每个样本一个新的噪声编号
            ids = epoch * n + idx
            loss, grads = loss_and_grad(model, data.inputs[idx], data.labels[idx], seed, ids)
            if not math.isfinite(loss):
                raise NumericError(f"第{epoch}轮损失发散: {loss}")
            for k, (layer, (dw, db)) in enumerate(zip(linear, grads)):
                vw, vb = velocity[k]
                vw = momentum * vw + dw
                vb = momentum * vb + db
                velocity[k] = (vw, vb)
                layer.w = layer.w - lr * vw
                layer.b = layer.b - lr * vb
            losses.append(loss * len(idx))
        trace.append(sum(losses) / n)
        logger.info(f"[训练] 第{epoch + 1}/{epochs}轮 lr={lr:g} loss={trace[-1]:.6f}")
    return model, trace


def natural_accuracy(net, data, n_mc, seed):
    """1 − 自然风险（蒙特卡洛）"""
    counts = predict_counts(net, data.inputs, n_mc, seed)
    return float(np.mean(counts[np.arange(len(data)), data.labels] / n_mc))


# ==================== [6. 保存与加载] ====================
def save(net, path, meta=None):
    """保存为JSON模型文件"""
    text = json.dumps(net.to_dict(meta), ensure_ascii=False, indent=2)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(text + '\n')
    logger.info(f"[模型] 已保存 {path}")


def load(path):
    """加载JSON模型文件；截断或损坏时报告出错偏移"""
    if not os.path.exists(path):
        raise ModelFileError(f"模型文件不存在: {path}", field='model')
    raw = _read_json(path)
    net = RandomizedNet.from_dict(raw)
    logger.info(f"[模型] 已加载 {path}")
    return net


def load_meta(path):
    """模型文件里的meta；没有或不是对象时返回None"""
    meta = _read_json(path)
    meta = meta.get('meta') if isinstance(meta, dict) else None
    return meta if isinstance(meta, dict) else None


def _read_json(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
    except UnicodeDecodeError as e:
        raise ModelFileError(f"模型文件不是UTF-8文本: {e.reason}", offset=e.start)
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFileError(f"模型文件解析失败: {e.msg}", offset=e.pos)
