# -*- coding: utf-8 -*-
"""
随机数工具模块 - 基于计数器的确定性随机流
=================================

所有随机性都由 (主种子, 流编号, 计数器) 派生，不存在共享的可变生成器状态。
因此串行与并行（任意线程数）得到完全相同的结果。
"""

import numpy as np

from errors import ValidationError

# 流编号
STREAM_NOISE = 1      # 前向传播中的噪声注入
STREAM_MC = 2         # 蒙特卡洛标签采样
STREAM_EOT = 3        # EoT梯度估计
STREAM_ATTACK = 4     # 攻击随机起点 / 网格攻击
STREAM_EVAL = 5       # 攻击成功判定
STREAM_TRAIN = 6      # 训练打乱顺序
STREAM_DATA = 7       # 数据集生成
STREAM_INIT = 8       # 权重初始化
STREAM_PAIRS = 9      # 暴力敏感度采样对

# 每个块的行数（块 j 使用流 (seed, stream..., SUB_BLOCK, j)）
BLOCK_SIZE = 1024

# 同一流下的子流标签：分块采样与按编号采样的键互不重叠
SUB_BLOCK = 0
SUB_INDEXED = 1


def _check_seed(seed):
    if seed is None:
        raise ValidationError("seed不能为空（不允许使用时钟作为默认种子）", field='seed')
    seed = int(seed)
    if seed < 0:
        raise ValidationError(f"seed必须非负: {seed}", field='seed')
    return seed


def derive_rng(seed, *stream):
    """
    由 (seed, stream...) 派生独立的 numpy Generator

    参数:
        seed: 非负整数主种子
        stream: 任意个非负整数（流编号、样本编号、块编号...）

    返回:
        numpy.random.Generator
    """
    seed = _check_seed(seed)
    key = tuple(int(s) for s in stream)
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def derive_seed(seed, *stream):
    """派生一个新的整数子种子（用于把种子传给下游函数）"""
    rng = derive_rng(seed, *stream)
    return int(rng.integers(0, 2**63 - 1))


def blocked_draws(seed, stream, n, draw_fn):
    """
    分块生成n行随机数

    draw_fn(rng, k) 返回k行；第j块使用 derive_rng(seed, *stream, SUB_BLOCK, j)。
    第i行的取值只依赖 (seed, stream, i // BLOCK_SIZE)。n=0 时返回 draw_fn 给出的空数组。
    """
    stream = tuple(stream)
    if n == 0:
        return draw_fn(derive_rng(seed, *stream, SUB_BLOCK, 0), 0)
    chunks = []
    n_blocks = (n + BLOCK_SIZE - 1) // BLOCK_SIZE
    for j in range(n_blocks):
        k = min(BLOCK_SIZE, n - j * BLOCK_SIZE)
        chunks.append(draw_fn(derive_rng(seed, *stream, SUB_BLOCK, j), k))
    return np.concatenate(chunks, axis=0)


def indexed_draws(seed, stream, ids, draw_fn):
    """编号k的一行只依赖 derive_rng(seed, *stream, SUB_INDEXED, k)"""
    stream = tuple(stream)
    rows = [draw_fn(derive_rng(seed, *stream, SUB_INDEXED, int(k)), 1) for k in ids]
    if not rows:
        return draw_fn(derive_rng(seed, *stream, SUB_INDEXED, 0), 0)
    return np.concatenate(rows, axis=0)
