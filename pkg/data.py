# -*- coding: utf-8 -*-
"""
================================================================================
合成数据集与CSV读写
================================================================================
所有数据都在 [−1,1]^d 定义域内；生成器完全由种子决定。
CSV格式: 表头 f1,...,fd,label，数值保留9位有效数字。
================================================================================
"""

import logging
import os

import numpy as np
import pandas as pd

import rng_utils
from errors import DataFormatError, ValidationError
from net import DOMAIN_HIGH, DOMAIN_LOW, Dataset

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.9g'

# 双月牙原始坐标范围 x∈[−1,2], y∈[−0.5,1] 映射到 [−1,1]²
MOONS_SHIFT = np.array([0.5, 0.25])
MOONS_SCALE = np.array([1.5, 0.75])


# ==================== [1. 生成器] ====================
def gen_blobs(n, centers, spread, seed):
    """
    高斯团：第i个点属于类别 i mod K（类别数量相差不超过1），裁剪到定义域
    """
    spread = float(spread)
    if not spread > 0:
        raise ValidationError(f"spread必须>0: {spread}", field='spread')
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if n < 1 or len(centers) < 1:
        raise ValidationError("n 与 centers 不能为空", field='n')
    if centers.min() < DOMAIN_LOW or centers.max() > DOMAIN_HIGH:
        raise ValidationError("中心必须在[−1,1]^d内", field='centers')

    k, d = centers.shape
    rng = rng_utils.derive_rng(seed, rng_utils.STREAM_DATA, 0)
    labels = np.arange(n) % k
    points = centers[labels] + spread * rng.standard_normal((n, d))
    return Dataset(np.clip(points, DOMAIN_LOW, DOMAIN_HIGH), labels)


def gen_two_moons(n, noise_sd, seed):
    """两条交错的半圆弧，缩放到[−1,1]²"""
    noise_sd = float(noise_sd)
    if noise_sd < 0:
        raise ValidationError(f"noise_sd必须非负: {noise_sd}", field='noise_sd')
    if n < 2:
        raise ValidationError(f"n必须≥2: {n}", field='n')

    n_out = n // 2
    n_in = n - n_out
    t_out = np.linspace(0.0, np.pi, n_out)
    t_in = np.linspace(0.0, np.pi, n_in)
    outer = np.column_stack([np.cos(t_out), np.sin(t_out)])
    inner = np.column_stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)])
    raw = np.vstack([outer, inner])
    labels = np.concatenate([np.zeros(n_out, dtype=int), np.ones(n_in, dtype=int)])

    rng = rng_utils.derive_rng(seed, rng_utils.STREAM_DATA, 1)
    order = rng.permutation(n)
    points = (raw[order] - MOONS_SHIFT) / MOONS_SCALE
    if noise_sd > 0:
        points = points + noise_sd * rng.standard_normal(points.shape)
    return Dataset(np.clip(points, DOMAIN_LOW, DOMAIN_HIGH), labels[order])


def moons_arc_residual(point, label):
    """点到其所属弧的残差（无噪声时为0）"""
    u = np.asarray(point, dtype=float) * MOONS_SCALE + MOONS_SHIFT
    if label == 0:
        return abs(np.hypot(u[0], u[1]) - 1.0)
    return abs(np.hypot(u[0] - 1.0, u[1] - 0.5) - 1.0)


def from_spec(spec, seed):
    """由配置字典生成/加载数据集"""
    kind = spec.get('kind')
    if kind == 'blobs':
        return gen_blobs(spec.get('n', 400), spec['centers'], spec.get('spread', 0.15), seed)
    if kind == 'moons':
        return gen_two_moons(spec.get('n', 400), spec.get('noise_sd', 0.1), seed)
    if kind == 'csv':
        return load_csv(spec['path'])
    raise ValidationError(f"未知数据集类型: {kind!r}", field='dataset.kind')


# ==================== [2. CSV] ====================
def write_csv(dataset, path):
    df = pd.DataFrame(dataset.inputs, columns=[f'f{j + 1}' for j in range(dataset.dim)])
    df['label'] = dataset.labels
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"[数据] 已写入 {path}（{len(dataset)}行）")


def load_csv(path):
    """读取 f1..fd,label 格式；越界值报告行列，标签必须是从0开始的连续整数"""
    if not os.path.exists(path):
        raise DataFormatError(f"文件不存在: {path}")
    try:
        df = pd.read_csv(path, encoding='utf-8')
    except pd.errors.EmptyDataError:
        raise DataFormatError(f"空文件: {path}")
    except pd.errors.ParserError as e:
        raise DataFormatError(f"CSV解析失败: {e}")

    columns = list(df.columns)
    d = len(columns) - 1
    expected = [f'f{j + 1}' for j in range(d)] + ['label']
    if d < 1 or columns != expected:
        raise DataFormatError(f"表头必须是 {','.join(expected) if d >= 1 else 'f1,...,fd,label'}: {columns}")
    if len(df) == 0:
        raise DataFormatError(f"没有数据行: {path}")

    features = df[expected[:-1]]
    for col in features.columns:
        values = pd.to_numeric(features[col], errors='coerce')
        bad = values.isna() | (values < DOMAIN_LOW) | (values > DOMAIN_HIGH)
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise DataFormatError(f"值超出[−1,1]或不是数字: {features[col].iloc[row]!r}",
                                  row=row + 1, column=col)

    labels = pd.to_numeric(df['label'], errors='coerce')
    bad = labels.isna() | (labels != np.floor(labels)) | (labels < 0)
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataFormatError(f"标签不是非负整数: {df['label'].iloc[row]!r}", row=row + 1, column='label')
    labels = labels.to_numpy().astype(np.int64)
    present = np.unique(labels)
    if not np.array_equal(present, np.arange(present.size)):
        raise DataFormatError(f"标签必须是从0开始的连续整数: {present.tolist()}", column='label')

    dataset = Dataset(features.to_numpy(dtype=float), labels)
    logger.info(f"[数据] 已读取 {path}（{len(dataset)}行, d={dataset.dim}）")
    return dataset
