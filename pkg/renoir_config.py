# -*- coding: utf-8 -*-
"""
================================================================================
renoir 配置
================================================================================
RenoirConfig      - 全局默认参数（可被环境变量覆盖）
ExperimentConfig  - 单次实验配置（JSON文件），种子必填
================================================================================
"""

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, asdict

from errors import ConfigError

logger = logging.getLogger(__name__)

# 尝试加载环境变量
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    logger.warning("python-dotenv未安装，将使用默认配置")


# ==================== [1. 全局默认参数] ====================
class RenoirConfig:
    """全局默认参数"""

    def __init__(self):
        # ========== 网络 ==========
        self.LEAKY_SLOPE = 0.1          # 负半轴斜率0.1
        self.HIDDEN_SIZES = [16, 16]
        self.MODEL_FILE_VERSION = 1

        # ========== 训练 ==========
        self.EPOCHS = 50
        self.LEARNING_RATE = 0.1
        self.MOMENTUM = 0.9
        self.BATCH_SIZE = 32

        # ========== 攻击 ==========
        self.EOT_SAMPLES = 80           # EoT蒙特卡洛次数
        self.EVAL_SAMPLES = 100         # 攻击成功判定的多数投票次数
        self.PGD_ALPHA = 0.06
        self.PGD_STEP_SIZE = 0.006
        self.PGD_STEPS = 20
        self.CW_INITIAL_CONST = 0.1
        self.CW_CONFIDENCE = 0.0
        self.CW_BINARY_STEPS = 6
        self.CW_LEARNER_STEPS = 200
        self.CW_LEARNING_RATE = 0.01
        self.EAD_C1 = 0.01
        self.EAD_C2 = 0.1
        self.EAD_STEPS = 300
        self.EAD_LEARNING_RATE = 0.01
        self.GRID_RESOLUTION = 5

        # ========== 蒙特卡洛 ==========
        self.MC_SAMPLES = 1000
        self.ENTROPY_MIN_SAMPLES = 100
        self.RENYI_MC_MIN_SAMPLES = 1000
        self.BRUTEFORCE_MIN_PAIRS = 10000

        # ========== 运行环境 ==========
        self.threads_env = os.getenv('RENOIR_THREADS')
        self.log_level = os.getenv('RENOIR_LOG_LEVEL', 'INFO').upper()
        self.log_file = os.getenv('RENOIR_LOG_FILE')

    @property
    def threads(self):
        """RENOIR_THREADS 在使用时才解析，非法值抛 ConfigError"""
        return _env_int('RENOIR_THREADS', self.threads_env, 1)


def _env_int(name, raw, default):
    if raw is None or raw == '':
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"环境变量必须是整数: {raw!r}", field=name)
    if value < 1:
        raise ConfigError(f"环境变量必须≥1: {value}", field=name)
    return value


DEFAULTS = RenoirConfig()

SWEEP_FAMILIES = ('gaussian', 'laplace')


# ==================== [2. 实验配置] ====================
@dataclass
class ExperimentConfig:
    """一次实验（train/curve/attack/sweep）的全部参数"""

    seed: int
    dataset: dict
    model: dict = field(default_factory=dict)
    noise: object = 'none'
    training: dict = field(default_factory=dict)
    attacks: list = field(default_factory=list)
    alpha_grid: list = field(default_factory=list)
    lam: float = 1.0
    mc_samples: int = 1000
    output_dir: str = '.'
    sweep: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw, base_dir='.'):
        if not isinstance(raw, dict):
            raise ConfigError("配置顶层必须是JSON对象")
        if 'seed' not in raw or raw['seed'] is None:
            raise ConfigError("种子必填（不使用时钟默认值）", field='seed')
        seed = raw['seed']
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError(f"种子必须是非负整数: {seed!r}", field='seed')
        if 'dataset' not in raw or not isinstance(raw['dataset'], dict):
            raise ConfigError("缺少数据集配置", field='dataset')

        dataset = dict(raw['dataset'])
        kind = dataset.get('kind')
        if kind not in ('blobs', 'moons', 'csv'):
            raise ConfigError(f"未知数据集类型: {kind!r}", field='dataset.kind')
        if kind == 'csv':
            path = dataset.get('path')
            if not path:
                raise ConfigError("csv数据集需要path", field='dataset.path')
            if not os.path.isabs(path):
                path = os.path.join(base_dir, path)
            if not os.path.exists(path):
                raise ConfigError(f"文件不存在: {path}", field='dataset.path')
            dataset['path'] = path

        training = dict(raw.get('training', {}))
        for name in ('epochs', 'batch_size'):
            if name in training and (not isinstance(training[name], int) or training[name] < 1):
                raise ConfigError(f"必须是正整数: {training[name]!r}", field=f'training.{name}')

        alpha_grid = raw.get('alpha_grid', [])
        if not _is_scale_list(alpha_grid):
            raise ConfigError("alpha_grid必须是非负数列表", field='alpha_grid')
        alpha_grid = [float(a) for a in alpha_grid]

        lam = raw.get('lambda', 1.0)
        if lam != 'inf' and (not isinstance(lam, (int, float)) or lam < 1):
            raise ConfigError(f"lambda必须≥1: {lam!r}", field='lambda')

        mc = raw.get('mc_samples', 1000)
        if not isinstance(mc, int) or mc < 1:
            raise ConfigError(f"mc_samples必须是正整数: {mc!r}", field='mc_samples')

        attacks = raw.get('attacks', [])
        if not isinstance(attacks, list) or not all(isinstance(a, dict) for a in attacks):
            raise ConfigError("attacks必须是对象数组", field='attacks')

        output_dir = raw.get('output_dir', '.')
        if not isinstance(output_dir, str) or not output_dir:
            raise ConfigError(f"output_dir必须是非空路径: {output_dir!r}", field='output_dir')

        sweep = _parse_sweep(raw.get('sweep', {}))

        return cls(
            seed=seed,
            dataset=dataset,
            model=dict(raw.get('model', {})),
            noise=raw.get('noise', 'none'),
            training=training,
            attacks=[dict(a) for a in attacks],
            alpha_grid=alpha_grid,
            lam=float('inf') if lam == 'inf' else float(lam),
            mc_samples=mc,
            output_dir=output_dir,
            sweep=sweep,
        )

    @classmethod
    def load(cls, filepath):
        """从JSON文件加载实验配置"""
        if not os.path.exists(filepath):
            raise ConfigError(f"配置文件不存在: {filepath}", field='config')
        try:
            with open(filepath, 'r', encoding='utf-8') as f:
                raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"配置文件JSON解析失败: {e.msg} (offset {e.pos})", field='config')
        config = cls.from_dict(raw, base_dir=os.path.dirname(os.path.abspath(filepath)))
        logger.info(f"[配置] 已加载 {filepath} (hash={config.config_hash()[:12]})")
        return config

    def to_dict(self):
        raw = asdict(self)
        raw['lambda'] = 'inf' if raw.pop('lam') == float('inf') else self.lam
        return raw

    def config_hash(self):
        return canonical_hash(self.to_dict())


def _is_scale_list(values):
    return isinstance(values, list) and all(
        isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0 for v in values)


def _parse_sweep(raw):
    """{"gaussian": [σ...], "laplace": [b...]}；尺度0表示零噪声模型"""
    if not isinstance(raw, dict):
        raise ConfigError("sweep必须是对象", field='sweep')
    sweep = {}
    for family, scales in raw.items():
        if family not in SWEEP_FAMILIES:
            raise ConfigError(f"未知噪声族: {family!r}", field='sweep')
        if not _is_scale_list(scales):
            raise ConfigError("尺度必须是非负数列表", field=f'sweep.{family}')
        sweep[family] = [float(s) for s in scales]
    return sweep


def canonical_hash(obj):
    """规范化JSON（键排序）的SHA-256"""
    text = json.dumps(obj, sort_keys=True, separators=(',', ':'), ensure_ascii=False)
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def make_meta(config_hash, seed):
    """每个产物都带的meta字段"""
    return {'config_hash': config_hash, 'seed': int(seed)}
