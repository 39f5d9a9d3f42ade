# -*- coding: utf-8 -*-
"""
================================================================================
renoir - 主程序（命令行）
================================================================================
Rényi 鲁棒性认证工具：训练带噪声注入的小型网络、给出证书、运行攻击、
输出保证准确率曲线。

子命令：
1. gen-data   --config c.json --out d.csv                 生成数据集CSV
2. train      --config c.json --out model.json            训练（损失曲线CSV写在旁边）
3. certify    --model m.json --alpha A --lambda L         证书JSON输出到stdout
4. attack     --model m.json --data d.csv --attack pgd    风险报告JSON输出到stdout
5. curve      --model m.json --data d.csv --alpha-grid 0:0.5:0.01   曲线CSV
6. sweep      --config c.json --sigmas 0.01,0.1,0.5 --laplace-b 0.1  噪声水平扫描CSV
7. divergence --p 0.7,0.3 --q 0.5,0.5 --lambda 2          散度值输出到stdout

退出码：0 成功；2 配置/校验错误（信息中带字段名）；3 运行期数值失败

使用方法：
python main.py train --config experiment.json --out model.json
python main.py curve --model model.json --data data.csv --alpha-grid 0:0.5:0.01 --mc 10000

================================================================================
"""

import argparse
import json
import logging
import math
import os
import sys

import numpy as np
import pandas as pd

import data as datasets
import net as netlib
import riskbounds
from attacks import AttackKind, AttackSpec
from certify import certify_net, convert_certificate
from distributions import noise_to_spec
from divergences import DivergenceKind, divergence
from errors import ConfigError, ModelFileError, NumericError, ValidationError
from renoir_config import DEFAULTS, ExperimentConfig, canonical_hash, make_meta

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3

# 噪声注入位置 -> noise_layer_index
NOISE_SITES = {'input': 0, 'first_activation': 1}


# ==================== [1. 日志] ====================
def setup_logging():
    """只在命令行入口配置日志：stderr，外加可选的日志文件"""
    handlers = [logging.StreamHandler(sys.stderr)]
    if DEFAULTS.log_file:
        handlers.append(logging.FileHandler(DEFAULTS.log_file, encoding='utf-8'))
    logging.basicConfig(
        level=getattr(logging, DEFAULTS.log_level, logging.INFO),
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=handlers
    )


# ==================== [2. 参数解析工具] ====================
def parse_float(text):
    if str(text).lower() in ('inf', 'infinity'):
        return math.inf
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"必须是数字或inf: {text!r}")


def parse_probs(text):
    try:
        return [float(v) for v in text.split(',')]
    except ValueError:
        raise argparse.ArgumentTypeError(f"概率向量格式应为 0.7,0.3: {text!r}")


def parse_scales(text):
    try:
        return [float(v) for v in text.split(',')]
    except ValueError:
        raise argparse.ArgumentTypeError(f"尺度列表格式应为 0.1,0.3: {text!r}")


def parse_alpha_grid(text):
    """'start:stop:step'（含端点）或逗号分隔列表"""
    if ':' not in text:
        return [float(v) for v in text.split(',')]
    parts = text.split(':')
    if len(parts) != 3:
        raise ValidationError(f"格式应为 start:stop:step: {text!r}", field='alpha_grid')
    start, stop, step = (float(v) for v in parts)
    if not step > 0 or stop < start:
        raise ValidationError(f"step必须>0且stop≥start: {text!r}", field='alpha_grid')
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    # 取整消除累计误差，使CSV中的alpha列稳定
    return [round(start + k * step, 12) for k in range(count)]


def resolve_threads(args):
    threads = args.threads if args.threads is not None else DEFAULTS.threads
    if threads < 1:
        raise ValidationError(f"线程数必须≥1: {threads}", field='threads')
    return threads


# ==================== [3. 产物写出] ====================
def write_json(obj, path=None):
    text = json.dumps(obj, ensure_ascii=False, indent=2) + '\n'
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, 'w', encoding='utf-8') as f:
            f.write(text)


def write_sidecar(path, meta):
    """CSV产物的meta写在 <产物>.meta.json"""
    write_json({'meta': meta}, f'{path}.meta.json')


def command_meta(command, params, model_meta, seed):
    """由子命令参数与模型meta派生的产物meta"""
    config_hash = canonical_hash({'command': command, 'params': params, 'model': model_meta})
    return make_meta(config_hash, seed)


def meta_seed(model_meta):
    """模型meta中的种子；没有时返回None"""
    if not model_meta or model_meta.get('seed') is None:
        return None
    seed = model_meta['seed']
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ModelFileError(f"meta中的种子必须是非负整数: {seed!r}", field='meta.seed')
    return seed


def resolve_seed(args, model_meta):
    if args.seed is not None:
        return args.seed
    if meta_seed(model_meta) is not None:
        return meta_seed(model_meta)
    raise ValidationError("种子必填（模型文件中也没有）", field='seed')


def load_model_and_data(args):
    model = netlib.load(args.model)
    model_meta = netlib.load_meta(args.model)
    dataset = datasets.load_csv(args.data)
    if dataset.dim != model.input_dim:
        raise ValidationError(f"数据维度{dataset.dim}≠模型输入维度{model.input_dim}", field='data')
    if dataset.num_classes > model.num_classes:
        raise ValidationError(f"数据类别数{dataset.num_classes}超过模型类别数{model.num_classes}",
                              field='data')
    return model, model_meta, dataset


# ==================== [4. 子命令] ====================
def cmd_gen_data(args):
    config = ExperimentConfig.load(args.config)
    dataset = datasets.from_spec(config.dataset, config.seed)
    datasets.write_csv(dataset, args.out)
    write_sidecar(args.out, make_meta(config.config_hash(), config.seed))


def _noise_for(spec, dim):
    """噪声描述中省略dim时取注入层的维度"""
    if isinstance(spec, dict) and 'dim' not in spec and 'cov' not in spec:
        spec = dict(spec, dim=dim)
    return spec


def _noise_layer_index(model_spec, hidden):
    """model.noise_at（input | first_activation）优先于 model.noise_layer_index"""
    site = model_spec.get('noise_at')
    if site is None:
        return int(model_spec.get('noise_layer_index', 0))
    if site not in NOISE_SITES:
        raise ConfigError(f"噪声位置必须是 {'|'.join(NOISE_SITES)}: {site!r}", field='model.noise_at')
    if site == 'first_activation' and not hidden:
        raise ConfigError("没有隐藏层，无法在激活层注入噪声", field='model.noise_at')
    return NOISE_SITES[site]


def build_model(config, dataset, noise):
    """按配置构造未训练的网络（噪声用 noise 描述，而不是 config.noise）"""
    model_spec = config.model
    hidden = list(model_spec.get('hidden', DEFAULTS.HIDDEN_SIZES))
    sizes = [dataset.dim] + hidden + [int(model_spec.get('num_classes', dataset.num_classes))]
    slope = model_spec.get('slope', DEFAULTS.LEAKY_SLOPE)
    model = netlib.RandomizedNet.mlp(sizes, None, _noise_layer_index(model_spec, hidden), slope,
                                     seed=config.seed)
    return model.with_noise(_noise_for(noise, model.noise_dim))


def train_model(config, dataset, noise):
    """返回 (训练后的网络, 每轮损失)"""
    model = build_model(config, dataset, noise)
    training = config.training
    sizes = [model.input_dim] + [l.out_dim for l in model.linear_layers()]
    logger.info(f"[训练] 结构={sizes} 噪声={noise_to_spec(model.noise)} "
                f"注入层={model.noise_layer_index} n={len(dataset)}")
    return netlib.train(
        model, dataset,
        epochs=training.get('epochs', DEFAULTS.EPOCHS),
        lr_schedule=training.get('lr', DEFAULTS.LEARNING_RATE),
        momentum=training.get('momentum', DEFAULTS.MOMENTUM),
        batch_size=training.get('batch_size', DEFAULTS.BATCH_SIZE),
        seed=config.seed,
    )


def cmd_train(args):
    config = ExperimentConfig.load(args.config)
    dataset = datasets.from_spec(config.dataset, config.seed)
    trained, trace = train_model(config, dataset, config.noise)

    meta = make_meta(config.config_hash(), config.seed)
    netlib.save(trained, args.out, meta=meta)

    root, _ = os.path.splitext(args.out)
    trace_path = f'{root}.loss.csv'
    pd.DataFrame({'epoch': range(len(trace)), 'loss': trace}).to_csv(
        trace_path, index=False, float_format=datasets.FLOAT_FORMAT)
    write_sidecar(trace_path, meta)
    logger.info(f"[训练] 完成，最终损失={trace[-1]:.6f}，模型={args.out}")


def cmd_certify(args):
    model = netlib.load(args.model)
    model_meta = netlib.load_meta(args.model)
    cert = certify_net(model, args.alpha, args.lam)
    if args.metric != DivergenceKind.RENYI.value:
        cert = convert_certificate(cert, args.metric, diam=args.diam)

    params = {'alpha': args.alpha, 'lambda': cert.to_dict()['lambda'],
              'metric': args.metric, 'diam': args.diam}
    seed = meta_seed(model_meta) or 0
    out = cert.to_dict()
    out['meta'] = command_meta('certify', params, model_meta, seed)
    write_json(out)


def cmd_attack(args):
    model, model_meta, dataset = load_model_and_data(args)
    seed = resolve_seed(args, model_meta)
    spec = AttackSpec.default(
        args.attack,
        norm=args.norm,
        alpha=args.alpha,
        steps=args.steps,
        step_size=args.step_size,
        eot_samples=args.eot,
        seed=seed,
        eval_samples=args.eval_samples,
        eot_mode=args.eot_mode,
        random_start=False if args.no_random_start else None,
    )
    logger.info(f"[攻击] {spec.kind.value} α={spec.alpha:g} 步数={spec.steps} EoT={spec.eot_samples}")
    report = riskbounds.risk_report(model, dataset, spec, args.lam, args.mc, seed,
                                    threads=resolve_threads(args))

    out = report.to_dict()
    out['attack'] = spec.to_dict()
    params = dict(out['attack'], mc=args.mc, data=canonical_hash(dataset.inputs.tolist()))
    params['lambda'] = 'inf' if math.isinf(args.lam) else args.lam
    out['meta'] = command_meta('attack', params, model_meta, seed)
    write_json(out)


def cmd_curve(args):
    model, model_meta, dataset = load_model_and_data(args)
    seed = resolve_seed(args, model_meta)
    grid = parse_alpha_grid(args.alpha_grid)
    curve = riskbounds.guaranteed_accuracy_curve(model, dataset, None, grid, args.lam, args.mc, seed,
                                                 threads=resolve_threads(args))
    if args.out is None:
        riskbounds.write_curve_csv(curve, sys.stdout)
        return

    riskbounds.write_curve_csv(curve, args.out)
    params = {'alpha_grid': grid, 'lambda': 'inf' if math.isinf(args.lam) else args.lam, 'mc': args.mc,
              'data': canonical_hash(dataset.inputs.tolist())}
    write_sidecar(args.out, command_meta('curve', params, model_meta, seed))
    logger.info(f"[风险] 曲线已写入 {args.out}")


def sweep_noise(family, scale):
    """扫描中的一个噪声水平；尺度0为零噪声模型"""
    if scale == 0:
        return 'none'
    key = 'sigma' if family == 'gaussian' else 'b'
    return {'family': family, key: scale}


def sweep_levels(config, args):
    """命令行 --sigmas / --laplace-b 覆盖配置中的 sweep"""
    levels = {family: list(scales) for family, scales in config.sweep.items()}
    if args.sigmas is not None:
        levels['gaussian'] = args.sigmas
    if args.laplace_b is not None:
        levels['laplace'] = args.laplace_b
    pairs = [(family, float(s)) for family in ('gaussian', 'laplace') for s in levels.get(family, [])]
    if not pairs:
        raise ConfigError("没有要扫描的噪声水平", field='sweep')
    if any(s < 0 for _, s in pairs):
        raise ValidationError("噪声尺度必须非负", field='sweep')
    return pairs


def sweep_attacks(config):
    """配置中的攻击；未给种子时使用实验种子"""
    specs = []
    for raw in config.attacks:
        raw = dict(raw)
        raw.setdefault('seed', config.seed)
        specs.append(AttackSpec.from_dict(raw))
    return specs


def cmd_sweep(args):
    config = ExperimentConfig.load(args.config)
    dataset = datasets.from_spec(config.dataset, config.seed)
    levels = sweep_levels(config, args)
    grid = parse_alpha_grid(args.alpha_grid) if args.alpha_grid else list(config.alpha_grid)
    if not grid:
        raise ConfigError("需要alpha网格（--alpha-grid 或 alpha_grid）", field='alpha_grid')
    lam = config.lam if args.lam is None else args.lam
    n_mc = config.mc_samples if args.mc is None else args.mc
    attacks = sweep_attacks(config)

    summaries = []
    for family, scale in levels:
        trained, _ = train_model(config, dataset, sweep_noise(family, scale))
        summaries.append(riskbounds.noise_level_summary(
            trained, dataset, family, scale, grid, lam, n_mc, config.seed, attacks, threads=args.threads))
    table, attack_table = riskbounds.sweep_tables(summaries)

    out = args.out
    if out is None:
        os.makedirs(config.output_dir, exist_ok=True)
        out = os.path.join(config.output_dir, 'sweep.csv')
    params = {'config': config.config_hash(), 'levels': levels, 'alpha_grid': grid, 'mc': n_mc,
              'lambda': 'inf' if math.isinf(lam) else lam}
    meta = command_meta('sweep', params, None, config.seed)
    riskbounds.write_sweep_csv(table, out)
    write_sidecar(out, meta)
    if attacks:
        root, _ = os.path.splitext(out)
        attack_path = f'{root}.attacks.csv'
        riskbounds.write_sweep_csv(attack_table, attack_path)
        write_sidecar(attack_path, meta)
    logger.info(f"[扫描] {len(levels)} 个噪声水平，结果写入 {out}")


def cmd_divergence(args):
    value = divergence(np.asarray(args.p), np.asarray(args.q), args.metric, args.lam)
    sys.stdout.write(f'{value.value:.6f}\n')


# ==================== [5. 参数定义] ====================
def build_parser():
    parser = argparse.ArgumentParser(prog='renoir', description='Rényi 鲁棒性认证工具')
    parser.add_argument('--threads', type=int, default=None,
                        help='逐输入并行的线程上限（默认读取 RENOIR_THREADS）')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('gen-data', help='按配置生成数据集CSV')
    p.add_argument('--config', required=True)
    p.add_argument('--out', required=True)
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser('train', help='训练随机化网络')
    p.add_argument('--config', required=True)
    p.add_argument('--out', required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser('certify', help='输出鲁棒性证书')
    p.add_argument('--model', required=True)
    p.add_argument('--alpha', type=float, required=True)
    p.add_argument('--lambda', dest='lam', type=parse_float, default=1.0)
    p.add_argument('--metric', default=DivergenceKind.RENYI.value,
                   choices=[k.value for k in DivergenceKind])
    p.add_argument('--diam', type=float, default=1.0, help='Wasserstein转换使用的数据直径')
    p.set_defaults(handler=cmd_certify)

    p = sub.add_parser('attack', help='攻击并输出风险报告')
    p.add_argument('--model', required=True)
    p.add_argument('--data', required=True)
    p.add_argument('--attack', default=AttackKind.PGD.value, choices=[k.value for k in AttackKind])
    p.add_argument('--norm', default=None, choices=['l1', 'l2', 'linf'])
    p.add_argument('--alpha', type=parse_float, default=None)
    p.add_argument('--steps', type=int, default=None)
    p.add_argument('--step-size', type=float, default=None)
    p.add_argument('--eot', type=int, default=None)
    p.add_argument('--eot-mode', default=None, choices=['loss', 'logits'])
    p.add_argument('--eval-samples', type=int, default=None)
    p.add_argument('--no-random-start', action='store_true')
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--mc', type=int, default=DEFAULTS.MC_SAMPLES)
    p.add_argument('--lambda', dest='lam', type=parse_float, default=1.0)
    p.set_defaults(handler=cmd_attack)

    p = sub.add_parser('curve', help='输出保证准确率曲线CSV')
    p.add_argument('--model', required=True)
    p.add_argument('--data', required=True)
    p.add_argument('--alpha-grid', required=True)
    p.add_argument('--lambda', dest='lam', type=parse_float, default=1.0)
    p.add_argument('--mc', type=int, default=DEFAULTS.MC_SAMPLES)
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--out', default=None)
    p.set_defaults(handler=cmd_curve)

    p = sub.add_parser('sweep', help='按噪声水平逐个训练，输出自然/保证/攻击下准确率')
    p.add_argument('--config', required=True)
    p.add_argument('--sigmas', type=parse_scales, default=None, help='高斯σ列表，覆盖配置中的 sweep.gaussian')
    p.add_argument('--laplace-b', type=parse_scales, default=None, help='拉普拉斯b列表，覆盖 sweep.laplace')
    p.add_argument('--alpha-grid', default=None)
    p.add_argument('--lambda', dest='lam', type=parse_float, default=None)
    p.add_argument('--mc', type=int, default=None)
    p.add_argument('--out', default=None, help='默认 <output_dir>/sweep.csv')
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser('divergence', help='两个离散分布之间的散度')
    p.add_argument('--p', type=parse_probs, required=True)
    p.add_argument('--q', type=parse_probs, required=True)
    p.add_argument('--lambda', dest='lam', type=parse_float, default=1.0)
    p.add_argument('--metric', default=DivergenceKind.RENYI.value,
                   choices=[k.value for k in DivergenceKind])
    p.set_defaults(handler=cmd_divergence)
    return parser


# ==================== [6. 入口] ====================
def run(argv=None):
    """执行一条命令，返回退出码"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_VALIDATION

    try:
        setup_logging()
        args.threads = resolve_threads(args)
        args.handler(args)
    except NumericError as e:
        logger.error(f"[错误] 数值失败: {e}")
        print(f"错误: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValidationError as e:
        logger.error(f"[错误] {e}")
        print(f"错误: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        logger.error(f"[错误] 文件读写失败: {e}")
        print(f"错误: {e.filename}: {e.strerror}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(run())
