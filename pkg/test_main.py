# -*- coding: utf-8 -*-
"""命令行测试：子命令输出、退出码、流水线可复现"""

import json

import pandas as pd
import pytest

import main
import net as netlib
from certify import certify_net
from errors import ConfigError
from net import LinearLayer, RandomizedNet
from renoir_config import ExperimentConfig, RenoirConfig
from riskbounds import ATTACK_SWEEP_COLUMNS, SWEEP_COLUMNS

CONFIG = {
    'seed': 7,
    'dataset': {'kind': 'blobs', 'n': 40, 'centers': [[-0.5, -0.5], [0.5, 0.5]], 'spread': 0.15},
    'model': {'hidden': [8]},
    'noise': {'family': 'gaussian', 'sigma': 0.3},
    'training': {'epochs': 3, 'lr': 0.1},
}


def write_config(path, raw=CONFIG):
    path.write_text(json.dumps(raw), encoding='utf-8')
    return path


# ==================== 单个子命令 ====================
def test_divergence_prints_six_decimals(capsys):
    assert main.run(['divergence', '--p', '1,0', '--q', '0.5,0.5', '--lambda', '2']) == 0
    assert capsys.readouterr().out == '0.693147\n'


def test_divergence_tv(capsys):
    assert main.run(['divergence', '--p', '0.7,0.3', '--q', '0.5,0.5', '--metric', 'tv']) == 0
    assert capsys.readouterr().out == '0.200000\n'


def test_divergence_bad_order_exits_two(capsys):
    assert main.run(['divergence', '--p', '0.5,0.5', '--q', '0.5,0.5', '--lambda', '0.5']) == 2
    assert 'lambda' in capsys.readouterr().err


def test_unknown_argument_exits_two():
    assert main.run(['certify', '--bogus']) == 2


def test_certify_zero_noise_model_exits_two(tmp_path, capsys):
    path = tmp_path / 'plain.json'
    netlib.save(RandomizedNet([LinearLayer([[1.0, 0.0], [0.0, 1.0]])]), path, meta={'seed': 1})
    assert main.run(['certify', '--model', str(path), '--alpha', '0.1']) == 2
    assert 'certificate requires a noise model' in capsys.readouterr().err


def test_certify_prints_certificate(tmp_path, capsys):
    path = tmp_path / 'noisy.json'
    model = RandomizedNet([LinearLayer([[1.0, 0.0], [0.0, 1.0]])],
                          noise={'family': 'gaussian', 'sigma': 0.5, 'dim': 2})
    netlib.save(model, path, meta={'seed': 1})
    assert main.run(['certify', '--model', str(path), '--alpha', '0.2', '--lambda', '2']) == 0
    out = json.loads(capsys.readouterr().out)
    assert out['epsilon'] == pytest.approx(0.16)
    assert out['lambda'] == 2.0
    assert out['meta']['seed'] == 1 and len(out['meta']['config_hash']) == 64


def test_missing_model_file_exits_two(tmp_path):
    assert main.run(['certify', '--model', str(tmp_path / 'nope.json'), '--alpha', '0.1']) == 2


def test_bad_config_names_field(tmp_path, capsys):
    raw = dict(CONFIG)
    del raw['seed']
    path = write_config(tmp_path / 'c.json', raw)
    assert main.run(['gen-data', '--config', str(path), '--out', str(tmp_path / 'd.csv')]) == 2
    assert 'seed' in capsys.readouterr().err

    raw = dict(CONFIG, training={'epochs': 0})
    write_config(path, raw)
    assert main.run(['train', '--config', str(path), '--out', str(tmp_path / 'm.json')]) == 2
    assert 'training.epochs' in capsys.readouterr().err


def test_alpha_grid_parsing():
    assert main.parse_alpha_grid('0:0.3:0.1') == [0.0, 0.1, 0.2, 0.3]
    assert main.parse_alpha_grid('0,0.05') == [0.0, 0.05]
    with pytest.raises(main.ValidationError):
        main.parse_alpha_grid('0:1')


# ==================== 流水线 ====================
def run_pipeline(workdir, threads):
    config = write_config(workdir / 'c.json')
    data, model, curve = workdir / 'd.csv', workdir / 'm.json', workdir / 'curve.csv'
    prefix = ['--threads', str(threads)]
    assert main.run(prefix + ['gen-data', '--config', str(config), '--out', str(data)]) == 0
    assert main.run(prefix + ['train', '--config', str(config), '--out', str(model)]) == 0
    assert main.run(prefix + ['certify', '--model', str(model), '--alpha', '0.1']) == 0
    assert main.run(prefix + ['attack', '--model', str(model), '--data', str(data), '--attack', 'grid',
                              '--alpha', '0.1', '--eot', '10', '--mc', '100']) == 0
    assert main.run(prefix + ['curve', '--model', str(model), '--data', str(data),
                              '--alpha-grid', '0:0.2:0.1', '--mc', '100', '--out', str(curve)]) == 0
    return {p.name: p.read_bytes() for p in sorted(workdir.iterdir())}


def test_pipeline_is_byte_identical_across_runs_and_threads(tmp_path, capsys):
    first, second = tmp_path / 'a', tmp_path / 'b'
    first.mkdir()
    second.mkdir()
    files_a = run_pipeline(first, threads=1)
    out_a = capsys.readouterr().out
    files_b = run_pipeline(second, threads=4)
    out_b = capsys.readouterr().out

    assert files_a == files_b
    assert out_a == out_b
    assert {'d.csv', 'd.csv.meta.json', 'm.json', 'm.loss.csv', 'm.loss.csv.meta.json',
            'curve.csv', 'curve.csv.meta.json'} <= set(files_a)
    assert files_a['curve.csv'].decode('utf-8').splitlines()[0] == \
        'alpha,epsilon,exp_neg_shannon,gap_bound,guaranteed_accuracy'
    assert files_a['m.loss.csv'].decode('utf-8').splitlines()[0] == 'epoch,loss'


def test_curve_to_stdout_and_seed_from_model(tmp_path, capsys):
    config = write_config(tmp_path / 'c.json')
    data, model = tmp_path / 'd.csv', tmp_path / 'm.json'
    main.run(['gen-data', '--config', str(config), '--out', str(data)])
    main.run(['train', '--config', str(config), '--out', str(model)])
    capsys.readouterr()
    assert main.run(['curve', '--model', str(model), '--data', str(data), '--alpha-grid', '0,0.1',
                     '--mc', '100']) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3
    assert lines[1].startswith('0,0,')


def test_attack_rejects_dimension_mismatch(tmp_path, capsys):
    model = tmp_path / 'm.json'
    netlib.save(RandomizedNet.mlp([3, 4, 2], seed=0), model, meta={'seed': 0})
    data = tmp_path / 'd.csv'
    data.write_text('f1,f2,label\n0.1,0.2,0\n', encoding='utf-8')
    assert main.run(['attack', '--model', str(model), '--data', str(data), '--attack', 'grid']) == 2
    assert 'data' in capsys.readouterr().err


# ==================== 损坏的模型文件 ====================
def write_model_file(path, mutate):
    netlib.save(RandomizedNet([LinearLayer([[1.0, 0.0], [0.0, 1.0]])],
                              noise={'family': 'gaussian', 'sigma': 0.5, 'dim': 2}), path, meta={'seed': 1})
    raw = json.loads(path.read_text(encoding='utf-8'))
    mutate(raw)
    path.write_text(json.dumps(raw), encoding='utf-8')
    return path


@pytest.mark.parametrize('mutate, field', [
    (lambda raw: raw['layers'][0].pop('w'), 'layers[0].w'),
    (lambda raw: raw.update(layers=['linear']), 'layers[0]'),
    (lambda raw: raw['layers'][0].update(b=[0.0, 0.0, 0.0]), 'layers[0].b'),
])
def test_certify_malformed_model_exits_two(tmp_path, capsys, mutate, field):
    path = write_model_file(tmp_path / 'm.json', mutate)
    assert main.run(['certify', '--model', str(path), '--alpha', '0.1']) == 2
    assert field in capsys.readouterr().err


def test_certify_non_utf8_model_exits_two(tmp_path, capsys):
    path = tmp_path / 'm.json'
    path.write_bytes(b'{"layers": "\xff\xfe"}')
    assert main.run(['certify', '--model', str(path), '--alpha', '0.1']) == 2
    assert 'offset 12' in capsys.readouterr().err


def test_bad_thread_env_exits_two(monkeypatch, capsys):
    monkeypatch.setattr(main.DEFAULTS, 'threads_env', 'abc')
    assert main.run(['divergence', '--p', '0.5,0.5', '--q', '0.5,0.5']) == 2
    assert 'RENOIR_THREADS' in capsys.readouterr().err
    # 命令行给出线程数时不读环境变量
    assert main.run(['--threads', '2', 'divergence', '--p', '0.5,0.5', '--q', '0.5,0.5']) == 0


def test_thread_env_parsed_lazily():
    config = RenoirConfig()
    config.threads_env = '0'
    with pytest.raises(ConfigError) as exc:
        config.threads
    assert exc.value.field == 'RENOIR_THREADS'
    config.threads_env = ''
    assert config.threads == 1


# ==================== 实验配置 ====================
def test_experiment_config_rejects_bad_sweep_fields():
    for extra, field in (({'sweep': {'uniform': [0.1]}}, 'sweep'),
                         ({'sweep': {'gaussian': [-0.1]}}, 'sweep.gaussian'),
                         ({'alpha_grid': [0.1, 'x']}, 'alpha_grid'),
                         ({'attacks': ['pgd']}, 'attacks'),
                         ({'output_dir': ''}, 'output_dir')):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_dict(dict(CONFIG, **extra))
        assert exc.value.field == field


# ==================== 噪声注入位置 ====================
def test_first_activation_noise_is_certified_through_prefix(tmp_path, capsys):
    raw = dict(CONFIG, model={'hidden': [8], 'noise_at': 'first_activation'})
    config, model = write_config(tmp_path / 'c.json', raw), tmp_path / 'm.json'
    assert main.run(['train', '--config', str(config), '--out', str(model)]) == 0
    loaded = netlib.load(model)
    assert loaded.noise_layer_index == 1
    assert loaded.noise_dim == 8
    assert len(loaded.prefix) == 1

    capsys.readouterr()
    assert main.run(['certify', '--model', str(model), '--alpha', '0.1', '--lambda', '2']) == 0
    out = json.loads(capsys.readouterr().out)
    assert out['epsilon'] == pytest.approx(certify_net(loaded, 0.1, 2.0).epsilon)
    assert out['epsilon'] > 0


@pytest.mark.parametrize('model_spec', [{'hidden': [8], 'noise_at': 'output'},
                                        {'hidden': [], 'noise_at': 'first_activation'}])
def test_bad_noise_site_exits_two(tmp_path, capsys, model_spec):
    config = write_config(tmp_path / 'c.json', dict(CONFIG, model=model_spec))
    assert main.run(['train', '--config', str(config), '--out', str(tmp_path / 'm.json')]) == 2
    assert 'model.noise_at' in capsys.readouterr().err


# ==================== 噪声水平扫描 ====================
SWEEP_ATTACKS = [{'kind': 'grid', 'alpha': 0.1, 'grid_resolution': 4, 'eot_samples': 10}]


def test_sweep_writes_accuracy_tables(tmp_path):
    results = tmp_path / 'results'
    raw = dict(CONFIG, sweep={'gaussian': [0.0, 0.3], 'laplace': [0.2]}, alpha_grid=[0.0, 0.1],
               mc_samples=100, attacks=SWEEP_ATTACKS, output_dir=str(results))
    config = write_config(tmp_path / 'c.json', raw)
    assert main.run(['sweep', '--config', str(config)]) == 0

    table = pd.read_csv(results / 'sweep.csv')
    assert list(table.columns) == SWEEP_COLUMNS
    assert table['family'].tolist() == ['gaussian'] * 4 + ['laplace'] * 2
    assert table['scale'].tolist() == [0.0, 0.0, 0.3, 0.3, 0.2, 0.2]
    assert table['alpha'].tolist() == [0.0, 0.1] * 3
    # 零噪声模型在α>0处没有证书
    assert table['guaranteed_accuracy'].iloc[1] == 0.0
    assert (table['guaranteed_accuracy'] <= table['natural_accuracy']).all()
    assert (results / 'sweep.csv.meta.json').exists()

    attacks = pd.read_csv(results / 'sweep.attacks.csv')
    assert list(attacks.columns) == ATTACK_SWEEP_COLUMNS
    assert attacks['attack'].tolist() == ['grid'] * 3
    assert attacks['adversarial_accuracy'].between(0.0, 1.0).all()
    assert (results / 'sweep.attacks.csv.meta.json').exists()


def test_sweep_command_line_overrides_config(tmp_path):
    config = write_config(tmp_path / 'c.json', dict(CONFIG, sweep={'gaussian': [0.1, 0.2, 0.3]}))
    out = tmp_path / 's.csv'
    assert main.run(['sweep', '--config', str(config), '--sigmas', '0.5', '--alpha-grid', '0,0.05',
                     '--mc', '100', '--out', str(out)]) == 0
    table = pd.read_csv(out)
    assert table['scale'].tolist() == [0.5, 0.5]
    assert not (tmp_path / 's.attacks.csv').exists()


def test_sweep_without_levels_exits_two(tmp_path, capsys):
    config = write_config(tmp_path / 'c.json', dict(CONFIG, alpha_grid=[0.0]))
    assert main.run(['sweep', '--config', str(config), '--out', str(tmp_path / 's.csv')]) == 2
    assert 'sweep' in capsys.readouterr().err
