# -*- coding: utf-8 -*-
"""数据集生成与CSV读写测试"""

import numpy as np
import pytest

from data import from_spec, gen_blobs, gen_two_moons, load_csv, moons_arc_residual, write_csv
from errors import DataFormatError, ValidationError
from net import Dataset, LinearLayer, RandomizedNet, natural_accuracy, train

CENTERS = [[-0.5, -0.5], [0.5, 0.5]]


def test_blobs_are_balanced_and_in_domain():
    data = gen_blobs(100, CENTERS, 0.2, seed=1)
    assert np.bincount(data.labels).tolist() == [50, 50]
    assert data.inputs.min() >= -1.0 and data.inputs.max() <= 1.0


def test_blobs_same_seed_same_bytes():
    a = gen_blobs(60, CENTERS, 0.2, seed=4)
    b = gen_blobs(60, CENTERS, 0.2, seed=4)
    assert a.inputs.tobytes() == b.inputs.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()


def test_blobs_reject_bad_arguments():
    with pytest.raises(ValidationError):
        gen_blobs(10, CENTERS, 0.0, seed=0)
    with pytest.raises(ValidationError):
        gen_blobs(10, [[1.5, 0.0]], 0.1, seed=0)


def test_noiseless_moons_lie_on_their_arcs():
    data = gen_two_moons(200, 0.0, seed=2)
    assert np.bincount(data.labels).tolist() == [100, 100]
    for point, label in zip(data.inputs, data.labels):
        assert moons_arc_residual(point, label) == pytest.approx(0.0, abs=1e-9)


def test_noisy_moons_stay_in_domain():
    data = gen_two_moons(300, 0.3, seed=3)
    assert np.all(np.abs(data.inputs) <= 1.0)


@pytest.mark.slow
def test_moons_need_a_nonlinear_model():
    """线性模型在双月牙上达不到0.95，两层隐藏层的MLP可以"""
    data = gen_two_moons(400, 0.05, seed=4)
    schedule = [[0, 0.05], [300, 0.01]]
    linear, _ = train(RandomizedNet([LinearLayer(np.zeros((2, 2)))]), data, epochs=400, lr_schedule=schedule)
    mlp, _ = train(RandomizedNet.mlp([2, 32, 32, 2], seed=4), data, epochs=400, lr_schedule=schedule)
    assert natural_accuracy(linear, data, 1, seed=0) < 0.95
    assert natural_accuracy(mlp, data, 1, seed=0) > 0.95


def test_generated_datasets_satisfy_invariants():
    rng = np.random.default_rng(0)
    for seed in range(30):
        k = int(rng.integers(2, 5))
        d = int(rng.integers(1, 4))
        centers = rng.uniform(-1, 1, size=(k, d))
        data = gen_blobs(int(rng.integers(k, 80)), centers, float(rng.uniform(0.05, 1.0)), seed)
        # 重新构造会再次校验全部不变量
        Dataset(data.inputs, data.labels)
        counts = np.bincount(data.labels, minlength=k)
        assert counts.max() - counts.min() <= 1


def test_from_spec_dispatch(tmp_path):
    blobs = from_spec({'kind': 'blobs', 'n': 20, 'centers': CENTERS, 'spread': 0.1}, seed=5)
    assert len(blobs) == 20
    moons = from_spec({'kind': 'moons', 'n': 20, 'noise_sd': 0.05}, seed=5)
    assert moons.num_classes == 2
    path = tmp_path / 'd.csv'
    write_csv(blobs, path)
    assert len(from_spec({'kind': 'csv', 'path': str(path)}, seed=0)) == 20
    with pytest.raises(ValidationError):
        from_spec({'kind': 'spiral'}, seed=0)


# ==================== CSV ====================
def test_csv_round_trip_at_nine_digits(tmp_path):
    data = gen_two_moons(50, 0.1, seed=8)
    path = tmp_path / 'moons.csv'
    write_csv(data, path)
    assert path.read_text(encoding='utf-8').splitlines()[0] == 'f1,f2,label'
    loaded = load_csv(path)
    np.testing.assert_allclose(loaded.inputs, data.inputs, rtol=1e-8, atol=1e-9)
    np.testing.assert_array_equal(loaded.labels, data.labels)


def test_csv_out_of_domain_names_row(tmp_path):
    path = tmp_path / 'bad.csv'
    path.write_text('f1,f2,label\n0.1,0.2,0\n1.5,0.0,1\n', encoding='utf-8')
    with pytest.raises(DataFormatError) as exc:
        load_csv(path)
    assert exc.value.row == 2
    assert exc.value.column == 'f1'
    assert 'row 2' in str(exc.value)


def test_csv_empty_and_missing_file(tmp_path):
    empty = tmp_path / 'empty.csv'
    empty.write_text('', encoding='utf-8')
    with pytest.raises(DataFormatError):
        load_csv(empty)
    with pytest.raises(DataFormatError):
        load_csv(tmp_path / 'nope.csv')


def test_csv_header_and_label_checks(tmp_path):
    path = tmp_path / 'd.csv'
    path.write_text('x,y,label\n0.1,0.2,0\n', encoding='utf-8')
    with pytest.raises(DataFormatError):
        load_csv(path)

    path.write_text('f1,label\n0.1,0.5\n', encoding='utf-8')
    with pytest.raises(DataFormatError) as exc:
        load_csv(path)
    assert exc.value.column == 'label'

    path.write_text('f1,label\n0.1,0\n0.2,2\n', encoding='utf-8')
    with pytest.raises(DataFormatError):
        load_csv(path)

    path.write_text('f1,label\n', encoding='utf-8')
    with pytest.raises(DataFormatError):
        load_csv(path)
