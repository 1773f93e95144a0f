import json
import os

import numpy as np
import pytest

from frequnet import gradcheck
from frequnet.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, metrics_series, run
from frequnet.errors import NumericError
from frequnet.gradcheck import GradcheckCase
from frequnet.harness import ablation, training
from frequnet.tensor_core import record


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / 'c.cfg'
    path.write_text('# smallest run\ntrain.epochs = 2\n')
    return str(path)


def trained(runs_dir, capsys, *extra):
    code = run(['--profile', 'testing', 'train', '--out', runs_dir, *extra])
    assert code == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    return {line.split(': ', 1)[0]: line.split(': ', 1)[1] for line in lines if ': ' in line}


def test_train_writes_run_directory(runs_dir, cfg_file, capsys):
    paths = trained(runs_dir, capsys, '--config', cfg_file, '--override', 'epochs=1')
    assert os.path.isfile(paths['checkpoint'])
    assert os.path.isfile(paths['metrics log'])
    assert os.path.dirname(paths['checkpoint']) == paths['run directory']
    with open(os.path.join(paths['run directory'], 'config.cfg')) as fh:
        assert 'train.epochs = 1\n' in fh.read()


def test_unknown_override_key(runs_dir, capsys):
    code = run(['--profile', 'testing', 'train', '--out', runs_dir, '--override', 'epochz=1'])
    assert code == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "unknown config key 'epochz'" in err
    assert 'train.epochs' in err


def test_short_class_override(runs_dir, capsys):
    paths = trained(runs_dir, capsys, '--override', 'class.2.area_fraction=0.07')
    with open(os.path.join(paths['run directory'], 'config.cfg')) as fh:
        assert 'data.class.2.area_fraction = 0.07\n' in fh.read()
    code = run(['--profile', 'testing', 'train', '--out', runs_dir, '--override', 'class.7.area_fraction=0.05'])
    assert code == EXIT_CONFIG
    assert 'valid keys' in capsys.readouterr().err


def test_unknown_profile(runs_dir):
    assert run(['--profile', 'huge', 'train', '--out', runs_dir]) == EXIT_CONFIG


def test_usage_errors():
    assert run(['eval', '--split', 'test']) == EXIT_CONFIG
    assert run(['frobnicate']) == EXIT_CONFIG
    assert run(['gradcheck', '--op', 'no_such_op']) == EXIT_CONFIG


def test_eval_prints_report(runs_dir, capsys):
    trained(runs_dir, capsys)
    assert run(['--profile', 'testing', 'eval', '--out', runs_dir]) == EXIT_OK
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert report['aggregation'] == 'global'
    assert len(report['class_dice']) == 3
    assert report['split'] == 'val'


def test_eval_with_missing_checkpoint(runs_dir, capsys):
    code = run(['--profile', 'testing', 'eval', '--checkpoint', os.path.join(runs_dir, 'none.fquf')])
    assert code == EXIT_IO
    assert 'i/o error' in capsys.readouterr().err


def test_eval_with_checkpoint_of_other_switches(runs_dir, capsys):
    paths = trained(runs_dir, capsys)
    code = run(['--profile', 'testing', 'eval', '--checkpoint', paths['checkpoint'], '--override', 'sld=false'])
    assert code == EXIT_IO


def test_nonfinite_loss_exits_three(runs_dir, monkeypatch):
    def broken(*args, **kwargs):
        raise NumericError('freq', 'value nan')

    monkeypatch.setattr(training, 'supervised_loss', broken)
    assert run(['--profile', 'testing', 'train', '--out', runs_dir]) == EXIT_NUMERIC


def test_gen_data_then_train_from_cache(runs_dir, tmp_path, capsys):
    cache = str(tmp_path / 'data.fquf')
    assert run(['--profile', 'testing', 'gen-data', '--file', cache]) == EXIT_OK
    assert capsys.readouterr().out.strip() == cache
    paths = trained(runs_dir, capsys, '--cache', cache)
    assert os.path.isfile(paths['checkpoint'])


def test_gradcheck_subset(capsys):
    assert run(['gradcheck', '--op', 'tanh', '--op', 'linear']) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert [line.split()[0] for line in out] == ['tanh', 'linear']
    assert all(line.endswith('ok') for line in out)


def test_gradcheck_failure_exits_three(monkeypatch, capsys):
    def build(rng):
        def fn(p):
            x = p['x']
            return record('bad_square', (x,), x.data ** 2, lambda g: (g * x.data,))
        return fn, {'x': rng.uniform(0.5, 1.0, size=4)}

    monkeypatch.setattr(gradcheck, 'CASES', {'bad_square': GradcheckCase('bad_square', build)})
    assert run(['gradcheck']) == EXIT_NUMERIC
    captured = capsys.readouterr()
    assert 'FAIL' in captured.out
    assert 'failed: bad_square' in captured.err


def test_ablate_prints_five_rows(runs_dir, monkeypatch, capsys, fake_train):
    monkeypatch.setattr(ablation, 'train', fake_train(lambda s: s.flc and s.sld))
    assert run(['--profile', 'testing', 'ablate', '--out', runs_dir]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[0].split(' | ')[0].strip() == 'Variant'
    assert [line.split(' | ')[0].strip() for line in out[2:7]] == [
        'w/o FLC', 'w/o DB Downsampling', 'w/o SLD', 'w/o FAL', 'full']
    assert out[-1] == 'full row best on class 2 in 1/1 seeds'
    assert os.path.isfile(os.path.join(runs_dir, 'ablation.tsv'))


def test_ablate_over_seeds(runs_dir, monkeypatch, capsys, fake_train):
    monkeypatch.setattr(ablation, 'train', fake_train(lambda s: True))
    assert run(['--profile', 'testing', 'ablate', '--out', runs_dir, '--seeds', '0,1']) == EXIT_OK
    out = capsys.readouterr().out
    assert 'seed 0' in out and 'seed 1' in out
    assert 'mean over seeds 0,1' in out
    assert out.strip().endswith('full row best on class 2 in 2/2 seeds')
    assert run(['--profile', 'testing', 'ablate', '--out', runs_dir, '--seeds', '0,x']) == EXIT_CONFIG


def test_ablate_imbalance(runs_dir, monkeypatch, capsys, fake_train):
    monkeypatch.setattr(ablation, 'train', fake_train(lambda s: s.fal))
    assert run(['--profile', 'testing', 'ablate', '--imbalance', '--seeds', '0', '--out', runs_dir]) == EXIT_OK
    out = capsys.readouterr().out
    assert 'full_minority_dice: 100.00' in out
    assert 'baseline_minority_dice: 0.00' in out
    assert out.strip().endswith('True')


def test_plot_data_writes_series(runs_dir, tmp_path, capsys):
    paths = trained(runs_dir, capsys)
    target = str(tmp_path / 'plots')
    assert run(['plot-data', paths['metrics log'], '--out', target]) == EXIT_OK
    files = set(os.listdir(target))
    for name in ('step_total', 'step_lr', 'step_soft_dice_2', 'epoch_dice_gap', 'epoch_ema_val', 'epoch_dice_1'):
        assert f'{name}.dat' in files
    rows = np.loadtxt(os.path.join(target, 'epoch_lr.dat'), ndmin=2)
    assert rows.shape == (1, 2)
    assert rows[0, 0] == 1.0


def test_metrics_series_split_by_kind():
    records = [
        {'kind': 'step', 'step': 1, 'total': 2.0, 'dice': -0.5, 'topk': 1.5, 'freq': 0.1, 'lr': 0.01,
         'class_dice': [0.9, 0.2], 'aux': []},
        {'kind': 'epoch', 'epoch': 1, 'lr': 0.01, 'ema_train': 2.0, 'ema_val': 2.1, 'val_loss': 2.1,
         'dice_gap': 0.0, 'class_dice': [0.9, 0.1]},
    ]
    series = metrics_series(records)
    assert series['step_total'] == [(1, 2.0)]
    assert series['step_soft_dice_1'] == [(1, 0.2)]
    assert series['epoch_dice_1'] == [(1, 0.1)]
    assert 'epoch_total' not in series
