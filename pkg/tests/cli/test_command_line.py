import json

import pytest

from gentract.cli import build_parser, degradation_levels, int_list, main
from gentract.config import RunConfig
from gentract.errors import NonFiniteError
from gentract.evaluation import read_report_csv
from gentract.phantom import BundleSpec, PhantomSpec
from gentract.streamlines import Tractogram
from gentract.training import GeneratorTrainer
from gentract.trk import read_trk, write_trk


TINY_TOML = '''\
[data]
phantom = "{phantom}"

[encoder]
steps = 3
batch = 1
hidden = 4

[model]
layers = 1
width = 16
heads = 2
points = 16

[objective]
timesteps = 50

[train]
steps = 4
batch = 8
log_every = 2
checkpoint_every = 2

[sample]
count = 6
batch_size = 4
steps = 3

[eval]
record_timing = false
'''


@pytest.fixture
def tiny_toml(small_spec_path, tmp_path):
    path = tmp_path / 'tiny.toml'
    path.write_text(TINY_TOML.format(phantom=small_spec_path))
    return str(path)


@pytest.fixture
def run_args(tiny_toml, tmp_path):
    return ['--config', tiny_toml, '--out', str(tmp_path / 'run')]


def summary(capsys):
    """Parses the last `key=value` line printed to stdout."""
    lines = capsys.readouterr().out.strip().splitlines()
    return dict(pair.split('=', 1) for pair in lines[-1].split())


def test_phantom_command_prints_summary(small_spec_path, tmp_path, capsys):
    code = main(['phantom', '--spec', small_spec_path,
                 '--out', str(tmp_path / 'p')])

    assert code == 0
    assert summary(capsys) == {'bundles': '2', 'streamlines': '48',
                               'voxels': '16x16x16'}
    for name in ('volume.shv', 'tractogram.trk', 'truth.json', 'spec.json'):
        assert (tmp_path / 'p' / name).exists()


def test_phantom_command_is_deterministic(small_spec_path, tmp_path):
    for name in ('a', 'b'):
        main(['phantom', '--spec', small_spec_path, '--seed', '5',
              '--out', str(tmp_path / name)])

    for name in ('volume.shv', 'tractogram.trk'):
        assert (tmp_path / 'a' / name).read_bytes() == \
            (tmp_path / 'b' / name).read_bytes()


@pytest.mark.parametrize('content', ['{"bundles": [{"name": "a"}]}',
                                     'not json'])
def test_invalid_phantom_spec_exits_with_usage_error(content, tmp_path,
                                                     capsys):
    spec = tmp_path / 'bad.json'
    spec.write_text(content)

    code = main(['phantom', '--spec', str(spec), '--out', str(tmp_path)])

    assert code == 2
    assert 'gentract: error' in capsys.readouterr().err


def test_train_without_vae_checkpoint_exits_with_usage_error(run_args,
                                                             capsys):
    code = main(['train'] + run_args)

    assert code == 2
    assert 'vae.ckpt' in capsys.readouterr().err


def test_full_pipeline_on_tiny_configuration(run_args, tmp_path, capsys):
    run = tmp_path / 'run'

    assert main(['train-vae'] + run_args) == 0
    assert summary(capsys)['coefficients'] == '6'
    assert main(['train'] + run_args) == 0
    assert summary(capsys)['steps'] == '4'
    assert main(['generate'] + run_args) == 0
    generated = summary(capsys)['tractogram']
    assert main(['evaluate', '--tractogram', generated] + run_args) == 0
    evaluated = summary(capsys)

    assert len(read_trk(generated)) == 6
    assert float(evaluated['precision']) >= 0.0
    assert evaluated['bundles'].endswith('/2')
    for name in ('config.json', 'split.json', 'stats.json', 'loss.csv',
                 'vae_loss.csv', 'run.log', 'metrics.csv', 'metrics.svg'):
        assert (run / name).exists()
    assert json.loads((run / 'split.json').read_text())['test'] == \
        ['subject00']


def test_training_resumes_to_a_larger_step_budget(run_args, capsys):
    main(['train-vae'] + run_args)
    main(['train'] + run_args)

    assert main(['train', '--steps', '6'] + run_args) == 0
    assert summary(capsys)['steps'] == '6'


def test_divergence_exits_with_numeric_error(run_args, monkeypatch, capsys):
    main(['train-vae'] + run_args)

    def diverge(self):
        raise NonFiniteError('exp')

    monkeypatch.setattr(GeneratorTrainer, 'train_step', diverge)

    assert main(['train'] + run_args) == 3
    assert 'diverged' in capsys.readouterr().err


def test_reference_tractogram_scores_perfect_precision(
        small_spec_path, run_args, tmp_path, capsys):
    phantom = tmp_path / 'p'
    main(['phantom', '--spec', small_spec_path, '--out', str(phantom)])

    code = main(['evaluate', '--tractogram', str(phantom / 'tractogram.trk'),
                 '--truth', str(phantom / 'truth.json'),
                 '--report', str(tmp_path / 'self.csv')] + run_args)

    assert code == 0
    result = summary(capsys)
    assert result['precision'] == '1.000000'
    assert result['bundles'] == '2/2'
    written, = read_report_csv(tmp_path / 'self.csv')
    assert written.endpoint_mm == 'along_x:3;along_y:3'


def test_empty_tractogram_exits_with_usage_error(small_spec_path, run_args,
                                                 tmp_path, capsys):
    phantom = tmp_path / 'p'
    main(['phantom', '--spec', small_spec_path, '--out', str(phantom)])
    empty = tmp_path / 'empty.trk'
    write_trk(Tractogram([], 2.0, (16, 16, 16)), empty)

    code = main(['evaluate', '--tractogram', str(empty),
                 '--truth', str(phantom / 'truth.json')] + run_args)

    assert code == 2
    assert 'empty' in capsys.readouterr().err


def pipeline(args, tractogram=None):
    """Trains the tiny configuration and generates one tractogram."""
    main(['train-vae'] + args)
    main(['train'] + args)
    extra = ['--output', str(tractogram)] if tractogram else []
    assert main(['generate'] + extra + args) == 0


def test_pipeline_is_reproducible_from_one_seed(tiny_toml, tmp_path, capsys):
    runs = [tmp_path / 'first', tmp_path / 'second']
    for run in runs:
        args = ['--config', tiny_toml, '--out', str(run), '--seed', '3']
        pipeline(args, run / 'out.trk')
        main(['evaluate', '--tractogram', str(run / 'out.trk')] + args)

    for name in ('vae.ckpt', 'generator.ckpt', 'out.trk', 'loss.csv',
                 'metrics.csv'):
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes()


def test_generate_flags_override_configuration(run_args, tmp_path, capsys):
    pipeline(run_args)
    paths = {}
    for steps in (5, 50):
        paths[steps] = tmp_path / ('steps%d.trk' % steps)
        main(['generate', '--steps', str(steps), '--count', '100',
              '--output', str(paths[steps])] + run_args)

    assert len(read_trk(paths[5])) == 100
    assert json.loads((tmp_path / 'steps50.trk.json').read_text())[
        'steps'] == 50
    assert paths[5].read_bytes() != paths[50].read_bytes()


def test_repeated_evaluation_writes_identical_reports(run_args, tmp_path,
                                                      capsys):
    pipeline(run_args, tmp_path / 'out.trk')
    reports = [tmp_path / 'a.csv', tmp_path / 'b.csv']

    for report in reports:
        main(['evaluate', '--tractogram', str(tmp_path / 'out.trk'),
              '--report', str(report), '--run-id', 'same'] + run_args)

    assert reports[0].read_bytes() == reports[1].read_bytes()
    assert reports[0].with_suffix('.svg').read_bytes() == \
        reports[1].with_suffix('.svg').read_bytes()


def test_bundle_outside_volume_is_named(tmp_path, capsys):
    spec = tmp_path / 'escape.json'
    PhantomSpec(
        bundles=[BundleSpec('escapee', [[4.0, 4.0, 4.0], [90.0, 4.0, 4.0]],
                            radius=1.0, count=4, points=8)],
        extents=(16, 16, 16), voxel_size=2.0).save(spec)

    code = main(['phantom', '--spec', str(spec), '--out', str(tmp_path)])

    assert code == 2
    assert 'escapee' in capsys.readouterr().err


def test_parser_reads_step_lists():
    args = build_parser().parse_args(['sweep-steps', '--steps', '1,5,10'])

    assert args.steps == [1, 5, 10]
    assert int_list('3, 4,') == [3, 4]


@pytest.mark.slow
def test_step_sweep_reports_every_degradation(run_args, tmp_path, capsys):
    main(['train-vae'] + run_args)
    main(['train'] + run_args)

    code = main(['sweep-steps', '--steps', '1,2', '--corrupt-sigma', '0.005',
                 '--downsample-mm', '3'] + run_args)

    assert code == 0
    rows = (tmp_path / 'run' / 'sweep_steps.csv').read_text().splitlines()
    assert [r.split(',')[0] for r in rows[1:]] == [
        'clean_steps1', 'clean_steps2', 'noisy_steps1', 'noisy_steps2',
        'downsampled_steps1', 'downsampled_steps2']


@pytest.mark.slow
def test_model_sweep_trains_each_variant(run_args, tmp_path):
    main(['train-vae'] + run_args)

    code = main(['sweep-models', '--layers', '1', '--widths', '8,16',
                 '--objectives', 'diffusion,flow_matching',
                 '--train-steps', '2', '--steps', '2'] + run_args)

    assert code == 0
    rows = (tmp_path / 'run' / 'sweep_models.csv').read_text().splitlines()
    assert len(rows) == 5
    assert (tmp_path / 'run' / 'models' / 'flow_matching_M1_n16' /
            'generator.ckpt').exists()


@pytest.mark.parametrize('command', ['generate', 'sweep-steps'])
def test_bare_degradation_flags_use_configured_levels(command):
    config = RunConfig().replace(data={'corrupt_sigma': 0.01,
                                       'downsample_mm': 4.0})
    parser = build_parser()

    bare = parser.parse_args([command, '--corrupt-sigma', '--downsample-mm'])
    explicit = parser.parse_args([command, '--corrupt-sigma', '0.02'])
    absent = parser.parse_args([command])

    assert degradation_levels(config, bare) == (0.01, 4.0)
    assert degradation_levels(config, explicit) == (0.02, None)
    assert degradation_levels(config, absent) == (None, None)
