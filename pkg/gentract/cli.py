"""
Command line entry point.

    gentract phantom      synthesize a phantom (SHV + TRK + ground truth)
    gentract train-vae    stage 1: per-coefficient VAEs
    gentract train        stage 2: generator and refiner (resumable)
    gentract generate     sample a tractogram from a trained run
    gentract evaluate     score a tractogram against ground truth
    gentract sweep-steps  precision versus sampler steps (and degradations)
    gentract sweep-models precision over objective, depth and width

Exit codes: 0 success, 2 usage, configuration or input error, 3 numerical
divergence. Summaries go to stdout as `key=value` pairs; logs and errors go
to stderr and to `<run_dir>/run.log`.
"""
import sys
import json
import shutil
import argparse
from pathlib import Path

from .config import load_config, main_logger, console_logger
from .errors import (
    ConfigError, DivergenceError, FormatError, NonFiniteError, ShapeError)
from .evaluation import emit_report, filter_streamlines, make_report
from .files import RunFolder
from .inference import (
    TrainedModel, generate_tractogram, read_sidecar, write_sidecar)
from .phantom import GroundTruth, PhantomSpec, demo_phantom_spec, make_phantom
from .phantom import ground_truth_tractogram
from .preprocessing import ScalingStats
from .training import (
    GeneratorTrainer, build_training_data, load_vaes, make_subjects,
    run_vae_stage, split_names, train_generator)
from .trk import read_trk, write_trk
from .volume import degrade_resolution, read_shv, rician_corrupt, write_shv


DEFAULT_SWEEP_STEPS = (5, 10, 25, 50)
CONFIGURED = object()  # non-str so argparse does not apply type= to it


def int_list(text):
    try:
        return [int(x) for x in text.split(',') if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError('expected comma-separated integers, '
                                         'got %r' % text)


def str_list(text):
    return [x.strip() for x in text.split(',') if x.strip()]


def emit(**fields):
    print(' '.join('%s=%s' % (k, v) for k, v in fields.items()))


def write_json(path, data):
    with open(path, 'w') as fp:
        json.dump(data, fp, sort_keys=True, indent=2)


def read_json(path):
    with open(path) as fp:
        return json.load(fp)


def open_run(args, **sections):
    """Loads the configuration, applies command line overrides and sets up
    logging into the run folder.
    """
    config = load_config(args.config)
    top = {}
    if getattr(args, 'out', None):
        top['run_dir'] = args.out
    if sections or top:
        config = config.replace(**sections, **top)
    run = RunFolder(config.run_dir)
    run.create()
    log = main_logger(str(run.log_path))
    run.log = log
    write_json(run.config_path, config.to_dict())
    return config, run, log


def save_subject(run, subject):
    folder = run.subject_dir(subject.name)
    folder.mkdir(parents=True, exist_ok=True)
    write_shv(subject.volume, folder / 'volume.shv')
    write_trk(subject.tractogram, folder / 'tractogram.trk')
    subject.truth.save(folder / 'truth.json')


def evaluation_subject(run):
    """Folder of the first test subject recorded by `train-vae`."""
    split = read_json(run.require(run.split_path))
    return run.subject_dir(split['test'][0])


def training_data(config, run, log, stats=None):
    subjects = make_subjects(config, log)
    split = split_names(config, subjects)
    train = [s for s in subjects if s.name in split['train']]
    return subjects, split, build_training_data(config, train, stats)


def degradation_levels(config, args):
    """Rician sigma and target voxel size requested on the command line; a
    bare flag takes its level from the `[data]` section.
    """
    sigma, voxel = args.corrupt_sigma, args.downsample_mm
    if sigma == CONFIGURED:
        sigma = config.data.corrupt_sigma
    if voxel == CONFIGURED:
        voxel = config.data.downsample_mm
    return sigma, voxel


def degraded_volumes(config, volume, corrupt_sigma=None, downsample_mm=None):
    """Yields (tag, volume) for the clean input and each requested
    degradation.
    """
    yield 'clean', volume
    if corrupt_sigma is not None:
        yield 'noisy', rician_corrupt(volume, corrupt_sigma, seed=config.seed)
    if downsample_mm is not None:
        yield 'downsampled', degrade_resolution(volume, downsample_mm)


def evaluate_generation(config, generation, truth, run_id, objective=None,
                        config_hash=None):
    voxel = generation.tractogram.voxel_size
    result = filter_streamlines(
        generation.tractogram, truth,
        tau=config.eval.tau_voxels * voxel,
        endpoint_radius=config.eval.endpoint_voxels * voxel,
        flags=generation.flags)
    return make_report(
        result, truth, config.eval.min_bundle_tp, run_id,
        objective or config.objective.kind, config.model.layers,
        config.model.width, generation.steps, generation.wall_clock_s,
        generation.seed, config_hash or config.hash,
        endpoint_radius=config.eval.endpoint_voxels * voxel)


def sample_with(config, trained, volume, steps=None, count=None, seed=None):
    sample = config.sample
    return generate_tractogram(
        trained, volume,
        count=count or sample.count,
        batch_size=sample.batch_size,
        steps=steps or sample.steps,
        seed=sample.seed if seed is None else seed,
        record_timing=config.eval.record_timing)


def cmd_phantom(args):
    log = console_logger()
    spec = demo_phantom_spec()
    if args.spec:
        try:
            spec = PhantomSpec.load(args.spec)
        except (KeyError, TypeError) as e:
            raise ConfigError('invalid phantom spec %s: %s' % (args.spec, e))
    if args.seed is not None:
        spec.seed = args.seed
    volume, truth = make_phantom(spec, log=log)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_shv(volume, out / 'volume.shv')
    write_trk(ground_truth_tractogram(volume, truth), out / 'tractogram.trk')
    truth.save(out / 'truth.json')
    spec.save(out / 'spec.json')
    emit(bundles=len(truth.bundles), streamlines=len(truth.streamlines()),
         voxels='x'.join(str(n) for n in volume.extents))


def cmd_train_vae(args):
    config, run, log = open_run(args, **_seed(args))
    subjects, split, data = training_data(config, run, log)
    for subject in subjects:
        save_subject(run, subject)
    write_json(run.split_path, split)
    log.info('Subjects: train %s, valid %s, test %s',
             split['train'], split['valid'], split['test'])
    run_vae_stage(config, run, data, log)
    curves = run.load_history(run.vae_history_path)
    emit(checkpoint=run.vae_path, coefficients=len(curves[0]) - 1,
         steps=len(curves))


def cmd_train(args):
    sections = _seed(args)
    if args.steps is not None:
        sections['train'] = {'steps': args.steps}
    config, run, log = open_run(args, **sections)
    run.require(run.vae_path)
    stats = ScalingStats.load(run.require(run.stats_path))
    vaes = load_vaes(run, stats)
    _, _, data = training_data(config, run, log, stats)
    trainer = train_generator(config, run, data, vaes,
                              resume=not args.restart,
                              progress=args.progress, log=log)
    history = run.load_history()
    emit(checkpoint=run.generator_path, steps=trainer.step,
         initial_loss='%.6g' % history[0]['loss'],
         final_loss='%.6g' % history[-1]['loss'])


def cmd_generate(args):
    sections = {}
    if args.seed is not None:
        sections['sample'] = {'seed': args.seed}
    config, run, log = open_run(args, **sections)
    trained = TrainedModel.load(run, config)
    volume_path = args.volume or evaluation_subject(run) / 'volume.shv'
    volume = read_shv(volume_path)
    tag = 'clean'
    sigma, voxel = degradation_levels(config, args)
    if sigma is not None:
        volume = rician_corrupt(volume, sigma, seed=config.seed)
        tag = 'noisy'
    if voxel is not None:
        volume = degrade_resolution(volume, voxel)
        tag = 'downsampled' if tag == 'clean' else tag + '_downsampled'
    generation = sample_with(config, trained, volume, args.steps, args.count)
    out = Path(args.output) if args.output else run.generated_path(
        '%s_steps%d' % (tag, generation.steps))
    write_trk(generation.tractogram, out)
    write_sidecar(out, generation, config.hash)
    log.info('Tractogram saved: %s (%.3f s)', out, generation.wall_clock_s)
    emit(tractogram=out, count=len(generation.tractogram),
         steps=generation.steps, wall_clock_s='%.6f' % generation.wall_clock_s)


def cmd_evaluate(args):
    config, run, log = open_run(args)
    tractogram = read_trk(args.tractogram)
    truth_path = args.truth or evaluation_subject(run) / 'truth.json'
    truth = GroundTruth.load(truth_path)
    sidecar = read_sidecar(args.tractogram) or {}
    flags = [False] * len(tractogram)
    for index in sidecar.get('out_of_bounds', []):
        flags[index] = True
    voxel = tractogram.voxel_size
    result = filter_streamlines(
        tractogram, truth, tau=config.eval.tau_voxels * voxel,
        endpoint_radius=config.eval.endpoint_voxels * voxel, flags=flags)
    report = make_report(
        result, truth, config.eval.min_bundle_tp,
        args.run_id or Path(args.tractogram).stem, config.objective.kind,
        config.model.layers, config.model.width,
        sidecar.get('steps', config.sample.steps),
        sidecar.get('wall_clock_s', 0.0),
        sidecar.get('seed', config.sample.seed),
        sidecar.get('config_hash', config.hash),
        endpoint_radius=config.eval.endpoint_voxels * voxel)
    csv_path = Path(args.report) if args.report else run.root / 'metrics.csv'
    emit_report([report], csv_path, csv_path.with_suffix('.svg'))
    log.info('Precision %.4f, %d/%d bundles discovered (endpoint mm %s)',
             report.precision, report.bundles_discovered,
             report.bundle_total, report.endpoint_mm)
    emit(report=csv_path, precision='%.6f' % report.precision,
         bundles='%d/%d' % (report.bundles_discovered, report.bundle_total))


def cmd_sweep_steps(args):
    sections = {}
    if args.seed is not None:
        sections['sample'] = {'seed': args.seed}
    config, run, log = open_run(args, **sections)
    trained = TrainedModel.load(run, config)
    subject = evaluation_subject(run)
    volume = read_shv(subject / 'volume.shv')
    truth = GroundTruth.load(subject / 'truth.json')
    reports = []
    for tag, degraded in degraded_volumes(
            config, volume, *degradation_levels(config, args)):
        for steps in args.steps:
            generation = sample_with(config, trained, degraded, steps,
                                     args.count)
            report = evaluate_generation(
                config, generation, truth, '%s_steps%d' % (tag, steps))
            log.info('%s: precision %.4f in %.3f s', report.run_id,
                     report.precision, report.wall_clock_s)
            emit(run_id=report.run_id, precision='%.6f' % report.precision,
                 wall_clock_s='%.6f' % report.wall_clock_s)
            reports.append(report)
    emit_report(reports, run.root / 'sweep_steps.csv',
                run.root / 'sweep_steps.svg')


def cmd_sweep_models(args):
    config, run, log = open_run(args, **_seed(args))
    stats = ScalingStats.load(run.require(run.stats_path))
    vaes = load_vaes(run, stats)
    _, _, data = training_data(config, run, log, stats)
    subject = evaluation_subject(run)
    volume = read_shv(subject / 'volume.shv')
    truth = GroundTruth.load(subject / 'truth.json')
    reports = []
    for objective in args.objectives:
        for layers in args.layers:
            for width in args.widths:
                name = '%s_M%d_n%d' % (objective, layers, width)
                sections = {'objective': {'kind': objective},
                            'model': {'layers': layers, 'width': width},
                            'run_dir': str(run.root / 'models' / name)}
                if args.train_steps is not None:
                    sections['train'] = {'steps': args.train_steps}
                variant = config.replace(**sections)
                sub = RunFolder(variant.run_dir, log)
                sub.create()
                for path in ('vae_path', 'stats_path'):
                    shutil.copyfile(getattr(run, path), getattr(sub, path))
                trainer = GeneratorTrainer(variant, data, vaes, sub, log)
                trainer.fit()
                trained = TrainedModel.from_trainer(trainer)
                generation = sample_with(variant, trained, volume,
                                         args.steps, args.count)
                report = evaluate_generation(variant, generation, truth, name)
                emit(run_id=name, precision='%.6f' % report.precision,
                     wall_clock_s='%.6f' % report.wall_clock_s)
                reports.append(report)
    emit_report(reports, run.root / 'sweep_models.csv',
                run.root / 'sweep_models.svg')


def _seed(args):
    return {'seed': args.seed} if args.seed is not None else {}


def build_parser():
    parser = argparse.ArgumentParser(
        prog='gentract',
        description='Generative whole-tractogram synthesis on phantoms.')
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    def degradations(sub):
        sub.add_argument('--corrupt-sigma', type=float, nargs='?',
                         const=CONFIGURED, default=None,
                         help='Rician noise level; bare flag uses '
                              '[data] corrupt_sigma')
        sub.add_argument('--downsample-mm', type=float, nargs='?',
                         const=CONFIGURED, default=None,
                         help='degraded voxel size; bare flag uses '
                              '[data] downsample_mm')

    def command(name, handler, help_text, config=True):
        sub = commands.add_parser(name, help=help_text)
        sub.set_defaults(handler=handler)
        if config:
            sub.add_argument('--config', default=None,
                             help='run configuration (TOML)')
            sub.add_argument('--out', default=None,
                             help='run directory (overrides run_dir)')
        sub.add_argument('--seed', type=int, default=None)
        return sub

    sub = command('phantom', cmd_phantom, 'synthesize a phantom',
                  config=False)
    sub.add_argument('--spec', default=None,
                     help='phantom spec JSON (default: demo phantom)')
    sub.add_argument('--out', required=True, help='output directory')

    command('train-vae', cmd_train_vae, 'train the per-coefficient VAEs')

    sub = command('train', cmd_train, 'train the generator and refiner')
    sub.add_argument('--steps', type=int, default=None,
                     help='total training steps')
    sub.add_argument('--restart', action='store_true',
                     help='ignore an existing generator checkpoint')
    sub.add_argument('--progress', action='store_true')

    sub = command('generate', cmd_generate, 'sample a tractogram')
    sub.add_argument('--volume', default=None, help='SHV input volume')
    sub.add_argument('--output', default=None, help='TRK output path')
    sub.add_argument('--steps', type=int, default=None,
                     help='sampler steps')
    sub.add_argument('--count', type=int, default=None)
    degradations(sub)

    sub = command('evaluate', cmd_evaluate, 'score a tractogram')
    sub.add_argument('--tractogram', required=True)
    sub.add_argument('--truth', default=None, help='ground truth JSON')
    sub.add_argument('--report', default=None, help='metrics CSV path')
    sub.add_argument('--run-id', default=None)

    sub = command('sweep-steps', cmd_sweep_steps,
                  'precision versus sampler steps')
    sub.add_argument('--steps', type=int_list,
                     default=list(DEFAULT_SWEEP_STEPS))
    sub.add_argument('--count', type=int, default=None)
    degradations(sub)

    sub = command('sweep-models', cmd_sweep_models,
                  'train and score a grid of generators')
    sub.add_argument('--layers', type=int_list, default=[4])
    sub.add_argument('--widths', type=int_list, default=[64])
    sub.add_argument('--objectives', type=str_list, default=['diffusion'])
    sub.add_argument('--steps', type=int, default=None,
                     help='sampler steps')
    sub.add_argument('--train-steps', type=int, default=None)
    sub.add_argument('--count', type=int, default=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.handler(args)
    except (DivergenceError, NonFiniteError) as e:
        print('gentract: diverged: %s' % e, file=sys.stderr)
        return 3
    except (ConfigError, FormatError, ShapeError, ValueError, KeyError,
            FileNotFoundError) as e:
        print('gentract: error: %s' % e, file=sys.stderr)
        return 2
    return 0
