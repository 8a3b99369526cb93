"""
Training data assembly and the two training stages.

Stage 1 fits one VAE per SH coefficient on z-scored volumes. Stage 2 trains
the streamline generator jointly with the shared refiner on top of the
frozen VAE latent means. Both stages are deterministic given the run
configuration and write their artifacts into a RunFolder.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from tqdm import tqdm

from .encoder import ChannelVae, ConditioningEncoder, Refiner, train_vaes
from .errors import ConfigError, DivergenceError, NonFiniteError
from .generator import StreamlineTransformer
from .iterators import BatchArrayIterator
from .learning_rate import create_schedule
from .ndiff import (
    ComputationRecord, OptimizerState, adam_step, load_checkpoint,
    save_checkpoint, take, total_size)
from .ndiff.checkpoint import file_digest
from .objectives import NoiseSchedule, objective_loss, sample_times
from .phantom import (
    PhantomSpec, demo_phantom_spec, ground_truth_tractogram, make_phantom,
    perturb_spec)
from .preprocessing import (
    ScalingStats, augment, minmax_scale, split_subjects, zscore_volume)
from .streamlines import canonicalize, resample_streamline
from .utils import derive_rng


log = logging.getLogger('gentract.training')


@dataclass
class Subject:
    name: str
    volume: object
    tractogram: object
    truth: object


@dataclass
class TrainingData:
    """Normalized inputs of the generator.

    Attributes:
        stats: Statistics fitted on the training pairs.
        volumes: z-scored SHVolumes, one per (augmented) training pair.
        streamlines: (N, p, 3) canonical, resampled, min-max scaled
            streamlines.
        owners: (N,) index into `volumes` of each streamline's subject.

    """
    stats: ScalingStats
    volumes: list
    streamlines: np.ndarray
    owners: np.ndarray


def phantom_spec(config):
    if config.data.phantom:
        try:
            return PhantomSpec.load(config.data.phantom)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError('invalid phantom spec %s: %s' %
                              (config.data.phantom, e))
    return demo_phantom_spec(l_max=config.data.l_max, seed=config.seed)


def make_subjects(config, log=log):
    """Synthesizes `[data] subjects` phantoms; subject 0 is the base spec
    and the others jitter its control points.
    """
    spec = phantom_spec(config)
    subjects = []
    for index in range(config.data.subjects):
        current = spec if index == 0 else perturb_spec(
            spec, index, config.data.subject_jitter_mm)
        volume, truth = make_phantom(current, log=log)
        subjects.append(Subject('subject%02d' % index, volume,
                                ground_truth_tractogram(volume, truth),
                                truth))
    return subjects


def split_names(config, subjects):
    """Maps split name to subject names.

    A single subject is both trained on and evaluated, which is the
    overfit setting.
    """
    names = [s.name for s in subjects]
    _, valid, test = config.data.split
    train, valid, test = split_subjects(names, valid, test, seed=config.seed)
    if not test:
        test = train[:1]
    return {'train': sorted(train), 'valid': sorted(valid),
            'test': sorted(test)}


def training_pairs(config, subjects):
    pairs = []
    for subject in subjects:
        for tag, volume, tractogram in augment(
                subject.volume, subject.tractogram,
                config.data.augment_angles, config.data.augment_axes):
            pairs.append((subject.name, tag, volume, tractogram))
    return pairs


def prepare_streamlines(streamlines, points, stats):
    """(N, p, 3) canonical streamlines resampled and scaled to [-1, 1]."""
    return np.stack([
        minmax_scale(canonicalize(resample_streamline(s, points)), stats)
        for s in streamlines])


def build_training_data(config, subjects, stats=None):
    pairs = training_pairs(config, subjects)
    if stats is None:
        stats = ScalingStats.fit([p[2] for p in pairs], [p[3] for p in pairs])
    volumes, chunks, owners = [], [], []
    for index, (_, _, volume, tractogram) in enumerate(pairs):
        volumes.append(zscore_volume(volume, stats))
        chunks.append(prepare_streamlines(
            tractogram.streamlines, config.model.points, stats))
        owners.append(np.full(len(tractogram), index))
    return TrainingData(stats, volumes, np.concatenate(chunks),
                        np.concatenate(owners))


def vae_arrays(vaes):
    arrays = OrderedDict()
    for i, vae in enumerate(vaes):
        for name, value in vae.arrays().items():
            arrays['vae%d.%s' % (i, name)] = value
    return arrays


def run_vae_stage(config, run, data, log=log):
    """Trains the channel VAEs and writes `vae.ckpt` and `vae_loss.csv`.

    Returns:
        vaes: Trained VAEs ordered by coefficient index.

    """
    run.create()
    data.stats.save(run.stats_path)
    vaes, curves = train_vaes(data.volumes, config.encoder, config.seed, log)
    metadata = {'stage': 'vae',
                'm': len(vaes),
                'c_z': config.encoder.c_z,
                'hidden': config.encoder.hidden,
                'extents': list(data.volumes[0].extents),
                'config_hash': config.training_hash,
                'stats_digest': data.stats.digest()}
    digest = save_checkpoint(run.vae_path, vae_arrays(vaes), metadata)
    header = ['step'] + ['vae%d' % i for i in range(len(curves))]
    rows = [(step + 1,) + tuple(c[step] for c in curves)
            for step in range(len(curves[0]))]
    run.write_history(rows, header=header, path=run.vae_history_path)
    log.info('VAE checkpoint saved: %s (sha256 %s)', run.vae_path, digest)
    return vaes


def load_vaes(run, stats=None):
    path = run.require(run.vae_path)
    arrays, metadata = load_checkpoint(path)
    if stats is not None and metadata['stats_digest'] != stats.digest():
        raise ConfigError('%s was trained with different scaling stats' %
                          path)
    vaes = []
    for i in range(metadata['m']):
        prefix = 'vae%d.' % i
        vae = ChannelVae(metadata['c_z'], metadata['hidden'])
        vae.load_arrays({name[len(prefix):]: value
                         for name, value in arrays.items()
                         if name.startswith(prefix)})
        vae.freeze()
        vaes.append(vae)
    return vaes


def build_models(config, m):
    """Freshly initialized refiner and generator for `m` coefficients."""
    refiner = Refiner(m, config.encoder.c_z, config.encoder.c_c,
                      seed=[config.seed, 1])
    model = StreamlineTransformer(
        layers=config.model.layers,
        width=config.model.width,
        heads=config.model.heads,
        points=config.model.points,
        context_dim=m * config.encoder.c_c,
        objective=config.objective.kind,
        timesteps=config.objective.timesteps,
        seed=[config.seed, 2])
    return refiner, model


def joint_parameters(model, refiner):
    params = OrderedDict()
    params.update(model.parameters('generator.'))
    params.update(refiner.parameters('refiner.'))
    return params


def load_joint(params, arrays):
    for name, tensor in params.items():
        tensor.data = np.asarray(arrays[name], dtype=np.float64).copy()


class GeneratorTrainer:
    """Stage-2 optimization loop over a deterministic batch stream.

    Batches mix streamlines of every training volume; the conditioning
    tokens of each distinct volume in a batch are computed once and shared
    by its streamlines.
    """
    def __init__(self, config, data, vaes, run, log=log):
        self.config = config
        self.data = data
        self.run = run
        self.log = log
        self.refiner, self.model = build_models(config, len(vaes))
        self.encoder = ConditioningEncoder(vaes, self.refiner)
        self.params = joint_parameters(self.model, self.refiner)
        self.schedule = NoiseSchedule.create(
            config.objective.schedule, config.objective.timesteps)
        self.latents = np.stack(
            [self.encoder.latents(v) for v in data.volumes])
        self.rng = derive_rng(config.seed, config.train.seed, 3)
        self.batches = BatchArrayIterator(
            data.streamlines, data.owners,
            batch_size=min(config.train.batch, len(data.streamlines)),
            infinite=True, same_size_batches=True, shuffle=True,
            rng=derive_rng(config.seed, config.train.seed, 4))
        self.state = OptimizerState(lr=config.train.lr)
        self.lr = create_schedule(
            config.train.lr_schedule, config.train.lr, config.train.lr_drop,
            config.train.lr_steps_before_drop)
        self.step = 0
        self.vae_digest = file_digest(run.vae_path)
        log.info('Generator parameters: %d, refiner parameters: %d',
                 total_size(self.model.parameters()),
                 total_size(self.refiner.parameters()))

    def loss(self, x, owners, noise, t):
        """Objective value of one batch; must run inside a record."""
        volumes, inverse = np.unique(owners, return_inverse=True)
        tokens = self.encoder.condition(self.latents[volumes])
        context = take(self.model.project_context(tokens), inverse)
        return objective_loss(self.config.objective.kind, self.model.forward,
                              x, noise, t, context, self.schedule)

    def train_step(self):
        x, owners = self.batches.next()
        noise = self.rng.standard_normal(x.shape)
        t = sample_times(self.config.objective.kind, self.rng, len(x),
                         self.config.objective.timesteps)
        with ComputationRecord() as record:
            loss = self.loss(x, owners, noise, t)
        grads = record.backward(loss, self.params)
        for name, grad in grads.items():
            if not np.all(np.isfinite(grad)):
                raise NonFiniteError('backward:' + name)
        adam_step(self.params, grads, self.state, lr=self.lr(self.step + 1))
        self.step += 1
        return loss.item()

    def metadata(self):
        return {'stage': 'generator',
                'step': self.step,
                'optimizer': self.state.metadata(),
                'rng': self.rng.bit_generator.state,
                'batches': self.batches.state(),
                'hyperparameters': self.model.hyperparameters(),
                'schedule': self.config.objective.schedule,
                'refiner': {'m': self.refiner.m, 'c_z': self.refiner.c_z,
                            'c_c': self.refiner.c_c},
                'config_hash': self.config.training_hash,
                'stats_digest': self.data.stats.digest(),
                'vae_digest': self.vae_digest}

    def save(self, path=None):
        path = path or self.run.generator_path
        arrays = OrderedDict(
            (name, t.data) for name, t in self.params.items())
        arrays.update(self.state.arrays())
        return save_checkpoint(path, arrays, self.metadata())

    def restore(self, path=None):
        path = path or self.run.generator_path
        arrays, metadata = load_checkpoint(path)
        if metadata.get('config_hash') != self.config.training_hash:
            raise ConfigError('%s was trained with a different '
                              'configuration' % path)
        if metadata.get('vae_digest') != self.vae_digest:
            raise ConfigError('%s was trained on a different VAE checkpoint'
                              % path)
        load_joint(self.params, arrays)
        self.state = OptimizerState.restore(
            metadata['optimizer'],
            OrderedDict((k, v) for k, v in arrays.items()
                        if k.startswith('adam.')))
        self.rng.bit_generator.state = metadata['rng']
        self.batches.restore(metadata['batches'])
        self.step = metadata['step']
        return self.step

    def fit(self, steps=None, resume=True, progress=False):
        """Runs the loop up to `steps` total steps.

        Args:
            steps: Target step count; defaults to `[train] steps`.
            resume: Continue from `generator.ckpt` when it exists.
            progress: Show a tqdm bar.

        Returns:
            losses: Loss per step of this call.

        Raises:
            DivergenceError: The loss or a gradient became non-finite; the
                last good state is saved to `generator.ckpt` first.

        """
        steps = self.config.train.steps if steps is None else steps
        train = self.config.train
        self.run.create()
        if resume and self.run.generator_path.exists():
            self.restore()
            self.run.truncate_history(self.step)
            self.log.info('Resuming from step %d', self.step)
        elif self.run.history_path.exists():
            self.run.history_path.unlink()

        losses, pending = [], []
        bar = tqdm(total=steps, initial=self.step, disable=not progress,
                   desc='train', leave=False)
        try:
            while self.step < steps:
                try:
                    value = self.train_step()
                except NonFiniteError as e:
                    path = self.run.generator_path
                    self.save(path)
                    self._flush(pending)
                    self.log.error('Non-finite value in %s at step %d',
                                   e.op_name, self.step + 1)
                    raise DivergenceError(self.step + 1, str(path))
                losses.append(value)
                pending.append((self.step, value))
                bar.update(1)
                if self.step % train.log_every == 0 or self.step == 1:
                    self.log.info('step %d: loss %.6g (lr %.3g)', self.step,
                                  value, self.lr(self.step))
                if self.step % train.checkpoint_every == 0:
                    self._flush(pending)
                    self.save()
        finally:
            bar.close()
        self._flush(pending)
        self.save()
        return losses

    def _flush(self, pending):
        if pending:
            self.run.write_history(pending, append=True)
            del pending[:]


def train_generator(config, run, data, vaes, resume=True, progress=False,
                    log=log):
    """Stage 2 end to end; returns the trainer holding the trained models."""
    trainer = GeneratorTrainer(config, data, vaes, run, log)
    trainer.fit(resume=resume, progress=progress)
    return trainer
