"""
Whole-tractogram generation from a trained run.

The conditioning tokens of a volume are computed and projected once; the
requested streamlines are then split into batches handled by worker
threads. Every streamline draws its starting noise from its own generator
seeded with `[seed, index]` and is integrated on its own, so the collated
output is bit-identical for any batch size or worker count.
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .generator import StreamlineTransformer
from .ndiff import load_checkpoint
from .ndiff.checkpoint import file_digest
from .encoder import ConditioningEncoder, Refiner
from .objectives import NoiseSchedule
from .preprocessing import (
    ScalingStats, minmax_unscale, out_of_bounds, zscore_volume)
from .samplers import sample
from .streamlines import Tractogram
from .training import load_vaes
from .utils import Timer, derive_rng, worker_count


log = logging.getLogger('gentract.inference')


@dataclass
class Generation:
    """Generated tractogram with per-streamline out-of-bounds flags."""

    tractogram: Tractogram
    flags: np.ndarray
    wall_clock_s: float
    steps: int
    seed: int

    def sidecar(self, config_hash):
        return {'config_hash': config_hash,
                'steps': self.steps,
                'count': len(self.tractogram),
                'seed': self.seed,
                'wall_clock_s': self.wall_clock_s,
                'out_of_bounds': np.flatnonzero(self.flags).tolist()}


class TrainedModel:
    """Immutable bundle of everything sampling needs."""

    def __init__(self, model, encoder, stats, schedule=None):
        self.model = model
        self.encoder = encoder
        self.stats = stats
        self.schedule = schedule
        self.model.freeze()
        self.encoder.refiner.freeze()

    @property
    def objective(self):
        return self.model.objective

    @staticmethod
    def from_trainer(trainer):
        return TrainedModel(trainer.model, trainer.encoder,
                            trainer.data.stats, trainer.schedule)

    @staticmethod
    def load(run, config=None):
        """Restores a run's generator checkpoint.

        Raises:
            ConfigError: An artifact is missing or the checkpoint, VAEs and
                stats do not belong together.

        """
        stats_path = run.require(run.stats_path)
        arrays, metadata = load_checkpoint(run.require(run.generator_path))
        stats = ScalingStats.load(stats_path)
        if metadata['stats_digest'] != stats.digest():
            raise ConfigError('%s and %s do not belong to the same run' %
                              (run.generator_path, stats_path))
        if metadata['vae_digest'] != file_digest(run.require(run.vae_path)):
            raise ConfigError('%s was trained on a different VAE checkpoint'
                              % run.generator_path)
        if config is not None and \
                metadata['config_hash'] != config.training_hash:
            raise ConfigError('%s was trained with a different '
                              'configuration' % run.generator_path)
        hyper = metadata['hyperparameters']
        model = StreamlineTransformer(**hyper)
        refiner = Refiner(**metadata['refiner'])
        model.load_arrays(_strip(arrays, 'generator.'))
        refiner.load_arrays(_strip(arrays, 'refiner.'))
        encoder = ConditioningEncoder(load_vaes(run, stats), refiner)
        schedule = None
        if hyper['objective'] == 'diffusion':
            schedule = NoiseSchedule.create(
                metadata.get('schedule', 'cosine'), hyper['timesteps'])
        return TrainedModel(model, encoder, stats, schedule)

    def context(self, volume):
        """Projected conditioning tokens (1, tokens, n) of a raw volume."""
        tokens = self.encoder.encode(zscore_volume(volume, self.stats))
        return self.model.project_context(tokens)


def _strip(arrays, prefix):
    return {name[len(prefix):]: value for name, value in arrays.items()
            if name.startswith(prefix)}


def streamline_noise(seed, indices, points):
    return np.stack([derive_rng(seed, i).standard_normal((points, 3))
                     for i in indices])


def generate_tractogram(trained, volume, count, batch_size=100, steps=10,
                        seed=0, record_timing=True, log=log):
    """Samples `count` streamlines conditioned on `volume`.

    Args:
        trained: TrainedModel.
        volume: Raw (not normalized) SHVolume.
        count: Number of streamlines.
        batch_size: Streamlines per worker job.
        steps: DDIM or Euler steps.
        seed: Master seed; streamline i starts from noise seeded [seed, i].
        record_timing: If False, the reported wall clock is zero so that
            repeated runs serialize identically.

    Returns:
        Generation with world-space streamlines of exactly p points.

    """
    if count < 1:
        raise ValueError('count should be positive, got %d' % count)
    if batch_size < 1:
        raise ValueError('batch size should be positive, got %d' %
                         batch_size)
    model = trained.model
    batches = [np.arange(start, min(start + batch_size, count))
               for start in range(0, count, batch_size)]

    def job(indices):
        # streamlines are integrated alone, independent of batch shape
        noise = streamline_noise(seed, indices, model.points)
        return np.concatenate([
            sample(trained.objective, model.forward, context, x[None],
                   steps, trained.schedule) for x in noise])

    with Timer() as timer:
        context = trained.context(volume)
        with ThreadPoolExecutor(max_workers=worker_count(len(batches))) \
                as pool:
            scaled = np.concatenate(list(pool.map(job, batches)))
    flags = out_of_bounds(scaled)
    streamlines = list(minmax_unscale(scaled, trained.stats))
    elapsed = timer.elapsed if record_timing else 0.0
    log.info('Generated %d streamlines in %.3f s (%d steps, %d flagged)',
             count, timer.elapsed, steps, int(flags.sum()))
    return Generation(Tractogram.like(volume, streamlines), flags, elapsed,
                      steps, seed)


def sidecar_path(trk_path):
    return Path(str(trk_path) + '.json')


def write_sidecar(trk_path, generation, config_hash):
    with open(sidecar_path(trk_path), 'w') as fp:
        json.dump(generation.sidecar(config_hash), fp, sort_keys=True,
                  indent=2)


def read_sidecar(trk_path):
    """Timing sidecar of a generated TRK, or None when absent."""
    path = sidecar_path(trk_path)
    if not path.exists():
        return None
    with open(path) as fp:
        return json.load(fp)
