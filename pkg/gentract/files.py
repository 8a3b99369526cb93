"""
Run folder layout and training history files.
"""
import csv
import logging
from pathlib import Path

from .errors import ConfigError


class RunFolder:
    """Paths of every artifact a run produces, rooted at one directory.

    Attributes:
        root: Run directory.
        vae_path: Stage-1 VAE checkpoint.
        generator_path: Generator + refiner checkpoint (resumable).
        stats_path: ScalingStats JSON.
        history_path: Generator loss curve (step, loss).
        vae_history_path: Per-coefficient VAE loss curves.
        log_path: Run log file.
        config_path: Resolved run configuration (canonical JSON).
        split_path: Subject names per train/valid/test split.
        log: Logger instance.

    """
    def __init__(self, root, log=None):
        self.root = Path(root)
        self.vae_path = self.root / 'vae.ckpt'
        self.generator_path = self.root / 'generator.ckpt'
        self.stats_path = self.root / 'stats.json'
        self.history_path = self.root / 'loss.csv'
        self.vae_history_path = self.root / 'vae_loss.csv'
        self.log_path = self.root / 'run.log'
        self.config_path = self.root / 'config.json'
        self.split_path = self.root / 'split.json'
        self.log = log or logging.getLogger('gentract.files')

    def create(self):
        if not self.root.exists():
            self.root.mkdir(parents=True)
            self.log.info('Run folder is created: %s', self.root)
        return self.root

    def require(self, path):
        """Returns `path` or raises ConfigError naming it when missing."""
        path = Path(path)
        if not path.exists():
            raise ConfigError('required artifact is missing: %s' % path)
        return path

    def subject_dir(self, name):
        return self.root / 'subjects' / name

    def generated_path(self, tag):
        return self.root / ('generated_%s.trk' % tag)

    def load_history(self, path=None):
        """Reads a loss CSV into a list of dicts with numeric values."""
        path = Path(path or self.history_path)
        history = []
        with open(path, newline='') as fp:
            reader = csv.reader(fp)
            header = next(reader)
            for row in reader:
                record = {}
                for key, value in zip(header, row):
                    record[key] = int(value) if key == 'step' else float(value)
                history.append(record)
        return history

    def write_history(self, rows, header=('step', 'loss'), path=None,
                      append=False):
        """Writes (step, value...) rows with 17 significant digits."""
        path = Path(path or self.history_path)
        exists = path.exists() and append
        with open(path, 'a' if exists else 'w', newline='') as fp:
            writer = csv.writer(fp, lineterminator='\n')
            if not exists:
                writer.writerow(header)
            for row in rows:
                writer.writerow([row[0]] + ['%.17g' % v for v in row[1:]])

    def truncate_history(self, last_step, path=None):
        """Drops history rows recorded after `last_step`."""
        path = Path(path or self.history_path)
        if not path.exists():
            return
        kept = [(r['step'], r['loss']) for r in self.load_history(path)
                if r['step'] <= last_step]
        self.write_history(kept, path=path)
