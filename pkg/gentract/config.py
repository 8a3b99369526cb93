"""
Logging setup and run configuration.

Run configurations are TOML documents. The packaged `configs/default.toml`
defines every key; a user file overrides keys section by section.
"""
import os
import json
import string
import hashlib
import logging
import logging.config
from io import StringIO
from dataclasses import asdict, dataclass, field, fields
from os.path import dirname, join

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError


CONFIGS_DIR = join(dirname(__file__), 'configs')
DEFAULT_LOGGER = join(CONFIGS_DIR, 'logger.json')
DEFAULT_CONFIG = join(CONFIGS_DIR, 'default.toml')
DEMO_PHANTOM = join(CONFIGS_DIR, 'demo_phantom.json')


def main_logger(output_file='run.log', console_level='info'):
    """Returns logger which sends output to stderr and file."""
    return get_logger('gentract', output_file=output_file,
                      console_level=console_level, file_level='info')


def console_logger():
    """Returns logger which sends output to stderr only."""
    return get_logger('console')


def get_logger(name='gentract',
               output_file='run.log',
               console_level='info',
               file_level='warning',
               config_file=DEFAULT_LOGGER):
    """Configures logger using JSON or YAML configuration file.

    Args:
        name: Logger name.
        output_file: File to save logging messages.
        console_level: Minimal severity level of messages printed to console.
        file_level: Minimal severity level of messages saved into log file.
        config_file: Path to JSON or YAML file with logger configuration.

    Returns:
        log: An instantiated logger object.

    """
    def interpolate_template(content):
        template = string.Template(content)
        try:
            config_string = template.substitute(
                logfile=str(output_file).replace('\\', '/'),
                file_level=file_level.upper(),
                console_level=console_level.upper())

        except (ValueError, TypeError):
            # leave as is
            return content
        else:
            return config_string

    def parse_yaml(string):
        """Parse YAML configuration from string."""

        try:
            import yaml
        except ImportError:
            raise ValueError(
                'cannot initialize logger with YAML config - '
                'yaml package is not installed')
        else:
            return yaml.safe_load(StringIO(string))

    with open(config_file) as fp:
        raw_content = fp.read()
    interpolated = interpolate_template(raw_content)
    if config_file.endswith('.yaml'):
        config_dict = parse_yaml(interpolated)
    elif config_file.endswith('.json'):
        config_dict = json.loads(interpolated)
    else:
        raise ValueError('unsupported configuration')

    if name == 'console':
        config_dict['handlers'].pop('file', None)
        config_dict['loggers'].pop('gentract', None)

    logging.config.dictConfig(config_dict)
    logger = logging.getLogger(name)
    return logger


def get_env_variable(name: str, default=None):
    """Gets environment variable if available.

    Args:
        name: An environment variable name.
        default: A fallback value if variable is not defined.

    """
    value = os.environ.get(name, default)
    if not value:
        return None
    return value


@dataclass(frozen=True)
class DataConfig:
    phantom: str = ''
    l_max: int = 2
    subjects: int = 1
    subject_jitter_mm: float = 2.0
    split: tuple = (0.75, 0.10, 0.15)
    augment_angles: tuple = ()
    augment_axes: tuple = ('x', 'y', 'z')
    downsample_mm: float = 3.0
    corrupt_sigma: float = 0.005


@dataclass(frozen=True)
class EncoderConfig:
    c_z: int = 4
    c_c: int = 8
    hidden: int = 8
    beta: float = 1e-3
    lr: float = 1e-2
    steps: int = 200
    batch: int = 4


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 4
    width: int = 64
    heads: int = 4
    points: int = 32


@dataclass(frozen=True)
class ObjectiveConfig:
    kind: str = 'diffusion'
    timesteps: int = 1000
    schedule: str = 'cosine'


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    lr_schedule: str = 'constant'
    lr_drop: float = 0.5
    lr_steps_before_drop: int = 1000
    batch: int = 16
    steps: int = 2000
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 500


@dataclass(frozen=True)
class SampleConfig:
    steps: int = 10
    count: int = 500
    batch_size: int = 100
    seed: int = 0


@dataclass(frozen=True)
class EvalConfig:
    tau_voxels: float = 2.0
    endpoint_voxels: float = 1.5
    min_bundle_tp: int = 20
    record_timing: bool = True


SECTIONS = {
    'data': DataConfig,
    'encoder': EncoderConfig,
    'model': ModelConfig,
    'objective': ObjectiveConfig,
    'train': TrainConfig,
    'sample': SampleConfig,
    'eval': EvalConfig,
}


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    run_dir: str = 'runs/default'

    def to_dict(self):
        return _plain(asdict(self))

    @property
    def hash(self):
        """Hash of every setting except the output location."""
        document = self.to_dict()
        document.pop('run_dir')
        return config_hash(document)

    @property
    def training_hash(self):
        """Hash of the keys that shape trained weights.

        Sampling and evaluation sections are left out, as are the step
        budget, logging cadence and the evaluation-time degradation levels,
        so a run can be extended or resampled without invalidating its
        checkpoints.
        """
        document = self.to_dict()
        for section in ('sample', 'eval', 'run_dir'):
            document.pop(section)
        for key in ('steps', 'log_every', 'checkpoint_every'):
            document['train'].pop(key)
        for key in ('downsample_mm', 'corrupt_sigma'):
            document['data'].pop(key)
        return config_hash(document)

    def replace(self, **sections):
        """Copy with some sections (or top-level keys) overridden by
        mappings or values.
        """
        document = self.to_dict()
        for key, value in sections.items():
            if isinstance(value, dict):
                document[key].update(value)
            else:
                document[key] = value
        return build_config(document)


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def config_hash(document):
    """SHA-256 of the canonical JSON form of a configuration document."""
    canonical = json.dumps(_plain(document), sort_keys=True,
                           separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def _coerce(section, cls, values):
    known = {f.name: f for f in fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError('unknown keys in [%s]: %s' %
                          (section, ', '.join(sorted(unknown))))
    kwargs = {}
    for name, value in values.items():
        default = known[name].default
        if isinstance(default, tuple):
            value = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError('[%s] %s should be a boolean' %
                                  (section, name))
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError('[%s] %s should be an integer' %
                                  (section, name))
        elif isinstance(default, float):
            if isinstance(value, bool) or \
                    not isinstance(value, (int, float)):
                raise ConfigError('[%s] %s should be a number' %
                                  (section, name))
            value = float(value)
        kwargs[name] = value
    return cls(**kwargs)


def validate(config):
    if config.objective.kind not in ('diffusion', 'flow_matching'):
        raise ConfigError('[objective] kind should be "diffusion" or '
                          '"flow_matching", got %r' % config.objective.kind)
    if config.objective.schedule not in ('cosine', 'linear'):
        raise ConfigError('[objective] schedule should be "cosine" or '
                          '"linear"')
    if config.model.width % config.model.heads:
        raise ConfigError('[model] width should be divisible by heads')
    if config.model.points < 2:
        raise ConfigError('[model] points should be at least 2')
    if config.train.lr_schedule not in ('constant', 'step', 'exponential'):
        raise ConfigError('[train] lr_schedule should be constant, step or '
                          'exponential')
    if config.data.phantom and not os.path.exists(config.data.phantom):
        raise ConfigError('phantom spec is missing: %s' % config.data.phantom)
    for axis in config.data.augment_axes:
        if axis not in ('x', 'y', 'z'):
            raise ConfigError('[data] augment_axes accepts x, y and z only')
    if config.eval.tau_voxels <= 0:
        raise ConfigError('[eval] tau_voxels should be positive')
    if config.sample.steps < 1 or config.sample.count < 1 or \
            config.sample.batch_size < 1:
        raise ConfigError('[sample] steps, count and batch_size should be '
                          'positive')
    return config


def build_config(document):
    """Validated RunConfig from a plain (merged) document."""
    document = dict(document)
    sections = {}
    for name, cls in SECTIONS.items():
        values = document.pop(name, {})
        if not isinstance(values, dict):
            raise ConfigError('[%s] should be a table' % name)
        sections[name] = _coerce(name, cls, values)
    top = {}
    for key in ('seed', 'run_dir'):
        if key in document:
            top[key] = document.pop(key)
    if document:
        raise ConfigError('unknown configuration keys: %s' %
                          ', '.join(sorted(document)))
    return validate(RunConfig(**sections, **top))


def read_toml(path):
    try:
        with open(path, 'rb') as fp:
            return tomllib.load(fp)
    except FileNotFoundError:
        raise ConfigError('configuration file is missing: %s' % path)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError('cannot parse %s: %s' % (path, e))


def load_config(path=None, defaults=DEFAULT_CONFIG):
    """Reads packaged defaults and overlays the user's file, if any."""
    document = read_toml(defaults)
    if path is not None:
        for key, value in read_toml(path).items():
            if isinstance(value, dict):
                document.setdefault(key, {}).update(value)
            else:
                document[key] = value
    return build_config(document)
