__version__ = '0.1.0'

from .config import console_logger, main_logger  # NOQA
from .phantom import make_phantom, demo_phantom_spec  # NOQA
from .streamlines import Tractogram  # NOQA
from .volume import SHVolume  # NOQA
