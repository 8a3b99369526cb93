import os
import errno
import shutil
import fnmatch
from pathlib import Path
from itertools import chain

import numpy as np
import pytest

from gentract.config import load_config
from gentract.files import RunFolder
from gentract.phantom import BundleSpec, PhantomSpec, make_phantom
from gentract.training import (
    GeneratorTrainer, build_training_data, make_subjects, run_vae_stage)


PROJECT_ROOT = Path(__file__).parents[1]
TESTS_OUTPUT = PROJECT_ROOT / 'tests_output'
TESTS_FOLDER = PROJECT_ROOT / 'tests'


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False,
                     help='run end-to-end acceptance tests')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long end-to-end run')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope='session', autouse=True)
def setup_result_folders(request):
    """Gathers all files and reports created during tests run."""

    def mkdir_p(path):
        try:
            os.makedirs(path)
        except OSError as exc:
            if exc.errno == errno.EEXIST and os.path.isdir(path):
                pass
            else:
                raise

    def gather_results():
        exts = 'txt', 'log', 'json', 'csv', 'svg'
        tests_output = TESTS_OUTPUT.as_posix()
        tests_folder = TESTS_FOLDER.as_posix()

        if os.path.exists(tests_output):
            shutil.rmtree(tests_output)

        for root, dirname, files in os.walk(tests_folder):
            for result in chain(
                    *[fnmatch.filter(files, '*.' + ext) for ext in exts]):
                src_path = os.path.abspath(os.path.join(root, result))
                relative_path = src_path.replace(tests_folder, "").strip('/')
                dst_path = os.path.join(tests_output, relative_path)
                new_folder = os.path.dirname(dst_path)
                if not os.path.exists(new_folder):
                    mkdir_p(new_folder)
                shutil.move(src_path, dst_path)

    request.addfinalizer(gather_results)


def build_small_spec(seed=0, count=24, points=16):
    """Two perpendicular straight bundles in a 16^3 grid of 2 mm voxels."""
    return PhantomSpec(
        bundles=[
            BundleSpec('along_x', [[4.0, 15.0, 15.0], [26.0, 15.0, 15.0]],
                       radius=2.0, count=count, points=points),
            BundleSpec('along_y', [[15.0, 4.0, 12.0], [15.0, 26.0, 12.0]],
                       radius=2.0, count=count, points=points)],
        extents=(16, 16, 16), voxel_size=2.0, l_max=2, seed=seed)


@pytest.fixture(scope='session')
def small_spec():
    return build_small_spec


@pytest.fixture(scope='session')
def small_phantom():
    return make_phantom(build_small_spec())


@pytest.fixture(scope='session')
def small_spec_path(tmp_path_factory):
    path = tmp_path_factory.mktemp('specs') / 'small.json'
    build_small_spec().save(path)
    return str(path)


@pytest.fixture
def tiny_config(small_spec_path, tmp_path):
    """Configuration small enough for a full pipeline in seconds."""
    return load_config().replace(
        data={'phantom': small_spec_path},
        encoder={'steps': 3, 'batch': 1, 'hidden': 4},
        model={'layers': 1, 'width': 16, 'heads': 2, 'points': 16},
        objective={'timesteps': 50},
        train={'steps': 4, 'batch': 8, 'log_every': 2,
               'checkpoint_every': 2},
        sample={'count': 6, 'batch_size': 4, 'steps': 3},
        run_dir=str(tmp_path / 'run'))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def stage_one(tiny_config):
    """Training data, run folder and trained VAEs of the tiny config."""
    subjects = make_subjects(tiny_config)
    data = build_training_data(tiny_config, subjects)
    run = RunFolder(tiny_config.run_dir)
    vaes = run_vae_stage(tiny_config, run, data)
    return data, run, vaes


@pytest.fixture
def trained_run(tiny_config, stage_one):
    data, run, vaes = stage_one
    trainer = GeneratorTrainer(tiny_config, data, vaes, run)
    trainer.fit()
    return trainer
