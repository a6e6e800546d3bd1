import pytest

from thermovqa.synth import DEFAULT_COUNTS, generate_dataset, write_dataset

from utils import DATA_SEED


@pytest.fixture(scope='session')
def default_scenes():
    """
    The default 60-scene dataset.
    """
    return generate_dataset(DATA_SEED, DEFAULT_COUNTS)


@pytest.fixture(scope='session')
def default_manifest(default_scenes, tmp_path_factory):
    out_dir = tmp_path_factory.mktemp('dataset')
    return write_dataset(default_scenes, out_dir)
