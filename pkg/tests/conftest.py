import numpy as np
import pytest

from gaitrisk.data import DatasetIndex, split_subjects
from gaitrisk.synthetic import default_class_distribution, generate_dataset


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A 6-subject corpus: enough for data-path tests, too few for PK batches."""
    root = tmp_path_factory.mktemp("corpus6")
    index = generate_dataset(6, default_class_distribution(), 101, root)
    return index


@pytest.fixture(scope="session")
def train_corpus(tmp_path_factory) -> DatasetIndex:
    """A 24-subject corpus split 16/8: the smallest size that admits PK
    batches of 16 subjects."""
    root = tmp_path_factory.mktemp("corpus24")
    index = generate_dataset(24, default_class_distribution(), 202, root)
    return split_subjects(index, 831.0 / 1227.0, 202)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
