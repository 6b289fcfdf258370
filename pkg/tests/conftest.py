import numpy as np
import pytest

from adapterbot import corpus
from adapterbot.trainer import build_system, save_system


@pytest.fixture(scope="session")
def built_system():
    """The full reference system (pretrained backbone + 6 adapters +
    managers + style classifiers). Built once per test session; several
    minutes of CPU."""
    return build_system()


@pytest.fixture(scope="session")
def artifacts_dir(built_system, tmp_path_factory):
    out = tmp_path_factory.mktemp("artifacts")
    save_system(built_system, str(out))
    corpus.make_serve_artifacts(str(out))
    return str(out)


@pytest.fixture(scope="session")
def mini_datasets():
    # 40 dialogues/skill: enough rows for sanity training, seconds not minutes
    return corpus.synth_suite(corpus.load_suite_def(), n_dialogues=40)


@pytest.fixture(scope="session")
def suite_tokenizer():
    return corpus.build_tokenizer()


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
