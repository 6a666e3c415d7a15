import pytest

from tabxcheck.corpus import GenConfig, generate_corpus


@pytest.fixture(scope="session")
def small_corpus():
    """Four documents with planted inconsistencies; shared by fast tests."""
    return generate_corpus(GenConfig(n_docs=4, inconsistency_rate=0.5, rng_seed=7))


@pytest.fixture(scope="session")
def default_corpus():
    """The default 50-document corpus used by the acceptance suite."""
    return generate_corpus(GenConfig(rng_seed=0))
