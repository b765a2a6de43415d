import numpy as np
import pytest

from rxncond.conditions import build_dictionary
from support import CORPUS_ROLES, structural_rule_corpus


@pytest.fixture(scope="session")
def small_corpus():
    """54 structural-rule reactions with their dictionary (full coverage)."""
    records = structural_rule_corpus(54)
    dictionary, _ = build_dictionary(records, CORPUS_ROLES, coverage=1.0)
    return records, dictionary


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.PCG64(20240811))
