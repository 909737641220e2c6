"""Shared fixtures for the tomogravity test suite"""

from pathlib import Path

import numpy as np
import pytest

from helpers import STAR_TRUTH
from network_model import LinkLoads, SdIndex, TrafficVector, forward
from synthetic_traffic import abilene_like_topology, random_topology, star_topology

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture
def star():
    return star_topology()


@pytest.fixture
def star_truth(star) -> TrafficVector:
    return TrafficVector(STAR_TRUTH, star.index)


@pytest.fixture
def star_loads(star, star_truth) -> LinkLoads:
    return forward(star.routing, star_truth)


@pytest.fixture(scope="session")
def abilene():
    return abilene_like_topology()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def small_backbone():
    """Four-PoP random backbone with self links"""
    return random_topology(4, np.random.default_rng(7))


@pytest.fixture
def pair_index() -> SdIndex:
    return SdIndex(("a", "b"), ("a", "b"))
