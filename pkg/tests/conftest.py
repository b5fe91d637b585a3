"""Shared fixtures: synthetic clips and deterministic RNG."""

import numpy as np
import pytest

from inbetween import synth


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def skeleton():
    return synth.make_skeleton()


@pytest.fixture(scope="session")
def walk_clip():
    return synth.make_walk_clip(n_frames=300)


@pytest.fixture(scope="session")
def static_clip():
    return synth.make_static_clip(n_frames=90)


@pytest.fixture(scope="session")
def turn_clip():
    return synth.make_turn_clip(n_frames=120)


def random_quats(rng, shape):
    q = rng.normal(size=shape + (4,))
    return q / np.linalg.norm(q, axis=-1, keepdims=True)
