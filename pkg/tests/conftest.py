import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from jaanet.landmarks import CANONICAL_TEMPLATE, LandmarkSet


def random_landmarks(rng, frame=176.0):
    """A valid random landmark set: jittered, scaled, shifted template."""
    scale = rng.uniform(0.6, 1.0) * frame / 200.0
    shift = rng.uniform(-10.0, 10.0, size=2) + (frame - 200.0 * scale) / 2.0
    pts = CANONICAL_TEMPLATE * scale + shift
    pts = pts + rng.normal(0.0, 1.0, size=pts.shape)
    return LandmarkSet(pts).validate()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def template_landmarks():
    return LandmarkSet(CANONICAL_TEMPLATE.copy())
