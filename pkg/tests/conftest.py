import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from chsd.discretization import Operators, make_discretization
from chsd.mesh import Rect, build_karstic_mesh
from chsd.params import PhysicalParams

STACKED = (Rect(0, 1, -1, 0), Rect(0, 1, 0, 1))
CHANNEL = (Rect(0, 1, 0, 1), Rect(1, 2, 0, 1))
WIDE = (Rect(0, 2, -1, 0), Rect(0, 2, 0, 1))


def stacked_mesh(n):
    return build_karstic_mesh(*STACKED, n)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["stacked", "channel", "wide"])
def tiny_mesh(request):
    """Meshes with at most eight triangles."""
    geom = {"stacked": STACKED, "channel": CHANNEL, "wide": WIDE}[request.param]
    return build_karstic_mesh(*geom, 1)


@pytest.fixture
def tiny_disc(tiny_mesh):
    return make_discretization(tiny_mesh)


@pytest.fixture
def unit_ops():
    disc = make_discretization(stacked_mesh(2))
    return Operators(disc, PhysicalParams())
