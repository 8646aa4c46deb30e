import math

import numpy as np
import pytest

from boxlab import Box3D


def random_box(rng: np.random.Generator, span: float = 10.0) -> Box3D:
    return Box3D(
        cx=rng.uniform(-span, span),
        cy=rng.uniform(-span, span),
        cz=rng.uniform(-2.0, 2.0),
        l=rng.uniform(0.5, 6.0),
        w=rng.uniform(0.5, 4.0),
        h=rng.uniform(0.5, 3.0),
        yaw=rng.uniform(-math.pi, math.pi),
    )


def overlapping_box_pair(rng: np.random.Generator) -> tuple[Box3D, Box3D]:
    """A pair that usually overlaps: the second box is a jitter of the first."""
    a = random_box(rng)
    b = Box3D(
        cx=a.cx + rng.uniform(-a.l, a.l) * 0.5,
        cy=a.cy + rng.uniform(-a.w, a.w) * 0.5,
        cz=a.cz + rng.uniform(-a.h, a.h) * 0.5,
        l=a.l * rng.uniform(0.7, 1.4),
        w=a.w * rng.uniform(0.7, 1.4),
        h=a.h * rng.uniform(0.7, 1.4),
        yaw=a.yaw + rng.uniform(-0.8, 0.8),
    )
    return a, b


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
