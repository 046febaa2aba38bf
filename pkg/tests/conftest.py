"""Shared fixtures and independent oracle helpers."""

import numpy as np
import pytest

from supportgen.world import AgentPose, Heading, ObjectSpec, Position, WorldState


@pytest.fixture
def s0() -> WorldState:
    """Canonical 6x6 fixture: agent (2,2) facing east; red circle size 2 at
    (4,2); blue square size 1 at (0,0); green circle size 4 at (2,5)."""
    return WorldState(
        grid_size=6,
        agent=AgentPose(Position(2, 2), Heading.EAST),
        objects=(
            ObjectSpec("circle", "red", 2, Position(4, 2)),
            ObjectSpec("square", "blue", 1, Position(0, 0)),
            ObjectSpec("circle", "green", 4, Position(2, 5)),
        ),
    )


def random_state(rng: np.random.Generator, grid_size: int = 6,
                 max_objects: int = 8) -> WorldState:
    from supportgen.world import new_random_state

    count = int(rng.integers(1, max_objects + 1))
    return new_random_state(rng, grid_size, count)


def zeta_sample(alpha: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Rejection sampler for the zeta (discrete power-law) distribution,
    independent of the estimator under test."""
    out = np.empty(n, dtype=np.int64)
    b = 2.0 ** (alpha - 1.0)
    filled = 0
    while filled < n:
        m = (n - filled) * 2 + 16
        u1 = rng.random(m)
        u2 = rng.random(m)
        x = np.floor(u1 ** (-1.0 / (alpha - 1.0)))
        ok = x < 1e17
        xo = x[ok]
        t = (1.0 + 1.0 / xo) ** (alpha - 1.0)
        accept = u2[ok] * xo * (t - 1.0) / (b - 1.0) <= t / b
        vals = xo[accept].astype(np.int64)
        take = min(len(vals), n - filled)
        out[filled:filled + take] = vals[:take]
        filled += take
    return out
