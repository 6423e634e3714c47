from pathlib import Path

import numpy as np
import pytest

from dynkingame import model as m
from dynkingame.chain import TimeStateGrid

DATA = Path(__file__).resolve().parents[1] / "src" / "dynkingame" / "data"


def simple_spec(h1=0.0, h2=2.0, g=1.0, driver=None, sigma=0.3, b=0.0, jumps=None, controls=(0.0,), T=1.0,
                jump_coef=0.2):
    """Constant-barrier instance; barriers may be None to omit them."""
    wrap = lambda v: v if isinstance(v, m.XFunction) else m.constant(v)  # noqa: E731
    return m.ProblemSpec(
        coefficients=m.CoefficientSet(drift=m.CoefFamily(c0=b), vol=m.CoefFamily(c0=sigma),
                                      jump=m.CoefFamily(c0=jump_coef)),
        jumps=jumps or m.JumpMeasure(),
        driver=driver or m.DriverSpec(),
        h1=m.Barrier(None if h1 is None else wrap(h1), side=-1.0),
        h2=m.Barrier(None if h2 is None else wrap(h2), side=1.0),
        g=wrap(g),
        controls=tuple(controls),
        T=T,
    )


@pytest.fixture(scope="session")
def mixed_spec():
    return m.load_spec(DATA / "mixed.json")


@pytest.fixture(scope="session")
def mixed_grid():
    return TimeStateGrid(48, 61, -4.0, 4.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
