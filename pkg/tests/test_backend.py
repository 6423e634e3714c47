import numpy as np
import pytest

from dynkingame import _backend
from dynkingame.chain import build_chain
from dynkingame.game import mixed_value
from dynkingame.pde import hjbvi_penalty_solve, hjbvi_project_solve

needs_compiled = pytest.mark.skipif("compiled" not in _backend.available(), reason="extension not built")


@pytest.fixture
def restore_backend():
    prev = _backend.name()
    yield
    _backend.use(prev)


def solve_all(spec, grid, threads=1, implicit=False):
    ch = build_chain(spec, grid)
    return (
        mixed_value(ch, spec, threads=threads, implicit=implicit).solution,
        hjbvi_project_solve(spec, grid, threads=threads).u,
        hjbvi_penalty_solve(spec, grid, 40.0, threads=threads).u,
    )


@needs_compiled
@pytest.mark.parametrize("implicit", [False, True])
def test_backends_agree(mixed_spec, mixed_grid, restore_backend, implicit):
    _backend.use("compiled")
    a = solve_all(mixed_spec, mixed_grid, implicit=implicit)
    _backend.use("python")
    b = solve_all(mixed_spec, mixed_grid, implicit=implicit)
    for f in ("Y", "Z", "K", "A1_inc", "A2_inc", "control"):
        assert np.allclose(getattr(a[0], f), getattr(b[0], f), rtol=0, atol=1e-13), f
    assert np.max(np.abs(a[1] - b[1])) < 1e-13
    assert np.max(np.abs(a[2] - b[2])) < 1e-13


@pytest.mark.parametrize("backend", ["python", pytest.param("compiled", marks=needs_compiled)])
def test_thread_count_does_not_change_results(mixed_spec, mixed_grid, restore_backend, backend):
    _backend.use(backend)
    a = solve_all(mixed_spec, mixed_grid, threads=1)
    b = solve_all(mixed_spec, mixed_grid, threads=4)
    assert np.array_equal(a[0].Y, b[0].Y) and np.array_equal(a[0].Z, b[0].Z)
    assert np.array_equal(a[1], b[1]) and np.array_equal(a[2], b[2])


def test_use_rejects_unknown(restore_backend):
    with pytest.raises(ValueError):
        _backend.use("fortran")
    assert _backend.use("python") in ("python", "compiled")
    assert _backend.name() == "python"
