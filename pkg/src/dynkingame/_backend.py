"""Kernel selection: the compiled extension when it imports, numpy otherwise."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_active = _compiled if _compiled is not None else _fallback


def name() -> str:
    return "compiled" if _active is _compiled else "python"


def available() -> list[str]:
    return ["compiled", "python"] if _compiled is not None else ["python"]


def use(backend: str) -> str:
    """Switch kernels; returns the previous backend name."""
    global _active
    prev = name()
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        _active = _compiled
    elif backend == "python":
        _active = _fallback
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return prev


def _chunks(M: int, threads: int):
    n = max(1, min(threads, M))
    edges = [M * k // n for k in range(n + 1)]
    return list(zip(edges[:-1], edges[1:]))


def run(kernel: str, args: tuple, M: int, threads: int = 1) -> list[int]:
    """Call ``kernel(*args, i0, i1)`` over state chunks.

    Nodes are independent, so the split never changes the result. The numpy
    fallback holds the GIL and always runs as a single chunk.
    """
    fn = getattr(_active, kernel)
    if threads <= 1 or _active is _fallback:
        return [fn(*args, 0, M)]
    parts = _chunks(M, threads)
    with ThreadPoolExecutor(len(parts)) as ex:
        return list(ex.map(lambda p: fn(*args, p[0], p[1]), parts))
