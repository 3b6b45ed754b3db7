"""Backend selection for the compiled kernels.

Numba is used when it imports cleanly and ``DTADJUST_DISABLE_NUMBA`` is unset
(or set to ``0``).  Otherwise the kernels run through their vectorized numpy
twins in :mod:`dtadjust.kernels`.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

try:
    import numba
    from numba import njit, prange

    NUMBA_AVAILABLE = True
    # TBB on some images is too old and warns on every import
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func

        return decorator

    def prange(*args):
        return range(*args)


def _env_disabled() -> bool:
    flag = os.environ.get("DTADJUST_DISABLE_NUMBA", "").strip().lower()
    return flag not in ("", "0", "false", "no")


_use_numba = NUMBA_AVAILABLE and not _env_disabled()


def use_numba() -> bool:
    return _use_numba


def set_backend(name: str) -> None:
    """Switch between ``"numba"`` and ``"numpy"`` kernels for this process."""
    global _use_numba
    if name == "numba":
        if not NUMBA_AVAILABLE:
            raise RuntimeError("numba backend requested but numba is not installed")
        _use_numba = True
    elif name == "numpy":
        _use_numba = False
    else:
        raise ValueError(f"unknown backend {name!r}; expected 'numba' or 'numpy'")


def backend() -> str:
    return "numba" if _use_numba else "numpy"


@contextmanager
def backend_as(name: str):
    prev = backend()
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def max_threads() -> int:
    if NUMBA_AVAILABLE:
        return int(numba.config.NUMBA_NUM_THREADS)
    return 1


def resolve_threads(threads: int | None) -> int:
    """Thread count from the argument, then ``DTE_THREADS``, then 1."""
    if threads is None:
        env = os.environ.get("DTE_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


@contextmanager
def numba_threads(threads: int | None):
    """Temporarily cap numba's worker pool; a no-op on the numpy backend."""
    if not (_use_numba and NUMBA_AVAILABLE) or threads is None:
        yield
        return
    prev = numba.get_num_threads()
    numba.set_num_threads(max(1, min(threads, max_threads())))
    try:
        yield
    finally:
        numba.set_num_threads(prev)
