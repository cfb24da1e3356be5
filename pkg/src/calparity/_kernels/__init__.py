"""Hot inner loops with a compiled backend and a numpy fallback.

The Cython extension ``_core`` is used when it imports; otherwise the
functions come from ``_pure``. Set ``CALPARITY_PURE=1`` to force the fallback.
"""
from __future__ import annotations

import contextlib
import importlib
import os

from . import _pure


def _load_core():
    if os.environ.get("CALPARITY_PURE"):
        return None
    try:
        return importlib.import_module(f"{__name__}._core")
    except ImportError:
        return None


_core = _load_core()

_impl = _core if _core is not None else _pure
BACKEND = "cython" if _core is not None else "numpy"

build_histogram = _impl.build_histogram
pava = _impl.pava
mmce_sorted_sum = _impl.mmce_sorted_sum
largest_monotone_bins = _impl.largest_monotone_bins
predict_tree = _impl.predict_tree


def backends() -> dict:
    """Available implementations keyed by name, for tests and benchmarks."""
    out = {"numpy": _pure}
    if _core is not None:
        out["cython"] = _core
    return out


_NAMES = ("build_histogram", "pava", "mmce_sorted_sum", "largest_monotone_bins", "predict_tree")


@contextlib.contextmanager
def use_backend(name: str):
    """Temporarily route every kernel call through the named backend."""
    impl = backends()[name]
    g = globals()
    saved = {k: g[k] for k in _NAMES + ("BACKEND",)}
    g.update({k: getattr(impl, k) for k in _NAMES})
    g["BACKEND"] = name
    try:
        yield impl
    finally:
        g.update(saved)


__all__ = [
    "BACKEND",
    "backends",
    "use_backend",
    "build_histogram",
    "largest_monotone_bins",
    "mmce_sorted_sum",
    "pava",
    "predict_tree",
]
