"""Kernel backend selection.

The compiled extension is preferred; the pure-Python fallback keeps a
source checkout usable without a build step. `BACKEND` records which one
was picked so tests and benchmarks can report it.
"""

try:
    from lifesim.kernels import _native as _impl

    BACKEND = "native"
except ImportError:  # no compiled extension present
    from lifesim.kernels import pyfallback as _impl

    BACKEND = "fallback"

lcs_length = _impl.lcs_length
scaled_scores = _impl.scaled_scores
fuse_rows = _impl.fuse_rows

__all__ = ["BACKEND", "lcs_length", "scaled_scores", "fuse_rows"]
