"""Kernel selection: compiled extension when available, numpy otherwise.

Set ``ETHRELAX_PURE=1`` in the environment to force the numpy fallback.
"""
import os

BACKEND = "python"

if os.environ.get("ETHRELAX_PURE", "") not in ("1", "true", "yes"):
    try:
        from ._kernels import apply_xxz, diagonal_from_bonds  # noqa: F401

        BACKEND = "cython"
    except ImportError:  # extension not built
        pass

if BACKEND == "python":
    from ._kernels_py import apply_xxz, diagonal_from_bonds  # noqa: F401

__all__ = ["BACKEND", "apply_xxz", "diagonal_from_bonds"]
