import numpy as np
import pytest

from ethrelax import _kernels_py
from ethrelax.kernels import BACKEND
from ethrelax.model import ModelSpec, build_model

compiled = pytest.importorskip("ethrelax._kernels")


def _setup(k, seed=0):
    m = build_model(ModelSpec("two_contact", 3, W=0.8, disorder_seed=1))
    op = m.H
    rng = np.random.default_rng(seed)
    x = np.ascontiguousarray(rng.standard_normal((m.dim, k)) + 1j * rng.standard_normal((m.dim, k)))
    y = np.ascontiguousarray(rng.standard_normal((m.dim, k)) + 1j * rng.standard_normal((m.dim, k)))
    return op, x, y


@pytest.mark.parametrize("k", [1, 2, 5])
def test_compiled_matches_fallback(k):
    op, x, y = _setup(k)
    args = dict(c_op=0.3 - 1.1j, c_x=-0.25 + 0.5j, y=y, c_y=-1.0 + 0.2j)
    a = compiled.apply_xxz(op.diag, op.masks, op.amps, x, np.empty_like(x), **args)
    b = _kernels_py.apply_xxz(op.diag, op.masks, op.amps, x, np.empty_like(x), **args)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)


def test_compiled_plain_product():
    op, x, _ = _setup(1)
    a = compiled.apply_xxz(op.diag, op.masks, op.amps, x, np.empty_like(x))
    b = _kernels_py.apply_xxz(op.diag, op.masks, op.amps, x, np.empty_like(x))
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)


def test_diagonal_matches_fallback():
    rng = np.random.default_rng(3)
    n = 7
    za = np.array([0, 1, 2, 5], dtype=np.int64)
    zb = np.array([1, 2, 6, 6], dtype=np.int64)
    amp = rng.standard_normal(4)
    h = rng.standard_normal(n)
    np.testing.assert_allclose(compiled.diagonal_from_bonds(n, za, zb, amp, h),
                               _kernels_py.diagonal_from_bonds(n, za, zb, amp, h), atol=1e-14)


def test_backend_selected():
    assert BACKEND == "cython"
