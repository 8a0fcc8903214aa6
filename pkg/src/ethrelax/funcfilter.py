"""Smooth functions of Hermitian operators applied to states by Chebyshev series.

Two filters matter here: the Gaussian energy filter
``exp(-(H - E)^2 / (4 sigma^2))`` whose square is the shell weight, and the
root ``exp(-K / (4 sigma^2))`` of the displaced-state weight with
``K = H^2 + beta^2 (D - d0)^2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.fft import dct

from .engine import SpectralBounds, random_haar_state, spectral_bounds
from .model import LinearOp

__all__ = [
    "EnergyWindow",
    "ChebyshevPlan",
    "ChebyshevDivergenceError",
    "OrderCapError",
    "ModWeightOperator",
    "plan_function",
    "apply_function",
    "gaussian_filter_state",
    "gaussian_root_plan",
    "apply_mod_root",
    "mod_operator_bounds",
    "FUNCTIONS",
]

DEFAULT_TOL = 1e-10
MAX_ORDER = 20000


class ChebyshevDivergenceError(RuntimeError):
    """Recurrence grew beyond the bound valid for a spectrum inside the plan interval."""


class OrderCapError(RuntimeError):
    def __init__(self, msg, required_order=None):
        super().__init__(msg)
        self.required_order = required_order


@dataclass(frozen=True)
class EnergyWindow:
    e_center: float = 0.0
    sigma: float = 0.6

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def shifted(self, de: float) -> "EnergyWindow":
        return EnergyWindow(self.e_center + de, self.sigma)


def _gaussian(x, center=0.0, sigma=1.0):
    return np.exp(-((x - center) ** 2) / (2.0 * sigma**2))


def _gaussian_root(x, center=0.0, sigma=1.0):
    return np.exp(-((x - center) ** 2) / (4.0 * sigma**2))


def _exp_decay(x, rate=1.0):
    return np.exp(-rate * x)


FUNCTIONS: dict[str, Callable] = {
    "constant": lambda x, value=1.0: np.full_like(np.asarray(x, dtype=float), value),
    "identity": lambda x: np.asarray(x, dtype=float),
    "gaussian": _gaussian,
    "gaussian_root": _gaussian_root,
    "exp_decay": _exp_decay,
}


@dataclass(frozen=True)
class ChebyshevPlan:
    """Truncated Chebyshev series of ``f`` on ``[lo, hi]``."""

    function: str
    params: dict
    lo: float
    hi: float
    coeffs: np.ndarray = field(repr=False)
    tol: float
    max_error: float

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    @property
    def center(self) -> float:
        return 0.5 * (self.hi + self.lo)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.hi - self.lo)

    def __call__(self, x):
        y = (np.asarray(x, dtype=float) - self.center) / self.half_width
        return np.polynomial.chebyshev.chebval(y, self.coeffs)


def _cheb_coeffs(f, lo, hi, n):
    # interpolant on n Chebyshev points of the first kind
    j = np.arange(n)
    theta = np.pi * (j + 0.5) / n
    xs = 0.5 * (hi + lo) + 0.5 * (hi - lo) * np.cos(theta)
    fx = np.asarray(f(xs), dtype=float)
    c = dct(fx, type=2) / n
    c[0] *= 0.5
    return c


def plan_function(f, bounds, tol: float = DEFAULT_TOL, max_order: int = MAX_ORDER, **params) -> ChebyshevPlan:
    """Chebyshev plan with the smallest order reproducing ``f`` to ``tol``.

    ``f`` is a name from :data:`FUNCTIONS` (extra keyword arguments are its
    parameters) or a vectorized callable.  ``bounds`` is a
    :class:`SpectralBounds` or a ``(lo, hi)`` pair.  Raises
    :class:`OrderCapError` carrying an order estimate when ``max_order`` is
    not enough.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if isinstance(bounds, SpectralBounds):
        lo, hi = bounds.lambda_min, bounds.lambda_max
    else:
        lo, hi = map(float, bounds)
    if not hi > lo:
        raise ValueError("empty interval")
    if isinstance(f, str):
        if f not in FUNCTIONS:
            raise ValueError(f"unknown function {f!r}")
        name = f
        base = FUNCTIONS[f]
        func = lambda x: base(x, **params)  # noqa: E731
    else:
        name = getattr(f, "__name__", "callable")
        func = f

    grid = np.linspace(lo, hi, 4001)
    fgrid = np.asarray(func(grid), dtype=float)
    scale = max(1.0, float(np.max(np.abs(fgrid))))
    y = (grid - 0.5 * (hi + lo)) / (0.5 * (hi - lo))
    n = 16
    while True:
        c = _cheb_coeffs(func, lo, hi, n)
        tail = np.abs(c[-max(4, n // 8):]).max()
        if tail >= 1e-3 * tol * scale and n < 4 * max_order:
            n *= 2
            continue
        # smallest order whose discarded coefficients sum below tol/2
        tail_sums = np.cumsum(np.abs(c)[::-1])[::-1]
        keep = np.nonzero(tail_sums >= 0.5 * tol)[0]
        m = max(int(keep[-1]) + 1 if keep.size else 1, 1)
        if m - 1 > max_order:
            raise OrderCapError(f"order {m - 1} exceeds cap {max_order}", required_order=m - 1)
        coeffs = c[:m].copy()
        # dense-grid check; a failure means the samples missed features of f
        err = float(np.max(np.abs(np.polynomial.chebyshev.chebval(y, coeffs) - fgrid)))
        if err < tol:
            break
        if n >= 4 * max_order:
            raise OrderCapError(f"grid error {err:.2e} above tol {tol:.2e}", required_order=2 * n)
        n *= 2
    return ChebyshevPlan(name, dict(params), float(lo), float(hi), coeffs, float(tol), err)


def apply_function(plan: ChebyshevPlan, op: LinearOp, psi: np.ndarray, check_every: int = 16) -> np.ndarray:
    """``f(op) @ psi`` by the three-term recurrence; ``plan.order`` applications of ``op``.

    The recurrence vectors satisfy ``|T_k(op) psi| <= |psi|`` when the
    spectrum lies inside the plan interval; a violation beyond a factor 10
    aborts with :class:`ChebyshevDivergenceError`.
    """
    x = np.ascontiguousarray(psi, dtype=np.complex128)
    if x.shape[0] != op.dim:
        raise ValueError("state dimension does not match operator")
    xb = x.reshape(x.shape[0], -1)
    a, b = plan.half_width, plan.center
    c = plan.coeffs
    limit = 10.0 * float(np.max(np.linalg.norm(xb, axis=0))) + 1e-300
    acc = c[0] * xb
    if len(c) > 1:
        t_prev = xb
        t_cur = op.apply(xb, c_op=1.0 / a, c_x=-b / a)
        acc = acc + c[1] * t_cur
        spare = np.empty_like(t_cur)
        for k in range(2, len(c)):
            t_next = op.apply(t_cur, out=spare, c_op=2.0 / a, c_x=-2.0 * b / a, y=t_prev, c_y=-1.0)
            acc += c[k] * t_next
            if k % check_every == 0 and np.max(np.linalg.norm(t_next, axis=0)) > limit:
                raise ChebyshevDivergenceError(
                    f"Chebyshev recurrence diverged at order {k}: operator spectrum lies outside "
                    f"[{plan.lo:g}, {plan.hi:g}]"
                )
            # never recycle the caller's array as scratch
            spare = t_prev if t_prev is not xb else np.empty_like(t_cur)
            t_prev, t_cur = t_cur, t_next
    return acc.reshape(x.shape)


def gaussian_root_plan(bounds: SpectralBounds, window: EnergyWindow, tol: float = DEFAULT_TOL) -> ChebyshevPlan:
    return plan_function("gaussian_root", bounds, tol, center=window.e_center, sigma=window.sigma)


def gaussian_filter_state(
    H: LinearOp,
    window: EnergyWindow,
    seed=None,
    r: np.ndarray | None = None,
    bounds: SpectralBounds | None = None,
    tol: float = DEFAULT_TOL,
    k: int | None = None,
) -> tuple[np.ndarray, np.ndarray | float]:
    """Filtered random state ``exp(-(H - E)^2 / (4 sigma^2)) |r>`` and its squared norm.

    ``r`` defaults to a unit-norm Haar state (or ``(d, k)`` block) drawn from
    ``seed``.  Averaged over ``r``, ``|phi><phi|`` is proportional to the shell
    weight ``exp(-(H - E)^2 / (2 sigma^2))``.
    """
    if r is None:
        r = random_haar_state(H.dim, seed, k)
    if bounds is None:
        bounds = spectral_bounds(H)
    plan = gaussian_root_plan(bounds, window, tol)
    phi = apply_function(plan, H, r)
    if phi.ndim == 1:
        return phi, float(np.vdot(phi, phi).real)
    return phi, np.einsum("ij,ij->j", phi.conj(), phi).real


class ModWeightOperator(LinearOp):
    """``K = (H - e_center)^2 + beta^2 (D - d0)^2`` as a composite matrix-free operator."""

    def __init__(self, H: LinearOp, D: LinearOp, beta: float, d0: float, e_center: float = 0.0):
        if beta < 0:
            raise ValueError("beta must be nonnegative")
        self.H, self.D = H, D
        self.beta, self.d0, self.e_center = float(beta), float(d0), float(e_center)
        self.dim = H.dim
        self.name = "K"

    def _matvec(self, x):
        h1 = self.H.apply(x, c_x=-self.e_center)
        out = self.H.apply(h1, c_x=-self.e_center)
        if self.beta != 0:
            d1 = self.D.apply(x, c_x=-self.d0)
            out += self.beta**2 * self.D.apply(d1, c_x=-self.d0)
        return out


def mod_operator_bounds(
    K: ModWeightOperator, h_bounds: SpectralBounds, d_bounds: SpectralBounds, margin: float = 0.05
) -> SpectralBounds:
    """Interval ``[0, max|H - E|^2 + beta^2 (max|D| + |d0|)^2]`` inflated by ``margin``."""
    hmax = max(abs(h_bounds.lambda_min - K.e_center), abs(h_bounds.lambda_max - K.e_center))
    dmax = max(abs(d_bounds.lambda_min), abs(d_bounds.lambda_max)) + abs(K.d0)
    top = hmax**2 + K.beta**2 * dmax**2
    return SpectralBounds(-margin * top, (1.0 + margin) * top, margin, "interval")


def apply_mod_root(
    H: LinearOp,
    D: LinearOp,
    sigma: float,
    beta: float,
    d0: float,
    psi: np.ndarray,
    h_bounds: SpectralBounds | None = None,
    d_bounds: SpectralBounds | None = None,
    e_center: float = 0.0,
    tol: float = DEFAULT_TOL,
    max_order: int = 4000,
) -> np.ndarray:
    """``exp(-K / (4 sigma^2)) @ psi`` with ``K = (H - E)^2 + beta^2 (D - d0)^2``.

    With beta = 0 this is the Gaussian energy filter.  Bounds for ``K`` come
    from interval arithmetic on the bounds of ``H`` and ``D``; if that makes
    the series longer than ``max_order``, the bounds of ``K`` are measured
    directly instead.
    """
    if h_bounds is None:
        h_bounds = spectral_bounds(H)
    if d_bounds is None:
        d_bounds = spectral_bounds(D)
    K = ModWeightOperator(H, D, beta, d0, e_center)
    kb = mod_operator_bounds(K, h_bounds, d_bounds)
    rate = 1.0 / (4.0 * sigma**2)
    try:
        plan = plan_function("exp_decay", kb, tol, max_order=max_order, rate=rate)
    except OrderCapError:
        kb = spectral_bounds(K)
        kb = SpectralBounds(min(kb.lambda_min, 0.0), kb.lambda_max, kb.safety_margin, kb.method)
        plan = plan_function("exp_decay", kb, tol, rate=rate)
    return apply_function(plan, K, psi)
