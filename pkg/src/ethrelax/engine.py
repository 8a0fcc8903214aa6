"""Pure states, random-state generation, real-time propagation, spectral bounds.

States are plain complex128 arrays of shape ``(d,)``; several independent
states are carried as the columns of a ``(d, k)`` block so one operator sweep
serves all of them.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import jv

__all__ = [
    "SpectralBounds",
    "NormDriftError",
    "PlateauWarning",
    "rng_stream",
    "random_haar_state",
    "normalize",
    "rk4_step",
    "chebyshev_step",
    "default_dt",
    "evolve",
    "spectral_bounds",
    "expectation",
    "cross_expectation",
    "STREAM_HAAR",
    "STREAM_DISORDER",
    "STREAM_MOD",
    "STREAM_LANCZOS",
]

STREAM_HAAR = 1
STREAM_DISORDER = 2
STREAM_MOD = 3
STREAM_LANCZOS = 4

# RK4 single-step norm change that signals a step size outside the stable region
STEP_DRIFT_LIMIT = 1e-6


class NormDriftError(RuntimeError):
    """Propagation changed the state norm by more than the allowed amount."""


class PlateauWarning(UserWarning):
    """A long-time average has not settled over its averaging window."""


@dataclass(frozen=True)
class SpectralBounds:
    lambda_min: float
    lambda_max: float
    safety_margin: float = 0.0
    method: str = "lanczos"

    @property
    def center(self) -> float:
        return 0.5 * (self.lambda_max + self.lambda_min)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.lambda_max - self.lambda_min)

    @property
    def width(self) -> float:
        return self.lambda_max - self.lambda_min

    def contains(self, lo: float, hi: float) -> bool:
        return self.lambda_min <= lo and hi <= self.lambda_max


def rng_stream(master_seed: int, purpose: int, *index: int) -> np.random.Generator:
    """Independent generator for ``(purpose, index...)`` derived from one master seed."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(purpose),) + tuple(int(i) for i in index))
    return np.random.default_rng(ss)


def random_haar_state(d: int, seed, k: int | None = None) -> np.ndarray:
    """Unit-norm random state(s) from the unitarily invariant measure.

    ``seed`` is an int or a :class:`numpy.random.Generator`.  With ``k`` given,
    returns a ``(d, k)`` block of independent normalized columns.
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    cols = 1 if k is None else int(k)
    z = rng.standard_normal((d, cols, 2)).view(np.complex128)[..., 0]
    z /= np.linalg.norm(z, axis=0)
    z = np.ascontiguousarray(z)
    return z[:, 0] if k is None else z


def normalize(psi: np.ndarray) -> np.ndarray:
    return psi / np.linalg.norm(psi, axis=0)


def _col_norms(x):
    return np.sqrt(np.einsum("ij,ij->j", x.conj(), x).real) if x.ndim == 2 else np.array([np.linalg.norm(x)])


def _rk4_raw(op, psi, dt, k, tmp):
    """One classical RK4 step of d/dt psi = -i op psi, in place on ``psi``.

    ``k`` and ``tmp`` are scratch blocks shaped like ``psi``.
    """
    h = -1j * dt
    # k1
    op.apply(psi, out=k, c_op=h)
    acc = psi + k / 6.0
    # k2 from psi + k1/2
    np.multiply(k, 0.5, out=tmp)
    tmp += psi
    op.apply(tmp, out=k, c_op=h)
    acc += k / 3.0
    # k3 from psi + k2/2
    np.multiply(k, 0.5, out=tmp)
    tmp += psi
    op.apply(tmp, out=k, c_op=h)
    acc += k / 3.0
    # k4 from psi + k3
    np.add(psi, k, out=tmp)
    op.apply(tmp, out=k, c_op=h)
    acc += k / 6.0
    psi[...] = acc
    return psi


def rk4_step(op, psi: np.ndarray, dt: float) -> np.ndarray:
    """Fourth-order Runge-Kutta approximation of ``exp(-i op dt) psi``.

    Raises :class:`NormDriftError` when a single step changes a column norm
    by more than ``1e-6`` (``dt`` too large for the spectrum of ``op``).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.array(psi, dtype=np.complex128, order="C", copy=True)
    xb = x.reshape(x.shape[0], -1)
    n0 = _col_norms(xb)
    _rk4_raw(op, xb, dt, np.empty_like(xb), np.empty_like(xb))
    drift = np.abs(_col_norms(xb) - n0) / np.where(n0 > 0, n0, 1.0)
    if np.any(drift > STEP_DRIFT_LIMIT):
        raise NormDriftError(f"RK4 step changed the norm by {drift.max():.3e}; reduce dt")
    return x


def _cheb_coefficients(rho: float, tol: float) -> np.ndarray:
    # exp(-i rho x) = sum_k (2 - delta_k0) (-i)^k J_k(rho) T_k(x)
    kmax = int(rho + 10.0 * rho ** (1.0 / 3.0) + 40)
    ks = np.arange(kmax + 1)
    c = jv(ks, rho) * (-1j) ** ks
    c[1:] *= 2.0
    mag = np.abs(c)
    above = np.nonzero(mag > tol)[0]
    m = int(above[-1]) + 2 if above.size else 1
    return c[: min(m, kmax + 1)]


def chebyshev_step(op, psi: np.ndarray, dt: float, bounds: SpectralBounds, tol: float = 1e-13) -> np.ndarray:
    """``exp(-i op dt) psi`` from a Chebyshev-Bessel expansion (exact to ``tol``)."""
    a, b = bounds.half_width, bounds.center
    x = np.ascontiguousarray(psi, dtype=np.complex128)
    xb = x.reshape(x.shape[0], -1)
    c = _cheb_coefficients(a * dt, tol)
    t_prev = xb.copy()
    acc = c[0] * t_prev
    if len(c) > 1:
        t_cur = op.apply(t_prev, c_op=1.0 / a, c_x=-b / a)
        acc += c[1] * t_cur
        t_next = np.empty_like(t_cur)
        for ck in c[2:]:
            op.apply(t_cur, out=t_next, c_op=2.0 / a, c_x=-2.0 * b / a, y=t_prev, c_y=-1.0)
            acc += ck * t_next
            t_prev, t_cur, t_next = t_cur, t_next, t_prev
    acc *= np.exp(-1j * b * dt)
    return acc.reshape(x.shape)


def default_dt(bounds: SpectralBounds, J: float = 1.0) -> float:
    """``0.5 / (lambda_max - lambda_min)`` capped at ``0.01 / J``."""
    return min(0.5 / bounds.width, 0.01 / abs(J))


def evolve(
    op,
    psi: np.ndarray,
    t_grid: Sequence[float],
    observer: Callable[[float, np.ndarray], object],
    dt: float | None = None,
    bounds: SpectralBounds | None = None,
    method: str = "rk4",
    renormalize_interval: float | None = None,
    stats: dict | None = None,
) -> list:
    """Propagate ``psi`` under ``op`` and call ``observer(t, psi_t)`` on ``t_grid``.

    ``t_grid`` must start at 0 and increase strictly.  With ``method="rk4"``
    each grid interval is split into equal substeps no longer than ``dt``
    (default from :func:`default_dt`).  ``method="chebyshev"`` jumps each
    grid interval with :func:`chebyshev_step`.

    ``renormalize_interval`` rescales the state to its initial column norms
    every so many time units; the largest pre-renormalization drift and the
    number of rescalings are written to ``stats`` if a dict is passed.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0 or t[0] != 0.0:
        raise ValueError("t_grid must be a 1-d grid starting at 0")
    if np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    if method not in ("rk4", "chebyshev"):
        raise ValueError(f"unknown propagation method {method!r}")
    if bounds is None and (dt is None or method == "chebyshev"):
        bounds = spectral_bounds(op)
    if method == "rk4" and dt is None:
        dt = default_dt(bounds)

    x = np.array(psi, dtype=np.complex128, order="C", copy=True)
    xb = x.reshape(x.shape[0], -1)
    n0 = _col_norms(xb)
    scale = np.where(n0 > 0, n0, 1.0)
    k = np.empty_like(xb)
    tmp = np.empty_like(xb)
    max_drift = 0.0
    n_renorm = 0
    since_renorm = 0.0
    values = [observer(0.0, x)]
    for i in range(1, t.size):
        interval = t[i] - t[i - 1]
        if method == "rk4":
            n_sub = max(1, int(math.ceil(interval / dt - 1e-9)))
            h = interval / n_sub
            before = _col_norms(xb)
            for _ in range(n_sub):
                _rk4_raw(op, xb, h, k, tmp)
            step_drift = np.max(np.abs(_col_norms(xb) - before) / scale)
            if step_drift > STEP_DRIFT_LIMIT * n_sub:
                raise NormDriftError(
                    f"norm drift {step_drift:.3e} over {n_sub} RK4 steps at t={t[i]:g}; reduce dt"
                )
        else:
            xb[...] = chebyshev_step(op, xb, interval, bounds)
        drift = float(np.max(np.abs(_col_norms(xb) - n0) / scale))
        max_drift = max(max_drift, drift)
        since_renorm += interval
        if renormalize_interval and since_renorm >= renormalize_interval - 1e-12:
            xb *= n0 / np.where(_col_norms(xb) > 0, _col_norms(xb), 1.0)
            n_renorm += 1
            since_renorm = 0.0
        values.append(observer(float(t[i]), x))
    if stats is not None:
        stats.update(
            method=method,
            dt=dt if method == "rk4" else None,
            max_norm_drift=max_drift,
            renormalizations=n_renorm,
            renormalize_interval=renormalize_interval,
        )
    return values


def _lanczos_extremes(op, v0, max_iter, tol):
    """Extremal Ritz values and residual estimates after up to ``max_iter`` steps."""
    v = v0 / np.linalg.norm(v0)
    v_prev = np.zeros_like(v)
    alphas, betas = [], []
    beta = 0.0
    lo = hi = None
    res_lo = res_hi = np.inf
    for j in range(max_iter):
        w = op.apply(v)
        alpha = float(np.vdot(v, w).real)
        w -= alpha * v + beta * v_prev
        alphas.append(alpha)
        beta = float(np.linalg.norm(w))
        if j >= 2 and (j % 5 == 0 or beta < 1e-12):
            theta, s = eigh_tridiagonal(np.array(alphas), np.array(betas))
            lo, hi = theta[0], theta[-1]
            res_lo, res_hi = abs(beta * s[-1, 0]), abs(beta * s[-1, -1])
            scale = max(abs(lo), abs(hi), 1.0)
            if max(res_lo, res_hi) < tol * scale:
                return lo, hi, True
        if beta < 1e-12:
            break
        betas.append(beta)
        v_prev, v = v, w / beta
    if lo is None or beta < 1e-12:
        theta = eigh_tridiagonal(np.array(alphas), np.array(betas[: len(alphas) - 1]), eigvals_only=True)
        return theta[0], theta[-1], beta < 1e-12
    return lo, hi, False


def spectral_bounds(op, power_iter_cap: int = 300, margin: float = 0.05, tol: float = 1e-8, seed: int = 0) -> SpectralBounds:
    """Interval certified to contain the spectrum of the Hermitian ``op``.

    Extremal eigenvalues come from a Lanczos iteration; the interval is
    widened by ``margin`` times its width on both sides and clipped to the
    rigorous norm bound when the operator provides one.  If Lanczos does not
    converge within ``power_iter_cap`` steps, the norm bound is returned.
    """
    try:
        nb = float(op.norm_bound())
    except NotImplementedError:
        nb = math.inf
    d = op.dim
    if d <= 2:
        # tiny operators: direct evaluation is cheaper than any iteration
        m = op.apply(np.eye(d, dtype=np.complex128))
        ev = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
        lo, hi, ok = ev[0], ev[-1], True
    else:
        v0 = random_haar_state(d, rng_stream(seed, STREAM_LANCZOS))
        lo, hi, ok = _lanczos_extremes(op, v0, min(power_iter_cap, d + 1), tol)
    if not ok:
        if not math.isfinite(nb):
            raise RuntimeError("spectral bound iteration did not converge and no norm bound is available")
        return SpectralBounds(-nb, nb, 0.0, "norm_bound")
    width = max(hi - lo, 1e-12 * max(1.0, abs(hi)))
    pad = margin * width + 1e-12
    lo_b, hi_b = lo - pad, hi + pad
    if math.isfinite(nb):
        lo_b, hi_b = max(lo_b, -nb), min(hi_b, nb)
    return SpectralBounds(float(lo_b), float(hi_b), margin, "lanczos")


def expectation(psi: np.ndarray, op) -> float | np.ndarray:
    """``<psi|op|psi>``; per column for a ``(d, k)`` block."""
    y = op.apply(psi)
    if psi.ndim == 1:
        val = np.vdot(psi, y)
        scale = max(abs(val), 1.0)
        if abs(val.imag) > 1e-10 * scale:
            raise ValueError(f"expectation value has imaginary part {val.imag:.3e}; operator not Hermitian?")
        return float(val.real)
    vals = np.einsum("ij,ij->j", psi.conj(), y)
    if np.any(np.abs(vals.imag) > 1e-10 * np.maximum(np.abs(vals), 1.0)):
        raise ValueError("expectation value has a nonzero imaginary part; operator not Hermitian?")
    return vals.real


def cross_expectation(phi: np.ndarray, op, chi: np.ndarray) -> complex | np.ndarray:
    """``<phi|op|chi>``; per column for blocks."""
    if phi.shape != chi.shape:
        raise ValueError("state shapes differ")
    y = op.apply(chi)
    if phi.ndim == 1:
        return complex(np.vdot(phi, y))
    return np.einsum("ij,ij->j", phi.conj(), y)
