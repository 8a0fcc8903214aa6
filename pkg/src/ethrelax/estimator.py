"""ETH diagnostics for an observable from filtered random states.

For a shell of width ``sigma`` around ``E`` the weights are
``p_n ~ exp(-(E_n - E)^2 / (2 sigma^2))`` and

* ``a_bar  = sum_n p_n A_nn``
* ``sigma2 = sum_n p_n A_nn^2 - a_bar^2``
* ``delta2 = sum_n p_n (A^2)_nn - a_bar^2``
* ``d_eff  = Tr exp(-(H - E)^2 / (2 sigma^2))``
* ``sigma_prime = sqrt(sigma2) - |d a_bar / d E| * sigma`` and
  ``v = sigma_prime^2 / delta2``.

All of them are estimated with ``|phi> = exp(-(H - E)^2 / (4 sigma^2)) |r>``
for Haar-random ``|r>``.  The diagonal sum behind ``sigma2`` is the long-time
average of ``Re <phi(t)| A |A phi(t)> / <phi|phi>``; off-diagonal terms
dephase.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .engine import (
    STREAM_HAAR,
    PlateauWarning,
    SpectralBounds,
    evolve,
    random_haar_state,
    rng_stream,
    spectral_bounds,
)
from .funcfilter import DEFAULT_TOL, EnergyWindow, apply_function, gaussian_root_plan
from .model import LinearOp

__all__ = [
    "EthReport",
    "ScalingPoint",
    "ScalingFit",
    "TypicalitySamples",
    "RANDOM_MATRIX_GAMMA",
    "draw_random_states",
    "filter_states",
    "estimate_deff",
    "estimate_abar",
    "estimate_sigma2",
    "estimate_slope",
    "compose_report",
    "finalize_report",
    "equipartition_prediction",
    "fit_power_law",
]

# power-law exponent of sigma_prime vs d_eff expected for a random-matrix model
RANDOM_MATRIX_GAMMA = 0.5


@dataclass
class EthReport:
    d_eff: float
    a_bar: float
    sigma2: float
    slope: float
    sigma_prime: float
    delta2: float
    v: float
    d_eff_err: float = 0.0
    a_bar_err: float = 0.0
    sigma2_err: float = 0.0
    slope_err: float = 0.0
    sigma_prime_err: float = 0.0
    delta2_err: float = 0.0
    v_err: float = 0.0
    samples: int = 0
    window: EnergyWindow = field(default_factory=EnergyWindow)
    flags: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = {"e_center": self.window.e_center, "sigma": self.window.sigma}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EthReport":
        d = dict(d)
        d["window"] = EnergyWindow(**d["window"])
        return cls(**d)


@dataclass(frozen=True)
class ScalingPoint:
    d_eff: float
    sigma_prime: float
    stderr: float = 0.0
    label: str = ""


@dataclass
class ScalingFit:
    gamma: float
    intercept: float
    residual: float
    gamma_err: float
    n_points: int
    points: list
    reference_gamma: float = RANDOM_MATRIX_GAMMA

    def predict(self, d_eff):
        return np.exp(self.intercept) * np.asarray(d_eff, dtype=float) ** (-self.gamma)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["points"] = [asdict(p) for p in self.points]
        return d


def _mean_err(x):
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()), math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def _jackknife(stat, *cols):
    """Value of ``stat(*cols)`` and its leave-one-out standard error."""
    cols = [np.asarray(c, dtype=float) for c in cols]
    n = cols[0].size
    val = float(stat(*cols))
    if n < 2:
        return val, math.nan
    keep = ~np.eye(n, dtype=bool)
    loo = np.array([stat(*(c[keep[i]] for c in cols)) for i in range(n)])
    err = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    return val, float(err)


def draw_random_states(d: int, n_samples: int, seed: int, start: int = 0) -> np.ndarray:
    """``(d, n_samples)`` block of Haar states, column ``s`` from stream ``(seed, s)``.

    Per-column streams make every sample independent of how samples are
    batched.
    """
    cols = [random_haar_state(d, rng_stream(seed, STREAM_HAAR, start + s)) for s in range(n_samples)]
    return np.ascontiguousarray(np.stack(cols, axis=1))


def filter_states(H: LinearOp, window: EnergyWindow, r: np.ndarray, bounds: SpectralBounds, tol: float = DEFAULT_TOL):
    return apply_function(gaussian_root_plan(bounds, window, tol), H, r)


def _colsum(a, b):
    return np.einsum("ij,ij->j", a.conj(), b)


def _check_samples(n_samples):
    if n_samples < 2:
        raise ValueError("need at least 2 samples for an error estimate")


def estimate_deff(
    H: LinearOp,
    window: EnergyWindow,
    n_samples: int = 10,
    seed: int = 0,
    bounds: SpectralBounds | None = None,
    tol: float = DEFAULT_TOL,
) -> tuple[float, float]:
    """``Tr exp(-(H - E)^2 / (2 sigma^2))`` as ``d`` times the mean of ``<r|g^2(H)|r>``."""
    _check_samples(n_samples)
    bounds = bounds or spectral_bounds(H)
    r = draw_random_states(H.dim, n_samples, seed)
    phi = filter_states(H, window, r, bounds, tol)
    return _mean_err(H.dim * _colsum(phi, phi).real)


def estimate_abar(
    H: LinearOp,
    D: LinearOp,
    window: EnergyWindow,
    n_samples: int = 10,
    seed: int = 0,
    bounds: SpectralBounds | None = None,
    tol: float = DEFAULT_TOL,
) -> tuple[float, float]:
    """Mean over samples of ``<phi|D|phi> / <phi|phi>``."""
    _check_samples(n_samples)
    bounds = bounds or spectral_bounds(H)
    r = draw_random_states(H.dim, n_samples, seed)
    phi = filter_states(H, window, r, bounds, tol)
    return _mean_err(_colsum(phi, D.apply(phi)).real / _colsum(phi, phi).real)


def _window_grid(t_window, t_spacing):
    t_min, t_max = map(float, t_window)
    if not (0 < t_min < t_max) or t_spacing <= 0:
        raise ValueError("need 0 < t_min < t_max and t_spacing > 0")
    n = int(round((t_max - t_min) / t_spacing))
    avg = t_min + t_spacing * np.arange(n + 1)
    return np.concatenate([[0.0], avg])


def _long_time_correlations(H, D, phi, t_window, t_spacing, method, bounds, dt=None, stats=None):
    """Long-time averages of ``Re <phi(t)|D|D phi(t)>`` per column, plus the seed-mean trace."""
    k = phi.shape[1]
    block = np.ascontiguousarray(np.concatenate([phi, D.apply(phi)], axis=1))
    grid = _window_grid(t_window, t_spacing)

    def observer(t, x):
        if t == 0.0:
            return None
        return _colsum(D.apply(x[:, :k]), x[:, k:]).real

    vals = evolve(H, block, grid, observer, dt=dt, bounds=bounds, method=method, stats=stats)
    c = np.array(vals[1:])  # (n_times, k)
    return c.mean(axis=0), grid[1:], c


def _plateau_check(times, trace, rel=0.01):
    """True when the running average of ``trace`` is flat over the second half of the window.

    Flat means a linear fit changes by at most ``rel`` of the final average.
    """
    if times.size < 4:
        return True
    run = np.cumsum(trace) / np.arange(1, trace.size + 1)
    h = times.size // 2
    slope, _ = np.polyfit(times[h:], run[h:], 1)
    change = abs(slope) * (times[-1] - times[h])
    return change <= rel * max(abs(run[-1]), 1e-300)


def estimate_sigma2(
    H: LinearOp,
    D: LinearOp,
    window: EnergyWindow,
    t_window: Sequence[float] = (50.0, 500.0),
    n_samples: int = 10,
    seed: int = 0,
    t_spacing: float = 1.0,
    method: str = "chebyshev",
    bounds: SpectralBounds | None = None,
    tol: float = DEFAULT_TOL,
) -> tuple[float, float]:
    """``sum_n p_n D_nn^2 - a_bar^2`` from the long-time average over ``t_window``."""
    rep = compose_report(
        H, D, window, n_samples=n_samples, seed=seed, t_window=t_window, t_spacing=t_spacing,
        method=method, bounds=bounds, tol=tol, with_slope=False,
    )
    return rep.sigma2, rep.sigma2_err


def estimate_slope(
    H: LinearOp,
    D: LinearOp,
    window: EnergyWindow,
    dE: float | None = None,
    n_samples: int = 10,
    seed: int = 0,
    bounds: SpectralBounds | None = None,
    tol: float = DEFAULT_TOL,
) -> tuple[float, float]:
    """Central difference ``[a_bar(E + dE) - a_bar(E - dE)] / (2 dE)``, ``dE = sigma/2`` by default.

    Both shifted windows reuse the same random states, so most of the
    sampling noise cancels in the difference.
    """
    _check_samples(n_samples)
    dE = window.sigma / 2 if dE is None else float(dE)
    if dE <= 0:
        raise ValueError("dE must be positive")
    bounds = bounds or spectral_bounds(H)
    r = draw_random_states(H.dim, n_samples, seed)
    per_seed = _slope_samples(H, D, window, dE, r, bounds, tol)
    return _mean_err(per_seed)


def _ratio(phi, D):
    return _colsum(phi, D.apply(phi)).real / _colsum(phi, phi).real


def _slope_samples(H, D, window, dE, r, bounds, tol):
    hi = _ratio(filter_states(H, window.shifted(dE), r, bounds, tol), D)
    lo = _ratio(filter_states(H, window.shifted(-dE), r, bounds, tol), D)
    return (hi - lo) / (2 * dE)


@dataclass
class TypicalitySamples:
    """Per-sample raw numbers behind one report (kept for pooling across batches)."""

    norm2: list = field(default_factory=list)  # <r|g^2|r>
    d_ratio: list = field(default_factory=list)  # <phi|D|phi>/<phi|phi>
    d2_ratio: list = field(default_factory=list)  # <phi|D^2|phi>/<phi|phi>
    c_avg: list = field(default_factory=list)  # long-time average / <phi|phi>
    slope: list = field(default_factory=list)
    c_trace: np.ndarray | None = None  # seed-summed normalized trace over the window
    times: np.ndarray | None = None

    def extend(self, other: "TypicalitySamples"):
        for name in ("norm2", "d_ratio", "d2_ratio", "c_avg", "slope"):
            getattr(self, name).extend(getattr(other, name))
        if other.c_trace is not None:
            self.c_trace = other.c_trace if self.c_trace is None else self.c_trace + other.c_trace
            self.times = other.times


def _sample_batch(H, D, window, r, bounds, tol, t_window, t_spacing, method, slope_dE, with_sigma2, with_slope, dt, stats):
    out = TypicalitySamples()
    phi = filter_states(H, window, r, bounds, tol)
    n2 = _colsum(phi, phi).real
    dphi = D.apply(phi)
    out.norm2 = list(n2)
    out.d_ratio = list(_colsum(phi, dphi).real / n2)
    out.d2_ratio = list(_colsum(dphi, dphi).real / n2)
    if with_sigma2:
        avg, times, trace = _long_time_correlations(H, D, phi, t_window, t_spacing, method, bounds, dt, stats)
        out.c_avg = list(avg / n2)
        out.c_trace = (trace / n2).sum(axis=1)
        out.times = times
    if with_slope:
        out.slope = list(_slope_samples(H, D, window, slope_dE, r, bounds, tol))
    return out


def finalize_report(
    samples: TypicalitySamples, dim: int, window: EnergyWindow, meta: dict | None = None
) -> EthReport:
    """Combine per-sample numbers into an :class:`EthReport` with standard errors."""
    n = len(samples.norm2)
    flags = []
    d_eff, d_eff_err = _mean_err(dim * np.asarray(samples.norm2))
    a_bar, a_bar_err = _mean_err(samples.d_ratio)
    delta2, delta2_err = _jackknife(lambda d2, d1: d2.mean() - d1.mean() ** 2, samples.d2_ratio, samples.d_ratio)
    if samples.c_avg:
        sigma2, sigma2_err = _jackknife(lambda c, d1: c.mean() - d1.mean() ** 2, samples.c_avg, samples.d_ratio)
        if samples.c_trace is not None and not _plateau_check(samples.times, samples.c_trace / n):
            flags.append("sigma2_not_plateaued")
            warnings.warn("long-time average of the correlation has not plateaued over the window", PlateauWarning)
    else:
        sigma2, sigma2_err = math.nan, math.nan
    if samples.slope:
        slope, slope_err = _mean_err(samples.slope)
        if not abs(slope) > slope_err:
            flags.append("slope_unreliable")
    else:
        slope, slope_err = math.nan, math.nan

    sp = sp_err = v = v_err = math.nan
    if not math.isnan(sigma2) and not math.isnan(slope):
        sigma = window.sigma
        root = math.sqrt(max(sigma2, 0.0))
        if sigma2 < 0:
            flags.append("sigma2_negative")
        raw = root - abs(slope) * sigma
        root_err = sigma2_err / (2 * root) if root > 0 else math.inf
        sp_err = math.hypot(root_err, sigma * slope_err)
        if raw < 0:
            flags.append("sigma_prime_clamped")
            if raw < -2 * sp_err:
                flags.append("sigma_prime_negative_beyond_error")
        sp = max(raw, 0.0)
        meta = dict(meta or {})
        meta["sigma_prime_raw"] = raw
        v = sp**2 / delta2 if delta2 > 0 else math.nan
        if sp > 0 and delta2 > 0:
            v_err = v * math.hypot(2 * sp_err / sp, delta2_err / delta2)
        else:
            v_err = 2 * sp * sp_err / delta2 if delta2 > 0 else math.nan
    return EthReport(
        d_eff=d_eff, a_bar=a_bar, sigma2=sigma2, slope=slope, sigma_prime=sp, delta2=delta2, v=v,
        d_eff_err=d_eff_err, a_bar_err=a_bar_err, sigma2_err=sigma2_err, slope_err=slope_err,
        sigma_prime_err=sp_err, delta2_err=delta2_err, v_err=v_err, samples=n, window=window,
        flags=flags, meta=dict(meta or {}),
    )


def compose_report(
    H: LinearOp,
    D: LinearOp,
    window: EnergyWindow = EnergyWindow(),
    n_samples: int = 10,
    seed: int = 0,
    t_window: Sequence[float] = (50.0, 500.0),
    t_spacing: float = 1.0,
    slope_dE: float | None = None,
    method: str = "chebyshev",
    bounds: SpectralBounds | None = None,
    tol: float = DEFAULT_TOL,
    batch_size: int | None = None,
    with_sigma2: bool = True,
    with_slope: bool = True,
    dt: float | None = None,
) -> EthReport:
    """Full typicality report for observable ``D`` in the shell ``window``.

    Samples are processed in batches of ``batch_size`` columns (all at once
    by default); results do not depend on the batching.
    """
    _check_samples(n_samples)
    bounds = bounds or spectral_bounds(H)
    slope_dE = window.sigma / 2 if slope_dE is None else float(slope_dE)
    batch = n_samples if not batch_size else int(batch_size)
    pooled = TypicalitySamples()
    stats: dict = {}
    for start in range(0, n_samples, batch):
        r = draw_random_states(H.dim, min(batch, n_samples - start), seed, start)
        part = _sample_batch(
            H, D, window, r, bounds, tol, t_window, t_spacing, method, slope_dE, with_sigma2, with_slope, dt, stats
        )
        pooled.extend(part)
    meta = {
        "seed": seed,
        "method": method,
        "t_window": list(map(float, t_window)) if with_sigma2 else None,
        "t_spacing": float(t_spacing),
        "slope_dE": slope_dE,
        "bounds": [bounds.lambda_min, bounds.lambda_max],
        "cheb_tol": tol,
        "max_norm_drift": stats.get("max_norm_drift"),
    }
    return finalize_report(pooled, H.dim, window, meta)


def equipartition_prediction(n_left: int, n_right: int, energy):
    """Energy difference for bond-proportional sharing: ``(N_L - N_R)/(N_L + N_R - 2) * E``."""
    denom = n_left + n_right - 2
    if denom <= 0:
        raise ValueError("need at least one bond in total")
    ratio = (n_left - n_right) / denom
    if np.ndim(energy):
        return ratio * np.asarray(energy, dtype=float)
    return ratio * float(energy)


def fit_power_law(points: Sequence[ScalingPoint]) -> ScalingFit:
    """Least-squares line through ``log sigma_prime`` vs ``log d_eff``.

    Returns ``gamma`` with ``sigma_prime ~ d_eff**(-gamma)``; ``residual`` is
    the RMS deviation in log space.
    """
    pts = list(points)
    if len(pts) < 3:
        raise ValueError("need at least 3 points for a power-law fit")
    x = np.array([p.d_eff for p in pts], dtype=float)
    y = np.array([p.sigma_prime for p in pts], dtype=float)
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(x * y)):
        raise ValueError("power-law fit needs positive, finite d_eff and sigma_prime")
    lx, ly = np.log(x), np.log(y)
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * lx + intercept)
    rms = float(np.sqrt(np.mean(resid**2)))
    dof = len(pts) - 2
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    g_err = float(np.sqrt(np.sum(resid**2) / dof / sxx)) if dof > 0 and sxx > 0 else math.nan
    return ScalingFit(float(-slope), float(intercept), rms, g_err, len(pts), pts)
