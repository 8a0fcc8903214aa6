"""Displaced initial states and the relaxation of the energy difference.

A displaced state is a partially random pure state

    |phi_mod> ~ exp(-K / (4 sigma^2)) |r>,   K = (H - E)^2 + beta^2 (D - d0)^2,

with Haar-random ``|r>``; it sits in the energy shell around ``E`` with the
energy difference pushed towards ``d0``.  Its relaxation is tracked as
``r(t) = d(t) / d(0)`` with ``d(t) = <phi_mod(t)|D|phi_mod(t)>``.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .engine import STREAM_MOD, SpectralBounds, evolve, random_haar_state, rng_stream, spectral_bounds
from .estimator import _jackknife, estimate_deff
from .funcfilter import DEFAULT_TOL, EnergyWindow, apply_mod_root
from .model import LinearOp

__all__ = [
    "ModSpec",
    "ModState",
    "RelaxationTrace",
    "resolve_d0",
    "prepare_mod_state",
    "displacement_fraction",
    "max_difference_bound",
    "relaxation_trace",
    "relaxation_traces",
    "epsilon_bound",
    "default_time_grid",
]

# relative miss of the target displacement beyond which preparation is flagged
D0_FLAG_THRESHOLD = 0.5


def resolve_d0(d0, n_left: int | None = None) -> float:
    """Numeric target from a number or the symbols ``"+N_L"``/``"-N_L"``/``"N_L"``."""
    if isinstance(d0, str):
        s = d0.replace(" ", "")
        sign = -1.0 if s.startswith("-") else 1.0
        if s.lstrip("+-") != "N_L":
            return float(d0)
        if n_left is None:
            raise ValueError("symbolic d0 needs n_left")
        return sign * float(n_left)
    return float(d0)


@dataclass(frozen=True)
class ModSpec:
    """Parameters of the displaced state; ``d0`` may be symbolic (``"+N_L"``)."""

    sigma: float = 0.6
    beta: float = 0.5
    d0: float | str = "+N_L"
    e_center: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")

    def target(self, n_left: int | None = None) -> float:
        return resolve_d0(self.d0, n_left)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModState:
    psi: np.ndarray = field(repr=False)
    d0_target: float
    d0_measured: float
    energy_mean: float
    energy_variance: float
    weight: float  # <r|exp(-K/(2 sigma^2))|r> before normalization
    seed: int
    mod: ModSpec
    flags: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "d0_target": self.d0_target,
            "d0_measured": self.d0_measured,
            "energy_mean": self.energy_mean,
            "energy_variance": self.energy_variance,
            "weight": self.weight,
            "seed": self.seed,
            "mod": self.mod.as_dict(),
            "flags": list(self.flags),
        }


def _bounds_or(op, b):
    return b if b is not None else spectral_bounds(op)


def prepare_mod_state(
    H: LinearOp,
    D: LinearOp,
    mod: ModSpec,
    seed: int = 0,
    n_left: int | None = None,
    h_bounds: SpectralBounds | None = None,
    d_bounds: SpectralBounds | None = None,
    tol: float = DEFAULT_TOL,
) -> ModState:
    """Normalized displaced state from the random vector of stream ``(seed, MOD)``."""
    d0 = mod.target(n_left)
    r = random_haar_state(H.dim, rng_stream(seed, STREAM_MOD))
    psi = apply_mod_root(
        H, D, mod.sigma, mod.beta, d0, r,
        h_bounds=_bounds_or(H, h_bounds), d_bounds=_bounds_or(D, d_bounds), e_center=mod.e_center, tol=tol,
    )
    w = float(np.vdot(psi, psi).real)
    if not w > 0:
        raise ArithmeticError("displaced state has zero weight; window misses the spectrum")
    psi /= math.sqrt(w)
    hpsi = H.apply(psi)
    e1 = float(np.vdot(psi, hpsi).real)
    e2 = float(np.vdot(hpsi, hpsi).real)
    dm = float(np.vdot(psi, D.apply(psi)).real)
    flags = []
    if d0 != 0 and abs(dm - d0) / abs(d0) > D0_FLAG_THRESHOLD:
        flags.append("d0_missed")
    return ModState(psi, d0, dm, e1, e2 - e1**2, w, int(seed), mod, flags)


def max_difference_bound(n_left: int) -> float:
    """Upper bound ``9/4 (N_L - 1)`` on the largest eigenvalue of ``D`` for chains."""
    return 2.25 * (n_left - 1)


def displacement_fraction(d0_measured: float, n_left: int, long_time_value: float) -> float:
    """Share of the largest possible excursion that relaxes away.

    ``long_time_value`` is in energy units (``d`` at late times).
    """
    return (d0_measured - long_time_value) / (max_difference_bound(n_left) - long_time_value)


def default_time_grid(t_max: float = 200.0, n_times: int = 401) -> np.ndarray:
    return np.linspace(0.0, float(t_max), int(n_times))


@dataclass
class RelaxationTrace:
    times: np.ndarray
    d_t: np.ndarray
    r_t: np.ndarray
    d0_measured: float
    long_time_value: float  # mean of r_t over the tail window
    tail_window: tuple
    epsilon_bound: float = math.nan
    meta: dict = field(default_factory=dict)

    @property
    def long_time_d(self) -> float:
        """Tail mean of ``d(t)`` in energy units."""
        return self.long_time_value * self.d0_measured

    def metadata(self) -> dict:
        return {
            "d0_measured": self.d0_measured,
            "long_time_value": self.long_time_value,
            "long_time_d": self.long_time_d,
            "tail_window": list(self.tail_window),
            "epsilon_bound": self.epsilon_bound,
            **self.meta,
        }

    def write(self, directory: str, stem: str) -> tuple[str, str]:
        """Write ``stem.csv`` (t, d_t, r_t) and the ``stem.json`` sidecar."""
        os.makedirs(directory, exist_ok=True)
        csv_path = os.path.join(directory, stem + ".csv")
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "d_t", "r_t"])
            for row in zip(self.times, self.d_t, self.r_t):
                w.writerow([repr(float(x)) for x in row])
        json_path = os.path.join(directory, stem + ".json")
        with open(json_path, "w") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True, default=_json_default)
        return csv_path, json_path

    @classmethod
    def read(cls, directory: str, stem: str) -> "RelaxationTrace":
        data = np.loadtxt(os.path.join(directory, stem + ".csv"), delimiter=",", skiprows=1, ndmin=2)
        with open(os.path.join(directory, stem + ".json")) as fh:
            meta = json.load(fh)
        core = {k: meta.pop(k) for k in ("d0_measured", "long_time_value", "tail_window", "epsilon_bound")}
        meta.pop("long_time_d", None)
        return cls(data[:, 0], data[:, 1], data[:, 2], core["d0_measured"], core["long_time_value"],
                   tuple(core["tail_window"]), core["epsilon_bound"], meta)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def _tail(times, tail_fraction):
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must lie in (0, 1]")
    t0 = times[-1] - tail_fraction * (times[-1] - times[0])
    return times >= t0 - 1e-12, (float(t0), float(times[-1]))


def relaxation_traces(
    H: LinearOp,
    D: LinearOp,
    states: Sequence[ModState],
    t_grid: Sequence[float],
    tail_fraction: float = 0.25,
    method: str = "chebyshev",
    bounds: SpectralBounds | None = None,
    dt: float | None = None,
    meta: dict | None = None,
) -> list[RelaxationTrace]:
    """Evolve several displaced states together and return one trace each."""
    times = np.asarray(t_grid, dtype=float)
    block = np.ascontiguousarray(np.stack([s.psi for s in states], axis=1))
    stats: dict = {}
    vals = evolve(
        H, block, times, lambda t, x: np.einsum("ij,ij->j", x.conj(), D.apply(x)).real,
        dt=dt, bounds=bounds, method=method, stats=stats,
    )
    d_all = np.array(vals)  # (n_times, k)
    sel, window = _tail(times, tail_fraction)
    out = []
    for j, s in enumerate(states):
        d_t = d_all[:, j]
        d0m = float(d_t[0])
        if d0m == 0:
            raise ZeroDivisionError("initial displacement is zero; r(t) undefined")
        r_t = d_t / d0m
        m = dict(meta or {})
        m.update(state=s.summary(), engine={"method": method, "dt": stats.get("dt"),
                                            "max_norm_drift": stats.get("max_norm_drift")},
                 tail_fraction=tail_fraction)
        out.append(RelaxationTrace(times.copy(), d_t.copy(), r_t, d0m, float(r_t[sel].mean()), window, meta=m))
    return out


def relaxation_trace(H, D, state: ModState, t_grid, tail_fraction: float = 0.25, **kw) -> RelaxationTrace:
    """``d(t)`` and ``r(t) = d(t)/d(0)`` for one displaced state."""
    return relaxation_traces(H, D, [state], t_grid, tail_fraction, **kw)[0]


def epsilon_bound(
    H: LinearOp,
    D: LinearOp,
    mod: ModSpec,
    seeds: int | Sequence[int] = 10,
    d_eff: float | None = None,
    n_left: int | None = None,
    master_seed: int = 0,
    h_bounds: SpectralBounds | None = None,
    d_bounds: SpectralBounds | None = None,
    tol: float = DEFAULT_TOL,
) -> tuple[float, float]:
    """Typicality bound ``sqrt(Tr[rho D^4] / d_eff)`` with unit-trace ``rho``, and its stderr.

    ``Tr[rho D^4]`` is the ratio of sample means of ``|D^2 psi|^2`` and
    ``|psi|^2`` over root-filtered random vectors.  ``d_eff`` defaults to the
    plain Gaussian-window estimate from the same number of samples.
    """
    idx = list(range(seeds)) if isinstance(seeds, int) else [int(s) for s in seeds]
    if len(idx) < 2:
        raise ValueError("need at least 2 samples")
    h_bounds = _bounds_or(H, h_bounds)
    d_bounds = _bounds_or(D, d_bounds)
    d0 = mod.target(n_left)
    r = np.stack([random_haar_state(H.dim, rng_stream(master_seed, STREAM_MOD, 1, s)) for s in idx], axis=1)
    psi = apply_mod_root(H, D, mod.sigma, mod.beta, d0, np.ascontiguousarray(r),
                         h_bounds=h_bounds, d_bounds=d_bounds, e_center=mod.e_center, tol=tol)
    n2 = np.einsum("ij,ij->j", psi.conj(), psi).real
    d2psi = D.apply(D.apply(psi))
    num = np.einsum("ij,ij->j", d2psi.conj(), d2psi).real
    d4, d4_err = _jackknife(lambda a, b: a.mean() / b.mean(), num, n2)
    if d_eff is None:
        d_eff, _ = estimate_deff(H, EnergyWindow(mod.e_center, mod.sigma), len(idx), master_seed, h_bounds, tol)
    if d4 <= 0:
        return 0.0, 0.0
    val = math.sqrt(d4 / d_eff)
    return val, 0.5 * val * d4_err / d4
