"""Sweep orchestration and result persistence.

Every sweep point becomes one JSON record under ``records/<kind>/<key>.json``;
curves and traces go to CSV next to it.  Records carry a hash of everything
that determines them, so a rerun into the same directory skips points that
are already complete.  Files contain no timestamps and are byte-identical
for identical inputs.
"""
from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .config import canonical_json, config_hash
from .engine import spectral_bounds
from .estimator import EthReport, ScalingPoint, compose_report, equipartition_prediction, fit_power_law
from .funcfilter import EnergyWindow
from .moddyn import (
    ModSpec,
    default_time_grid,
    displacement_fraction,
    epsilon_bound,
    prepare_mod_state,
    relaxation_traces,
    resolve_d0,
)
from .model import CHAIN_GEOMETRIES, Geometry, ModelSpec, build_geometry, build_model

__all__ = [
    "SCHEMA_VERSION",
    "RECORD_KINDS",
    "RunResult",
    "sweep_points",
    "validate_record",
    "run_estimate",
    "run_oracle",
    "run_equipartition",
    "run_relaxation",
    "run_scaling",
    "RUNNERS",
]

SCHEMA_VERSION = 1
RECORD_KINDS = ("eth_report", "trace", "scaling_fit", "equipartition_curve", "error")
_REQUIRED = ("schema_version", "kind", "key", "status", "payload", "provenance")
_PROVENANCE = ("config_hash", "point_hash", "seeds", "version")
_REPORT_FIELDS = ("d_eff", "a_bar", "sigma2", "slope", "sigma_prime", "delta2", "v", "samples", "window", "flags")


def validate_record(rec: dict) -> None:
    """Raise ``ValueError`` if ``rec`` does not follow the declared schema version."""
    for k in _REQUIRED:
        if k not in rec:
            raise ValueError(f"record lacks {k!r}")
    if rec["schema_version"] != SCHEMA_VERSION:
        raise ValueError(f"unknown schema version {rec['schema_version']!r}")
    if rec["kind"] not in RECORD_KINDS:
        raise ValueError(f"unknown record kind {rec['kind']!r}")
    if rec["status"] not in ("ok", "error"):
        raise ValueError("status must be 'ok' or 'error'")
    for k in _PROVENANCE:
        if k not in rec["provenance"]:
            raise ValueError(f"provenance lacks {k!r}")
    p = rec["payload"]
    if rec["status"] == "error":
        if not {"error_type", "message"} <= set(p):
            raise ValueError("error payload needs error_type and message")
    elif rec["kind"] == "eth_report":
        missing = [f for f in _REPORT_FIELDS if f not in p["report"]]
        if missing:
            raise ValueError(f"report lacks {missing}")
    elif rec["kind"] == "trace":
        for t in p["traces"]:
            if not {"csv", "d0_measured", "long_time_value"} <= set(t):
                raise ValueError("trace entry incomplete")
    elif rec["kind"] == "equipartition_curve":
        if not {"csv", "points", "prediction_ratio"} <= set(p):
            raise ValueError("curve record incomplete")
    elif rec["kind"] == "scaling_fit":
        if not {"points", "fit"} <= set(p):
            raise ValueError("scaling record incomplete")


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, Geometry):
        return obj.value
    return obj


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _hash(obj) -> str:
    return hashlib.sha256(canonical_json(_clean(obj)).encode()).hexdigest()[:16]


def _derived_seed(master: int, *index: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=tuple(index)).generate_state(1)[0])


# ---------------------------------------------------------------- sweep points


def sweep_points(cfg: dict) -> list[ModelSpec]:
    """Cartesian product of the sweep lists; unset lists fall back to the model section."""
    m, sw = cfg["model"], cfg["sweep"]

    def axis(name):
        return [m[name]] if sw[name] is None else list(sw[name])

    pts = []
    for nl, jc, dl, W in itertools.product(axis("n_left"), axis("j_c"), axis("delta"), axis("W")):
        nr = m["n_right"] if sw["n_left"] is None else None
        pts.append(ModelSpec(m["geometry"], nl, nr, m["J"], dl, jc, W, m["disorder_seed"]))
    return pts


def point_key(spec: ModelSpec) -> str:
    return (f"{spec.geometry.value}-nl{spec.n_left}-nr{spec.n_right}-jc{spec.j_c:g}-dl{spec.delta:g}"
            f"-W{spec.W:g}-J{spec.J:g}")


def _realization_seeds(cfg, spec):
    if spec.W == 0:
        return [spec.disorder_seed]
    sw = cfg["sweep"]
    return list(sw["disorder_seeds"]) if sw["disorder_seeds"] is not None else list(range(sw["n_realizations"]))


# ---------------------------------------------------------------- workers


def _bounds(cfg, H):
    return spectral_bounds(H, power_iter_cap=cfg["engine"]["power_iter_cap"], seed=cfg["engine"]["master_seed"])


def _window(cfg, e_center=None):
    f = cfg["filter"]
    return EnergyWindow(f["e_center"] if e_center is None else e_center, f["sigma"])


_AVG_FIELDS = ("d_eff", "a_bar", "sigma2", "slope", "sigma_prime", "delta2", "v")


def _average_reports(reports: list[EthReport]) -> tuple[dict, dict]:
    """Realization mean; typicality stderr pooled in quadrature; spread reported separately."""
    if len(reports) == 1:
        return reports[0].to_dict(), {}
    n = len(reports)
    out = reports[0].to_dict()
    spread = {}
    for f in _AVG_FIELDS:
        vals = np.array([getattr(r, f) for r in reports], dtype=float)
        errs = np.array([getattr(r, f + "_err") for r in reports], dtype=float)
        out[f] = float(vals.mean())
        out[f + "_err"] = float(np.sqrt(np.sum(errs**2)) / n)
        spread[f] = float(vals.std(ddof=1) / math.sqrt(n))
    out["samples"] = int(sum(r.samples for r in reports))
    out["flags"] = sorted({fl for r in reports for fl in r.flags})
    out["meta"] = {"n_realizations": n, "method": reports[0].meta.get("method")}
    return out, spread


def _estimate_point(cfg, spec: ModelSpec, exact: bool = False):
    est, eng = cfg["estimator"], cfg["engine"]
    window = _window(cfg)
    seeds = _realization_seeds(cfg, spec)
    reports, per, haar_seeds = [], [], []
    for i, ds in enumerate(seeds):
        s = replace(spec, disorder_seed=ds)
        ops = build_model(s)
        if exact:
            from .oracle import exact_diagonalize, exact_eth_params

            rep = exact_eth_params(exact_diagonalize(ops.H), ops.D, window)
            hs = None
        else:
            hs = eng["master_seed"] if spec.W == 0 else _derived_seed(eng["master_seed"], i)
            rep = compose_report(
                ops.H, ops.D, window, n_samples=est["n_samples"], seed=hs,
                t_window=(est["t_min"], est["t_max"]), t_spacing=est["t_spacing"], slope_dE=est["slope_dE"],
                method=eng["method"], bounds=_bounds(cfg, ops.H), tol=cfg["filter"]["cheb_tol"],
                batch_size=est["batch_size"], dt=eng["dt_override"],
            )
        reports.append(rep)
        haar_seeds.append(hs)
        per.append({"disorder_seed": ds, "haar_seed": hs, "report": rep.to_dict()})
    report, spread = _average_reports(reports)
    payload = {
        "model": spec.as_dict(),
        "n_sites": spec.n_sites,
        "exact": exact,
        "report": report,
        "disorder_spread": spread,
        "realizations": per if len(per) > 1 else [],
    }
    seeds_info = {"master_seed": eng["master_seed"], "disorder_seeds": seeds, "haar_seeds": haar_seeds}
    return payload, seeds_info, {}


def _equipartition_ratio(spec: ModelSpec) -> float:
    if spec.geometry in CHAIN_GEOMETRIES:
        return equipartition_prediction(spec.n_left, spec.n_right, 1.0)
    g = build_geometry(spec)
    bl, br = g.count("L"), g.count("R")
    return (bl - br) / (bl + br)


def _equipartition_point(cfg, spec: ModelSpec, key: str):
    est, eng = cfg["estimator"], cfg["engine"]
    ops = build_model(spec)
    bounds = _bounds(cfg, ops.H)
    ratio = _equipartition_ratio(spec)
    rows = []
    for e in cfg["sweep"]["e_center"]:
        rep = compose_report(
            ops.H, ops.D, _window(cfg, e), n_samples=est["n_samples"], seed=eng["master_seed"],
            slope_dE=est["slope_dE"], bounds=bounds, tol=cfg["filter"]["cheb_tol"],
            batch_size=est["batch_size"], with_sigma2=False,
        )
        sigma = cfg["filter"]["sigma"]
        rows.append({
            "e_center": float(e), "d_bar": rep.a_bar, "d_bar_err": rep.a_bar_err, "slope": rep.slope,
            "slope_err": rep.slope_err, "slope_sigma": abs(rep.slope) * sigma, "slope_sigma_err": rep.slope_err * sigma,
            "prediction": ratio * float(e), "d_eff": rep.d_eff, "flags": rep.flags,
        })
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["e_center", "d_bar", "d_bar_err", "slope", "slope_err", "prediction"]
    w.writerow(cols)
    for r in rows:
        w.writerow([repr(float(r[c])) for c in cols])
    csv_rel = f"curves/equipartition-{key}.csv"
    payload = {"model": spec.as_dict(), "sigma": cfg["filter"]["sigma"], "prediction_ratio": ratio,
               "points": rows, "csv": csv_rel}
    return payload, {"master_seed": eng["master_seed"]}, {csv_rel: buf.getvalue()}


def _block_stderr(x, n_blocks=8):
    """Standard error of the mean of a correlated series from block means."""
    x = np.asarray(x, dtype=float)
    nb = min(n_blocks, x.size)
    if nb < 2:
        return math.nan
    blocks = np.array([b.mean() for b in np.array_split(x, nb)])
    return float(blocks.std(ddof=1) / math.sqrt(nb))


def _relax_point(cfg, spec: ModelSpec, key: str):
    mod_cfg, eng = cfg["mod"], cfg["engine"]
    ops = build_model(spec)
    hb = _bounds(cfg, ops.H)
    db = _bounds(cfg, ops.D)
    d0 = abs(resolve_d0(mod_cfg["d0"], spec.n_left))
    if d0 == 0:
        raise ValueError("relaxation needs d0 != 0")
    tol = cfg["filter"]["cheb_tol"]
    f = cfg["filter"]
    specs = {sgn: ModSpec(f["sigma"], mod_cfg["beta"], sgn * d0, f["e_center"]) for sgn in (1, -1)}
    seeds = [eng["master_seed"] + i for i in range(mod_cfg["n_seeds"])]
    states, labels = [], []
    for s in seeds:
        for sgn in (1, -1):
            states.append(prepare_mod_state(ops.H, ops.D, specs[sgn], s, spec.n_left, hb, db, tol))
            labels.append((s, sgn))
    grid = default_time_grid(mod_cfg["t_max"], mod_cfg["n_times"])
    meta = {"model": spec.as_dict(), "engine": {k: eng[k] for k in sorted(eng)}}
    traces = relaxation_traces(ops.H, ops.D, states, grid, mod_cfg["tail_fraction"], method=eng["method"],
                               bounds=hb, dt=eng["dt_override"], meta=meta)
    eps = {}
    for sgn in (1, -1):
        eps[sgn] = epsilon_bound(ops.H, ops.D, specs[sgn], mod_cfg["eps_samples"], None, spec.n_left,
                                 eng["master_seed"], hb, db, tol)
    files, entries = {}, []
    by_label = dict(zip(labels, traces))
    for (s, sgn), tr, st in zip(labels, traces, states):
        tr.epsilon_bound = eps[sgn][0]
        sel = tr.times >= tr.tail_window[0] - 1e-12
        tail_abs = np.abs(tr.r_t[sel])
        stem = f"traces/{key}-s{s}-{'p' if sgn > 0 else 'm'}"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "d_t", "r_t"])
        for row in zip(tr.times, tr.d_t, tr.r_t):
            w.writerow([repr(float(x)) for x in row])
        files[stem + ".csv"] = buf.getvalue()
        files[stem + ".json"] = _dumps(tr.metadata())
        other = by_label[(s, -sgn)]
        entries.append({
            "seed": s, "sign": sgn, "csv": stem + ".csv", "d0_target": st.d0_target,
            "d0_measured": tr.d0_measured, "d0_rel_error": abs(tr.d0_measured - st.d0_target) / abs(st.d0_target),
            "energy_mean": st.energy_mean, "energy_variance": st.energy_variance, "flags": st.flags,
            "long_time_value": tr.long_time_value, "long_time_d": tr.long_time_d,
            "tail_abs_mean": float(tail_abs.mean()), "tail_abs_stderr": _block_stderr(tail_abs),
            "tail_window": list(tr.tail_window),
            "displacement_fraction": (displacement_fraction(tr.d0_measured, spec.n_left, tr.long_time_d)
                                      if spec.geometry in CHAIN_GEOMETRIES and sgn > 0 else None),
            "epsilon_bound": eps[sgn][0], "epsilon_err": eps[sgn][1],
            "max_sign_deviation": float(np.max(np.abs(tr.r_t - other.r_t))),
        })
    payload = {"model": spec.as_dict(), "mod": {"sigma": f["sigma"], "beta": mod_cfg["beta"], "d0": d0,
               "e_center": f["e_center"]}, "t_max": mod_cfg["t_max"], "n_times": mod_cfg["n_times"],
               "traces": entries}
    return payload, {"master_seed": eng["master_seed"], "mod_seeds": seeds}, files


def _work(kind, cfg, spec, key):
    """Compute one sweep point; returns (payload, seeds, files) or raises."""
    if kind == "estimate":
        return _estimate_point(cfg, spec)
    if kind == "oracle":
        return _estimate_point(cfg, spec, exact=True)
    if kind == "equipartition":
        return _equipartition_point(cfg, spec, key)
    if kind == "relax":
        return _relax_point(cfg, spec, key)
    raise ValueError(kind)


def _safe_work(kind, cfg, spec, key):
    try:
        return ("ok",) + _work(kind, cfg, spec, key)
    except Exception as e:  # partial-failure policy: record and continue
        return ("error", {"error_type": type(e).__name__, "message": str(e),
                          "traceback": traceback.format_exc(limit=3)}, {}, {})


# ---------------------------------------------------------------- orchestration

_SECTIONS = {
    "estimate": ("engine", "filter", "estimator"),
    "oracle": ("filter",),
    "equipartition": ("engine", "filter", "estimator"),
    "relax": ("engine", "filter", "mod"),
}
_RECORD_KIND = {"estimate": "eth_report", "oracle": "eth_report", "equipartition": "equipartition_curve",
                "relax": "trace"}


@dataclass
class RunResult:
    out_dir: str
    records: list = field(default_factory=list)
    skipped: int = 0
    failed: int = 0

    @property
    def exit_code(self) -> int:
        return 2 if self.failed else 0


class _Writer:
    """Single writer for records, side files and the manifest."""

    def __init__(self, out_dir, cfg, command):
        self.out = out_dir
        self.cfg = cfg
        self.command = command
        os.makedirs(out_dir, exist_ok=True)
        self._write("config.resolved.json", _dumps(cfg))
        self.manifest_path = os.path.join(out_dir, "manifest.json")
        self.entries = {}
        if os.path.exists(self.manifest_path):
            with open(self.manifest_path) as fh:
                for e in json.load(fh).get("records", []):
                    self.entries[e["path"]] = e

    def _write(self, rel, text):
        path = os.path.join(self.out, rel)
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        tmp = path + ".tmp"
        with open(tmp, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)

    def existing(self, rel, point_hash):
        path = os.path.join(self.out, rel)
        if not os.path.exists(path):
            return None
        try:
            with open(path) as fh:
                rec = json.load(fh)
        except (OSError, ValueError):
            return None
        if rec.get("status") == "ok" and rec.get("provenance", {}).get("point_hash") == point_hash:
            return rec
        return None

    def put(self, rel, rec, files):
        for frel, text in sorted(files.items()):
            self._write(frel, text)
        validate_record(_clean(rec))
        self._write(rel, _dumps(rec))
        self.entries[rel] = {"path": rel, "kind": rec["kind"], "key": rec["key"], "status": rec["status"],
                             "point_hash": rec["provenance"]["point_hash"]}
        self._flush()

    def _flush(self):
        manifest = {"schema_version": SCHEMA_VERSION, "version": __version__, "config_hash": config_hash(self.cfg),
                    "records": [self.entries[k] for k in sorted(self.entries)]}
        self._write("manifest.json", _dumps(manifest))


def _point_hash(kind, cfg, spec, extra=None):
    body = {"kind": kind, "model": spec.as_dict(), "sections": {s: cfg[s] for s in _SECTIONS[kind]}, "extra": extra}
    if spec.W > 0:
        body["disorder"] = _realization_seeds(cfg, spec)
    return _hash(body)


def _run_points(kind: str, cfg: dict, threads: int | None = None, command: str | None = None) -> RunResult:
    out = cfg["output"]["directory"]
    writer = _Writer(out, cfg, command or kind)
    res = RunResult(out)
    extra = {"e_center": cfg["sweep"]["e_center"]} if kind == "equipartition" else None
    todo = []
    for spec in sweep_points(cfg):
        key = ("exact-" if kind == "oracle" else "") + point_key(spec)
        rec_kind = _RECORD_KIND[kind]
        rel = f"records/{rec_kind}/{key}.json"
        ph = _point_hash(kind, cfg, spec, extra)
        done = writer.existing(rel, ph)
        if done is not None:
            res.records.append(done)
            res.skipped += 1
            continue
        todo.append((spec, key, rel, ph, rec_kind))

    def finish(item, result):
        spec, key, rel, ph, rec_kind = item
        status, payload, seeds, files = result
        rec = {
            "schema_version": SCHEMA_VERSION,
            "kind": rec_kind if status == "ok" else "error",
            "key": key,
            "status": status,
            "payload": payload,
            "provenance": {"config_hash": config_hash(cfg), "point_hash": ph, "seeds": seeds,
                           "version": __version__, "command": kind},
        }
        writer.put(rel, rec, files)
        res.records.append(_clean(rec))
        if status != "ok":
            res.failed += 1

    n_workers = max(1, int(threads or 1))
    if n_workers == 1 or len(todo) < 2:
        for item in todo:
            finish(item, _safe_work(kind, cfg, item[0], item[1]))
    else:
        with ProcessPoolExecutor(max_workers=min(n_workers, len(todo))) as pool:
            futs = [pool.submit(_safe_work, kind, cfg, item[0], item[1]) for item in todo]
            for item, fut in zip(todo, futs):
                finish(item, fut.result())
    res.records.sort(key=lambda r: r["key"])
    return res


def run_estimate(cfg, threads=None) -> RunResult:
    return _run_points("estimate", cfg, threads)


def run_oracle(cfg, threads=None) -> RunResult:
    return _run_points("oracle", cfg, threads)


def run_equipartition(cfg, threads=None) -> RunResult:
    return _run_points("equipartition", cfg, threads)


def run_relaxation(cfg, threads=None) -> RunResult:
    res = _run_points("relax", cfg, threads)
    rows = []
    for rec in res.records:
        if rec["status"] != "ok":
            continue
        m = rec["payload"]["model"]
        for t in rec["payload"]["traces"]:
            rows.append([m["n_left"], t["sign"], t["seed"], t["d0_measured"], t["long_time_value"],
                         t["tail_abs_mean"], t["tail_abs_stderr"]])
    rows.sort(key=lambda r: (r[0], -r[1], r[2]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n_left", "sign", "seed", "d0_measured", "long_time_value", "tail_abs_mean", "tail_abs_stderr"])
    for r in rows:
        w.writerow([r[0], r[1], r[2]] + [repr(float(x)) if x is not None else "" for x in r[3:]])
    os.makedirs(os.path.join(res.out_dir, "curves"), exist_ok=True)
    with open(os.path.join(res.out_dir, "curves", "relax_tail.csv"), "w", newline="") as fh:
        fh.write(buf.getvalue())
    return res


def run_scaling(cfg, threads=None) -> RunResult:
    """Estimate every sweep point, then fit ``sigma_prime ~ d_eff**(-gamma)`` on the usable ones."""
    res = _run_points("estimate", cfg, threads)
    pts = []
    for rec in res.records:
        if rec["status"] != "ok":
            continue
        r = rec["payload"]["report"]
        pts.append(ScalingPoint(r["d_eff"], r["sigma_prime"] or 0.0, r.get("sigma_prime_err") or 0.0, rec["key"]))
    pts.sort(key=lambda p: p.d_eff)
    usable = [p for p in pts if p.sigma_prime > 0 and p.d_eff > 0]
    try:
        fit = fit_power_law(usable).to_dict()
        refused = None
    except ValueError as e:
        fit, refused = None, str(e)
    payload = {"points": [p.__dict__ for p in pts], "usable": [p.label for p in usable], "fit": fit,
               "refused": refused, "reference_gamma": 0.5}
    key = "scaling-" + _hash([p.label for p in pts])
    rel = f"records/scaling_fit/{key}.json"
    rec = {
        "schema_version": SCHEMA_VERSION, "kind": "scaling_fit", "key": key, "status": "ok", "payload": payload,
        "provenance": {"config_hash": config_hash(cfg), "point_hash": _hash(payload), "seeds":
                       {"master_seed": cfg["engine"]["master_seed"]}, "version": __version__, "command": "scaling"},
    }
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "d_eff", "sigma_prime", "stderr"])
    for p in pts:
        w.writerow([p.label, repr(float(p.d_eff)), repr(float(p.sigma_prime)), repr(float(p.stderr))])
    writer = _Writer(res.out_dir, cfg, "scaling")
    writer.put(rel, rec, {"curves/scaling.csv": buf.getvalue()})
    res.records.append(_clean(rec))
    return res


RUNNERS = {
    "estimate": run_estimate,
    "oracle": run_oracle,
    "equipartition": run_equipartition,
    "relax": run_relaxation,
    "scaling": run_scaling,
}
