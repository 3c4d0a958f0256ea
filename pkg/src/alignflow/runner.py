"""Scenario execution and artifact emission.

Every run writes its files atomically (temp file + rename) and finishes with
``manifest.json``.  The manifest holds the resolved config, the tool version
and the SHA-256 of each emitted file.  Same config and seed give the same bytes.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import grid as G
from . import particles as P
from . import stability as S
from ._backend import NAME as BACKEND
from .config import canonical_json, config_hash
from .errors import ConfigError
from .kernels import from_spec
from .measures import AtomicMeasure, flat_metric, total_variation, wasserstein
from .rng import SplitMix64


def _clean(obj):
    """JSON-safe copy: numpy scalars to float, NaN/inf to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def json_text(obj) -> str:
    return canonical_json(_clean(obj))


@dataclass
class RunResult:
    files: dict
    summary: dict
    payload: dict = field(default_factory=dict)
    manifest: dict | None = None


# -- particles -----------------------------------------------------------------

def particle_initial(cfg) -> P.ParticleState:
    init = cfg["initial"]
    d = cfg["kernel"]["dim"]
    gen = init["generator"]
    if gen == "explicit":
        x = np.asarray(init["positions"], dtype=float).reshape(-1, d)
        u = np.asarray(init["velocities"], dtype=float).reshape(-1, d)
        masses = init.get("masses")
        if masses is not None:
            masses = np.asarray(masses, dtype=float)
            masses = masses / masses.sum()
        return P.from_arrays(x, u, masses)
    rng = SplitMix64(cfg["seed"])
    n = init["n"]
    lo, hi = init.get("box", [-2.0, 2.0])
    vlo, vhi = init.get("velocity_box", [-1.0, 1.0])
    if gen == "uniform":
        x = rng.uniform(lo, hi, (n, d))
        u = rng.uniform(vlo, vhi, (n, d))
    elif gen == "two_clusters":
        c = float(init.get("centers", 1.5))
        s = float(init.get("spread", 0.5))
        v = float(init.get("speed", 0.5))
        side = np.where(np.arange(n) < n // 2, -1.0, 1.0)
        x = rng.uniform(-s, s, (n, d))
        x[:, 0] += side * c
        u = rng.uniform(vlo, vhi, (n, d))
        u[:, 0] -= side * v
    else:
        raise ConfigError(f"unknown generator {gen!r}")
    return P.from_arrays(x, u)


def _particles(cfg):
    k = from_spec(cfg["kernel"])
    integ = cfg["integrator"]
    state = particle_initial(cfg)
    traj = P.simulate(state, k, integ["t_end"], integ["dt"], integ["formulation"],
                      integ["record_every"], integ["scheme"])
    d = state.dim
    header = ["t", "atom_id"] + [f"x{c}" for c in range(d)] + [f"u{c}" for c in range(d)] + [f"w{c}" for c in range(d)]
    rows = []
    for r, t in enumerate(traj.times):
        for i in range(state.n):
            rows.append([float(t), i, *traj.positions[r, i], *traj.velocities[r, i], *traj.offsets[r, i]])
    diag_rows = [d_.to_row() for d_ in traj.diagnostics]
    for row, tm in zip(diag_rows, traj.trace_mu):
        row["trace_mu"] = float(tm)
    dheader = list(diag_rows[0].keys())
    files = {
        "trajectory.csv": csv_text(header, rows),
        "diagnostics.csv": csv_text(dheader, [[row[h] for h in dheader] for row in diag_rows]),
    }
    summary = particle_summary(traj, k)
    files["summary.json"] = json_text(summary)
    return RunResult(files, summary, {"trajectory": traj, "kernel": k})


def particle_summary(traj: P.Trajectory, k) -> dict:
    E = traj.series("energy")
    t = traj.times
    mom = np.array([d.momentum for d in traj.diagnostics])
    E0 = E[0]
    out = {
        "n_records": int(t.size),
        "energy_initial": E0,
        "energy_final": E[-1],
        "momentum_drift": float(np.max(np.linalg.norm(mom - mom[0], axis=1))),
        "w_drift_max": float(np.max(traj.series("w_drift"))),
        "general_bound_ratio": float(np.max(E / (np.exp(4 * t * k.hess_sup_norm) * E0))) if E0 > 0 else 0.0,
    }
    if k.flags.psd:
        total = E + traj.series("dissipated")
        out["psd_energy_ratio"] = float(np.max(total / E0)) if E0 > 0 else 0.0
    if t.size >= 3 and k.flags.even:
        try:
            out["energy_identity_residual_max"] = float(np.max(P.energy_identity_residual(traj, k)))
        except ValueError:
            pass
    return out


# -- grid ----------------------------------------------------------------------

def grid_initial(cfg, inv_N=None) -> G.GridState:
    init = cfg["initial"]
    return G.init_grid(init["profile"], init["params"], init["L"], init["M"],
                       init["inv_N"] if inv_N is None else inv_N, init["rho_floor"])


def _snapshot_rows(g):
    return [[float(g.time), float(x), float(r), float(m), float(u)]
            for x, r, m, u in zip(g.centers, g.rho, g.mom, g.velocity)]


def _grid(cfg):
    k = from_spec(cfg["kernel"])
    integ = cfg["integrator"]
    g0 = grid_initial(cfg)
    g1, records = G.evolve(g0, k, integ["t_end"], dt=integ["dt"], record_every=integ["record_every"],
                           cfl=integ["cfl"])
    rows = [r.to_row() for r in records]
    header = list(rows[0].keys())
    files = {
        "snapshots.csv": csv_text(["t", "cell_center", "rho", "mom", "u"], _snapshot_rows(g0) + _snapshot_rows(g1)),
        "diagnostics.csv": csv_text(header, [[r[h] for h in header] for r in rows]),
    }
    summary = grid_summary(records, g0, k)
    files["summary.json"] = json_text(summary)
    return RunResult(files, summary, {"initial": g0, "final": g1, "records": records, "kernel": k})


def grid_summary(records, g0, k) -> dict:
    t = np.array([r.time for r in records])
    E = np.array([r.energy for r in records])
    Q = np.array([r.dissipated for r in records])
    mass = np.array([r.mass for r in records])
    mom = np.array([r.momentum[0] for r in records])
    bd = np.array([r.bd_functional for r in records])
    mv = np.array([r.mv_functional for r in records])
    E0 = E[0]
    out = {
        "mass_rel_drift": float(np.max(np.abs(mass - mass[0])) / mass[0]),
        "momentum_drift": float(np.max(np.abs(mom - mom[0]))),
        "energy_initial": E0,
        "energy_final": E[-1],
        "bd_ratio_max": float(np.max(bd) / bd[0]) if bd[0] > 0 else 0.0,
        "mv_ratio_max": float(np.max(mv) / mv[0]) if mv[0] > 0 else 0.0,
        "general_bound_ratio": float(np.max(E / (np.exp(4 * t * k.hess_sup_norm) * E0))) if E0 > 0 else 0.0,
    }
    if k.flags.psd and k.flags.even and E0 > 0:
        out["energy_inequality_ratio"] = float(np.max((E + Q) / E0))
    return out


# -- vanishing viscosity ----------------------------------------------------------

def _study(cfg):
    k = from_spec(cfg["kernel"])
    init = cfg["initial"]
    st = cfg["study"]
    scenario = {"profile": init["profile"], "params": init["params"], "L": init["L"], "M": init["M"],
                "kernel": k, "rho_floor": init["rho_floor"]}
    workers = max(1, int(os.environ.get("SIM_THREADS", "1")))
    rows, ref_energy = G.vanishing_viscosity_study(
        scenario, st["N_list"], st["t_probe"], st["reference"], st["n_reference_particles"],
        cfg["integrator"]["cfl"], workers)
    header = ["N", "flat", "w2", "energy", "defect", "energy_gap_to_reference", "error"]
    table = [[r.to_row()[h] for h in header] for r in rows]
    flats = np.array([r.flat for r in rows])
    summary = {
        "M": init["M"], "L": init["L"], "dt": f"adaptive cfl={cfg['integrator']['cfl']}",
        "N_list": st["N_list"], "kernel": cfg["kernel"]["name"], "reference": st["reference"],
        "config_hash": config_hash(cfg), "t_probe": st["t_probe"], "reference_energy": ref_energy,
        "flat_nonincreasing_10pct": bool(np.all(flats[1:] <= 1.1 * flats[:-1])),
        "flat_ratio_first_last": float(flats[0] / flats[-1]) if flats[-1] > 0 else None,
        "empirical_rates": [float(np.log(flats[i] / flats[i + 1]) / np.log(st["N_list"][i + 1] / st["N_list"][i]))
                            if flats[i + 1] > 0 and flats[i] > 0 else None for i in range(len(rows) - 1)],
        "failures": [r.error for r in rows if r.error],
    }
    files = {"convergence.csv": csv_text(header, table), "summary.json": json_text(summary)}
    return RunResult(files, summary, {"rows": rows})


# -- stability -------------------------------------------------------------------

def strong_from_config(st) -> S.StrongSolution:
    r0, v0 = st["r0"], st["v0"]
    a, b = float(r0.get("a", -1.0)), float(r0.get("b", 1.0))
    quantile = lambda q: a + (b - a) * np.asarray(q, dtype=float)  # noqa: E731
    if v0["kind"] == "tanh":
        amp = float(v0.get("amplitude", 0.5))
        return S.quadratic_exact(quantile, lambda x: -amp * np.tanh(x),
                                 lambda x: -amp / np.cosh(x) ** 2)
    c = float(v0.get("value", 0.0))
    return S.quadratic_exact(quantile, lambda x: np.full_like(np.asarray(x, dtype=float), c),
                             lambda x: np.zeros_like(np.asarray(x, dtype=float)))


def _stability(cfg):
    st = cfg["stability"]
    k = from_spec(cfg["kernel"])
    strong = strong_from_config(st)
    c_star = S.default_c_star(k, strong, st["t_end"], st["c0"])
    files, per_delta, reports = {}, [], []
    for i, delta in enumerate(st["deltas"]):
        _, rep = S.perturbed_run(strong, delta, st["n"], st["t_end"], st["dt"], st["record_every"],
                                 st["perturbation"], k, with_flat=True)
        gr = S.gronwall_check(rep, c_star)
        fk = S.figalli_kang_check(rep, st["C_v"], st["C_T"], st["C_m"])
        reports.append(rep)
        rows = rep.rows()
        header = ["t", "velocity_error", "w2_sq", "trace_mu", "gronwall_rhs", "margin"]
        files[f"stability_{i:02d}.csv"] = csv_text(header, [[r[h] for h in header] for r in rows])
        per_delta.append({
            "delta": delta,
            "gronwall_pass": gr.passed,
            "min_margin": float(np.min(gr.margin)),
            "sup_lhs": float(np.max(rep.lhs)),
            "minimal_constant": S.minimal_constant(rep),
            "minimal_c0": S.minimal_c0(rep, k, strong, st["t_end"], st["c0"]),
            "figalli_kang_pass": fk.passed,
            "figalli_kang_min_margin": float(np.min(fk.margin)),
            "figalli_kang_informative": fk.informative,
            "flat_le_w2": bool(np.all(rep.flat <= np.sqrt(rep.w2_sq) + 1e-9)),
            "initial_terms": rep.initial_terms,
        })
    summary = {"C_star": c_star, "c0": st["c0"], "runs": per_delta,
               "pass": all(p["gronwall_pass"] and p["figalli_kang_pass"] for p in per_delta)}
    files["summary.json"] = json_text(summary)
    return RunResult(files, summary, {"reports": reports, "strong": strong, "kernel": k})


# -- metrics ---------------------------------------------------------------------

def metrics_between(a: AtomicMeasure, b: AtomicMeasure) -> dict:
    out = {"flat": flat_metric(a, b).value, "tv": total_variation(a, b), "w1": None, "w2": None}
    if a.is_probability() and b.is_probability():
        out["w1"] = wasserstein(a, b, 1).value
        out["w2"] = wasserstein(a, b, 2).value
    return out


def _metrics(cfg):
    a = AtomicMeasure.from_json(cfg["metrics"]["a"])
    b = AtomicMeasure.from_json(cfg["metrics"]["b"])
    summary = metrics_between(a, b)
    return RunResult({"metrics.json": json_text(summary)}, summary)


_MODES = {"particles": _particles, "grid": _grid, "vanishing_viscosity": _study,
          "stability": _stability, "metrics": _metrics}


def execute(cfg: dict) -> RunResult:
    """Compute all outputs of a resolved config without touching the disk."""
    result = _MODES[cfg["mode"]](cfg)
    result.files["config.resolved.json"] = canonical_json(cfg)
    return result


def _atomic_write(path: Path, data: bytes):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run(cfg: dict, out_dir) -> RunResult:
    """Execute a resolved config and write outputs plus ``manifest.json``."""
    result = execute(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name in sorted(result.files):
        data = result.files[name].encode("utf-8")
        _atomic_write(out / name, data)
        hashes[name] = hashlib.sha256(data).hexdigest()
    manifest = {"config": cfg, "files": hashes,
                "tool": {"name": "alignflow", "version": __version__, "backend": BACKEND}}
    _atomic_write(out / "manifest.json", canonical_json(manifest).encode("utf-8"))
    result.manifest = manifest
    return result
