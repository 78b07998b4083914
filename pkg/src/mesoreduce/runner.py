"""Scenario orchestration and deterministic artifact writing.

Every run writes CSV series, optional snapshot grids, ``summary.json`` with
the invariant monitors and a ``manifest.json`` listing each file with its
SHA-256. Nothing time- or host-dependent is recorded, so identical config,
seed and version give byte-identical outputs.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .algebra import LiouvillianSpec, ParticleSystem, find_invariance_depth, initial_spec, signature
from .classical import boltzmann_field, build_classical, gaussian_field, h_function, moments, stable_dt, step_classical
from .errors import ConfigError, InvariantBreach, MesoError
from .polynomial import Polynomial
from .quantum import (
    GridBasis,
    build_operators,
    cat_state,
    coherence_metrics,
    dephasing_closed_form,
    evolve_density,
    gaussian_state,
    observables,
    state_from_wavefunction,
    unravel_stochastic,
)
from .scenario import ScenarioConfig
from .wigner import (
    boundary_decay_check,
    evolve_wigner,
    field_integral,
    semiclassical_ratios,
    wigner_forward,
    wigner_inverse,
    wigner_operator,
    wigner_stable_dt,
)

log = logging.getLogger(__name__)

OUT_ENV = "MESOREDUCE_OUT"

# invariant monitor limits
TRACE_TOL = 1e-9
HERMITICITY_TOL = 1e-12
EIGEN_TOL = -1e-8
ORACLE_TOL = 1e-8
MASS_TOL = 1e-10
WIGNER_INTEGRAL_TOL = 1e-6


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        values = [row[c] for c in columns] if isinstance(row, dict) else row
        w.writerow([fmt(v) for v in values])
    return buf.getvalue()


def grid_text(name: str, axes: dict, data) -> str:
    """Snapshot file: comment header naming the axes, one grid row per line."""
    lines = [f"# field {name}"]
    for label, a in axes.items():
        a = np.asarray(a, dtype=float)
        lines.append(f"# axis {label} {len(a)} {fmt(a[0])} {fmt(a[-1])}")
    for row in np.atleast_2d(np.asarray(data, dtype=float)):
        lines.append(" ".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_outputs(series: dict, snapshots: dict, directory, extra: dict | None = None) -> dict:
    """Write CSV series and snapshot texts, then a manifest hashing every file.

    ``series`` maps a file name to ``(columns, rows)``; ``snapshots`` maps
    a relative path to text. Returns the manifest dict.
    """
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, (columns, rows) in series.items():
        files[name] = csv_text(columns, rows).encode()
    for name, text in snapshots.items():
        files[name] = text.encode() if isinstance(text, str) else text
    listing = []
    for name in sorted(files):
        path = root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(files[name])
        listing.append({"path": name, "sha256": sha256(files[name]), "bytes": len(files[name])})
    manifest = dict(extra or {})
    manifest["version"] = __version__
    manifest["files"] = listing
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def verify_manifest(directory) -> list:
    """Paths whose content no longer matches the manifest hash."""
    root = Path(directory)
    manifest = json.loads((root / "manifest.json").read_text())
    bad = []
    for entry in manifest["files"]:
        path = root / entry["path"]
        if not path.exists() or sha256(path.read_bytes()) != entry["sha256"]:
            bad.append(entry["path"])
    return bad


def monitor(value, limit, passed) -> dict:
    return {"value": float(value), "limit": float(limit), "passed": bool(passed)}


@dataclass
class RunResult:
    exit_code: int
    out_dir: Path | None
    summary: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)
    stdout: str = ""


def resolve_out_dir(cfg: ScenarioConfig, out=None) -> Path:
    if out:
        return Path(out)
    env = os.environ.get(OUT_ENV)
    if env:
        return Path(env) / cfg.name
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return Path("runs") / cfg.name


# ---- initial states -------------------------------------------------------


def quantum_initial(cfg: ScenarioConfig, basis: GridBasis):
    s = cfg.raw["initial_state"]
    kind = s["kind"]
    if kind == "gaussian":
        return gaussian_state(basis, s.get("x0", 0.0), s.get("p0", 0.0), s.get("sigma_x", 1.0), s.get("sigma_p"), cfg.hbar)
    if kind == "cat":
        return cat_state(basis, s.get("a", 1.0), s.get("sigma_x", 1.0), cfg.hbar)
    if kind == "sin":
        return state_from_wavefunction(basis, np.sin(s.get("k", 1.0) * basis.x))
    raise ConfigError(f"initial_state/kind: '{kind}' is not available for the {cfg.engine} engine")


def quantum_basis(cfg: ScenarioConfig) -> GridBasis:
    g = cfg.raw["grid"]
    return GridBasis(g["points"], g["x_min"], g["x_max"])


def wigner_parameters(spec: LiouvillianSpec):
    """Potential, mass and gamma for the single-coordinate Wigner equation.

    Decoherence must be generated by V' (or be absent); gamma is rescaled
    from the stored primitive generator to V' itself.
    """
    if len(spec.coordinates) != 1:
        raise ConfigError(f"operator: the Wigner engine needs one coordinate, got {len(spec.coordinates)}")
    (name,) = spec.coordinates
    potential = spec.potential
    mu = float(spec.masses[0]) if spec.kinetic else math.inf
    if not spec.decoherence:
        return potential, mu, 0.0
    force = potential.derivative(name) if name in potential.variables else None
    if len(spec.decoherence) != 1 or force is None or force.is_constant():
        raise ConfigError("operator/decoherence: the Wigner engine needs a single generator proportional to V'")
    scale, prim = force.normalized()
    gamma, g = spec.decoherence[0]
    if g.with_variables(prim.variables) != prim:
        raise ConfigError(f"operator/decoherence: generator {g.to_text()} is not proportional to V' = {force.to_text()}")
    return potential, mu, float(gamma) / float(scale) ** 2


# ---- pipelines -------------------------------------------------------------


def run_reduce(cfg: ScenarioConfig, max_depth=None) -> tuple:
    levels = cfg.levels()
    rows, snaps = [], {}
    for k, spec in enumerate(levels):
        sig = signature(spec)
        rows.append({
            "level": k,
            "coordinates": len(spec.coordinates),
            "hamiltonian_terms": len(spec.hamiltonian),
            "decoherence_terms": len(spec.decoherence),
            "signature": "; ".join(f"{r} {s}" for r, s in sig),
        })
        snaps[f"levels/level_{k}.txt"] = spec.to_text()
    cols = ["level", "coordinates", "hamiltonian_terms", "decoherence_terms", "signature"]
    k = cfg.level if cfg.level is not None else min(1, len(levels) - 1)
    summary = {"levels": len(levels), "printed_level": k, "monitors": {}}
    return {"signatures.csv": (cols, rows)}, snaps, summary, levels[k].to_text()


def _depth(spec, cfg, max_depth):
    depth = min(max_depth, len(cfg.partitions))
    if depth < 1:
        raise ConfigError("partitions: the invariance check needs at least one partition")
    try:
        return find_invariance_depth(spec, cfg.partitions, cfg.moments or None, max_depth=depth)
    except ValueError as exc:
        raise ConfigError(f"partitions: {exc}") from None


def run_check(cfg: ScenarioConfig, max_depth=None) -> tuple:
    if cfg.system is None:
        raise ConfigError("system: the invariance check needs a particle system and partition chain")
    max_depth = max_depth or cfg.max_depth
    kinetic = cfg.raw["system"].get("kinetic", True)
    sys_ = cfg.system
    zero = Polynomial()
    variants = {
        "full": sys_,
        "pair": ParticleSystem(sys_.masses, sys_.pair_couplings, sys_.external_couplings, sys_.pair_potential, zero),
        "external": ParticleSystem(sys_.masses, {}, sys_.external_couplings, zero, sys_.external_potential),
    }
    rows, lines = [], []
    depths = {}
    for label, system in variants.items():
        d = _depth(initial_spec(system, kinetic=kinetic), cfg, max_depth)
        depths[label] = d
        rows.append({"term": label, "depth": "none" if d is None else d})
        lines.append(f"{label}: {'none within max depth' if d is None else d}")
    summary = {"invariance_depth": depths, "max_depth": max_depth, "monitors": {}}
    return {"invariance.csv": (["term", "depth"], rows)}, {}, summary, "\n".join(lines) + "\n"


def run_quantum(cfg: ScenarioConfig, seed=None) -> tuple:
    spec = cfg.target_operator()
    basis = quantum_basis(cfg)
    integ = cfg.integrator
    dt, steps = integ["dt"], integ["steps"]
    save_every = integ.get("save_every", steps)
    try:
        ops = build_operators(spec, basis, cfg.hbar, integ.get("stencil_order", 2))
    except ValueError as exc:
        raise ConfigError(f"operator: {exc}") from None
    rho0 = quantum_initial(cfg, basis)
    cols = ["t", "trace", "purity", "offdiag_l1", "mean_x", "mean_p2", "min_eigenvalue", "boundary_max"]
    rows, snaps = [], {}
    want_snaps = integ.get("snapshots", True)

    def observe(t, rho):
        row = {"t": t, **observables(rho, cfg.hbar)}
        row["boundary_max"] = boundary_decay_check(rho)["relative"]
        rows.append(row)
        if want_snaps:
            idx = len(rows) - 1
            axes = {"x": basis.x, "x'": basis.x}
            snaps[f"snapshots/rho_{idx:04d}_re.txt"] = grid_text("rho_re", axes, rho.data.real)
            snaps[f"snapshots/rho_{idx:04d}_im.txt"] = grid_text("rho_im", axes, rho.data.imag)

    traj = evolve_density(ops, rho0, dt, steps, save_every=save_every, observer=observe)
    mons = {
        "trace_drift": monitor(max(traj.trace_drift), TRACE_TOL, max(traj.trace_drift) <= TRACE_TOL),
        "hermiticity_residue": monitor(traj.max_asymmetry, HERMITICITY_TOL, traj.max_asymmetry <= HERMITICITY_TOL),
        "min_eigenvalue": monitor(min(r["min_eigenvalue"] for r in rows), EIGEN_TOL,
                                  min(r["min_eigenvalue"] for r in rows) >= EIGEN_TOL),
    }
    if not spec.kinetic:
        exact = dephasing_closed_form(spec, rho0, basis, cfg.hbar, traj.times[-1])
        dev = float(np.linalg.norm(traj.final().data - exact.data) / np.linalg.norm(exact.data))
        mons["oracle_deviation"] = monitor(dev, ORACLE_TOL, dev <= ORACLE_TOL)
    series = {"observables.csv": (cols, rows)}
    n_traj = integ.get("trajectories", 0)
    if n_traj:
        seed = cfg.seed if seed is None else seed
        st = unravel_stochastic(ops, rho0, dt, steps, n_traj, seed, save_every=save_every)
        urows = []
        for t, rm, rs in zip(traj.times, traj.states, st.states):
            off_m = coherence_metrics(rm)["offdiag_l1"]
            diff = rs.operator() - rm.operator()
            off_err = float(np.abs(diff - np.diag(np.diag(diff))).sum())
            urows.append({"t": t, "offdiag_l1_master": off_m, "offdiag_l1_unraveled": coherence_metrics(rs)["offdiag_l1"],
                          "offdiag_error": off_err / off_m if off_m else 0.0})
        series["unraveling.csv"] = (list(urows[0]), urows)
        err = max(r["offdiag_error"] for r in urows)
        mons["unraveling_error"] = monitor(err, 3 / math.sqrt(n_traj), err <= 3 / math.sqrt(n_traj))
    return series, snaps, {"monitors": mons, "t_final": traj.times[-1]}


def run_classical(cfg: ScenarioConfig) -> tuple:
    spec = cfg.target_operator()
    g = cfg.raw["phase_grid"]
    try:
        ops = build_classical(spec, g["x"], g["p"])
    except ValueError as exc:
        raise ConfigError(f"phase_grid: {exc}") from None
    s = cfg.raw["initial_state"]
    if s["kind"] == "gaussian":
        f = gaussian_field(ops, s.get("x0", 0.0), s.get("p0", 0.0), s.get("sigma_x", 1.0), s.get("sigma_p", 1.0))
    elif s["kind"] == "boltzmann":
        f = boltzmann_field(ops, spec, s.get("theta", 1.0))
    else:
        raise ConfigError(f"initial_state/kind: '{s['kind']}' is not available for the classical engine")
    integ = cfg.integrator
    dt, steps = integ["dt"], integ["steps"]
    save_every = integ.get("save_every", steps)
    want_snaps = integ.get("snapshots", True) and ops.n_coords == 1
    rows, snaps = [], {}
    mass0 = f.mass()
    low = float(f.data.min())

    def observe(t, field_):
        rows.append({"t": t, **moments(field_, ops), "H": h_function(field_)})
        if want_snaps:
            idx = len(rows) - 1
            snaps[f"snapshots/field_{idx:04d}.txt"] = grid_text("rho", {"x": field_.axes[0], "p": field_.axes[1]}, field_.data)

    observe(0.0, f)
    for n in range(1, steps + 1):
        f = step_classical(ops, f, dt)
        low = min(low, float(f.data.min()))
        if n % save_every == 0 or n == steps:
            observe(n * dt, f)
    cols = list(rows[0])
    drift = max(abs(r["mass"] - mass0) for r in rows) / mass0
    mons = {
        "mass_drift": monitor(drift, MASS_TOL, drift <= MASS_TOL),
        "min_value": monitor(low, -1e-14, low >= -1e-14),
        "cfl_dt": monitor(dt, stable_dt(ops), True),
    }
    return {"observables.csv": (cols, rows)}, snaps, {"monitors": mons, "t_final": steps * dt}


def _wigner_row(t, w, potential, hbar, rho=None):
    r = semiclassical_ratios(w, potential, hbar)
    row = {"t": t, "integral": field_integral(w), "min_value": float(w.data.min()), **r}
    row["boundary_max"] = boundary_decay_check(rho if rho is not None else wigner_inverse(w, hbar))["relative"]
    return row


def run_wigner(cfg: ScenarioConfig) -> tuple:
    spec = cfg.target_operator()
    potential, mu, gamma = wigner_parameters(spec)
    basis = quantum_basis(cfg)
    rho0 = quantum_initial(cfg, basis)
    w0 = wigner_forward(rho0, cfg.hbar)
    integ = cfg.integrator
    dt, steps = integ["dt"], integ["steps"]
    save_every = integ.get("save_every", steps)
    traj = evolve_wigner(w0, potential, mu, cfg.hbar, gamma, dt, steps, save_every)
    rows, snaps = [], {}
    for idx, (t, w) in enumerate(traj):
        rows.append(_wigner_row(t, w, potential, cfg.hbar))
        if integ.get("snapshots", True):
            snaps[f"snapshots/wigner_{idx:04d}.txt"] = grid_text("wigner", {"x": w.axes[0], "p": w.axes[1]}, w.data)
    i0 = rows[0]["integral"]
    drift = max(abs(r["integral"] - i0) for r in rows)
    mons = {"integral_drift": monitor(drift, WIGNER_INTEGRAL_TOL, drift <= WIGNER_INTEGRAL_TOL)}
    cols = ["t", "integral", "min_value", "ratio34", "ratio35", "boundary_max"]
    return {"observables.csv": (cols, rows)}, snaps, {"monitors": mons, "gamma_wigner": gamma, "t_final": traj[-1][0]}


def run_compare(cfg: ScenarioConfig) -> tuple:
    """Quantum master equation vs truncated Wigner equation on one scenario."""
    spec = cfg.target_operator()
    potential, mu, gamma = wigner_parameters(spec)
    basis = quantum_basis(cfg)
    integ = cfg.integrator
    dt, steps = integ["dt"], integ["steps"]
    save_every = integ.get("save_every", steps)
    ops = build_operators(spec, basis, cfg.hbar, integ.get("stencil_order", 2))
    rho0 = quantum_initial(cfg, basis)
    traj = evolve_density(ops, rho0, dt, steps, save_every=save_every)
    w = wigner_forward(rho0, cfg.hbar)
    limit = wigner_stable_dt(wigner_operator(w, potential, mu, cfg.hbar, gamma))
    rows = []
    prev = 0.0
    for t, rho in zip(traj.times, traj.states):
        if t > prev:
            n = max(1, math.ceil((t - prev) / limit))
            w = evolve_wigner(w, potential, mu, cfg.hbar, gamma, (t - prev) / n, n)[-1][1]
            prev = t
        ref = wigner_forward(rho, cfg.hbar)
        diff = float(np.max(np.abs(w.data - ref.data)))
        rows.append({"t": t, "max_abs_diff": diff, "rel_diff": diff / float(np.max(np.abs(ref.data)))})
    summary = {"monitors": {}, "final_rel_diff": rows[-1]["rel_diff"], "gamma_wigner": gamma}
    return {"compare.csv": (["t", "max_abs_diff", "rel_diff"], rows)}, {}, summary


def run(cfg: ScenarioConfig, command: str = "evolve", out=None, seed=None, max_depth=None) -> RunResult:
    """Execute one scenario; errors become exit codes, artifacts go to disk."""
    out_dir = resolve_out_dir(cfg, out)
    seed = cfg.seed if seed is None else seed
    stdout = ""
    try:
        if command == "reduce" or (command == "evolve" and cfg.engine == "reduce-only"):
            series, snaps, summary, stdout = run_reduce(cfg)
        elif command == "check":
            series, snaps, summary, stdout = run_check(cfg, max_depth)
        elif command == "compare":
            series, snaps, summary = run_compare(cfg)
        elif command == "evolve":
            pipeline = {"quantum": lambda: run_quantum(cfg, seed), "classical": lambda: run_classical(cfg),
                        "wigner": lambda: run_wigner(cfg)}[cfg.engine]
            series, snaps, summary = pipeline()
        else:
            raise ConfigError(f"unknown command {command!r}")
    except MesoError as exc:
        log.debug("run failed: %s", exc)
        return RunResult(exc.exit_code, None, {"error": str(exc)}, {}, stdout)
    breaches = sorted(k for k, m in summary.get("monitors", {}).items() if not m["passed"])
    code = InvariantBreach.exit_code if breaches else 0
    summary = {"name": cfg.name, "command": command, "engine": cfg.engine, "seed": seed,
               "breaches": breaches, "exit_code": code, **summary}
    snaps = dict(snaps)
    snaps["summary.json"] = json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n"
    manifest = write_outputs(series, snaps, out_dir,
                             {"name": cfg.name, "command": command, "seed": seed, "config": cfg.raw})
    if breaches:
        log.warning("invariant monitors failed: %s", ", ".join(breaches))
    return RunResult(code, out_dir, summary, manifest, stdout)


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")
