"""Scenario pipelines: solve -> factorize -> residuals/scf/diagnostics -> emergence.

Each stage writes versioned JSON reports and flat CSV curves into the output
directory; a manifest with per-stage status, timings and file checksums is
written at the end (and also when a stage fails, flagging the failure while
leaving earlier artifacts intact).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse.linalg as sla

from .clockwork import (
    classical_trajectory,
    clock_quality,
    discrete_group_velocity,
    discrete_kinetic_energy,
    marginal_ansatz,
    tick_schedule,
)
from .config import (
    Scenario,
    apply_overrides,
    build_scenario,
    clock_phase_field,
    load_config,
    physics_issues,
)
from .coupled_scf import ScfConfig, extract_multipliers, scf_solve
from .emergence import (
    chain_rule_fields,
    directional_derivative_2d,
    emergence_compare,
    gauge_to_tdse_frame,
    mass_scaling_fit,
    slice_conditional,
    tdse_propagate,
)
from .errors import ConfigurationError, StageFailure
from .factorization import FactorizedState, factorize, reconstruct
from .lattice import build_hamiltonian
from .spectral import select_state, solve_eigenpairs
from .statedump import save_factorized, save_state

ARTIFACT_VERSION = 1


@dataclass
class StageRecord:
    name: str
    status: str = "pending"   # ok | failed | pending
    seconds: float = 0.0
    error: str = ""


@dataclass
class RunManifest:
    scenario: str
    scenario_hash: str
    artifact_version: int
    seed: int
    stages: list = field(default_factory=list)
    files: dict = field(default_factory=dict)
    out_dir: str = ""


# -- serialization helpers ----------------------------------------------------------


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else None
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    return v


def _write_json(path, obj):
    obj = dict(obj)
    obj["schema_version"] = ARTIFACT_VERSION
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for v in row])


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _scenario_hash(raw):
    return hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()[:16]


# -- physics helpers ----------------------------------------------------------------


def _build_h(s: Scenario):
    return build_hamiltonian(
        s.grid, s.system_potential, s.clock_potential, s.interaction_potential,
        s.solve["fd_order"],
    )


def _system_ground(h):
    """Ground pair of the isolated system Hamiltonian on the system grid."""
    g = h.grid
    mat = h.system_matrix()
    n = mat.shape[0]
    if n <= 1024:
        vals, vecs = la.eigh(mat.toarray())
    else:
        vals, vecs = sla.eigsh(mat, k=1, which="SA", tol=1e-12)
    psi0 = vecs[:, 0] / np.sqrt(np.sum(np.abs(vecs[:, 0]) ** 2) * g.system_weight)
    return float(vals[0]), psi0.reshape(g.system_shape)


def _auto_target(s: Scenario, h):
    """Clock plane-wave kinetic energy plus the isolated system ground energy."""
    if s.clock_model is None:
        raise ConfigurationError("target_energy='auto' needs a [clock] section")
    e0, _ = _system_ground(h)
    ek = sum(
        discrete_kinetic_energy(ax, p, s.solve["fd_order"])
        for ax, p in zip(s.grid.clock_axes, s.clock_model.momenta)
    )
    return ek + e0 + s.solve["target_shift"]


def _solve_state(s: Scenario, h):
    """Solve the composite eigenproblem and select the working state."""
    slv = s.solve
    target = None
    if slv["which"] == "nearest":
        target = _auto_target(s, h) if slv["target_energy"] == "auto" else float(
            slv["target_energy"]
        )
    states = solve_eigenpairs(h, slv["how_many"], slv["which"], target, slv["tol"])
    if slv["selection"] == "ground":
        state = select_state(states)
    else:
        x, _ = marginal_ansatz(s.clock_model, s.grid)
        _, psi0 = _system_ground(h)
        n_sys = len(s.grid.system_axes)
        ref = x.reshape(x.shape + (1,) * n_sys) * psi0
        state = select_state(states, "max_overlap", ref, slv["degeneracy_gap"])
    return state, len(states), target


def _factorize_state(s: Scenario, state):
    gauge = "zero_phase" if s.solve["gauge"] == "zero_phase" else clock_phase_field(s)
    return factorize(state, gauge=gauge)


def _interp_clock_field(ax, f: FactorizedState, fld, positions):
    """Linear interpolation of a 1D clock field at trajectory positions,
    skipping masked points (periodic axes wrap)."""
    good = ~f.node_mask
    xp = ax.points[good]
    fp = np.asarray(fld)[good]
    positions = np.atleast_1d(np.asarray(positions, dtype=float))
    if ax.boundary == "periodic":
        return np.interp(positions, xp, fp, period=ax.max - ax.min)
    return np.interp(positions, xp, fp)


def _emergence_single(s: Scenario, h, f: FactorizedState):
    """Slice, gauge, propagate and compare for a single-axis clock scenario."""
    model = s.clock_model
    g = s.grid
    ax = g.clock_axes[0]
    e = s.emergence
    window = (0.0, float(e["window"]))
    if model.kind == "harmonic":
        traj = classical_trajectory(model, e["initial"], window)
    else:
        vel = None
        if e["trajectory_velocity"] == "discrete":
            vel = model.sign * discrete_group_velocity(
                ax, model.momenta[0], s.solve["fd_order"]
            )
        traj = classical_trajectory(model, e["initial"], window, velocity=vel)
    interval = (window[1] - window[0]) / int(e["ticks"])
    ticks = tick_schedule(traj, interval, float(e["min_speed"]))

    res = extract_multipliers(f, h)
    slices = slice_conditional(f, traj, ticks)
    lam_along = _interp_clock_field(
        ax, f, np.nan_to_num(res.local_energy), ticks.marking_positions
    )
    gauged, gauge = gauge_to_tdse_frame(
        slices, model, lam_along, ax, kinetic=e["kinetic"], fd_order=s.solve["fd_order"]
    )
    states, drift = tdse_propagate(h, traj, gauged[0].state, ticks, int(e["substeps"]))
    report = emergence_compare(gauged, states, g.system_weight, model, traj)
    return report, ticks, drift


def _emergence_two_handle(s: Scenario, f: FactorizedState):
    """Chain-rule consistency analysis for a two-handle clock.

    Compares along-trajectory differencing of the conditional slices with the
    single-contraction directional derivative, and reports the phase-rate
    ratio of the deliberate per-axis-sum variant (predicted factor 2).
    """
    model = s.clock_model
    g = s.grid
    e = s.emergence
    v = model.sign * np.asarray(model.momenta) / model.mass
    window = (0.0, float(e["window"]))
    traj = classical_trajectory(model, (0.0, 0.0), window)
    interval = (window[1] - window[0]) / int(e["ticks"])
    ticks = tick_schedule(traj, interval, float(e["min_speed"]))
    slices = directional_derivative_2d(f, v, ticks, initial=(0.0, 0.0))

    directional, per_axis = chain_rule_fields(f, v, s.solve["fd_order"])
    f_dir = FactorizedState(g, f.marginal, directional, f.gauge_phase, f.node_mask)
    f_per = FactorizedState(g, f.marginal, per_axis, f.gauge_phase, f.node_mask)

    w = g.system_weight
    match_err = 0.0
    ratios = []
    for k in range(1, len(slices) - 1):
        dt = slices[k + 1].time - slices[k - 1].time
        # conditional slices are locally unit-normalized, so centered
        # differencing of the normalized slices approximates dPsi/dt
        ds = (slices[k + 1].state - slices[k - 1].state) / dt
        raw_dir, _ = _raw_interp(f_dir, slices[k].source_R)
        num = math.sqrt(max(np.vdot(ds - raw_dir, ds - raw_dir).real * w, 0.0))
        den = math.sqrt(max(np.vdot(raw_dir, raw_dir).real * w, 1e-300))
        match_err = max(match_err, num / den)
        psi = slices[k].state
        rate_dir = abs(complex(np.vdot(psi, raw_dir) * w).imag)
        raw_per, _ = _raw_interp(f_per, slices[k].source_R)
        rate_per = abs(complex(np.vdot(psi, raw_per) * w).imag)
        if rate_dir > 1e-12:
            ratios.append(rate_per / rate_dir)
    return {
        "kind": "two_handle",
        "slice_match_error": match_err,
        "phase_rate_ratio_mean": float(np.mean(ratios)) if ratios else None,
        "ticks": len(slices),
        "max_interpolation_error": max(sl.interpolation_error for sl in slices),
    }


def _raw_interp(f, r_vec):
    from .emergence import _interp_slice

    return _interp_slice(f, r_vec)


# -- sweep worker (module-level for process pools) ---------------------------------


def _sweep_point(args):
    raw, overrides = args
    s = build_scenario(apply_overrides(raw, overrides))
    h = _build_h(s)
    state, _, _ = _solve_state(s, h)
    f = _factorize_state(s, state)
    report, ticks, drift = _emergence_single(s, h, f)
    return {
        "overrides": overrides,
        "min_fidelity": report.min_fidelity,
        "norm_drift": drift,
        "curve": [list(p) for p in report.fidelity_curve],
        "second_order": [list(p) for p in report.second_order_magnitude],
        "harmonic": (
            [list(p) for p in report.harmonic_correction_magnitude]
            if report.harmonic_correction_magnitude is not None else None
        ),
        "kept_ticks": int(len(ticks.times)),
        "dropped_ticks": int(len(ticks.dropped_times)),
    }


# -- stages -------------------------------------------------------------------------


def _stage_solve(s, ctx, out):
    h = _build_h(s)
    state, n_cand, target = _solve_state(s, h)
    ctx["h"] = h
    ctx["state"] = state
    save_state(os.path.join(out, "state.npz"), state)
    _write_json(os.path.join(out, "solve.json"), {
        "energy": state.energy,
        "residual": state.residual,
        "degenerate": state.degenerate,
        "candidates": n_cand,
        "target_energy": target,
        "fd_order": s.solve["fd_order"],
    })
    return ["state.npz", "solve.json"]


def _stage_factorize(s, ctx, out):
    f = _factorize_state(s, ctx["state"])
    ctx["f"] = f
    g = s.grid
    phi = reconstruct(f)
    rec_err = float(np.max(np.abs(phi - ctx["state"].amplitudes)))
    local = g.local_inner(f.conditional, f.conditional).real
    cond_dev = float(np.max(np.abs(np.where(f.node_mask, 0.0, local - 1.0))))
    marg_norm = float(np.sum(f.rho_mar) * g.clock_weight)
    from .factorization import effective_clock_potential

    u_c, max_imag = effective_clock_potential(f, ctx["h"])
    save_factorized(os.path.join(out, "factorized.npz"), f)
    _write_json(os.path.join(out, "factorize.json"), {
        "marginal_norm": marg_norm,
        "max_conditional_norm_deviation": cond_dev,
        "max_reconstruction_error": rec_err,
        "node_fraction": float(f.node_mask.mean()),
        "gauge": s.solve["gauge"],
        "effective_potential_max_imag": max_imag,
    })
    coords = [ax.points for ax in g.clock_axes]
    header = [ax.label for ax in g.clock_axes] + ["rho_mar", "u_c"]
    rows = []
    for idx in np.ndindex(g.clock_shape):
        rows.append([coords[n][idx[n]] for n in range(len(idx))]
                    + [float(f.rho_mar[idx]), float(u_c[idx])])
    _write_csv(os.path.join(out, "marginal_density.csv"), header, rows)
    return ["factorized.npz", "factorize.json", "marginal_density.csv"]


def _stage_residuals(s, ctx, out):
    res = extract_multipliers(ctx["f"], ctx["h"])
    ctx["residuals"] = res
    _write_json(os.path.join(out, "residuals.json"), {
        "epsilon": res.epsilon,
        "epsilon_minus_energy": res.epsilon - ctx["state"].energy,
        "integral_defect": res.integral_defect,
        "epsilon_defect": res.epsilon_defect,
        "marginal_residual_norm": res.marginal_norm,
        "conditional_residual_norm": res.conditional_norm,
        "max_imag": res.max_imag,
    })
    g = s.grid
    coords = [ax.points for ax in g.clock_axes]
    header = [ax.label for ax in g.clock_axes] + ["local_energy"]
    rows = []
    for idx in np.ndindex(g.clock_shape):
        rows.append([coords[n][idx[n]] for n in range(len(idx))]
                    + [float(res.local_energy[idx])])
    _write_csv(os.path.join(out, "local_energy.csv"), header, rows)
    return ["residuals.json", "local_energy.csv"]


def _stage_scf(s, ctx, out):
    cfg = ScfConfig(
        max_iterations=int(s.scf["max_iterations"]),
        mixing=float(s.scf["mixing"]),
        tolerance=float(s.scf["tolerance"]),
        initial_guess=s.scf["initial_guess"],
    )
    if "h" not in ctx:
        ctx["h"] = _build_h(s)
    result = scf_solve(ctx["h"], cfg)
    ctx["scf"] = result
    fidelity = None
    if "state" in ctx:
        g = s.grid
        phi = reconstruct(result.state)
        fidelity = float(abs(g.inner(phi, ctx["state"].amplitudes)))
    _write_json(os.path.join(out, "scf.json"), {
        "converged": result.converged,
        "iterations": result.iterations,
        "marginal_residual_norm": result.residuals.marginal_norm,
        "conditional_residual_norm": result.residuals.conditional_norm,
        "epsilon": result.residuals.epsilon,
        "fidelity_vs_solve": fidelity,
    })
    _write_csv(
        os.path.join(out, "scf_trace.csv"),
        ["iteration", "marginal_residual", "conditional_residual", "epsilon"],
        [(int(i), m, c, e) for i, m, c, e in result.trace],
    )
    return ["scf.json", "scf_trace.csv"]


def _stage_clock_quality(s, ctx, out):
    q = clock_quality(ctx["f"], ctx["h"])
    _write_json(os.path.join(out, "clock_quality.json"), {
        "adiabaticity_ratio": q.adiabaticity_ratio,
        "mean_field_momentum": q.mean_field_momentum,
        "u_c_flatness": q.u_c_flatness,
        "energy_ratio": q.energy_ratio,
    })
    return ["clock_quality.json"]


def _stage_emergence(s, ctx, out, workers):
    files = []
    if s.clock_model is not None and s.clock_model.kind == "two_handle":
        summary = _emergence_two_handle(s, ctx["f"])
        _write_json(os.path.join(out, "emergence.json"), summary)
        return ["emergence.json"]

    if s.sweep is not None:
        jobs = []
        for i, v in enumerate(s.sweep["values"]):
            ov = {s.sweep["parameter"]: v}
            for path, vals in s.sweep["links"].items():
                ov[path] = vals[i]
            jobs.append((s.raw, ov))
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                points = list(pool.map(_sweep_point, jobs))
        else:
            points = [_sweep_point(j) for j in jobs]
        scaling = [
            (float(v), 1.0 - p["min_fidelity"])
            for v, p in zip(s.sweep["values"], points)
        ]
        slope = mass_scaling_fit(scaling)
        last = points[-1]
        _write_json(os.path.join(out, "emergence.json"), {
            "sweep_parameter": s.sweep["parameter"],
            "sweep_values": list(s.sweep["values"]),
            "min_fidelity": [p["min_fidelity"] for p in points],
            "norm_drift": max(p["norm_drift"] for p in points),
            "mass_scaling_slope": slope,
            "kept_ticks": [p["kept_ticks"] for p in points],
            "dropped_ticks": [p["dropped_ticks"] for p in points],
        })
        _write_csv(
            os.path.join(out, "mass_scaling.csv"),
            ["value", "one_minus_min_fidelity"],
            scaling,
        )
        files += ["emergence.json", "mass_scaling.csv"]
        curve = last["curve"]
        second = last["second_order"]
        harmonic = last["harmonic"]
    else:
        report, ticks, drift = _emergence_single(s, ctx["h"], ctx["f"])
        _write_json(os.path.join(out, "emergence.json"), {
            "min_fidelity": report.min_fidelity,
            "norm_drift": drift,
            "kept_ticks": int(len(ticks.times)),
            "dropped_ticks": int(len(ticks.dropped_times)),
        })
        files.append("emergence.json")
        curve = report.fidelity_curve
        second = report.second_order_magnitude
        harmonic = report.harmonic_correction_magnitude

    _write_csv(os.path.join(out, "fidelity_curve.csv"), ["time", "fidelity"], curve)
    files.append("fidelity_curve.csv")
    rows = []
    hmap = dict(harmonic) if harmonic else {}
    for t, mag in second:
        rows.append((t, mag, hmap.get(t, float("nan"))))
    _write_csv(
        os.path.join(out, "corrections.csv"),
        ["time", "second_order_magnitude", "harmonic_correction"],
        rows,
    )
    files.append("corrections.csv")
    return files


_STAGES = {
    "solve": _stage_solve,
    "factorize": _stage_factorize,
    "residuals": _stage_residuals,
    "scf": _stage_scf,
    "clock_quality": _stage_clock_quality,
    "emergence": _stage_emergence,
}


# -- entry points -------------------------------------------------------------------


def validate(config_path) -> list:
    """Schema plus physics sanity checks; returns the issue list (empty = valid)."""
    raw = load_config(config_path)
    scenario = build_scenario(raw)
    return physics_issues(scenario)


def run(config_path, out_dir, workers: int = 1, seed=None, stages=None) -> RunManifest:
    """Execute the scenario pipeline and write all artifacts plus a manifest.

    stages optionally restricts the run to a subset of the configured
    pipeline (dependencies are re-checked).  Raises ConfigurationError on
    schema/physics problems (before any file is written) and StageFailure
    when a stage errors (earlier artifacts and the manifest survive).
    """
    raw = load_config(config_path)
    if seed is not None:
        raw["scenario"]["seed"] = str(int(seed))
    scenario = build_scenario(raw)
    issues = physics_issues(scenario)
    if issues:
        raise ConfigurationError("; ".join(issues))

    pipeline = list(scenario.pipeline)
    if stages:
        requested = [st.strip() for st in stages]
        unknown = [st for st in requested if st not in _STAGES]
        if unknown:
            raise ConfigurationError(f"unknown stages {unknown}")
        pipeline = [st for st in pipeline if st in requested]
        from .config import STAGE_DEPS

        done = set()
        for st in pipeline:
            missing = [d for d in STAGE_DEPS.get(st, ()) if d not in done]
            if missing:
                raise ConfigurationError(f"stage {st!r} requires {missing} in the run")
            done.add(st)
    if not pipeline:
        raise ConfigurationError("empty pipeline after stage selection")

    os.makedirs(out_dir, exist_ok=True)
    manifest = RunManifest(
        scenario=scenario.name,
        scenario_hash=_scenario_hash(raw),
        artifact_version=ARTIFACT_VERSION,
        seed=scenario.seed,
        out_dir=str(out_dir),
    )
    np.random.seed(scenario.seed)

    ctx = {}
    for name in pipeline:
        record = StageRecord(name)
        manifest.stages.append(record)
        t0 = time.perf_counter()
        try:
            if name == "emergence":
                produced = _stage_emergence(scenario, ctx, out_dir, workers)
            else:
                produced = _STAGES[name](scenario, ctx, out_dir)
        except Exception as exc:
            record.seconds = time.perf_counter() - t0
            record.status = "failed"
            record.error = str(exc)
            _write_manifest(manifest, out_dir)
            raise StageFailure(name, exc)
        record.seconds = time.perf_counter() - t0
        record.status = "ok"
        for fname in produced:
            manifest.files[fname] = _sha256(os.path.join(out_dir, fname))
    _write_manifest(manifest, out_dir)
    return manifest


def _write_manifest(manifest: RunManifest, out_dir):
    payload = {
        "scenario": manifest.scenario,
        "scenario_hash": manifest.scenario_hash,
        "artifact_version": manifest.artifact_version,
        "seed": manifest.seed,
        "stages": [
            {"name": r.name, "status": r.status, "seconds": r.seconds, "error": r.error}
            for r in manifest.stages
        ],
        "files": dict(manifest.files),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
