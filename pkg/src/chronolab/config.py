"""Scenario configuration: INI schema, parsing and physics validation."""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field

import numpy as np

from .clockwork import ClockModel
from .errors import ConfigurationError
from .lattice import Axis, PotentialSpec, ProductGrid

KNOWN_STAGES = ("solve", "factorize", "residuals", "scf", "clock_quality", "emergence")

# stage -> stages that must run first
STAGE_DEPS = {
    "factorize": ("solve",),
    "residuals": ("factorize",),
    "clock_quality": ("factorize",),
    "emergence": ("factorize",),
    "scf": (),
}

_AXIS_KEYS = {"role", "count", "min", "max", "boundary", "mass"}
_SOLVE_DEFAULTS = {
    "how_many": 1,
    "which": "lowest",
    "target_energy": "auto",
    "target_shift": 0.0,
    "tol": 1e-8,
    "fd_order": 2,
    "selection": "ground",
    "degeneracy_gap": 1e-9,
    "gauge": "zero_phase",
}
_SCF_DEFAULTS = {
    "max_iterations": 200,
    "mixing": 0.3,
    "tolerance": 1e-6,
    "initial_guess": "separable_product",
}
_EMERGENCE_DEFAULTS = {
    "window": 10.0,
    "ticks": 40,
    "min_speed": 0.0,
    "substeps": 8,
    "kinetic": "discrete",
    "trajectory_velocity": "discrete",
    "initial": 0.0,
}


@dataclass
class Scenario:
    name: str
    grid: ProductGrid
    system_potential: PotentialSpec
    clock_potential: PotentialSpec
    interaction_potential: PotentialSpec
    clock_model: ClockModel | None
    pipeline: tuple
    solve: dict
    scf: dict
    emergence: dict
    sweep: dict | None
    seed: int = 0
    raw: dict = field(default_factory=dict, repr=False)


def _typed(section, key, value):
    """Coerce a raw string to int/float/str following the schema."""
    int_keys = {"count", "how_many", "fd_order", "max_iterations", "ticks",
                "substeps", "seed", "handle_ratio", "sign"}
    str_keys = {"role", "boundary", "name", "kind", "which", "selection", "gauge",
                "initial_guess", "kinetic", "trajectory_velocity", "envelope",
                "pipeline", "description", "parameter"}
    if key in int_keys:
        try:
            return int(value)
        except ValueError:
            raise ConfigurationError(f"[{section}] {key}: expected integer, got {value!r}")
    if key in str_keys:
        return value.strip()
    if key == "target_energy" and value.strip() == "auto":
        return "auto"
    try:
        return float(value)
    except ValueError:
        raise ConfigurationError(f"[{section}] {key}: expected number, got {value!r}")


def _float_list(section, key, value):
    try:
        return [float(v) for v in value.replace(",", " ").split()]
    except ValueError:
        raise ConfigurationError(f"[{section}] {key}: expected a list of numbers, got {value!r}")


def load_config(path) -> dict:
    """Parse the INI file into a nested dict of typed values (no physics yet)."""
    cp = configparser.ConfigParser()
    # keys carry axis labels (omega_R, center_phi1); keep their case
    cp.optionxform = str
    read = cp.read(path)
    if not read:
        raise ConfigurationError(f"config file {path!r} is missing or unreadable")
    raw = {}
    for section in cp.sections():
        raw[section] = {k: v for k, v in cp.items(section)}
    if "scenario" not in raw:
        raise ConfigurationError("missing [scenario] section")
    return raw


def _build_axes(raw):
    axes = {"system": [], "clock": []}
    for section, items in raw.items():
        if not section.startswith("axis."):
            continue
        label = section.split(".", 1)[1]
        unknown = set(items) - _AXIS_KEYS
        if unknown:
            raise ConfigurationError(f"[{section}] unknown keys: {sorted(unknown)}")
        for req in ("role", "count", "min", "max"):
            if req not in items:
                raise ConfigurationError(f"[{section}] missing required key {req!r}")
        role = items["role"].strip()
        if role not in ("system", "clock"):
            raise ConfigurationError(f"[{section}] role must be 'system' or 'clock'")
        ax = Axis(
            label=label,
            count=_typed(section, "count", items["count"]),
            min=_typed(section, "min", items["min"]),
            max=_typed(section, "max", items["max"]),
            boundary=items.get("boundary", "dirichlet").strip(),
            mass=_typed(section, "mass", items.get("mass", "1.0")),
        )
        axes[role].append(ax)
    if not axes["system"] or not axes["clock"]:
        raise ConfigurationError("need at least one system axis and one clock axis")
    return axes


def _build_potential(raw, group):
    section = f"potential.{group}"
    items = raw.get(section)
    if items is None:
        raise ConfigurationError(f"missing [{section}] section")
    if "kind" not in items:
        raise ConfigurationError(f"[{section}] missing 'kind'")
    kind = items["kind"].strip()
    params = {k: _typed(section, k, v) for k, v in items.items() if k != "kind"}
    return PotentialSpec(kind, params)


def _build_clock_model(raw):
    items = raw.get("clock")
    if items is None:
        return None
    if "kind" not in items:
        raise ConfigurationError("[clock] missing 'kind'")
    momentum = items.get("momentum", "1.0")
    vals = _float_list("clock", "momentum", momentum)
    return ClockModel(
        kind=items["kind"].strip(),
        mass=_typed("clock", "mass", items.get("mass", "1.0")),
        momentum=vals[0] if len(vals) == 1 else tuple(vals),
        handle_ratio=(
            _typed("clock", "handle_ratio", items["handle_ratio"])
            if "handle_ratio" in items else None
        ),
        spring=_typed("clock", "spring", items["spring"]) if "spring" in items else None,
        envelope=items.get("envelope", "uniform").strip(),
        sign=_typed("clock", "sign", items.get("sign", "1")),
    )


def _section_dict(raw, name, defaults):
    out = dict(defaults)
    for k, v in raw.get(name, {}).items():
        if k not in defaults:
            raise ConfigurationError(f"[{name}] unknown key {k!r}")
        out[k] = _typed(name, k, v)
    return out


def _build_sweep(raw):
    items = raw.get("sweep")
    if items is None:
        return None
    if "parameter" not in items or "values" not in items:
        raise ConfigurationError("[sweep] needs 'parameter' and 'values'")
    sweep = {
        "parameter": items["parameter"].strip(),
        "values": _float_list("sweep", "values", items["values"]),
        "links": {},
    }
    n = len(sweep["values"])
    for k, v in items.items():
        if k in ("parameter", "values"):
            continue
        if not k.startswith("link."):
            raise ConfigurationError(f"[sweep] unknown key {k!r}")
        vals = _float_list("sweep", k, v)
        if len(vals) != n:
            raise ConfigurationError(f"[sweep] {k}: needs {n} values to match the sweep")
        sweep["links"][k[len("link."):]] = vals
    return sweep


def build_scenario(raw: dict) -> Scenario:
    """Materialize a Scenario from the parsed config, validating the schema."""
    sc = raw["scenario"]
    name = sc.get("name", "").strip()
    if not name:
        raise ConfigurationError("[scenario] missing 'name'")
    pipeline = tuple(s.strip() for s in sc.get("pipeline", "solve, factorize").split(",") if s.strip())
    for stage in pipeline:
        if stage not in KNOWN_STAGES:
            raise ConfigurationError(f"[scenario] unknown pipeline stage {stage!r}")
    done = set()
    for stage in pipeline:
        missing = [d for d in STAGE_DEPS.get(stage, ()) if d not in done]
        if missing:
            raise ConfigurationError(
                f"[scenario] stage {stage!r} requires {missing} earlier in the pipeline"
            )
        done.add(stage)

    axes = _build_axes(raw)
    grid = ProductGrid(system_axes=tuple(axes["system"]), clock_axes=tuple(axes["clock"]))
    scenario = Scenario(
        name=name,
        grid=grid,
        system_potential=_build_potential(raw, "system"),
        clock_potential=_build_potential(raw, "clock"),
        interaction_potential=_build_potential(raw, "interaction"),
        clock_model=_build_clock_model(raw),
        pipeline=pipeline,
        solve=_section_dict(raw, "solve", _SOLVE_DEFAULTS),
        scf=_section_dict(raw, "scf", _SCF_DEFAULTS),
        emergence=_section_dict(raw, "emergence", _EMERGENCE_DEFAULTS),
        sweep=_build_sweep(raw),
        seed=int(sc.get("seed", "0")),
        raw=raw,
    )
    return scenario


def physics_issues(s: Scenario) -> list:
    """Sanity checks beyond the schema; returns a list of issue strings."""
    issues = []
    model = s.clock_model
    if model is not None:
        if model.kind in ("cyclic", "two_handle"):
            for ax in s.grid.clock_axes:
                if ax.boundary != "periodic":
                    issues.append(
                        f"clock kind {model.kind!r} needs periodic clock axes; "
                        f"axis {ax.label!r} is {ax.boundary}"
                    )
        if model.kind == "cyclic":
            m0 = model.momenta[0]
            if abs(m0 - round(m0)) > 1e-12:
                issues.append(f"cyclic clock momentum {m0} is not an integer multiple of hbar")
        if model.kind == "two_handle":
            l1, l2 = model.momenta
            if model.handle_ratio and abs(l1 - model.handle_ratio * l2) > 1e-12 * max(1.0, abs(l1)):
                issues.append("two_handle momenta violate L_10 = handle_ratio * L_20")
        if model.mass <= 0:
            issues.append("clock mass must be positive")
    for ax in s.grid.axes:
        if ax.mass <= 0:
            issues.append(f"axis {ax.label!r} has nonpositive mass")
    for spec, group in (
        (s.system_potential, "system"),
        (s.clock_potential, "clock"),
        (s.interaction_potential, "interaction"),
    ):
        try:
            spec.evaluate(s.grid, group)
        except ConfigurationError as exc:
            issues.append(f"potential.{group}: {exc}")
    if "emergence" in s.pipeline and model is None:
        issues.append("emergence stage needs a [clock] section")
    if s.solve["which"] not in ("lowest", "nearest"):
        issues.append(f"unknown solve.which {s.solve['which']!r}")
    if s.solve["selection"] not in ("ground", "max_overlap"):
        issues.append(f"unknown solve.selection {s.solve['selection']!r}")
    if s.solve["gauge"] not in ("zero_phase", "clock_phase"):
        issues.append(f"unknown solve.gauge {s.solve['gauge']!r}")
    if s.solve["fd_order"] not in (2, 4):
        issues.append("solve.fd_order must be 2 or 4")
    if s.emergence["kinetic"] not in ("discrete", "classical"):
        issues.append(f"unknown emergence.kinetic {s.emergence['kinetic']!r}")
    if s.emergence["trajectory_velocity"] not in ("discrete", "classical"):
        issues.append(f"unknown emergence.trajectory_velocity {s.emergence['trajectory_velocity']!r}")
    if s.sweep is not None and len(s.sweep["values"]) < 2:
        issues.append("[sweep] needs at least two values")
    return issues


def apply_overrides(raw: dict, overrides: dict) -> dict:
    """Return a copy of the parsed config with dotted-path values replaced.

    Paths address sections and keys, e.g. 'clock.mass' or 'axis.phi.count';
    used by parameter sweeps.
    """
    out = {sec: dict(items) for sec, items in raw.items()}
    for path, value in overrides.items():
        parts = path.rsplit(".", 1)
        if len(parts) != 2:
            raise ConfigurationError(f"override path {path!r} must be section.key")
        section, key = parts
        if section not in out:
            raise ConfigurationError(f"override path {path!r}: no section [{section}]")
        # integral floats render as plain ints so integer-typed keys parse
        if isinstance(value, float) and value == int(value):
            out[section][key] = repr(int(value))
        else:
            out[section][key] = repr(value)
    return out


def clock_phase_field(s: Scenario) -> np.ndarray:
    """Gauge field alpha(R) matching the clock ansatz winding (clock_phase gauge)."""
    model = s.clock_model
    if model is None:
        raise ConfigurationError("clock_phase gauge needs a [clock] section")
    g = s.grid
    alpha = np.zeros(g.clock_shape)
    momenta = model.momenta
    if model.kind in ("linear", "cyclic"):
        alpha = model.sign * momenta[0] * g.clock_axes[0].points.reshape(g.clock_shape)
    elif model.kind == "two_handle":
        p1 = g.clock_axes[0].points
        p2 = g.clock_axes[1].points
        alpha = model.sign * (momenta[0] * p1[:, None] + momenta[1] * p2[None, :])
    else:
        raise ConfigurationError("clock_phase gauge is undefined for harmonic clocks")
    return alpha
