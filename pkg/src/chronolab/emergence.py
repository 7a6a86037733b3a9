"""Emergence of time-dependent dynamics along a classical clock trajectory.

Conditional amplitudes sliced along the trajectory, gauged into the frame
where the clock's kinetic phase and the local energy are removed, become
solutions of the system's time-dependent Schroedinger equation in the
classical-clock limit.  This module extracts the slices, applies the gauge,
propagates the reference TDSE and quantifies the agreement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .clockwork import ClassicalTrajectory, ClockModel, TickSchedule, discrete_kinetic_energy
from .errors import (
    DimensionError,
    DomainError,
    InsufficientDataError,
    MaskError,
    PropagationError,
    RangeError,
)
from .factorization import FactorizedState
from .lattice import CompositeHamiltonian, derivative

TWO_PI = 2.0 * math.pi


@dataclass
class ConditionalTimeSlice:
    time: float
    state: np.ndarray              # system-grid field, unit norm
    source_R: np.ndarray           # clock configuration the slice was read at
    interpolation_error: float     # half-grid comparison estimate


@dataclass
class GaugeFactor:
    """Phase exp(i theta(t)) with theta = E_kin t - sign * cumint(lambda)."""

    times: np.ndarray
    phase: np.ndarray
    kinetic_energy: float


@dataclass
class EmergenceReport:
    fidelity_curve: list                       # (t, |<Psi_cond|Psi_tdse>|)
    second_order_magnitude: list               # (t, relative size of Psi-ddot term)
    harmonic_correction_magnitude: list | None # (t, |Zddot| / (2 m |Zdot|^3))
    min_fidelity: float
    mass_scaling: list = field(default_factory=list)  # (clock mass, 1 - min fidelity)


# -- slicing ----------------------------------------------------------------------


def _axis_locate(ax, r):
    """Bracketing index and weight for linear interpolation on one clock axis."""
    pts = ax.points
    h = ax.spacing
    if ax.boundary == "periodic":
        span = ax.max - ax.min
        u = (float(r) - pts[0]) % span / h
        i = int(np.floor(u)) % ax.count
        return i, (i + 1) % ax.count, u - np.floor(u)
    if not (pts[0] <= r <= pts[-1]):
        raise RangeError(f"clock position {r} outside grid interior [{pts[0]}, {pts[-1]}]")
    u = (float(r) - pts[0]) / h
    i = min(int(np.floor(u)), ax.count - 2)
    return i, i + 1, u - i


def _coarse_locate(ax, r, i, j, w):
    """Stride-2 interpolation nodes for the half-grid error estimate."""
    n = ax.count
    if ax.boundary == "periodic":
        base = i - (i % 2)
        return base % n, (base + 2) % n, (i - base + w) / 2.0
    base = i - (i % 2)
    base = min(max(base, 0), n - 3)
    return base, base + 2, (i - base + w) / 2.0


def _interp_slice(f: FactorizedState, r_vec):
    """Linearly interpolate the conditional field at a clock configuration.

    Returns (state, coarse_state) on the system grid, both unnormalized; the
    coarse state uses doubled spacing and feeds the interpolation-error
    estimate.  Masked support points raise MaskError.
    """
    g = f.grid
    axes = g.clock_axes
    r_vec = np.atleast_1d(np.asarray(r_vec, dtype=float))
    if len(r_vec) != len(axes):
        raise DimensionError("clock configuration dimension does not match the clock axes")

    fine_nodes = [(_axis_locate(ax, r),) for ax, r in zip(axes, r_vec)]
    coarse_nodes = [
        (_coarse_locate(ax, r, *loc[0]),)
        for ax, r, loc in zip(axes, r_vec, fine_nodes)
    ]

    def gather(node_list):
        out = np.zeros(g.system_shape, dtype=complex)
        # tensor-product linear interpolation over the clock axes
        idx_weights = [((i, 1.0 - w), (j, w)) for ((i, j, w),) in node_list]
        from itertools import product

        for combo in product(*idx_weights):
            idx = tuple(c[0] for c in combo)
            wgt = float(np.prod([c[1] for c in combo]))
            if wgt == 0.0:
                continue
            if f.node_mask[idx]:
                raise MaskError(f"clock configuration {r_vec} interpolates a masked point")
            out += wgt * f.conditional[idx]
        return out

    return gather(fine_nodes), gather(coarse_nodes)


def slice_conditional(
    f: FactorizedState, traj: ClassicalTrajectory, ticks: TickSchedule
) -> list:
    """Conditional system states along the trajectory at the kept ticks.

    Each slice is linearly interpolated between the adjacent clock columns
    and renormalized; the interpolation error is the distance to a doubled-
    spacing interpolation of the same point.
    """
    g = f.grid
    w_sys = g.system_weight
    slices = []
    for t in ticks.times:
        r = np.atleast_1d(np.asarray(traj.position(float(t)), dtype=float))
        fine, coarse = _interp_slice(f, r)
        nrm = math.sqrt(max(np.vdot(fine, fine).real * w_sys, 1e-300))
        err = float(np.sqrt(np.vdot(fine - coarse, fine - coarse).real * w_sys) / nrm)
        slices.append(ConditionalTimeSlice(float(t), fine / nrm, r, err))
    return slices


def directional_derivative_2d(
    f: FactorizedState, velocity, ticks: TickSchedule, initial=(0.0, 0.0)
) -> list:
    """Slices along the straight 2D configuration-space trajectory.

    velocity is the handle-velocity vector (I^-1 L_10, I^-1 L_20); the time
    slices are read along R(t) = initial + velocity * t on the torus.  This
    is the single-contraction reduction; see chain_rule_fields for the
    deliberate per-axis-sum variant.
    """
    g = f.grid
    if len(g.clock_axes) != 2:
        raise DimensionError("directional slicing needs exactly two clock axes")
    v = np.asarray(velocity, dtype=float)
    r0 = np.asarray(initial, dtype=float)
    w_sys = g.system_weight
    slices = []
    for t in ticks.times:
        r = r0 + v * float(t)
        for ax, k in zip(g.clock_axes, range(2)):
            if ax.boundary == "periodic":
                r[k] = r[k] % (ax.max - ax.min) + 0.0
            elif not (ax.points[0] <= r[k] <= ax.points[-1]):
                raise RangeError("two-handle trajectory left the grid interior")
        fine, coarse = _interp_slice(f, r)
        nrm = math.sqrt(max(np.vdot(fine, fine).real * w_sys, 1e-300))
        err = float(np.sqrt(np.vdot(fine - coarse, fine - coarse).real * w_sys) / nrm)
        slices.append(ConditionalTimeSlice(float(t), fine / nrm, r, err))
    return slices


def chain_rule_fields(f: FactorizedState, velocity, fd_order: int = 2):
    """Directional time derivative of Psi and the spurious per-axis-sum variant.

    The correct reduction contracts the configuration-space velocity with the
    gradient once: Psi_dot = sum_n v_n dPsi/dR_n.  The spurious variant
    promotes every handle's term to a full time derivative before summing,
    which yields n_handles * Psi_dot and a factor-2 phase-rate error for a
    two-handle clock.
    """
    g = f.grid
    v = np.asarray(velocity, dtype=float)
    if len(v) != len(g.clock_axes):
        raise DimensionError("velocity dimension does not match the clock axes")
    directional = np.zeros(g.shape, dtype=complex)
    for n, ax in enumerate(g.clock_axes):
        directional += v[n] * derivative(f.conditional, n, ax, fd_order, second=False)
    per_axis_sum = len(g.clock_axes) * directional
    return directional, per_axis_sum


# -- gauge frame ------------------------------------------------------------------


def gauge_to_tdse_frame(
    slices: list,
    model: ClockModel,
    lam_along: np.ndarray,
    clock_axis,
    kinetic: str = "discrete",
    fd_order: int = 2,
) -> tuple:
    """Rotate slices into the frame where the TDSE holds.

    Multiplies slice k by exp{i (E_kin t_k - sign * int_0^t lambda dt')},
    with lambda = lam_along (the local energy along the trajectory, per unit
    marginal density) integrated by trapezoid on the tick times.  E_kin is
    the clock's kinetic energy; 'discrete' uses the lattice stencil
    eigenvalue of the plane-wave ansatz (exactly stationary states stay
    exactly stationary), 'classical' uses p^2/2m.
    """
    if kinetic not in ("discrete", "classical"):
        raise DomainError(f"unknown kinetic convention {kinetic!r}")
    lam = np.asarray(lam_along, dtype=float)
    if lam.shape != (len(slices),):
        raise DimensionError("lam_along must provide one value per slice")
    times = np.array([s.time for s in slices])
    p = model.momenta[0]
    if kinetic == "discrete":
        e_kin = discrete_kinetic_energy(clock_axis, p, fd_order)
    else:
        e_kin = p * p / (2.0 * model.mass)
    cum = np.concatenate(
        ([0.0], np.cumsum(0.5 * (lam[1:] + lam[:-1]) * np.diff(times)))
    )
    theta = e_kin * (times - times[0]) - model.sign * cum
    gauged = [
        ConditionalTimeSlice(s.time, np.exp(1j * th) * s.state, s.source_R, s.interpolation_error)
        for s, th in zip(slices, theta)
    ]
    return gauged, GaugeFactor(times, theta, e_kin)


# -- reference TDSE ---------------------------------------------------------------


def _interaction_column(h: CompositeHamiltonian, r):
    """Interaction potential on the system grid at clock position r (linear
    interpolation between the stored clock columns)."""
    g = h.grid
    if len(g.clock_axes) != 1:
        raise DimensionError("reference propagation supports one clock axis")
    ax = g.clock_axes[0]
    v = np.broadcast_to(h.interaction_potential, g.shape)
    i, j, w = _axis_locate(ax, float(np.atleast_1d(r)[0]))
    return (1.0 - w) * v[i] + w * v[j]


def tdse_propagate(
    h: CompositeHamiltonian,
    traj: ClassicalTrajectory,
    initial: np.ndarray,
    ticks: TickSchedule,
    substeps: int = 8,
) -> tuple:
    """Crank-Nicolson propagation of the system under H_S + H_I(x, R(t)).

    Unconditionally stable and norm-preserving implicit midpoint stepping
    with `substeps` equal steps between consecutive ticks.  Returns
    (states at tick times, max norm drift per unit time).
    """
    g = h.grid
    if substeps < 1:
        raise DomainError("substeps must be >= 1")
    psi = np.asarray(initial, dtype=complex).reshape(-1).copy()
    n = psi.size
    if n != int(np.prod(g.system_shape)):
        raise DimensionError("initial state must live on the system grid")
    nrm0 = math.sqrt(np.vdot(psi, psi).real * g.system_weight)
    if abs(nrm0 - 1.0) > 1e-8:
        raise DomainError("initial state must be normalized")
    base = h.system_matrix().tocsr()
    eye = sp.identity(n, format="csr")

    times = ticks.times
    states = [psi.reshape(g.system_shape).copy()]
    drift = 0.0
    for k in range(len(times) - 1):
        dt = (times[k + 1] - times[k]) / substeps
        for s in range(substeps):
            t_mid = times[k] + (s + 0.5) * dt
            v_i = _interaction_column(h, traj.position(t_mid)).reshape(-1)
            h_mid = base + sp.diags(v_i)
            a = (eye + 0.5j * dt * h_mid).tocsc()
            b = (eye - 0.5j * dt * h_mid) @ psi
            try:
                psi = sla.spsolve(a, b)
            except Exception as exc:
                raise PropagationError(f"implicit step failed at t={t_mid:.6g}: {exc}")
        nrm = math.sqrt(np.vdot(psi, psi).real * g.system_weight)
        span = max(times[k + 1] - times[0], 1e-300)
        drift = max(drift, abs(nrm - 1.0) / span)
        states.append(psi.reshape(g.system_shape).copy())
    return states, drift


# -- comparison -------------------------------------------------------------------


def _fidelity(a, b, w):
    na = math.sqrt(max(np.vdot(a, a).real * w, 1e-300))
    nb = math.sqrt(max(np.vdot(b, b).real * w, 1e-300))
    return abs(np.vdot(a, b)) * w / (na * nb)


def _time_derivatives(states, times):
    """Centered first and second time derivatives on a nonuniform schedule."""
    n = len(states)
    d1 = [None] * n
    d2 = [None] * n
    for k in range(1, n - 1):
        hl = times[k] - times[k - 1]
        hr = times[k + 1] - times[k]
        d1[k] = (states[k + 1] - states[k - 1]) / (hl + hr)
        d2[k] = 2.0 * (
            hl * states[k + 1] - (hl + hr) * states[k] + hr * states[k - 1]
        ) / (hl * hr * (hl + hr))
    return d1, d2


def emergence_compare(
    gauged_slices: list,
    tdse_states: list,
    system_weight: float,
    model: ClockModel | None = None,
    traj: ClassicalTrajectory | None = None,
) -> EmergenceReport:
    """Fidelity curve and neglected-term magnitudes.

    Fidelity is the phase-optimized overlap |<a|b>| per tick.  The
    second-order magnitude is ||Psi_ddot / (2 m Zdot^2)|| relative to
    ||Psi_dot||; the harmonic correction prefactor |Zddot| / (2 m |Zdot|^3)
    is reported when the trajectory has turning points.
    """
    if len(gauged_slices) < 3:
        raise InsufficientDataError("need at least 3 ticks to compare dynamics")
    if len(tdse_states) != len(gauged_slices):
        raise DimensionError("slice and propagation sequences differ in length")

    times = np.array([s.time for s in gauged_slices])
    curve = [
        (float(t), float(_fidelity(s.state, u, system_weight)))
        for t, s, u in zip(times, gauged_slices, tdse_states)
    ]
    min_fid = min(v for _, v in curve)

    second = []
    harmonic = None
    if model is not None and traj is not None:
        states = [s.state for s in gauged_slices]
        d1, d2 = _time_derivatives(states, times)
        harmonic = [] if traj.turning_points else None
        for k in range(1, len(states) - 1):
            zdot = float(np.atleast_1d(traj.velocity(times[k]))[0])
            n1 = math.sqrt(max(np.vdot(d1[k], d1[k]).real * system_weight, 1e-300))
            n2 = math.sqrt(max(np.vdot(d2[k], d2[k]).real * system_weight, 0.0))
            second.append(
                (float(times[k]), n2 / (2.0 * model.mass * zdot * zdot) / n1)
            )
            if harmonic is not None:
                eps = 1e-6 * max(abs(times[-1] - times[0]), 1.0)
                zdd = float(
                    (np.atleast_1d(traj.velocity(times[k] + eps))[0]
                     - np.atleast_1d(traj.velocity(times[k] - eps))[0]) / (2.0 * eps)
                )
                harmonic.append(
                    (float(times[k]), abs(zdd) / (2.0 * model.mass * abs(zdot) ** 3))
                )
    return EmergenceReport(curve, second, harmonic, float(min_fid))


def mass_scaling_fit(pairs) -> float:
    """Slope of log(1 - min fidelity) against log(clock mass)."""
    pairs = sorted(pairs)
    if len(pairs) < 2:
        raise InsufficientDataError("mass-scaling fit needs at least two masses")
    x = np.log([m for m, _ in pairs])
    y = np.log([max(d, 1e-16) for _, d in pairs])
    return float(np.polyfit(x, y, 1)[0])
