"""Ideal clock models: plane-wave ansaetze, classical trajectories, ticks.

A clock is a heavy degree of freedom whose marginal amplitude is (locally) a
plane wave with slowly varying envelope.  Four kinds are supported: a free
particle on a line (linear), a rotor on a circle (cyclic), two coupled rotors
with commensurate angular momenta (two_handle), and a harmonic mode treated
in the WKB approximation (harmonic).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    DomainError,
    QuantizationError,
    RangeError,
    UnusableClockError,
)
from .factorization import FactorizedState, mean_clock_momentum
from .lattice import _D2_COEF, CompositeHamiltonian, ProductGrid, derivative

TWO_PI = 2.0 * math.pi
WKB_VALIDITY_THRESHOLD = 0.1


@dataclass(frozen=True)
class ClockModel:
    """Parameters of an ideal clock.

    momentum holds P_Z0 (linear, harmonic initial momentum), L_Z0 (cyclic)
    or the pair (L_10, L_20) (two_handle).  mass is the particle mass m or
    the moment of inertia I (shared by both handles).  spring is the
    stiffness M*Omega^2 of the harmonic kind.  sign selects the exponent
    branch of the plane wave (forward/backward running clock).
    """

    kind: str
    mass: float
    momentum: float | tuple = 1.0
    handle_ratio: int | None = None
    spring: float | None = None
    envelope: str = "uniform"
    envelope_width_fraction: float = 0.25
    sign: int = 1

    def __post_init__(self):
        if self.kind not in ("linear", "cyclic", "two_handle", "harmonic"):
            raise ConfigurationError(f"unknown clock kind {self.kind!r}")
        if self.mass <= 0:
            raise ConfigurationError("clock mass/inertia must be positive")
        if self.sign not in (-1, 1):
            raise ConfigurationError("sign must be +1 or -1")
        if self.envelope not in ("uniform", "slowly_varying"):
            raise ConfigurationError(f"unknown envelope {self.envelope!r}")
        if self.kind == "two_handle":
            if self.handle_ratio is None or int(self.handle_ratio) < 1:
                raise ConfigurationError("two_handle clock needs a positive integer handle_ratio")
            l1, l2 = self.momenta
            # commensurability: the fast handle winds exactly handle_ratio
            # times per slow cycle
            if abs(l1 - self.handle_ratio * l2) > 1e-12 * max(1.0, abs(l1)):
                raise ConfigurationError(
                    "two_handle momenta must satisfy L_10 = handle_ratio * L_20"
                )
        if self.kind == "harmonic" and (self.spring is None or self.spring <= 0):
            raise ConfigurationError("harmonic clock needs a positive spring constant")

    @property
    def momenta(self) -> tuple:
        if self.kind == "two_handle":
            l = tuple(float(v) for v in np.atleast_1d(self.momentum))
            if len(l) != 2:
                raise ConfigurationError("two_handle momentum must be a pair (L_10, L_20)")
            return l
        return (float(self.momentum),)


@dataclass(frozen=True)
class ClassicalTrajectory:
    """Closed-form clock trajectory over a finite window."""

    model: ClockModel
    window: tuple
    position: object = field(repr=False)   # t -> R(t), vector for two_handle
    velocity: object = field(repr=False)   # t -> dR/dt
    turning_points: tuple = ()

    def __call__(self, t):
        return self.position(t)


@dataclass(frozen=True)
class TickSchedule:
    times: np.ndarray               # kept ticks, strictly increasing
    marking_positions: np.ndarray   # R(t_i), shape (n,) or (n, 2)
    min_speed: float
    dropped_times: np.ndarray


def _angular(ax):
    return ax.boundary == "periodic" and abs(ax.min) < 1e-12 and abs(ax.max - TWO_PI) < 1e-9


def _envelope(model, ax):
    """Envelope over one axis plus its interior mask (|z - c| < 1.5 sigma)."""
    z = ax.points
    if model.envelope == "uniform":
        return np.ones_like(z), np.ones_like(z, dtype=bool)
    c = 0.5 * (ax.min + ax.max)
    sigma = model.envelope_width_fraction * (ax.max - ax.min)
    return np.exp(-((z - c) ** 2) / (4.0 * sigma * sigma)), np.abs(z - c) < 1.5 * sigma


def marginal_ansatz(model: ClockModel, grid: ProductGrid):
    """Plane-wave marginal amplitude X(R) on the clock grid, normalized.

    Returns (field, interior_mask); the mask flags the region where the
    envelope is effectively constant and the plane-wave eigenrelation holds.
    """
    axes = grid.clock_axes
    if model.kind == "linear":
        if len(axes) != 1:
            raise ConfigurationError("linear clock needs exactly one clock axis")
        ax = axes[0]
        env, interior = _envelope(model, ax)
        x = env * np.exp(1j * model.sign * model.momenta[0] * ax.points)
    elif model.kind == "cyclic":
        if len(axes) != 1 or not _angular(axes[0]):
            raise ConfigurationError("cyclic clock needs one periodic angular clock axis")
        m0 = model.momenta[0]
        if abs(m0 - round(m0)) > 1e-12:
            raise QuantizationError(
                f"cyclic clock momentum L_Z0 = {m0} is not an integer multiple of hbar"
            )
        env, interior = _envelope(model, axes[0])
        x = env * np.exp(1j * model.sign * round(m0) * axes[0].points)
    elif model.kind == "two_handle":
        if len(axes) != 2 or not all(_angular(a) for a in axes):
            raise ConfigurationError("two_handle clock needs two periodic angular clock axes")
        l1, l2 = model.momenta
        for name, l in (("L_10", l1), ("L_20", l2)):
            if abs(l - round(l)) > 1e-12:
                raise QuantizationError(f"{name} = {l} is not an integer multiple of hbar")
        p1, p2 = axes[0].points, axes[1].points
        x = np.exp(1j * model.sign * (round(l1) * p1[:, None] + round(l2) * p2[None, :]))
        interior = np.ones(grid.clock_shape, dtype=bool)
    else:
        raise DomainError("harmonic clocks use wkb_ansatz_harmonic, not marginal_ansatz")

    x = x.reshape(grid.clock_shape)
    x = x / np.sqrt(np.sum(np.abs(x) ** 2) * grid.clock_weight)
    return x, interior.reshape(grid.clock_shape)


def wkb_ansatz_harmonic(model: ClockModel, grid: ProductGrid, energy: float):
    """Local plane wave X(Z) = P(Z)^{-1/2} e^{i sign S(Z)} for a harmonic clock.

    P(Z) = sqrt(2m(E - spring Z^2 / 2)) and S(Z) = integral of P.  Returns
    (field, validity_mask); the mask is False outside the classically allowed
    region and near turning points where the WKB criterion
    |lambda_dB dP/dZ / P| exceeds WKB_VALIDITY_THRESHOLD.
    """
    if model.kind != "harmonic":
        raise ConfigurationError("wkb_ansatz_harmonic needs a harmonic clock model")
    if energy <= 0:
        raise DomainError("energy must be positive")
    if len(grid.clock_axes) != 1:
        raise ConfigurationError("harmonic clock needs exactly one clock axis")
    ax = grid.clock_axes[0]
    z = ax.points
    p_sq = 2.0 * model.mass * (energy - 0.5 * model.spring * z * z)
    allowed = p_sq > 0
    if not allowed.any():
        raise DomainError("energy lies below the clock potential everywhere on the grid")
    p = np.sqrt(np.where(allowed, p_sq, np.nan))
    # action by cumulative trapezoid over the allowed points
    s = np.zeros_like(z)
    pa = np.nan_to_num(p)
    s[1:] = np.cumsum(0.5 * (pa[1:] + pa[:-1]) * np.diff(z))
    x = np.where(allowed, np.nan_to_num(p, nan=1.0) ** -0.5, 0.0) * np.exp(
        1j * model.sign * s
    )
    x = np.where(allowed, x, 0.0)
    x = x / np.sqrt(np.sum(np.abs(x) ** 2) * grid.clock_weight)

    dp = np.gradient(np.nan_to_num(p), z)
    crit = np.where(allowed, np.abs(TWO_PI / np.where(allowed, p, np.inf) * dp
                                    / np.where(allowed, p, np.inf)), np.inf)
    validity = allowed & (crit <= WKB_VALIDITY_THRESHOLD)
    return x.reshape(grid.clock_shape), validity.reshape(grid.clock_shape)


def classical_trajectory(
    model: ClockModel, initial, window, velocity=None
) -> ClassicalTrajectory:
    """Exact classical trajectory of the clock coordinate over [t0, t1].

    velocity overrides the continuum rate momentum/mass for the constant-
    speed kinds (e.g. with discrete_group_velocity when comparing against
    lattice eigenstates); harmonic trajectories do not accept an override.
    """
    t0, t1 = float(window[0]), float(window[1])
    if not np.isfinite([t0, t1]).all() or t1 <= t0:
        raise DomainError("window must be a finite increasing interval")
    if velocity is not None and model.kind == "harmonic":
        raise DomainError("harmonic trajectories define their own velocity profile")

    if model.kind == "linear":
        r0 = float(initial)
        v = model.sign * model.momenta[0] / model.mass if velocity is None else float(velocity)
        pos = lambda t: r0 + v * np.asarray(t, dtype=float)
        vel = lambda t: np.full_like(np.asarray(t, dtype=float), v)
        turning = ()
    elif model.kind == "cyclic":
        r0 = float(initial)
        v = model.sign * model.momenta[0] / model.mass if velocity is None else float(velocity)
        pos = lambda t: np.mod(r0 + v * np.asarray(t, dtype=float), TWO_PI)
        vel = lambda t: np.full_like(np.asarray(t, dtype=float), v)
        turning = ()
    elif model.kind == "two_handle":
        r0 = np.asarray(initial, dtype=float)
        if r0.shape != (2,):
            raise DomainError("two_handle initial condition must be a pair of angles")
        l1, l2 = model.momenta
        if velocity is None:
            v = model.sign * np.array([l1, l2]) / model.mass
        else:
            v = np.asarray(velocity, dtype=float)
            if v.shape != (2,):
                raise DomainError("two_handle velocity override must be a pair")
        pos = lambda t: np.mod(r0 + np.multiply.outer(np.asarray(t, dtype=float), v), TWO_PI)
        vel = lambda t: np.broadcast_to(v, np.shape(np.asarray(t, dtype=float)) + (2,)).copy()
        turning = ()
    else:  # harmonic
        z0 = float(initial)
        p0 = model.sign * model.momenta[0]
        omega = math.sqrt(model.spring / model.mass)
        energy = p0 * p0 / (2.0 * model.mass) + 0.5 * model.spring * z0 * z0
        if energy <= 0:
            raise DomainError("harmonic trajectory needs nonzero energy")
        z_t = math.sqrt(2.0 * energy / model.spring)
        delta = math.atan2(z0 / z_t, p0 / (model.mass * omega * z_t))
        pos = lambda t: z_t * np.sin(omega * np.asarray(t, dtype=float) + delta)
        vel = lambda t: z_t * omega * np.cos(omega * np.asarray(t, dtype=float) + delta)
        # cos(omega t + delta) = 0
        first = (0.5 * math.pi - delta) / omega
        period = math.pi / omega
        n_lo = math.ceil((t0 - first) / period)
        turning = tuple(
            first + n * period
            for n in range(n_lo, n_lo + max(0, int((t1 - t0) / period) + 2))
            if t0 <= first + n * period <= t1
        )
    return ClassicalTrajectory(model, (t0, t1), pos, vel, turning)


def tick_schedule(traj: ClassicalTrajectory, interval: float, min_speed: float = 0.0) -> TickSchedule:
    """Regular ticks t_i = t0 + i*interval; ticks slower than min_speed drop.

    Speed for multi-handle clocks is the euclidean configuration-space speed.
    """
    if interval <= 0:
        raise DomainError("tick interval must be positive")
    if min_speed < 0:
        raise DomainError("min_speed must be nonnegative")
    t0, t1 = traj.window
    times = t0 + interval * np.arange(int((t1 - t0) / interval) + 1)
    v = np.asarray(traj.velocity(times), dtype=float)
    speed = np.abs(v) if v.ndim == 1 else np.linalg.norm(v, axis=-1)
    keep = speed >= min_speed
    if not keep.any():
        raise UnusableClockError(
            "every tick falls below the minimum speed; the clock never runs"
        )
    return TickSchedule(
        times=times[keep],
        marking_positions=np.asarray(traj.position(times[keep])),
        min_speed=float(min_speed),
        dropped_times=times[~keep],
    )


def discrete_kinetic_energy(ax, momentum: float, fd_order: int = 2) -> float:
    """Kinetic eigenvalue of the lattice plane wave e^{i p z}.

    This is the -(1/2m) D2 stencil eigenvalue, which differs from the
    continuum p^2/2m at finite spacing; gauge factors built from lattice
    eigenstates must use this value to be exactly stationary.
    """
    coef = _D2_COEF[fd_order]
    h = ax.spacing
    val = sum(w * math.cos(off * momentum * h) for off, w in coef.items())
    return -val / (h * h) / (2.0 * ax.mass)


def discrete_group_velocity(ax, momentum: float, fd_order: int = 2) -> float:
    """dE/dp of the lattice dispersion at the plane-wave momentum.

    The emergent time of a lattice clock advances at this rate, not at the
    continuum p/m; trajectories that drive a comparison against lattice
    eigenstates should use it.
    """
    coef = _D2_COEF[fd_order]
    h = ax.spacing
    val = sum(w * off * math.sin(off * momentum * h) for off, w in coef.items())
    return val / h / (2.0 * ax.mass)


@dataclass
class ClockQuality:
    adiabaticity_ratio: float    # clock-derivative scale of Psi vs of X
    mean_field_momentum: float   # max |<Psi|P_n|Psi>/m_n| over the support
    u_c_flatness: float          # (max-min)/|mean| of U_C on the interior
    energy_ratio: float          # clock energy / system energy on Phi


def clock_quality(f: FactorizedState, h: CompositeHamiltonian) -> ClockQuality:
    """Diagnostics of how well the factorized state realizes an ideal clock.

    A good clock has small adiabaticity ratio (the conditional amplitude
    barely depends on the clock coordinate compared to the marginal's phase
    winding), negligible mean-field momentum, a flat effective potential and
    an energy budget dominated by the clock.
    """
    from .coupled_scf import residual_support
    from .factorization import effective_clock_potential, reconstruct

    g = f.grid
    support = residual_support(f, h)
    rho = np.where(support, f.rho_mar, 0.0)

    num = 0.0
    den = 0.0
    mf = 0.0
    for n, ax in enumerate(g.clock_axes):
        p_psi = h.apply_clock_momentum(n, f.conditional) / ax.mass
        num += float(np.sum(rho * g.local_inner(p_psi, p_psi).real) * g.clock_weight)
        safe = np.where(f.node_mask, 1.0, f.marginal)
        quot = np.where(support, h.apply_clock_momentum(n, f.marginal) / safe, 0.0) / ax.mass
        den += float(np.sum(rho * np.abs(quot) ** 2) * g.clock_weight)
        mf = max(mf, float(np.max(np.abs(np.where(support, mean_clock_momentum(f, h, n), 0.0)))))
    adiabaticity = math.sqrt(num) / max(math.sqrt(den), 1e-300)

    u_c, _ = effective_clock_potential(f, h)
    vals = u_c[support]
    flat = float((np.max(vals) - np.min(vals)) / max(abs(np.mean(vals)), 1e-300))

    phi = reconstruct(f)
    t_c = g.inner(phi, h.apply_clock_kinetic(phi)).real
    v_c = g.inner(phi, np.broadcast_to(h.clock_potential, g.shape) * phi).real
    e_sys = g.inner(phi, h.apply_system(phi)).real
    ratio = (t_c + v_c) / max(abs(e_sys), 1e-300)
    return ClockQuality(adiabaticity, mf, flat, ratio)
