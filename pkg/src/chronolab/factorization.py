"""Exact marginal-conditional factorization Phi = X(R) * Psi(x|R).

X carries the marginal probability amplitude of the clock, Psi the locally
normalized conditional amplitude of the system.  The split is exact wherever
the marginal density is above the node threshold; clock points below it are
masked and the conditional amplitude there is left unset (stored as zero).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFactorizationError, DomainError, DimensionError
from .lattice import CompositeHamiltonian, ProductGrid
from .spectral import JointEigenstate

NODE_FRACTION_LIMIT = 0.05


@dataclass
class FactorizedState:
    grid: ProductGrid
    marginal: np.ndarray       # X(R), clock grid, complex
    conditional: np.ndarray    # Psi(x|R), product grid, complex; zero where masked
    gauge_phase: np.ndarray    # alpha(R), clock grid, real
    node_mask: np.ndarray      # True where rho_mar fell below threshold

    @property
    def rho_mar(self) -> np.ndarray:
        return np.abs(self.marginal) ** 2

    def expand(self, clock_field: np.ndarray) -> np.ndarray:
        """Broadcast a clock-grid field over the system axes."""
        n_sys = len(self.grid.system_axes)
        return clock_field.reshape(clock_field.shape + (1,) * n_sys)

    def copy(self):
        return FactorizedState(
            self.grid,
            self.marginal.copy(),
            self.conditional.copy(),
            self.gauge_phase.copy(),
            self.node_mask.copy(),
        )


@dataclass
class DensityReport:
    joint: np.ndarray        # rho_joint(x,R)
    marginal: np.ndarray     # rho_mar(R)
    conditional: np.ndarray  # rho_con(x|R), zero where masked


def factorize(
    state: JointEigenstate,
    gauge="zero_phase",
    node_threshold: float | None = None,
) -> FactorizedState:
    """Split a joint eigenstate into marginal and conditional amplitudes.

    gauge is either 'zero_phase' (alpha = 0, X real nonnegative for real Phi)
    or a real clock-grid field alpha(R).  node_threshold defaults to 1e-14 of
    the maximal marginal density.
    """
    g = state.grid
    phi = state.amplitudes
    rho = g.local_inner(phi, phi).real
    if node_threshold is None:
        node_threshold = 1e-14 * float(rho.max())
    if node_threshold < 0:
        raise DomainError("node_threshold must be nonnegative")

    mask = rho < node_threshold
    frac = mask.mean()
    if frac > NODE_FRACTION_LIMIT:
        raise DegenerateFactorizationError(
            f"{100 * frac:.1f}% of clock points lie below the node threshold; "
            "the marginal amplitude is not usably nodeless"
        )

    if isinstance(gauge, str):
        if gauge != "zero_phase":
            raise DomainError(f"unknown gauge {gauge!r}")
        alpha = np.zeros(g.clock_shape)
    else:
        alpha = np.asarray(gauge, dtype=float)
        if alpha.shape != g.clock_shape:
            raise DimensionError("gauge phase field must live on the clock grid")

    amp = np.sqrt(np.where(mask, 1.0, rho))
    marginal = np.exp(1j * alpha) * np.sqrt(rho)
    n_sys = len(g.system_axes)
    denom = (np.exp(1j * alpha) * amp).reshape(alpha.shape + (1,) * n_sys)
    conditional = np.where(
        mask.reshape(mask.shape + (1,) * n_sys), 0.0, phi / denom
    )
    return FactorizedState(g, marginal, conditional, alpha, mask)


def reconstruct(f: FactorizedState) -> np.ndarray:
    """Pointwise product X(R) Psi(x|R); masked clock points yield zero."""
    out = f.expand(f.marginal) * f.conditional
    if f.node_mask.any():
        out = np.where(f.expand(f.node_mask), 0.0, out)
    return out


def gauge_shift(f: FactorizedState, gamma: np.ndarray) -> FactorizedState:
    """X -> e^{i gamma} X, Psi -> e^{-i gamma} Psi; the product is invariant."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != f.grid.clock_shape:
        raise DimensionError("gauge field must live on the clock grid")
    if not np.all(np.isfinite(gamma)):
        raise DomainError("gauge field must be finite")
    phase = np.exp(1j * gamma)
    return FactorizedState(
        f.grid,
        f.marginal * phase,
        f.conditional * f.expand(np.conj(phase)),
        f.gauge_phase + gamma,
        f.node_mask.copy(),
    )


def canonical(f: FactorizedState) -> FactorizedState:
    """Zero-phase representative of the gauge orbit.

    Discrete stencils do not commute with multiplication by e^{i gamma(R)},
    so gauge-sensitive reports (residual norms, effective potential) are
    evaluated on this fixed representative; they then depend only on the
    reconstructed joint amplitude, never on the gauge the caller happened
    to factorize in.
    """
    if not f.gauge_phase.any():
        return f
    return gauge_shift(f, -f.gauge_phase)


def density_report(f: FactorizedState) -> DensityReport:
    joint = np.abs(reconstruct(f)) ** 2
    return DensityReport(joint, f.rho_mar, np.abs(f.conditional) ** 2)


def _apply_observable(f, observable, h, axis):
    """Apply a system-only observable slice-wise to the conditional field."""
    g = f.grid
    psi = f.conditional
    if observable == "position":
        ax = g.system_axes[axis]
        return g.mesh(ax) * psi
    if observable == "momentum":
        from .lattice import derivative

        ax = g.system_axes[axis]
        pos = len(g.clock_axes) + axis
        order = h.fd_order if h is not None else 2
        return -1j * derivative(psi, pos, ax, order, second=False)
    if observable == "system_energy":
        if h is None:
            raise DomainError("system_energy observable needs the Hamiltonian")
        return h.apply_system(psi)
    if callable(observable):
        # per-slice application guarantees the operator cannot touch clock axes
        out = np.empty_like(psi)
        flat = psi.reshape((-1,) + g.system_shape)
        oflat = out.reshape((-1,) + g.system_shape)
        for i in range(flat.shape[0]):
            res = np.asarray(observable(flat[i]))
            if res.shape != g.system_shape:
                raise DomainError("custom observable must map system fields to system fields")
            oflat[i] = res
        return out
    raise DomainError(f"unknown observable {observable!r}")


def conditional_expectation(f: FactorizedState, observable, h=None, axis: int = 0):
    """<A_S(R)> = <Psi(R)|A_S|Psi(R)> and its rho_mar-weighted global average.

    Returns (local, global_value); local is a real clock-grid field with NaN
    at masked points.
    """
    g = f.grid
    a_psi = _apply_observable(f, observable, h, axis)
    local = g.local_inner(f.conditional, a_psi)
    local = np.where(f.node_mask, np.nan, local.real)
    weights = np.where(f.node_mask, 0.0, f.rho_mar)
    global_value = float(np.nansum(weights * np.nan_to_num(local)) * g.clock_weight)
    return local, global_value


def effective_clock_potential(f: FactorizedState, h: CompositeHamiltonian):
    """U_C(R) = <Psi(R)|H|Psi(R)>, the clock's mean-field (BO-like) surface.

    Returns (u_c, max_imag): the real part on unmasked points (NaN where
    masked) and the largest imaginary contamination found.  Evaluated on the
    zero-phase gauge representative so the report is gauge-invariant.
    """
    f = canonical(f)
    g = f.grid
    h_psi = h.apply(f.conditional)
    local = g.local_inner(f.conditional, h_psi)
    max_imag = float(np.max(np.abs(np.where(f.node_mask, 0.0, local.imag))))
    u_c = np.where(f.node_mask, np.nan, local.real)
    return u_c, max_imag


def mean_clock_momentum(f: FactorizedState, h: CompositeHamiltonian, n: int) -> np.ndarray:
    """Mean-field kinetic coupling <Psi(R)| m_n^{-1} P_n |Psi(R)> (complex)."""
    g = f.grid
    m = g.clock_axes[n].mass
    p_psi = h.apply_clock_momentum(n, f.conditional)
    out = g.local_inner(f.conditional, p_psi) / m
    return np.where(f.node_mask, 0.0, out)
