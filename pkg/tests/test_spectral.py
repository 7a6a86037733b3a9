import math

import numpy as np
import pytest
import scipy.linalg as la

from chronolab.errors import SelectionError, SolverError
from chronolab.lattice import Axis, PotentialSpec, ProductGrid, build_hamiltonian
from chronolab.spectral import select_state, solve_eigenpairs

TWO_PI = 2.0 * math.pi


def _separable_h(nx=16, nr=16):
    gx = Axis("x", nx, -6.0, 6.0)
    gr = Axis("R", nr, -4.0, 4.0, mass=2.0)
    g = ProductGrid((gx,), (gr,))
    return g, build_hamiltonian(
        g,
        PotentialSpec("harmonic", {"omega_x": 1.0}),
        PotentialSpec("harmonic", {"omega_R": 0.7}),
        PotentialSpec("zero"),
    )


def _cyclic_h(nphi=24, nx=12, strength=0.0):
    gphi = Axis("phi", nphi, 0.0, TWO_PI, boundary="periodic", mass=40.0)
    gx = Axis("x", nx, -5.0, 5.0)
    g = ProductGrid((gx,), (gphi,))
    kind = "cosine_coupling" if strength else "zero"
    params = {"strength": strength} if strength else {}
    return g, build_hamiltonian(
        g,
        PotentialSpec("harmonic", {"omega_x": 1.0}),
        PotentialSpec("zero"),
        PotentialSpec(kind, params),
    )


def test_separable_energies_are_sums_of_1d_energies():
    g, h = _separable_h()
    states = solve_eigenpairs(h, 4)
    e_sys = la.eigh(h.system_matrix().toarray(), eigvals_only=True)
    v_clk = np.broadcast_to(h.clock_potential, g.shape)[:, 0]
    e_clk = la.eigh(
        h.clock_kinetic_matrix().toarray() + np.diag(v_clk), eigvals_only=True
    )
    sums = sorted(a + b for a in e_sys[:4] for b in e_clk[:4])
    for st, ref in zip(states, sums[:4]):
        assert st.energy == pytest.approx(ref, abs=1e-10)


def test_eigenstates_are_normalized_with_small_residuals():
    g, h = _separable_h()
    states = solve_eigenpairs(h, 3)
    for st in states:
        assert g.norm(st.amplitudes) == pytest.approx(1.0, abs=1e-12)
        assert st.residual < 1e-10


def test_residual_tolerance_enforced():
    _, h = _separable_h(12, 12)
    with pytest.raises(SolverError):
        solve_eigenpairs(h, 1, tol=1e-18)


def test_dense_and_iterative_solvers_agree():
    _, h = _separable_h(20, 20)
    dense = solve_eigenpairs(h, 1, force="dense")[0]
    iterative = solve_eigenpairs(h, 1, force="iterative")[0]
    assert dense.energy == pytest.approx(iterative.energy, abs=1e-9)


def test_nearest_selection_requires_target():
    _, h = _separable_h(12, 12)
    with pytest.raises(ValueError):
        solve_eigenpairs(h, 1, which="nearest")


def test_degenerate_rotor_pair_is_flagged_and_ground_refuses():
    g, h = _cyclic_h()
    h_c = g.clock_axes[0].spacing
    target = (1 - math.cos(h_c)) / (h_c ** 2 * 40.0) + 0.5
    states = solve_eigenpairs(h, 4, "nearest", target_energy=target)
    pair = [s for s in states if s.degenerate]
    assert len(pair) >= 2, "rotor pairs of the real Hamiltonian should be degenerate"
    with pytest.raises(SelectionError):
        select_state(pair)


def test_max_overlap_restores_traveling_wave():
    g, h = _cyclic_h()
    m0 = 2
    target = (1 - math.cos(m0 * g.clock_axes[0].spacing)) / (
        g.clock_axes[0].spacing ** 2 * 40.0
    ) + 0.5
    states = solve_eigenpairs(h, 6, "nearest", target_energy=target)
    phi = g.clock_axes[0].points
    e_sys = la.eigh(h.system_matrix().toarray())
    psi0 = e_sys[1][:, 0]
    ref = np.exp(1j * m0 * phi)[:, None] * psi0[None, :]
    st = select_state(states, "max_overlap", ref.reshape(g.shape))
    rho = g.local_inner(st.amplitudes, st.amplitudes).real
    # a traveling rotor state has a flat marginal; a standing wave has nodes
    assert rho.max() / rho.min() < 1.0 + 1e-8


def test_select_state_errors():
    with pytest.raises(SelectionError):
        select_state([])
    g, h = _separable_h(12, 12)
    states = solve_eigenpairs(h, 2)
    with pytest.raises(SelectionError):
        select_state(states, "max_overlap")
    with pytest.raises(SelectionError):
        select_state(states, "no_such_criterion")
    with pytest.raises(SelectionError):
        select_state(states, "max_overlap", np.zeros(g.shape))


def test_quasi_degenerate_cluster_spread_folds_into_residual():
    g, h = _cyclic_h(strength=0.05)
    m0 = 2
    h_c = g.clock_axes[0].spacing
    target = (1 - math.cos(m0 * h_c)) / (h_c ** 2 * 40.0) + 0.5
    states = solve_eigenpairs(h, 8, "nearest", target_energy=target)
    phi = g.clock_axes[0].points
    psi0 = la.eigh(h.system_matrix().toarray())[1][:, 0]
    ref = (np.exp(1j * m0 * phi)[:, None] * psi0[None, :]).reshape(g.shape)
    st = select_state(states, "max_overlap", ref, degeneracy_gap=1e-3)
    assert st.degenerate
    # the pair is split by the interaction; the spread is reflected in residual
    assert st.residual > 1e-10
