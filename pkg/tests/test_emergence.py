import math

import numpy as np
import pytest

from chronolab.clockwork import (
    ClockModel,
    classical_trajectory,
    discrete_group_velocity,
    discrete_kinetic_energy,
    tick_schedule,
)
from chronolab.emergence import (
    chain_rule_fields,
    directional_derivative_2d,
    emergence_compare,
    gauge_to_tdse_frame,
    mass_scaling_fit,
    slice_conditional,
    tdse_propagate,
)
from chronolab.errors import (
    DimensionError,
    DomainError,
    InsufficientDataError,
    MaskError,
    RangeError,
)
from chronolab.factorization import FactorizedState
from chronolab.lattice import Axis, PotentialSpec, ProductGrid, build_hamiltonian

TWO_PI = 2.0 * math.pi


def _linear_conditional_state(n_r=16, n_x=12, periodic=False):
    """Synthetic factorized state whose conditional is linear in R."""
    gx = Axis("x", n_x, -3.0, 3.0)
    if periodic:
        gr = Axis("phi", n_r, 0.0, TWO_PI, boundary="periodic", mass=10.0)
    else:
        gr = Axis("R", n_r, -2.0, 2.0, mass=10.0)
    g = ProductGrid((gx,), (gr,))
    x = gx.points
    r = gr.points
    base = np.exp(-0.5 * x * x).astype(complex)
    cond = (1.0 + 0.3 * r)[:, None] * base[None, :]
    marg = np.ones(n_r, dtype=complex)
    marg /= np.sqrt(np.sum(np.abs(marg) ** 2) * g.clock_weight)
    return g, FactorizedState(
        g, marg, cond, np.zeros(n_r), np.zeros(n_r, dtype=bool)
    )


def test_slicing_is_exact_for_linear_conditional():
    g, f = _linear_conditional_state()
    model = ClockModel("linear", mass=10.0, momentum=5.0)
    traj = classical_trajectory(model, -1.5, (0.0, 6.0))
    ticks = tick_schedule(traj, 0.375)
    slices = slice_conditional(f, traj, ticks)
    x = g.system_axes[0].points
    base = np.exp(-0.5 * x * x)
    w = g.system_weight
    for s in slices:
        r = float(s.source_R[0])
        ref = (1.0 + 0.3 * r) * base
        ref = ref / np.sqrt(np.sum(np.abs(ref) ** 2) * w)
        assert np.max(np.abs(s.state - ref)) < 1e-12
        # linear fields are reproduced exactly at half resolution too
        assert s.interpolation_error < 1e-12


def test_slicing_outside_the_interior_raises():
    g, f = _linear_conditional_state()
    model = ClockModel("linear", mass=10.0, momentum=5.0)
    traj = classical_trajectory(model, -1.5, (0.0, 20.0))
    ticks = tick_schedule(traj, 2.0)  # runs past R = 2
    with pytest.raises(RangeError):
        slice_conditional(f, traj, ticks)


def test_slicing_a_masked_point_raises():
    g, f = _linear_conditional_state()
    f.node_mask[8] = True
    model = ClockModel("linear", mass=10.0, momentum=5.0)
    traj = classical_trajectory(model, -1.5, (0.0, 6.0))
    ticks = tick_schedule(traj, 0.375)
    with pytest.raises(MaskError):
        slice_conditional(f, traj, ticks)


def test_periodic_slicing_wraps():
    g, f = _linear_conditional_state(periodic=True)
    model = ClockModel("cyclic", mass=10.0, momentum=3.0)
    traj = classical_trajectory(model, 0.1, (0.0, 50.0))
    ticks = tick_schedule(traj, 5.0)
    slices = slice_conditional(f, traj, ticks)
    assert all(0.0 <= s.source_R[0] < TWO_PI for s in slices)


def _two_handle_plane_wave(n1=24, n2=12, l1=6, l2=3):
    gx = Axis("x", 10, -3.0, 3.0)
    g1 = Axis("phi1", n1, 0.0, TWO_PI, boundary="periodic", mass=20.0)
    g2 = Axis("phi2", n2, 0.0, TWO_PI, boundary="periodic", mass=20.0)
    g = ProductGrid((gx,), (g1, g2))
    x = gx.points
    base = np.exp(-0.5 * x * x).astype(complex)
    p1, p2 = g1.points, g2.points
    cond = (
        np.exp(1j * (l1 * p1[:, None] + l2 * p2[None, :]))[..., None] * base
    )
    marg = np.ones((n1, n2), dtype=complex)
    marg /= np.sqrt(np.sum(np.abs(marg) ** 2) * g.clock_weight)
    return g, FactorizedState(
        g, marg, cond, np.zeros((n1, n2)), np.zeros((n1, n2), dtype=bool)
    )


def test_chain_rule_per_axis_sum_doubles_the_rate():
    g, f = _two_handle_plane_wave()
    v = np.array([0.3, 0.15])
    directional, spurious = chain_rule_fields(f, v)
    assert np.max(np.abs(spurious - 2.0 * directional)) < 1e-14
    # lattice plane waves differentiate to i sin(l h)/h times themselves
    h1 = g.clock_axes[0].spacing
    h2 = g.clock_axes[1].spacing
    rate = 1j * (v[0] * math.sin(6 * h1) / h1 + v[1] * math.sin(3 * h2) / h2)
    assert np.max(np.abs(directional - rate * f.conditional)) < 1e-12
    with pytest.raises(DimensionError):
        chain_rule_fields(f, np.array([0.3]))


def test_directional_slices_track_the_joint_phase():
    g, f = _two_handle_plane_wave()
    model = ClockModel("two_handle", mass=20.0, momentum=(6.0, 3.0), handle_ratio=2)
    v = np.array([6.0, 3.0]) / 20.0
    traj = classical_trajectory(model, (0.0, 0.0), (0.0, 8.0))
    ticks = tick_schedule(traj, 0.5)
    slices = directional_derivative_2d(f, v, ticks)
    # the sliced phase advances at the full contraction v . l, not twice it
    w = g.system_weight
    overlaps = [np.vdot(slices[0].state, s.state) * w for s in slices]
    phases = np.unwrap(np.angle(overlaps))
    times = np.array([s.time for s in slices])
    fit = np.polyfit(times, phases, 1)[0]
    expected = 6.0 * v[0] + 3.0 * v[1]
    assert fit == pytest.approx(expected, rel=2e-2)
    with pytest.raises(DimensionError):
        directional_derivative_2d(_linear_conditional_state()[1], v, ticks)


def test_gauged_lattice_eigenstate_is_exactly_stationary():
    """A plane-wave rotor eigenstate, gauged with the discrete kinetic energy
    and the local energy, stops moving to machine precision."""
    n, m0, inertia = 32, 4, 25.0
    gx = Axis("x", 12, -4.0, 4.0)
    gp = Axis("phi", n, 0.0, TWO_PI, boundary="periodic", mass=inertia)
    g = ProductGrid((gx,), (gp,))
    h = build_hamiltonian(
        g,
        PotentialSpec("harmonic", {"omega_x": 1.0}),
        PotentialSpec("zero"),
        PotentialSpec("zero"),
    )
    x = gx.points
    base = np.exp(-0.5 * x * x).astype(complex)
    base /= np.sqrt(np.sum(np.abs(base) ** 2) * g.system_weight)
    phi = gp.points
    cond = np.broadcast_to(base, (n, 12)).astype(complex)
    marg = np.exp(1j * m0 * phi) / math.sqrt(TWO_PI)
    f = FactorizedState(g, marg, cond.copy(), m0 * phi, np.zeros(n, dtype=bool))

    model = ClockModel("cyclic", mass=inertia, momentum=float(m0))
    v = discrete_group_velocity(gp, m0)
    traj = classical_trajectory(model, 0.0, (0.0, 40.0), velocity=v)
    ticks = tick_schedule(traj, 2.0)
    slices = slice_conditional(f, traj, ticks)
    # the conditional is phi-independent here, so lambda along the path is
    # the constant total energy of the product state
    e_sys = float((np.vdot(base, (h.system_matrix() @ base)) * g.system_weight).real)
    e_kin = discrete_kinetic_energy(gp, m0)
    lam = np.full(len(slices), e_sys + e_kin)
    gauged, factor = gauge_to_tdse_frame(slices, model, lam, gp)
    assert factor.kinetic_energy == pytest.approx(e_kin)
    ref = gauged[0].state * np.exp(-1j * e_sys * (ticks.times - ticks.times[0]))[:, None]
    drift = max(
        np.max(np.abs(s.state - r)) for s, r in zip(gauged, ref)
    )
    assert drift < 1e-12


def test_gauge_frame_validation():
    g, f = _linear_conditional_state()
    model = ClockModel("linear", mass=10.0, momentum=5.0)
    traj = classical_trajectory(model, -1.5, (0.0, 6.0))
    ticks = tick_schedule(traj, 0.75)
    slices = slice_conditional(f, traj, ticks)
    ax = g.clock_axes[0]
    with pytest.raises(DomainError):
        gauge_to_tdse_frame(slices, model, np.zeros(len(slices)), ax, kinetic="exact")
    with pytest.raises(DimensionError):
        gauge_to_tdse_frame(slices, model, np.zeros(2), ax)


def _system_propagation_setup():
    gx = Axis("x", 48, -6.0, 6.0)
    gr = Axis("R", 8, -2.0, 2.0, mass=10.0)
    g = ProductGrid((gx,), (gr,))
    h = build_hamiltonian(
        g,
        PotentialSpec("harmonic", {"omega_x": 1.0}),
        PotentialSpec("zero"),
        PotentialSpec("zero"),
    )
    import scipy.linalg as la

    vals, vecs = la.eigh(h.system_matrix().toarray())
    psi0 = vecs[:, 0] / np.sqrt(np.sum(np.abs(vecs[:, 0]) ** 2) * g.system_weight)
    return g, h, float(vals[0]), psi0.astype(complex)


def test_tdse_propagation_holds_the_ground_state():
    g, h, e0, psi0 = _system_propagation_setup()
    model = ClockModel("linear", mass=10.0, momentum=1.0)
    traj = classical_trajectory(model, -1.5, (0.0, 4.0))
    ticks = tick_schedule(traj, 0.25)
    states, drift = tdse_propagate(h, traj, psi0, ticks, substeps=16)
    assert drift < 1e-12
    t_end = ticks.times[-1] - ticks.times[0]
    ref = np.exp(-1j * e0 * t_end) * psi0
    # Crank-Nicolson phase error is O(dt^2 E^3) per unit time
    assert np.max(np.abs(states[-1].reshape(-1) - ref)) < 1e-3
    fid = abs(np.vdot(states[-1].reshape(-1), psi0)) * g.system_weight
    assert fid == pytest.approx(1.0, abs=1e-12)


def test_tdse_propagation_validation():
    g, h, e0, psi0 = _system_propagation_setup()
    model = ClockModel("linear", mass=10.0, momentum=1.0)
    traj = classical_trajectory(model, -1.5, (0.0, 4.0))
    ticks = tick_schedule(traj, 0.5)
    with pytest.raises(DomainError):
        tdse_propagate(h, traj, psi0, ticks, substeps=0)
    with pytest.raises(DomainError):
        tdse_propagate(h, traj, 2.0 * psi0, ticks)
    with pytest.raises(DimensionError):
        tdse_propagate(h, traj, psi0[:-1], ticks)


def test_emergence_compare_reports_and_validation():
    g, f = _linear_conditional_state()
    model = ClockModel("linear", mass=10.0, momentum=5.0)
    traj = classical_trajectory(model, -1.5, (0.0, 6.0))
    ticks = tick_schedule(traj, 0.375)
    slices = slice_conditional(f, traj, ticks)
    states = [s.state for s in slices]
    rep = emergence_compare(slices, states, g.system_weight, model, traj)
    assert rep.min_fidelity == pytest.approx(1.0, abs=1e-13)
    assert len(rep.second_order_magnitude) == len(slices) - 2
    assert rep.harmonic_correction_magnitude is None  # no turning points

    harm = ClockModel("harmonic", mass=10.0, momentum=5.0, spring=2.0)
    htraj = classical_trajectory(harm, 0.0, (0.0, 6.0))
    hticks = tick_schedule(htraj, 0.375, min_speed=0.05)
    hslices = slice_conditional(f, htraj, hticks)
    hrep = emergence_compare(
        hslices, [s.state for s in hslices], g.system_weight, harm, htraj
    )
    assert hrep.harmonic_correction_magnitude is not None

    with pytest.raises(InsufficientDataError):
        emergence_compare(slices[:2], states[:2], g.system_weight)
    with pytest.raises(DimensionError):
        emergence_compare(slices, states[:-1], g.system_weight)


def test_mass_scaling_fit_recovers_power_law():
    masses = [1e2, 1e3, 1e4]
    pairs = [(m, 3.0 * m ** -2.0) for m in masses]
    assert mass_scaling_fit(pairs) == pytest.approx(-2.0, abs=1e-12)
    with pytest.raises(InsufficientDataError):
        mass_scaling_fit([(1e2, 1e-3)])
