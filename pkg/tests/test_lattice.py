import math

import numpy as np
import pytest

from chronolab.errors import ConfigurationError, DomainError
from chronolab.lattice import (
    Axis,
    PotentialSpec,
    ProductGrid,
    _stencil_matrix,
    build_hamiltonian,
    derivative,
)

TWO_PI = 2.0 * math.pi


def _grid(nx=16, nr=16, boundary="dirichlet"):
    gx = Axis("x", nx, -5.0, 5.0)
    if boundary == "periodic":
        gr = Axis("R", nr, 0.0, TWO_PI, boundary="periodic", mass=2.0)
    else:
        gr = Axis("R", nr, -2.0, 2.0, mass=2.0)
    return ProductGrid((gx,), (gr,))


def test_dirichlet_axis_stores_interior_points():
    ax = Axis("x", 9, 0.0, 1.0)
    assert ax.spacing == pytest.approx(0.1)
    assert ax.points[0] == pytest.approx(0.1)
    assert ax.points[-1] == pytest.approx(0.9)


def test_periodic_axis_covers_half_open_interval():
    ax = Axis("phi", 8, 0.0, TWO_PI, boundary="periodic")
    assert ax.spacing == pytest.approx(TWO_PI / 8)
    assert ax.points[-1] == pytest.approx(TWO_PI - ax.spacing)


def test_angular_dirichlet_axis_rejected():
    with pytest.raises(ConfigurationError):
        Axis("phi", 8, 0.0, TWO_PI)


def test_axis_validation():
    with pytest.raises(ConfigurationError):
        Axis("x", 4, 0.0, 1.0)
    with pytest.raises(ConfigurationError):
        Axis("x", 8, 1.0, 0.0)
    with pytest.raises(ConfigurationError):
        Axis("x", 8, 0.0, 1.0, mass=-1.0)


def test_periodic_plane_wave_is_discrete_eigenfunction():
    ax = Axis("phi", 64, 0.0, TWO_PI, boundary="periodic")
    z = ax.points
    h = ax.spacing
    fld = np.exp(3j * z)
    d2 = derivative(fld, 0, ax, 2, second=True)
    eig = (2.0 * math.cos(3 * h) - 2.0) / (h * h)
    assert np.max(np.abs(d2 - eig * fld)) < 1e-12


def test_fourth_order_stencil_converges_faster():
    errs = {}
    for order in (2, 4):
        ax = Axis("phi", 64, 0.0, TWO_PI, boundary="periodic")
        z = ax.points
        d2 = derivative(np.sin(3 * z), 0, ax, order, second=True)
        errs[order] = np.max(np.abs(d2 + 9 * np.sin(3 * z)))
    assert errs[4] < errs[2] / 20


@pytest.mark.parametrize("boundary", ["dirichlet", "periodic"])
@pytest.mark.parametrize("order", [2, 4])
@pytest.mark.parametrize("second", [False, True])
def test_stencil_matrix_matches_derivative(boundary, order, second):
    if boundary == "periodic":
        ax = Axis("z", 17, 0.0, TWO_PI, boundary="periodic")
    else:
        ax = Axis("z", 17, -1.0, 1.0)
    rng = np.random.default_rng(1)
    fld = rng.normal(size=17) + 1j * rng.normal(size=17)
    ref = derivative(fld, 0, ax, order, second)
    mat = _stencil_matrix(ax, order, second)
    assert np.max(np.abs(mat @ fld - ref)) < 1e-12


def test_potential_kinds():
    g = _grid()
    v = PotentialSpec("harmonic", {"omega_x": 2.0}).evaluate(g, "system")
    x = g.mesh(g.system_axes[0])
    assert np.allclose(np.broadcast_to(v, g.shape), 2.0 * x * x)

    v = PotentialSpec("bilinear_coupling", {"strength": 0.3}).evaluate(g, "interaction")
    r = g.mesh(g.clock_axes[0])
    assert np.allclose(np.broadcast_to(v, g.shape), 0.3 * x * r)

    with pytest.raises(ConfigurationError):
        PotentialSpec("bilinear_coupling", {"strength": 0.3}).evaluate(g, "system")
    with pytest.raises(ConfigurationError):
        PotentialSpec("no_such_kind")
    with pytest.raises(ConfigurationError):
        PotentialSpec("tabulated", table=np.zeros((3, 3))).evaluate(g, "system")


def test_hamiltonian_apply_matches_sparse_matrix():
    g = _grid()
    h = build_hamiltonian(
        g,
        PotentialSpec("harmonic", {"omega_x": 1.0}),
        PotentialSpec("harmonic", {"omega_R": 0.5}),
        PotentialSpec("bilinear_coupling", {"strength": 0.2}),
    )
    rng = np.random.default_rng(2)
    fld = rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)
    via_apply = h.apply(fld)
    via_matrix = (h.sparse_matrix() @ fld.ravel()).reshape(g.shape)
    assert np.max(np.abs(via_apply - via_matrix)) < 1e-12


def test_hamiltonian_is_hermitian():
    g = _grid(boundary="periodic")
    h = build_hamiltonian(
        g,
        PotentialSpec("harmonic", {"omega_x": 1.0}),
        PotentialSpec("zero"),
        PotentialSpec("cosine_coupling", {"strength": 0.1}),
    )
    mat = h.sparse_matrix()
    assert abs(mat - mat.getH()).max() < 1e-13


def test_nonfinite_potential_rejected():
    g = _grid()
    bad = np.full(tuple(a.count for a in g.system_axes), np.nan)
    with pytest.raises(DomainError):
        build_hamiltonian(
            g,
            PotentialSpec("tabulated", table=bad),
            PotentialSpec("zero"),
            PotentialSpec("zero"),
        )


def test_grid_quadrature_normalization():
    g = _grid()
    fld = np.ones(g.shape, dtype=complex)
    fld /= g.norm(fld)
    assert g.inner(fld, fld).real == pytest.approx(1.0, abs=1e-13)
    local = g.local_inner(fld, fld)
    assert local.shape == g.clock_shape
