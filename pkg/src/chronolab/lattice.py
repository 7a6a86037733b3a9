"""Discretized configuration spaces and the composite Hamiltonian.

The composite Hamiltonian is H = H_S + H_C + H_I acting on fields over the
product of a system grid (coordinates x) and a clock grid (coordinates R).
Everything is in hbar = 1 units; kinetic terms are -(1/2m) d^2/dz^2 per axis,
discretized with centered finite differences of order 2 or 4.

Fields are ndarrays of shape clock_shape + system_shape (row-major, system
axes fastest-varying), so a conditional slice field[R_index] is contiguous.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DimensionError, DomainError

TWO_PI = 2.0 * math.pi

# centered stencil coefficients, offset -> weight (divide by h or h^2)
_D1_COEF = {
    2: {-1: -0.5, 1: 0.5},
    4: {-2: 1.0 / 12.0, -1: -2.0 / 3.0, 1: 2.0 / 3.0, 2: -1.0 / 12.0},
}
_D2_COEF = {
    2: {-1: 1.0, 0: -2.0, 1: 1.0},
    4: {-2: -1.0 / 12.0, -1: 4.0 / 3.0, 0: -5.0 / 2.0, 1: 4.0 / 3.0, 2: -1.0 / 12.0},
}


@dataclass(frozen=True)
class Axis:
    """One discretized coordinate axis.

    Dirichlet axes store interior points only (the wavefunction vanishes on
    the box walls); periodic axes store count points covering [min, max).
    """

    label: str
    count: int
    min: float
    max: float
    boundary: str = "dirichlet"
    mass: float = 1.0

    def __post_init__(self):
        if self.count < 8:
            raise ConfigurationError(f"axis {self.label!r}: count must be >= 8, got {self.count}")
        if not self.max > self.min:
            raise ConfigurationError(f"axis {self.label!r}: max must exceed min")
        if self.boundary not in ("dirichlet", "periodic"):
            raise ConfigurationError(f"axis {self.label!r}: unknown boundary {self.boundary!r}")
        if self.mass <= 0:
            raise ConfigurationError(f"axis {self.label!r}: mass must be positive")
        # angular axes over [0, 2*pi) must wrap
        if (
            self.boundary == "dirichlet"
            and abs(self.min) < 1e-12
            and abs(self.max - TWO_PI) < 1e-9
        ):
            raise ConfigurationError(
                f"axis {self.label!r}: an angular axis spanning [0, 2*pi) must be periodic"
            )

    @property
    def spacing(self) -> float:
        span = self.max - self.min
        if self.boundary == "periodic":
            return span / self.count
        return span / (self.count + 1)

    @property
    def points(self) -> np.ndarray:
        h = self.spacing
        if self.boundary == "periodic":
            return self.min + h * np.arange(self.count)
        return self.min + h * (1 + np.arange(self.count))


@dataclass(frozen=True)
class ProductGrid:
    """Product of clock and system axes.  Array layout: clock axes first."""

    system_axes: tuple
    clock_axes: tuple

    def __post_init__(self):
        object.__setattr__(self, "system_axes", tuple(self.system_axes))
        object.__setattr__(self, "clock_axes", tuple(self.clock_axes))
        labels = [a.label for a in self.clock_axes + self.system_axes]
        if len(set(labels)) != len(labels):
            raise ConfigurationError("system and clock axis labels must be disjoint")
        if not self.system_axes or not self.clock_axes:
            raise ConfigurationError("need at least one system axis and one clock axis")

    @property
    def axes(self) -> tuple:
        return self.clock_axes + self.system_axes

    @property
    def shape(self) -> tuple:
        return tuple(a.count for a in self.axes)

    @property
    def clock_shape(self) -> tuple:
        return tuple(a.count for a in self.clock_axes)

    @property
    def system_shape(self) -> tuple:
        return tuple(a.count for a in self.system_axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def weight(self) -> float:
        """Quadrature weight of one grid cell (trapezoid on dirichlet with
        zero walls and rectangle on periodic both reduce to prod(h))."""
        return float(np.prod([a.spacing for a in self.axes]))

    @property
    def clock_weight(self) -> float:
        return float(np.prod([a.spacing for a in self.clock_axes]))

    @property
    def system_weight(self) -> float:
        return float(np.prod([a.spacing for a in self.system_axes]))

    def axis_index(self, axis: Axis) -> int:
        return self.axes.index(axis)

    def check_shape(self, fld: np.ndarray):
        if fld.shape != self.shape:
            raise DimensionError(f"field shape {fld.shape} does not match grid {self.shape}")

    def mesh(self, axis: Axis) -> np.ndarray:
        """Axis coordinates broadcast to the full grid shape."""
        i = self.axis_index(axis)
        shape = [1] * len(self.axes)
        shape[i] = axis.count
        return axis.points.reshape(shape)

    def inner(self, u: np.ndarray, v: np.ndarray) -> complex:
        """<u|v> with the grid quadrature, deterministic reduction order."""
        return complex(np.vdot(u, v) * self.weight)

    def norm(self, u: np.ndarray) -> float:
        return math.sqrt(max(self.inner(u, u).real, 0.0))

    def local_inner(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """<u(R)|v(R)>: integrate over the system axes only; clock-shaped result."""
        n_sys = len(self.system_axes)
        axes = tuple(range(-n_sys, 0))
        return np.sum(np.conj(u) * v, axis=axes) * self.system_weight

    def hash(self) -> str:
        spec = [
            (a.label, a.count, a.min, a.max, a.boundary, a.mass, role)
            for role, group in (("clock", self.clock_axes), ("system", self.system_axes))
            for a in group
        ]
        return hashlib.sha256(json.dumps(spec, sort_keys=True).encode()).hexdigest()[:16]


def _shift(fld: np.ndarray, axis: int, offset: int, boundary: str) -> np.ndarray:
    """Return fld evaluated at index i+offset along axis (ghost values = 0
    for dirichlet, wrap-around for periodic)."""
    if offset == 0:
        return fld
    if boundary == "periodic":
        return np.roll(fld, -offset, axis=axis)
    out = np.zeros_like(fld)
    src = [slice(None)] * fld.ndim
    dst = [slice(None)] * fld.ndim
    if offset > 0:
        src[axis] = slice(offset, None)
        dst[axis] = slice(None, -offset)
    else:
        src[axis] = slice(None, offset)
        dst[axis] = slice(-offset, None)
    out[tuple(dst)] = fld[tuple(src)]
    return out


def derivative(fld: np.ndarray, axis_pos: int, ax: Axis, order: int, second: bool) -> np.ndarray:
    """Centered finite-difference first or second derivative along one axis."""
    coef = (_D2_COEF if second else _D1_COEF)[order]
    h = ax.spacing
    scale = h * h if second else h
    out = np.zeros(fld.shape, dtype=np.result_type(fld, float))
    for off, w in coef.items():
        out += w * _shift(fld, axis_pos, off, ax.boundary)
    return out / scale


def _stencil_matrix(ax: Axis, order: int, second: bool) -> sp.csr_matrix:
    """1D sparse derivative matrix matching `derivative` exactly."""
    coef = (_D2_COEF if second else _D1_COEF)[order]
    h = ax.spacing
    scale = h * h if second else h
    n = ax.count
    rows, cols, vals = [], [], []
    for off, w in coef.items():
        if ax.boundary == "periodic":
            r = np.arange(n)
            c = (r + off) % n
        else:
            r = np.arange(max(0, -off), min(n, n - off))
            c = r + off
        rows.append(r)
        cols.append(c)
        vals.append(np.full(len(r), w / scale))
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()


@dataclass(frozen=True)
class PotentialSpec:
    """Parametrized potential over a group of axes.

    kinds:
      zero
      harmonic           0.5 * m_a * omega_a^2 * (z_a - center_a)^2, summed over axes
                         (params: omega or omega_<label>, center or center_<label>)
      double_well        height * ((z/width)^2 - 1)^2        (params: height, width, axis)
      gaussian_barrier   height * exp(-(z-center)^2/(2 width^2))
      bilinear_coupling  strength * x * R                    (interaction only)
      cosine_coupling    strength * x * cos(R - phase)       (interaction only)
      tabulated          explicit table matching the group shape

    Axis selection parameters (axis, system_axis, clock_axis) are 0-based
    indices into the respective axis groups, stored as reals.
    """

    kind: str
    parameters: dict = field(default_factory=dict)
    table: np.ndarray | None = None

    _KINDS = (
        "zero",
        "harmonic",
        "double_well",
        "gaussian_barrier",
        "bilinear_coupling",
        "cosine_coupling",
        "tabulated",
    )

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ConfigurationError(f"unknown potential kind {self.kind!r}")
        if self.kind == "tabulated" and self.table is None:
            raise ConfigurationError("tabulated potential requires a table")

    def _p(self, name, default=None, label=None):
        if label is not None and f"{name}_{label}" in self.parameters:
            return float(self.parameters[f"{name}_{label}"])
        if name in self.parameters:
            return float(self.parameters[name])
        if default is None:
            raise ConfigurationError(f"potential {self.kind!r} missing parameter {name!r}")
        return float(default)

    def evaluate(self, grid: ProductGrid, group: str) -> np.ndarray:
        """Evaluate on the full grid, broadcastable to grid.shape.

        group is 'system', 'clock' or 'interaction' and determines which
        axes the potential may touch.
        """
        if group == "system":
            axes = grid.system_axes
        elif group == "clock":
            axes = grid.clock_axes
        elif group == "interaction":
            axes = grid.axes
        else:
            raise ConfigurationError(f"unknown potential group {group!r}")

        if self.kind == "zero":
            return np.zeros((1,) * len(grid.axes))

        if self.kind == "harmonic":
            labels = {ax.label for ax in axes}
            for key in self.parameters:
                stem, _, lab = key.partition("_")
                if stem not in ("omega", "center"):
                    raise ConfigurationError(
                        f"harmonic potential: unknown parameter {key!r}")
                if lab and lab not in labels:
                    raise ConfigurationError(
                        f"harmonic potential: {key!r} names no axis in "
                        f"{sorted(labels)}")
            v = np.zeros((1,) * len(grid.axes))
            for ax in axes:
                w = self._p("omega", default=0.0, label=ax.label)
                if w == 0.0:
                    continue
                c = self._p("center", default=0.0, label=ax.label)
                z = grid.mesh(ax)
                v = v + 0.5 * ax.mass * w * w * (z - c) ** 2
            return v

        if self.kind in ("double_well", "gaussian_barrier"):
            ax = axes[int(self._p("axis", default=0))]
            z = grid.mesh(ax)
            if self.kind == "double_well":
                height = self._p("height")
                width = self._p("width")
                return height * ((z / width) ** 2 - 1.0) ** 2
            height = self._p("height")
            center = self._p("center", default=0.0)
            width = self._p("width")
            return height * np.exp(-((z - center) ** 2) / (2.0 * width * width))

        if self.kind in ("bilinear_coupling", "cosine_coupling"):
            if group != "interaction":
                raise ConfigurationError(f"{self.kind} is only valid as an interaction potential")
            sx = grid.system_axes[int(self._p("system_axis", default=0))]
            cr = grid.clock_axes[int(self._p("clock_axis", default=0))]
            k = self._p("strength")
            x = grid.mesh(sx)
            r = grid.mesh(cr)
            if self.kind == "bilinear_coupling":
                return k * x * r
            phase = self._p("phase", default=0.0)
            return k * x * np.cos(r - phase)

        # tabulated
        tab = np.asarray(self.table, dtype=float)
        expected = tuple(a.count for a in axes)
        if tab.shape != expected:
            raise ConfigurationError(
                f"tabulated potential shape {tab.shape} does not match axes {expected}"
            )
        if group == "interaction":
            return tab
        # broadcast a group-shaped table to full rank
        shape = [1] * len(grid.axes)
        for a, n in zip(axes, expected):
            shape[grid.axis_index(a)] = n
        return tab.reshape(shape)


class CompositeHamiltonian:
    """H = H_S + H_C + H_I as a linear operator over product-grid fields."""

    def __init__(self, grid, system_potential, clock_potential, interaction_potential, fd_order=2):
        if fd_order not in (2, 4):
            raise ConfigurationError(f"fd_order must be 2 or 4, got {fd_order}")
        self.grid = grid
        self.fd_order = fd_order
        self.system_potential_spec = system_potential
        self.clock_potential_spec = clock_potential
        self.interaction_potential_spec = interaction_potential

        self.system_potential = system_potential.evaluate(grid, "system")
        self.clock_potential = clock_potential.evaluate(grid, "clock")
        self.interaction_potential = interaction_potential.evaluate(grid, "interaction")
        self.total_potential = (
            self.system_potential + self.clock_potential + self.interaction_potential
        )
        for name, v in (
            ("system", self.system_potential),
            ("clock", self.clock_potential),
            ("interaction", self.interaction_potential),
        ):
            if not np.all(np.isfinite(v)):
                raise DomainError(f"{name} potential is not finite on the grid")

        self._n_clock = len(grid.clock_axes)
        self._matrix = None

    # -- kinetic building blocks ------------------------------------------------

    def _kinetic(self, fld, axes, offset=0):
        """Sum of -(1/2m) d^2/dz^2 over the given axes.  offset positions the
        first of those axes within fld (0 for both full fields and clock-only
        fields, since clock axes lead)."""
        out = np.zeros(fld.shape, dtype=np.result_type(fld, float))
        for k, ax in enumerate(axes):
            out += derivative(fld, offset + k, ax, self.fd_order, second=True) * (
                -0.5 / ax.mass
            )
        return out

    def apply(self, fld: np.ndarray) -> np.ndarray:
        """Apply the full Hamiltonian to a product-grid field."""
        self.grid.check_shape(fld)
        g = self.grid
        out = self._kinetic(fld, g.clock_axes, 0)
        out += self._kinetic(fld, g.system_axes, self._n_clock)
        out += self.total_potential * fld
        return out

    def apply_system(self, fld: np.ndarray) -> np.ndarray:
        """H_S only (system kinetic + system potential).  Accepts both full
        product-grid fields and bare system-grid fields."""
        g = self.grid
        if fld.shape == g.system_shape:
            out = np.zeros(fld.shape, dtype=np.result_type(fld, float))
            for k, ax in enumerate(g.system_axes):
                out += derivative(fld, k, ax, self.fd_order, second=True) * (-0.5 / ax.mass)
            vs = self.system_potential[(0,) * self._n_clock]
            return out + vs * fld
        g.check_shape(fld)
        return self._kinetic(fld, g.system_axes, self._n_clock) + self.system_potential * fld

    def apply_clock_kinetic(self, fld: np.ndarray) -> np.ndarray:
        """T_C applied to a product-grid field or a clock-only field."""
        g = self.grid
        if fld.shape not in (g.shape, g.clock_shape):
            raise DimensionError(f"field shape {fld.shape} matches neither grid nor clock grid")
        return self._kinetic(fld, g.clock_axes, 0)

    def apply_clock_momentum(self, n: int, fld: np.ndarray) -> np.ndarray:
        """P_n = -i d/dR_n applied to a product-grid or clock-only field."""
        g = self.grid
        if not 0 <= n < self._n_clock:
            raise IndexError(f"clock axis index {n} out of range")
        if fld.shape not in (g.shape, g.clock_shape):
            raise DimensionError(f"field shape {fld.shape} matches neither grid nor clock grid")
        ax = g.clock_axes[n]
        return -1j * derivative(fld, n, ax, self.fd_order, second=False)

    # -- assembled matrices -----------------------------------------------------

    def sparse_matrix(self) -> sp.csr_matrix:
        """Full H as a sparse CSR matrix over flattened fields (cached)."""
        if self._matrix is None:
            g = self.grid
            n = g.size
            mat = sp.csr_matrix((n, n))
            eyes = [sp.identity(a.count, format="csr") for a in g.axes]
            for i, ax in enumerate(g.axes):
                d2 = _stencil_matrix(ax, self.fd_order, second=True) * (-0.5 / ax.mass)
                factors = list(eyes)
                factors[i] = d2
                term = factors[0]
                for f in factors[1:]:
                    term = sp.kron(term, f, format="csr")
                mat = mat + term
            v = np.broadcast_to(self.total_potential, g.shape).ravel()
            mat = mat + sp.diags(v)
            self._matrix = mat.tocsr()
        return self._matrix

    def system_matrix(self, extra_potential=None) -> sp.csr_matrix:
        """H_S (plus an optional extra multiplicative potential) on the system grid."""
        g = self.grid
        n = int(np.prod(g.system_shape))
        mat = sp.csr_matrix((n, n))
        eyes = [sp.identity(a.count, format="csr") for a in g.system_axes]
        for i, ax in enumerate(g.system_axes):
            d2 = _stencil_matrix(ax, self.fd_order, second=True) * (-0.5 / ax.mass)
            factors = list(eyes)
            factors[i] = d2
            term = factors[0]
            for f in factors[1:]:
                term = sp.kron(term, f, format="csr")
            mat = mat + term
        vs = np.broadcast_to(self.system_potential, g.shape)[(0,) * self._n_clock].ravel()
        mat = mat + sp.diags(vs)
        if extra_potential is not None:
            mat = mat + sp.diags(np.asarray(extra_potential, dtype=float).ravel())
        return mat.tocsr()

    def clock_kinetic_matrix(self) -> sp.csr_matrix:
        """T_C on the clock grid."""
        g = self.grid
        n = int(np.prod(g.clock_shape))
        mat = sp.csr_matrix((n, n))
        eyes = [sp.identity(a.count, format="csr") for a in g.clock_axes]
        for i, ax in enumerate(g.clock_axes):
            d2 = _stencil_matrix(ax, self.fd_order, second=True) * (-0.5 / ax.mass)
            factors = list(eyes)
            factors[i] = d2
            term = factors[0]
            for f in factors[1:]:
                term = sp.kron(term, f, format="csr")
            mat = mat + term
        return mat.tocsr()

    def clock_momentum_matrix(self, n: int):
        """P_n = -i d/dR_n on the clock grid (complex sparse matrix)."""
        g = self.grid
        eyes = [sp.identity(a.count, format="csr") for a in g.clock_axes]
        d1 = _stencil_matrix(g.clock_axes[n], self.fd_order, second=False) * (-1j)
        factors = list(eyes)
        factors[n] = d1
        term = factors[0]
        for f in factors[1:]:
            term = sp.kron(term, f, format="csr")
        return term.tocsr()


def build_hamiltonian(grid, system_potential, clock_potential, interaction_potential, fd_order=2):
    """Assemble the composite Hamiltonian; validates potentials on the grid."""
    return CompositeHamiltonian(
        grid, system_potential, clock_potential, interaction_potential, fd_order
    )
