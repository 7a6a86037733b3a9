"""Versioned on-disk dumps of eigenstates and factorized states (npz)."""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, DimensionError
from .factorization import FactorizedState
from .lattice import ProductGrid
from .spectral import JointEigenstate

DUMP_VERSION = 1


def save_state(path, state: JointEigenstate):
    np.savez_compressed(
        path,
        version=np.int64(DUMP_VERSION),
        kind=np.bytes_(b"joint_eigenstate"),
        grid_hash=np.bytes_(state.grid.hash().encode()),
        amplitudes=state.amplitudes,
        energy=np.float64(state.energy),
        residual=np.float64(state.residual),
        degenerate=np.bool_(state.degenerate),
    )


def _check(data, kind, grid):
    if int(data["version"]) != DUMP_VERSION:
        raise ConfigurationError(f"state dump version {int(data['version'])} != {DUMP_VERSION}")
    if bytes(data["kind"]) != kind:
        raise ConfigurationError(f"dump holds {bytes(data['kind'])!r}, expected {kind!r}")
    if grid is not None and bytes(data["grid_hash"]).decode() != grid.hash():
        raise DimensionError("state dump was written on a different grid")


def load_state(path, grid: ProductGrid) -> JointEigenstate:
    with np.load(path) as data:
        _check(data, b"joint_eigenstate", grid)
        return JointEigenstate(
            grid,
            np.asarray(data["amplitudes"]),
            float(data["energy"]),
            float(data["residual"]),
            bool(data["degenerate"]),
        )


def save_factorized(path, f: FactorizedState):
    np.savez_compressed(
        path,
        version=np.int64(DUMP_VERSION),
        kind=np.bytes_(b"factorized_state"),
        grid_hash=np.bytes_(f.grid.hash().encode()),
        marginal=f.marginal,
        conditional=f.conditional,
        gauge_phase=f.gauge_phase,
        node_mask=f.node_mask,
    )


def load_factorized(path, grid: ProductGrid) -> FactorizedState:
    with np.load(path) as data:
        _check(data, b"factorized_state", grid)
        return FactorizedState(
            grid,
            np.asarray(data["marginal"]),
            np.asarray(data["conditional"]),
            np.asarray(data["gauge_phase"]),
            np.asarray(data["node_mask"]),
        )
