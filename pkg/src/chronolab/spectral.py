"""Eigenpairs of the composite Hamiltonian and working-state selection."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as la
import scipy.sparse.linalg as sla

from .errors import SelectionError, SolverError
from .lattice import CompositeHamiltonian, ProductGrid

DENSE_CUTOFF = 4096
DEGENERACY_GAP = 1e-9


@dataclass
class JointEigenstate:
    """Normalized composite eigenstate Phi(x,R) with its energy and residual."""

    grid: ProductGrid
    amplitudes: np.ndarray
    energy: float
    residual: float
    degenerate: bool = False

    def copy(self):
        return replace(self, amplitudes=self.amplitudes.copy())


def _fix_phase(vec: np.ndarray) -> np.ndarray:
    """Rotate the global phase so the largest-magnitude entry is real positive."""
    flat = vec.reshape(-1)
    a = flat[int(np.argmax(np.abs(flat)))]
    if a != 0:
        vec = vec * (np.abs(a) / a)
    return vec


def _residual(h: CompositeHamiltonian, fld: np.ndarray, energy: float) -> float:
    g = h.grid
    r = h.apply(fld) - energy * fld
    return g.norm(r) / max(g.norm(fld), 1e-300)


def _mark_degenerate(states):
    energies = np.array([s.energy for s in states])
    for i, s in enumerate(states):
        close = np.abs(energies - s.energy) < DEGENERACY_GAP
        s.degenerate = bool(np.count_nonzero(close) > 1)
    return states


def solve_eigenpairs(
    h: CompositeHamiltonian,
    how_many: int,
    which: str = "lowest",
    target_energy: float | None = None,
    tol: float = 1e-9,
    force: str | None = None,
) -> list[JointEigenstate]:
    """Compute eigenpairs of H, sorted by energy and quadrature-normalized.

    which='lowest' returns the lowest `how_many` states; which='nearest'
    returns the `how_many` states closest to `target_energy` (shift-invert).
    Grids below DENSE_CUTOFF points use a dense solver; larger grids use an
    iterative Krylov solver.  `force` ('dense'/'iterative') overrides the
    size heuristic, for cross-checks.
    """
    if how_many < 1:
        raise ValueError("how_many must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if which == "nearest" and target_energy is None:
        raise ValueError("which='nearest' requires target_energy")
    if which not in ("lowest", "nearest"):
        raise ValueError(f"unknown which={which!r}")

    g = h.grid
    n = g.size
    mat = h.sparse_matrix()
    use_dense = (n < DENSE_CUTOFF) if force is None else (force == "dense")

    if use_dense:
        dense = mat.toarray()
        vals, vecs = la.eigh(dense)
        if which == "lowest":
            idx = np.arange(min(how_many, n))
        else:
            idx = np.argsort(np.abs(vals - target_energy), kind="stable")[:how_many]
            idx = idx[np.argsort(vals[idx], kind="stable")]
        vals, vecs = vals[idx], vecs[:, idx]
    else:
        k = min(how_many, n - 2)
        try:
            if which == "lowest":
                vals, vecs = sla.eigsh(mat, k=k, which="SA", tol=0)
            else:
                vals, vecs = sla.eigsh(mat, k=k, sigma=target_energy, which="LM", tol=0)
        except sla.ArpackNoConvergence as exc:
            best = None
            if exc.eigenvalues is not None and len(exc.eigenvalues):
                v = exc.eigenvectors[:, 0]
                best = _residual(h, v.reshape(g.shape), float(exc.eigenvalues[0]))
            raise SolverError(f"eigensolver did not converge: {exc}", best_residual=best)
        order = np.argsort(vals, kind="stable")
        vals, vecs = vals[order], vecs[:, order]

    states = []
    for e, v in zip(vals, vecs.T):
        fld = _fix_phase(v.astype(complex)).reshape(g.shape)
        fld = fld / g.norm(fld)
        res = _residual(h, fld, float(e))
        if res > tol:
            raise SolverError(
                f"eigenpair at E={e:.6g} has residual {res:.3e} > tol {tol:.3e}",
                best_residual=res,
            )
        states.append(JointEigenstate(g, fld, float(e), res))
    states.sort(key=lambda s: s.energy)
    return _mark_degenerate(states)


def select_state(
    candidates: list[JointEigenstate],
    criterion: str = "ground",
    reference: np.ndarray | None = None,
    degeneracy_gap: float = DEGENERACY_GAP,
) -> JointEigenstate:
    """Pick the working eigenstate.

    'ground' takes the lowest-energy candidate and refuses if it is
    degenerate (the factorization of an arbitrary vector in a degenerate
    subspace is not reproducible).  'max_overlap' picks, within each
    degenerate cluster, the in-subspace combination with maximal overlap
    with `reference`, then returns the best cluster (ties break to lower
    energy).  degeneracy_gap widens the clustering for quasi-degenerate
    multiplets split weakly by an interaction (e.g. counter-rotating clock
    pairs); the combined state then solves the eigenproblem only up to the
    cluster's energy spread, which is folded into its residual.
    """
    if not candidates:
        raise SelectionError("empty candidate list")
    ordered = sorted(candidates, key=lambda s: s.energy)

    if criterion == "ground":
        best = ordered[0]
        if best.degenerate:
            raise SelectionError(
                "ground state is degenerate; use max_overlap selection with a reference field"
            )
        return best

    if criterion != "max_overlap":
        raise SelectionError(f"unknown selection criterion {criterion!r}")
    if reference is None:
        raise SelectionError("max_overlap selection requires a reference field")

    g = ordered[0].grid
    ref = reference / max(g.norm(reference), 1e-300)

    # cluster by energy gaps below the degeneracy threshold
    clusters, current = [], [ordered[0]]
    for s in ordered[1:]:
        if abs(s.energy - current[-1].energy) < degeneracy_gap:
            current.append(s)
        else:
            clusters.append(current)
            current = [s]
    clusters.append(current)

    best_state, best_overlap = None, -1.0
    for cluster in clusters:
        coeffs = np.array([c.grid.inner(c.amplitudes, ref) for c in cluster])
        weight = np.linalg.norm(coeffs)
        if weight <= best_overlap + 1e-15:
            continue
        if len(cluster) == 1:
            combined = cluster[0]
        else:
            # projection of the reference onto the degenerate eigenspace
            fld = sum(c * s.amplitudes for c, s in zip(coeffs, cluster))
            fld = _fix_phase(fld / g.norm(fld))
            energies = [s.energy for s in cluster]
            spread = max(energies) - min(energies)
            combined = JointEigenstate(
                g,
                fld,
                float(np.mean(energies)),
                residual=max(max(s.residual for s in cluster), spread),
                degenerate=True,
            )
        best_state, best_overlap = combined, weight
    if best_state is None or best_overlap < 1e-12:
        raise SelectionError("reference field is orthogonal to every candidate")
    return best_state
