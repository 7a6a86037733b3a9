"""Render figures from an existing run directory (manifest + CSV artifacts)."""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigurationError


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array(
        [[float(v) for v in row] for row in rows[1:]], dtype=float
    ) if len(rows) > 1 else np.empty((0, len(header)))
    return header, data


def _save(fig, out_dir, name, written):
    path = os.path.join(out_dir, name)
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    written.append(name)


def render(out_dir) -> list:
    """Render one PNG per available curve artifact; returns the filenames."""
    manifest_path = os.path.join(out_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise ConfigurationError(f"no manifest.json in {out_dir!r}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    title = manifest.get("scenario", "")
    written = []

    path = os.path.join(out_dir, "marginal_density.csv")
    if os.path.exists(path):
        header, data = _read_csv(path)
        n_coord = len(header) - 2
        if n_coord == 1 and len(data):
            fig, ax1 = plt.subplots(figsize=(6, 4))
            ax1.plot(data[:, 0], data[:, 1], "C0-", label="marginal density")
            ax1.set_xlabel(header[0])
            ax1.set_ylabel("rho_mar", color="C0")
            ax2 = ax1.twinx()
            ax2.plot(data[:, 0], data[:, 2], "C1--", label="effective potential")
            ax2.set_ylabel("U_C", color="C1")
            ax1.set_title(f"{title}: clock marginal and effective potential")
            _save(fig, out_dir, "marginal_density.png", written)

    path = os.path.join(out_dir, "local_energy.csv")
    if os.path.exists(path):
        header, data = _read_csv(path)
        if len(header) == 2 and len(data):
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.plot(data[:, 0], data[:, 1], "C2-")
            ax.set_xlabel(header[0])
            ax.set_ylabel("lambda(R) / rho_mar")
            ax.set_title(f"{title}: local energy")
            _save(fig, out_dir, "local_energy.png", written)

    path = os.path.join(out_dir, "scf_trace.csv")
    if os.path.exists(path):
        _, data = _read_csv(path)
        if len(data):
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.semilogy(data[:, 0], data[:, 1], "C0-", label="marginal residual")
            ax.semilogy(data[:, 0], data[:, 2], "C1-", label="conditional residual")
            ax.set_xlabel("iteration")
            ax.set_ylabel("residual norm")
            ax.legend()
            ax.set_title(f"{title}: SCF convergence")
            _save(fig, out_dir, "scf_trace.png", written)

    path = os.path.join(out_dir, "fidelity_curve.csv")
    if os.path.exists(path):
        _, data = _read_csv(path)
        if len(data):
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.plot(data[:, 0], data[:, 1], "C3.-")
            ax.set_xlabel("time")
            ax.set_ylabel("fidelity")
            ax.set_title(f"{title}: conditional slices vs reference propagation")
            _save(fig, out_dir, "fidelity_curve.png", written)

    path = os.path.join(out_dir, "corrections.csv")
    if os.path.exists(path):
        _, data = _read_csv(path)
        if len(data):
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.semilogy(data[:, 0], data[:, 1], "C0.-", label="second order")
            if np.isfinite(data[:, 2]).any():
                ax.semilogy(data[:, 0], data[:, 2], "C1.-", label="harmonic correction")
            ax.set_xlabel("time")
            ax.set_ylabel("relative magnitude")
            ax.legend()
            ax.set_title(f"{title}: neglected-term magnitudes")
            _save(fig, out_dir, "corrections.png", written)

    path = os.path.join(out_dir, "mass_scaling.csv")
    if os.path.exists(path):
        _, data = _read_csv(path)
        if len(data):
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.loglog(data[:, 0], np.maximum(data[:, 1], 1e-16), "C4o-")
            ax.set_xlabel("clock inertia")
            ax.set_ylabel("1 - min fidelity")
            ax.set_title(f"{title}: classical-limit scaling")
            _save(fig, out_dir, "mass_scaling.png", written)

    return written
