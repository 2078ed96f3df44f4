"""Artifact writers: CSV/JSON tables plus matplotlib figures.

Every report command emits machine-readable tables and renders the
corresponding figures to PNG files in the same output directory.  All
tables carry a header row with units where applicable.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import matplotlib.tri as mtri    # noqa: E402
import numpy as np               # noqa: E402


def _tri(mesh):
    return mtri.Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1],
                              mesh.cells)


def _save_field_figure(path, mesh, fields, titles, cmap="viridis"):
    n = len(fields)
    fig, axes = plt.subplots(1, n, figsize=(4.2 * n, 3.6), squeeze=False)
    tri = _tri(mesh)
    for ax, f, title in zip(axes[0], fields, titles):
        pc = ax.tripcolor(tri, f, shading="gouraud", cmap=cmap)
        ax.set_aspect("equal")
        ax.set_title(title)
        ax.set_xlabel("x [mm]")
        ax.set_ylabel("y [mm]")
        fig.colorbar(pc, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_forward_report(outdir, case, snaps, final, wall):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    m = case.mesh.lumped_mass
    N = snaps.num_snapshots - 1
    rows = []
    for j in range(N + 1):
        phi = snaps.F1[:, j]
        rows.append([j, j * case.dt, float(m @ phi), float(phi.min()),
                     float(phi.max()), float(snaps.F3[:, j].min()),
                     float(snaps.F3[:, j].max())])
    _write_csv(out / "forward_audit.csv",
               ["step", "t [day]", "phi mass [mm^2]", "min phi", "max phi",
                "min n", "max n"], rows)
    (out / "forward_meta.json").write_text(json.dumps(
        {"wall_seconds": wall, "steps": N, "dt_days": case.dt}, indent=1))
    _save_field_figure(out / "forward_fields.png", case.mesh,
                       [final.phi, final.n],
                       ["phi at final time", "nutrient at final time"])
    arr = np.array(rows, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(arr[:, 1], arr[:, 2])
    ax.set_xlabel("t [day]")
    ax.set_ylabel("lumped mass of phi [mm^2]")
    fig.tight_layout()
    fig.savefig(out / "forward_mass.png", dpi=130)
    plt.close(fig)


def write_pod_report(outdir, pods):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    names = ["phi", "sigma", "n", "psi1p", "psi1pp"]
    bases = [pods.phi, pods.sigma, pods.n, pods.psi1p, pods.psi1pp]
    depth = max(len(b.energy) for b in bases)
    rows = []
    for i in range(depth):
        row = [i + 1]
        for b in bases:
            row.append(100.0 * b.energy[i] if i < len(b.energy) else "")
        rows.append(row)
    _write_csv(out / "pod_energy.csv",
               ["modes"] + [f"cum energy % ({n})" for n in names], rows)
    (out / "pod_meta.json").write_text(json.dumps(
        {"N_pod": pods.n_pod,
         "n_basis": {n: b.n_basis for n, b in zip(names, bases)},
         "deim_nodes": pods.deim_psi1pp.nodes.tolist(),
         "deim_cond_psi1p": pods.deim_psi1p.cond,
         "deim_cond_psi1pp": pods.deim_psi1pp.cond}, indent=1))
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    for n, b in zip(names, bases):
        lam = b.eigenvalues[b.eigenvalues > 0]
        ax.semilogy(np.arange(1, len(lam) + 1), lam / lam[0], label=n)
    ax.set_xlabel("mode")
    ax.set_ylabel("normalized eigenvalue")
    ax.set_xlim(0, 25)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "pod_spectrum.png", dpi=130)
    plt.close(fig)


def write_rom_fidelity_report(outdir, case, fom_phi, rom_phi, results):
    """`results` is a list of dicts with keys ic, N_pod, rel_error."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "rom_fidelity.csv",
               ["information content", "N_pod", "relative lumped-L2 error"],
               [[r["ic"], r["N_pod"], r["rel_error"]] for r in results])
    _save_field_figure(out / "rom_fidelity_fields.png", case.mesh,
                       [fom_phi, rom_phi, fom_phi - rom_phi],
                       ["full-order phi(T)", "reduced phi(T)", "difference"])


def write_sensitivity_report(outdir, rows):
    """Rows: (name, ||linearized||, ||fd||, relative error)."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "sensitivity_check.csv",
               ["parameter", "linearized norm", "central FD norm",
                "relative error"], rows)
    fig, ax = plt.subplots(figsize=(5.6, 3.4))
    names = [r[0] for r in rows]
    errs = [r[3] for r in rows]
    ax.bar(names, errs)
    ax.axhline(1e-2, color="r", linestyle="--", label="tolerance")
    ax.set_yscale("log")
    ax.set_ylabel("relative error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "sensitivity_check.png", dpi=130)
    plt.close(fig)


def write_optimize_report(outdir, trace, case, P_opt):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.json").write_text(json.dumps(
        {"status": trace.status, "outer": trace.outer, "inner": trace.inner,
         "P_opt": P_opt.to_dict()}, indent=1))
    _write_csv(out / "convergence.csv",
               ["k", "J_fom", "jaccard", "N_pod", "wall step1 [s]",
                "wall step2 [s]", "wall step3 [s]", "wall step4 [s]"],
               [[r["k"], r["J_fom"], r["jaccard"], r.get("N_pod", ""),
                 r.get("wall_step1", ""), r.get("wall_step2", ""),
                 r.get("wall_step3", ""), r.get("wall_step4", "")]
                for r in trace.outer])
    names = list(P_opt.to_dict().keys())
    _write_csv(out / "params.csv", ["k"] + names,
               [[r["k"]] + [r["P"][n] for n in names] for r in trace.outer])
    ks = [r["k"] for r in trace.outer]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    axes[0].plot(ks, [r["J_fom"] for r in trace.outer], "o-")
    axes[0].set_xlabel("outer iteration")
    axes[0].set_ylabel("J (full order)")
    axes[1].plot(ks, [r["jaccard"] for r in trace.outer], "s-")
    axes[1].set_xlabel("outer iteration")
    axes[1].set_ylabel("Jaccard index")
    fig.tight_layout()
    fig.savefig(out / "optimize_convergence.png", dpi=130)
    plt.close(fig)
