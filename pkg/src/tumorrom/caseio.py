"""Case directory serialization.

A case is stored as a directory of plain JSON files:

    mesh.json      vertices, cells, boundary facets
    tensors.json   per-cell tissue labels and D, T components (row-major)
    fields.json    phi0, n0, target nodal values
    schedule.json  therapy windows and rates
    meta.json      format version, dt, N_steps, T_final, units

Floats are written as decimal text with full round-trip precision, so a
save/load cycle is bitwise lossless.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import InvalidConfigError
from .mesh import Mesh
from .params import TherapySchedule
from .phantom import CaseData

FORMAT_VERSION = 1


def _dump(path: Path, obj):
    path.write_text(json.dumps(obj, indent=1))


def _load(path: Path):
    if not path.is_file():
        raise InvalidConfigError(f"missing case file {path}")
    return json.loads(path.read_text())


def save_case(case: CaseData, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    _dump(root / "mesh.json", {
        "vertices": case.mesh.vertices.tolist(),
        "cells": case.mesh.cells.tolist(),
        "boundary_facets": case.mesh.boundary_facets.tolist(),
    })
    _dump(root / "tensors.json", {
        "tissue": case.tissue.tolist(),
        "D": case.D.reshape(case.mesh.num_cells, -1).tolist(),
        "T": case.T.reshape(case.mesh.num_cells, -1).tolist(),
        "chi": case.chi.tolist(),
    })
    _dump(root / "fields.json", {
        "phi0": case.phi0.tolist(),
        "n0": case.n0.tolist(),
        "target": case.target.tolist(),
    })
    _dump(root / "schedule.json", {
        "radio_windows": [list(w) for w in case.therapy.radio_windows],
        "R_eff": case.therapy.R_eff,
        "chemo_windows": [list(w) for w in case.therapy.chemo_windows],
    })
    _dump(root / "meta.json", {
        "format_version": FORMAT_VERSION,
        "dt": case.dt,
        "N_steps": case.N_steps,
        "T_final": case.T_final,
        "units": {"length": "mm", "time": "day", "pressure": "Pa"},
    })


def load_case(path) -> CaseData:
    root = Path(path)
    meta = _load(root / "meta.json")
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise InvalidConfigError(
            f"unsupported case format version {version!r}")
    mesh_doc = _load(root / "mesh.json")
    mesh = Mesh(np.array(mesh_doc["vertices"], dtype=float),
                np.array(mesh_doc["cells"], dtype=np.int64),
                boundary_facets=np.array(mesh_doc["boundary_facets"],
                                         dtype=np.int64))
    tens = _load(root / "tensors.json")
    nc, d = mesh.num_cells, mesh.dim
    fields = _load(root / "fields.json")
    sched_doc = _load(root / "schedule.json")
    schedule = TherapySchedule(
        radio_windows=tuple(tuple(w) for w in sched_doc["radio_windows"]),
        R_eff=float(sched_doc["R_eff"]),
        chemo_windows=tuple(tuple(w) for w in sched_doc["chemo_windows"]))
    return CaseData(
        mesh=mesh,
        tissue=np.array(tens["tissue"], dtype=str),
        D=np.array(tens["D"], dtype=float).reshape(nc, d, d),
        T=np.array(tens["T"], dtype=float).reshape(nc, d, d),
        chi=np.array(tens["chi"], dtype=float),
        phi0=np.array(fields["phi0"], dtype=float),
        n0=np.array(fields["n0"], dtype=float),
        target=np.array(fields["target"], dtype=float),
        T_final=float(meta["T_final"]),
        N_steps=int(meta["N_steps"]),
        dt=float(meta["dt"]),
        therapy=schedule)
