"""Legacy ASCII VTK snapshots and the energy log."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np

from ..diagnostics import EnergyReport, write_energy_csv
from ..discretization import SimState
from ..mesh import KarsticMesh

VTK_HEADER = "# vtk DataFile Version 3.0"
VTK_TRIANGLE = 5


def snapshot_name(case: str, step: int) -> str:
    return f"{case}_step{step:06d}.vtk"


def _fmt(values: np.ndarray) -> str:
    return "\n".join(" ".join(repr(float(v)) for v in np.atleast_1d(row)) for row in values)


def _mesh_lines(mesh: KarsticMesh, title: str) -> List[str]:
    pts = np.column_stack([mesh.nodes, np.zeros(mesh.n_nodes)])
    tris = mesh.triangles
    cells = np.column_stack([np.full(len(tris), 3), tris])
    return [
        VTK_HEADER,
        title.replace("\n", " ")[:255],
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_nodes} double",
        _fmt(pts),
        f"CELLS {len(tris)} {cells.size}",
        "\n".join(" ".join(str(int(v)) for v in row) for row in cells),
        f"CELL_TYPES {len(tris)}",
        "\n".join(str(VTK_TRIANGLE) for _ in range(len(tris))),
        f"CELL_DATA {len(tris)}",
        "SCALARS subdomain int 1",
        "LOOKUP_TABLE default",
        "\n".join(str(int(t)) for t in mesh.subdomain),
    ]


def _write(path: Path, lines: List[str]) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="ascii")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def write_mesh_vtk(mesh: KarsticMesh, path: Union[str, Path]) -> Path:
    """Mesh only: points, triangles and the integer subdomain tag per cell."""
    return _write(Path(path), _mesh_lines(mesh, "karstic mesh"))


def _point_fields(state: SimState) -> Dict[str, np.ndarray]:
    out = {"phi": state.phi.vertex_values(), "mu": state.mu.vertex_values(),
           "velocity_conduit": state.u_c.vertex_values(), "velocity_matrix": state.u_m.vertex_values(),
           "pressure_conduit": state.p_c.vertex_values(), "pressure_matrix": state.p_m.vertex_values()}
    # vertices outside a field's subdomain are written as zero
    return {k: np.nan_to_num(v, nan=0.0) for k, v in out.items()}


def write_state_vtk(state: SimState, mesh: KarsticMesh, path: Union[str, Path]) -> Path:
    """Snapshot with point data phi, mu, per-subdomain velocities and pressures."""
    lines = _mesh_lines(mesh, f"t = {state.time!r} step = {state.step}")
    lines.append(f"POINT_DATA {mesh.n_nodes}")
    for name, vals in _point_fields(state).items():
        if vals.ndim == 2:
            lines += [f"VECTORS {name} double", _fmt(np.column_stack([vals, np.zeros(len(vals))]))]
        else:
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default", _fmt(vals)]
    return _write(Path(path), lines)


def write_outputs(state: SimState, mesh: KarsticMesh, out_dir: Union[str, Path], case: str,
                  reports: Optional[Iterable[EnergyReport]] = None) -> List[Path]:
    """Write the snapshot ``<case>_step<k>.vtk`` and, if given, ``<case>_energy.csv``."""
    out_dir = Path(out_dir)
    files = [write_state_vtk(state, mesh, out_dir / snapshot_name(case, state.step))]
    if reports is not None:
        files.append(write_energy_csv(reports, out_dir / f"{case}_energy.csv"))
    return files
