"""Legacy ASCII VTK output (DataFile version 2.0, unstructured grid)."""
from __future__ import annotations

import numpy as np

from .geometry import BuildModel

_TRIANGLE = 5


def write_vtk(path, model: BuildModel, point_data: dict | None = None,
              cell_data: dict | None = None, title: str = "lpbf-supportopt") -> None:
    """Write the mesh with optional nodal and per-element scalar fields."""
    n, ne = model.n_nodes, model.n_elements
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 2.0\n")
        f.write(f"{title}\n")
        f.write("ASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {n} double\n")
        pts = np.column_stack([model.nodes, np.zeros(n)])
        np.savetxt(f, pts, fmt="%.9g")
        f.write(f"CELLS {ne} {4 * ne}\n")
        cells = np.column_stack([np.full(ne, 3), model.elements])
        np.savetxt(f, cells, fmt="%d")
        f.write(f"CELL_TYPES {ne}\n")
        np.savetxt(f, np.full(ne, _TRIANGLE), fmt="%d")
        if point_data:
            f.write(f"POINT_DATA {n}\n")
            for name, values in point_data.items():
                _write_scalars(f, name, np.asarray(values), n)
        if cell_data:
            f.write(f"CELL_DATA {ne}\n")
            for name, values in cell_data.items():
                _write_scalars(f, name, np.asarray(values), ne)


def _write_scalars(f, name: str, values: np.ndarray, expected: int) -> None:
    if values.shape != (expected,):
        raise ValueError(f"VTK field {name!r}: expected shape ({expected},), got {values.shape}")
    if np.issubdtype(values.dtype, np.integer) or values.dtype == bool:
        f.write(f"SCALARS {name} int\nLOOKUP_TABLE default\n")
        np.savetxt(f, values.astype(int), fmt="%d")
    else:
        f.write(f"SCALARS {name} double\nLOOKUP_TABLE default\n")
        np.savetxt(f, values, fmt="%.9g")
