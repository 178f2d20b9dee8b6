"""Structured unit-square triangular mesh (crossed / union-jack layout)."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FACES = ("left", "right", "bottom", "top")
_COORD_TOL = 1e-12


@dataclass(frozen=True)
class Mesh:
    """Immutable triangle mesh on [0, 1]^2.

    ``nodes`` is (N, 2), ``elements`` is (M, 3) with counter-clockwise node
    indices, ``boundary`` maps face name to a sorted array of node indices.
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary: dict
    grid_n: int
    _areas: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def areas(self) -> np.ndarray:
        return self._areas

    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    def shape_gradients(self) -> np.ndarray:
        """Constant P1 shape-function gradients, shape (M, 3, 2)."""
        p = self.nodes[self.elements]
        x, y = p[..., 0], p[..., 1]
        two_a = 2.0 * self._areas
        # dN_a/dx = (y_b - y_c) / 2A, dN_a/dy = (x_c - x_b) / 2A  (a, b, c cyclic)
        b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        return np.stack([b, c], axis=2) / two_a[:, None, None]


def signed_areas(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    p = nodes[elements]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_crossed_mesh(grid_n: int) -> Mesh:
    """Split each of ``grid_n``² square cells into four triangles about its centroid.

    Corner-grid nodes come first in row-major order (x fastest), followed by
    the cell centroids in the same order.
    """
    if isinstance(grid_n, bool) or not isinstance(grid_n, (int, np.integer)) or grid_n < 1:
        raise ValueError(f"grid_n must be a positive integer, got {grid_n!r}")
    n = int(grid_n)
    h = 1.0 / n
    ticks = np.arange(n + 1) * h
    ticks[-1] = 1.0
    gx, gy = np.meshgrid(ticks, ticks)
    corners = np.column_stack([gx.ravel(), gy.ravel()])
    mids = (np.arange(n) + 0.5) * h
    cx, cy = np.meshgrid(mids, mids)
    centres = np.column_stack([cx.ravel(), cy.ravel()])
    nodes = np.vstack([corners, centres])

    j, i = np.divmod(np.arange(n * n), n)  # row-major cells: i along x, j along y
    sw = j * (n + 1) + i
    se = sw + 1
    nw = sw + (n + 1)
    ne = nw + 1
    c = (n + 1) ** 2 + j * n + i
    tris = np.stack(
        [
            np.column_stack([sw, se, c]),  # bottom
            np.column_stack([se, ne, c]),  # right
            np.column_stack([ne, nw, c]),  # top
            np.column_stack([nw, sw, c]),  # left
        ],
        axis=1,
    ).reshape(-1, 3)
    elements = tris.astype(np.int64)
    areas = signed_areas(nodes, elements)
    nodes.setflags(write=False)
    elements.setflags(write=False)
    areas.setflags(write=False)
    mesh = Mesh(nodes=nodes, elements=elements, boundary={}, grid_n=n, _areas=areas)
    object.__setattr__(mesh, "boundary", boundary_sets(mesh))
    return mesh


def boundary_sets(mesh: Mesh) -> dict:
    """Face name -> sorted node indices, found by coordinate test."""
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    tests = {
        "left": np.abs(x) <= _COORD_TOL,
        "right": np.abs(x - 1.0) <= _COORD_TOL,
        "bottom": np.abs(y) <= _COORD_TOL,
        "top": np.abs(y - 1.0) <= _COORD_TOL,
    }
    return {name: np.flatnonzero(mask) for name, mask in tests.items()}


def write_vtk(
    path: str | Path,
    mesh: Mesh,
    point_data: dict | None = None,
    cell_data: dict | None = None,
    title: str = "elastmap mesh",
) -> None:
    """Write a legacy-ASCII VTK unstructured grid.

    Scalar arrays of length N (point) or M (cell) and (N, 3)/(N, 2) vectors
    are accepted; 2-component vectors are padded with a zero z-component.
    """
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_nodes} double")
    lines.extend(f"{x!r} {y!r} 0.0" for x, y in mesh.nodes.tolist())
    m = mesh.n_elements
    lines.append(f"CELLS {m} {4 * m}")
    lines.extend(f"3 {a} {b} {c}" for a, b, c in mesh.elements.tolist())
    lines.append(f"CELL_TYPES {m}")
    lines.extend(["5"] * m)
    for kind, data, count in (
        ("POINT_DATA", point_data, mesh.n_nodes),
        ("CELL_DATA", cell_data, m),
    ):
        if not data:
            continue
        lines.append(f"{kind} {count}")
        for name, values in data.items():
            arr = np.asarray(values, dtype=float)
            if arr.shape[0] != count:
                raise ValueError(f"{name}: expected {count} values, got {arr.shape[0]}")
            if arr.ndim == 1:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(repr(v) for v in arr.tolist())
            else:
                if arr.shape[1] == 2:
                    arr = np.column_stack([arr, np.zeros(count)])
                lines.append(f"VECTORS {name} double")
                lines.extend(" ".join(repr(v) for v in row) for row in arr.tolist())
    Path(path).write_text("\n".join(lines) + "\n")
