"""Build-chamber geometry: structured triangle mesh, layer partition, part mask.

The chamber is meshed with a regular nx-by-ny grid of rectangular cells,
each split into two right triangles. Element rows align with layer
boundaries so every element belongs to exactly one build layer.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

_DIV_TOL = 1e-9


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BuildModel:
    """Immutable chamber mesh with layer partition and domain tags.

    nodes : (n_nodes, 2) coordinates, mm
    elements : (n_elements, 3) node indices, counter-clockwise
    layer_of_element : (n_elements,) 1-based layer index
    part_mask : (n_elements,) True for non-design part elements
    plate_nodes : node indices on the bottom boundary y = 0
    m : layer count
    layer_thickness : mm
    """

    nodes: np.ndarray
    elements: np.ndarray
    layer_of_element: np.ndarray
    part_mask: np.ndarray
    plate_nodes: np.ndarray
    m: int
    layer_thickness: float
    nx: int
    ny: int
    chamber_width: float
    chamber_height: float

    # derived geometry caches, filled in __post_init__
    areas: np.ndarray = field(default=None, repr=False, compare=False)
    grad_x: np.ndarray = field(default=None, repr=False, compare=False)
    grad_y: np.ndarray = field(default=None, repr=False, compare=False)
    node_layer: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for name in ("nodes", "elements", "layer_of_element", "part_mask", "plate_nodes"):
            _freeze(getattr(self, name))
        x = self.nodes[self.elements, 0]  # (ne, 3)
        y = self.nodes[self.elements, 1]
        # signed double area; CCW orientation makes it positive
        det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
        if np.any(det <= 0):
            raise ConfigError("elements: degenerate or clockwise triangle in mesh")
        areas = 0.5 * det
        # shape-function gradients: dN_i/dx = b_i, dN_i/dy = c_i
        b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / det[:, None]
        c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / det[:, None]
        rows_per_layer = self.ny // self.m
        iy = np.rint(self.nodes[:, 1] / (self.chamber_height / self.ny)).astype(int)
        node_layer = np.clip(iy // rows_per_layer + 1, 1, self.m)
        object.__setattr__(self, "areas", _freeze(areas))
        object.__setattr__(self, "grad_x", _freeze(b))
        object.__setattr__(self, "grad_y", _freeze(c))
        object.__setattr__(self, "node_layer", _freeze(node_layer))

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def element_centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    def part_nodes(self) -> np.ndarray:
        """Indices of all nodes touching at least one part element."""
        if not self.part_mask.any():
            return np.empty(0, dtype=int)
        return np.unique(self.elements[self.part_mask])


@dataclass(frozen=True)
class PartGeometry:
    """Parametric or rasterized part silhouette inside the chamber.

    kind is one of "overhang-beam", "mbb-like", "raster-mask".
    """

    kind: str
    params: dict
    grid: np.ndarray | None = None
    cell_size: float | None = None

    def rectangles(self) -> list[tuple[float, float, float, float]]:
        """Axis-aligned (x0, y0, x1, y1) rectangles making up a parametric part."""
        p = self.params
        if self.kind == "overhang-beam":
            x0 = p["x0"]
            wall_w = p["wall_width"]
            arm_y = p["arm_y"]
            arm_t = p["arm_thickness"]
            arm_l = p["arm_length"]
            rects = [(x0, 0.0, x0 + wall_w, arm_y + arm_t)]
            if arm_l > 0:
                rects.append((x0 + wall_w, arm_y, x0 + wall_w + arm_l, arm_y + arm_t))
            return rects
        if self.kind == "mbb-like":
            leg_w = p["leg_width"]
            beam_y = p["beam_y"]
            beam_t = p["beam_thickness"]
            beam_l = p["beam_length"]
            return [
                (0.0, 0.0, leg_w, beam_y + beam_t),
                (0.0, beam_y, beam_l, beam_y + beam_t),
            ]
        raise ConfigError(f"part.kind: no parametric rectangles for {self.kind!r}")

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Vectorized point-in-part test for (n, 2) points."""
        pts = np.asarray(points, dtype=float)
        if self.kind == "raster-mask":
            rows, cols = self.grid.shape
            col = np.floor(pts[:, 0] / self.cell_size).astype(int)
            row_from_bottom = np.floor(pts[:, 1] / self.cell_size).astype(int)
            row = rows - 1 - row_from_bottom
            inside = (col >= 0) & (col < cols) & (row >= 0) & (row < rows)
            out = np.zeros(len(pts), dtype=bool)
            out[inside] = self.grid[row[inside], col[inside]]
            return out
        out = np.zeros(len(pts), dtype=bool)
        for x0, y0, x1, y1 in self.rectangles():
            out |= (pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
        return out

    def bounds(self) -> tuple[float, float, float, float]:
        if self.kind == "raster-mask":
            rows, cols = self.grid.shape
            return (0.0, 0.0, cols * self.cell_size, rows * self.cell_size)
        rects = self.rectangles()
        return (
            min(r[0] for r in rects),
            min(r[1] for r in rects),
            max(r[2] for r in rects),
            max(r[3] for r in rects),
        )


def load_raster_part(path: str) -> PartGeometry:
    """Read a 0/1 raster silhouette.

    Format: first line "rows cols cell_size_mm", then `rows` lines of
    space-separated 0/1 values, row 0 being the top of the chamber.
    """
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 3:
            raise ConfigError(f"raster file {path}: header must be 'rows cols cell_size_mm'")
        rows, cols = int(header[0]), int(header[1])
        cell = float(header[2])
        if rows < 1 or cols < 1 or cell <= 0:
            raise ConfigError(f"raster file {path}: bad header values {header}")
        grid = np.zeros((rows, cols), dtype=bool)
        for r in range(rows):
            vals = f.readline().split()
            if len(vals) != cols:
                raise ConfigError(f"raster file {path}: row {r} has {len(vals)} values, expected {cols}")
            grid[r] = [v == "1" for v in vals]
    return PartGeometry(kind="raster-mask", params={"path": path}, grid=grid, cell_size=cell)


def build_mesh(chamber_width: float, chamber_height: float, nx: int, ny: int,
               layer_thickness: float) -> BuildModel:
    """Mesh the chamber into 2*nx*ny right triangles aligned with build layers.

    chamber_height must be an integer multiple of layer_thickness and ny
    must be divisible by the resulting layer count so that element rows
    never straddle a layer boundary.
    """
    if chamber_width <= 0 or chamber_height <= 0:
        raise ConfigError("geometry.chamber: dimensions must be > 0")
    if nx < 1 or ny < 1:
        raise ConfigError("geometry.nx/ny: must be >= 1")
    if layer_thickness <= 0:
        raise ConfigError("geometry.layer_thickness: must be > 0")
    m_f = chamber_height / layer_thickness
    m = round(m_f)
    if abs(m_f - m) > _DIV_TOL or m < 1:
        raise ConfigError(
            f"geometry.layer_thickness: chamber_height {chamber_height} is not an "
            f"integer multiple of layer_thickness {layer_thickness}"
        )
    if ny % m != 0:
        raise ConfigError(
            f"geometry.ny: {ny} element rows do not align with {m} layers "
            f"(ny must be divisible by m)"
        )

    xs = np.linspace(0.0, chamber_width, nx + 1)
    ys = np.linspace(0.0, chamber_height, ny + 1)
    X, Y = np.meshgrid(xs, ys)  # row-major, bottom row first
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(ix, iy):
        return iy * (nx + 1) + ix

    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny))
    ix, iy = ix.ravel(), iy.ravel()
    n00, n10 = nid(ix, iy), nid(ix + 1, iy)
    n01, n11 = nid(ix, iy + 1), nid(ix + 1, iy + 1)
    # two CCW triangles per cell: lower-right then upper-left
    tri = np.empty((2 * nx * ny, 3), dtype=int)
    tri[0::2] = np.column_stack([n00, n10, n11])
    tri[1::2] = np.column_stack([n00, n11, n01])

    rows_per_layer = ny // m
    cell_row = np.repeat(iy, 2)
    layer_of_element = cell_row // rows_per_layer + 1

    plate_nodes = np.arange(nx + 1)  # iy = 0 row

    return BuildModel(
        nodes=nodes,
        elements=tri,
        layer_of_element=layer_of_element,
        part_mask=np.zeros(tri.shape[0], dtype=bool),
        plate_nodes=plate_nodes,
        m=m,
        layer_thickness=layer_thickness,
        nx=nx,
        ny=ny,
        chamber_width=chamber_width,
        chamber_height=chamber_height,
    )


def apply_part_mask(model: BuildModel, part: PartGeometry) -> BuildModel:
    """Return a copy of the model with part_mask set from centroid containment."""
    x0, y0, x1, y1 = part.bounds()
    if x0 < -_DIV_TOL or y0 < -_DIV_TOL or x1 > model.chamber_width + _DIV_TOL \
            or y1 > model.chamber_height + _DIV_TOL:
        raise ConfigError(
            f"part: bounds ({x0}, {y0})-({x1}, {y1}) exceed chamber "
            f"{model.chamber_width} x {model.chamber_height}"
        )
    if part.kind == "raster-mask":
        dx = model.chamber_width / model.nx
        dy = model.chamber_height / model.ny
        for name, mesh_d in (("x", dx), ("y", dy)):
            ratio = part.cell_size / mesh_d
            if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
                raise ConfigError(
                    f"part: raster cell size {part.cell_size} is not an integer "
                    f"multiple of the mesh {name}-spacing {mesh_d}"
                )
        rows, cols = part.grid.shape
        if abs(cols * part.cell_size - model.chamber_width) > 1e-6 \
                or abs(rows * part.cell_size - model.chamber_height) > 1e-6:
            raise ConfigError(
                f"part: raster extent {cols * part.cell_size} x {rows * part.cell_size} "
                f"does not cover the chamber"
            )
    mask = part.contains(model.element_centroids())
    return dataclasses.replace(model, part_mask=mask)


def active_elements(model: BuildModel, stage: int) -> np.ndarray:
    """Element indices of all layers built up to and including `stage`."""
    if not 1 <= stage <= model.m:
        raise ConfigError(f"stage: {stage} out of range [1, {model.m}]")
    return np.flatnonzero(model.layer_of_element <= stage)
