"""Occlusion auto-labeling: rasterize agents, ray-trace visibility from the ego.

From an ego viewpoint, other agents' oriented footprints are burned into an
ego-centered occupancy grid; a cell is *occluded* when some occupied cell
lies strictly between it and the ego along the traced ray, and
*out_of_range* when its center is farther than the grid half-extent.  An
agent is labeled occluded at a timestep when the cell containing its center
is anything but visible (its own footprint never blocks itself).

Ray traversal (fully documented so an independent oracle can check it):
walk from the center of the ego cell toward the center of the target cell,
visiting every cell the segment passes through, in order.  With integer
cell offsets (di, dj), the segment crosses its (r+1)-th row boundary at
parameter (1+2r)/(2|di|) and its (c+1)-th column boundary at
(1+2c)/(2|dj|); the walk always takes the earlier crossing, comparing
exactly via integers: (1+2r)*|dj| versus (1+2c)*|di|.  When the two are
equal the segment passes through a cell corner and the walk steps
diagonally, touching neither corner-adjacent side cell (they would get zero
segment length).  The traversal is therefore exact, platform-independent,
and equivariant under 90-degree grid rotations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidEgoError, InvariantError, NoEligibleAgentError
from .rng import SeedStream
from .scene import SceneTensor

VISIBLE = 0
OCCLUDED = 1
OUT_OF_RANGE = 2


@dataclass(frozen=True)
class GridSpec:
    """Ego-centered square grid: spans ego +- half_extent at ``resolution`` m/cell.

    Paper-style occupancy grids leave these parameters open; the defaults
    (0.5 m cells over +-60 m) cover typical interaction ranges.
    """

    resolution: float = 0.5
    half_extent: float = 60.0

    def __post_init__(self):
        if not self.resolution > 0:
            raise InvariantError(f"resolution must be positive, got {self.resolution}")
        if self.half_extent < self.resolution:
            raise InvariantError("half_extent must be at least one cell")

    @property
    def cells_per_axis(self) -> int:
        return math.ceil(2.0 * self.half_extent / self.resolution)


class OccupancyGrid:
    """Boolean [H, W] grid (row = y cell, col = x cell) around an ego position."""

    __slots__ = ("occupied", "spec", "ego_xy", "ego_cell")

    def __init__(self, occupied: np.ndarray, spec: GridSpec, ego_xy: tuple[float, float]):
        occupied = np.asarray(occupied, dtype=bool)
        m = spec.cells_per_axis
        if occupied.shape != (m, m):
            raise InvariantError(f"occupancy grid must be ({m}, {m}), got {occupied.shape}")
        self.occupied = occupied
        self.spec = spec
        self.ego_xy = (float(ego_xy[0]), float(ego_xy[1]))
        self.ego_cell = cell_of(spec, self.ego_xy, self.ego_xy)
        if self.ego_cell is None:
            raise InvariantError("ego must sit inside its own grid")


class VisibilityGrid:
    """Per-cell visibility state: VISIBLE / OCCLUDED / OUT_OF_RANGE."""

    __slots__ = ("state",)

    def __init__(self, state: np.ndarray):
        self.state = np.asarray(state, dtype=np.int8)


def cell_of(spec: GridSpec, ego_xy, point_xy):
    """Cell (row, col) containing a world point, or None when outside the grid."""
    m = spec.cells_per_axis
    col = math.floor((point_xy[0] - (ego_xy[0] - spec.half_extent)) / spec.resolution)
    row = math.floor((point_xy[1] - (ego_xy[1] - spec.half_extent)) / spec.resolution)
    if 0 <= row < m and 0 <= col < m:
        return (row, col)
    return None


def cell_center(spec: GridSpec, ego_xy, cell) -> tuple[float, float]:
    row, col = cell
    x0 = ego_xy[0] - spec.half_extent
    y0 = ego_xy[1] - spec.half_extent
    return (x0 + (col + 0.5) * spec.resolution, y0 + (row + 0.5) * spec.resolution)


def ray_cells(start, end) -> list[tuple[int, int]]:
    """Cells visited walking from the center of ``start`` to the center of
    ``end``, inclusive of both, using the exact integer traversal documented
    in the module docstring."""
    ai, aj = start
    bi, bj = end
    di, dj = bi - ai, bj - aj
    ni, nj = abs(di), abs(dj)
    si = 1 if di > 0 else -1
    sj = 1 if dj > 0 else -1
    cells = [(ai, aj)]
    i, j = ai, aj
    r = c = 0  # boundary crossings taken along rows / columns
    while (i, j) != (bi, bj):
        if r < ni and c < nj:
            lhs = (1 + 2 * r) * nj  # row-crossing time  x (2*ni*nj)
            rhs = (1 + 2 * c) * ni  # col-crossing time  x (2*ni*nj)
            if lhs < rhs:
                i += si
                r += 1
            elif lhs > rhs:
                j += sj
                c += 1
            else:  # exact corner: step both axes, touching neither side cell
                i += si
                j += sj
                r += 1
                c += 1
        elif r < ni:
            i += si
            r += 1
        else:
            j += sj
            c += 1
        cells.append((i, j))
    return cells


def select_ego(scene: SceneTensor, seed: int) -> int:
    """Seeded uniform choice among agents valid at every history timestep."""
    history_valid = scene.valid[:, :scene.t_obs].all(axis=1)
    eligible = np.flatnonzero(history_valid)
    if len(eligible) == 0:
        raise NoEligibleAgentError("no agent is valid over the full history")
    return int(eligible[SeedStream(seed).below(len(eligible))])


def _footprint_cells(spec: GridSpec, ego_xy, x, y, heading, length, width):
    """Cells whose squares overlap the oriented footprint with positive area.

    Zero-area footprints mark only the cell containing the center.  Uses a
    strict separating-axis test on the grid axes and the two footprint axes,
    so edge-touching cells are not occupied.
    """
    if length <= 0.0 or width <= 0.0:
        c = cell_of(spec, ego_xy, (x, y))
        return [c] if c is not None else []
    m = spec.cells_per_axis
    res = spec.resolution
    x0 = ego_xy[0] - spec.half_extent
    y0 = ego_xy[1] - spec.half_extent
    ch, sh = math.cos(heading), math.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    # footprint corners, world frame
    corners = np.array([
        (x + ch * dx - sh * dy, y + sh * dx + ch * dy)
        for dx, dy in ((hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw))
    ])
    lo = corners.min(axis=0)
    hi = corners.max(axis=0)
    c_lo = max(0, math.floor((lo[0] - x0) / res))
    c_hi = min(m - 1, math.floor((hi[0] - x0) / res))
    r_lo = max(0, math.floor((lo[1] - y0) / res))
    r_hi = min(m - 1, math.floor((hi[1] - y0) / res))
    if c_lo > c_hi or r_lo > r_hi:
        return []
    axes = ((1.0, 0.0), (0.0, 1.0), (ch, sh), (-sh, ch))
    rect_proj = [corners @ np.array(ax) for ax in axes]
    cells = []
    for row in range(r_lo, r_hi + 1):
        for col in range(c_lo, c_hi + 1):
            cx0, cy0 = x0 + col * res, y0 + row * res
            cell_corners = np.array([
                (cx0, cy0), (cx0 + res, cy0), (cx0 + res, cy0 + res), (cx0, cy0 + res)
            ])
            overlap = True
            for ax, rp in zip(axes, rect_proj):
                cp = cell_corners @ np.array(ax)
                if not (rp.min() < cp.max() and cp.min() < rp.max()):
                    overlap = False
                    break
            if overlap:
                cells.append((row, col))
    return cells


def rasterize_agents(scene: SceneTensor, t: int, ego_index: int,
                     spec: GridSpec) -> OccupancyGrid:
    """Occupancy at timestep ``t``: every valid non-ego footprint burned in."""
    if not (0 <= t < scene.t_total):
        raise InvariantError(f"timestep {t} out of range")
    ego_xy = (float(scene.xy[ego_index, t, 0]), float(scene.xy[ego_index, t, 1]))
    m = spec.cells_per_axis
    occupied = np.zeros((m, m), dtype=bool)
    for i in range(scene.n_agents):
        if i == ego_index or not scene.valid[i, t]:
            continue
        for cell in _footprint_cells(spec, ego_xy,
                                     float(scene.xy[i, t, 0]), float(scene.xy[i, t, 1]),
                                     float(scene.heading[i, t]),
                                     float(scene.size[i, t, 0]), float(scene.size[i, t, 1])):
            occupied[cell] = True
    return OccupancyGrid(occupied, spec, ego_xy)


def trace_visibility(grid: OccupancyGrid, spec: GridSpec | None = None) -> VisibilityGrid:
    """Classify every cell by walking its ray from the ego cell center.

    A cell is OCCLUDED when any strictly intermediate cell on its ray is
    occupied (occupied cells are themselves visible until something blocks
    the way first); OUT_OF_RANGE when its center is farther than half_extent
    from the ego cell center.  The ego cell is always visible.
    """
    spec = spec or grid.spec
    m = spec.cells_per_axis
    state = np.full((m, m), VISIBLE, dtype=np.int8)
    ego = grid.ego_cell
    max_range_sq = (spec.half_extent / spec.resolution) ** 2
    occ = grid.occupied
    for row in range(m):
        for col in range(m):
            if (row - ego[0]) ** 2 + (col - ego[1]) ** 2 > max_range_sq:
                state[row, col] = OUT_OF_RANGE
                continue
            if (row, col) == ego:
                continue
            for cell in ray_cells(ego, (row, col))[1:-1]:
                if occ[cell]:
                    state[row, col] = OCCLUDED
                    break
    return VisibilityGrid(state)


class OcclusionLabels:
    """Per agent, per timestep occlusion flags from a fixed ego viewpoint."""

    __slots__ = ("occluded", "ego_index")

    def __init__(self, occluded: np.ndarray, ego_index: int):
        occluded = np.asarray(occluded, dtype=bool)
        if occluded.ndim != 2:
            raise InvariantError(f"labels must be 2-D, got {occluded.shape}")
        if occluded[ego_index].any():
            raise InvariantError("ego row must be all False")
        occluded = np.ascontiguousarray(occluded)
        occluded.flags.writeable = False
        self.occluded = occluded
        self.ego_index = int(ego_index)


def save_occlusion_labels(labels_by_id: dict[str, OcclusionLabels], path) -> None:
    """JSON Lines: {scenario_id, ego_index, occluded: [[bool x T] x N]}."""
    import json
    with open(path, "w", encoding="utf-8") as fh:
        for sid, labels in labels_by_id.items():
            obj = {"scenario_id": sid, "ego_index": labels.ego_index,
                   "occluded": [[bool(v) for v in row] for row in labels.occluded]}
            fh.write(json.dumps(obj, separators=(",", ":")))
            fh.write("\n")


def load_occlusion_labels(path) -> dict[str, OcclusionLabels]:
    import json

    from .errors import SchemaError
    labels: dict[str, OcclusionLabels] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                labels[str(obj["scenario_id"])] = OcclusionLabels(
                    np.asarray(obj["occluded"], dtype=bool), int(obj["ego_index"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"line {line_no}: bad occlusion labels: {exc}") from exc
    return labels


def label_occluded_agents(scene: SceneTensor, ego_index: int,
                          spec: GridSpec) -> OcclusionLabels:
    """Label each non-ego agent occluded/visible at each timestep.

    At every timestep where the ego is valid, the occupancy grid is built
    with the target agent's own footprint excluded, and the target counts as
    occluded exactly when the cell holding its center is not visible (ray
    blocked or beyond range); agents outside the grid extent are occluded.
    Only the single ray to the target cell is walked, which is equivalent to
    reading that cell out of :func:`trace_visibility` on the target-excluded
    grid.  Timesteps with an invalid ego have no viewpoint and label False.
    Cells where the target itself is invalid are False.
    """
    n, t_total = scene.n_agents, scene.t_total
    if not (0 <= ego_index < n):
        raise InvalidEgoError(f"ego_index {ego_index} out of range")
    if not scene.valid[ego_index, :scene.t_obs].all():
        raise InvalidEgoError("ego must be valid over the full history")
    m = spec.cells_per_axis
    max_range_sq = (spec.half_extent / spec.resolution) ** 2
    occluded = np.zeros((n, t_total), dtype=bool)
    for t in range(t_total):
        if not scene.valid[ego_index, t]:
            continue
        ego_xy = (float(scene.xy[ego_index, t, 0]), float(scene.xy[ego_index, t, 1]))
        counts = np.zeros((m, m), dtype=np.int32)
        footprints = {}
        for i in range(n):
            if i == ego_index or not scene.valid[i, t]:
                continue
            cells = _footprint_cells(spec, ego_xy,
                                     float(scene.xy[i, t, 0]), float(scene.xy[i, t, 1]),
                                     float(scene.heading[i, t]),
                                     float(scene.size[i, t, 0]), float(scene.size[i, t, 1]))
            footprints[i] = set(cells)
            for cell in cells:
                counts[cell] += 1
        ego_cell = cell_of(spec, ego_xy, ego_xy)
        for i in range(n):
            if i == ego_index or not scene.valid[i, t]:
                continue
            target_cell = cell_of(spec, ego_xy,
                                  (float(scene.xy[i, t, 0]), float(scene.xy[i, t, 1])))
            if target_cell is None:
                occluded[i, t] = True
                continue
            dr = target_cell[0] - ego_cell[0]
            dc = target_cell[1] - ego_cell[1]
            if dr * dr + dc * dc > max_range_sq:
                occluded[i, t] = True
                continue
            own = footprints.get(i, set())
            for cell in ray_cells(ego_cell, target_cell)[1:-1]:
                blockers = counts[cell] - (1 if cell in own else 0)
                if blockers > 0:
                    occluded[i, t] = True
                    break
    return OcclusionLabels(occluded, ego_index)
