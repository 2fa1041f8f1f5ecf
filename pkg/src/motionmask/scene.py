"""Scene data model: agents x time grids, map polylines, file I/O, normalization.

A scenario is a dense grid of agent states over ``t_total`` timesteps with a
per-cell validity flag, plus padded map polylines.  Cells that are invalid
are zero-filled (every numeric field exactly 0) so a masked or padded cell
carries no information.  Scenario values are immutable after construction;
all numpy arrays are locked read-only and safe to share across threads.

File format (JSON Lines, one scenario object per line)::

    {"scenario_id": ..., "dt": ..., "t_obs": ..., "ego_index": ...,
     "agents": [[{x, y, heading, vx, vy, length, width, kind, valid} x T] x N],
     "map": [{"lane_kind": ..., "points": [[x, y] ...], "valid_count": ...} x S]}

All floats are decimal with shortest round-trip representation; angles are
radians in (-pi, pi].  A line whose object carries a top-level ``"header"``
key is file metadata (e.g. converter provenance, per-field presence flags)
and is skipped by the loader.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvariantError, SchemaError

AGENT_KINDS = ("vehicle", "pedestrian", "cyclist", "other")
LANE_KINDS = ("lane_center", "boundary", "crosswalk", "other")

# Canonical kind stored for invalid cells; their numeric fields are zero so
# the kind must carry no information either.
INVALID_KIND = "other"


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]. The +0.0 folds -0.0 into +0.0."""
    w = math.remainder(theta, 2.0 * math.pi)
    if w <= -math.pi:
        w += 2.0 * math.pi
    return w + 0.0


@dataclass(frozen=True)
class AgentState:
    """One agent at one timestep. Invalid states are all-zero."""

    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    length: float = 0.0
    width: float = 0.0
    agent_kind: str = INVALID_KIND
    valid: bool = False


@dataclass(frozen=True)
class RigidTransform:
    """Planar rigid motion ``p' = R(angle) @ p + (tx, ty)``."""

    angle: float
    tx: float
    ty: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an array of points with trailing dimension 2."""
        c, s = math.cos(self.angle), math.sin(self.angle)
        rot = np.array([[c, -s], [s, c]])
        return points @ rot.T + np.array([self.tx, self.ty])

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        """Rotate vectors (no translation)."""
        c, s = math.cos(self.angle), math.sin(self.angle)
        rot = np.array([[c, -s], [s, c]])
        return vectors @ rot.T

    def inverse(self) -> "RigidTransform":
        c, s = math.cos(self.angle), math.sin(self.angle)
        # inverse rotation applied to -t
        itx = -(c * self.tx + s * self.ty)
        ity = -(-s * self.tx + c * self.ty)
        return RigidTransform(angle=-self.angle, tx=itx, ty=ity)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(0.0, 0.0, 0.0)


def _locked(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


class SceneTensor:
    """Dense [N agents][T timesteps] grid of agent states with validity.

    Backed by numpy arrays (all float64 / int64 / bool, read-only):

    - ``xy``       [N, T, 2]   positions (m)
    - ``heading``  [N, T]      radians in (-pi, pi]
    - ``vel``      [N, T, 2]   velocities (m/s)
    - ``size``     [N, T, 2]   (length, width) footprint (m)
    - ``kind``     [N, T]      index into AGENT_KINDS
    - ``valid``    [N, T]      bool
    """

    __slots__ = ("xy", "heading", "vel", "size", "kind", "valid",
                 "ego_index", "t_obs", "dt", "scenario_id")

    def __init__(self, xy, heading, vel, size, kind, valid,
                 ego_index: int, t_obs: int, dt: float, scenario_id: str):
        xy = np.asarray(xy, dtype=np.float64)
        heading = np.asarray(heading, dtype=np.float64)
        vel = np.asarray(vel, dtype=np.float64)
        size = np.asarray(size, dtype=np.float64)
        kind = np.asarray(kind, dtype=np.int64)
        valid = np.asarray(valid, dtype=bool)

        if xy.ndim != 3 or xy.shape[2] != 2:
            raise InvariantError(f"xy must be [N, T, 2], got {xy.shape}")
        n, t = xy.shape[:2]
        for name, arr, shape in (("heading", heading, (n, t)),
                                 ("vel", vel, (n, t, 2)),
                                 ("size", size, (n, t, 2)),
                                 ("kind", kind, (n, t)),
                                 ("valid", valid, (n, t))):
            if arr.shape != shape:
                raise InvariantError(f"{name} must have shape {shape}, got {arr.shape}")
        if n < 1:
            raise InvariantError("scene needs at least one agent")
        if not (2 <= t_obs < t):
            raise InvariantError(f"need 2 <= t_obs < t_total, got t_obs={t_obs}, t_total={t}")
        if not (0 <= ego_index < n):
            raise InvariantError(f"ego_index {ego_index} out of range for {n} agents")
        if not dt > 0:
            raise InvariantError(f"dt must be positive, got {dt}")
        for name, arr in (("xy", xy), ("heading", heading), ("vel", vel), ("size", size)):
            if not np.isfinite(arr).all():
                raise InvariantError(f"{name} contains non-finite values")
        if (size < 0).any():
            raise InvariantError("agent length/width must be nonnegative")
        if kind.min(initial=0) < 0 or kind.max(initial=0) >= len(AGENT_KINDS):
            raise InvariantError("agent kind index out of range")
        inv = ~valid
        if inv.any():
            numeric_nonzero = (
                (xy[inv] != 0).any() or (heading[inv] != 0).any()
                or (vel[inv] != 0).any() or (size[inv] != 0).any()
            )
            if numeric_nonzero:
                raise InvariantError("invalid cells must be zero-filled")
        if valid.any():
            h = heading[valid]
            if (h <= -math.pi).any() or (h > math.pi).any():
                raise InvariantError("headings must lie in (-pi, pi]")

        # Kind carries no information on invalid cells: canonicalize.
        kind = kind.copy()
        kind[inv] = AGENT_KINDS.index(INVALID_KIND)

        self.xy = _locked(xy)
        self.heading = _locked(heading)
        self.vel = _locked(vel)
        self.size = _locked(size)
        self.kind = _locked(kind)
        self.valid = _locked(valid)
        self.ego_index = int(ego_index)
        self.t_obs = int(t_obs)
        self.dt = float(dt)
        self.scenario_id = str(scenario_id)

    @property
    def n_agents(self) -> int:
        return self.xy.shape[0]

    @property
    def t_total(self) -> int:
        return self.xy.shape[1]

    def state(self, agent: int, t: int) -> AgentState:
        return AgentState(
            x=float(self.xy[agent, t, 0]), y=float(self.xy[agent, t, 1]),
            heading=float(self.heading[agent, t]),
            vx=float(self.vel[agent, t, 0]), vy=float(self.vel[agent, t, 1]),
            length=float(self.size[agent, t, 0]), width=float(self.size[agent, t, 1]),
            agent_kind=AGENT_KINDS[self.kind[agent, t]],
            valid=bool(self.valid[agent, t]),
        )

    def replace(self, **arrays) -> "SceneTensor":
        """New SceneTensor with some arrays swapped out."""
        fields = dict(xy=self.xy, heading=self.heading, vel=self.vel,
                      size=self.size, kind=self.kind, valid=self.valid)
        fields.update(arrays)
        return SceneTensor(ego_index=self.ego_index, t_obs=self.t_obs,
                           dt=self.dt, scenario_id=self.scenario_id, **fields)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SceneTensor):
            return NotImplemented
        return (
            self.scenario_id == other.scenario_id
            and self.ego_index == other.ego_index
            and self.t_obs == other.t_obs
            and self.dt == other.dt
            and self.xy.shape == other.xy.shape
            and bool(np.array_equal(self.xy, other.xy))
            and bool(np.array_equal(self.heading, other.heading))
            and bool(np.array_equal(self.vel, other.vel))
            and bool(np.array_equal(self.size, other.size))
            and bool(np.array_equal(self.kind, other.kind))
            and bool(np.array_equal(self.valid, other.valid))
        )

    def __repr__(self) -> str:
        return (f"SceneTensor(id={self.scenario_id!r}, n={self.n_agents}, "
                f"t={self.t_total}, t_obs={self.t_obs}, dt={self.dt})")


class MapPolyline:
    """A padded polyline: ``points`` [P, 2] with the first ``valid_count`` real."""

    __slots__ = ("points", "valid_count", "lane_kind")

    def __init__(self, points, valid_count: int, lane_kind: str):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 2:
            raise InvariantError(f"polyline points must be [P, 2], got {points.shape}")
        if not (0 <= valid_count <= points.shape[0]):
            raise InvariantError(
                f"valid_count {valid_count} out of range for {points.shape[0]} points")
        if lane_kind not in LANE_KINDS:
            raise InvariantError(f"unknown lane_kind {lane_kind!r}")
        if not np.isfinite(points).all():
            raise InvariantError("polyline contains non-finite points")
        if (points[valid_count:] != 0.0).any():
            raise InvariantError("padded polyline points must be exactly (0, 0)")
        self.points = _locked(points)
        self.valid_count = int(valid_count)
        self.lane_kind = lane_kind

    def __eq__(self, other) -> bool:
        if not isinstance(other, MapPolyline):
            return NotImplemented
        return (self.lane_kind == other.lane_kind
                and self.valid_count == other.valid_count
                and self.points.shape == other.points.shape
                and bool(np.array_equal(self.points, other.points)))

    def __repr__(self) -> str:
        return (f"MapPolyline(kind={self.lane_kind!r}, "
                f"valid={self.valid_count}/{self.points.shape[0]})")


@dataclass(frozen=True)
class Scenario:
    """A scene tensor plus its map polylines."""

    scene: SceneTensor
    polylines: tuple[MapPolyline, ...]

    def __post_init__(self):
        object.__setattr__(self, "polylines", tuple(self.polylines))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_AGENT_FIELDS = ("x", "y", "heading", "vx", "vy", "length", "width", "kind", "valid")


def scenario_to_obj(scenario: Scenario) -> dict:
    """Plain-JSON object for one scenario (schema in the module docstring)."""
    sc = scenario.scene
    agents = []
    for i in range(sc.n_agents):
        row = []
        for t in range(sc.t_total):
            st = sc.state(i, t)
            row.append({
                "x": st.x, "y": st.y, "heading": st.heading,
                "vx": st.vx, "vy": st.vy,
                "length": st.length, "width": st.width,
                "kind": st.agent_kind, "valid": st.valid,
            })
        agents.append(row)
    polylines = [{
        "lane_kind": p.lane_kind,
        "points": [[float(x), float(y)] for x, y in p.points],
        "valid_count": p.valid_count,
    } for p in scenario.polylines]
    return {
        "scenario_id": sc.scenario_id,
        "dt": sc.dt,
        "t_obs": sc.t_obs,
        "ego_index": sc.ego_index,
        "agents": agents,
        "map": polylines,
    }


def _require(obj: dict, field: str, line: int):
    if field not in obj:
        raise SchemaError(f"line {line}: missing field {field!r}")
    return obj[field]


def scenario_from_obj(obj: dict, line: int = 0) -> Scenario:
    """Parse and validate one scenario object; rejects rather than repairs."""
    if not isinstance(obj, dict):
        raise SchemaError(f"line {line}: scenario must be an object")
    agents = _require(obj, "agents", line)
    if not isinstance(agents, list) or not agents:
        raise SchemaError(f"line {line}: field 'agents' must be a nonempty list")
    n = len(agents)
    t = len(agents[0]) if isinstance(agents[0], list) else -1
    xy = np.zeros((n, t, 2))
    heading = np.zeros((n, t))
    vel = np.zeros((n, t, 2))
    size = np.zeros((n, t, 2))
    kind = np.zeros((n, t), dtype=np.int64)
    valid = np.zeros((n, t), dtype=bool)
    for i, row in enumerate(agents):
        if not isinstance(row, list) or len(row) != t:
            raise SchemaError(f"line {line}: agent {i} has ragged timesteps")
        for ts, cell in enumerate(row):
            if not isinstance(cell, dict):
                raise SchemaError(f"line {line}: agent {i} t {ts}: state must be an object")
            for f in _AGENT_FIELDS:
                if f not in cell:
                    raise SchemaError(f"line {line}: agent {i} t {ts}: missing field {f!r}")
            if cell["kind"] not in AGENT_KINDS:
                raise SchemaError(
                    f"line {line}: agent {i} t {ts}: unknown kind {cell['kind']!r}")
            if not isinstance(cell["valid"], bool):
                raise SchemaError(f"line {line}: agent {i} t {ts}: field 'valid' must be bool")
            try:
                xy[i, ts] = (float(cell["x"]), float(cell["y"]))
                heading[i, ts] = float(cell["heading"])
                vel[i, ts] = (float(cell["vx"]), float(cell["vy"]))
                size[i, ts] = (float(cell["length"]), float(cell["width"]))
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"line {line}: agent {i} t {ts}: {exc}") from exc
            kind[i, ts] = AGENT_KINDS.index(cell["kind"])
            valid[i, ts] = cell["valid"]
    polylines = []
    for j, p in enumerate(_require(obj, "map", line)):
        if not isinstance(p, dict):
            raise SchemaError(f"line {line}: map entry {j} must be an object")
        for f in ("lane_kind", "points", "valid_count"):
            if f not in p:
                raise SchemaError(f"line {line}: map entry {j}: missing field {f!r}")
        if p["lane_kind"] not in LANE_KINDS:
            raise SchemaError(f"line {line}: map entry {j}: unknown lane_kind {p['lane_kind']!r}")
        try:
            polylines.append(MapPolyline(np.asarray(p["points"], dtype=np.float64),
                                         int(p["valid_count"]), p["lane_kind"]))
        except InvariantError as exc:
            raise InvariantError(f"line {line}: map entry {j}: {exc}") from exc
    try:
        scene = SceneTensor(
            xy=xy, heading=heading, vel=vel, size=size, kind=kind, valid=valid,
            ego_index=int(_require(obj, "ego_index", line)),
            t_obs=int(_require(obj, "t_obs", line)),
            dt=float(_require(obj, "dt", line)),
            scenario_id=str(_require(obj, "scenario_id", line)),
        )
    except InvariantError as exc:
        raise InvariantError(f"line {line}: {exc}") from exc
    return Scenario(scene=scene, polylines=tuple(polylines))


def load_scenarios(path) -> list[Scenario]:
    """Load a JSON-Lines scenario file, validating every invariant.

    Malformed records are rejected with the offending line number; nothing
    is repaired.  Lines holding a top-level ``"header"`` object are skipped.
    """
    scenarios = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {line_no}: invalid JSON: {exc}") from exc
            if isinstance(obj, dict) and "header" in obj:
                continue
            scenarios.append(scenario_from_obj(obj, line_no))
    return scenarios


def save_scenarios(scenarios: Iterable[Scenario], path) -> None:
    """Write scenarios as JSON Lines; ``load_scenarios`` round-trips exactly.

    Floats serialize via python's shortest round-trip repr, so every bit of
    every double survives save -> load.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for scenario in scenarios:
            fh.write(json.dumps(scenario_to_obj(scenario), separators=(",", ":")))
            fh.write("\n")


# ---------------------------------------------------------------------------
# Frame normalization
# ---------------------------------------------------------------------------

def normalize_scene(scenario: Scenario, anchor_agent: int,
                    anchor_time: int) -> tuple[Scenario, RigidTransform]:
    """Rigidly move the scene so the anchor sits at the origin with heading 0.

    Returns the normalized scenario and the world-to-normalized transform;
    its ``inverse()`` maps normalized coordinates back to the original frame.
    Invalid cells remain zero-filled.
    """
    sc = scenario.scene
    if not (0 <= anchor_agent < sc.n_agents) or not (0 <= anchor_time < sc.t_total):
        raise InvariantError(
            f"anchor ({anchor_agent}, {anchor_time}) out of range")
    if not sc.valid[anchor_agent, anchor_time]:
        raise InvariantError(
            f"anchor cell ({anchor_agent}, {anchor_time}) is not valid")

    ax, ay = sc.xy[anchor_agent, anchor_time]
    atheta = float(sc.heading[anchor_agent, anchor_time])
    c, s = math.cos(-atheta), math.sin(-atheta)
    rot = np.array([[c, -s], [s, c]])

    # Positions computed as R @ (p - anchor) so the anchor lands exactly at 0.
    xy = (sc.xy - np.array([ax, ay])) @ rot.T
    vel = sc.vel @ rot.T
    heading = np.vectorize(wrap_angle)(sc.heading - atheta)

    invalid = ~sc.valid
    xy = xy.copy()
    vel = vel.copy()
    heading = heading.copy()
    xy[invalid] = 0.0
    vel[invalid] = 0.0
    heading[invalid] = 0.0

    polylines = tuple(
        MapPolyline(
            np.vstack([
                (p.points[:p.valid_count] - np.array([ax, ay])) @ rot.T,
                np.zeros((p.points.shape[0] - p.valid_count, 2)),
            ]),
            p.valid_count, p.lane_kind)
        for p in scenario.polylines
    )

    scene = sc.replace(xy=xy, heading=heading, vel=vel)
    transform = RigidTransform(angle=-atheta,
                               tx=float(-(rot @ np.array([ax, ay]))[0]),
                               ty=float(-(rot @ np.array([ax, ay]))[1]))
    return Scenario(scene=scene, polylines=polylines), transform
