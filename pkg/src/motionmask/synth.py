"""Deterministic synthetic scenario generator.

Stands in for full-scale motion datasets at desk scale.  Agents move under
closed-form kinematics (constant velocity, constant turn rate, polyline
following at constant speed, stop-and-go along a line); positional noise,
when requested, is added after integration so the noise-free trajectories
satisfy their closed forms exactly.  Headings always equal atan2(vy, vx)
of the noise-free velocity whenever speed exceeds 0.1 m/s, and hold the
route direction while stopped.

An agent may enter late or exit early; its validity window is one
contiguous run and everything outside is zero-filled.  Agent 0 is the ego:
always fully valid, so it can anchor normalization and serve as the
occlusion viewpoint.  The ``intersection`` map style routes agents onto two
crossing roads and parks a long slow vehicle on the ego's approach, which
reliably throws occlusion shadows across the crossing traffic.

Generation is pure per seed: ``generate_dataset`` derives one child seed
per index, so regenerating any prefix is byte-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantError
from .rng import SeedStream, derive
from .scene import MapPolyline, Scenario, SceneTensor, save_scenarios, wrap_angle

BEHAVIORS = ("constant_velocity", "constant_turn", "lane_follow", "stop_and_go")
MAP_STYLES = ("straight", "curve", "intersection")

LANE_HALF_OFFSET = 1.75
ROAD_LENGTH = 60.0


@dataclass(frozen=True)
class SynthSpec:
    n_agents_range: tuple[int, int] = (4, 8)
    t_total: int = 50
    t_obs: int = 20
    dt: float = 0.1
    behavior_mix: dict = field(default_factory=lambda: {
        "constant_velocity": 0.5, "constant_turn": 0.2,
        "lane_follow": 0.2, "stop_and_go": 0.1})
    speed_range: tuple[float, float] = (3.0, 12.0)
    map_style: str = "straight"
    noise_std: float = 0.0

    def __post_init__(self):
        lo, hi = self.n_agents_range
        if not (1 <= lo <= hi):
            raise InvariantError(f"bad n_agents_range {self.n_agents_range}")
        if not (2 <= self.t_obs < self.t_total):
            raise InvariantError(
                f"need 2 <= t_obs < t_total, got {self.t_obs}, {self.t_total}")
        if not self.dt > 0:
            raise InvariantError("dt must be positive")
        if set(self.behavior_mix) - set(BEHAVIORS):
            raise InvariantError(f"unknown behaviors in mix: {self.behavior_mix}")
        if abs(sum(self.behavior_mix.values()) - 1.0) > 1e-9:
            raise InvariantError("behavior_mix fractions must sum to 1")
        if any(f < 0 for f in self.behavior_mix.values()):
            raise InvariantError("behavior_mix fractions must be nonnegative")
        slo, shi = self.speed_range
        if not (0 <= slo <= shi):
            raise InvariantError(f"bad speed_range {self.speed_range}")
        if self.map_style not in MAP_STYLES:
            raise InvariantError(f"unknown map_style {self.map_style!r}")
        if self.noise_std < 0:
            raise InvariantError("noise_std must be nonnegative")

    def to_obj(self) -> dict:
        return {"n_agents_range": list(self.n_agents_range),
                "t_total": self.t_total, "t_obs": self.t_obs, "dt": self.dt,
                "behavior_mix": dict(self.behavior_mix),
                "speed_range": list(self.speed_range),
                "map_style": self.map_style, "noise_std": self.noise_std}

    @staticmethod
    def from_obj(obj: dict) -> "SynthSpec":
        return SynthSpec(
            n_agents_range=tuple(obj.get("n_agents_range", (4, 8))),
            t_total=int(obj.get("t_total", 50)), t_obs=int(obj.get("t_obs", 20)),
            dt=float(obj.get("dt", 0.1)),
            behavior_mix=dict(obj.get("behavior_mix", {
                "constant_velocity": 0.5, "constant_turn": 0.2,
                "lane_follow": 0.2, "stop_and_go": 0.1})),
            speed_range=tuple(obj.get("speed_range", (3.0, 12.0))),
            map_style=obj.get("map_style", "straight"),
            noise_std=float(obj.get("noise_std", 0.0)))


PRESETS = {
    # 10 Hz, 2 s history + 3 s future
    "argoverse-like": SynthSpec(),
    # 2 Hz, 2 s history + 6 s future
    "nuscenes-like": SynthSpec(t_total=16, t_obs=4, dt=0.5, map_style="curve"),
    # dense crossing traffic for occlusion experiments
    "intersection": SynthSpec(
        n_agents_range=(6, 9), t_total=40, t_obs=15, dt=0.2,
        behavior_mix={"constant_velocity": 0.4, "constant_turn": 0.1,
                      "lane_follow": 0.2, "stop_and_go": 0.3},
        speed_range=(2.0, 8.0), map_style="intersection", noise_std=0.05),
}


def synth_preset(name: str) -> SynthSpec:
    if name not in PRESETS:
        raise InvariantError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    return PRESETS[name]


# ---------------------------------------------------------------------------
# Maps
# ---------------------------------------------------------------------------

def _pad_polyline(points: np.ndarray, p_max: int, lane_kind: str) -> MapPolyline:
    padded = np.zeros((p_max, 2))
    padded[:len(points)] = points
    return MapPolyline(padded, valid_count=len(points), lane_kind=lane_kind)


def _line(p0, p1, step=5.0) -> np.ndarray:
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    n = max(2, int(round(np.linalg.norm(p1 - p0) / step)) + 1)
    return p0 + (p1 - p0) * np.linspace(0.0, 1.0, n)[:, None]

def _arc(center, radius, a0, a1, step=5.0) -> np.ndarray:
    n = max(2, int(round(abs(a1 - a0) * radius / step)) + 1)
    ang = np.linspace(a0, a1, n)
    return np.stack([center[0] + radius * np.cos(ang),
                     center[1] + radius * np.sin(ang)], axis=1)


def _build_map(style: str) -> list[tuple[np.ndarray, str]]:
    half = ROAD_LENGTH
    if style == "straight":
        lanes = [(_line((-half, y), (half, y)), "lane_center")
                 for y in (-3.5, 0.0, 3.5)]
        lanes += [(_line((-half, y), (half, y)), "boundary") for y in (-7.0, 7.0)]
        return lanes
    if style == "curve":
        center = (0.0, -40.0)
        lanes = [(_arc(center, 40.0 + off, math.pi / 6, 5 * math.pi / 6), "lane_center")
                 for off in (-3.5, 0.0, 3.5)]
        lanes += [(_arc(center, 40.0 + off, math.pi / 6, 5 * math.pi / 6), "boundary")
                  for off in (-7.0, 7.0)]
        return lanes
    # intersection: two perpendicular roads through the origin
    o = LANE_HALF_OFFSET
    lanes = [
        (_line((-half, -o), (half, -o)), "lane_center"),   # eastbound
        (_line((half, o), (-half, o)), "lane_center"),     # westbound
        (_line((o, -half), (o, half)), "lane_center"),     # northbound
        (_line((-o, half), (-o, -half)), "lane_center"),   # southbound
        (_line((-half, -2 * o), (-2 * o, -2 * o)), "boundary"),
        (_line((2 * o, -2 * o), (half, -2 * o)), "boundary"),
        (_line((-half, 2 * o), (-2 * o, 2 * o)), "boundary"),
        (_line((2 * o, 2 * o), (half, 2 * o)), "boundary"),
        (_line((-2 * o, -2 * o - 1.0), (2 * o, -2 * o - 1.0), step=2.0), "crosswalk"),
    ]
    return lanes


# ---------------------------------------------------------------------------
# Agent kinematics (closed forms)
# ---------------------------------------------------------------------------

def _integrate_cv(p0, theta, speed, times):
    u = np.array([math.cos(theta), math.sin(theta)])
    xy = p0 + speed * times[:, None] * u
    vel = np.tile(speed * u, (len(times), 1))
    heading = np.full(len(times), theta)
    return xy, vel, heading


def _integrate_turn(p0, theta0, speed, omega, times):
    r = speed / abs(omega)
    s = 1.0 if omega > 0 else -1.0
    c = p0 + s * r * np.array([-math.sin(theta0), math.cos(theta0)])
    theta = theta0 + omega * times
    xy = c - s * r * np.stack([-np.sin(theta), np.cos(theta)], axis=1)
    vel = speed * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return xy, vel, theta


def _integrate_lane(points, s0, speed, times):
    seg = np.diff(points, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    keep = seg_len > 1e-9
    seg, seg_len = seg[keep], seg_len[keep]
    starts = points[:-1][keep]
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    xy = np.zeros((len(times), 2))
    vel = np.zeros((len(times), 2))
    heading = np.zeros(len(times))
    for i, t in enumerate(times):
        s = s0 + speed * t
        if s >= total:  # extrapolate along the final segment
            j = len(seg) - 1
        else:
            j = int(np.searchsorted(cum, s, side="right") - 1)
            j = min(max(j, 0), len(seg) - 1)
        u = seg[j] / seg_len[j]
        xy[i] = starts[j] + u * (s - cum[j])
        vel[i] = speed * u
        heading[i] = math.atan2(u[1], u[0])
    return xy, vel, heading


def _integrate_stop_go(p0, theta, speed, go_steps, stop_steps, dt, t_total):
    """Alternating go/stop phases along a straight line, starting in 'go'."""
    u = np.array([math.cos(theta), math.sin(theta)])
    speeds = np.zeros(t_total)
    t = 0
    going = True
    while t < t_total:
        span = go_steps if going else stop_steps
        speeds[t:t + span] = speed if going else 0.0
        t += span
        going = not going
    # position at step i = p0 + dt * sum of speeds before i
    dist = np.concatenate([[0.0], np.cumsum(speeds[:-1])]) * dt
    xy = p0 + dist[:, None] * u
    vel = speeds[:, None] * u
    heading = np.full(t_total, theta)
    return xy, vel, heading


def _draw_behavior(stream: SeedStream, mix: dict) -> str:
    u = stream.uniform()
    acc = 0.0
    for name in BEHAVIORS:
        acc += mix.get(name, 0.0)
        if u < acc:
            return name
    return BEHAVIORS[0]


def _agent_kind_and_size(stream: SeedStream, long_vehicle: bool):
    if long_vehicle:
        return "vehicle", (stream.uniform_range(8.0, 12.0), stream.uniform_range(2.3, 2.6))
    u = stream.uniform()
    if u < 0.8:
        return "vehicle", (stream.uniform_range(4.0, 5.2), stream.uniform_range(1.7, 2.0))
    if u < 0.9:
        return "cyclist", (stream.uniform_range(1.6, 2.0), stream.uniform_range(0.5, 0.8))
    return "pedestrian", (stream.uniform_range(0.5, 0.8), stream.uniform_range(0.5, 0.8))


# approach headings of the four intersection arms (ego always from the west)
_ARM_HEADINGS = (0.0, math.pi, math.pi / 2, -math.pi / 2)


def _start_pose(stream: SeedStream, style: str, index: int, t_obs: int, dt: float,
                speed: float):
    """Initial position/heading placing the agent in the interaction zone."""
    if style == "intersection":
        theta = _ARM_HEADINGS[stream.below(4) if index != 0 else 0]
        # back off so the agent reaches the center region mid-horizon
        back = stream.uniform_range(6.0, 10.0 + speed * t_obs * dt)
        u = np.array([math.cos(theta), math.sin(theta)])
        p0 = -u * back + _arm_lane_offset(theta)
        return p0, theta
    if style == "curve":
        theta = stream.uniform_range(-math.pi, math.pi)
    else:
        theta = 0.0 if stream.uniform() < 0.7 else math.pi
    p0 = np.array([stream.uniform_range(-30.0, 10.0),
                   stream.uniform_range(-6.0, 6.0)])
    return p0, theta


def _arm_lane_offset(theta: float) -> np.ndarray:
    """Right-hand lane offset perpendicular to the travel direction."""
    return LANE_HALF_OFFSET * np.array([math.sin(theta), -math.cos(theta)])


def generate_scene(spec: SynthSpec, seed: int) -> Scenario:
    """One deterministic scenario under ``spec`` (see the module docstring)."""
    stream = SeedStream(derive(seed, 0x5CE17E))
    t_total, t_obs, dt = spec.t_total, spec.t_obs, spec.dt
    times = np.arange(t_total) * dt
    n = stream.int_range(*spec.n_agents_range)

    xy = np.zeros((n, t_total, 2))
    heading = np.zeros((n, t_total))
    vel = np.zeros((n, t_total, 2))
    size = np.zeros((n, t_total, 2))
    kind = np.zeros((n, t_total), dtype=np.int64)
    valid = np.zeros((n, t_total), dtype=bool)

    lanes = _build_map(spec.map_style)
    lane_centers = [pts for pts, lk in lanes if lk == "lane_center"]
    kinds = ("vehicle", "pedestrian", "cyclist", "other")

    for i in range(n):
        speed = stream.uniform_range(*spec.speed_range)
        behavior = _draw_behavior(stream, spec.behavior_mix)
        # deterministic long slow blocker on the ego approach at intersections
        is_blocker = spec.map_style == "intersection" and i == 1
        agent_kind, (length, width) = _agent_kind_and_size(
            stream, long_vehicle=is_blocker or
            (spec.map_style == "intersection" and stream.uniform() < 0.25))
        if agent_kind == "pedestrian":
            speed = stream.uniform_range(0.8, 1.8)
        if is_blocker:
            behavior = "stop_and_go"
            speed = stream.uniform_range(0.5, 2.0)
            theta = 0.0
            p0 = np.array([-stream.uniform_range(6.0, 14.0), 0.0]) + _arm_lane_offset(0.0)
        else:
            p0, theta = _start_pose(stream, spec.map_style, i, t_obs, dt, speed)

        if behavior == "constant_velocity":
            a_xy, a_vel, a_heading = _integrate_cv(p0, theta, speed, times)
        elif behavior == "constant_turn":
            omega = stream.uniform_range(0.08, 0.4) * (1 if stream.uniform() < 0.5 else -1)
            a_xy, a_vel, a_heading = _integrate_turn(p0, theta, speed, omega, times)
        elif behavior == "lane_follow":
            lane = lane_centers[stream.below(len(lane_centers))]
            s0 = stream.uniform_range(0.0, 0.5) * max(
                1.0, np.linalg.norm(np.diff(lane, axis=0), axis=1).sum() - speed * times[-1])
            a_xy, a_vel, a_heading = _integrate_lane(lane, s0, speed, times)
        else:
            go = stream.int_range(3, max(3, t_total // 3))
            stop = stream.int_range(2, max(2, t_total // 4))
            a_xy, a_vel, a_heading = _integrate_stop_go(
                p0, theta, speed, go, stop, dt, t_total)

        if spec.noise_std > 0:
            noise = np.array([[stream.normal(spec.noise_std) for _ in range(2)]
                              for _ in range(t_total)])
            a_xy = a_xy + noise

        # contiguous validity window; the ego (agent 0) is always fully valid
        t_in, t_out = 0, t_total
        if i != 0:
            if stream.uniform() < 0.15:
                t_in = stream.int_range(1, max(1, t_obs // 2))
            if stream.uniform() < 0.15:
                t_out = stream.int_range(t_obs + (t_total - t_obs) // 2, t_total)
        window = slice(t_in, t_out)
        xy[i, window] = a_xy[window]
        vel[i, window] = a_vel[window]
        heading[i, window] = [wrap_angle(h) for h in a_heading[window]]
        size[i, window] = (length, width)
        kind[i, window] = kinds.index(agent_kind)
        valid[i, window] = True

    p_max = max(len(pts) for pts, _ in lanes)
    polylines = tuple(_pad_polyline(pts, p_max, lk) for pts, lk in lanes)
    scene = SceneTensor(xy=xy, heading=heading, vel=vel, size=size, kind=kind,
                        valid=valid, ego_index=0, t_obs=t_obs, dt=dt,
                        scenario_id=f"synth-{seed & 0xFFFFFFFFFFFFFFFF:016x}")
    return Scenario(scene=scene, polylines=polylines)


def generate_dataset(spec: SynthSpec, count: int, seed: int, path) -> None:
    """Write ``count`` scenarios (one derived seed per index) as JSON Lines."""
    if count < 1:
        raise InvariantError(f"count must be >= 1, got {count}")
    scenarios = [generate_scene(spec, derive(seed, i)) for i in range(count)]
    save_scenarios(scenarios, path)
