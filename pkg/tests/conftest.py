"""Shared scenario builders for the test suite."""

import math

import numpy as np
import pytest

from motionmask.rng import SeedStream, derive
from motionmask.scene import (AGENT_KINDS, MapPolyline, Scenario, SceneTensor,
                              wrap_angle)


def random_scene(seed: int, n: int | None = None, t: int | None = None,
                 t_obs: int | None = None, all_valid: bool = False) -> SceneTensor:
    """A structurally valid random scene (not kinematically meaningful)."""
    stream = SeedStream(derive(seed, 0x7E57))
    n = n if n is not None else stream.int_range(1, 6)
    t = t if t is not None else stream.int_range(4, 12)
    t_obs = t_obs if t_obs is not None else stream.int_range(2, t - 1)
    xy = np.zeros((n, t, 2))
    heading = np.zeros((n, t))
    vel = np.zeros((n, t, 2))
    size = np.zeros((n, t, 2))
    kind = np.zeros((n, t), dtype=np.int64)
    valid = np.zeros((n, t), dtype=bool)
    for i in range(n):
        for ts in range(t):
            if all_valid or stream.uniform() < 0.85:
                valid[i, ts] = True
                xy[i, ts] = (stream.uniform_range(-50, 50), stream.uniform_range(-50, 50))
                heading[i, ts] = wrap_angle(stream.uniform_range(-math.pi, math.pi))
                vel[i, ts] = (stream.uniform_range(-10, 10), stream.uniform_range(-10, 10))
                size[i, ts] = (stream.uniform_range(0.5, 6), stream.uniform_range(0.5, 3))
                kind[i, ts] = stream.below(len(AGENT_KINDS))
    if not valid[0].all():  # keep one anchor-safe agent
        valid[0] = True
        xy[0, :, 0] = np.linspace(0, 5, t)
        heading[0] = 0.1
        size[0] = (4.0, 2.0)
    return SceneTensor(xy=xy, heading=heading, vel=vel, size=size, kind=kind,
                       valid=valid, ego_index=0, t_obs=t_obs, dt=0.1,
                       scenario_id=f"test-{seed}")


def random_scenario(seed: int, **kwargs) -> Scenario:
    scene = random_scene(seed, **kwargs)
    stream = SeedStream(derive(seed, 0x3A9))
    polylines = []
    for _ in range(stream.int_range(1, 3)):
        count = stream.int_range(2, 5)
        pts = np.zeros((6, 2))
        for i in range(count):
            pts[i] = (stream.uniform_range(-60, 60), stream.uniform_range(-60, 60))
        polylines.append(MapPolyline(pts, count, "lane_center"))
    return Scenario(scene=scene, polylines=tuple(polylines))


@pytest.fixture
def tmp_jsonl(tmp_path):
    return tmp_path / "scenarios.jsonl"
