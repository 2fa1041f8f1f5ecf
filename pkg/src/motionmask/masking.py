"""Mask sampling (pretraining profiles) and task-mask construction.

A :class:`MaskGrid` marks which agent/timestep cells are hidden from the
network.  Three random profiles feed pretraining:

- ``pointwise``  — individual cells, uniform without replacement;
- ``patchwise``  — per-agent contiguous time intervals of random length;
- ``timewise``   — whole timesteps dropped for all agents at once
  (an abruptly failing sensor hides every observation simultaneously).

Three deterministic constructors encode downstream tasks: plain prediction
(all future hidden), conditional prediction (future hidden except the ego
row), and occlusion handling (future plus occluded history hidden).

Ratio targets count *valid* cells only; padded cells may be swept into a
mask but never contribute to the target.  Counts round with ``floor``.
All samplers are pure functions of their arguments (seed included) and are
bit-deterministic: the RNG is the counter-based stream documented in
:mod:`motionmask.rng`, and pointwise/timewise selection takes the first k
entries of a Fisher-Yates permutation of the candidate list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvariantError, ShapeMismatchError, UnsatisfiableMaskError
from .rng import SeedStream
from .scene import SceneTensor

PROFILES = ("pointwise", "patchwise", "timewise")


class MaskGrid:
    """Boolean [N, T] grid; True = hidden from the network."""

    __slots__ = ("hidden",)

    def __init__(self, hidden):
        hidden = np.asarray(hidden, dtype=bool)
        if hidden.ndim != 2:
            raise InvariantError(f"mask must be 2-D, got shape {hidden.shape}")
        hidden = np.ascontiguousarray(hidden)
        hidden.flags.writeable = False
        self.hidden = hidden

    @property
    def n(self) -> int:
        return self.hidden.shape[0]

    @property
    def t(self) -> int:
        return self.hidden.shape[1]

    def hidden_count(self) -> int:
        return int(self.hidden.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, MaskGrid):
            return NotImplemented
        return (self.hidden.shape == other.hidden.shape
                and bool(np.array_equal(self.hidden, other.hidden)))

    def __repr__(self) -> str:
        return f"MaskGrid(n={self.n}, t={self.t}, hidden={self.hidden_count()})"


@dataclass(frozen=True)
class MaskProfileConfig:
    """Configuration of one random mask profile draw."""

    profile: str
    ratio: float
    patch_len_min: int = 1
    patch_len_max: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise InvariantError(f"unknown mask profile {self.profile!r}")
        if not (0.0 <= self.ratio <= 1.0):
            raise InvariantError(f"mask ratio must be in [0, 1], got {self.ratio}")
        if not (1 <= self.patch_len_min <= self.patch_len_max):
            raise InvariantError(
                f"need 1 <= patch_len_min <= patch_len_max, got "
                f"[{self.patch_len_min}, {self.patch_len_max}]")

    def to_obj(self) -> dict:
        return {"profile": self.profile, "ratio": self.ratio,
                "patch_len_min": self.patch_len_min,
                "patch_len_max": self.patch_len_max, "seed": self.seed}

    @staticmethod
    def from_obj(obj: dict) -> "MaskProfileConfig":
        return MaskProfileConfig(
            profile=obj["profile"], ratio=float(obj["ratio"]),
            patch_len_min=int(obj.get("patch_len_min", 1)),
            patch_len_max=int(obj.get("patch_len_max", 1)),
            seed=int(obj.get("seed", 0)))


def _check_dims(n: int, t: int, valid: np.ndarray):
    if n < 1 or t < 1:
        raise InvariantError(f"mask dims must be positive, got ({n}, {t})")
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != (n, t):
        raise ShapeMismatchError(f"valid grid {valid.shape} does not match ({n}, {t})")
    return valid


def sample_pointwise_mask(n: int, t: int, valid, ratio: float, seed: int) -> MaskGrid:
    """Hide exactly floor(ratio * V) of the V valid cells, uniformly.

    Valid cells are enumerated in row-major (agent-major) order, permuted by
    the seeded Fisher-Yates shuffle, and the first k entries are hidden.
    """
    valid = _check_dims(n, t, valid)
    if not (0.0 <= ratio <= 1.0):
        raise InvariantError(f"mask ratio must be in [0, 1], got {ratio}")
    cells = np.flatnonzero(valid.ravel())
    k = math.floor(ratio * len(cells))
    hidden = np.zeros(n * t, dtype=bool)
    if k > 0:
        order = SeedStream(seed).permutation(len(cells))
        hidden[cells[order[:k]]] = True
    return MaskGrid(hidden.reshape(n, t))


def sample_patchwise_mask(n: int, t: int, valid, ratio: float,
                          patch_len_min: int, patch_len_max: int,
                          seed: int) -> MaskGrid:
    """Hide per-agent contiguous time patches until the ratio target is met.

    Patch lengths are uniform on [patch_len_min, patch_len_max] (truncated to
    the longest still-free run once the grid is nearly full), placed uniformly
    among all non-overlapping slots, until the hidden-valid count first
    reaches floor(ratio * V).  The final count overshoots by at most
    patch_len_max - 1.  Raises UnsatisfiableMaskError when no further patch
    fits and the target is unreached (e.g. t < patch_len_min).
    """
    valid = _check_dims(n, t, valid)
    if not (0.0 <= ratio <= 1.0):
        raise InvariantError(f"mask ratio must be in [0, 1], got {ratio}")
    if not (1 <= patch_len_min <= patch_len_max <= t):
        raise UnsatisfiableMaskError(
            f"patch lengths [{patch_len_min}, {patch_len_max}] do not fit t={t}")
    target = math.floor(ratio * int(valid.sum()))
    hidden = np.zeros((n, t), dtype=bool)
    if target == 0:
        return MaskGrid(hidden)
    stream = SeedStream(seed)
    count = 0
    while count < target:
        # Maximal free (not yet hidden) runs per agent.
        runs = []
        for a in range(n):
            row = hidden[a]
            s = 0
            while s < t:
                if not row[s]:
                    e = s
                    while e < t and not row[e]:
                        e += 1
                    runs.append((a, s, e - s))
                    s = e
                else:
                    s += 1
        longest = max((ln for _, _, ln in runs), default=0)
        if longest < patch_len_min:
            raise UnsatisfiableMaskError(
                f"no free run of length >= {patch_len_min} left with "
                f"{count}/{target} valid cells hidden")
        length = stream.int_range(patch_len_min, min(patch_len_max, longest))
        slots = [(a, s0 + off) for a, s0, ln in runs
                 for off in range(ln - length + 1)]
        a, s0 = slots[stream.below(len(slots))]
        hidden[a, s0:s0 + length] = True
        count = int((hidden & valid).sum())
    return MaskGrid(hidden)


def sample_timewise_mask(n: int, t: int, valid, ratio: float, seed: int) -> MaskGrid:
    """Hide floor(ratio * t) whole timesteps (columns) for all agents.

    Columns are chosen as the first k entries of a seeded Fisher-Yates
    permutation of range(t).
    """
    valid = _check_dims(n, t, valid)
    if not (0.0 <= ratio <= 1.0):
        raise InvariantError(f"mask ratio must be in [0, 1], got {ratio}")
    k = math.floor(ratio * t)
    hidden = np.zeros((n, t), dtype=bool)
    if k > 0:
        order = SeedStream(seed).permutation(t)
        hidden[:, np.asarray(order[:k])] = True
    return MaskGrid(hidden)


def sample_profile_mask(n: int, t: int, valid, config: MaskProfileConfig) -> MaskGrid:
    """Dispatch to the sampler named by ``config.profile``."""
    if config.profile == "pointwise":
        return sample_pointwise_mask(n, t, valid, config.ratio, config.seed)
    if config.profile == "patchwise":
        return sample_patchwise_mask(n, t, valid, config.ratio,
                                     config.patch_len_min, config.patch_len_max,
                                     config.seed)
    return sample_timewise_mask(n, t, valid, config.ratio, config.seed)


def prediction_mask(n: int, t: int, t_obs: int) -> MaskGrid:
    """Motion prediction: every future timestep hidden for every agent."""
    if not (0 < t_obs < t):
        raise InvariantError(f"need 0 < t_obs < t, got t_obs={t_obs}, t={t}")
    hidden = np.zeros((n, t), dtype=bool)
    hidden[:, t_obs:] = True
    return MaskGrid(hidden)


def conditional_mask(n: int, t: int, t_obs: int, ego_index: int) -> MaskGrid:
    """Conditional prediction: like prediction, but the ego row stays visible."""
    if not (0 <= ego_index < n):
        raise InvariantError(f"ego_index {ego_index} out of range for {n} agents")
    hidden = prediction_mask(n, t, t_obs).hidden.copy()
    hidden[ego_index, :] = False
    return MaskGrid(hidden)


def occlusion_task_mask(n: int, t: int, t_obs: int, occluded) -> MaskGrid:
    """Occlusion handling: future cells plus occluded history cells hidden."""
    occluded = np.asarray(occluded, dtype=bool)
    if occluded.shape != (n, t_obs):
        raise ShapeMismatchError(
            f"occluded grid {occluded.shape} must cover history ({n}, {t_obs})")
    hidden = prediction_mask(n, t, t_obs).hidden.copy()
    hidden[:, :t_obs] |= occluded
    return MaskGrid(hidden)


def apply_mask(scene: SceneTensor, mask: MaskGrid) -> SceneTensor:
    """Zero-fill every hidden cell; visible cells stay bit-identical.

    Returns a new tensor (inputs are immutable); hidden cells come out with
    valid=False and all numeric fields exactly 0, so nothing about them can
    be reconstructed from the output alone.
    """
    if mask.hidden.shape != scene.valid.shape:
        raise ShapeMismatchError(
            f"mask {mask.hidden.shape} does not match scene {scene.valid.shape}")
    keep = ~mask.hidden
    keep3 = keep[:, :, None]
    return scene.replace(
        xy=np.where(keep3, scene.xy, 0.0),
        heading=np.where(keep, scene.heading, 0.0),
        vel=np.where(keep3, scene.vel, 0.0),
        size=np.where(keep3, scene.size, 0.0),
        kind=scene.kind,
        valid=scene.valid & keep,
    )


def measured_ratio(mask: MaskGrid, valid) -> float:
    """Hidden-and-valid cells over valid cells; 0.0 when nothing is valid."""
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != mask.hidden.shape:
        raise ShapeMismatchError(
            f"valid grid {valid.shape} does not match mask {mask.hidden.shape}")
    v = int(valid.sum())
    if v == 0:
        return 0.0
    return int((mask.hidden & valid).sum()) / v
