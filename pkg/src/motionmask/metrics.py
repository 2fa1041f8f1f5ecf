"""Multimodal forecasting metrics and dataset-level evaluation.

minADE_k / minFDE_k follow the standard definitions: among the k most
probable modes (probability ties broken by lower mode index), the smallest
mean / final-timestep Euclidean displacement against ground truth over the
agent's valid future cells.  Miss rate is the fraction of evaluated agents
whose best top-k endpoint error strictly exceeds a threshold (2 m by
default).

``evaluate`` wires a checkpoint to a dataset: per scenario it normalizes to
the ego frame, builds the task mask, runs the model, scores the selected
agents, and aggregates with unweighted means across agents then scenarios
(miss rate pools per-agent endpoint errors across the whole dataset).
Agents with no valid future cell are skipped, not scored zero.  The
``occluded_only`` subset keeps partially occluded agents: at least one
occluded and at least one visible valid history cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (DataError, EmptySubsetError, InvariantError,
                     MissingLabelsError)
from .masking import apply_mask
from .network import Forecast, ModelParams, decode, encode
from .scene import SceneTensor
from .training import _history_occlusion, _normalized, build_task_mask

SUBSETS = ("all", "occluded_only")


class NoValidFutureError(DataError):
    """The agent has no valid future cell to score against."""


def _top_k_modes(mode_probs: np.ndarray, k: int) -> list[int]:
    """Indices of the k most probable modes, ties broken by lower index."""
    order = sorted(range(len(mode_probs)), key=lambda i: (-mode_probs[i], i))
    return order[:k]


def min_ade(forecast: Forecast, truth: SceneTensor, agent: int, k: int) -> float:
    """Minimum over top-k modes of the mean displacement over the agent's
    valid future timesteps (meters)."""
    n_modes = forecast.trajectories.shape[0]
    if not (1 <= k <= n_modes):
        raise InvariantError(f"k={k} out of range for {n_modes} modes")
    future = np.flatnonzero(truth.valid[agent, truth.t_obs:]) + truth.t_obs
    if len(future) == 0:
        raise NoValidFutureError(f"agent {agent} has no valid future cell")
    best = np.inf
    for mode in _top_k_modes(forecast.mode_probs, k):
        diff = forecast.trajectories[mode, agent, future] - truth.xy[agent, future]
        ade = float(np.sqrt((diff ** 2).sum(axis=1)).mean())
        best = min(best, ade)
    return best


def min_fde(forecast: Forecast, truth: SceneTensor, agent: int, k: int) -> float:
    """Minimum over top-k modes of the displacement at the agent's last
    valid future timestep (meters)."""
    n_modes = forecast.trajectories.shape[0]
    if not (1 <= k <= n_modes):
        raise InvariantError(f"k={k} out of range for {n_modes} modes")
    future = np.flatnonzero(truth.valid[agent, truth.t_obs:]) + truth.t_obs
    if len(future) == 0:
        raise NoValidFutureError(f"agent {agent} has no valid future endpoint")
    last = future[-1]
    best = np.inf
    for mode in _top_k_modes(forecast.mode_probs, k):
        diff = forecast.trajectories[mode, agent, last] - truth.xy[agent, last]
        best = min(best, float(np.sqrt((diff ** 2).sum())))
    return best


def miss_rate(per_agent_min_fde, threshold: float) -> float:
    """Fraction of entries strictly greater than ``threshold``."""
    values = list(per_agent_min_fde)
    if not values:
        raise DataError("miss rate needs at least one entry")
    return sum(1 for v in values if v > threshold) / len(values)


@dataclass(frozen=True)
class MetricReport:
    min_ade: dict[int, float]
    min_fde: dict[int, float]
    miss_rate: dict[tuple[int, float], float]
    n_evaluated: int
    subset: str

    def __post_init__(self):
        for table in (self.min_ade, self.min_fde):
            for v in table.values():
                if not (np.isfinite(v) and v >= 0):
                    raise InvariantError("metric values must be finite and nonnegative")
        for v in self.miss_rate.values():
            if not (0.0 <= v <= 1.0):
                raise InvariantError("miss rate must lie in [0, 1]")

    def to_obj(self) -> dict:
        return {
            "min_ade": {str(k): v for k, v in sorted(self.min_ade.items())},
            "min_fde": {str(k): v for k, v in sorted(self.min_fde.items())},
            "miss_rate": {f"{k}@{thr}": v
                          for (k, thr), v in sorted(self.miss_rate.items())},
            "n_evaluated": self.n_evaluated,
            "subset": self.subset,
        }


@dataclass(frozen=True)
class PerAgentMetrics:
    scenario_id: str
    agent: int
    min_ade: dict[int, float] = field(default_factory=dict)
    min_fde: dict[int, float] = field(default_factory=dict)


def _selected_agents(scene: SceneTensor, task: str, subset: str,
                     occluded_history: np.ndarray | None) -> list[int]:
    """Agents to score: every agent for plain prediction, every non-ego
    agent for conditional/occlusion; then the partial-occlusion filter."""
    if task in ("conditional", "occlusion"):
        agents = [i for i in range(scene.n_agents) if i != scene.ego_index]
    else:
        agents = list(range(scene.n_agents))
    agents = [i for i in agents if scene.valid[i, scene.t_obs:].any()]
    if subset == "occluded_only":
        hist_valid = scene.valid[:, :scene.t_obs]
        keep = []
        for i in agents:
            occ = occluded_history[i] & hist_valid[i]
            vis = ~occluded_history[i] & hist_valid[i]
            if occ.any() and vis.any():
                keep.append(i)
        agents = keep
    return agents


def evaluate_detailed(params: ModelParams, dataset, task: str,
                      subset: str = "all", occlusion_labels=None,
                      ks=(6,), threshold: float = 2.0, forecast_sink=None
                      ) -> tuple[MetricReport, list[PerAgentMetrics]]:
    """Full evaluation returning the report plus per-agent rows for audit."""
    if subset not in SUBSETS:
        raise InvariantError(f"unknown subset {subset!r}")
    if task == "pretrain_random":
        raise InvariantError("evaluation applies to downstream tasks only")
    if subset == "occluded_only" and occlusion_labels is None:
        raise MissingLabelsError("occluded_only subset requires occlusion labels")
    ks = sorted(set(int(k) for k in ks))
    per_scenario_ade = {k: [] for k in ks}
    per_scenario_fde = {k: [] for k in ks}
    pooled_fde = {k: [] for k in ks}
    per_agent_rows: list[PerAgentMetrics] = []
    n_evaluated = 0
    for scenario in dataset:
        normalized = _normalized(scenario)
        scene = normalized.scene
        needs_labels = task == "occlusion" or subset == "occluded_only"
        occ_hist = _history_occlusion(normalized, occlusion_labels) if needs_labels else None
        mask = build_task_mask(scene, task,
                               occ_hist if task == "occlusion" else None)
        masked = apply_mask(scene, mask)
        latent = encode(params, masked, mask, normalized.polylines)
        forecast = decode(params, latent, head="task")
        agents = _selected_agents(scene, task, subset, occ_hist)
        if forecast_sink is not None:
            forecast_sink.append((normalized, forecast, list(agents)))
        if not agents:
            continue
        ades = {k: [] for k in ks}
        fdes = {k: [] for k in ks}
        for agent in agents:
            row = PerAgentMetrics(scenario_id=scene.scenario_id, agent=agent)
            for k in ks:
                row.min_ade[k] = min_ade(forecast, scene, agent, k)
                row.min_fde[k] = min_fde(forecast, scene, agent, k)
                ades[k].append(row.min_ade[k])
                fdes[k].append(row.min_fde[k])
                pooled_fde[k].append(row.min_fde[k])
            per_agent_rows.append(row)
            n_evaluated += 1
        for k in ks:
            per_scenario_ade[k].append(float(np.mean(ades[k])))
            per_scenario_fde[k].append(float(np.mean(fdes[k])))
    if n_evaluated == 0:
        raise EmptySubsetError(f"no agents selected for subset {subset!r}")
    report = MetricReport(
        min_ade={k: float(np.mean(per_scenario_ade[k])) for k in ks},
        min_fde={k: float(np.mean(per_scenario_fde[k])) for k in ks},
        miss_rate={(k, threshold): miss_rate(pooled_fde[k], threshold) for k in ks},
        n_evaluated=n_evaluated,
        subset=subset,
    )
    return report, per_agent_rows


def evaluate(params: ModelParams, dataset, task: str, subset: str = "all",
             occlusion_labels=None, ks=(6,), threshold: float = 2.0) -> MetricReport:
    """Dataset-level metric report (see :func:`evaluate_detailed`)."""
    return evaluate_detailed(params, dataset, task, subset, occlusion_labels,
                             ks, threshold)[0]


def per_agent_csv(rows, ks) -> str:
    ks = sorted(set(int(k) for k in ks))
    header = ["scenario_id", "agent"]
    for k in ks:
        header += [f"minADE_{k}", f"minFDE_{k}"]
    lines = [",".join(header)]
    for row in rows:
        cells = [row.scenario_id, str(row.agent)]
        for k in ks:
            cells += [repr(row.min_ade[k]), repr(row.min_fde[k])]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
