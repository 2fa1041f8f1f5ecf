"""Pretraining, task finetuning, encoder transfer, and the ablation harness.

The two-stage scheme: pretrain the encoder by reconstructing randomly
hidden cells (fresh mask per scenario per step), then finetune with a task
mask, optionally starting from the pretrained encoder and optionally
freezing it.  Both stages share one loop:

- every step draws ``batch_size`` scenarios (seeded, with replacement),
- builds the step's masks, runs forward/backward per scenario in order,
- averages gradients in that fixed order, and applies one bias-corrected
  adaptive-moment update.

Each scenario is normalized to the ego pose at the last observed timestep
before it reaches the model, so inputs are position/heading invariant; the
ego must be valid there.  Supervision during pretraining covers exactly
the hidden-and-valid cells; task finetuning supervises hidden future cells
only (occluded history is hidden from the input but, by default, not
reconstructed).

Everything is deterministic given (dataset, configs, seeds) at a fixed
thread count; training logs carry (step, wall_ms, loss), where wall_ms is
measured and therefore the single non-reproducible artifact field.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (DataError, DivergenceError, InvariantError,
                     MissingLabelsError, NonFiniteError, ShapeMismatchError)
from .masking import (MaskGrid, MaskProfileConfig, apply_mask, conditional_mask,
                      occlusion_task_mask, prediction_mask, sample_profile_mask)
from .network import (ModelConfig, ModelParams, batch_forward_backward,
                      init_model, is_encoder_array)
from .rng import SeedStream, derive
from .scene import Scenario, normalize_scene

TASKS = ("pretrain_random", "predict", "conditional", "occlusion")
FINETUNE_TASKS = ("predict", "conditional", "occlusion")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch_size: int = 8
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adamlike: float = 1e-8
    seed: int = 0
    log_every: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise InvariantError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise InvariantError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise InvariantError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.log_every < 1:
            raise InvariantError(f"log_every must be >= 1, got {self.log_every}")

    def to_obj(self) -> dict:
        return {"steps": self.steps, "batch_size": self.batch_size,
                "learning_rate": self.learning_rate, "beta1": self.beta1,
                "beta2": self.beta2, "eps_adamlike": self.eps_adamlike,
                "seed": self.seed, "log_every": self.log_every}

    @staticmethod
    def from_obj(obj: dict) -> "TrainConfig":
        return TrainConfig(
            steps=int(obj["steps"]), batch_size=int(obj.get("batch_size", 8)),
            learning_rate=float(obj.get("learning_rate", 3e-4)),
            beta1=float(obj.get("beta1", 0.9)), beta2=float(obj.get("beta2", 0.999)),
            eps_adamlike=float(obj.get("eps_adamlike", 1e-8)),
            seed=int(obj.get("seed", 0)), log_every=int(obj.get("log_every", 1)))


@dataclass
class OptimState:
    """First/second moment arrays mirroring the parameter shapes."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @staticmethod
    def zeros_like(params: ModelParams) -> "OptimState":
        return OptimState(m={k: np.zeros_like(a) for k, a in params.arrays.items()},
                          v={k: np.zeros_like(a) for k, a in params.arrays.items()})


@dataclass(frozen=True)
class LogRow:
    step: int
    wall_ms: float
    loss: float


def optimizer_step(params: ModelParams, grads: dict[str, np.ndarray],
                   state: OptimState, config) -> tuple[ModelParams, OptimState]:
    """Bias-corrected adaptive-moment update, elementwise, in place.

    ``config`` only needs the five optimizer constants (learning_rate,
    beta1, beta2, eps_adamlike plus nothing else), so a zero learning rate
    is mechanically fine here even though training configs require > 0.
    """
    if set(grads) != set(params.arrays):
        raise ShapeMismatchError("gradient names do not match parameter names")
    for name, g in grads.items():
        if g.shape != params.arrays[name].shape:
            raise ShapeMismatchError(f"gradient shape mismatch for {name!r}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    lr, eps = config.learning_rate, config.eps_adamlike
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        params.arrays[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


# ---------------------------------------------------------------------------
# Mask plumbing
# ---------------------------------------------------------------------------

def build_task_mask(scene, task: str, occluded_history=None) -> MaskGrid:
    """The fixed mask that encodes a downstream task for one scene."""
    n, t, t_obs = scene.n_agents, scene.t_total, scene.t_obs
    if task == "predict":
        return prediction_mask(n, t, t_obs)
    if task == "conditional":
        return conditional_mask(n, t, t_obs, scene.ego_index)
    if task == "occlusion":
        if occluded_history is None:
            raise MissingLabelsError(
                f"occlusion task needs labels for scenario {scene.scenario_id!r}")
        return occlusion_task_mask(n, t, t_obs, occluded_history)
    raise InvariantError(f"no task mask for {task!r}")


def _normalized(scenario: Scenario) -> Scenario:
    scene = scenario.scene
    return normalize_scene(scenario, scene.ego_index, scene.t_obs - 1)[0]


def _future_only(mask: MaskGrid, t_obs: int) -> MaskGrid:
    hidden = mask.hidden.copy()
    hidden[:, :t_obs] = False
    return MaskGrid(hidden)


def _history_occlusion(scenario: Scenario, occlusion_labels) -> np.ndarray:
    sid = scenario.scene.scenario_id
    if occlusion_labels is None or sid not in occlusion_labels:
        raise MissingLabelsError(f"no occlusion labels for scenario {sid!r}")
    labels = occlusion_labels[sid]
    occ = labels.occluded if hasattr(labels, "occluded") else np.asarray(labels)
    if occ.shape != (scenario.scene.n_agents, scenario.scene.t_total):
        raise ShapeMismatchError(
            f"labels for {sid!r} have shape {occ.shape}, scene is "
            f"({scenario.scene.n_agents}, {scenario.scene.t_total})")
    return np.asarray(occ, dtype=bool)[:, :scenario.scene.t_obs]


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------

def _train_loop(params: ModelParams, dataset, step_masks, head: str,
                config: TrainConfig, freeze_encoder: bool = False):
    """Shared loop; ``step_masks(step, j, scenario) -> (input_mask, target_mask)``."""
    if len(dataset) == 0:
        raise DataError("dataset is empty")
    prepared = [_normalized(s) for s in dataset]
    state = OptimState.zeros_like(params)
    log: list[LogRow] = []
    t0 = time.monotonic()
    for step in range(1, config.steps + 1):
        picks = SeedStream(derive(config.seed, 0xBA7C4, step))
        batch = [picks.below(len(prepared)) for _ in range(config.batch_size)]
        items = []
        for j, idx in enumerate(batch):
            scenario = prepared[idx]
            input_mask, target_mask = step_masks(step, j, scenario)
            masked = apply_mask(scenario.scene, input_mask)
            items.append((masked, input_mask, scenario.polylines,
                          scenario.scene, target_mask))
        try:
            mean_loss, grads = batch_forward_backward(params, items, head=head)
        except NonFiniteError as exc:
            raise DivergenceError(step, f"step {step}: {exc}") from exc
        if not math.isfinite(mean_loss):
            raise DivergenceError(step)
        if freeze_encoder:
            for name in grads:
                if is_encoder_array(name):
                    grads[name][...] = 0.0
        params, state = optimizer_step(params, grads, state, config)
        if step % config.log_every == 0 or step == config.steps:
            log.append(LogRow(step=step, wall_ms=(time.monotonic() - t0) * 1e3,
                              loss=mean_loss))
    return params, log


def pretrain(dataset, profile: MaskProfileConfig, model_config: ModelConfig,
             train_config: TrainConfig) -> tuple[ModelParams, list[LogRow]]:
    """Masked-reconstruction pretraining over history and future alike.

    Every scenario in every step gets a fresh mask drawn from ``profile``
    with a seed derived from (profile.seed, step, batch slot); exactly the
    hidden-and-valid cells are supervised.
    """
    params = init_model(model_config, seed=derive(train_config.seed, 0x1217))

    def step_masks(step, j, scenario):
        scene = scenario.scene
        cfg = MaskProfileConfig(
            profile=profile.profile, ratio=profile.ratio,
            patch_len_min=profile.patch_len_min, patch_len_max=profile.patch_len_max,
            seed=derive(profile.seed, step, j))
        mask = sample_profile_mask(scene.n_agents, scene.t_total, scene.valid, cfg)
        return mask, mask

    return _train_loop(params, dataset, step_masks, "pretrain", train_config)


def transfer_encoder(pretrained: ModelParams, fresh: ModelParams) -> ModelParams:
    """Copy encoder arrays from ``pretrained`` onto ``fresh``'s decoders."""
    arrays = {}
    for name, arr in fresh.arrays.items():
        if is_encoder_array(name):
            if name not in pretrained.arrays:
                raise ShapeMismatchError(f"pretrained checkpoint lacks array {name!r}")
            src = pretrained.arrays[name]
            if src.shape != arr.shape:
                raise ShapeMismatchError(
                    f"encoder array {name!r} has shape {src.shape}, expected {arr.shape}")
            arrays[name] = src.copy()
        else:
            arrays[name] = arr.copy()
    for name in pretrained.arrays:
        if is_encoder_array(name) and name not in fresh.arrays:
            raise ShapeMismatchError(f"pretrained encoder array {name!r} has no slot")
    return ModelParams(config=fresh.config, arrays=arrays)


def finetune(start: ModelParams | None, task: str, dataset,
             occlusion_labels=None, freeze_encoder: bool = False,
             model_config: ModelConfig | None = None,
             train_config: TrainConfig | None = None,
             supervise_occluded_history: bool = False
             ) -> tuple[ModelParams, list[LogRow]]:
    """Task finetuning; ``start=None`` trains from scratch (the baseline).

    The task decoder head is used; supervision covers hidden future cells
    (plus hidden history when ``supervise_occluded_history`` is set, which
    turns occluded-history cells back into reconstruction targets).
    """
    if task not in FINETUNE_TASKS:
        raise InvariantError(f"cannot finetune on task {task!r}")
    if train_config is None:
        raise InvariantError("train_config is required")
    if start is None:
        if model_config is None:
            raise InvariantError("model_config is required when starting from scratch")
        params = init_model(model_config, seed=derive(train_config.seed, 0x5C7A))
    else:
        params = start.clone()
        if model_config is not None and model_config != start.config:
            raise ShapeMismatchError("model_config disagrees with start checkpoint")

    cached: dict[str, tuple[MaskGrid, MaskGrid]] = {}

    def step_masks(step, j, scenario):
        sid = scenario.scene.scenario_id
        if sid not in cached:
            occ = (_history_occlusion(scenario, occlusion_labels)
                   if task == "occlusion" else None)
            mask = build_task_mask(scenario.scene, task, occ)
            target = mask if supervise_occluded_history else _future_only(
                mask, scenario.scene.t_obs)
            cached[sid] = (mask, target)
        return cached[sid]

    return _train_loop(params, dataset, step_masks, "task", train_config,
                       freeze_encoder=freeze_encoder)


# ---------------------------------------------------------------------------
# Ablation harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AblationRow:
    profile: str
    ratio: float
    min_ade: float
    min_fde: float


def ablation_csv(rows) -> str:
    lines = ["profile,ratio,minADE_6,minFDE_6"]
    for r in rows:
        lines.append(f"{r.profile},{r.ratio},{r.min_ade},{r.min_fde}")
    return "\n".join(lines) + "\n"


def run_ablation(dataset, ratios, profiles, model_config: ModelConfig,
                 train_config: TrainConfig, *, eval_dataset=None,
                 pretrain_config: TrainConfig | None = None,
                 patch_len_min: int = 2, patch_len_max: int = 6,
                 k: int = 6, base_seed: int = 0) -> list[AblationRow]:
    """Pretrain -> finetune(predict) -> evaluate for every (ratio, profile).

    Emits one row per grid cell with minADE_k / minFDE_k on the evaluation
    split (the training split when none is given).  Published reference
    numbers for the analogous full-scale sweep (e.g. pointwise 75% reaching
    0.717 / 1.292) are context, not targets, at desk scale.
    """
    from .metrics import evaluate

    ratios = list(ratios)
    profiles = list(profiles)
    if not ratios or not profiles:
        raise DataError("ablation grid is empty")
    rows = []
    for pi, profile in enumerate(profiles):
        for ri, ratio in enumerate(ratios):
            cell_seed = derive(base_seed, 0xAB1A7E, pi, ri)
            profile_cfg = MaskProfileConfig(
                profile=profile, ratio=ratio,
                patch_len_min=patch_len_min, patch_len_max=patch_len_max,
                seed=derive(cell_seed, 1))
            pre_cfg = pretrain_config or train_config
            pre_cfg = TrainConfig(**{**pre_cfg.to_obj(), "seed": derive(cell_seed, 2)})
            pretrained, _ = pretrain(dataset, profile_cfg, model_config, pre_cfg)
            fresh = init_model(model_config, seed=derive(cell_seed, 3))
            start = transfer_encoder(pretrained, fresh)
            ft_cfg = TrainConfig(**{**train_config.to_obj(), "seed": derive(cell_seed, 4)})
            tuned, _ = finetune(start=start, task="predict", dataset=dataset,
                                train_config=ft_cfg)
            report = evaluate(tuned, eval_dataset if eval_dataset is not None else dataset,
                              task="predict", subset="all", ks=(k,))
            rows.append(AblationRow(profile=profile, ratio=float(ratio),
                                    min_ade=report.min_ade[k],
                                    min_fde=report.min_fde[k]))
    return rows


# ---------------------------------------------------------------------------
# Log I/O
# ---------------------------------------------------------------------------

def save_training_log(log, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,wall_ms,loss\n")
        for row in log:
            fh.write(f"{row.step},{row.wall_ms:.3f},{row.loss}\n")


def load_training_log(path) -> list[LogRow]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "step,wall_ms,loss":
            raise DataError(f"unrecognized training log header: {header!r}")
        for line in fh:
            if not line.strip():
                continue
            step, wall_ms, loss = line.strip().split(",")
            rows.append(LogRow(step=int(step), wall_ms=float(wall_ms), loss=float(loss)))
    return rows
