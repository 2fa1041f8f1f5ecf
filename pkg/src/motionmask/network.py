"""Tiny masked-trajectory autoencoder with axial attention.

Architecture (all float64, sized for minutes-scale CPU training):

- Per-cell input embedding of agent features, with hidden cells replaced by
  a learned mask token; a learned per-timestep embedding is added to every
  cell, and a mean-pooled map-context vector is added scene-wide.
- ``n_blocks`` pre-norm encoder blocks, each: temporal attention (within an
  agent, across time), social attention (within a timestep, across
  agents), then a tanh feedforward, each behind its own layer norm with a
  residual connection.  No agent positional encoding, so the encoder is
  agent-permutation equivariant by construction.
- Two decoder heads of identical shape but independent weights (one used
  during pretraining, one for downstream tasks): a linear map from each
  cell's latent to K (x, y) offsets, plus a shared mode-probability head
  over the mean-pooled latent.

Positions and velocities enter scaled by 1/POSITION_SCALE and decoded
trajectories are scaled back, keeping activations O(1) at desk scale.

The loss is winner-takes-all: mean squared position error of the best of K
modes over the supervised cells, plus cross-entropy pushing the mode
distribution toward that winner.  ``forward_backward`` differentiates the
whole pipeline with the in-package reverse-mode tape and returns exact
gradients for every parameter array.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, layer_norm, log_softmax, softmax
from .errors import (CheckpointError, InvariantError, NonFiniteError,
                     ShapeMismatchError)
from .masking import MaskGrid
from .rng import SeedStream, derive
from .scene import AGENT_KINDS, LANE_KINDS, MapPolyline, SceneTensor

CHECKPOINT_VERSION = 1
POSITION_SCALE = 10.0  # meters per feature unit

N_AGENT_FEATURES = 8 + len(AGENT_KINDS)   # x y heading vx vy length width valid + kind
N_MAP_FEATURES = 2 + len(LANE_KINDS)      # x y + lane kind


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 32
    n_blocks: int = 2
    n_heads: int = 2
    k_modes: int = 6
    t_total: int = 50
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise InvariantError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.k_modes < 1 or self.n_blocks < 1:
            raise InvariantError("need k_modes >= 1 and n_blocks >= 1")
        if self.t_total < 2:
            raise InvariantError("t_total must be at least 2")
        if self.dropout != 0.0:
            raise InvariantError("dropout is fixed at 0 at desk scale")

    def to_obj(self) -> dict:
        return {"d_model": self.d_model, "n_blocks": self.n_blocks,
                "n_heads": self.n_heads, "k_modes": self.k_modes,
                "t_total": self.t_total, "dropout": self.dropout}

    @staticmethod
    def from_obj(obj: dict) -> "ModelConfig":
        return ModelConfig(d_model=int(obj["d_model"]), n_blocks=int(obj["n_blocks"]),
                           n_heads=int(obj["n_heads"]), k_modes=int(obj["k_modes"]),
                           t_total=int(obj["t_total"]),
                           dropout=float(obj.get("dropout", 0.0)))


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Stable name -> shape enumeration; dict order is the serialization order."""
    d, k, t = config.d_model, config.k_modes, config.t_total
    shapes: dict[str, tuple[int, ...]] = {
        "embed/W": (N_AGENT_FEATURES, d),
        "embed/b": (d,),
        "embed/mask_token": (d,),
        "embed/time": (t, d),
        "map/W": (N_MAP_FEATURES, d),
        "map/b": (d,),
    }
    for i in range(config.n_blocks):
        for ln in ("ln1", "ln2", "ln3"):
            shapes[f"block{i}/{ln}/gamma"] = (d,)
            shapes[f"block{i}/{ln}/beta"] = (d,)
        for axis in ("temporal", "social"):
            for w in ("Wq", "Wk", "Wv", "Wo"):
                shapes[f"block{i}/{axis}/{w}"] = (d, d)
            for b in ("bq", "bk", "bv", "bo"):
                shapes[f"block{i}/{axis}/{b}"] = (d,)
        shapes[f"block{i}/ffn/W1"] = (d, 4 * d)
        shapes[f"block{i}/ffn/b1"] = (4 * d,)
        shapes[f"block{i}/ffn/W2"] = (4 * d, d)
        shapes[f"block{i}/ffn/b2"] = (d,)
    shapes["final_ln/gamma"] = (d,)
    shapes["final_ln/beta"] = (d,)
    for head in ("dec_pretrain", "dec_task"):
        shapes[f"{head}/W"] = (d, 2 * k)
        shapes[f"{head}/b"] = (2 * k,)
    shapes["mode/W"] = (d, k)
    shapes["mode/b"] = (k,)
    return shapes


def is_encoder_array(name: str) -> bool:
    """Encoder arrays are everything transferred/frozen as the 'encoder':
    embeddings, map pooling, attention blocks, and the final norm."""
    return not (name.startswith("dec_") or name.startswith("mode/"))


@dataclass
class ModelParams:
    """Named parameter arrays plus the config that fixes their shapes."""

    config: ModelConfig
    arrays: dict[str, np.ndarray]

    def clone(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays.values())


def init_model(config: ModelConfig, seed: int) -> ModelParams:
    """Seeded init: weight matrices scaled-uniform U(-a, a) with
    a = sqrt(6 / (fan_in + fan_out)); embedding tables U(-0.1, 0.1);
    biases and norm offsets 0; norm gains 1."""
    arrays: dict[str, np.ndarray] = {}
    for index, (name, shape) in enumerate(param_shapes(config).items()):
        stream = SeedStream(derive(seed, index))
        leaf = name.rsplit("/", 1)[-1]
        if name in ("embed/mask_token", "embed/time"):
            arr = np.array([stream.uniform_range(-0.1, 0.1)
                            for _ in range(int(np.prod(shape)))]).reshape(shape)
        elif leaf.startswith("W"):
            a = math.sqrt(6.0 / (shape[0] + shape[1]))
            arr = np.array([stream.uniform_range(-a, a)
                            for _ in range(int(np.prod(shape)))]).reshape(shape)
        elif leaf == "gamma":
            arr = np.ones(shape)
        else:  # biases, beta
            arr = np.zeros(shape)
        arrays[name] = arr
    return ModelParams(config=config, arrays=arrays)


@dataclass(frozen=True)
class Forecast:
    """K candidate trajectories [K, N, T, 2] (meters) with mode probabilities."""

    trajectories: np.ndarray
    mode_probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.mode_probs, dtype=np.float64)
        if (probs < 0).any() or abs(float(probs.sum()) - 1.0) > 1e-6:
            raise InvariantError("mode probabilities must be a simplex point")


# ---------------------------------------------------------------------------
# Feature construction
# ---------------------------------------------------------------------------

def agent_features(scene: SceneTensor) -> np.ndarray:
    """[N, T, F] feature grid; invalid cells are all-zero except nothing."""
    n, t = scene.n_agents, scene.t_total
    feats = np.zeros((n, t, N_AGENT_FEATURES))
    feats[:, :, 0:2] = scene.xy / POSITION_SCALE
    feats[:, :, 2] = scene.heading
    feats[:, :, 3:5] = scene.vel / POSITION_SCALE
    feats[:, :, 5:7] = scene.size
    feats[:, :, 7] = scene.valid.astype(np.float64)
    kind_onehot = np.eye(len(AGENT_KINDS))[scene.kind]
    feats[:, :, 8:] = kind_onehot * scene.valid[:, :, None]
    return feats


def map_point_features(polylines) -> np.ndarray:
    """[P_valid_total, FM] stacked valid points from every polyline."""
    rows = []
    for p in polylines:
        if p.valid_count == 0:
            continue
        pts = p.points[:p.valid_count] / POSITION_SCALE
        onehot = np.zeros((p.valid_count, len(LANE_KINDS)))
        onehot[:, LANE_KINDS.index(p.lane_kind)] = 1.0
        rows.append(np.hstack([pts, onehot]))
    if not rows:
        return np.zeros((0, N_MAP_FEATURES))
    return np.vstack(rows)


# ---------------------------------------------------------------------------
# Forward graph
# ---------------------------------------------------------------------------

_layer_norm = layer_norm


def _attention(p: dict, prefix: str, x: Tensor, n_heads: int,
               key_mask: np.ndarray | None = None) -> Tensor:
    """Multi-head self-attention over the next-to-last axis of [..., L, D].

    ``key_mask`` is an additive score mask broadcastable to the score shape
    [..., H, L, L]; -inf entries give those keys exactly zero weight."""
    *lead, l, d = x.shape
    dh = d // n_heads
    def split(t: Tensor) -> Tensor:
        return t.reshape(*lead, l, n_heads, dh).swapaxes(-2, -3)
    q = split(x @ p[prefix + "/Wq"] + p[prefix + "/bq"]) * (1.0 / math.sqrt(dh))
    k = split(x @ p[prefix + "/Wk"] + p[prefix + "/bk"])
    v = split(x @ p[prefix + "/Wv"] + p[prefix + "/bv"])
    scores = q @ k.swapaxes(-1, -2)
    if key_mask is not None:
        scores = scores + key_mask
    att = softmax(scores, axis=-1) @ v
    merged = att.swapaxes(-2, -3).reshape(*lead, l, d)
    return merged @ p[prefix + "/Wo"] + p[prefix + "/bo"]


def _encode_graph(p: dict, config: ModelConfig, masked_scene: SceneTensor,
                  mask: MaskGrid, polylines) -> Tensor:
    n, t = masked_scene.n_agents, masked_scene.t_total
    feats = Tensor(agent_features(masked_scene))
    hidden = mask.hidden[:, :, None].astype(np.float64)
    embedded = feats @ p["embed/W"] + p["embed/b"]
    x = embedded * (1.0 - hidden) + p["embed/mask_token"] * hidden
    x = x + p["embed/time"].reshape(1, t, config.d_model)
    pts = map_point_features(polylines)
    if pts.shape[0] > 0:
        ctx = (Tensor(pts) @ p["map/W"] + p["map/b"]).mean(axis=0)
        x = x + ctx
    for i in range(config.n_blocks):
        h = _layer_norm(x, p[f"block{i}/ln1/gamma"], p[f"block{i}/ln1/beta"])
        x = x + _attention(p, f"block{i}/temporal", h, config.n_heads)
        h = _layer_norm(x, p[f"block{i}/ln2/gamma"], p[f"block{i}/ln2/beta"])
        x = x + _attention(p, f"block{i}/social",
                           h.swapaxes(0, 1), config.n_heads).swapaxes(0, 1)
        h = _layer_norm(x, p[f"block{i}/ln3/gamma"], p[f"block{i}/ln3/beta"])
        h = (h @ p[f"block{i}/ffn/W1"] + p[f"block{i}/ffn/b1"]).tanh()
        x = x + h @ p[f"block{i}/ffn/W2"] + p[f"block{i}/ffn/b2"]
    return _layer_norm(x, p["final_ln/gamma"], p["final_ln/beta"])


def _decode_graph(p: dict, config: ModelConfig, latent: Tensor,
                  head: str) -> tuple[Tensor, Tensor]:
    """Returns (trajectories [K, N, T, 2] in meters, mode logits [K])."""
    if head not in ("pretrain", "task"):
        raise InvariantError(f"unknown decoder head {head!r}")
    n, t, _ = latent.shape
    k = config.k_modes
    raw = latent @ p[f"dec_{head}/W"] + p[f"dec_{head}/b"]
    traj = raw.reshape(n, t, k, 2).transpose(2, 0, 1, 3) * POSITION_SCALE
    pooled = latent.mean(axis=(0, 1))
    logits = pooled @ p["mode/W"] + p["mode/b"]
    return traj, logits


def _check_encode_inputs(config: ModelConfig, masked_scene: SceneTensor, mask: MaskGrid):
    if mask.hidden.shape != masked_scene.valid.shape:
        raise ShapeMismatchError(
            f"mask {mask.hidden.shape} does not match scene "
            f"({masked_scene.n_agents}, {masked_scene.t_total})")
    if masked_scene.t_total != config.t_total:
        raise ShapeMismatchError(
            f"scene has t_total={masked_scene.t_total}, model expects {config.t_total}")
    if (masked_scene.valid & mask.hidden).any():
        raise InvariantError(
            "masked_scene must be the apply_mask output for this mask "
            "(hidden cells still valid)")


def _const_params(params: ModelParams) -> dict[str, Tensor]:
    return {name: Tensor(arr) for name, arr in params.arrays.items()}


def encode(params: ModelParams, masked_scene: SceneTensor, mask: MaskGrid,
           polylines=()) -> np.ndarray:
    """Latent grid [N, T, d_model] for a masked scene."""
    _check_encode_inputs(params.config, masked_scene, mask)
    latent = _encode_graph(_const_params(params), params.config,
                           masked_scene, mask, polylines).data
    if not np.isfinite(latent).all():
        raise NonFiniteError("encoder produced non-finite values")
    return latent


def decode(params: ModelParams, latent: np.ndarray, head: str = "task") -> Forecast:
    """K-mode forecast from a latent grid."""
    if not np.isfinite(latent).all():
        raise NonFiniteError("latent contains non-finite values")
    p = _const_params(params)
    traj, logits = _decode_graph(p, params.config, Tensor(latent), head)
    probs = softmax(logits).data
    if not np.isfinite(traj.data).all() or not np.isfinite(probs).all():
        raise NonFiniteError("decoder produced non-finite values")
    return Forecast(trajectories=traj.data, mode_probs=probs)


def reconstruction_loss(forecast: Forecast, target: SceneTensor,
                        target_mask: MaskGrid) -> float:
    """Winner-takes-all loss: min over modes of the mean squared position
    error over supervised (masked-and-valid) cells, plus -log p(winner).
    Zero supervised cells give loss 0 by convention."""
    if target_mask.hidden.shape != target.valid.shape:
        raise ShapeMismatchError("target mask does not match target scene")
    if forecast.trajectories.shape[1:3] != target.valid.shape:
        raise ShapeMismatchError("forecast does not match target scene")
    w = (target_mask.hidden & target.valid)
    count = int(w.sum())
    if count == 0:
        return 0.0
    diff = forecast.trajectories - target.xy[None]
    per_mode = (np.square(diff).sum(axis=3) * w[None]).sum(axis=(1, 2)) / count
    winner = int(np.argmin(per_mode))
    return float(per_mode[winner] - np.log(forecast.mode_probs[winner]))


def _loss_graph(traj: Tensor, logits: Tensor, target: SceneTensor,
                target_mask: MaskGrid) -> Tensor | None:
    w = (target_mask.hidden & target.valid)
    count = int(w.sum())
    if count == 0:
        return None
    diff = traj - target.xy[None]
    weights = w[None, :, :, None].astype(np.float64)
    per_mode = (diff * diff * weights).sum(axis=(1, 2, 3)) * (1.0 / count)
    winner = int(np.argmin(per_mode.data))
    return per_mode[winner] - log_softmax(logits)[winner]


def forward_backward(params: ModelParams, masked_scene: SceneTensor, mask: MaskGrid,
                     polylines, target: SceneTensor, target_mask: MaskGrid,
                     head: str = "pretrain") -> tuple[float, dict[str, np.ndarray]]:
    """Loss and exact gradients of encode -> decode -> loss for every array."""
    _check_encode_inputs(params.config, masked_scene, mask)
    if target_mask.hidden.shape != target.valid.shape:
        raise ShapeMismatchError("target mask does not match target scene")
    p = {name: Tensor(arr, requires_grad=True) for name, arr in params.arrays.items()}
    latent = _encode_graph(p, params.config, masked_scene, mask, polylines)
    traj, logits = _decode_graph(p, params.config, latent, head)
    loss = _loss_graph(traj, logits, target, target_mask)
    if loss is None:
        return 0.0, {name: np.zeros_like(arr) for name, arr in params.arrays.items()}
    loss.backward()
    value = float(loss.data)
    if not math.isfinite(value):
        raise NonFiniteError("non-finite loss")
    grads = {}
    for name, tensor in p.items():
        g = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {name}")
        grads[name] = g
    return value, grads


# ---------------------------------------------------------------------------
# Batched training path
# ---------------------------------------------------------------------------
#
# Training vectorizes a whole batch through one graph: scenarios are stacked
# along a leading axis, padded to the largest agent count, and padded rows
# are excluded exactly (additive -inf on social-attention keys, zero weight
# in pooling and loss), so the batched loss and gradients equal the mean of
# the per-scenario forward_backward results up to float64 rounding.

def _batch_graph(p: dict, config: ModelConfig, items, head: str):
    """items: sequence of (masked_scene, mask, polylines, target, target_mask).

    Returns the scalar mean-loss Tensor, or None when nothing is supervised.
    """
    b = len(items)
    t = config.t_total
    k = config.k_modes
    n_max = max(item[0].n_agents for item in items)

    feats = np.zeros((b, n_max, t, N_AGENT_FEATURES))
    hidden = np.zeros((b, n_max, t, 1))
    exists = np.zeros((b, n_max), dtype=bool)
    target_xy = np.zeros((b, n_max, t, 2))
    sup_w = np.zeros((b, 1, n_max, t, 1))
    has_sup = np.zeros(b)
    map_rows = []
    for idx, (masked_scene, mask, polylines, target, target_mask) in enumerate(items):
        _check_encode_inputs(config, masked_scene, mask)
        n = masked_scene.n_agents
        feats[idx, :n] = agent_features(masked_scene)
        hidden[idx, :n, :, 0] = mask.hidden
        exists[idx, :n] = True
        target_xy[idx, :n] = target.xy
        w = (target_mask.hidden & target.valid)
        count = int(w.sum())
        if count > 0:
            sup_w[idx, 0, :n, :, 0] = w / count
            has_sup[idx] = 1.0
        map_rows.append(map_point_features(polylines))
    if not has_sup.any():
        return None

    x = Tensor(feats) @ p["embed/W"] + p["embed/b"]
    x = x * (1.0 - hidden) + p["embed/mask_token"] * hidden
    x = x + p["embed/time"].reshape(1, 1, t, config.d_model)

    all_pts = np.vstack(map_rows) if map_rows else np.zeros((0, N_MAP_FEATURES))
    if all_pts.shape[0] > 0:
        sel = np.zeros((b, all_pts.shape[0]))
        offset = 0
        for idx, rows in enumerate(map_rows):
            n_pts = rows.shape[0]
            if n_pts:
                sel[idx, offset:offset + n_pts] = 1.0 / n_pts
            offset += n_pts
        ctx = Tensor(sel) @ (Tensor(all_pts) @ p["map/W"] + p["map/b"])
        x = x + ctx.reshape(b, 1, 1, config.d_model)

    social_mask = np.where(exists, 0.0, -np.inf)[:, None, None, None, :]
    for i in range(config.n_blocks):
        h = _layer_norm(x, p[f"block{i}/ln1/gamma"], p[f"block{i}/ln1/beta"])
        x = x + _attention(p, f"block{i}/temporal", h, config.n_heads)
        h = _layer_norm(x, p[f"block{i}/ln2/gamma"], p[f"block{i}/ln2/beta"])
        x = x + _attention(p, f"block{i}/social", h.swapaxes(1, 2), config.n_heads,
                           key_mask=social_mask).swapaxes(1, 2)
        h = _layer_norm(x, p[f"block{i}/ln3/gamma"], p[f"block{i}/ln3/beta"])
        h = (h @ p[f"block{i}/ffn/W1"] + p[f"block{i}/ffn/b1"]).tanh()
        x = x + h @ p[f"block{i}/ffn/W2"] + p[f"block{i}/ffn/b2"]
    latent = _layer_norm(x, p["final_ln/gamma"], p["final_ln/beta"])

    raw = latent @ p[f"dec_{head}/W"] + p[f"dec_{head}/b"]
    traj = raw.reshape(b, n_max, t, k, 2).transpose(0, 3, 1, 2, 4) * POSITION_SCALE
    pool_w = np.zeros((b, n_max, 1, 1))
    for idx, (masked_scene, *_rest) in enumerate(items):
        n = masked_scene.n_agents
        pool_w[idx, :n] = 1.0 / (n * t)
    pooled = (latent * pool_w).sum(axis=(1, 2))
    logits = pooled @ p["mode/W"] + p["mode/b"]

    diff = traj - target_xy[:, None]
    per_mode = (diff * diff * sup_w).sum(axis=(2, 3, 4))
    winners = np.argmin(per_mode.data, axis=1)
    rows = np.arange(b)
    chosen = per_mode[(rows, winners)]
    logp = log_softmax(logits, axis=-1)[(rows, winners)]
    return ((chosen - logp) * has_sup).sum() * (1.0 / b)


def batch_forward_backward(params: ModelParams, items, head: str = "pretrain"
                           ) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss over the batch and its exact gradients in one tape pass.

    Equivalent to averaging :func:`forward_backward` over ``items``.
    """
    p = {name: Tensor(arr, requires_grad=True) for name, arr in params.arrays.items()}
    loss = _batch_graph(p, params.config, items, head)
    if loss is None:
        return 0.0, {name: np.zeros_like(arr) for name, arr in params.arrays.items()}
    loss.backward()
    value = float(loss.data)
    if not math.isfinite(value):
        raise NonFiniteError("non-finite loss")
    grads = {}
    for name, tensor in p.items():
        g = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {name}")
        grads[name] = g
    return value, grads


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(params: ModelParams, path) -> None:
    """One JSON document: {format_version, config, arrays}; row-major flat
    float lists with shortest round-trip decimals, so loading is bit-exact."""
    obj = {
        "format_version": CHECKPOINT_VERSION,
        "config": params.config.to_obj(),
        "arrays": {name: arr.ravel().tolist() for name, arr in params.arrays.items()},
    }
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, separators=(",", ":"))
    os.replace(tmp, path)


def load_checkpoint(path) -> ModelParams:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(obj, dict) or obj.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {obj.get('format_version')!r} not supported "
            f"(expected {CHECKPOINT_VERSION})")
    try:
        config = ModelConfig.from_obj(obj["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint config: {exc}") from exc
    shapes = param_shapes(config)
    stored = obj.get("arrays")
    if not isinstance(stored, dict) or set(stored) != set(shapes):
        raise CheckpointError("checkpoint arrays do not match the config's shapes")
    arrays = {}
    for name, shape in shapes.items():
        flat = np.asarray(stored[name], dtype=np.float64)
        if flat.size != int(np.prod(shape)):
            raise CheckpointError(
                f"array {name!r} has {flat.size} values, expected {np.prod(shape)}")
        arrays[name] = flat.reshape(shape)
    return ModelParams(config=config, arrays=arrays)
