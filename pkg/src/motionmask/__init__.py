"""Masked-trajectory pretraining toolkit.

Scene tensors with validity flags, random mask profiles and task masks,
ray-traced occlusion auto-labeling, a tiny axial-attention masked
autoencoder with exact gradients, pretrain/finetune transfer, and
multimodal forecasting metrics, all deterministic per seed and sized for
CPU experiments.
"""

__version__ = "0.1.0"

from .masking import (MaskGrid, MaskProfileConfig, apply_mask, conditional_mask,
                      measured_ratio, occlusion_task_mask, prediction_mask,
                      sample_patchwise_mask, sample_pointwise_mask,
                      sample_profile_mask, sample_timewise_mask)
from .metrics import MetricReport, evaluate, min_ade, min_fde, miss_rate
from .network import (Forecast, ModelConfig, ModelParams, decode, encode,
                      forward_backward, init_model, load_checkpoint,
                      reconstruction_loss, save_checkpoint)
from .occlusion import (GridSpec, OcclusionLabels, OccupancyGrid, VisibilityGrid,
                        label_occluded_agents, rasterize_agents, select_ego,
                        trace_visibility)
from .scene import (AgentState, MapPolyline, RigidTransform, Scenario, SceneTensor,
                    load_scenarios, normalize_scene, save_scenarios)
from .synth import SynthSpec, generate_dataset, generate_scene, synth_preset
from .training import (OptimState, TrainConfig, finetune, optimizer_step, pretrain,
                       run_ablation, transfer_encoder)

__all__ = [name for name in dir() if not name.startswith("_")]
