"""Command-line entry point wiring the toolkit into reproducible runs.

Every subcommand resolves its configuration as defaults < ``--config``
JSON file < explicit flags, and writes a run manifest
(``<primary output>.manifest.json``) holding the resolved config, a digest,
the seeds in play, and the artifact paths.  Re-running a subcommand with
``--config <manifest>`` reproduces the artifacts byte-for-byte (the
``wall_ms`` column of training logs is measured time and is the single
documented exception).

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 runtime
failure.  The default output directory can be set via ``MOTIONMASK_OUT``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import DataError, MissingLabelsError
from .masking import MaskProfileConfig, sample_profile_mask
from .metrics import evaluate_detailed, per_agent_csv
from .network import ModelConfig, init_model, load_checkpoint, save_checkpoint
from .occlusion import (GridSpec, label_occluded_agents, load_occlusion_labels,
                        save_occlusion_labels, select_ego)
from .plots import render_loss_curves, render_mask_grid, render_trajectories
from .rng import derive
from .scene import load_scenarios, scenario_to_obj
from .synth import PRESETS, SynthSpec, generate_dataset, synth_preset
from .training import (TrainConfig, ablation_csv, build_task_mask, finetune,
                       load_training_log, pretrain, run_ablation,
                       save_training_log, transfer_encoder)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 instead of argparse's 2
        raise _UsageError(message)


def _out_path(value: str) -> str:
    base = os.environ.get("MOTIONMASK_OUT", "")
    if base and not os.path.isabs(value):
        return os.path.join(base, value)
    return value


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _write_manifest(command: str, config: dict, seeds: list[int],
                    artifacts: list[str]) -> None:
    manifest = {
        "command": command,
        "config": config,
        "config_digest": _config_digest(config),
        "seeds": seeds,
        "artifacts": artifacts,
        "tool_version": __version__,
    }
    _atomic_write(artifacts[0] + ".manifest.json",
                  json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _resolve(defaults: dict, config_path: str | None, flags: dict) -> dict:
    resolved = dict(defaults)
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        if isinstance(loaded, dict) and "config" in loaded and "command" in loaded:
            loaded = loaded["config"]  # accept a manifest directly
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(loaded)
    resolved.update({k: v for k, v in flags.items() if v is not None})
    return resolved


def _add_config_flag(sub):
    sub.add_argument("--config", default=None,
                     help="JSON config file (or a run manifest); flags win")


def _train_flags(sub, defaults=False):
    sub.add_argument("--steps", type=int, default=None)
    sub.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    sub.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--log-every", dest="log_every", type=int, default=None)


def _model_flags(sub):
    sub.add_argument("--d-model", dest="d_model", type=int, default=None)
    sub.add_argument("--n-blocks", dest="n_blocks", type=int, default=None)
    sub.add_argument("--n-heads", dest="n_heads", type=int, default=None)
    sub.add_argument("--k-modes", dest="k_modes", type=int, default=None)


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(steps=cfg["steps"], batch_size=cfg["batch_size"],
                       learning_rate=cfg["learning_rate"], seed=cfg["seed"],
                       log_every=cfg["log_every"])


def _model_config(cfg: dict, t_total: int) -> ModelConfig:
    return ModelConfig(d_model=cfg["d_model"], n_blocks=cfg["n_blocks"],
                       n_heads=cfg["n_heads"], k_modes=cfg["k_modes"],
                       t_total=t_total)


# ---------------------------------------------------------------------------
# Handlers
# ---------------------------------------------------------------------------

_SYNTH_DEFAULTS = {
    "preset": "argoverse-like", "count": 10, "seed": 0, "out": "dataset.jsonl",
    "n_agents_min": None, "n_agents_max": None, "t_total": None, "t_obs": None,
    "dt": None, "speed_min": None, "speed_max": None, "map_style": None,
    "noise_std": None, "behavior_mix": None,
}


def _cmd_synth_gen(cfg: dict) -> None:
    spec = synth_preset(cfg["preset"])
    obj = spec.to_obj()
    if cfg["n_agents_min"] is not None or cfg["n_agents_max"] is not None:
        lo, hi = obj["n_agents_range"]
        obj["n_agents_range"] = [cfg["n_agents_min"] or lo, cfg["n_agents_max"] or hi]
    if cfg["speed_min"] is not None or cfg["speed_max"] is not None:
        lo, hi = obj["speed_range"]
        obj["speed_range"] = [cfg["speed_min"] if cfg["speed_min"] is not None else lo,
                              cfg["speed_max"] if cfg["speed_max"] is not None else hi]
    for key in ("t_total", "t_obs", "dt", "map_style", "noise_std"):
        if cfg[key] is not None:
            obj[key] = cfg[key]
    if cfg["behavior_mix"] is not None:
        mix = cfg["behavior_mix"]
        obj["behavior_mix"] = json.loads(mix) if isinstance(mix, str) else mix
    spec = SynthSpec.from_obj(obj)
    out = _out_path(cfg["out"])
    generate_dataset(spec, cfg["count"], cfg["seed"], out)
    _write_manifest("synth-gen", cfg, [cfg["seed"]], [out])
    print(f"wrote {cfg['count']} scenarios to {out}")


_LABEL_DEFAULTS = {
    "data": None, "out": "labels.jsonl", "resolution": 0.5, "half_extent": 60.0,
    "ego_mode": "scene", "seed": 0,
}


def _cmd_label_occlusion(cfg: dict) -> None:
    if not cfg["data"]:
        raise _UsageError("--data is required")
    scenarios = load_scenarios(cfg["data"])
    spec = GridSpec(resolution=cfg["resolution"], half_extent=cfg["half_extent"])
    labels = {}
    for i, scenario in enumerate(scenarios):
        scene = scenario.scene
        if cfg["ego_mode"] == "select":
            ego = select_ego(scene, derive(cfg["seed"], i))
        else:
            ego = scene.ego_index
        labels[scene.scenario_id] = label_occluded_agents(scene, ego, spec)
    out = _out_path(cfg["out"])
    save_occlusion_labels(labels, out)
    _write_manifest("label-occlusion", cfg, [cfg["seed"]], [out])
    occluded_cells = sum(int(l.occluded.sum()) for l in labels.values())
    print(f"labeled {len(labels)} scenarios ({occluded_cells} occluded cells) to {out}")


_PREVIEW_DEFAULTS = {
    "data": None, "index": 0, "task": None, "labels": None,
    "profile": None, "ratio": 0.75, "patch_len_min": 2, "patch_len_max": 6,
    "mask_seed": 0, "out": "mask.svg",
}


def _cmd_mask_preview(cfg: dict) -> None:
    if not cfg["data"]:
        raise _UsageError("--data is required")
    if (cfg["task"] is None) == (cfg["profile"] is None):
        raise _UsageError("give exactly one of --task or --profile")
    scenarios = load_scenarios(cfg["data"])
    if not (0 <= cfg["index"] < len(scenarios)):
        raise DataError(f"scenario index {cfg['index']} out of range")
    scene = scenarios[cfg["index"]].scene
    if cfg["task"] is not None:
        occ = None
        if cfg["task"] == "occlusion":
            if not cfg["labels"]:
                raise MissingLabelsError("occlusion task preview needs --labels")
            table = load_occlusion_labels(cfg["labels"])
            occ = table[scene.scenario_id].occluded[:, :scene.t_obs]
        mask = build_task_mask(scene, cfg["task"], occ)
    else:
        profile = MaskProfileConfig(
            profile=cfg["profile"], ratio=cfg["ratio"],
            patch_len_min=cfg["patch_len_min"], patch_len_max=cfg["patch_len_max"],
            seed=cfg["mask_seed"])
        mask = sample_profile_mask(scene.n_agents, scene.t_total, scene.valid, profile)
    out = _out_path(cfg["out"])
    _atomic_write(out, render_mask_grid(mask.hidden, t_obs=scene.t_obs))
    grid_path = out + ".json"
    _atomic_write(grid_path, json.dumps(
        {"n": mask.n, "t": mask.t,
         "hidden": [[bool(v) for v in row] for row in mask.hidden]},
        separators=(",", ":")) + "\n")
    _write_manifest("mask-preview", cfg, [cfg["mask_seed"]], [out, grid_path])
    print(f"rendered mask ({mask.hidden_count()} hidden cells) to {out}")


_PRETRAIN_DEFAULTS = {
    "data": None, "profile": "pointwise", "ratio": 0.75,
    "patch_len_min": 2, "patch_len_max": 6, "mask_seed": 0,
    "d_model": 32, "n_blocks": 2, "n_heads": 2, "k_modes": 6,
    "steps": 1000, "batch_size": 8, "learning_rate": 3e-4, "seed": 0,
    "log_every": 10, "out": "pretrained.json", "log": "pretrain_log.csv",
}


def _cmd_pretrain(cfg: dict) -> None:
    if not cfg["data"]:
        raise _UsageError("--data is required")
    dataset = load_scenarios(cfg["data"])
    if not dataset:
        raise DataError("dataset is empty")
    profile = MaskProfileConfig(
        profile=cfg["profile"], ratio=cfg["ratio"],
        patch_len_min=cfg["patch_len_min"], patch_len_max=cfg["patch_len_max"],
        seed=cfg["mask_seed"])
    model_config = _model_config(cfg, dataset[0].scene.t_total)
    params, log = pretrain(dataset, profile, model_config, _train_config(cfg))
    out = _out_path(cfg["out"])
    log_path = _out_path(cfg["log"])
    save_checkpoint(params, out)
    save_training_log(log, log_path)
    _write_manifest("pretrain", cfg, [cfg["seed"], cfg["mask_seed"]], [out, log_path])
    print(f"pretrained {cfg['steps']} steps; final loss {log[-1].loss:.6f}; "
          f"checkpoint at {out}")


_FINETUNE_DEFAULTS = {
    "data": None, "task": "predict", "labels": None, "start": None,
    "freeze_encoder": False, "supervise_occluded_history": False,
    "d_model": 32, "n_blocks": 2, "n_heads": 2, "k_modes": 6,
    "steps": 1000, "batch_size": 8, "learning_rate": 3e-4, "seed": 0,
    "log_every": 10, "out": "finetuned.json", "log": "finetune_log.csv",
}


def _cmd_finetune(cfg: dict) -> None:
    if not cfg["data"]:
        raise _UsageError("--data is required")
    dataset = load_scenarios(cfg["data"])
    if not dataset:
        raise DataError("dataset is empty")
    labels = load_occlusion_labels(cfg["labels"]) if cfg["labels"] else None
    model_config = _model_config(cfg, dataset[0].scene.t_total)
    if cfg["start"]:
        pretrained = load_checkpoint(cfg["start"])
        fresh = init_model(pretrained.config,
                           seed=derive(cfg["seed"], 0xF1E5))
        start = transfer_encoder(pretrained, fresh)
        model_config = pretrained.config
    else:
        start = None
    params, log = finetune(
        start=start, task=cfg["task"], dataset=dataset, occlusion_labels=labels,
        freeze_encoder=cfg["freeze_encoder"], model_config=model_config,
        train_config=_train_config(cfg),
        supervise_occluded_history=cfg["supervise_occluded_history"])
    out = _out_path(cfg["out"])
    log_path = _out_path(cfg["log"])
    save_checkpoint(params, out)
    save_training_log(log, log_path)
    _write_manifest("finetune", cfg, [cfg["seed"]], [out, log_path])
    print(f"finetuned {cfg['steps']} steps on {cfg['task']}; "
          f"final loss {log[-1].loss:.6f}; checkpoint at {out}")


_EVAL_DEFAULTS = {
    "data": None, "checkpoint": None, "task": "predict", "subset": "all",
    "labels": None, "ks": "6", "threshold": 2.0, "report": "report.json",
    "per_agent": None, "dump_forecasts": None,
}


def _cmd_evaluate(cfg: dict) -> None:
    if not cfg["data"] or not cfg["checkpoint"]:
        raise _UsageError("--data and --checkpoint are required")
    dataset = load_scenarios(cfg["data"])
    params = load_checkpoint(cfg["checkpoint"])
    labels = load_occlusion_labels(cfg["labels"]) if cfg["labels"] else None
    ks = [int(k) for k in str(cfg["ks"]).split(",") if k]
    sink = [] if cfg["dump_forecasts"] else None
    report, rows = evaluate_detailed(
        params, dataset, task=cfg["task"], subset=cfg["subset"],
        occlusion_labels=labels, ks=ks, threshold=cfg["threshold"],
        forecast_sink=sink)
    out = _out_path(cfg["report"])
    artifacts = [out]
    _atomic_write(out, json.dumps(report.to_obj(), indent=2, sort_keys=True) + "\n")
    if cfg["per_agent"]:
        pa_path = _out_path(cfg["per_agent"])
        _atomic_write(pa_path, per_agent_csv(rows, ks))
        artifacts.append(pa_path)
    if cfg["dump_forecasts"]:
        dump_path = _out_path(cfg["dump_forecasts"])
        lines = []
        for normalized, forecast, agents in sink:
            sc = normalized.scene
            obj = scenario_to_obj(normalized)
            lines.append(json.dumps({
                "scenario_id": sc.scenario_id, "t_obs": sc.t_obs,
                "ego_index": sc.ego_index,
                "truth_xy": sc.xy.tolist(),
                "valid": [[bool(v) for v in row] for row in sc.valid],
                "map": obj["map"],
                "trajectories": forecast.trajectories.tolist(),
                "mode_probs": forecast.mode_probs.tolist(),
                "agents": agents,
            }, separators=(",", ":")))
        _atomic_write(dump_path, "\n".join(lines) + "\n")
        artifacts.append(dump_path)
    _write_manifest("evaluate", cfg, [], artifacts)
    print(json.dumps(report.to_obj(), indent=2, sort_keys=True))


_ABLATE_DEFAULTS = {
    "data": None, "eval_data": None,
    "ratios": "0.25,0.5,0.75", "profiles": "pointwise,patchwise,timewise",
    "patch_len_min": 2, "patch_len_max": 6,
    "d_model": 32, "n_blocks": 2, "n_heads": 2, "k_modes": 6,
    "pretrain_steps": 300, "finetune_steps": 300, "batch_size": 8,
    "learning_rate": 3e-4, "seed": 0, "out": "ablation.csv",
}


def _cmd_ablate(cfg: dict) -> None:
    if not cfg["data"]:
        raise _UsageError("--data is required")
    dataset = load_scenarios(cfg["data"])
    if not dataset:
        raise DataError("dataset is empty")
    eval_dataset = load_scenarios(cfg["eval_data"]) if cfg["eval_data"] else None
    ratios = [float(r) for r in str(cfg["ratios"]).split(",") if r]
    profiles = [p for p in str(cfg["profiles"]).split(",") if p]
    model_config = _model_config(cfg, dataset[0].scene.t_total)
    pre_cfg = TrainConfig(steps=cfg["pretrain_steps"], batch_size=cfg["batch_size"],
                          learning_rate=cfg["learning_rate"], seed=cfg["seed"],
                          log_every=max(1, cfg["pretrain_steps"] // 10))
    ft_cfg = TrainConfig(steps=cfg["finetune_steps"], batch_size=cfg["batch_size"],
                         learning_rate=cfg["learning_rate"], seed=cfg["seed"],
                         log_every=max(1, cfg["finetune_steps"] // 10))
    rows = run_ablation(dataset, ratios, profiles, model_config, ft_cfg,
                        eval_dataset=eval_dataset, pretrain_config=pre_cfg,
                        patch_len_min=cfg["patch_len_min"],
                        patch_len_max=cfg["patch_len_max"],
                        k=cfg["k_modes"], base_seed=cfg["seed"])
    out = _out_path(cfg["out"])
    _atomic_write(out, ablation_csv(rows))
    _write_manifest("ablate", cfg, [cfg["seed"]], [out])
    print(ablation_csv(rows))


_PLOT_DEFAULTS = {
    "kind": "loss_curve", "inputs": None, "index": 0, "out": "plot.svg",
}


def _cmd_plot(cfg: dict) -> None:
    if not cfg["inputs"]:
        raise _UsageError("--inputs is required")
    inputs = [p for p in str(cfg["inputs"]).split(",") if p]
    out = _out_path(cfg["out"])
    if cfg["kind"] == "loss_curve":
        labeled = [(os.path.basename(p), load_training_log(p)) for p in inputs]
        svg = render_loss_curves(labeled)
    elif cfg["kind"] == "trajectories":
        with open(inputs[0], "r", encoding="utf-8") as fh:
            lines = [line for line in fh if line.strip()]
        if not lines:
            raise DataError(f"forecast dump {inputs[0]} is empty")
        if not (0 <= cfg["index"] < len(lines)):
            raise DataError(f"record index {cfg['index']} out of range")
        try:
            dump = json.loads(lines[cfg["index"]])
            svg = render_trajectories(dump)
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise DataError(f"malformed forecast dump: {exc}") from exc
    else:
        raise _UsageError(f"unknown plot kind {cfg['kind']!r}")
    _atomic_write(out, svg)
    _write_manifest("plot", cfg, [], [out])
    print(f"wrote {out}")


# ---------------------------------------------------------------------------
# Wiring
# ---------------------------------------------------------------------------

def _build_parser() -> _Parser:
    parser = _Parser(prog="motionmask",
                     description="Masked-trajectory pretraining toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command")

    sp = subs.add_parser("synth-gen", help="generate a synthetic dataset")
    _add_config_flag(sp)
    sp.add_argument("--preset", choices=sorted(PRESETS), default=None)
    sp.add_argument("--count", type=int, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", default=None)
    sp.add_argument("--n-agents-min", dest="n_agents_min", type=int, default=None)
    sp.add_argument("--n-agents-max", dest="n_agents_max", type=int, default=None)
    sp.add_argument("--t-total", dest="t_total", type=int, default=None)
    sp.add_argument("--t-obs", dest="t_obs", type=int, default=None)
    sp.add_argument("--dt", type=float, default=None)
    sp.add_argument("--speed-min", dest="speed_min", type=float, default=None)
    sp.add_argument("--speed-max", dest="speed_max", type=float, default=None)
    sp.add_argument("--map-style", dest="map_style", default=None)
    sp.add_argument("--noise-std", dest="noise_std", type=float, default=None)
    sp.add_argument("--behavior-mix", dest="behavior_mix", default=None,
                    help='JSON object, e.g. {"constant_velocity": 1.0}')

    sp = subs.add_parser("label-occlusion", help="ray-trace occlusion labels")
    _add_config_flag(sp)
    sp.add_argument("--data", default=None)
    sp.add_argument("--out", default=None)
    sp.add_argument("--resolution", type=float, default=None)
    sp.add_argument("--half-extent", dest="half_extent", type=float, default=None)
    sp.add_argument("--ego-mode", dest="ego_mode", choices=("scene", "select"),
                    default=None)
    sp.add_argument("--seed", type=int, default=None)

    sp = subs.add_parser("mask-preview", help="render a mask as SVG + JSON")
    _add_config_flag(sp)
    sp.add_argument("--data", default=None)
    sp.add_argument("--index", type=int, default=None)
    sp.add_argument("--task", choices=("predict", "conditional", "occlusion"),
                    default=None)
    sp.add_argument("--labels", default=None)
    sp.add_argument("--profile", choices=("pointwise", "patchwise", "timewise"),
                    default=None)
    sp.add_argument("--ratio", type=float, default=None)
    sp.add_argument("--patch-len-min", dest="patch_len_min", type=int, default=None)
    sp.add_argument("--patch-len-max", dest="patch_len_max", type=int, default=None)
    sp.add_argument("--mask-seed", dest="mask_seed", type=int, default=None)
    sp.add_argument("--out", default=None)

    sp = subs.add_parser("pretrain", help="masked-reconstruction pretraining")
    _add_config_flag(sp)
    sp.add_argument("--data", default=None)
    sp.add_argument("--profile", choices=("pointwise", "patchwise", "timewise"),
                    default=None)
    sp.add_argument("--ratio", type=float, default=None)
    sp.add_argument("--patch-len-min", dest="patch_len_min", type=int, default=None)
    sp.add_argument("--patch-len-max", dest="patch_len_max", type=int, default=None)
    sp.add_argument("--mask-seed", dest="mask_seed", type=int, default=None)
    _model_flags(sp)
    _train_flags(sp)
    sp.add_argument("--out", default=None)
    sp.add_argument("--log", default=None)

    sp = subs.add_parser("finetune", help="task finetuning (or from scratch)")
    _add_config_flag(sp)
    sp.add_argument("--data", default=None)
    sp.add_argument("--task", choices=("predict", "conditional", "occlusion"),
                    default=None)
    sp.add_argument("--labels", default=None)
    sp.add_argument("--start", default=None,
                    help="pretrained checkpoint; omit to train from scratch")
    sp.add_argument("--freeze-encoder", dest="freeze_encoder",
                    action="store_true", default=None)
    sp.add_argument("--supervise-occluded-history", dest="supervise_occluded_history",
                    action="store_true", default=None)
    _model_flags(sp)
    _train_flags(sp)
    sp.add_argument("--out", default=None)
    sp.add_argument("--log", default=None)

    sp = subs.add_parser("evaluate", help="metric report for a checkpoint")
    _add_config_flag(sp)
    sp.add_argument("--data", default=None)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--task", choices=("predict", "conditional", "occlusion"),
                    default=None)
    sp.add_argument("--subset", choices=("all", "occluded_only"), default=None)
    sp.add_argument("--labels", default=None)
    sp.add_argument("--ks", default=None, help="comma-separated k values")
    sp.add_argument("--threshold", type=float, default=None)
    sp.add_argument("--report", default=None)
    sp.add_argument("--per-agent", dest="per_agent", default=None)
    sp.add_argument("--dump-forecasts", dest="dump_forecasts", default=None)

    sp = subs.add_parser("ablate", help="ratio x profile ablation sweep")
    _add_config_flag(sp)
    sp.add_argument("--data", default=None)
    sp.add_argument("--eval-data", dest="eval_data", default=None)
    sp.add_argument("--ratios", default=None)
    sp.add_argument("--profiles", default=None)
    sp.add_argument("--patch-len-min", dest="patch_len_min", type=int, default=None)
    sp.add_argument("--patch-len-max", dest="patch_len_max", type=int, default=None)
    _model_flags(sp)
    sp.add_argument("--pretrain-steps", dest="pretrain_steps", type=int, default=None)
    sp.add_argument("--finetune-steps", dest="finetune_steps", type=int, default=None)
    sp.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    sp.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", default=None)

    sp = subs.add_parser("plot", help="render loss curves or trajectories")
    _add_config_flag(sp)
    sp.add_argument("--kind", choices=("loss_curve", "trajectories"), default=None)
    sp.add_argument("--inputs", default=None, help="comma-separated input files")
    sp.add_argument("--index", type=int, default=None)
    sp.add_argument("--out", default=None)

    return parser


_COMMANDS = {
    "synth-gen": (_SYNTH_DEFAULTS, _cmd_synth_gen),
    "label-occlusion": (_LABEL_DEFAULTS, _cmd_label_occlusion),
    "mask-preview": (_PREVIEW_DEFAULTS, _cmd_mask_preview),
    "pretrain": (_PRETRAIN_DEFAULTS, _cmd_pretrain),
    "finetune": (_FINETUNE_DEFAULTS, _cmd_finetune),
    "evaluate": (_EVAL_DEFAULTS, _cmd_evaluate),
    "ablate": (_ABLATE_DEFAULTS, _cmd_ablate),
    "plot": (_PLOT_DEFAULTS, _cmd_plot),
}


def run(argv) -> int:
    """Execute one subcommand; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help()
        return 1
    defaults, handler = _COMMANDS[args.command]
    try:
        flags = {k: v for k, v in vars(args).items()
                 if k in defaults}
        cfg = _resolve(defaults, args.config, flags)
        handler(cfg)
        return 0
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


def main() -> int:
    return run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
