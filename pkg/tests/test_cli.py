"""CLI: exit codes, artifacts, manifests, SVG element counts."""

import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from motionmask.cli import run
from motionmask.scene import load_scenarios

SVG_NS = "{http://www.w3.org/2000/svg}"


def svg_elements(path, tag, cls=None):
    root = ET.parse(path).getroot()
    found = []
    for el in root.iter(f"{SVG_NS}{tag}"):
        if cls is None or cls in el.get("class", "").split():
            found.append(el)
    return found


def test_help_exits_zero(capsys):
    assert run(["--help"]) == 0
    assert "synth-gen" in capsys.readouterr().out


def test_unknown_subcommand_exits_one():
    assert run(["teleport"]) == 1


def test_no_subcommand_exits_one():
    assert run([]) == 1


def test_missing_or_malformed_input_is_data_error(tmp_path):
    assert run(["pretrain", "--data", str(tmp_path / "nope.jsonl"),
                "--steps", "1"]) == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"scenario_id": "x"}\n')
    assert run(["pretrain", "--data", str(bad), "--steps", "1"]) == 2


def test_synth_gen_writes_dataset_and_manifest(tmp_path):
    out = tmp_path / "data.jsonl"
    assert run(["synth-gen", "--preset", "nuscenes-like", "--count", "3",
                "--seed", "5", "--out", str(out)]) == 0
    assert len(load_scenarios(out)) == 3
    manifest = json.loads((tmp_path / "data.jsonl.manifest.json").read_text())
    assert manifest["command"] == "synth-gen"
    assert manifest["seeds"] == [5]
    assert str(out) in manifest["artifacts"]
    import hashlib
    blob = json.dumps(manifest["config"], sort_keys=True, separators=(",", ":"))
    assert manifest["config_digest"] == hashlib.sha256(blob.encode()).hexdigest()


def test_synth_gen_rerun_from_manifest_is_byte_identical(tmp_path):
    out = tmp_path / "data.jsonl"
    assert run(["synth-gen", "--preset", "nuscenes-like", "--count", "2",
                "--seed", "1", "--out", str(out)]) == 0
    blob = out.read_bytes()
    manifest_path = tmp_path / "data.jsonl.manifest.json"
    out.unlink()
    assert run(["synth-gen", "--config", str(manifest_path)]) == 0
    assert out.read_bytes() == blob


def test_mask_preview_prediction_block(tmp_path):
    data = tmp_path / "d.jsonl"
    assert run(["synth-gen", "--preset", "nuscenes-like", "--count", "1",
                "--seed", "2", "--n-agents-min", "3", "--n-agents-max", "3",
                "--t-total", "10", "--t-obs", "4", "--out", str(data)]) == 0
    out = tmp_path / "mask.svg"
    assert run(["mask-preview", "--data", str(data), "--task", "predict",
                "--out", str(out)]) == 0
    hidden = svg_elements(out, "rect", "hidden")
    assert len(hidden) == 3 * 6  # right block of the 3 x 10 grid
    grid = json.loads((tmp_path / "mask.svg.json").read_text())
    assert sum(sum(row) for row in grid["hidden"]) == len(hidden)


def test_mask_preview_ratio_zero_has_no_shading(tmp_path):
    data = tmp_path / "d.jsonl"
    run(["synth-gen", "--preset", "nuscenes-like", "--count", "1",
         "--seed", "2", "--out", str(data)])
    out = tmp_path / "mask.svg"
    assert run(["mask-preview", "--data", str(data), "--profile", "pointwise",
                "--ratio", "0", "--out", str(out)]) == 0
    assert len(svg_elements(out, "rect", "hidden")) == 0


def test_mask_preview_svg_count_matches_grid(tmp_path):
    data = tmp_path / "d.jsonl"
    run(["synth-gen", "--preset", "nuscenes-like", "--count", "1",
         "--seed", "3", "--out", str(data)])
    out = tmp_path / "mask.svg"
    assert run(["mask-preview", "--data", str(data), "--profile", "patchwise",
                "--ratio", "0.5", "--patch-len-min", "2", "--patch-len-max", "4",
                "--mask-seed", "9", "--out", str(out)]) == 0
    grid = json.loads((tmp_path / "mask.svg.json").read_text())
    assert len(svg_elements(out, "rect", "hidden")) == sum(
        sum(row) for row in grid["hidden"])


def test_mask_preview_needs_exactly_one_mode(tmp_path):
    data = tmp_path / "d.jsonl"
    run(["synth-gen", "--preset", "nuscenes-like", "--count", "1",
         "--seed", "2", "--out", str(data)])
    assert run(["mask-preview", "--data", str(data), "--out",
                str(tmp_path / "x.svg")]) == 1
    assert run(["mask-preview", "--data", str(data), "--task", "predict",
                "--profile", "pointwise", "--out", str(tmp_path / "x.svg")]) == 1


def _tiny_pipeline(tmp_path, steps="3"):
    data = tmp_path / "train.jsonl"
    labels = tmp_path / "labels.jsonl"
    ckpt = tmp_path / "pre.json"
    ft = tmp_path / "ft.json"
    args = ["synth-gen", "--preset", "intersection", "--count", "3",
            "--seed", "4", "--n-agents-min", "4", "--n-agents-max", "5",
            "--t-total", "12", "--t-obs", "5", "--out", str(data)]
    assert run(args) == 0
    assert run(["label-occlusion", "--data", str(data), "--half-extent", "30",
                "--out", str(labels)]) == 0
    assert run(["pretrain", "--data", str(data), "--steps", steps,
                "--batch-size", "2", "--d-model", "8", "--n-heads", "2",
                "--n-blocks", "1", "--k-modes", "2",
                "--out", str(ckpt), "--log", str(tmp_path / "pre.csv")]) == 0
    assert run(["finetune", "--data", str(data), "--task", "occlusion",
                "--labels", str(labels), "--start", str(ckpt),
                "--steps", steps, "--batch-size", "2",
                "--out", str(ft), "--log", str(tmp_path / "ft.csv")]) == 0
    return data, labels, ckpt, ft


def test_full_pipeline_smoke(tmp_path):
    data, labels, ckpt, ft = _tiny_pipeline(tmp_path)
    report = tmp_path / "report.json"
    dumps = tmp_path / "dumps.jsonl"
    assert run(["evaluate", "--data", str(data), "--checkpoint", str(ft),
                "--task", "occlusion", "--labels", str(labels),
                "--ks", "1,2", "--report", str(report),
                "--per-agent", str(tmp_path / "agents.csv"),
                "--dump-forecasts", str(dumps)]) == 0
    obj = json.loads(report.read_text())
    assert set(obj["min_ade"]) == {"1", "2"}
    assert obj["n_evaluated"] > 0
    assert (tmp_path / "agents.csv").read_text().startswith("scenario_id,agent")
    # trajectories plot: K polylines per focal agent
    traj_svg = tmp_path / "traj.svg"
    assert run(["plot", "--kind", "trajectories", "--inputs", str(dumps),
                "--index", "0", "--out", str(traj_svg)]) == 0
    dump0 = json.loads(dumps.read_text().splitlines()[0])
    k = len(dump0["mode_probs"])
    expected = k * len(dump0["agents"])
    assert len(svg_elements(traj_svg, "polyline", "pred")) == expected
    assert len(svg_elements(traj_svg, "text", "legend")) >= 3


def test_evaluate_missing_labels_is_data_error(tmp_path):
    data, labels, ckpt, ft = _tiny_pipeline(tmp_path)
    assert run(["evaluate", "--data", str(data), "--checkpoint", str(ft),
                "--task", "occlusion", "--report",
                str(tmp_path / "r.json")]) == 2


def test_plot_loss_curves_two_logs(tmp_path):
    data, labels, ckpt, ft = _tiny_pipeline(tmp_path)
    out = tmp_path / "curves.svg"
    assert run(["plot", "--kind", "loss_curve", "--inputs",
                f"{tmp_path / 'pre.csv'},{tmp_path / 'ft.csv'}",
                "--out", str(out)]) == 0
    # one curve per log per panel (step + wall-time panels)
    assert len(svg_elements(out, "polyline", "curve")) == 4


def test_plot_empty_log_is_data_error(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("step,wall_ms,loss\n")
    assert run(["plot", "--kind", "loss_curve", "--inputs", str(empty),
                "--out", str(tmp_path / "c.svg")]) == 2


def test_labels_file_round_trips(tmp_path):
    from motionmask.occlusion import load_occlusion_labels
    data, labels, ckpt, ft = _tiny_pipeline(tmp_path)
    table = load_occlusion_labels(labels)
    scenarios = load_scenarios(data)
    assert set(table) == {s.scene.scenario_id for s in scenarios}
    for s in scenarios:
        got = table[s.scene.scenario_id]
        assert got.occluded.shape == (s.scene.n_agents, s.scene.t_total)
        assert not got.occluded[got.ego_index].any()


def test_checkpoint_rerun_reproducibility(tmp_path):
    data, labels, ckpt, ft = _tiny_pipeline(tmp_path)
    blob = ft.read_bytes()
    manifest = tmp_path / "ft.json.manifest.json"
    ft.unlink()
    assert run(["finetune", "--config", str(manifest)]) == 0
    assert ft.read_bytes() == blob
