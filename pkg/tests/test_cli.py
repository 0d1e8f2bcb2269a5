import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from locvalid.annotations import AnnotationSet, Box, rasterize
from locvalid.cli import build_parser, main
from locvalid.io import save_annotations, write_grid


def sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def data_files(root: Path) -> dict[str, str]:
    return {str(p.relative_to(root)): sha(p) for p in sorted(root.rglob("*")) if p.is_file() and "manifest" not in p.name}


def run_pipeline(root: Path) -> None:
    assert main(["synth", "--n", "8", "--slices", "4", "--height", "32", "--width", "32", "--radius", "3", "5", "--seed", "3", "--out", str(root / "data")]) == 0
    labels = dict(csv.reader(open(root / "data" / "labels.csv")))
    pos = sorted(k for k, v in labels.items() if v == "1")[0]
    assert main(["train", "--data", str(root / "data"), "--epochs", "1", "--channels", "4,8", "--strides", "2,2", "--feature-dim", "8", "--seed", "3", "--out", str(root / "model.ckpt")]) == 0
    assert main(["gradcam", "--model", str(root / "model.ckpt"), "--case", str(root / "data" / pos), "--out", str(root / "sal")]) == 0
    assert main(["metrics", "--saliency", str(root / "sal" / pos), "--annotations", str(root / "data" / pos / "axial.ann.json"), "--out", str(root / "rep" / f"{pos}.json")]) == 0
    assert main(["aggregate", "--reports", str(root / "rep" / "*.json"), "--out", str(root / "curve.csv")]) == 0


def test_pipeline_is_byte_deterministic(tmp_path):
    run_pipeline(tmp_path / "a")
    run_pipeline(tmp_path / "b")
    a, b = data_files(tmp_path / "a"), data_files(tmp_path / "b")
    assert a == b
    assert any(k.endswith(".ckpt") for k in a) and any(k.endswith(".sgrd") for k in a)
    manifest = json.loads((tmp_path / "a" / "model.ckpt.manifest.json").read_text())
    assert manifest["command"] == "train" and manifest["seed"] == 3
    assert {"flags", "version", "timestamp"} <= set(manifest)


def make_case(tmp_path: Path, case_id: str, value: float):
    """Saliency equal to a box mask scaled by ``value`` plus a faint halo."""
    ann = AnnotationSet(case_id, "axial")
    ann.add(1, Box(2, 3, 9, 8, "acl_tear"))
    ann.add(2, Box(0, 0, 3, 3, "effusion"))
    ann_path = tmp_path / f"{case_id}.ann.json"
    save_annotations(ann_path, ann)
    sal = tmp_path / "sal" / case_id
    sal.mkdir(parents=True)
    for i in range(3):
        write_grid(sal / f"slice_{i:03d}.sgrd", rasterize(ann, i, 16, 16, "acl_tear") * value)
    return sal, ann_path


def test_metrics_perfect_saliency(tmp_path):
    sal, ann = make_case(tmp_path, "c0", 1.0)
    assert main(["metrics", "--saliency", str(sal), "--annotations", str(ann), "--out", str(tmp_path / "r.csv")]) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["key_slices"]["pla"] == {"slice": 1, "value": 1.0}
    assert report["key_slices"]["auc"]["value"] == 1.0
    assert "per slice" in report["note"]
    feats = {f["feature"]: f for f in report["features"]}
    assert feats["acl_tear"]["la"] == 1.0 and feats["effusion"]["la"] == 0.0
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["case_id", "slice", "metric", "value", "threshold"]
    assert len(rows) == 1 + 6
    assert rows[1][:3] == ["c0", "1", "la"] and rows[1][4] == "0.6"


def test_aggregate_anchor(tmp_path):
    for k in range(12):
        value = 0.9 if k < 11 else 0.3
        doc = {"key_slices": {"pla": {"slice": 0, "value": value}}, "features": [{"feature": "effusion", "la": 0.7 if k % 2 else 0.5, "slice": 0}]}
        (tmp_path / f"r{k:02d}.json").write_text(json.dumps(doc))
    out = tmp_path / "out" / "curve.csv"
    assert main(["aggregate", "--reports", str(tmp_path / "*.json"), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 10
    for r in rows:
        k, acc = float(r["k"]), float(r["accuracy"])
        if k <= 0.85:
            assert round(acc, 3) == 0.917
        else:
            assert acc == 0.0
    feats = list(csv.DictReader(open(out.with_name("curve.features.csv"))))
    assert feats == [{"feature": "effusion", "count_present": "12", "detection_rate": "0.5"}]


def test_validation_errors_exit_2(tmp_path, capsys):
    sal, ann = make_case(tmp_path, "c1", 1.0)
    doc = json.loads(ann.read_text())
    doc["slices"][0]["boxes"][0]["x1"] = 40
    bad = tmp_path / "bad.ann.json"
    bad.write_text(json.dumps(doc))
    assert main(["metrics", "--saliency", str(sal), "--annotations", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "bad.ann.json" in err and "slices/0/boxes/0" in err
    assert main(["metrics", "--saliency", str(sal), "--annotations", str(ann), "--category", "meniscus", "--out", str(tmp_path / "r")]) == 2
    (sal / "slice_001.sgrd").write_bytes(b"garbage")
    assert main(["metrics", "--saliency", str(sal), "--annotations", str(ann)]) == 2
    assert "slice_001.sgrd" in capsys.readouterr().err
    assert main(["aggregate", "--reports", str(tmp_path / "none*.json")]) == 2
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "m.ckpt")]) == 2
    assert main(["train", "--strategy", "mp2", "--plane", "axial", "--data", str(tmp_path), "--out", str(tmp_path / "m.ckpt")]) == 2


def test_bad_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv("LOCVALID_THREADS", "zero")
    run_dir = tmp_path / "d"
    assert main(["synth", "--n", "4", "--slices", "2", "--height", "16", "--width", "16", "--radius", "2", "3", "--out", str(run_dir)]) == 0
    assert main(["train", "--data", str(run_dir), "--epochs", "1", "--channels", "2", "--strides", "2", "--feature-dim", "4", "--out", str(tmp_path / "m.ckpt")]) == 0
    assert main(["gradcam", "--model", str(tmp_path / "m.ckpt"), "--case", str(run_dir / "case_0000"), "--out", str(tmp_path / "s")]) == 2


def test_parallel_gradcam_matches_serial(tmp_path, monkeypatch):
    data = tmp_path / "d"
    main(["synth", "--n", "4", "--slices", "3", "--height", "16", "--width", "16", "--radius", "2", "3", "--out", str(data)])
    main(["train", "--data", str(data), "--epochs", "1", "--channels", "2,3", "--strides", "2,2", "--feature-dim", "4", "--out", str(tmp_path / "m.ckpt")])
    cases = [a for c in sorted(data.glob("case_*")) for a in ("--case", str(c))]
    for threads, name in (("1", "serial"), ("4", "parallel")):
        monkeypatch.setenv("LOCVALID_THREADS", threads)
        assert main(["gradcam", "--model", str(tmp_path / "m.ckpt"), *cases, "--out", str(tmp_path / name)]) == 0
    assert data_files(tmp_path / "serial") == data_files(tmp_path / "parallel")


def test_help_lists_defaults():
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices
    assert set(sub) == {"synth", "train", "gradcam", "metrics", "aggregate"}
    expected = {
        "metrics": ["--threshold THRESHOLD", "(default: 0.6)", "(default: acl_tear)"],
        "aggregate": ["(default: 0.5)", "(default: 0.95)", "(default: 0.05)"],
        "train": ["(default: single)", "(default: 0.001)"],
    }
    for name, snippets in expected.items():
        text = " ".join(sub[name].format_help().split())
        for s in snippets:
            assert s in text
    for name, p in sub.items():
        for action in p._actions:
            assert action.help, f"{name} {action.dest} has no help text"


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as info:
        main(["train", "--strategy", "nope"])
    assert info.value.code == 2
