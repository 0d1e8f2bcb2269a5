"""Command-line front end: ``locvalid {synth,train,gradcam,metrics,aggregate}``.

Every command writes a run manifest (command, flags, seed, version,
timestamp) next to its outputs. Data files are byte-identical across runs
with the same inputs and flags; only the manifest timestamp changes.

Exit codes: 0 success, 2 invalid input (the message names the file and
field), 1 internal error.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from locvalid import __version__
from locvalid.annotations import rasterize
from locvalid.exceptions import GraphError, LocvalidError, NumericError
from locvalid.io import SynthConfig, generate_synthetic, load_annotations, read_grid, write_dataset, write_grid
from locvalid.io.dataset import read_case, read_dataset
from locvalid.io.synth import LESION_CATEGORY
from locvalid.metrics import (
    KEY_METRICS,
    METRICS,
    aggregate_accuracy,
    classification_auc,
    feature_detection_rate,
    k_grid,
    key_slice,
    la,
    score_slice,
)
from locvalid.metrics.aggregate import FEATURE_CUTOFF
from locvalid.saliency import DEFAULT_THRESHOLD, gradcam_volume, threshold_mask
from locvalid.volume import PLANES

THREADS_ENV = "LOCVALID_THREADS"
SALIENCY_META = "saliency.json"
AUC_NOTE = "auc is computed per slice; each metric's key slice is chosen independently"


class UsageError(LocvalidError, ValueError):
    """Invalid flag combination or input file content."""


# helpers ---------------------------------------------------------------------------


def _int_list(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, tuple):
        return list(v)
    return v


def write_manifest(path: Path, args: argparse.Namespace, seed=None) -> None:
    flags = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k != "func"}
    doc = {
        "command": args.command,
        "flags": flags,
        "seed": seed,
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _dump_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")


def _thread_cap() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"environment {THREADS_ENV}: expected a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"environment {THREADS_ENV}: expected a positive integer, got {n}")
    return n


def _stem(path: Path) -> Path:
    return path.with_suffix("") if path.suffix in (".csv", ".json") else path


# synth -----------------------------------------------------------------------------


def cmd_synth(args) -> None:
    cfg = SynthConfig(
        seed=args.seed,
        n_cases=args.n,
        slices_per_plane=(args.slices, args.slices),
        height=args.height,
        width=args.width,
        radius_range=tuple(args.radius),
        lesion_delta=args.delta,
        noise_sigma=args.noise,
        positive_fraction=args.pos_frac,
    )
    out = Path(args.out)
    write_dataset(out, generate_synthetic(cfg))
    _dump_json(out / "synth_config.json", cfg.to_dict())
    write_manifest(out / "manifest.json", args, args.seed)
    print(f"wrote {cfg.n_cases} cases to {out}")


# train -----------------------------------------------------------------------------


def cmd_train(args) -> None:
    from sklearn.model_selection import train_test_split

    from locvalid.models import MultiViewAttentionClassifier, save_checkpoint

    single = args.strategy == "single"
    plane = args.plane or ("axial" if single else "all")
    if single and plane == "all":
        raise UsageError("flag --plane: strategy 'single' needs one of axial, coronal, sagittal")
    if not single and plane != "all":
        raise UsageError(f"flag --plane: strategy {args.strategy!r} uses all planes; pass --plane all")
    planes = (plane,) if single else PLANES
    records = read_dataset(args.data, planes)
    if not records:
        raise UsageError(f"{Path(args.data) / 'labels.csv'}: no cases listed")
    X = [r.volumes[plane] if single else r.volumes for r in records]
    y = np.array([r.label for r in records])
    eval_set, X_tr, y_tr = None, X, y
    if args.val_frac > 0:
        if not 0 < args.val_frac < 1:
            raise UsageError("flag --val-frac: must lie in [0, 1)")
        idx_tr, idx_va = train_test_split(
            np.arange(len(X)), test_size=args.val_frac, random_state=args.seed, stratify=y
        )
        X_tr, y_tr = [X[i] for i in idx_tr], y[idx_tr]
        eval_set = ([X[i] for i in idx_va], y[idx_va])
    clf = MultiViewAttentionClassifier(
        strategy=args.strategy,
        plane="axial" if plane == "all" else plane,
        channels=args.channels,
        strides=args.strides,
        feature_dim=args.feature_dim,
        attention=not args.no_attention,
        learning_rate=args.lr,
        epochs=args.epochs,
        augment=not args.no_augment,
        pos_weight=args.pos_weight,
        random_state=args.seed,
    )
    clf.fit(X_tr, y_tr, eval_set=eval_set)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, clf)
    log = {"epochs": clf.history_.epochs, "step_losses": clf.history_.step_losses}
    if eval_set is not None:
        log["val_auc"] = classification_auc(clf.predict_proba(eval_set[0])[:, 1], eval_set[1])
        log["val_cases"] = sorted(records[i].case_id for i in idx_va)
    _dump_json(out.with_name(out.name + ".log.json"), log)
    write_manifest(out.with_name(out.name + ".manifest.json"), args, args.seed)
    last = clf.history_.epochs[-1]
    print(f"trained {args.strategy} for {args.epochs} epochs; final loss {last['loss']:.4f}; wrote {out}")


# gradcam ---------------------------------------------------------------------------


def _gradcam_case(clf, case_dir: Path, plane: str, layer: int, out: Path) -> str:
    # single-plane and MPLR explanations only need the explained plane on disk
    single = clf.strategy in ("single", "mplr")
    rec = read_case(case_dir, (plane,) if single else PLANES)
    maps = gradcam_volume(clf, rec.volumes[plane] if single else rec.volumes, plane, layer)
    case_out = out / rec.case_id
    case_out.mkdir(parents=True, exist_ok=True)
    for old in case_out.glob("slice_*.sgrd"):
        old.unlink()
    for i, m in enumerate(maps):
        write_grid(case_out / f"slice_{i:03d}.sgrd", m)
    meta = {"case_id": rec.case_id, "plane": plane, "layer": layer, "n_slices": int(maps.shape[0]), "shape": list(maps.shape[1:])}
    _dump_json(case_out / SALIENCY_META, meta)
    return rec.case_id


def cmd_gradcam(args) -> None:
    from locvalid.models import load_checkpoint

    clf = load_checkpoint(args.model)
    plane = args.plane or clf.plane
    if clf.strategy == "single" and plane != clf.plane:
        raise UsageError(f"flag --plane: model was trained on {clf.plane}, not {plane}")
    out = Path(args.out)
    cases = sorted({Path(c) for c in args.case}, key=lambda p: p.name)
    workers = min(_thread_cap(), len(cases))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        done = list(pool.map(lambda c: _gradcam_case(clf, c, plane, args.layer, out), cases))
    write_manifest(out / "manifest.json", args, clf.random_state)
    print(f"wrote saliency for {len(done)} case(s) to {out}")


# metrics ---------------------------------------------------------------------------


def _read_saliency(sal_dir: Path):
    if not sal_dir.is_dir():
        raise UsageError(f"{sal_dir}: saliency directory not found")
    files = sorted(sal_dir.glob("slice_*.sgrd"))
    if not files:
        raise UsageError(f"{sal_dir}: no slice_*.sgrd files")
    maps = []
    for k, f in enumerate(files):
        if f.name != f"slice_{k:03d}.sgrd":
            raise UsageError(f"{f}: expected slice_{k:03d}.sgrd (slices must be contiguous from 0)")
        m = read_grid(f)
        if m.ndim != 2:
            raise UsageError(f"{f}: field dims: expected a 2-D map, got shape {m.shape}")
        if maps and m.shape != maps[0].shape:
            raise UsageError(f"{f}: field dims: shape {m.shape} differs from {maps[0].shape}")
        if not np.all(np.isfinite(m)) or m.min() < 0 or m.max() > 1:
            raise UsageError(f"{f}: field payload: importances must be finite and within [0, 1]")
        maps.append(m)
    meta_path = sal_dir / SALIENCY_META
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    return np.stack(maps), meta


def cmd_metrics(args) -> None:
    sal_dir, ann_path = Path(args.saliency), Path(args.annotations)
    maps, meta = _read_saliency(sal_dir)
    height, width = maps.shape[1:]
    ann = load_annotations(ann_path, (height, width))
    if "plane" in meta and meta["plane"] != ann.plane:
        raise UsageError(f"{ann_path}: field plane: {ann.plane!r} does not match saliency plane {meta['plane']!r}")
    slices = ann.annotated_slices(args.category)
    if not slices:
        raise UsageError(f"{ann_path}: field slices: no boxes with category {args.category!r}")
    for i in ann.slices:
        if i >= maps.shape[0]:
            raise UsageError(f"{ann_path}: field slices/index: slice {i} beyond the {maps.shape[0]} saliency maps")
    x = args.threshold
    scores = [score_slice(maps[i], rasterize(ann, i, height, width, args.category), x, i) for i in slices]
    by_index = {s.slice_index: s for s in scores}
    key = {}
    for m in KEY_METRICS:
        k = key_slice(scores, m)
        key[m] = {"slice": k, "value": by_index[k].get(m)}
    # per-feature LA at that feature's best slice (ties to the lowest index)
    features = []
    for cat in ann.categories():
        best = max(
            ((la(threshold_mask(maps[i], x), rasterize(ann, i, height, width, cat)), i) for i in ann.annotated_slices(cat)),
            key=lambda t: (t[0], -t[1]),
        )
        features.append({"feature": cat, "la": best[0], "slice": best[1]})
    out = _stem(Path(args.out))
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out.with_suffix(".csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", "slice", "metric", "value", "threshold"])
        for s in scores:
            for m in METRICS:
                w.writerow([ann.case_id, s.slice_index, m, repr(s.get(m)), repr(x)])
    report = {
        "case_id": ann.case_id,
        "plane": ann.plane,
        "category": args.category,
        "threshold": x,
        "note": AUC_NOTE,
        "slices": [s.to_dict() for s in scores],
        "key_slices": key,
        "features": features,
    }
    _dump_json(out.with_suffix(".json"), report)
    write_manifest(out.with_name(out.name + ".manifest.json"), args)
    print(f"{ann.case_id}: key-slice PLA {key['pla']['value']:.4f} (slice {key['pla']['slice']})")


# aggregate -------------------------------------------------------------------------


def cmd_aggregate(args) -> None:
    paths = sorted(p for p in glob.glob(args.reports, recursive=True) if p.endswith(".json") and not p.endswith(".manifest.json"))
    if not paths:
        raise UsageError(f"flag --reports: no report files match {args.reports!r}")
    values, feature_la = [], {}
    for p in paths:
        try:
            doc = json.loads(Path(p).read_text(encoding="utf-8"))
            values.append(float(doc["key_slices"][args.metric]["value"]))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{p}: invalid JSON at line {exc.lineno}") from None
        except (KeyError, TypeError):
            raise UsageError(f"{p}: field key_slices/{args.metric}/value missing") from None
        for f in doc.get("features", []):
            feature_la.setdefault(f["feature"], []).append(float(f["la"]))
    ks = k_grid(args.k_min, args.k_max, args.k_step)
    acc = aggregate_accuracy(values, ks)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "accuracy", "n_reports"])
        for k, a in zip(ks, acc):
            w.writerow([repr(float(k)), repr(float(a)), len(values)])
    feat_path = out.with_name(out.stem + ".features.csv")
    with open(feat_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "count_present", "detection_rate"])
        for name in sorted(feature_la):
            count, rate = feature_detection_rate(feature_la[name], args.feature_cutoff)
            w.writerow([name, count, repr(rate)])
    write_manifest(out.with_name(out.name + ".manifest.json"), args)
    print(f"aggregated {len(values)} report(s): accuracy {acc[0]:.3f} at k={ks[0]:.2f}")


# parser ----------------------------------------------------------------------------


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    # required flags have no meaningful default to show
    def _get_help_string(self, action):
        if action.required:
            return action.help
        return super()._get_help_string(action)


def build_parser() -> argparse.ArgumentParser:
    fmt = _HelpFormatter
    parser = argparse.ArgumentParser(prog="locvalid", description="Multi-view attention models and saliency localisation metrics.", formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic planted-lesion dataset", formatter_class=fmt)
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--n", type=int, default=200, help="number of cases")
    p.add_argument("--slices", type=int, default=16, help="slices per plane")
    p.add_argument("--height", type=int, default=64, help="slice height in pixels")
    p.add_argument("--width", type=int, default=64, help="slice width in pixels")
    p.add_argument("--radius", type=int, nargs=2, default=[5, 8], metavar=("MIN", "MAX"), help="lesion radius range in pixels")
    p.add_argument("--delta", type=float, default=1.5, help="lesion peak intensity above background")
    p.add_argument("--noise", type=float, default=0.5, help="background noise standard deviation")
    p.add_argument("--pos-frac", type=float, default=0.5, help="fraction of positive cases")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a classifier and write a checkpoint", formatter_class=fmt)
    p.add_argument("--strategy", choices=["single", "mpfusenet", "mp2", "mplr"], default="single", help="plane fusion strategy")
    p.add_argument("--plane", choices=[*PLANES, "all"], default=None, help="plane to train on; None means axial for single and all otherwise")
    p.add_argument("--data", required=True, help="dataset directory written by synth")
    p.add_argument("--epochs", type=int, default=10, help="passes over the training cases")
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate (1e-5 suits pretrained weights)")
    p.add_argument("--seed", type=int, default=0, help="seed for initialisation, shuffling, augmentation and the validation split")
    p.add_argument("--val-frac", type=float, default=0.0, help="stratified fraction held out for validation AUC")
    p.add_argument("--channels", type=_int_list, default=(8, 16, 32), help="comma-separated channels per conv stage")
    p.add_argument("--strides", type=_int_list, default=(2, 2, 2), help="comma-separated stride per conv stage")
    p.add_argument("--feature-dim", type=int, default=1000, help="width of the first fully connected layer")
    p.add_argument("--pos-weight", type=float, default=None, help="positive-class loss weight; None means #neg/#pos")
    p.add_argument("--no-attention", action="store_true", help="drop the spatial attention block")
    p.add_argument("--no-augment", action="store_true", help="disable flip/shift/rotation augmentation")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcam", help="write per-slice Grad-Cam saliency grids", formatter_class=fmt)
    p.add_argument("--model", required=True, help="checkpoint written by train")
    p.add_argument("--case", required=True, action="append", help="case directory; repeat for several cases")
    p.add_argument("--plane", choices=PLANES, default=None, help="plane to explain; None means the model's plane")
    p.add_argument("--layer", type=int, default=-1, help="backbone stage to explain (-1 is the last)")
    p.add_argument("--out", required=True, help="output directory; maps go to OUT/<case_id>/slice_XXX.sgrd")
    p.set_defaults(func=cmd_gradcam)

    p = sub.add_parser("metrics", help="score saliency maps against annotations", formatter_class=fmt)
    p.add_argument("--saliency", required=True, help="directory of slice_XXX.sgrd maps for one case")
    p.add_argument("--annotations", required=True, help=".ann.json file for the same case and plane")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD, help="pixel-importance threshold x")
    p.add_argument("--category", default=LESION_CATEGORY, help="annotation category to score")
    p.add_argument("--out", default="report", help="report path; writes <stem>.csv and <stem>.json")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("aggregate", help="accuracy-vs-k curve and feature table over reports", formatter_class=fmt)
    p.add_argument("--reports", required=True, help="glob of metrics JSON reports (** allowed)")
    p.add_argument("--metric", choices=KEY_METRICS, default="pla", help="key-slice metric aggregated over cases")
    p.add_argument("--k-min", type=float, default=0.5, help="smallest k")
    p.add_argument("--k-max", type=float, default=0.95, help="largest k")
    p.add_argument("--k-step", type=float, default=0.05, help="k increment")
    p.add_argument("--feature-cutoff", type=float, default=FEATURE_CUTOFF, help="LA a feature must exceed to count as detected")
    p.add_argument("--out", default="curve.csv", help="curve CSV; the feature table goes to <stem>.features.csv")
    p.set_defaults(func=cmd_aggregate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (NumericError, GraphError) as exc:
        print(f"locvalid: internal error: {exc}", file=sys.stderr)
        return 1
    except (LocvalidError, ValueError, OSError) as exc:
        print(f"locvalid: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - last resort
        print(f"locvalid: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
