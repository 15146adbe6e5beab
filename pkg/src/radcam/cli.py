"""Command-line entry point: gen, teach, train, infer, eval, plot, sweep.

Every command takes ``--config FILE``, ``--preset NAME`` and repeatable
``--set section.field=value`` overrides, and writes the merged
configuration next to its outputs. Exit codes: 0 ok, 2 configuration,
3 input/output, 4 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import statistics
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import learn, nnet, plotting, scenesim, teacher
from .config import PRESETS, SPLITS, load_config
from .encode import CHANNELS
from .errors import ConfigInvalid, DivergenceDetected, EmptyDataset, IoError, SchemaError, ShapeMismatch
from .infereval import (
    affinity, evaluate_frames, read_predictions, threshold_sweep, write_predictions,
)

log = logging.getLogger("radcam")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4
MANIFEST_SCHEMA = "radcam-manifest/1"


# -- helpers ------------------------------------------------------------------

def _dump_json(obj, path):
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_text(path, text):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from None


def _read_frames(path, allow_empty=False):
    try:
        frames = scenesim.read_dataset(path)
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from None
    if not frames and not allow_empty:
        raise EmptyDataset(f"{path}: dataset has no frames")
    return frames


def _read_preds(path):
    try:
        return read_predictions(path)
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from None


def _config(args, extra=()):
    overrides = list(args.set or []) + list(extra)
    return load_config(args.config, args.preset, overrides)


def _write_config(cfg, path):
    _write_text(path, cfg.dumps())


def _split_seed(seed, index):
    return int(np.random.SeedSequence([int(seed), index]).generate_state(1, dtype=np.uint64)[0] >> 1)


def _report_table(named_reports):
    lines = ["| Method | Precision | Recall | F1 |", "|---|---|---|---|"]
    for name, r in named_reports:
        lines.append(f"| {name} | {r.precision:.3f} | {r.recall:.3f} | {r.f1:.3f} |")
    return "\n".join(lines) + "\n"


def _net_meta(cfg):
    return {"channels": list(CHANNELS), "grid": [cfg.grid.grid_w, cfg.grid.grid_h],
            "shared_embedding": bool(cfg.train.shared_embedding), "assumed_height": cfg.train.assumed_height}


def _load_model(path, cfg):
    try:
        net, meta = nnet.load_checkpoint(path, {"channels": list(CHANNELS)})
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from None
    except (ValueError, KeyError) as exc:
        raise IoError(path, f"unreadable checkpoint ({exc})") from None
    return net, meta


def _predict_with_model(net, meta, frames, cfg, threshold):
    grid = replace(cfg.grid, grid_w=meta["grid"][0], grid_h=meta["grid"][1])
    return learn.predict(net, frames, threshold, grid, meta["assumed_height"], meta["shared_embedding"])


def _teacher_predictions(frames, cfg, seed):
    """Rule-based baseline: association plus the configured corruption, without purification."""
    return [teacher.teach_frame(f, cfg.teacher, seed, purified=False) for f in frames]


def _train_one(frames, cfg, checkpoint_dir=None, progress=None):
    net = nnet.AssociationNet(cfg.network)
    return learn.train(frames, net, cfg.loss, cfg.train, cfg.grid, checkpoint_dir, progress)


def _progress_printer(every):
    if not every:
        return None

    def show(it, row):
        if it % every == 0:
            print(f"iter {it:6d}  lr {row['lr']:.2e}  pull {row['pull']:.4f}  push {row['push']:.4f}  "
                  f"ord {row['ord']:.4f}  total {row['total']:.4f}", file=sys.stderr, flush=True)

    return show


def _parse_range(text):
    """``a:b:step`` (inclusive of b within rounding) or a comma-separated list."""
    try:
        if ":" in text:
            a, b, step = (float(v) for v in text.split(":"))
            if step <= 0 or b < a:
                raise ValueError
            n = int(round((b - a) / step))
            return [round(a + k * step, 10) for k in range(n + 1)]
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise ConfigInvalid(text, "expected start:stop:step or a comma-separated list") from None


# -- commands -------------------------------------------------------------------

def cmd_gen(args):
    extra = [{"splits": {name: n}} for name, n in
             (("train", args.train_frames), ("val", args.val_frames), ("test", args.test_frames)) if n is not None]
    if args.seed is not None:
        extra.append({"seed": args.seed})
    cfg = _config(args, extra)
    out = Path(args.out)
    files = []
    for index, name in enumerate(SPLITS):
        n = cfg.splits[name]
        seed = _split_seed(cfg.seed, index)
        frames = scenesim.generate_dataset(replace(cfg.sim, n_frames=n), seed)
        path = out / f"{name}.jsonl"
        try:
            out.mkdir(parents=True, exist_ok=True)
            scenesim.write_dataset(frames, path)
        except OSError as exc:
            raise IoError(path, exc.strerror or str(exc)) from None
        files.append({"split": name, "path": path.name, "frames": n, "seed": seed,
                      "pins": sum(len(f.pins) for f in frames), "boxes": sum(len(f.boxes) for f in frames),
                      "truth_pairs": sum(len(f.truth_pos) for f in frames),
                      "uncertain_pairs": sum(len(f.labels_uncertain) for f in frames)})
        print(f"{name}: {n} frames -> {path}")
    _dump_json({"schema": MANIFEST_SCHEMA, "seed": cfg.seed, "files": files}, out / "manifest.json")
    _write_config(cfg, out / "config.json")
    return EXIT_OK


def cmd_teach(args):
    extra = []
    if args.flip_prob is not None:
        extra.append({"teacher": {"corruption": {"enabled": args.flip_prob > 0, "flip_prob": args.flip_prob}}})
    if args.corrupt_depth is not None:
        extra.append({"teacher": {"corruption": {"depth_range": list(args.corrupt_depth)}}})
    if args.seed is not None:
        extra.append({"seed": args.seed})
    cfg = _config(args, extra)
    frames = _read_frames(args.dataset)
    labelled = teacher.teach_dataset(frames, cfg.teacher, cfg.seed, keep_uncertain=args.keep_uncertain)
    out = Path(args.out)
    try:
        scenesim.write_dataset(labelled, out)
    except OSError as exc:
        raise IoError(out, exc.strerror or str(exc)) from None
    label_pred = [teacher.AssociationSet(f.labels_pos) for f in labelled]
    label_rep = evaluate_frames(label_pred, frames, "truth")
    rule_rep = evaluate_frames(_teacher_predictions(frames, cfg, cfg.seed), frames, "truth")
    stem = out.with_suffix("")
    _dump_json({"training_labels": label_rep.to_dict(), "rule_based": rule_rep.to_dict(), "frames": len(frames)},
               Path(f"{stem}.metrics.json"))
    _write_config(cfg, Path(f"{stem}.config.json"))
    print(_report_table([("Rule-based", rule_rep), ("Training labels (purified)", label_rep)]), end="")
    return EXIT_OK


def cmd_train(args):
    extra = []
    tr = {}
    if args.iters is not None:
        tr["total_iters"] = args.iters
    if args.lr is not None:
        tr["lr"] = args.lr
    if args.batch is not None:
        tr["batch_frames"] = args.batch
    if args.checkpoint_every is not None:
        tr["checkpoint_every"] = args.checkpoint_every
    if args.shared_embedding:
        tr["shared_embedding"] = True
    if args.seed is not None:
        tr["seed"] = args.seed
        extra.append({"network": {"weight_init_seed": args.seed}})
    if tr:
        extra.append({"train": tr})
    loss = {}
    if args.w_ord is not None:
        loss["w_ord"] = args.w_ord
    if args.sample_ratio is not None:
        loss["sample_ratio"] = None if args.sample_ratio.lower() == "none" else float(args.sample_ratio)
    if loss:
        extra.append({"loss": loss})
    cfg = _config(args, extra)
    frames = _read_frames(args.dataset)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(out, exc.strerror or str(exc)) from None
    _write_config(cfg, out / "config.json")
    net, trainlog = _train_one(frames, cfg, out if cfg.train.checkpoint_every else None,
                               _progress_printer(args.progress))
    try:
        trainlog.write_csv(out / "train_log.csv", wallclock=args.wallclock)
        nnet.save_checkpoint(net, out / "model.npz", _net_meta(cfg))
    except OSError as exc:
        raise IoError(out, exc.strerror or str(exc)) from None
    last = trainlog.rows[-1] if trainlog.rows else None
    if last:
        print(f"trained {len(trainlog)} iterations; final pull {last['pull']:.4f} push {last['push']:.4f} "
              f"ord {last['ord']:.4f}")
    print(f"model -> {out / 'model.npz'}")
    return EXIT_OK


def cmd_infer(args):
    extra = []
    if args.assoc_threshold is not None:
        extra.append({"eval": {"threshold": args.assoc_threshold}})
    if args.seed is not None:
        extra.append({"seed": args.seed})
    cfg = _config(args, extra)
    frames = _read_frames(args.dataset)
    if args.teacher:
        preds = _teacher_predictions(frames, cfg, cfg.seed)
    else:
        if args.model is None:
            raise ConfigInvalid("model", "infer needs --model or --teacher")
        net, meta = _load_model(args.model, cfg)
        preds = _predict_with_model(net, meta, frames, cfg, cfg.eval.threshold)
    out = Path(args.out)
    try:
        write_predictions(preds, frames, out)
    except OSError as exc:
        raise IoError(out, exc.strerror or str(exc)) from None
    _write_config(cfg, Path(f"{out.with_suffix('')}.config.json"))
    print(f"{sum(len(p) for p in preds)} associations over {len(frames)} frames -> {out}")
    return EXIT_OK


def cmd_eval(args):
    extra = [{"eval": {"against": args.against}}] if args.against else []
    cfg = _config(args, extra)
    frames = _read_frames(args.dataset)
    names = args.name or []
    if names and len(names) != len(args.pred):
        raise ConfigInvalid("name", "give one --name per --pred")
    out = Path(args.out)
    reports = []
    for k, path in enumerate(args.pred):
        by_frame = _read_preds(path)
        preds = [by_frame.get(f.frame_id, teacher.AssociationSet()) for f in frames]
        name = names[k] if names else Path(path).stem
        rep = evaluate_frames(preds, frames, cfg.eval.against)
        reports.append((name, rep))
        if args.per_frame:
            try:
                out.mkdir(parents=True, exist_ok=True)
                rep.write_per_frame_csv(out / f"per_frame_{name}.csv")
            except OSError as exc:
                raise IoError(out, exc.strerror or str(exc)) from None
    table = _report_table(reports)
    _dump_json({name: rep.to_dict() for name, rep in reports} | {"against": cfg.eval.against}, out / "metrics.json")
    _write_text(out / "table.md", table)
    _write_config(cfg, out / "config.json")
    print(table, end="")
    return EXIT_OK


def _read_csv_rows(path):
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from None


def cmd_plot(args):
    if not (args.dataset or args.log or args.sweep):
        raise ConfigInvalid("plot", "give at least one of --dataset, --log, --sweep")
    out = Path(args.out)
    written = []
    if args.dataset:
        frames = _read_frames(args.dataset, allow_empty=True)
        preds = _read_preds(args.pred) if args.pred else None
        by_id = {f.frame_id: f for f in frames}
        ids = args.frame if args.frame else [f.frame_id for f in frames[:1]]
        for fid in ids:
            if fid not in by_id:
                raise ConfigInvalid("frame", f"frame {fid} is not in {args.dataset}")
            f = by_id[fid]
            pred = preds.get(fid, teacher.AssociationSet()) if preds is not None else None
            for kind, svg in (("scene", plotting.scene_svg(f, pred)), ("bev", plotting.bev_svg(f, pred))):
                path = out / f"{kind}_{fid}.svg"
                _write_text(path, svg)
                written.append(path)
    if args.log:
        rows = _read_csv_rows(args.log)
        path = out / "training_curve.svg"
        _write_text(path, plotting.training_curve_svg(rows))
        written.append(path)
    if args.sweep:
        rows = _read_csv_rows(args.sweep)
        key = next((k for k in ("threshold", "flip_prob") if rows and k in rows[0]), "threshold")
        path = out / f"{Path(args.sweep).stem}.svg"
        _write_text(path, plotting.sweep_svg(rows, key))
        written.append(path)
    for p in written:
        print(p)
    return EXIT_OK


def _write_rows(path, rows, columns):
    lines = [",".join(columns)]
    for r in rows:
        lines.append(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in columns))
    _write_text(path, "\n".join(lines) + "\n")


def cmd_sweep(args):
    extra = [{"seed": args.seed}] if args.seed is not None else []
    cfg = _config(args, extra)
    out = Path(args.out)
    if args.kind == "threshold":
        if not args.model:
            raise ConfigInvalid("model", "threshold sweep needs --model")
        frames = _read_frames(args.datasets[0])
        net, meta = _load_model(args.model, cfg)
        grid = replace(cfg.grid, grid_w=meta["grid"][0], grid_h=meta["grid"][1])
        embs = learn.embed_frames(net, frames, grid, meta["assumed_height"], meta["shared_embedding"])
        rows = threshold_sweep([affinity(e) for e in embs], frames, _parse_range(args.values or "0:12:0.5"),
                               cfg.eval.against)
        cols = ["threshold", "tp", "fp", "fn", "precision", "recall", "f1"]
        _write_rows(out / "threshold_sweep.csv", rows, cols)
        _write_text(out / "threshold_sweep.svg", plotting.sweep_svg(rows, "threshold"))
        best = max(rows, key=lambda r: (r["f1"], -r["threshold"]))
        print(f"best threshold {best['threshold']:g}: F1 {best['f1']:.3f}")
    elif args.kind == "flip":
        frames = _read_frames(args.datasets[0])
        raw = [teacher.associate_rule_based(f, cfg.teacher) for f in frames]
        rows = []
        for p in _parse_range(args.values or "0:0.3:0.025"):
            tcfg = replace(cfg.teacher, corruption=replace(cfg.teacher.corruption, enabled=p > 0, flip_prob=p))
            preds = [teacher.corrupt(a, tcfg, teacher.frame_rng(cfg.seed, f.frame_id), f)
                     for a, f in zip(raw, frames)]
            rows.append({"flip_prob": p, **evaluate_frames(preds, frames, "truth").to_dict()})
        cols = ["flip_prob", "tp", "fp", "fn", "precision", "recall", "f1"]
        _write_rows(out / "flip_sweep.csv", rows, cols)
        _write_text(out / "flip_sweep.svg", plotting.sweep_svg(rows, "flip_prob"))
        best = min(rows, key=lambda r: (abs(r["f1"] - args.target_f1), r["flip_prob"]))
        print(f"flip_prob {best['flip_prob']:g} gives teacher F1 {best['f1']:.3f} (target {args.target_f1:g})")
    else:  # ablation
        if len(args.datasets) != 2:
            raise ConfigInvalid("datasets", "ablation needs TRAIN and TEST datasets")
        train_frames = _read_frames(args.datasets[0])
        test_frames = _read_frames(args.datasets[1])
        variants = {"full": {}, "no_sampling": {"loss": {"sample_ratio": None}},
                    "no_ordinal": {"loss": {"w_ord": 0.0}}}
        rows = []
        for seed in args.seeds:
            for name, over in variants.items():
                vcfg = _config(args, extra + [over, {"train": {"seed": seed}, "network": {"weight_init_seed": seed}}])
                net, _ = _train_one(train_frames, vcfg, progress=_progress_printer(args.progress))
                preds = learn.predict(net, test_frames, vcfg.eval.threshold, vcfg.grid, vcfg.train.assumed_height,
                                      vcfg.train.shared_embedding)
                rep = evaluate_frames(preds, test_frames, vcfg.eval.against)
                rows.append({"variant": name, "seed": seed, **rep.to_dict()})
                print(f"seed {seed} {name}: {rep.summary()}", flush=True)
        cols = ["variant", "seed", "tp", "fp", "fn", "precision", "recall", "f1"]
        _write_rows(out / "ablation.csv", rows, cols)
        med = {v: statistics.median(r["f1"] for r in rows if r["variant"] == v) for v in variants}
        summary = {"median_f1": med, "delta_sampling": med["full"] - med["no_sampling"],
                   "delta_ordinal": med["full"] - med["no_ordinal"], "seeds": list(args.seeds)}
        _dump_json(summary, out / "ablation_summary.json")
        print(f"median F1 full {med['full']:.3f}, no sampling {med['no_sampling']:.3f}, "
              f"no ordinal {med['no_ordinal']:.3f}")
    _write_config(cfg, out / "config.json")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    common.add_argument("--config", help="JSON run configuration; missing fields take defaults")
    common.add_argument("--preset", default="desk", choices=sorted(PRESETS),
                        help="starting point before --config and --set are applied (default: desk)")
    common.add_argument("--set", action="append", metavar="SECTION.FIELD=VALUE",
                        help="override one config field; VALUE is parsed as JSON when possible")
    common.add_argument("--seed", type=int, help="random seed for this command")

    p = argparse.ArgumentParser(prog="radcam", description=__doc__.split("\n")[0], allow_abbrev=False)
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("gen", parents=[common], allow_abbrev=False, help="generate train/val/test datasets")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--train-frames", type=int)
    g.add_argument("--val-frames", type=int)
    g.add_argument("--test-frames", type=int)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("teach", parents=[common], allow_abbrev=False,
                       help="replace labels with purified (and optionally corrupted) teacher output")
    t.add_argument("dataset")
    t.add_argument("--out", required=True, help="labelled dataset path; metrics and config are written beside it")
    t.add_argument("--flip-prob", type=float, help="corruption probability (enables corruption when > 0)")
    t.add_argument("--corrupt-depth", type=float, nargs=2, metavar=("LO", "HI"), help="depth band for corruption")
    t.add_argument("--keep-uncertain", action="store_true", help="keep the dataset's uncertain pairs")
    t.set_defaults(func=cmd_teach)

    tr = sub.add_parser("train", parents=[common], allow_abbrev=False, help="train the association network")
    tr.add_argument("dataset")
    tr.add_argument("--out", required=True, help="output directory for model, log and config")
    tr.add_argument("--iters", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--batch", type=int)
    tr.add_argument("--w-ord", type=float)
    tr.add_argument("--sample-ratio", help="negatives per positive, or 'none' for every negative pair")
    tr.add_argument("--shared-embedding", action="store_true",
                    help="pins and boxes read all output channels instead of one half each")
    tr.add_argument("--checkpoint-every", type=int)
    tr.add_argument("--wallclock", action="store_true",
                    help="fill the seconds column of the training log (makes it run-dependent)")
    tr.add_argument("--progress", type=int, default=0, metavar="N", help="print losses every N iterations")
    tr.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", parents=[common], allow_abbrev=False, help="predict associations")
    i.add_argument("dataset")
    i.add_argument("--model", help="checkpoint written by train")
    i.add_argument("--teacher", action="store_true", help="use the rule-based teacher instead of a model")
    i.add_argument("--assoc-threshold", type=float, help="maximum embedding distance for an association")
    i.add_argument("--out", required=True, help="predictions file")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", parents=[common], allow_abbrev=False, help="precision / recall / F1")
    e.add_argument("dataset")
    e.add_argument("--pred", action="append", required=True, help="predictions file (repeat to compare)")
    e.add_argument("--name", action="append", help="table label for each --pred")
    e.add_argument("--against", choices=["truth", "labels"], help="score against truth_pos or labels_pos")
    e.add_argument("--per-frame", action="store_true", help="also write per-frame counts")
    e.add_argument("--out", required=True, help="output directory")
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", parents=[common], allow_abbrev=False, help="write SVG figures")
    pl.add_argument("--dataset", help="dataset for scene and bird's-eye views")
    pl.add_argument("--frame", type=int, action="append", help="frame id to draw (repeatable; default: first)")
    pl.add_argument("--pred", help="predictions to draw instead of the labels")
    pl.add_argument("--log", help="training log CSV")
    pl.add_argument("--sweep", help="sweep CSV")
    pl.add_argument("--out", required=True, help="output directory")
    pl.set_defaults(func=cmd_plot)

    s = sub.add_parser("sweep", parents=[common], allow_abbrev=False,
                       help="threshold, teacher-corruption or ablation sweeps")
    s.add_argument("kind", choices=["threshold", "flip", "ablation"])
    s.add_argument("datasets", nargs="+", help="test set (threshold, flip) or TRAIN TEST (ablation)")
    s.add_argument("--model", help="checkpoint for the threshold sweep")
    s.add_argument("--values", help="start:stop:step or a comma list of swept values")
    s.add_argument("--target-f1", type=float, default=0.80, help="teacher F1 to aim for in the flip sweep")
    s.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2], help="training seeds for ablation")
    s.add_argument("--progress", type=int, default=0, metavar="N")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigInvalid, ShapeMismatch) as exc:
        print(f"radcam: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IoError, SchemaError, EmptyDataset) as exc:
        print(f"radcam: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO
    except DivergenceDetected as exc:
        print(f"radcam: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
