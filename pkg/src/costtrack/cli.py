"""Command-line entry point: gen-synthetic, validate, train, track, eval, report."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .benchmark.dataset import DatasetError, load_dataset, validate_dataset, write_boxes
from .benchmark.metrics import aggregate, attribute_report, compute_metrics
from .benchmark.report import build_report, format_rows, read_report, summary_rows, write_curves, write_report
from .benchmark.synth import SynthConfig, generate_synthetic
from .config import ExperimentConfig, load_config
from .model import COST
from .nn import load_checkpoint, save_checkpoint
from .runtime import run_sequence, train

log = logging.getLogger("costtrack")


def save_model(path, model: COST, cfg: ExperimentConfig, extra: dict | None = None) -> None:
    meta = {"config": cfg.to_dict(), **(extra or {})}
    save_checkpoint(path, model, meta)


def load_model(path) -> tuple[COST, ExperimentConfig, dict]:
    arrays, meta = load_checkpoint(path)
    cfg = ExperimentConfig.from_dict(meta["config"])
    model = COST(cfg.model, seed=0)
    model.load_state_dict(arrays)
    model.eval()
    return model, cfg, meta


def _frame_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"frame size must look like 320x240, got {text!r}") from None


def cmd_gen(args) -> int:
    w, h = args.frame_size
    cfg = SynthConfig(seed=args.seed, regime=args.regime, n_frames=args.frames, frame_width=w, frame_height=h,
                      n_distractors=args.distractors, n_occluders=args.occluders, target_size=args.target_size)
    dirs = generate_synthetic(args.out, cfg, args.sequences)
    log.info("wrote %d sequences to %s", len(dirs), args.out)
    return 0


def cmd_validate(args) -> int:
    rep = validate_dataset(args.data)
    print(rep.summary())
    return 0 if rep.ok else 1


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig().validate()
    anns = load_dataset(args.data)
    seed = args.seed
    model = COST(cfg.model, seed=seed)
    t0 = time.perf_counter()
    history = train(model, anns, cfg.train, seed=seed, runtime=cfg.runtime,
                    callback=lambda s: log.info("epoch %d  loss %.4f  coa %.4f  reg %.4f  ce %.4f", s.epoch,
                                                s.total, s.coa, s.reg, s.ce))
    hist = [{"epoch": s.epoch, "steps": s.steps, "total": s.total, "coa": s.coa, "reg": s.reg, "ce": s.ce}
            for s in history]
    save_model(args.out, model, cfg, {"seed": seed, "history": hist})
    log.info("trained %d steps in %.1fs; checkpoint %s", sum(s.steps for s in history),
             time.perf_counter() - t0, args.out)
    return 0


def cmd_track(args) -> int:
    model, cfg, _ = load_model(args.ckpt)
    runtime = cfg.runtime
    if args.no_language:
        runtime.use_language = False
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for ann in load_dataset(args.data):
        preds = run_sequence(model, ann, config=runtime)
        write_boxes(out / f"{ann.seq_id}.txt", preds)
        log.info("tracked %s (%d frames)", ann.seq_id, len(ann))
    return 0


def read_predictions(path, n: int) -> np.ndarray:
    lines = [l for l in Path(path).read_text().splitlines() if l.strip()]
    if len(lines) != n:
        raise DatasetError(path, f"expected {n} predictions, found {len(lines)}")
    out = np.zeros((n, 4))
    for i, line in enumerate(lines):
        try:
            vals = [float(v) for v in line.replace("\t", ",").split(",") if v.strip()]
        except ValueError:
            raise DatasetError(path, f"unparseable prediction {line!r}", i + 1) from None
        if len(vals) != 4:
            raise DatasetError(path, "expected x,y,w,h", i + 1)
        out[i] = vals
    return out


def evaluate(data, pred_dir) -> dict:
    anns = load_dataset(data)
    reports = {}
    for ann in anns:
        preds = read_predictions(Path(pred_dir) / f"{ann.seq_id}.txt", len(ann))
        reports[ann.seq_id] = compute_metrics(preds, ann)
    slices = attribute_report(reports, {a.seq_id: a for a in anns})
    return build_report(aggregate(reports.values()), reports, slices)


def cmd_eval(args) -> int:
    report = evaluate(args.data, args.pred)
    write_report(args.out, report)
    if args.curves:
        write_curves(args.curves, report)
    o = report["overall"]
    log.info("AUC %.4f  P %.4f  P_norm %.4f  cAUC %.4f  mACC %.4f", o["auc"], o["precision"],
             o["norm_precision"], o["cauc"], o["macc"])
    return 0


def cmd_report(args) -> int:
    report = read_report(args.inp)
    text = format_rows(summary_rows(report, args.attributes), args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="costtrack", description=__doc__)
    p.add_argument("-q", "--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="render a seeded synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--regime", choices=["generic", "high-speed"], default="generic")
    g.add_argument("--sequences", type=int, required=True)
    g.add_argument("--frames", type=int, default=80)
    g.add_argument("--frame-size", type=_frame_size, default=(320, 240))
    g.add_argument("--distractors", type=int, default=1)
    g.add_argument("--occluders", type=int, default=1)
    g.add_argument("--target-size", type=float, default=14.0)
    g.set_defaults(func=cmd_gen)

    v = sub.add_parser("validate", help="check a dataset and print size/speed statistics")
    v.add_argument("--data", required=True)
    v.set_defaults(func=cmd_validate)

    t = sub.add_parser("train", help="train a tracker")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    k = sub.add_parser("track", help="run the tracker on every sequence")
    k.add_argument("--data", required=True)
    k.add_argument("--ckpt", required=True)
    k.add_argument("--out", required=True)
    k.add_argument("--no-language", action="store_true")
    k.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--data", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--curves")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="print a summary table from an eval report")
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--attributes", action="store_true")
    r.add_argument("--format", choices=["csv", "json"], default="csv")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except (DatasetError, ValueError, OSError, json.JSONDecodeError) as e:
        log.error("error: %s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
