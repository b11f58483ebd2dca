"""Command-line entry point: ``traje <subcommand> ...``.

Exit codes: 0 success, 2 usage or input error, 3 numeric divergence.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__, data, metrics, report, rnn, tracker
from .traje import Strategy

log = logging.getLogger("trajetrack")

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED = 0, 2, 3


class InputError(Exception):
    pass


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    return vals


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    return vals


def write_manifest(path, command: str, args: argparse.Namespace, started: float, **extra) -> None:
    params = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
              if k not in ("func",)}
    doc = {"subcommand": command, "parameters": params, "seed": params.get("seed"),
           "tool_version": __version__, "duration_s": round(time.time() - started, 3), **extra}
    Path(path).write_text(json.dumps(doc, indent=2, default=str) + "\n", encoding="utf-8")


def _manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def _require_file(path, what):
    if not Path(path).is_file():
        raise InputError(f"{what} not found: {path}")


# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    started = time.time()
    root = Path(args.gt_dir)
    if not root.is_dir():
        raise InputError(f"gt directory not found: {root}")
    files = sorted(root.rglob("gt.txt"))
    if not files:
        raise InputError(f"no gt.txt under {root}")
    tracks = []
    for f in files:
        tracks.extend(data.for_evaluation(data.parse_ground_truth(f), classes=args.classes))
    train, val = data.generate_training_set(tracks, args.num_train, args.num_val, args.seq_len,
                                            args.noise_sigma, args.seed)
    data.write_corpus(args.out, train, val, {"seq_len": args.seq_len, "noise_sigma": args.noise_sigma,
                                             "seed": args.seed, "sources": [str(f) for f in files]})
    write_manifest(_manifest_path(args.out), "gen-data", args, started,
                   inputs=[str(f) for f in files], outputs=[str(args.out)])
    print(f"wrote {len(train)} training and {len(val)} validation sequences to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.time()
    _require_file(args.data, "corpus")
    train_set, val_set, _ = data.read_corpus(args.data)
    if not train_set:
        raise InputError("corpus has no training sequences")
    cfg = rnn.ModelConfig(hidden_dim=args.hidden, mixtures=args.mixtures)
    tc = rnn.TrainConfig(epochs=args.epochs, learning_rate=args.lr, decay_factor=args.decay,
                         decay_epochs=tuple(args.decay_epochs), seed=args.seed,
                         batch_size=args.batch_size, grad_clip_norm=args.clip)
    model = rnn.init_params(cfg, args.seed)
    best, history = rnn.train(model, train_set, val_set, tc)
    out = Path(args.out)
    rnn.save_model(best, out, rng_seed=args.seed, training_meta={
        "epochs": args.epochs, "best_val_nll": min(h["val_nll"] for h in history),
        "corpus": str(args.data)})
    hist_csv = out.with_suffix(".history.csv")
    hist_svg = out.with_suffix(".history.svg")
    report.write_history_csv(hist_csv, history)
    report.plot_history(history, hist_svg)
    write_manifest(_manifest_path(out), "train", args, started,
                   outputs=[str(out), str(hist_csv), str(hist_svg)])
    print(f"val NLL {history[0]['val_nll']:.4f} -> {min(h['val_nll'] for h in history):.4f}; "
          f"model written to {out}")
    return EXIT_OK


def tracker_config(strategy: str, beam: int, bias: float, patience: int, occ: bool,
                   min_conf: float, gate: float = 1.0) -> tracker.TrackerConfig:
    if strategy in ("bm", "gbs", "pbs"):
        motion, strat = tracker.Motion.TRAJE, Strategy(strategy)
    else:
        motion, strat = tracker.Motion(strategy), Strategy.PBS
    return tracker.TrackerConfig(motion=motion, strategy=strat, beam_width=beam, bias=bias,
                                 patience=patience, occ_reconstruct=occ,
                                 detection_min_confidence=min_conf, association_gate=gate)


def _load_model_for(strategy, path):
    if strategy not in ("bm", "gbs", "pbs"):
        return None
    if path is None:
        raise InputError(f"--strategy {strategy} needs --model")
    _require_file(path, "model")
    return rnn.load_model(path)


def cmd_track(args) -> int:
    started = time.time()
    if args.beam < 1:
        raise InputError("--beam must be >= 1")
    _require_file(args.det, "detections")
    model = _load_model_for(args.strategy, args.model)
    frames = data.parse_detections(args.det)
    frame_count = data.parse_seqinfo(args.seqinfo).frame_count if args.seqinfo else None
    cfg = tracker_config(args.strategy, args.beam, args.bias, args.patience, args.occ,
                         args.min_conf, args.gate)
    out = tracker.run_sequence(frames, cfg, model, seed=args.seed, frame_count=frame_count)
    data.emit_results(out.tracks, args.out)
    write_manifest(_manifest_path(args.out), "track", args, started, outputs=[str(args.out)],
                   tracks=len(out.tracks))
    print(f"{len(out.tracks)} tracks written to {args.out}")
    return EXIT_OK


def _sequence_pairs(gt: Path, res: Path) -> list[tuple[str, Path, Path]]:
    if gt.is_file():
        _require_file(res, "result file")
        name = gt.parent.parent.name if gt.parent.name == "gt" else gt.parent.name
        return [(name, gt, res)]
    if not gt.is_dir():
        raise InputError(f"ground truth not found: {gt}")
    if not res.is_dir():
        raise InputError(f"--res must be a directory when --gt is: {res}")
    pairs = []
    for seq in sorted(p for p in gt.iterdir() if p.is_dir()):
        g = seq / "gt" / "gt.txt"
        if not g.is_file():
            g = seq / "gt.txt"
        if not g.is_file():
            continue
        r = res / f"{seq.name}.txt"
        _require_file(r, f"result for sequence {seq.name}")
        pairs.append((seq.name, g, r))
    if not pairs:
        raise InputError(f"no sequences with gt.txt under {gt}")
    return pairs


def cmd_eval(args) -> int:
    started = time.time()
    named = []
    for name, g, r in _sequence_pairs(Path(args.gt), Path(args.res)):
        gt = data.for_evaluation(data.parse_ground_truth(g), classes=args.classes)
        hyp = data.parse_results(r)
        named.append((name, metrics.evaluate_clear(gt, hyp, args.iou)))
    metrics.write_report(args.out, named)
    write_manifest(_manifest_path(args.out), "eval", args, started, outputs=[str(args.out)])
    for name, rep in named + [("OVERALL", metrics.aggregate(r for _, r in named))]:
        print(f"{name}: MOTA {rep.mota:.4f} IDF1 {rep.idf1:.4f} IDSW {rep.idsw} "
              f"FP {rep.fp} FN {rep.fn}")
    return EXIT_OK


def cmd_sim(args) -> int:
    started = time.time()
    scenario = data.make_scenario(args.scenario, args.noise)
    gt, frames = data.generate_scenario(scenario, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data.write_ground_truth(gt, out / "gt.txt")
    data.write_detections(frames, out / "det.txt")
    w, h = scenario.image_size
    (out / "seqinfo.ini").write_text(
        f"[Sequence]\nname={scenario.name}\nimDir=img1\nframeRate=30\nseqLength={scenario.frame_count}\n"
        f"imWidth={w}\nimHeight={h}\nimExt=.jpg\n", encoding="utf-8")
    write_manifest(out / "manifest.json", "sim", args, started,
                   outputs=[str(out / n) for n in ("gt.txt", "det.txt", "seqinfo.ini")])
    print(f"scenario {scenario.name} written to {out}")
    return EXIT_OK


def run_sweep(frames, gt, model, strategies, biases, beams, runs, seed=0, occ=True,
              patience=100, min_conf=0.4, threads=1) -> list[dict]:
    """Track and evaluate every grid cell; rows come back in grid order."""
    grid = list(itertools.product(strategies, biases, beams, range(runs)))

    def cell(key):
        strategy, bias, beam, run = key
        cfg = tracker_config(strategy, beam, bias, patience, occ, min_conf)
        out = tracker.run_sequence(frames, cfg, model, seed=seed + run)
        rep = metrics.evaluate_clear(gt, out.tracks)
        return {"strategy": strategy, "bias": bias, "beam": beam, "run": run,
                "MOTA": rep.mota, "IDF1": rep.idf1, "IDSW": rep.idsw}

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(cell, grid))
    return [cell(g) for g in grid]


def cmd_sweep(args) -> int:
    started = time.time()
    if not args.bias_list or not args.beam_list or not args.strategies:
        raise InputError("bias, beam and strategy lists must be non-empty")
    if args.runs < 1 or min(args.beam_list) < 1 or min(args.bias_list) < 0:
        raise InputError("runs and beam widths must be >= 1 and biases >= 0")
    _require_file(args.det, "detections")
    gt_path = Path(args.gt) if args.gt else Path(args.det).with_name("gt.txt")
    _require_file(gt_path, "ground truth")
    model = _load_model_for("pbs", args.model)
    frames = data.parse_detections(args.det)
    gt = data.for_evaluation(data.parse_ground_truth(gt_path), classes=None)
    threads = max(1, min(int(os.environ.get("TRAJE_THREADS", "1") or 1), os.cpu_count() or 1))
    rows = run_sweep(frames, gt, model, args.strategies, args.bias_list, args.beam_list, args.runs,
                     seed=args.seed, occ=not args.no_occ, patience=args.patience,
                     min_conf=args.min_conf, threads=threads)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_sweep_csv(out / "sweep.csv", rows)
    summary = report.summarize(rows)
    report.write_summary_csv(out / "sweep_summary.csv", summary)
    figures = []
    for m in report.SWEEP_METRICS:
        fig = out / f"sweep_{m}.svg"
        report.plot_sweep(summary, m, fig, title=f"{m} over bias and beam width")
        figures.append(str(fig))
    write_manifest(out / "manifest.json", "sweep", args, started,
                   outputs=[str(out / "sweep.csv"), str(out / "sweep_summary.csv"), *figures],
                   threads=threads)
    print(f"{len(rows)} runs written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="traje", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="sample a training corpus from MOT ground truth")
    g.add_argument("--gt-dir", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--num-train", type=int, default=20000)
    g.add_argument("--num-val", type=int, default=2000)
    g.add_argument("--seq-len", type=int, default=100)
    g.add_argument("--noise-sigma", type=float, default=2.0)
    g.add_argument("--classes", type=_int_list, default=[1])
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the trajectory estimator")
    t.add_argument("--data", required=True)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--decay", type=float, default=0.1)
    t.add_argument("--decay-epochs", type=_int_list, default=[15, 40, 80])
    t.add_argument("--hidden", type=int, default=64)
    t.add_argument("--mixtures", type=int, default=5)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--clip", type=float, default=5.0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    k = sub.add_parser("track", help="run the tracker over a detection file")
    k.add_argument("--det", required=True)
    k.add_argument("--model")
    k.add_argument("--strategy", choices=("bm", "gbs", "pbs", "kalman", "cv", "none"), default="pbs")
    k.add_argument("--beam", type=int, default=5)
    k.add_argument("--bias", type=float, default=1.0)
    k.add_argument("--patience", type=int, default=100)
    k.add_argument("--occ", action="store_true", help="reconstruct occluded stretches")
    k.add_argument("--min-conf", type=float, default=0.4)
    k.add_argument("--gate", type=float, default=1.0)
    k.add_argument("--seqinfo")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="CLEAR-MOT / IDF1 evaluation")
    e.add_argument("--gt", required=True, help="gt.txt or a directory of sequences")
    e.add_argument("--res", required=True, help="result file or directory of <seq>.txt")
    e.add_argument("--iou", type=float, default=0.5)
    e.add_argument("--classes", type=_int_list, default=[1])
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sim", help="generate a synthetic scenario")
    s.add_argument("--scenario", choices=data.SCENARIOS, required=True)
    s.add_argument("--noise", type=float, default=2.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_sim)

    w = sub.add_parser("sweep", help="bias / beam-width grid over track + eval")
    w.add_argument("--det", required=True)
    w.add_argument("--gt", help="defaults to gt.txt next to --det")
    w.add_argument("--model", required=True)
    w.add_argument("--strategies", type=lambda v: [x for x in v.split(",") if x], default=["gbs", "pbs"])
    w.add_argument("--bias-list", type=_float_list, default=[0, 0.1, 0.5, 1, 5, 10])
    w.add_argument("--beam-list", type=_int_list, default=[1, 5, 10])
    w.add_argument("--runs", type=int, default=5)
    w.add_argument("--patience", type=int, default=100)
    w.add_argument("--min-conf", type=float, default=0.4)
    w.add_argument("--no-occ", action="store_true")
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--out-dir", required=True)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "strategies", None):
        bad = [s for s in args.strategies if s not in ("bm", "gbs", "pbs")]
        if bad:
            parser.error(f"unknown strategies: {', '.join(bad)}")
    try:
        return args.func(args)
    except rnn.TrainingDivergence as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InputError, data.DataFormatError, rnn.ModelLoadError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
