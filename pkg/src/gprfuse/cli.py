"""Command-line entry points.

Every subcommand loads and validates the pipeline configuration before it
reads any input. Failures exit non-zero with a one-line JSON error on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import augment, featnet, oneclass
from .bscan import BScan, FormatError, read_scan, to_gray, window_starts, write_pgm, write_scan
from .config import ConfigError, PipelineConfig, load_config
from .detect import detect_scan, report_json
from .evaluate import evaluate, load_reports
from .fuse import fuse
from .preprocess import preprocess
from .simulate import corpus as render_corpus
from .simulate import load_scenes, read_labels, write_corpus

log = logging.getLogger("gprfuse")

EXIT_USAGE = 2
EXIT_FAILURE = 1


class CliError(Exception):
    def __init__(self, kind: str, message: str, **extra):
        super().__init__(message)
        self.kind = kind
        self.extra = extra


def _config(args) -> PipelineConfig:
    return load_config(args.config, args.set)


def _scan_files(paths) -> list[Path]:
    out = []
    for p in map(Path, paths):
        out.extend(sorted(p.glob("*.gsf")) if p.is_dir() else [p])
    if not out:
        raise CliError("invalid-argument", f"no .gsf files in {', '.join(map(str, paths))}")
    return out


def _sim_preprocess(cfg: PipelineConfig):
    # simulations have no ground surface to remove
    return replace(cfg.preprocess, background_mode="none")


# subcommands ---------------------------------------------------------------

def cmd_config(args) -> int:
    sys.stdout.write(_config(args).to_json())
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    scenes = load_scenes(args.scenes)
    c = render_corpus(scenes, cfg.seed if args.seed is None else args.seed, prefix=args.prefix)
    write_corpus(c, args.out)
    print(f"wrote {len(c)} scans and labels.jsonl to {args.out}")
    return 0


def cmd_fuse(args) -> int:
    cfg = _config(args)
    normal, sim = read_scan(args.normal), read_scan(args.simulated)
    fused = fuse(normal, sim, detail=cfg.augment.detail_mode)
    write_scan(fused, args.out)
    if args.pgm:
        write_pgm(to_gray(fused), args.pgm)
    return 0


def cmd_augment(args) -> int:
    cfg = _config(args)
    scan = preprocess(read_scan(args.normal), cfg.preprocess)
    sims = [preprocess(read_scan(p), _sim_preprocess(cfg)) for p in _scan_files(args.sims)]
    width = cfg.slide.window_width
    normals = augment.sample_segments(scan, cfg.slide.bootstrap_cols, width,
                                      cfg.augment.normal_segments, cfg.seed)
    corpus = augment.build_corpus(normals, sims, replace(cfg.augment, seed=cfg.seed))
    manifest = augment.write_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} images to {manifest}")
    return 0


def _read_training_set(path) -> augment.TrainingCorpus:
    return augment.read_corpus(path)


def cmd_train(args) -> int:
    cfg = _config(args)
    tc = replace(cfg.train, seed=cfg.seed)
    corpus = _read_training_set(args.corpus)
    net = featnet.load_checkpoint(args.init) if args.init else featnet.new_convnet(cfg.seed, tc.input_size)
    result = featnet.train(net, corpus.images, corpus.labels, tc)
    featnet.save_checkpoint(result.net, args.out)
    history = Path(args.history) if args.history else Path(args.out).with_suffix(".history.csv")
    history.write_text(featnet.history_csv(result.history))
    last = result.history[-1] if result.history else {"loss": float("nan"), "accuracy": float("nan")}
    print(json.dumps({"checkpoint": str(args.out), "images": len(corpus), "seconds": result.seconds,
                      "final_loss": last["loss"], "final_accuracy": last["accuracy"]}, sort_keys=True))
    return 0


def _write_features(path: Path, starts, classes, feats) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["col_start", "class_id"] + [f"f{i}" for i in range(feats.shape[1])])
        for s, c, f in zip(starts, classes, feats):
            w.writerow([s, c] + [repr(float(v)) for v in f])


def cmd_detect(args) -> int:
    cfg = _config(args)
    persist = cfg.persist_bank and not args.reset_bank
    scans = _scan_files(args.scan)
    net = featnet.load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bank = oneclass.load_bank(args.bank) if args.bank and persist else None
    dc = cfg.detect_config()
    timing = {}
    res = None
    for path in scans:
        scan_id = path.stem
        t0 = time.perf_counter()
        if not persist:
            # every scan starts from the same state; detection mutates the bank
            bank = oneclass.load_bank(args.bank) if args.bank else None
        res = detect_scan(read_scan(path), dc, net, bank=bank, scan_id=scan_id)
        timing[scan_id] = time.perf_counter() - t0
        (out / f"{scan_id}.report.json").write_text(report_json(res.report))
        if args.features:
            _write_features(out / f"{scan_id}.features.csv",
                            [d.window.col_start for d in res.decisions],
                            [d.class_id for d in res.decisions], res.features)
        bank = res.bank
        print(f"{scan_id}: {len(res.regions)} regions")
    oneclass.save_bank(res.bank, out / "bank")
    (out / "timing.json").write_text(json.dumps({"detect_seconds": timing}, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    reports = load_reports(args.reports)
    labels = []
    for p in args.labels:
        labels.extend(read_labels(p))
    if not labels:
        raise CliError("invalid-argument", "labels are empty")
    timing = {}
    for p in args.timing or []:
        for key, val in json.loads(Path(p).read_text()).items():
            timing[key] = sum(val.values()) if isinstance(val, dict) else val
    tol = cfg.slide.window_width - cfg.slide.step
    result = evaluate(reports, labels, tol, timing)
    text = json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def _read_features(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path) as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise CliError("invalid-argument", f"{path} holds no feature rows")
    body = np.array(rows[1:], dtype=np.float64)
    return body[:, 0].astype(int), body[:, 1].astype(int), body[:, 2:]


def overlay(scan: BScan, regions: list[dict]) -> np.ndarray:
    """Gray image with region columns darkened along a top and bottom band."""
    pix = to_gray(scan).pixels.copy()
    band = max(1, scan.rows // 32)
    for r in regions:
        a, b = max(0, r["col_start"]), min(scan.cols, r["col_end"])
        pix[:band, a:b] = 0
        pix[-band:, a:b] = 0
    return pix


def cmd_viz(args) -> int:
    _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.features:
        _, classes, feats = _read_features(args.features)
        p = oneclass.pca3(feats)
        with open(out / "pca3.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "z", "class"])
            for pt, c in zip(p.points, classes):
                w.writerow([repr(float(v)) for v in pt] + [int(c)])
        if p.padded:
            log.warning("feature rank < 3; padded with zero axes")
    if args.scan:
        scan = read_scan(args.scan)
        regions = json.loads(Path(args.report).read_text())["regions"] if args.report else []
        from .bscan import GrayImage

        write_pgm(GrayImage(overlay(scan, regions)), out / "overlay.pgm")
    return 0


def cmd_benchmark(args) -> int:
    from . import benchmark

    cfg = _config(args)
    bc = benchmark.BenchmarkConfig(pipeline=cfg, roads=args.roads)
    res = benchmark.run(bc)
    summary = benchmark.summarize(res)
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


# parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gprfuse", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON (defaults when omitted)")
    common.add_argument("--set", action="append", default=[], metavar="PATH=VALUE",
                        help="override a config leaf, e.g. --set oneclass.C=0.5")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("config", parents=[common], help="print the effective configuration")
    p.set_defaults(func=cmd_config)

    p = sub.add_parser("simulate", parents=[common], help="render scenes to GSF plus labels")
    p.add_argument("scenes", help="scene-spec JSON (one scene or a list)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--prefix", default="scan")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fuse", parents=[common], help="wavelet-fuse a normal and a simulated scan")
    p.add_argument("normal")
    p.add_argument("simulated")
    p.add_argument("--out", required=True)
    p.add_argument("--pgm", help="also write a grayscale preview")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("augment", parents=[common], help="build the fine-tuning corpus")
    p.add_argument("--normal", required=True, help="road scan whose leading section is normal")
    p.add_argument("--sims", nargs="+", required=True, help="simulated scans (files or directories)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", parents=[common], help="train or fine-tune the feature network")
    p.add_argument("--corpus", required=True, help="manifest.jsonl from augment")
    p.add_argument("--init", help="checkpoint to fine-tune (fresh network when omitted)")
    p.add_argument("--out", required=True, help="output checkpoint")
    p.add_argument("--history", help="per-epoch CSV (default: next to the checkpoint)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", parents=[common], help="sliding-window detection")
    p.add_argument("--scan", nargs="+", required=True, help="scans of one road, in order")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bank", help="start from a saved class bank instead of bootstrapping")
    p.add_argument("--reset-bank", action="store_true", help="bootstrap a fresh bank for every scan")
    p.add_argument("--features", action="store_true", help="also write per-window features CSV")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", parents=[common], help="score reports against labels")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--labels", nargs="+", required=True)
    p.add_argument("--timing", nargs="*", help="timing JSON files to fold into the result")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("viz", parents=[common], help="PCA point cloud and region overlay")
    p.add_argument("--features", help="features CSV from detect --features")
    p.add_argument("--scan", help="scan for the overlay image")
    p.add_argument("--report", help="detection report whose regions are drawn")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("benchmark", parents=[common], help="synthetic fine-tuned vs baseline benchmark")
    p.add_argument("--roads", type=int, default=6)
    p.add_argument("--out")
    p.set_defaults(func=cmd_benchmark)
    return ap


def _fail(kind: str, message: str, code: int, **extra) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_USAGE, field=exc.path)
    except CliError as exc:
        return _fail(exc.kind, str(exc), EXIT_USAGE, **exc.extra)
    except FormatError as exc:
        return _fail("format", str(exc), EXIT_FAILURE, offset=exc.offset)
    except FileNotFoundError as exc:
        return _fail("file", f"{exc.filename}: not found", EXIT_FAILURE)
    except OSError as exc:
        return _fail("file", str(exc), EXIT_FAILURE)
    except ValueError as exc:
        return _fail("invalid-argument", str(exc), EXIT_FAILURE)


if __name__ == "__main__":
    sys.exit(main())
