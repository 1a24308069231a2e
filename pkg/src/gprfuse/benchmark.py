"""End-to-end synthetic benchmark: generic pre-training versus fine-tuning.

Per road: render and preprocess the scan, sample normal segments from its
object-free leading section, fuse library simulations into them, fine-tune
the generic network, then run detection with both networks.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace


from . import featnet
from .augment import build_corpus, sample_segments
from .config import PipelineConfig
from .detect import detect_scan
from .evaluate import EvalResult, evaluate
from .preprocess import PreprocessConfig, preprocess
from .scenes import RoadPlan, empty_library_scenes, library_scenes, road_scene
from .simulate import object_labels, render

log = logging.getLogger(__name__)

# library simulations are clean single-object scenes: no surface, no layers
SIM_PREPROCESS = PreprocessConfig(background_mode="none")


@dataclass(frozen=True)
class BenchmarkConfig:
    roads: int = 6
    kinds: tuple[str, ...] = ("pipe", "void", "water_pocket", "crack")
    library_size: int = 200
    # moderate-contrast anomalies; at full contrast every kind saturates both networks
    plan: RoadPlan = field(default_factory=lambda: RoadPlan(contrast_range=(0.3, 0.6)))
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    @property
    def seed(self) -> int:
        return self.pipeline.seed


def spawning_config(seed: int = 0) -> BenchmarkConfig:
    """One road holding three pipes and three voids, for class-spawning checks.

    Full contrast: the check is about separating types, not about faint targets.
    """
    return BenchmarkConfig(roads=1, kinds=("pipe", "void") * 3, plan=RoadPlan(),
                           pipeline=PipelineConfig(seed=seed))


@dataclass
class Library:
    pretrain_images: list
    pretrain_labels: list[int]
    fusion_sims: list


def build_library(cfg: BenchmarkConfig) -> Library:
    """Generic pre-training set (empty + noisy object scenes) and clean sims for fusion."""
    n = cfg.library_size
    rows = cfg.plan.rows
    scenes = library_scenes(n, cfg.seed, rows=rows, dt=cfg.plan.dt, dx=cfg.plan.dx)
    empties = empty_library_scenes(n, cfg.seed + 1, rows=rows, dt=cfg.plan.dt, dx=cfg.plan.dx)
    noisy = [preprocess(render(s, cfg.seed + i), SIM_PREPROCESS) for i, s in enumerate(scenes)]
    clean = [preprocess(render(replace(s, noise_sigma=0.0), cfg.seed + i), SIM_PREPROCESS)
             for i, s in enumerate(scenes)]
    empty = [preprocess(render(s, cfg.seed + n + i), SIM_PREPROCESS) for i, s in enumerate(empties)]
    return Library(empty + noisy, [0] * n + [1] * n, clean)


def pretrain(lib: Library, cfg: BenchmarkConfig) -> featnet.TrainResult:
    tc = cfg.pipeline.train
    net = featnet.new_convnet(cfg.seed, tc.input_size)
    return featnet.pretrain_generic(net, lib.pretrain_images, lib.pretrain_labels,
                                    replace(tc, seed=cfg.seed))


@dataclass
class RoadRun:
    scan_id: str
    labels: list[dict]
    finetune: featnet.TrainResult
    reports: dict[str, dict]  # network name -> detection report
    detect_seconds: dict[str, float]


def run_road(index: int, baseline, lib: Library, cfg: BenchmarkConfig,
             kinds: tuple[str, ...] | None = None) -> RoadRun:
    kinds = cfg.kinds if kinds is None else kinds
    scan_id = f"road_{index:02d}"
    scene = road_scene(index, list(kinds), cfg.seed, cfg.plan)
    pc = cfg.pipeline
    seed = cfg.seed * 1000 + index
    scan = preprocess(render(scene, seed), pc.preprocess)
    normals = sample_segments(scan, pc.slide.bootstrap_cols, pc.slide.window_width,
                              pc.augment.normal_segments, seed)
    corpus = build_corpus(normals, lib.fusion_sims, replace(pc.augment, seed=seed))
    tuned = featnet.train(baseline, corpus.images, corpus.labels, replace(pc.train, seed=seed))
    dc = pc.detect_config()
    reports, seconds = {}, {}
    for name, net in (("baseline", baseline), ("finetuned", tuned.net)):
        t0 = time.perf_counter()
        res = detect_scan(scan, dc, net, scan_id=scan_id, already_preprocessed=True)
        seconds[name] = time.perf_counter() - t0
        reports[name] = res.report
    return RoadRun(scan_id, object_labels(scene, scan_id), tuned, reports, seconds)


@dataclass
class BenchmarkResult:
    runs: list[RoadRun]
    baseline: EvalResult
    finetuned: EvalResult
    pretrain_seconds: float
    library_seconds: float


def run(cfg: BenchmarkConfig | None = None) -> BenchmarkResult:
    cfg = cfg or BenchmarkConfig()
    t0 = time.perf_counter()
    lib = build_library(cfg)
    t_lib = time.perf_counter() - t0
    base = pretrain(lib, cfg)
    log.info("pre-trained in %.1f s", base.seconds)
    runs = []
    for i in range(cfg.roads):
        runs.append(run_road(i, base.net, lib, cfg))
        log.info("road %d done", i)
    labels = [lab for r in runs for lab in r.labels]
    tol = cfg.pipeline.slide.window_width - cfg.pipeline.slide.step
    evals = {}
    for name in ("baseline", "finetuned"):
        timing = {"detect_seconds": sum(r.detect_seconds[name] for r in runs)}
        if name == "finetuned":
            timing["finetune_seconds"] = sum(r.finetune.seconds for r in runs)
        evals[name] = evaluate([r.reports[name] for r in runs], labels, tol, timing)
    return BenchmarkResult(runs, evals["baseline"], evals["finetuned"], base.seconds, t_lib)


def summarize(res: BenchmarkResult) -> dict:
    """JSON-ready digest: headline metrics of both networks plus timings."""
    out = {"pretrain_seconds": res.pretrain_seconds, "library_seconds": res.library_seconds,
           "objects": sum(len(r.labels) for r in res.runs)}
    for name in ("baseline", "finetuned"):
        ev: EvalResult = getattr(res, name)
        out[name] = {
            "precision": ev.precision, "recall": ev.recall,
            "micro_precision": ev.micro_precision, "micro_recall": ev.micro_recall,
            "classes": len(ev.classes),
            "class_precision_mean": ev.class_precision_mean,
            "class_recall_mean": ev.class_recall_mean,
            "class_scores": [asdict(c) for c in ev.classes],
            "scans": [asdict(s) for s in ev.scans],
            "timing": ev.timing,
        }
    out["recall_gain"] = res.finetuned.recall - res.baseline.recall
    return out
