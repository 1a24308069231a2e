"""Sliding-window anomaly detection and region merging over a B-scan."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import featnet
from .bscan import BScan, Window, extract, window_starts
from .oneclass import REJECT, ClassBank, cv_margin, median_gamma, svdd_train
from .preprocess import PreprocessConfig, preprocess

UNCLASSIFIED = REJECT


@dataclass(frozen=True)
class SlideConfig:
    window_width: int = 300
    step: int = 10
    bootstrap_cols: int = 3000
    min_bootstrap_windows: int = 30
    min_region_windows: int = 3  # regions built from fewer anomalous windows are dropped

    def __post_init__(self):
        if self.step < 1:
            raise ValueError("step must be >= 1")
        if self.min_region_windows < 1:
            raise ValueError("min_region_windows must be >= 1")
        if self.window_width < self.step:
            raise ValueError("window_width must be >= step")


@dataclass(frozen=True)
class OneClassConfig:
    C: float = 1.0
    gamma: float | None = None  # None: gamma_scale x median heuristic
    gamma_scale: float = 0.3
    margin_folds: int = 5  # blocked CV folds for the normal radius margin; 0 disables
    margin_guard: int = 30  # windows left out on each side of a held-out block
    spawn_threshold: int = 8
    cohesion_radius: float | None = None  # None: derived from the bootstrap features
    cohesion_scale: float = 1.5
    spawn_C: float = 1.0
    spawn_min_radius_scale: float | None = 1.0  # spawned-class radius floor, x cohesion radius
    spawn_min_excess: float = 0.6  # weaker rejects stay unclassified instead of seeding classes
    spawn_merge_scale: float | None = 3.0  # merge radius, x cohesion radius; None: always spawn
    # "direction": group and merge on unit directions from the normal centre
    spawn_space: str = "direction"
    direction_radius: float = 0.5  # chord cohesion radius in direction space
    direction_merge: float | None = 0.6  # chord merge radius in direction space; None: always spawn
    # class runs shorter than this inside an anomalous stretch take the stretch's majority class
    min_class_run: int = 5
    smooth_unclassified: bool = True  # also relabel short unclassified runs

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be positive")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.gamma_scale <= 0:
            raise ValueError("gamma_scale must be positive")
        if self.margin_folds == 1 or self.margin_folds < 0:
            raise ValueError("margin_folds must be 0 or >= 2")
        if self.margin_guard < 0:
            raise ValueError("margin_guard must be >= 0")
        if self.spawn_threshold < 2:
            raise ValueError("spawn_threshold must be >= 2")
        if self.spawn_min_excess < 0:
            raise ValueError("spawn_min_excess must be >= 0")
        if self.spawn_merge_scale is not None and self.spawn_merge_scale <= 0:
            raise ValueError("spawn_merge_scale must be positive")
        if self.spawn_space not in ("raw", "direction"):
            raise ValueError(f"spawn_space must be 'raw' or 'direction', got {self.spawn_space!r}")
        if self.min_class_run < 1:
            raise ValueError("min_class_run must be >= 1")
        if not 0 < self.direction_radius <= 2:
            raise ValueError("direction_radius must be in (0, 2]")
        if self.direction_merge is not None and not 0 < self.direction_merge <= 2:
            raise ValueError("direction_merge must be in (0, 2]")


@dataclass
class Decision:
    window: Window
    class_id: int
    excess: float  # distance^2 minus the normal class's acceptance threshold


@dataclass
class AnomalyRegion:
    col_start: int
    col_end: int
    meters_start: float
    meters_end: float
    class_id: int
    score: float
    window_count: int

    def to_dict(self) -> dict:
        return asdict(self)


def bootstrap_features(scan: BScan, cfg: SlideConfig, net) -> np.ndarray:
    if cfg.bootstrap_cols < cfg.window_width:
        raise ValueError(
            f"bootstrap section ({cfg.bootstrap_cols} cols) shorter than a window "
            f"({cfg.window_width} cols)"
        )
    if cfg.bootstrap_cols > scan.cols:
        raise ValueError(f"bootstrap section exceeds scan width {scan.cols}")
    starts = window_starts(cfg.bootstrap_cols, cfg.window_width, cfg.step)
    if len(starts) < cfg.min_bootstrap_windows:
        raise ValueError(
            f"bootstrap yields {len(starts)} windows, need >= {cfg.min_bootstrap_windows}"
        )
    windows = [scan.data[:, s : s + cfg.window_width] for s in starts]
    return featnet.extract(net, windows)


def bootstrap(scan: BScan, cfg: SlideConfig, net, oc: OneClassConfig | None = None) -> ClassBank:
    """Train the normal class (index 0) on windows of the leading section."""
    oc = oc or OneClassConfig()
    feats = bootstrap_features(scan, cfg, net)
    C = max(oc.C, 1.0 / len(feats))
    gamma = oc.gamma if oc.gamma is not None else oc.gamma_scale * median_gamma(feats)
    normal = svdd_train(feats, C=C, gamma=gamma)
    margin = cv_margin(feats, C, gamma, oc.margin_folds, oc.margin_guard) if oc.margin_folds else 0.0
    centre = feats.mean(axis=0)
    radius = oc.cohesion_radius
    if radius is None:
        # typical spread of the normal class
        radius = oc.cohesion_scale * float(np.quantile(np.linalg.norm(feats - centre, axis=1), 0.9))
    floor = None if oc.spawn_min_radius_scale is None else oc.spawn_min_radius_scale * radius
    if oc.spawn_space == "direction":
        origin, group_radius, merge = centre, oc.direction_radius, oc.direction_merge
    else:
        origin, group_radius = None, radius
        merge = None if oc.spawn_merge_scale is None else oc.spawn_merge_scale * radius
    return ClassBank(
        classifiers=[normal], spawn_threshold=oc.spawn_threshold, cohesion_radius=group_radius,
        spawn_C=oc.spawn_C, spawn_gamma=gamma, spawn_min_radius=floor, normal_margin=margin,
        spawn_min_excess=oc.spawn_min_excess, merge_radius=merge, origin=origin,
    )


def sweep(scan: BScan, cfg: SlideConfig, net, bank: ClassBank, scan_ref: str = "",
          features: np.ndarray | None = None) -> list[Decision]:
    """Classify every window in order, routing rejects through ``bank.absorb``.

    Windows absorbed into a newly spawned class are relabelled with its id.
    """
    if scan.cols < cfg.window_width:
        raise ValueError(f"scan ({scan.cols} cols) narrower than the window ({cfg.window_width})")
    starts = window_starts(scan.cols, cfg.window_width, cfg.step)
    if features is None:
        windows = [scan.data[:, s : s + cfg.window_width] for s in starts]
        features = featnet.extract(net, windows)
    normal = bank.classifiers[0]
    threshold = bank.radius2(0)
    decisions: list[Decision] = []
    for i, (start, x) in enumerate(zip(starts, features)):
        cls = bank.classify(x)
        excess = normal.distance2(x) - threshold
        decisions.append(Decision(Window(start, cfg.window_width, scan_ref), cls, excess))
        if cls == REJECT:
            event = bank.absorb(x, tag=(scan_ref, i))
            if event is not None:
                for ref, j in event.members:
                    if ref == scan_ref and j < len(decisions):
                        decisions[j].class_id = event.class_id
    return decisions


def smooth_classes(decisions: list[Decision], min_run: int,
                   unclassified: bool = False) -> list[Decision]:
    """Relabel short class runs inside an anomalous stretch with its majority class.

    A stretch is a maximal sequence of non-normal windows. Unclassified windows
    keep their label and do not break runs, unless ``unclassified`` is set, in
    which case they form runs of their own and short ones are relabelled too.
    Decisions are modified in place.
    """
    if min_run <= 1:
        return decisions
    stretch: list[Decision] = []
    for d in decisions + [None]:
        if d is not None and d.class_id != 0:
            stretch.append(d)
            continue
        labelled = [x for x in stretch if x.class_id > 0]
        if labelled:
            ids, counts = np.unique([x.class_id for x in labelled], return_counts=True)
            major = int(ids[np.argmax(counts)])
            runs: list[list[Decision]] = []
            for x in stretch if unclassified else labelled:
                if runs and runs[-1][0].class_id == x.class_id:
                    runs[-1].append(x)
                else:
                    runs.append([x])
            for run in runs:
                if len(run) < min_run:
                    for x in run:
                        x.class_id = major
        stretch = []
    return decisions


def merge_regions(decisions: list[Decision], dx: float = 0.02, origin_x: float = 0.0) -> list[AnomalyRegion]:
    """Union runs of same-class anomalous windows that overlap or abut.

    A run ends at a normal window, a class change or a gap. When a region of
    another class starts before the previous region's last column, the earlier
    region is cut at that start.
    """
    runs: list[list[Decision]] = []
    for d in sorted(decisions, key=lambda d: d.window.col_start):
        if d.class_id == 0:
            runs.append([])
            continue
        cur = runs[-1] if runs else []
        if cur and cur[-1].class_id == d.class_id and d.window.col_start <= max(
            w.window.col_end for w in cur
        ):
            cur.append(d)
        else:
            runs.append([d])
    runs = [r for r in runs if r]
    regions = []
    for run in runs:
        start = run[0].window.col_start
        end = max(d.window.col_end for d in run)
        score = float(np.mean([d.excess for d in run]))
        regions.append([start, end, run[0].class_id, score, len(run)])
    for prev, nxt in zip(regions, regions[1:]):
        if prev[2] != nxt[2] and nxt[0] < prev[1]:
            prev[1] = max(prev[0] + 1, nxt[0])
    return [
        AnomalyRegion(s, e, origin_x + s * dx, origin_x + e * dx, c, sc, n)
        for s, e, c, sc, n in regions
    ]


@dataclass
class DetectConfig:
    slide: SlideConfig = field(default_factory=SlideConfig)
    oneclass: OneClassConfig = field(default_factory=OneClassConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)


@dataclass
class DetectionResult:
    regions: list[AnomalyRegion]
    bank: ClassBank
    decisions: list[Decision]
    report: dict
    features: np.ndarray | None = None


def detect_scan(scan: BScan, cfg: DetectConfig, net, bank: ClassBank | None = None,
                scan_id: str = "scan", already_preprocessed: bool = False) -> DetectionResult:
    """Preprocess, bootstrap (when no bank is given), sweep and merge."""
    if not already_preprocessed:
        scan = preprocess(scan, cfg.preprocess)
    if bank is None:
        bank = bootstrap(scan, cfg.slide, net, cfg.oneclass)
    starts = window_starts(scan.cols, cfg.slide.window_width, cfg.slide.step)
    feats = featnet.extract(net, [scan.data[:, s : s + cfg.slide.window_width] for s in starts])
    decisions = sweep(scan, cfg.slide, net, bank, scan_ref=scan_id, features=feats)
    smooth_classes(decisions, cfg.oneclass.min_class_run, cfg.oneclass.smooth_unclassified)
    regions = [r for r in merge_regions(decisions, scan.dx, scan.origin_x)
               if r.window_count >= cfg.slide.min_region_windows]
    counts = {"windows": len(decisions)}
    for d in decisions:
        key = "normal" if d.class_id == 0 else ("unclassified" if d.class_id == REJECT else f"class_{d.class_id}")
        counts[key] = counts.get(key, 0) + 1
    report = {
        "scan_id": scan_id,
        "regions": [r.to_dict() for r in regions],
        "counts": dict(sorted(counts.items())),
        "bank_summary": bank.summary(),
    }
    return DetectionResult(regions, bank, decisions, report, feats)


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
