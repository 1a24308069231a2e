"""Augmentation of normal segments and fused synthetic-anomaly images.

Nothing here flips, rotates or stretches the time axis: row count and row
order of every output equal those of its normal base.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .bscan import BScan, write_scan
from .fuse import fuse, resize_bilinear

log = logging.getLogger(__name__)

CLASS_NORMAL = "normal"
CLASS_ANOMALY = "synthetic_anomaly"


@dataclass(frozen=True)
class AugmentConfig:
    noise_sigma_frac: float = 0.05
    mix_lambda_range: tuple[float, float] = (0.3, 0.7)
    scale_range: tuple[float, float] = (0.6, 1.4)
    placement: str = "random"  # or "center"
    target_count: int = 800
    normal_segments: int = 300  # bases cut from the leading normal section
    hflip: bool = True
    detail_mode: str = "abs_max"
    canvas: str = "normal"  # "zero": embed the object on zeros; "normal": on the normal segment
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.mix_lambda_range
        if not (0 < lo <= hi <= 1):
            raise ValueError(f"mix_lambda_range must lie in (0, 1], got {self.mix_lambda_range}")
        s0, s1 = self.scale_range
        if not (0 < s0 <= s1):
            raise ValueError(f"scale_range must be positive, got {self.scale_range}")
        if self.placement not in ("random", "center"):
            raise ValueError(f"unknown placement {self.placement!r}")
        if self.target_count < 1:
            raise ValueError("target_count must be >= 1")
        if self.normal_segments < 1:
            raise ValueError("normal_segments must be >= 1")
        if self.noise_sigma_frac < 0:
            raise ValueError("noise_sigma_frac must be >= 0")
        if self.canvas not in ("zero", "normal"):
            raise ValueError(f"unknown canvas {self.canvas!r}")


def _data(img) -> np.ndarray:
    return img.data if isinstance(img, BScan) else np.asarray(img, dtype=np.float64)


def _as_list(images) -> list:
    if isinstance(images, BScan) or (isinstance(images, np.ndarray) and images.ndim == 2):
        return [images]
    return list(images)


def _like(template, data):
    return template.replace(data) if isinstance(template, BScan) else data


def noise_inject(img, sigma: float, seed: int = 0):
    """Add zero-mean Gaussian noise of std ``sigma``."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    x = _data(img)
    if sigma == 0:
        return _like(img, x.copy())
    noise = np.random.default_rng(seed).normal(0.0, sigma, x.shape)
    return _like(img, x + noise)


def image_mix(a, b, lam: float):
    """lam * a + (1 - lam) * b."""
    if not 0 <= lam <= 1:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    xa, xb = _data(a), _data(b)
    if xa.shape != xb.shape:
        raise ValueError(f"cannot mix shapes {xa.shape} and {xb.shape}")
    if lam == 1:
        return _like(a, xa.copy())
    if lam == 0:
        return _like(a, xb.copy())
    return _like(a, lam * xa + (1.0 - lam) * xb)


@dataclass
class Variant:
    image: BScan | np.ndarray
    scale: float
    offset: int
    flipped: bool = False
    normal_index: int = 0
    sim_index: int = 0

    def provenance(self) -> dict:
        return {"scale": self.scale, "offset": self.offset, "flipped": self.flipped,
                "normal_index": self.normal_index, "sim_index": self.sim_index}


class VariantList(list):
    """List of variants that also reports how many draws were skipped."""

    skipped: int = 0


def _object_columns(sim: np.ndarray, frac: float = 0.05) -> tuple[int, int] | None:
    energy = np.sqrt((sim ** 2).sum(axis=0))
    peak = energy.max()
    if peak <= 0:
        return None
    hot = np.flatnonzero(energy >= frac * peak)
    return int(hot[0]), int(hot[-1]) + 1


def place_simulated(sim, rows: int, cols: int, scale: float, offset: int,
                    flip: bool = False) -> np.ndarray | None:
    """Embed a horizontally rescaled copy of ``sim`` on a zero canvas.

    ``offset`` is the canvas column of the rescaled image's first column and
    may be negative. Returns None when nothing of the object lands in frame.
    """
    x = _data(sim)
    if x.shape[0] != rows:
        x = resize_bilinear(x, (rows, x.shape[1]))
    if flip:
        x = x[:, ::-1]
    width = max(1, int(round(x.shape[1] * scale)))
    if width != x.shape[1]:
        x = resize_bilinear(x, (rows, width))
    canvas = np.zeros((rows, cols))
    src0, dst0 = max(0, -offset), max(0, offset)
    n = min(width - src0, cols - dst0)
    if n <= 0:
        return None
    canvas[:, dst0 : dst0 + n] = x[:, src0 : src0 + n]
    if not np.any(canvas) and np.any(x):
        return None
    return canvas


def _offset_range(sim: np.ndarray, rows, cols, scale, flip):
    x = _data(sim)
    if flip:
        x = x[:, ::-1]
    span = _object_columns(x)
    width = max(1, int(round(x.shape[1] * scale)))
    if span is None:
        return 0, max(0, cols - width)
    a = int(np.floor(span[0] * scale))
    b = int(np.ceil(span[1] * scale))
    # object [a, b) must land inside [0, cols)
    return -a, cols - b


def scaled_fusion_variants(normals, simulateds, cfg: AugmentConfig,
                           count: int | None = None) -> VariantList:
    """Fuse rescaled, repositioned simulated images into normal segments.

    ``normals``/``simulateds`` may be single images or sequences; each draw
    picks one of each at random. Draws whose object cannot fit in the frame
    are skipped and counted in ``result.skipped``.
    """
    normals, simulateds = _as_list(normals), _as_list(simulateds)
    count = cfg.target_count if count is None else count
    rng = np.random.default_rng(cfg.seed)
    out = VariantList()
    attempts = 0
    while len(out) < count and attempts < 20 * count:
        attempts += 1
        ni = int(rng.integers(len(normals)))
        si = int(rng.integers(len(simulateds)))
        scale = float(rng.uniform(*cfg.scale_range))
        flip = bool(cfg.hflip and rng.random() < 0.5)
        base = normals[ni]
        rows, cols = _data(base).shape
        lo, hi = _offset_range(simulateds[si], rows, cols, scale, flip)
        if hi < lo:
            out.skipped += 1
            continue
        if cfg.placement == "center":
            offset = (lo + hi) // 2
        else:
            offset = int(rng.integers(lo, hi + 1))
        canvas = place_simulated(simulateds[si], rows, cols, scale, offset, flip)
        if canvas is None:
            out.skipped += 1
            continue
        if cfg.canvas == "normal":
            # object superposed on the normal itself: the approximation min then
            # cannot clip the normal background away from the object
            canvas = canvas + _data(base)
        fused = fuse(base, canvas, detail=cfg.detail_mode)
        out.append(Variant(fused, scale, offset, flip, ni, si))
    if out.skipped:
        log.warning("skipped %d fusion draws whose object fell out of frame", out.skipped)
    return out


def sample_segments(scan, section_cols: int, width: int, count: int, seed: int = 0) -> list:
    """``count`` windows of ``width`` columns at random starts inside the leading section."""
    x = _data(scan)
    section_cols = min(section_cols, x.shape[1])
    if section_cols < width:
        raise ValueError(f"normal section ({section_cols} cols) is narrower than a segment ({width})")
    starts = np.random.default_rng(seed).integers(0, section_cols - width + 1, count)
    return [x[:, s : s + width].copy() for s in starts]


def augment_normals(normals: Sequence, cfg: AugmentConfig, count: int | None = None) -> list:
    """Normal class: the bases themselves, then noise-injected and mixed copies.

    Mixing only pairs normal with normal.
    """
    count = cfg.target_count if count is None else count
    rng = np.random.default_rng([cfg.seed, 1])
    out = list(normals[:count])
    while len(out) < count:
        if rng.random() < 0.5 or len(normals) < 2:
            base = normals[int(rng.integers(len(normals)))]
            sigma = cfg.noise_sigma_frac * float(np.std(_data(base)))
            out.append(noise_inject(base, sigma, seed=int(rng.integers(2**31))))
        else:
            i, j = rng.choice(len(normals), size=2, replace=False)
            lam = float(rng.uniform(*cfg.mix_lambda_range))
            out.append(image_mix(normals[int(i)], normals[int(j)], lam))
    return out


@dataclass
class TrainingCorpus:
    images: list = field(default_factory=list)
    labels: list[int] = field(default_factory=list)  # 0 normal, 1 synthetic anomaly
    provenance: list[dict] = field(default_factory=list)

    def __len__(self):
        return len(self.images)


def build_corpus(normals: Sequence, simulateds: Sequence, cfg: AugmentConfig) -> TrainingCorpus:
    """``cfg.target_count`` images per class."""
    corpus = TrainingCorpus()
    for img in augment_normals(normals, cfg):
        corpus.images.append(img)
        corpus.labels.append(0)
        corpus.provenance.append({"class": CLASS_NORMAL})
    variants = scaled_fusion_variants(normals, simulateds, cfg)
    for v in variants:
        corpus.images.append(v.image)
        corpus.labels.append(1)
        corpus.provenance.append({"class": CLASS_ANOMALY, **v.provenance()})
    return corpus


def write_corpus(corpus: TrainingCorpus, out_dir: str | Path) -> Path:
    """One GSF per image plus ``manifest.jsonl``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w") as fh:
        for i, (img, prov) in enumerate(zip(corpus.images, corpus.provenance)):
            name = f"img_{i:05d}.gsf"
            scan = img if isinstance(img, BScan) else BScan(img)
            write_scan(scan, out_dir / name)
            fh.write(json.dumps({"path": name, **prov}, sort_keys=True) + "\n")
    return manifest


def read_corpus(manifest: str | Path) -> TrainingCorpus:
    from .bscan import read_scan

    manifest = Path(manifest)
    corpus = TrainingCorpus()
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        corpus.images.append(read_scan(manifest.parent / rec["path"]))
        corpus.labels.append(0 if rec["class"] == CLASS_NORMAL else 1)
        corpus.provenance.append(rec)
    return corpus
