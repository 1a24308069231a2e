"""Small convolutional feature extractor and its fine-tuning loop.

Architecture: four (3x3 conv, ReLU, 2x2 max-pool) stages with 8, 16, 32, 64
channels, global average pooling, an affine embedding to D = 128 values, and
a D x 2 head followed by softmax that only matters during training.

Training minimises binary cross-entropy on the softmax probability of the
anomaly class with plain mini-batch SGD (no momentum, no weight decay).
"""
from __future__ import annotations

import copy
import csv
import io
import json
import os
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .bscan import BScan
from .fuse import resize_bilinear

EMBED_DIM = 128
WIDTHS = (8, 16, 32, 64)
CKPT_MAGIC = b"FNET"
CKPT_VERSION = 1
STD_EPS = 1e-8
PROB_CLAMP = 1e-7


def _configure_threads() -> None:
    n = os.environ.get("RS_THREADS")
    if n:
        torch.set_num_threads(max(1, int(n)))


_configure_threads()


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 10
    seed: int = 0
    input_size: tuple[int, int] = (128, 300)

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if len(self.input_size) != 2 or min(self.input_size) < 16:
            raise ValueError(f"input_size must be (H, W) with both >= 16, got {self.input_size}")


class ConvNet(nn.Module):
    def __init__(self, embed_dim: int = EMBED_DIM, widths: Sequence[int] = WIDTHS,
                 input_size: tuple[int, int] = (128, 300)):
        super().__init__()
        self.embed_dim = embed_dim
        self.widths = tuple(widths)
        self.input_size = tuple(input_size)
        layers: list[nn.Module] = []
        c_in = 1
        for c_out in self.widths:
            layers += [nn.Conv2d(c_in, c_out, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2)]
            c_in = c_out
        self.features = nn.Sequential(*layers)
        self.embed = nn.Linear(c_in, embed_dim)
        self.head = nn.Linear(embed_dim, 2)

    def embedding(self, x: torch.Tensor) -> torch.Tensor:
        h = self.features(x).mean(dim=(2, 3))
        return self.embed(h)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Class logits."""
        return self.head(self.embedding(x))


def new_convnet(seed: int = 0, input_size: tuple[int, int] = (128, 300),
                embed_dim: int = EMBED_DIM) -> ConvNet:
    """Freshly initialised network (He-normal convs, zero biases), seeded."""
    net = ConvNet(embed_dim=embed_dim, input_size=input_size)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                m.weight.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=gen)
                m.bias.zero_()
            elif isinstance(m, nn.Linear):
                bound = (6.0 / (m.in_features + m.out_features)) ** 0.5
                m.weight.uniform_(-bound, bound, generator=gen)
                m.bias.zero_()
    return net


def prepare(images: Sequence, input_size: tuple[int, int]) -> torch.Tensor:
    """Resize to ``input_size`` and standardise each image; returns (N, 1, H, W)."""
    batch = np.empty((len(images), 1, *input_size), dtype=np.float32)
    for i, img in enumerate(images):
        x = img.data if isinstance(img, BScan) else np.asarray(img, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise ValueError(f"image {i} has non-finite values")
        if x.shape != tuple(input_size):
            x = resize_bilinear(x, input_size)
        x = (x - x.mean()) / (x.std() + STD_EPS)
        batch[i, 0] = x
    return torch.from_numpy(batch)


def softmax(logits: torch.Tensor) -> torch.Tensor:
    z = logits - logits.max(dim=-1, keepdim=True).values
    e = torch.exp(z)
    return e / e.sum(dim=-1, keepdim=True)


def bce_loss(probs, labels):
    """Mean binary cross-entropy of anomaly probabilities ``probs``.

    Accepts torch tensors (differentiable) or array-likes (returns float).
    ``probs`` are clamped to [1e-7, 1 - 1e-7].
    """
    is_torch = isinstance(probs, torch.Tensor)
    p = probs if is_torch else torch.as_tensor(np.asarray(probs, dtype=np.float64))
    y = labels if isinstance(labels, torch.Tensor) else torch.as_tensor(np.asarray(labels))
    y = y.to(p.dtype)
    if not bool(torch.all((y == 0) | (y == 1))):
        raise ValueError("labels must be 0 or 1")
    p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p)).mean()
    return loss if is_torch else float(loss)


def batch_loss(net: ConvNet, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    probs = softmax(net(x))[:, 1]
    return bce_loss(probs, y)


def forward(net: ConvNet, img) -> tuple[np.ndarray, np.ndarray]:
    """Embedding (D,) and class probabilities (2,) for one image."""
    x = prepare([img], net.input_size)
    net.eval()
    with torch.no_grad():
        emb = net.embedding(x)
        probs = softmax(net.head(emb))
    return emb[0].double().numpy(), probs[0].double().numpy()


def extract(net: ConvNet, windows: Sequence, batch_size: int = 64) -> np.ndarray:
    """Embeddings of ``windows`` as an (n, D) float64 array, order preserved."""
    out = np.empty((len(windows), net.embed_dim))
    net.eval()
    with torch.no_grad():
        for i in range(0, len(windows), batch_size):
            x = prepare(windows[i : i + batch_size], net.input_size)
            out[i : i + len(x)] = net.embedding(x).double().numpy()
    return out


@dataclass
class TrainResult:
    net: ConvNet
    history: list[dict] = field(default_factory=list)
    seconds: float = 0.0


def train(net: ConvNet, images: Sequence, labels: Sequence[int], cfg: TrainConfig) -> TrainResult:
    """Plain SGD on a copy of ``net``; the input network is left untouched."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) != len(labels):
        raise ValueError("images and labels differ in length")
    if set(np.unique(labels).tolist()) != {0, 1}:
        raise ValueError("training corpus must contain both classes (labels 0 and 1)")
    t0 = time.perf_counter()
    net = copy.deepcopy(net)
    if tuple(cfg.input_size) != net.input_size:
        net.input_size = tuple(cfg.input_size)
    x_all = prepare(images, net.input_size)
    y_all = torch.from_numpy(labels)
    rng = np.random.default_rng(cfg.seed)
    params = [p for p in net.parameters()]
    history = []
    net.train()
    for epoch in range(1, cfg.max_epochs + 1):
        order = torch.from_numpy(rng.permutation(len(labels)))
        total, correct = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            x, y = x_all[idx], y_all[idx]
            for p in params:
                p.grad = None
            probs = softmax(net(x))[:, 1]
            loss = bce_loss(probs, y)
            loss.backward()
            with torch.no_grad():
                for p in params:
                    p -= cfg.learning_rate * p.grad
            total += float(loss.detach()) * len(idx)
            correct += int(((probs.detach() > 0.5).long() == y).sum())
        history.append({"epoch": epoch, "loss": total / len(labels),
                        "accuracy": correct / len(labels)})
    net.eval()
    return TrainResult(net, history, time.perf_counter() - t0)


def pretrain_generic(net: ConvNet, images: Sequence, labels: Sequence[int],
                     cfg: TrainConfig) -> TrainResult:
    """Generic pre-training on simulated scans (no area-specific fusion)."""
    return train(net, images, labels, cfg)


def history_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "loss", "accuracy"])
    for row in history:
        writer.writerow([row["epoch"], repr(row["loss"]), repr(row["accuracy"])])
    return buf.getvalue()


# Checkpoints -------------------------------------------------------------
#
# b"FNET" | u32 version | u32 manifest_len | manifest JSON (utf-8)
# | little-endian f32 blobs in manifest order

def encode_checkpoint(net: ConvNet) -> bytes:
    state = net.state_dict()
    manifest = {
        "version": CKPT_VERSION,
        "embed_dim": net.embed_dim,
        "widths": list(net.widths),
        "input_size": list(net.input_size),
        "layers": [{"name": k, "shape": list(v.shape)} for k, v in state.items()],
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    blobs = b"".join(v.detach().cpu().numpy().astype("<f4").tobytes() for v in state.values())
    return CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(head)) + head + blobs


def decode_checkpoint(raw: bytes) -> ConvNet:
    if raw[:4] != CKPT_MAGIC:
        raise ValueError("not an FNET checkpoint (bad magic)")
    version, n = struct.unpack_from("<II", raw, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    manifest = json.loads(raw[12 : 12 + n].decode("utf-8"))
    net = ConvNet(manifest["embed_dim"], manifest["widths"], tuple(manifest["input_size"]))
    pos = 12 + n
    state = {}
    for layer in manifest["layers"]:
        count = int(np.prod(layer["shape"])) if layer["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(layer["shape"])
        state[layer["name"]] = torch.from_numpy(arr.astype(np.float32))
        pos += 4 * count
    if pos != len(raw):
        raise ValueError("checkpoint payload length does not match manifest")
    net.load_state_dict(state)
    net.eval()
    return net


def save_checkpoint(net: ConvNet, path: str | Path) -> None:
    Path(path).write_bytes(encode_checkpoint(net))


def load_checkpoint(path: str | Path) -> ConvNet:
    return decode_checkpoint(Path(path).read_bytes())
