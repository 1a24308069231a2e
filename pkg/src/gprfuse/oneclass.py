"""Support vector data description and an incremental bank of one-class models.

SVDD dual with a Gaussian kernel K(x, y) = exp(-gamma * |x - y|^2):

    maximise  sum_i a_i K_ii - sum_ij a_i a_j K_ij
    s.t.      sum_i a_i = 1,  0 <= a_i <= C

solved by pairwise coordinate ascent: each step moves mass between the
maximal KKT-violating pair along the equality constraint and takes the
exact clipped optimum of the resulting 1-D quadratic.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

REJECT = -1
KKT_TOL = 1e-6
ACCEPT_TOL = KKT_TOL  # on-sphere points are accepted up to solver accuracy
BOUND_EPS = 1e-12


class ConvergenceError(RuntimeError):
    def __init__(self, iterations: int, violation: float):
        super().__init__(
            f"SVDD solver stopped after {iterations} iterations with KKT violation {violation:.3e}"
        )
        self.iterations = iterations
        self.violation = violation


def gaussian_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * cdist(a, b, "sqeuclidean"))


def median_gamma(x: np.ndarray) -> float:
    """gamma = 1 / (2 * median^2) of the non-zero pairwise distances."""
    if len(x) < 2:
        return 1.0
    d = pdist(x)
    d = d[d > 0]
    if d.size == 0:
        return 1.0
    return 1.0 / (2.0 * float(np.median(d)) ** 2)


def dual_objective(k: np.ndarray, alpha: np.ndarray) -> float:
    return float(alpha @ np.diag(k) - alpha @ k @ alpha)


@dataclass
class SvddModel:
    support: np.ndarray  # (m, d) training points with alpha > 0
    alphas: np.ndarray  # (n,) all training multipliers
    C: float
    gamma: float
    r_squared: float
    center_term: float  # sum_ij a_i a_j K_ij
    support_alphas: np.ndarray = field(repr=False, default=None)
    iterations: int = 0
    kkt_violation: float = 0.0

    def __post_init__(self):
        if self.support_alphas is None:
            self.support_alphas = self.alphas[self.alphas > 0]

    def distance2(self, x: np.ndarray) -> np.ndarray:
        """|phi(x) - a|^2 for one point (d,) or many (n, d)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        k = gaussian_kernel(x, self.support, self.gamma)
        d2 = 1.0 - 2.0 * k @ self.support_alphas + self.center_term
        d2 = np.maximum(d2, 0.0)
        return float(d2[0]) if single else d2

    def accepts(self, x: np.ndarray, tol: float = ACCEPT_TOL):
        """Inside or on the sphere (within ``tol``)."""
        return self.distance2(x) <= self.r_squared + tol


def svdd_train(features, C: float = 0.1, gamma: float | None = None,
               tol: float = KKT_TOL, max_iter: int | None = None) -> SvddModel:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or len(x) < 1:
        raise ValueError("svdd_train needs a non-empty (n, d) feature array")
    n = len(x)
    if C < 1.0 / n - 1e-12:
        raise ValueError(f"C={C} is infeasible for n={n} points (need C >= 1/n = {1.0 / n:.4g})")
    C = min(C, 1.0)
    gamma = median_gamma(x) if gamma is None else float(gamma)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    max_iter = max_iter or max(10000, 200 * n)

    k = gaussian_kernel(x, x, gamma)
    diag = np.diag(k).copy()
    alpha = np.full(n, 1.0 / n)
    grad = 2.0 * k @ alpha - diag  # gradient of the minimisation form
    violation = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        up = alpha < C - BOUND_EPS
        down = alpha > BOUND_EPS
        if not up.any() or not down.any():
            violation = 0.0
            break
        g_up = np.where(up, grad, np.inf)
        i = int(np.argmin(g_up))
        g_down = np.where(down, grad, -np.inf)
        violation = float(g_down.max() - g_up[i])
        if violation <= tol:
            break
        # second-order choice of j among violating candidates
        diff = grad - grad[i]
        curv = np.maximum(diag[i] + diag - 2.0 * k[i], 1e-12)
        gain = np.where(down & (diff > 0), diff * diff / curv, -np.inf)
        j = int(np.argmax(gain))
        # move delta from j to i
        delta = (grad[j] - grad[i]) / (2.0 * curv[j])
        delta = min(delta, C - alpha[i], alpha[j])
        if delta <= 0:
            break
        alpha[i] += delta
        alpha[j] -= delta
        grad += 2.0 * delta * (k[:, i] - k[:, j])
    else:
        raise ConvergenceError(max_iter, violation)

    alpha = np.clip(alpha, 0.0, C)
    # put the rounding residue of sum(alpha) = 1 on the largest free multiplier
    free = np.flatnonzero((alpha > BOUND_EPS) & (alpha < C - BOUND_EPS))
    if free.size:
        f = free[np.argmax(alpha[free])]
        alpha[f] = min(C, max(0.0, alpha[f] + 1.0 - alpha.sum()))
    center_term = float(alpha @ k @ alpha)
    d2 = np.maximum(diag - 2.0 * k @ alpha + center_term, 0.0)
    free = (alpha > BOUND_EPS) & (alpha < C - BOUND_EPS)
    if free.any():
        r2 = float(np.mean(d2[free]))
    else:
        inside = d2[alpha <= BOUND_EPS]
        outside = d2[alpha >= C - BOUND_EPS]
        lo = inside.max() if inside.size else None
        hi = outside.min() if outside.size else None
        if lo is None:
            r2 = float(hi)
        elif hi is None:
            r2 = float(lo)
        else:
            r2 = float(0.5 * (lo + hi))
    keep = alpha > 0
    return SvddModel(
        support=x[keep].copy(), alphas=alpha, C=C, gamma=gamma, r_squared=r2,
        center_term=center_term, support_alphas=alpha[keep].copy(),
        iterations=it, kkt_violation=violation,
    )


def svdd_distance2(model: SvddModel, x) -> float:
    return model.distance2(x)


def cv_margin(features, C: float, gamma: float, folds: int = 5, guard: int = 30) -> float:
    """Held-out slack of the sphere, estimated by blocked cross-validation.

    ``features`` are consecutive, heavily overlapping windows, so each fold is a
    contiguous block and ``guard`` neighbours on either side are left out of
    training as well. Returns max(0, largest held-out distance^2 - R^2).
    """
    x = np.asarray(features, dtype=np.float64)
    n = len(x)
    if folds < 2:
        raise ValueError("need at least 2 folds")
    edges = np.linspace(0, n, folds + 1).astype(int)
    worst = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        keep = np.r_[0 : max(0, a - guard), min(n, b + guard) : n]
        if len(keep) < 2:
            raise ValueError(f"{n} points are too few for {folds} folds with guard {guard}")
        model = svdd_train(x[keep], C=max(C, 1.0 / len(keep)), gamma=gamma)
        worst = max(worst, float(np.max(model.distance2(x[a:b]) - model.r_squared)))
    return worst


# Incremental class bank --------------------------------------------------

@dataclass
class SpawnEvent:
    class_id: int
    members: list  # tags of the absorbed buffer entries
    extended: bool = False  # True when an existing class grew instead of a new one


def cohesive_group(points: np.ndarray, radius: float, quantile: float = 0.9) -> np.ndarray:
    """Indices of the buffer entries that form a cohesive group with the newest one.

    Candidates are the entries within ``radius`` of the newest entry; the group
    passes when the ``quantile`` of its pairwise distances is <= ``radius``.
    Returns an empty array when the gate fails.
    """
    d_new = np.linalg.norm(points - points[-1], axis=1)
    idx = np.flatnonzero(d_new <= radius)
    if len(idx) < 2:
        return idx
    spread = np.quantile(pdist(points[idx]), quantile)
    return idx if spread <= radius else np.empty(0, dtype=int)


@dataclass
class ClassBank:
    """Ordered one-class models; index 0 is the normal class.

    ``absorb`` is not thread-safe; callers must serialise updates.
    """

    classifiers: list[SvddModel]
    spawn_threshold: int = 8
    cohesion_radius: float = 1.0
    spawn_C: float = 1.0
    spawn_gamma: float | None = None
    spawn_min_radius: float | None = None  # input-space radius floor for spawned classes
    normal_margin: float = 0.0  # added to the normal class's R^2
    # rejects closer to the normal sphere than this (distance^2 excess) stay
    # unclassified: partial views of an object at a window edge look alike for every type
    spawn_min_excess: float = 0.0
    # a cohesive group this close (median nearest-member distance) to a spawned
    # class extends that class instead of spawning a new one; None disables
    merge_radius: float | None = None
    # when set, grouping and merging compare unit directions from this point
    # (chord distance), so an object's windows group regardless of echo strength
    origin: np.ndarray | None = None
    # training points of every class (index 0 unused), needed to retrain on extension
    members: list[np.ndarray] = field(default_factory=list)
    buffer: list[np.ndarray] = field(default_factory=list)
    buffer_tags: list = field(default_factory=list)
    # replaceable grouping strategy: (buffer points, radius) -> member indices
    grouping: Callable[[np.ndarray, float], np.ndarray] = field(default=cohesive_group, repr=False)

    @property
    def n_classes(self) -> int:
        return len(self.classifiers)

    def _radius2(self, k: int) -> float:
        model = self.classifiers[k]
        if k == 0:
            return model.r_squared + self.normal_margin
        if self.spawn_min_radius is None:
            return model.r_squared
        # distance^2 of a point spawn_min_radius away from every support vector
        floor = 1.0 + model.center_term - 2.0 * np.exp(-model.gamma * self.spawn_min_radius ** 2)
        return max(model.r_squared, floor)

    def radius2(self, k: int) -> float:
        """Acceptance threshold on distance^2 for class ``k``."""
        return self._radius2(k)

    def scores(self, x: np.ndarray) -> np.ndarray:
        """distance^2 - R^2 against every class for one point."""
        return np.array([m.distance2(x) - self._radius2(k) for k, m in enumerate(self.classifiers)])

    def classify(self, x) -> int:
        for k, model in enumerate(self.classifiers):
            if model.distance2(x) <= self._radius2(k) + ACCEPT_TOL:
                return k
        return REJECT

    def absorb(self, x, tag=None) -> SpawnEvent | None:
        """Buffer a rejected feature; spawn a class once a cohesive group is big enough."""
        x = np.asarray(x, dtype=np.float64)
        if self.spawn_min_excess > 0 and (
            self.classifiers[0].distance2(x) - self._radius2(0) < self.spawn_min_excess
        ):
            return None
        self.buffer.append(x)
        self.buffer_tags.append(tag)
        if len(self.buffer) < self.spawn_threshold:
            return None
        pts = np.vstack(self.buffer)
        members = self.grouping(self._view(pts), self.cohesion_radius)
        if len(members) < self.spawn_threshold:
            return None
        group = pts[members]
        target = self.nearest_class(group)
        if target is not None:
            group = np.vstack([self.members[target], group])
        gamma = self.spawn_gamma if self.spawn_gamma is not None else median_gamma(group)
        model = svdd_train(group, C=max(self.spawn_C, 1.0 / len(group)), gamma=gamma)
        while len(self.members) < self.n_classes:
            self.members.append(np.empty((0, group.shape[1])))
        if target is None:
            self.classifiers.append(model)
            self.members.append(group)
            target = self.n_classes - 1
        else:
            self.classifiers[target] = model
            self.members[target] = group
        chosen = set(members.tolist())
        tags = [self.buffer_tags[i] for i in members]
        self.buffer = [p for i, p in enumerate(self.buffer) if i not in chosen]
        self.buffer_tags = [t for i, t in enumerate(self.buffer_tags) if i not in chosen]
        return SpawnEvent(target, tags, extended=len(group) > len(members))

    def _view(self, pts: np.ndarray) -> np.ndarray:
        """Points as compared by grouping and merging."""
        if self.origin is None:
            return pts
        v = pts - self.origin
        return v / np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-12)

    def nearest_class(self, group: np.ndarray) -> int | None:
        """Spawned class within ``merge_radius`` of ``group``, closest first."""
        if self.merge_radius is None:
            return None
        best, best_d = None, np.inf
        for k in range(1, min(self.n_classes, len(self.members))):
            pts = self.members[k]
            if not len(pts):
                continue
            d = float(np.median(cdist(self._view(group), self._view(pts)).min(axis=1)))
            if d <= self.merge_radius and d < best_d:
                best, best_d = k, d
        return best

    def summary(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "buffered": len(self.buffer),
            "normal_margin": self.normal_margin,
            "spawn_min_excess": self.spawn_min_excess,
            "merge_radius": self.merge_radius,
            "direction_space": self.origin is not None,
            "classes": [
                {"class_id": k, "n_support": int(len(m.support)), "r_squared": m.r_squared,
                 "gamma": m.gamma, "C": m.C}
                for k, m in enumerate(self.classifiers)
            ],
        }


def classify(bank: ClassBank, x) -> int:
    return bank.classify(x)


def absorb(bank: ClassBank, rejected, tag=None) -> SpawnEvent | None:
    return bank.absorb(rejected, tag)


# PCA ---------------------------------------------------------------------

@dataclass
class Pca3:
    points: np.ndarray  # (n, 3)
    components: np.ndarray  # (3, d), orthonormal rows
    eigenvalues: np.ndarray  # all eigenvalues, descending
    mean: np.ndarray
    padded: bool = False  # fewer than 3 informative axes


def pca3(features) -> Pca3:
    """Project onto the top-3 eigenvectors of the feature covariance."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or len(x) < 3:
        raise ValueError("pca3 needs at least 3 feature vectors")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (len(x) - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order]
    comps = np.zeros((3, x.shape[1]))
    k = min(3, x.shape[1])
    comps[:k] = vecs[:, :k].T
    tol = max(vals[0], 1.0) * 1e-12 if vals.size else 0.0
    rank = int(np.sum(vals > tol))
    padded = rank < 3
    if padded:
        comps[rank:] = 0.0
    return Pca3(xc @ comps.T, comps, vals, mean, padded)


# Serialisation -----------------------------------------------------------
#
# <dir>/bank.json          manifest (scalars, blob names and shapes)
# <dir>/class_<k>.bin      little-endian f64: support (m*d) then support alphas (m)
# <dir>/members_<k>.bin    little-endian f64: training points of class k (n*d)

def save_bank(bank: ClassBank, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    classes = []
    for k, m in enumerate(bank.classifiers):
        name = f"class_{k}.bin"
        blob = np.concatenate([m.support.ravel(), m.support_alphas]).astype("<f8")
        (out_dir / name).write_bytes(blob.tobytes())
        pts = bank.members[k] if k < len(bank.members) else np.empty((0, 0))
        (out_dir / f"members_{k}.bin").write_bytes(pts.astype("<f8").tobytes())
        classes.append({"blob": name, "support_shape": list(m.support.shape), "C": m.C,
                        "members_shape": list(pts.shape),
                        "gamma": m.gamma, "r_squared": m.r_squared,
                        "center_term": m.center_term})
    buf = np.vstack(bank.buffer) if bank.buffer else np.empty((0, 0))
    (out_dir / "buffer.bin").write_bytes(buf.astype("<f8").tobytes())
    manifest = {
        "spawn_threshold": bank.spawn_threshold, "cohesion_radius": bank.cohesion_radius,
        "spawn_C": bank.spawn_C, "spawn_gamma": bank.spawn_gamma,
        "spawn_min_radius": bank.spawn_min_radius, "normal_margin": bank.normal_margin,
        "spawn_min_excess": bank.spawn_min_excess,
        "merge_radius": bank.merge_radius,
        "origin": None if bank.origin is None else bank.origin.tolist(),
        "buffer_shape": list(buf.shape), "buffer_tags": bank.buffer_tags, "classes": classes,
    }
    (out_dir / "bank.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_bank(in_dir: str | Path) -> ClassBank:
    in_dir = Path(in_dir)
    manifest = json.loads((in_dir / "bank.json").read_text())
    models, members = [], []
    for k, c in enumerate(manifest["classes"]):
        raw = np.frombuffer((in_dir / f"members_{k}.bin").read_bytes(), dtype="<f8")
        members.append(raw.reshape(c["members_shape"]).copy())
        m, d = c["support_shape"]
        blob = np.frombuffer((in_dir / c["blob"]).read_bytes(), dtype="<f8")
        support = blob[: m * d].reshape(m, d).copy()
        sa = blob[m * d :].copy()
        models.append(SvddModel(support=support, alphas=sa, C=c["C"], gamma=c["gamma"],
                                r_squared=c["r_squared"], center_term=c["center_term"],
                                support_alphas=sa))
    shape = manifest["buffer_shape"]
    raw = np.frombuffer((in_dir / "buffer.bin").read_bytes(), dtype="<f8")
    buffer = list(raw.reshape(shape)) if shape[0] else []
    return ClassBank(
        classifiers=models, spawn_threshold=manifest["spawn_threshold"],
        cohesion_radius=manifest["cohesion_radius"], spawn_C=manifest["spawn_C"],
        spawn_gamma=manifest["spawn_gamma"], spawn_min_radius=manifest["spawn_min_radius"],
        normal_margin=manifest["normal_margin"], spawn_min_excess=manifest["spawn_min_excess"],
        merge_radius=manifest["merge_radius"], members=members,
        origin=None if manifest.get("origin") is None else np.array(manifest["origin"], dtype=np.float64), buffer=[np.array(b) for b in buffer], buffer_tags=list(manifest["buffer_tags"]),
    )
