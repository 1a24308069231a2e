"""Kinematic point-scatterer forward model for synthetic B-scans.

Every object is reduced to point scatterers. A scatterer at (x0, z) seen from
antenna position x returns a Ricker pulse centred on the two-way travel time
2*sqrt(z^2 + (x - x0)^2)/v, scaled by its reflectivity and by 1/t for
geometric spreading. Extended bodies (cracks, voids, water pockets) are
sampled every ``dx`` along their outline, which yields hyperbolic diffraction
tails plus a flat specular response.

Units: time in ns, distance in m, frequency in MHz.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bscan import BScan, write_scan

C_LIGHT = 0.2998  # m/ns
SPREAD_REF = 1.0  # ns; amplitude = reflectivity * SPREAD_REF / t

OBJECT_KINDS = ("pipe", "void", "crack", "water_pocket", "rock")

# Relative permittivity ranges for the materials used in the scenes.
PERMITTIVITY = {
    "air": (1.0, 1.0),
    "water": (81.0, 81.0),
    "rock": (5.0, 8.0),
    "asphalt": (3.0, 5.0),
    "cement": (4.0, 6.0),
    "moist_soil": (8.0, 14.0),
    "dry_soil": (3.0, 3.0),
    "metal": (math.inf, math.inf),
}


class InvalidSceneError(ValueError):
    pass


@dataclass(frozen=True)
class MaterialSpec:
    name: str
    rel_permittivity: float
    reflectivity: float | None = None  # None: derived from the permittivity contrast

    def __post_init__(self):
        if not self.rel_permittivity >= 1:
            raise ValueError(f"{self.name}: relative permittivity must be >= 1")
        if self.reflectivity is not None and not -1 <= self.reflectivity <= 1:
            raise ValueError(f"{self.name}: reflectivity must lie in [-1, 1]")
        if self.is_metal and self.reflectivity is not None and abs(self.reflectivity) != 1:
            raise ValueError(f"{self.name}: metal must have |reflectivity| = 1")

    @property
    def is_metal(self) -> bool:
        return math.isinf(self.rel_permittivity)

    @property
    def velocity(self) -> float:
        if self.is_metal:
            raise ValueError(f"{self.name}: no propagation velocity inside metal")
        return C_LIGHT / math.sqrt(self.rel_permittivity)


def material(name: str, rng: np.random.Generator | None = None) -> MaterialSpec:
    """Material from the permittivity table; ranged values drawn uniformly."""
    lo, hi = PERMITTIVITY[name]
    if lo == hi or rng is None:
        eps = lo if lo == hi else 0.5 * (lo + hi)
    else:
        eps = float(rng.uniform(lo, hi))
    return MaterialSpec(name, eps, -1.0 if math.isinf(eps) else None)


def reflection_coefficient(host: MaterialSpec, target: MaterialSpec) -> float:
    """Normal-incidence coefficient going from ``host`` into ``target``."""
    if target.reflectivity is not None:
        return target.reflectivity
    n1, n2 = math.sqrt(host.rel_permittivity), math.sqrt(target.rel_permittivity)
    return (n1 - n2) / (n1 + n2)


@dataclass(frozen=True)
class BuriedObject:
    kind: str
    center_x: float
    depth: float
    size: float
    material: MaterialSpec
    aspect: float = 0.5  # vertical/horizontal semi-axis ratio of voids and pockets
    tilt: float = 0.0  # crack inclination from vertical, degrees

    def __post_init__(self):
        if self.kind not in OBJECT_KINDS:
            raise ValueError(f"unknown object kind {self.kind!r}")
        if not (self.depth > 0 and self.size > 0):
            raise ValueError(f"{self.kind}: depth and size must be positive")

    def horizontal_extent(self) -> tuple[float, float]:
        if self.kind == "crack":
            dx = self.size * math.sin(math.radians(self.tilt))
            return min(self.center_x, self.center_x + dx), max(self.center_x, self.center_x + dx)
        return self.center_x - self.size, self.center_x + self.size

    def vertical_extent(self) -> tuple[float, float]:
        if self.kind == "crack":
            return self.depth, self.depth + self.size * math.cos(math.radians(self.tilt))
        if self.kind in ("void", "water_pocket"):
            b = self.size * self.aspect
            return self.depth - b, self.depth + b
        return self.depth, self.depth


@dataclass(frozen=True)
class Layer:
    """Horizontal interface, optionally undulating sinusoidally along x."""

    depth: float
    reflectivity: float
    undulation_amp: float = 0.0
    undulation_wavelength: float = 2.0
    phase: float = 0.0


@dataclass(frozen=True)
class SceneSpec:
    host: MaterialSpec
    width: float = 6.0  # m
    time_window: float = 25.6  # ns
    dt: float = 0.2  # ns
    dx: float = 0.02  # m
    source_freq: float = 500.0  # MHz
    objects: tuple[BuriedObject, ...] = ()
    noise_sigma: float = 0.0
    layers: tuple[Layer, ...] = ()
    surface_reflectivity: float = 0.0
    clutter_density: float = 0.0  # random weak scatterers per m^2
    clutter_strength: float = 0.0  # std of their (uniform) reflectivity
    clutter_min_depth: float = 0.02  # fraction of max_depth above which no clutter sits
    time_zero: float = 0.0  # ns, arrival of the ground surface

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.host.is_metal:
            raise InvalidSceneError("host medium cannot be metal")
        if not (self.width > 0 and self.time_window > 0 and self.dt > 0 and self.dx > 0):
            raise InvalidSceneError("width, time_window, dt and dx must be positive")
        if self.source_freq <= 0:
            raise InvalidSceneError("source_freq must be positive")
        if self.dt > 100.0 / self.source_freq:
            raise InvalidSceneError(
                f"dt={self.dt} ns undersamples a {self.source_freq} MHz Ricker pulse "
                f"(need dt <= {100.0 / self.source_freq:.4g} ns)"
            )
        if self.noise_sigma < 0:
            raise InvalidSceneError("noise_sigma must be >= 0")
        if not 0 <= self.clutter_min_depth < 1:
            raise InvalidSceneError("clutter_min_depth must lie in [0, 1)")

    @property
    def rows(self) -> int:
        return int(round(self.time_window / self.dt))

    @property
    def cols(self) -> int:
        return int(round(self.width / self.dx))

    @property
    def max_depth(self) -> float:
        return 0.5 * (self.time_window - self.time_zero) * self.host.velocity

    def with_objects(self, objects: Iterable[BuriedObject]) -> "SceneSpec":
        return replace(self, objects=tuple(objects))


def ricker(t, f: float):
    """Ricker pulse with peak frequency ``f`` (MHz) at time ``t`` (ns)."""
    if f <= 0:
        raise ValueError("Ricker frequency must be positive")
    a = (math.pi * f * 1e-3 * np.asarray(t, dtype=np.float64)) ** 2
    out = (1.0 - 2.0 * a) * np.exp(-a)
    return float(out) if np.ndim(out) == 0 else out


def two_way_time(obj: BuriedObject, x, host: MaterialSpec):
    """Two-way travel time (ns) from antenna position ``x`` to the object's reference point."""
    v = host.velocity
    return 2.0 * np.sqrt(obj.depth ** 2 + (np.asarray(x, dtype=np.float64) - obj.center_x) ** 2) / v


def _check_bounds(scene: SceneSpec, index: int, obj: BuriedObject) -> None:
    x0, x1 = obj.horizontal_extent()
    z0, z1 = obj.vertical_extent()
    x_max = (scene.cols - 1) * scene.dx
    where = f"object #{index} ({obj.kind} at x={obj.center_x:g} m, depth={obj.depth:g} m)"
    if x0 < 0 or x1 > x_max:
        raise InvalidSceneError(f"{where} extends outside the scan [0, {x_max:g}] m")
    if z0 <= 0 or z1 >= scene.max_depth:
        raise InvalidSceneError(
            f"{where} extends outside the depth range (0, {scene.max_depth:.3g}) m"
        )


def _object_scatterers(scene: SceneSpec, obj: BuriedObject):
    """(x, z, amplitude, extra_delay) arrays for one object."""
    host = scene.host
    r = reflection_coefficient(host, obj.material)
    wavelength = host.velocity / (scene.source_freq * 1e-3)
    weight = 2.0 * scene.dx / wavelength  # per-point share of a continuous reflector

    if obj.kind in ("pipe", "rock"):
        return (np.array([obj.center_x]), np.array([obj.depth]), np.array([r]), np.zeros(1))

    if obj.kind == "crack":
        n = max(2, int(math.ceil(obj.size / scene.dx)) + 1)
        s = np.linspace(0.0, obj.size, n)
        ang = math.radians(obj.tilt)
        xs = obj.center_x + s * math.sin(ang)
        zs = obj.depth + s * math.cos(ang)
        return xs, zs, np.full(n, r * weight), np.zeros(n)

    # void / water_pocket: elliptical cavity, top and bottom outlines
    a, b = obj.size, obj.size * obj.aspect
    n = max(3, int(math.ceil(2 * a / scene.dx)) + 1)
    u = np.linspace(-a, a, n)[1:-1]
    half = b * np.sqrt(1.0 - (u / a) ** 2)
    inner_v = C_LIGHT / math.sqrt(obj.material.rel_permittivity)
    extra = 2.0 * (2.0 * half) * (1.0 / inner_v - 1.0 / host.velocity)
    xs = np.concatenate([obj.center_x + u, obj.center_x + u])
    zs = np.concatenate([obj.depth - half, obj.depth + half])
    amps = np.concatenate([np.full(u.size, r * weight), np.full(u.size, -r * weight)])
    delays = np.concatenate([np.zeros(u.size), extra])
    return xs, zs, amps, delays


def _deposit(data, t_axis, x_axis, scene, xs, zs, amps, delays):
    v = scene.host.velocity
    f = scene.source_freq
    reach = scene.time_window + 1.5e3 / f
    for px, pz, amp, extra in zip(xs, zs, amps, delays):
        tt = scene.time_zero + extra + 2.0 * np.sqrt(pz * pz + (x_axis - px) ** 2) / v
        cols = np.flatnonzero(tt < reach)
        if cols.size == 0:
            continue
        arrival = tt[cols]
        scale = amp * SPREAD_REF / np.maximum(arrival, scene.dt)
        data[:, cols] += scale * ricker(t_axis[:, None] - arrival[None, :], f)


def _clutter(scene: SceneSpec, rng: np.random.Generator):
    if scene.clutter_density <= 0 or scene.clutter_strength <= 0:
        return np.empty(0), np.empty(0), np.empty(0), np.empty(0)
    zmax = scene.max_depth
    n = rng.poisson(scene.clutter_density * scene.width * zmax)
    xs = rng.uniform(0.0, scene.width, n)
    zs = rng.uniform(scene.clutter_min_depth * zmax, zmax, n)
    # bounded (uniform) reflectivities with std clutter_strength
    bound = scene.clutter_strength * math.sqrt(3.0)
    amps = rng.uniform(-bound, bound, n)
    return xs, zs, amps, np.zeros(n)


def render(scene: SceneSpec, seed: int = 0) -> BScan:
    """Render ``scene`` deterministically for a given ``seed``."""
    for i, obj in enumerate(scene.objects):
        _check_bounds(scene, i, obj)
    rows, cols = scene.rows, scene.cols
    t_axis = np.arange(rows) * scene.dt
    x_axis = np.arange(cols) * scene.dx
    data = np.zeros((rows, cols))
    clutter_ss, noise_ss = np.random.SeedSequence(seed).spawn(2)

    v = scene.host.velocity
    f = scene.source_freq
    if scene.surface_reflectivity:
        data += scene.surface_reflectivity * ricker(t_axis - scene.time_zero, f)[:, None]
    for layer in scene.layers:
        z = layer.depth + layer.undulation_amp * np.sin(
            2 * math.pi * x_axis / layer.undulation_wavelength + layer.phase
        )
        tt = scene.time_zero + 2.0 * z / v
        scale = layer.reflectivity * SPREAD_REF / np.maximum(tt, scene.dt)
        data += scale[None, :] * ricker(t_axis[:, None] - tt[None, :], f)

    _deposit(data, t_axis, x_axis, scene, *_clutter(scene, np.random.default_rng(clutter_ss)))
    for obj in scene.objects:
        _deposit(data, t_axis, x_axis, scene, *_object_scatterers(scene, obj))

    if scene.noise_sigma > 0:
        data += np.random.default_rng(noise_ss).normal(0.0, scene.noise_sigma, data.shape)
    return BScan(data, dt=scene.dt, dx=scene.dx, origin_x=0.0)


def object_labels(scene: SceneSpec, scan_id: str) -> list[dict]:
    """Horizontal column extent of each object, for evaluation ground truth."""
    labels = []
    for obj in scene.objects:
        x0, x1 = obj.horizontal_extent()
        c0 = int(math.floor(x0 / scene.dx + 1e-9))
        c1 = max(c0 + 1, int(math.ceil(x1 / scene.dx - 1e-9)) + 1)
        labels.append({"scan_id": scan_id, "object_kind": obj.kind,
                       "col_start": c0, "col_end": min(c1, scene.cols)})
    return labels


@dataclass
class Corpus:
    scans: list[BScan] = field(default_factory=list)
    labels: list[list[dict]] = field(default_factory=list)
    scan_ids: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.scans)


def corpus(specs: Sequence[SceneSpec], seeds: Sequence[int] | int = 0,
           prefix: str = "scan") -> Corpus:
    """Render every scene; ``seeds`` is a sequence or a base seed."""
    if not specs:
        raise ValueError("corpus needs at least one scene")
    if isinstance(seeds, (int, np.integer)):
        seeds = [int(seeds) + i for i in range(len(specs))]
    if len(seeds) != len(specs):
        raise ValueError("need one seed per scene")
    out = Corpus()
    for i, (spec, seed) in enumerate(zip(specs, seeds)):
        scan_id = f"{prefix}_{i:04d}"
        out.scans.append(render(spec, seed))
        out.labels.append(object_labels(spec, scan_id))
        out.scan_ids.append(scan_id)
    return out


def write_corpus(c: Corpus, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "labels.jsonl", "w") as fh:
        for scan_id, scan, labels in zip(c.scan_ids, c.scans, c.labels):
            write_scan(scan, out_dir / f"{scan_id}.gsf")
            for rec in labels:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_labels(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


# JSON scene schema -------------------------------------------------------

def _material_from_dict(d: dict) -> MaterialSpec:
    eps = d["rel_permittivity"]
    eps = math.inf if eps in ("inf", "Infinity", None) else float(eps)
    return MaterialSpec(d["name"], eps, d.get("reflectivity"))


def _material_to_dict(m: MaterialSpec) -> dict:
    eps = "inf" if m.is_metal else m.rel_permittivity
    return {"name": m.name, "rel_permittivity": eps, "reflectivity": m.reflectivity}


def scene_to_dict(scene: SceneSpec) -> dict:
    d = asdict(scene)
    d["host"] = _material_to_dict(scene.host)
    d["objects"] = []
    for obj in scene.objects:
        od = asdict(obj)
        od["material"] = _material_to_dict(obj.material)
        d["objects"].append(od)
    d["layers"] = [asdict(layer) for layer in scene.layers]
    return d


def scene_from_dict(d: dict) -> SceneSpec:
    d = dict(d)
    d["host"] = _material_from_dict(d["host"])
    d["objects"] = tuple(
        BuriedObject(**{**o, "material": _material_from_dict(o["material"])})
        for o in d.get("objects", [])
    )
    d["layers"] = tuple(Layer(**layer) for layer in d.get("layers", []))
    return SceneSpec(**d)


def load_scenes(path: str | Path) -> list[SceneSpec]:
    """Read one scene object or a list of them from JSON."""
    raw = json.loads(Path(path).read_text())
    items = raw if isinstance(raw, list) else raw.get("scenes", [raw])
    return [scene_from_dict(item) for item in items]
