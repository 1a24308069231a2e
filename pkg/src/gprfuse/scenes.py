"""Scene factories for the synthetic roads and the generic simulation library.

Roads carry area-specific structure (layered pavement with undulating
interfaces, a ground-surface reflection, clutter, noise). Library scenes are
generic: a homogeneous host of a randomly drawn material holding at most one
object, as a stand-in for a third-party simulation set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .simulate import BuriedObject, Layer, MaterialSpec, SceneSpec, material, reflection_coefficient

ROAD_HOSTS = ("asphalt", "cement")
LIBRARY_HOSTS = ("asphalt", "cement", "dry_soil", "moist_soil")


def random_object(kind: str, center_x: float, rng: np.random.Generator,
                  host_velocity: float, depth_range=(0.3, 0.9)) -> BuriedObject:
    z = float(rng.uniform(*depth_range))
    if kind == "pipe":
        return BuriedObject("pipe", center_x, z, float(rng.uniform(0.04, 0.12)), material("metal"))
    if kind == "rock":
        return BuriedObject("rock", center_x, z, float(rng.uniform(0.05, 0.15)), material("rock", rng))
    if kind == "crack":
        # dipping fractures; near-vertical ones return almost no energy to the surface
        tilt = float(rng.choice([-1.0, 1.0]) * rng.uniform(50, 75))
        return BuriedObject("crack", center_x, z - 0.1, float(rng.uniform(0.2, 0.45)),
                            material("air"), tilt=tilt)
    if kind == "void":
        return BuriedObject("void", center_x, z, float(rng.uniform(0.25, 0.5)), material("air"),
                            aspect=float(rng.uniform(0.25, 0.4)))
    if kind == "water_pocket":
        return BuriedObject("water_pocket", center_x, z, float(rng.uniform(0.2, 0.4)),
                            material("water"), aspect=float(rng.uniform(0.2, 0.35)))
    raise ValueError(kind)


def library_scene(rng: np.random.Generator, kind: str | None, width_cols: int = 300,
                  rows: int = 128, dt: float = 0.2, dx: float = 0.02,
                  noise_sigma: float = 0.002) -> SceneSpec:
    host = material(LIBRARY_HOSTS[int(rng.integers(len(LIBRARY_HOSTS)))], rng)
    width = width_cols * dx
    base = SceneSpec(host=host, width=width, time_window=rows * dt, dt=dt, dx=dx,
                     noise_sigma=noise_sigma)
    if kind is None:
        return base
    zmax = base.max_depth
    cx = float(rng.uniform(0.4, 0.6)) * width
    obj = random_object(kind, cx, rng, host.velocity, depth_range=(0.25 * zmax, 0.6 * zmax))
    return base.with_objects([obj])


def library_scenes(n: int, seed: int, kinds=("pipe", "void", "crack", "water_pocket", "rock"),
                   **kw) -> list[SceneSpec]:
    """``n`` single-object scenes cycling through ``kinds``."""
    rng = np.random.default_rng(seed)
    return [library_scene(rng, kinds[i % len(kinds)], **kw) for i in range(n)]


def empty_library_scenes(n: int, seed: int, **kw) -> list[SceneSpec]:
    rng = np.random.default_rng(seed)
    return [library_scene(rng, None, **kw) for _ in range(n)]


@dataclass(frozen=True)
class RoadPlan:
    bootstrap_cols: int = 3000
    spacing_cols: int = 1500
    lead_cols: int = 500
    tail_cols: int = 500
    rows: int = 128
    dt: float = 0.2
    dx: float = 0.02
    clutter_strength: float = 0.03
    clutter_min_depth: float = 0.15
    # per-object factor on the reflection coefficient: < 1 models partly filled
    # voids, damp rather than flooded pockets, non-metallic pipes
    contrast_range: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        lo, hi = self.contrast_range
        if not 0 < lo <= hi <= 1:
            raise ValueError(f"contrast_range must lie in (0, 1], got {self.contrast_range}")


def weaken(obj: BuriedObject, host, factor: float) -> BuriedObject:
    """Same object with its reflection coefficient scaled by ``factor``."""
    if factor == 1.0:
        return obj
    mat = obj.material
    # a weakened conductor is no longer metal; keep a huge finite permittivity
    eps = mat.rel_permittivity if math.isfinite(mat.rel_permittivity) else 1e6
    r = reflection_coefficient(host, mat) * factor
    return replace(obj, material=MaterialSpec(mat.name, eps, r))


def road_scene(index: int, kinds: list[str], seed: int, plan: RoadPlan = RoadPlan()) -> SceneSpec:
    """A long road whose first ``bootstrap_cols`` columns are object-free.

    One anomaly of each entry in ``kinds`` is planted after the bootstrap
    section, ``spacing_cols`` apart.
    """
    rng = np.random.default_rng([seed, index])
    host = material(ROAD_HOSTS[index % len(ROAD_HOSTS)], rng)
    cols = plan.bootstrap_cols + plan.lead_cols + plan.spacing_cols * max(len(kinds) - 1, 0) + plan.tail_cols
    width = cols * plan.dx
    v = host.velocity
    zmax = 0.5 * plan.rows * plan.dt * v
    layers = (
        Layer(float(rng.uniform(0.15, 0.25)) * zmax, float(rng.uniform(0.25, 0.4)),
              undulation_amp=float(rng.uniform(0.005, 0.015)),
              undulation_wavelength=float(rng.uniform(4, 12)), phase=float(rng.uniform(0, 6.3))),
        Layer(float(rng.uniform(0.45, 0.6)) * zmax, float(rng.uniform(0.15, 0.3)),
              undulation_amp=float(rng.uniform(0.01, 0.03)),
              undulation_wavelength=float(rng.uniform(6, 20)), phase=float(rng.uniform(0, 6.3))),
        Layer(float(rng.uniform(0.75, 0.85)) * zmax, float(rng.uniform(0.1, 0.2)),
              undulation_amp=float(rng.uniform(0.02, 0.05)),
              undulation_wavelength=float(rng.uniform(8, 25)), phase=float(rng.uniform(0, 6.3))),
    )
    base = SceneSpec(
        host=host, width=width, time_window=plan.rows * plan.dt, dt=plan.dt, dx=plan.dx,
        layers=layers, surface_reflectivity=0.5, time_zero=1.0,
        clutter_density=float(rng.uniform(2.0, 4.0)), clutter_strength=plan.clutter_strength,
        clutter_min_depth=plan.clutter_min_depth,
        noise_sigma=float(rng.uniform(0.002, 0.004)),
    )
    objects = []
    # separate stream so the contrast draw leaves the geometry unchanged
    contrast = np.random.default_rng([seed, index, 1]).uniform(*plan.contrast_range, len(kinds))
    for j, kind in enumerate(kinds):
        cx = (plan.bootstrap_cols + plan.lead_cols + j * plan.spacing_cols) * plan.dx
        cx += float(rng.uniform(-2, 2)) * plan.dx * 10
        obj = random_object(kind, cx, rng, v, depth_range=(0.3 * zmax, 0.65 * zmax))
        objects.append(weaken(obj, host, float(contrast[j])))
    return base.with_objects(objects)
