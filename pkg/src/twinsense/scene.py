"""Geometric world model: buildings, foliage, base station, user grid.

A scene is a 2.5D environment: building and foliage footprints live in the
X-Y plane, the base station and users carry explicit heights. Buildings
block and reflect; foliage only attenuates. Scenes can be perturbed into
"digital twin" variants (displaced buildings, dropped foliage) to study
model-to-reality mismatch.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from shapely.geometry import Point, Polygon


@dataclass
class BaseStation:
    pos: tuple[float, float, float]
    boresight_rad: float = 0.0


@dataclass
class UserGrid:
    origin: tuple[float, float]
    width: float
    height: float
    spacing: float
    user_height: float = 2.0


@dataclass
class FoliageRegion:
    vertices: np.ndarray  # (V, 2)
    atten_db_per_m: float = 1.0


@dataclass
class Scene:
    name: str
    bs: BaseStation
    grid: UserGrid
    buildings: list[np.ndarray] = field(default_factory=list)  # each (V, 2)
    foliage: list[FoliageRegion] = field(default_factory=list)


@dataclass(frozen=True)
class PerturbationSpec:
    """Twin construction: displace every building by a fixed magnitude in a
    seeded random direction, optionally drop all foliage."""

    building_error_m: float = 0.0
    drop_foliage: bool = False
    seed: int = 0


class SceneValidationError(ValueError):
    pass


def polygon_area(vertices: np.ndarray) -> float:
    """Signed shoelace area (positive for counter-clockwise)."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _polygon_violations(vertices: np.ndarray, tag: str) -> list[str]:
    out = []
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2:
        return [f"{tag}: vertices must be an (V, 2) array"]
    if v.shape[0] < 3:
        out.append(f"{tag}: fewer than 3 vertices")
        return out
    if abs(polygon_area(v)) < 1e-12:
        out.append(f"{tag}: zero area")
    if not Polygon(v).is_simple:
        out.append(f"{tag}: self-intersecting polygon")
    return out


def validate_scene(scene: Scene) -> list[str]:
    """Return every invariant violation; an empty list means usable."""
    out: list[str] = []
    for i, b in enumerate(scene.buildings):
        out.extend(_polygon_violations(b, f"building {i}"))
    for i, f in enumerate(scene.foliage):
        out.extend(_polygon_violations(f.vertices, f"foliage {i}"))
        if f.atten_db_per_m < 0:
            out.append(f"foliage {i}: negative attenuation")
    if scene.grid.spacing <= 0:
        out.append("grid: spacing must be positive")
    if scene.grid.width < 0 or scene.grid.height < 0:
        out.append("grid: negative extent")
    if scene.grid.user_height <= 0:
        out.append("grid: user height must be positive")
    if scene.bs.pos[2] <= scene.grid.user_height:
        out.append("bs: height must exceed user height")
    return out


def require_valid(scene: Scene) -> None:
    violations = validate_scene(scene)
    if violations:
        raise SceneValidationError("; ".join(violations))


def perturb_scene(scene: Scene, spec: PerturbationSpec) -> Scene:
    """Build the digital-twin variant of a scene.

    Each building is translated by exactly ``building_error_m`` meters in a
    direction drawn uniformly from a PRNG seeded by (seed, building index),
    so the result is deterministic and shape-preserving. Foliage is removed
    when ``drop_foliage``. BS and grid are untouched.
    """
    require_valid(scene)
    buildings = []
    for i, b in enumerate(scene.buildings):
        rng = np.random.default_rng((spec.seed, i))
        ang = rng.uniform(0.0, 2.0 * math.pi)
        offset = spec.building_error_m * np.array([math.cos(ang), math.sin(ang)])
        buildings.append(np.asarray(b, dtype=float) + offset)
    foliage = [] if spec.drop_foliage else [
        FoliageRegion(np.array(f.vertices, dtype=float, copy=True), f.atten_db_per_m)
        for f in scene.foliage
    ]
    return Scene(
        name=scene.name,
        bs=replace(scene.bs),
        grid=replace(scene.grid),
        buildings=buildings,
        foliage=foliage,
    )


def generate_user_grid(scene: Scene) -> np.ndarray:
    """Row-major (x, y, user_height) positions covering the service area.

    Points strictly inside a building footprint are excluded (boundary
    contact is kept). Returns an (N, 3) array in deterministic order.
    """
    require_valid(scene)
    g = scene.grid
    nx = int(math.floor(g.width / g.spacing + 1e-9)) + 1
    ny = int(math.floor(g.height / g.spacing + 1e-9)) + 1
    polys = [Polygon(b) for b in scene.buildings]
    positions = []
    for iy in range(ny):
        for ix in range(nx):
            x = g.origin[0] + ix * g.spacing
            y = g.origin[1] + iy * g.spacing
            p = Point(x, y)
            if any(poly.contains(p) for poly in polys):
                continue
            positions.append((x, y, g.user_height))
    return np.array(positions, dtype=float).reshape(-1, 3)


# ---------------------------------------------------------------------------
# JSON persistence
# ---------------------------------------------------------------------------

def scene_to_dict(scene: Scene) -> dict:
    return {
        "name": scene.name,
        "bs": {"pos": list(scene.bs.pos), "boresight_rad": scene.bs.boresight_rad},
        "grid": {
            "origin": list(scene.grid.origin),
            "width": scene.grid.width,
            "height": scene.grid.height,
            "spacing": scene.grid.spacing,
            "user_height": scene.grid.user_height,
        },
        "buildings": [{"vertices": np.asarray(b, dtype=float).tolist()}
                      for b in scene.buildings],
        "foliage": [{"vertices": np.asarray(f.vertices, dtype=float).tolist(),
                     "atten_db_per_m": f.atten_db_per_m}
                    for f in scene.foliage],
    }


def scene_from_dict(d: dict) -> Scene:
    return Scene(
        name=d["name"],
        bs=BaseStation(pos=tuple(d["bs"]["pos"]),
                       boresight_rad=float(d["bs"]["boresight_rad"])),
        grid=UserGrid(origin=tuple(d["grid"]["origin"]),
                      width=float(d["grid"]["width"]),
                      height=float(d["grid"]["height"]),
                      spacing=float(d["grid"]["spacing"]),
                      user_height=float(d["grid"]["user_height"])),
        buildings=[np.array(b["vertices"], dtype=float) for b in d["buildings"]],
        foliage=[FoliageRegion(np.array(f["vertices"], dtype=float),
                               float(f["atten_db_per_m"]))
                 for f in d.get("foliage", [])],
    )


def save_scene(scene: Scene, path) -> None:
    with open(path, "w") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2)


def load_scene(path) -> Scene:
    with open(path) as fh:
        return scene_from_dict(json.load(fh))


def scene_hash(scene: Scene) -> str:
    """Stable content hash used in dataset metadata."""
    blob = json.dumps(scene_to_dict(scene), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
