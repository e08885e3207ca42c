"""Image-method ray tracing between the base station and grid users.

Specular reflections off building walls are found by mirroring the BS
across ordered wall sequences (up to ``max_order`` bounces) and
backtracking reflection points from the user. Geometry is 2.5D: walls are
2D footprint edges extruded to effectively infinite height, the 3D path
length is recovered from the unfolded 2D length and the BS/user height
difference. Per-path complex gains combine free-space loss, a constant
per-bounce reflection coefficient, foliage attenuation, and the
plane-wave phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import LineString, Polygon

from .scene import Scene, polygon_area, require_valid

SPEED_OF_LIGHT = 299792458.0

_EPS = 1e-9


@dataclass
class RayConfig:
    carrier_hz: float = 3.5e9
    max_order: int = 4
    reflection_coeff: complex = -0.6 + 0.0j
    max_paths: int = 25

    def __post_init__(self):
        if self.carrier_hz <= 0:
            raise ValueError("carrier_hz must be positive")
        if self.max_order < 0:
            raise ValueError("max_order must be >= 0")
        if abs(self.reflection_coeff) > 1.0 + 1e-12:
            raise ValueError("|reflection_coeff| must be <= 1")
        if self.max_paths < 1:
            raise ValueError("max_paths must be >= 1")

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz


@dataclass
class PropagationPath:
    gain: complex
    aod_rad: float
    aoa_rad: float
    length_m: float
    order: int
    # 2D reflection points, outermost for validation / debugging
    points: list = field(default_factory=list)


def mirror_point(p, wall) -> np.ndarray:
    """Reflect a 2D point across the infinite line through a wall segment."""
    p = np.asarray(p, dtype=float)
    a, b = np.asarray(wall[0], dtype=float), np.asarray(wall[1], dtype=float)
    d = b - a
    n2 = float(d @ d)
    if n2 < 1e-24:
        raise ValueError("zero-length wall")
    t = float((p - a) @ d) / n2
    foot = a + t * d
    return 2.0 * foot - p


def path_gain(length_m: float, order: int, foliage_m: float,
              atten_db_per_m: float, cfg: RayConfig) -> complex:
    """Complex amplitude of one path.

    Friis free-space amplitude, ``reflection_coeff`` per bounce, foliage
    attenuation in dB per traversed meter, and plane-wave phase.
    """
    if length_m <= 0:
        raise ValueError("length_m must be positive")
    lam = cfg.wavelength_m
    amp = lam / (4.0 * math.pi * length_m)
    amp *= 10.0 ** (-atten_db_per_m * foliage_m / 20.0)
    refl = cfg.reflection_coeff ** order if order else 1.0
    phase = np.exp(-2j * math.pi * length_m / lam)
    return complex(amp * refl * phase)


class _Walls:
    """Flat arrays of building footprint edges with outward normals."""

    def __init__(self, scene: Scene):
        p0, p1, nrm = [], [], []
        for b in scene.buildings:
            v = np.asarray(b, dtype=float)
            if polygon_area(v) < 0:  # normalize to CCW
                v = v[::-1]
            for i in range(len(v)):
                a, c = v[i], v[(i + 1) % len(v)]
                d = c - a
                ln = math.hypot(d[0], d[1])
                if ln < 1e-12:
                    continue
                p0.append(a)
                p1.append(c)
                # CCW polygon: interior on the left, outward on the right
                nrm.append(np.array([d[1], -d[0]]) / ln)
        self.p0 = np.array(p0).reshape(-1, 2)
        self.p1 = np.array(p1).reshape(-1, 2)
        self.normal = np.array(nrm).reshape(-1, 2)
        self.count = len(self.p0)

    def outer_side(self, p, wall_id: int) -> float:
        return float((np.asarray(p) - self.p0[wall_id]) @ self.normal[wall_id])

    def blocked(self, a, b, ignore_ids=()) -> bool:
        """True iff segment a->b crosses the interior of a non-ignored wall."""
        if self.count == 0:
            return False
        a = np.asarray(a, dtype=float)[:2]
        b = np.asarray(b, dtype=float)[:2]
        r = b - a
        s = self.p1 - self.p0
        qa = self.p0 - a
        denom = r[0] * s[:, 1] - r[1] * s[:, 0]
        cross_qs = qa[:, 0] * s[:, 1] - qa[:, 1] * s[:, 0]
        cross_qr = qa[:, 0] * r[1] - qa[:, 1] * r[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(denom) > 1e-15, cross_qs / denom, np.inf)
            u = np.where(np.abs(denom) > 1e-15, cross_qr / denom, np.inf)
        hit = (t > _EPS) & (t < 1.0 - _EPS) & (u > _EPS) & (u < 1.0 - _EPS)
        for wid in ignore_ids:
            hit[wid] = False
        return bool(np.any(hit))


def path_blocked(seg, scene: Scene, ignore_walls=frozenset()) -> bool:
    """Visibility test for a single 3D segment's X-Y projection."""
    walls = _Walls(scene)
    return walls.blocked(seg[0], seg[1], tuple(ignore_walls))


def foliage_length(seg, scene: Scene) -> float:
    """Total X-Y projected length of the segment inside foliage polygons."""
    a = np.asarray(seg[0], dtype=float)[:2]
    b = np.asarray(seg[1], dtype=float)[:2]
    if not scene.foliage:
        return 0.0
    line = LineString([a, b])
    total = 0.0
    for f in scene.foliage:
        total += line.intersection(Polygon(f.vertices)).length
    return total


def _foliage_excess_db(seg2d_a, seg2d_b, foliage_polys) -> float:
    if not foliage_polys:
        return 0.0
    line = LineString([seg2d_a, seg2d_b])
    return sum(atten * line.intersection(poly).length
               for poly, atten in foliage_polys)


class PathTracer:
    """Per-scene tracer: precomputes walls, pair visibility, and the BS image
    chain for every admissible wall sequence, then traces users cheaply."""

    def __init__(self, scene: Scene, cfg: RayConfig):
        require_valid(scene)
        self.scene = scene
        self.cfg = cfg
        self.walls = _Walls(scene)
        self.bs2d = np.array(scene.bs.pos[:2], dtype=float)
        self.bs_z = float(scene.bs.pos[2])
        self.foliage_polys = [(Polygon(f.vertices), f.atten_db_per_m)
                              for f in scene.foliage]
        self._pair_ok = self._pair_visibility()
        self.sequences = self._enumerate_sequences()

    # -- precomputation ----------------------------------------------------
    def _pair_visibility(self) -> np.ndarray:
        """Conservative prune: wall j can follow wall i in a sequence only if
        each wall has some part strictly on the other's outer side."""
        w = self.walls
        n = w.count
        ok = np.zeros((n, n), dtype=bool)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                j_outer = max(w.outer_side(w.p0[j], i), w.outer_side(w.p1[j], i))
                i_outer = max(w.outer_side(w.p0[i], j), w.outer_side(w.p1[i], j))
                ok[i, j] = j_outer > _EPS and i_outer > _EPS
        return ok

    def _enumerate_sequences(self):
        """All ordered wall sequences of length 1..max_order whose BS image
        chain is geometrically admissible. Returns (ids tuple, images (k,2))."""
        out = []
        w = self.walls

        def extend(seq, images):
            if len(seq) >= self.cfg.max_order:
                return
            src = images[-1]
            for j in range(w.count):
                if j == seq[-1] or not self._pair_ok[seq[-1], j]:
                    continue
                # the virtual source must illuminate wall j from outside
                if w.outer_side(src, j) <= _EPS:
                    continue
                img = mirror_point(src, (w.p0[j], w.p1[j]))
                out.append((seq + (j,), images + [img]))
                extend(seq + (j,), images + [img])

        if self.cfg.max_order >= 1:
            for i in range(w.count):
                if w.outer_side(self.bs2d, i) <= _EPS:
                    continue
                img = mirror_point(self.bs2d, (w.p0[i], w.p1[i]))
                out.append(((i,), [img]))
                extend((i,), [img])
        return [(ids, np.array(imgs)) for ids, imgs in out]

    # -- tracing -----------------------------------------------------------
    def _backtrack(self, ids, images, user2d):
        """Reflection points for one wall sequence, or None if invalid."""
        w = self.walls
        target = user2d
        pts = []
        for i in range(len(ids) - 1, -1, -1):
            img = images[i]
            wid = ids[i]
            a, b = w.p0[wid], w.p1[wid]
            r = target - img
            s = b - a
            denom = r[0] * s[1] - r[1] * s[0]
            if abs(denom) < 1e-15:
                return None
            qa = a - img
            t = (qa[0] * s[1] - qa[1] * s[0]) / denom  # along img -> target
            u = (qa[0] * r[1] - qa[1] * r[0]) / denom  # along the wall
            if not (_EPS < u < 1.0 - _EPS):  # strictly inside the wall
                return None
            if not (0.0 < t < 1.0):
                return None
            target = img + t * r
            pts.append(target)
        pts.reverse()
        return pts

    def _segment_clear(self, ids, chain) -> bool:
        k = len(ids)
        for i in range(k + 1):
            ignore = []
            if i >= 1:
                ignore.append(ids[i - 1])
            if i < k:
                ignore.append(ids[i])
            if self.walls.blocked(chain[i], chain[i + 1], tuple(ignore)):
                return False
        return True

    def trace(self, user_pos) -> list[PropagationPath]:
        user2d = np.asarray(user_pos, dtype=float)[:2]
        user_z = float(user_pos[2]) if len(user_pos) > 2 else self.scene.grid.user_height
        dh = self.bs_z - user_z
        paths = []
        seen = set()

        def add(order, chain, d2d, refl_pts):
            key = (order,) + tuple((round(p[0] * 1e6), round(p[1] * 1e6))
                                   for p in refl_pts)
            if key in seen:
                return
            seen.add(key)
            length = math.hypot(d2d, dh)
            excess_db = 0.0
            for i in range(len(chain) - 1):
                excess_db += _foliage_excess_db(chain[i], chain[i + 1],
                                                self.foliage_polys)
            gain = path_gain(length, order, excess_db, 1.0, self.cfg)
            v0 = chain[1] - chain[0]
            vN = chain[-2] - chain[-1]
            aod = math.atan2(v0[1], v0[0]) % (2.0 * math.pi)
            aoa = math.atan2(vN[1], vN[0]) % (2.0 * math.pi)
            paths.append(PropagationPath(gain=complex(gain), aod_rad=aod,
                                         aoa_rad=aoa, length_m=length,
                                         order=order,
                                         points=[p.copy() for p in refl_pts]))

        # line of sight
        d_los = float(np.linalg.norm(user2d - self.bs2d))
        if d_los > 1e-12 and not self.walls.blocked(self.bs2d, user2d):
            add(0, [self.bs2d, user2d], d_los, [])

        for ids, images in self.sequences:
            last = ids[-1]
            if self.walls.outer_side(user2d, last) <= _EPS:
                continue
            pts = self._backtrack(ids, images, user2d)
            if pts is None:
                continue
            chain = [self.bs2d] + pts + [user2d]
            if not self._segment_clear(ids, chain):
                continue
            d2d = float(np.linalg.norm(images[-1] - user2d))
            add(len(ids), chain, d2d, pts)

        paths.sort(key=lambda p: (-abs(p.gain), p.order, p.aod_rad))
        return paths[: self.cfg.max_paths]


def trace_paths(scene: Scene, user_pos, cfg: RayConfig) -> list[PropagationPath]:
    """One-shot tracing; build a PathTracer directly when tracing many users."""
    return PathTracer(scene, cfg).trace(user_pos)
