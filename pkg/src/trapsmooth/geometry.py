"""Planar scenes made of strictly convex obstacles (discs and ellipses).

Provides boundary data (points, outward normals, curvature), signed
distances, pairwise gaps, and the geometric hypotheses used for the
weak-smoothing results: the convex-hull separation of obstacle triples and
the hyperbolicity condition ``kappa * L > N``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

__all__ = [
    "Obstacle",
    "SceneGeometry",
    "GeometryReport",
    "BoundaryProjection",
    "GeometryError",
    "FootPointError",
    "make_disc",
    "make_ellipse",
    "make_scene",
    "signed_distance_and_normal",
    "curvature_infimum",
    "pairwise_gap",
    "closest_points",
    "pairwise_gap_infimum",
    "convex_hull_separation",
    "check_ikawa",
]

FOOTPOINT_TOL = 1e-12
FOOTPOINT_MAXITER = 50


class GeometryError(ValueError):
    """Invalid obstacle or scene."""


class FootPointError(GeometryError):
    def __init__(self, point, message="foot-point iteration did not converge"):
        self.point = tuple(float(c) for c in point)
        super().__init__(f"{message} at z={self.point}")


class BoundaryProjection(NamedTuple):
    distance: float
    normal: np.ndarray
    foot: np.ndarray
    singular: bool


def _rot(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Obstacle:
    """A disc or an ellipse. Immutable.

    For a disc ``semi_axes == (r, r)`` and ``rotation == 0``.
    """

    kind: str
    center: tuple[float, float]
    semi_axes: tuple[float, float]
    rotation: float = 0.0

    def __post_init__(self):
        if self.kind not in ("disc", "ellipse"):
            raise GeometryError(f"unknown obstacle kind {self.kind!r}")
        a, b = self.semi_axes
        if not (a > 0 and b > 0 and math.isfinite(a) and math.isfinite(b)):
            raise GeometryError(f"semi-axes must be positive, got {self.semi_axes}")

    @property
    def radius(self) -> float:
        if self.kind != "disc":
            raise AttributeError("only discs have a radius")
        return self.semi_axes[0]

    @property
    def c(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)

    @property
    def circumradius(self) -> float:
        return max(self.semi_axes)

    # -- parametrisation -------------------------------------------------
    def boundary_point(self, theta):
        theta = np.asarray(theta, dtype=float)
        a, b = self.semi_axes
        local = np.stack([a * np.cos(theta), b * np.sin(theta)], axis=-1)
        return self.c + local @ _rot(self.rotation).T

    def tangent(self, theta):
        """Derivative of the boundary point with respect to ``theta``."""
        theta = np.asarray(theta, dtype=float)
        a, b = self.semi_axes
        local = np.stack([-a * np.sin(theta), b * np.cos(theta)], axis=-1)
        return local @ _rot(self.rotation).T

    def normal(self, theta):
        theta = np.asarray(theta, dtype=float)
        a, b = self.semi_axes
        local = np.stack([b * np.cos(theta), a * np.sin(theta)], axis=-1)
        local = local / np.linalg.norm(local, axis=-1, keepdims=True)
        return local @ _rot(self.rotation).T

    def curvature(self, theta):
        theta = np.asarray(theta, dtype=float)
        a, b = self.semi_axes
        return a * b / (a * a * np.sin(theta) ** 2 + b * b * np.cos(theta) ** 2) ** 1.5

    def speed(self, theta):
        """|d(boundary point)/d theta|, i.e. arc length per unit parameter."""
        theta = np.asarray(theta, dtype=float)
        a, b = self.semi_axes
        return np.hypot(a * np.sin(theta), b * np.cos(theta))

    def to_local(self, z):
        z = np.asarray(z, dtype=float)
        return (z - self.c) @ _rot(self.rotation)

    def parameter_of(self, p):
        """Boundary parameter of a point on (or near) the boundary."""
        x, y = np.moveaxis(self.to_local(p), -1, 0)
        a, b = self.semi_axes
        return np.arctan2(y / b, x / a)

    def implicit(self, z):
        """(x/a)^2 + (y/b)^2 - 1 in the local frame; negative inside."""
        x, y = np.moveaxis(self.to_local(z), -1, 0)
        a, b = self.semi_axes
        return (x / a) ** 2 + (y / b) ** 2 - 1.0

    def contains(self, z):
        return self.implicit(z) <= 0.0

    def support(self, u):
        """Support function h(u) = max_{p in obstacle} p.u for unit vectors ``u``."""
        u = np.asarray(u, dtype=float)
        a, b = self.semi_axes
        ul = u @ _rot(self.rotation)
        return u @ self.c + np.hypot(a * ul[..., 0], b * ul[..., 1])

    def min_curvature(self, samples: int = 2048) -> float:
        """Infimum of the boundary curvature, by sampling then bounded refinement."""
        if self.kind == "disc":
            return 1.0 / self.radius
        theta = np.linspace(0.0, 2 * np.pi, samples, endpoint=False)
        k = self.curvature(theta)
        i = int(np.argmin(k))
        h = 2 * np.pi / samples
        res = minimize_scalar(
            lambda t: float(self.curvature(t)),
            bounds=(theta[i] - h, theta[i] + h),
            method="bounded",
            options={"xatol": 1e-12},
        )
        return float(min(res.fun, k[i]))

    def moved(self, rotation: float = 0.0, shift=(0.0, 0.0)) -> "Obstacle":
        """Image under the rigid motion z -> R(rotation) z + shift."""
        c = _rot(rotation) @ self.c + np.asarray(shift, dtype=float)
        return Obstacle(self.kind, (float(c[0]), float(c[1])), self.semi_axes,
                        0.0 if self.kind == "disc" else self.rotation + rotation)


def make_disc(center, radius) -> Obstacle:
    radius = float(radius)
    if not radius > 0:
        raise GeometryError(f"disc radius must be positive, got {radius}")
    cx, cy = (float(v) for v in center)
    return Obstacle("disc", (cx, cy), (radius, radius), 0.0)


def make_ellipse(center, semi_axes, rotation=0.0) -> Obstacle:
    a, b = (float(v) for v in semi_axes)
    if not (a > 0 and b > 0):
        raise GeometryError(f"ellipse semi-axes must be positive, got {(a, b)}")
    cx, cy = (float(v) for v in center)
    return Obstacle("ellipse", (cx, cy), (a, b), float(rotation))


# -- distances ---------------------------------------------------------------

def _ellipse_foot_parameter(obs: Obstacle, z) -> float:
    """Boundary parameter of the closest boundary point to ``z``.

    Newton on d/dtheta |p(theta) - z|^2 / 2 = 0, started from the best of a
    coarse sample; falls back to bisection on a bracketing interval.
    """
    a, b = obs.semi_axes
    x, y = obs.to_local(z)

    def g(t):  # derivative of half squared distance
        return (a * math.cos(t) - x) * (-a * math.sin(t)) + (b * math.sin(t) - y) * (b * math.cos(t))

    def dg(t):
        st, ct = math.sin(t), math.cos(t)
        return (a * a * st * st + b * b * ct * ct
                + (a * ct - x) * (-a * ct) + (b * st - y) * (-b * st))

    ts = np.linspace(-np.pi, np.pi, 129)
    d2 = (a * np.cos(ts) - x) ** 2 + (b * np.sin(ts) - y) ** 2
    t = float(ts[int(np.argmin(d2))])
    h = ts[1] - ts[0]
    lo, hi = t - h, t + h
    scale = max(a, b) ** 2

    for _ in range(FOOTPOINT_MAXITER):
        gt = g(t)
        if abs(gt) <= FOOTPOINT_TOL * scale:
            return t
        d = dg(t)
        step = gt / d if d > 0 else 0.0
        tn = t - step
        if d <= 0 or not (lo <= tn <= hi):
            break
        t = tn
    # bisection fallback on the bracket around the coarse minimum
    glo, ghi = g(lo), g(hi)
    if glo * ghi > 0:
        raise FootPointError(z)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if abs(gm) <= FOOTPOINT_TOL * scale or hi - lo < 1e-15:
            return mid
        if glo * gm <= 0:
            hi, ghi = mid, gm
        else:
            lo, glo = mid, gm
    raise FootPointError(z)


def signed_distance_and_normal(obstacle: Obstacle, z) -> BoundaryProjection:
    """Signed distance to the boundary (negative inside) and the outward normal.

    The normal is the boundary normal at the foot point. At the centre of a
    disc the foot point is not unique; the normal (1, 0) is returned and
    ``singular`` is set.
    """
    z = np.asarray(z, dtype=float)
    if obstacle.kind == "disc":
        v = z - obstacle.c
        r = float(np.hypot(*v))
        if r == 0.0:
            n = np.array([1.0, 0.0])
            return BoundaryProjection(-obstacle.radius, n, obstacle.c + obstacle.radius * n, True)
        n = v / r
        return BoundaryProjection(r - obstacle.radius, n, obstacle.c + obstacle.radius * n, False)

    t = _ellipse_foot_parameter(obstacle, z)
    foot = obstacle.boundary_point(t)
    n = obstacle.normal(t)
    d = float(np.hypot(*(z - foot)))
    inside = obstacle.implicit(z) < 0
    singular = False
    if inside:
        # medial-axis points have several feet; flag only exact centres
        singular = bool(np.allclose(z, obstacle.c, atol=0.0, rtol=0.0))
    return BoundaryProjection(-d if inside else d, n, foot, singular)


# -- scenes --------------------------------------------------------------------

@dataclass(frozen=True)
class SceneGeometry:
    """Finite union of pairwise disjoint convex obstacles plus a bounding box.

    ``box`` is ``(xmin, xmax, ymin, ymax)``; ``None`` means unbounded (only
    allowed for scenes used by the ray tracer).
    """

    obstacles: tuple[Obstacle, ...]
    box: tuple[float, float, float, float] | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.box is not None:
            xmin, xmax, ymin, ymax = (float(v) for v in self.box)
            if not (xmin < xmax and ymin < ymax):
                raise GeometryError(f"degenerate bounding box {self.box}")
            object.__setattr__(self, "box", (xmin, xmax, ymin, ymax))
            for k, obs in enumerate(self.obstacles):
                lo, hi = obstacle_bbox(obs)
                if lo[0] <= xmin or hi[0] >= xmax or lo[1] <= ymin or hi[1] >= ymax:
                    raise GeometryError(f"obstacle {k} is not strictly inside the bounding box")
        for i, j in itertools.combinations(range(len(self.obstacles)), 2):
            gap = pairwise_gap(self.obstacles[i], self.obstacles[j])
            if not gap > 0:
                raise GeometryError(f"obstacles {i} and {j} overlap or touch (gap {gap:.3g})")

    @property
    def N(self) -> int:
        return len(self.obstacles)

    def inside_any(self, pts):
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[:-1], dtype=bool)
        for obs in self.obstacles:
            out |= obs.contains(pts)
        return out

    def hull_bbox(self):
        """Axis-aligned bounding box of the union of obstacles."""
        if not self.obstacles:
            return None
        lows, highs = zip(*(obstacle_bbox(o) for o in self.obstacles))
        lo = np.min(lows, axis=0)
        hi = np.max(highs, axis=0)
        return (float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]))

    def diameter(self) -> float:
        """Diameter of the union of obstacles (0 for an empty scene)."""
        if not self.obstacles:
            return 0.0
        u = np.stack([np.cos(np.linspace(0, np.pi, 721)), np.sin(np.linspace(0, np.pi, 721))], axis=-1)
        h_plus = np.max([o.support(u) for o in self.obstacles], axis=0)
        h_minus = np.max([o.support(-u) for o in self.obstacles], axis=0)
        return float(np.max(h_plus + h_minus))

    def enclosing_radius(self) -> float:
        """Radius of the smallest origin-centred disc containing every obstacle."""
        if not self.obstacles:
            return 0.0
        return max(float(np.hypot(*o.c)) + o.circumradius for o in self.obstacles)

    def moved(self, rotation=0.0, shift=(0.0, 0.0)) -> "SceneGeometry":
        obs = tuple(o.moved(rotation, shift) for o in self.obstacles)
        box = None
        if self.box is not None:
            margin = _box_margin(self)
            box = _padded_box(obs, margin)
        return SceneGeometry(obs, box, self.name)


def obstacle_bbox(obs: Obstacle):
    ex = np.array([1.0, 0.0])
    ey = np.array([0.0, 1.0])
    hx, hxm = obs.support(ex), obs.support(-ex)
    hy, hym = obs.support(ey), obs.support(-ey)
    return np.array([-hxm, -hym]), np.array([hx, hy])


def _padded_box(obstacles, margin):
    lows, highs = zip(*(obstacle_bbox(o) for o in obstacles))
    lo = np.min(lows, axis=0) - margin
    hi = np.max(highs, axis=0) + margin
    return (float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]))


def _box_margin(scene):
    hb = scene.hull_bbox()
    b = scene.box
    return min(hb[0] - b[0], b[1] - hb[1], hb[2] - b[2], b[3] - hb[3])


def make_scene(obstacles: Sequence[Obstacle], margin: float = 2.0, box=None, name: str = "") -> SceneGeometry:
    """Build a scene; the box defaults to the obstacles' bounding box padded by ``margin``."""
    obstacles = tuple(obstacles)
    if box is None and obstacles:
        if not margin > 0:
            raise GeometryError("margin must be positive")
        box = _padded_box(obstacles, margin)
    return SceneGeometry(obstacles, box, name)


# -- pairwise gaps -----------------------------------------------------------

def _gap_support_dual(A: Obstacle, B: Obstacle, samples: int = 4096) -> float:
    """dist(A, B) = max_u [ -h_B(-u) - h_A(u) ] for disjoint convex sets."""
    ang = np.linspace(0, 2 * np.pi, samples, endpoint=False)

    def sep(t):
        u = np.array([math.cos(t), math.sin(t)])
        return float(-B.support(-u) - A.support(u))

    u = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    vals = -B.support(-u) - A.support(u)
    i = int(np.argmax(vals))
    h = ang[1] - ang[0]
    res = minimize_scalar(lambda t: -sep(t), bounds=(ang[i] - h, ang[i] + h),
                          method="bounded", options={"xatol": 1e-13})
    return max(float(vals[i]), -float(res.fun))


def _gap_alternating(A: Obstacle, B: Obstacle, maxiter: int = 2000, tol: float = 1e-14):
    """Closest boundary points by alternating projection; returns (gap, pA, pB, converged)."""
    p = signed_distance_and_normal(A, B.c).foot
    q = signed_distance_and_normal(B, p).foot
    last = np.inf
    for _ in range(maxiter):
        p = signed_distance_and_normal(A, q).foot
        q = signed_distance_and_normal(B, p).foot
        d = float(np.hypot(*(p - q)))
        if abs(last - d) <= tol * max(1.0, d):
            return d, p, q, True
        last = d
    return last, p, q, False


def closest_points(A: Obstacle, B: Obstacle):
    """Closest pair of boundary points between two disjoint obstacles."""
    if A.kind == "disc" and B.kind == "disc":
        v = B.c - A.c
        dist = float(np.hypot(*v))
        e = v / dist
        return dist - A.radius - B.radius, A.c + A.radius * e, B.c - B.radius * e
    if A.contains(B.c) or B.contains(A.c):
        return -1.0, A.c, B.c
    d, p, q, ok = _gap_alternating(A, B)
    if not ok or d <= 0:
        d_dual = _gap_support_dual(A, B)
        if d_dual <= 0:
            return d_dual, p, q
        d = d_dual
    return d, p, q


def pairwise_gap(A: Obstacle, B: Obstacle) -> float:
    """Euclidean distance between two obstacles; <= 0 when they intersect."""
    if A.kind == "disc" and B.kind == "disc":
        return float(np.hypot(*(B.c - A.c))) - A.radius - B.radius
    # cheap overlap screen: sampled boundary of one inside the other
    ts = np.linspace(0, 2 * np.pi, 512, endpoint=False)
    if np.any(B.contains(A.boundary_point(ts))) or np.any(A.contains(B.boundary_point(ts))):
        return -_overlap_depth(A, B)
    return float(closest_points(A, B)[0])


def _overlap_depth(A, B):
    ts = np.linspace(0, 2 * np.pi, 512, endpoint=False)
    pa = A.boundary_point(ts)
    inside = B.contains(pa)
    depth = 0.0
    for p in pa[inside]:
        depth = max(depth, -signed_distance_and_normal(B, p).distance)
    return max(depth, 1e-300)


def pairwise_gap_infimum(scene: SceneGeometry) -> float:
    if scene.N < 2:
        raise GeometryError("pairwise gap needs at least two obstacles")
    best = math.inf
    for i, j in itertools.combinations(range(scene.N), 2):
        g = pairwise_gap(scene.obstacles[i], scene.obstacles[j])
        if g <= 0:
            raise GeometryError(f"obstacles {i} and {j} overlap")
        best = min(best, g)
    return best


def curvature_infimum(scene: SceneGeometry) -> float:
    return min(o.min_curvature() for o in scene.obstacles)


# -- convex hull condition ---------------------------------------------------

def _disc_hull_clearance(ci, ri, cj, rj, ck, rk) -> float:
    """Distance from disc k to conv(D_i u D_j), negative if they meet.

    conv(D_i u D_j) is the union over t in [0,1] of the discs with centre
    (1-t)c_i + t c_j and radius (1-t)r_i + t r_j, so the clearance is
    min_t |c_k - c(t)| - r(t) - r_k, a convex problem in t solved in closed form.
    """
    d = cj - ci
    ld = float(np.hypot(*d))
    e = d / ld
    w = ck - ci
    a = float(w @ e)
    rho = abs(float(w[0] * e[1] - w[1] * e[0]))
    beta = (rj - ri) / ld
    s = a + beta * rho / math.sqrt(1.0 - beta * beta)
    s = min(max(s, 0.0), ld)
    g = math.hypot(rho, a - s) - (ri + beta * s)
    return g - rk


def _support_hull_clearance(A: Obstacle, B: Obstacle, K: Obstacle, samples: int = 4096) -> float:
    """max_u [ -h_K(-u) - max(h_A(u), h_B(u)) ]: positive iff K misses conv(A u B)."""
    ang = np.linspace(0, 2 * np.pi, samples, endpoint=False)

    def sep(t):
        u = np.array([math.cos(t), math.sin(t)])
        return float(-K.support(-u) - max(A.support(u), B.support(u)))

    u = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    vals = -K.support(-u) - np.maximum(A.support(u), B.support(u))
    i = int(np.argmax(vals))
    h = ang[1] - ang[0]
    res = minimize_scalar(lambda t: -sep(t), bounds=(ang[i] - h, ang[i] + h),
                          method="bounded", options={"xatol": 1e-13})
    return max(float(vals[i]), -float(res.fun))


def convex_hull_separation(A: Obstacle, B: Obstacle, K: Obstacle) -> float:
    """Signed clearance between K and the convex hull of A u B (> 0 means disjoint).

    For three discs this is the exact Euclidean distance; otherwise it is the
    separating-line margin from support functions, which has the same sign.
    """
    if A.kind == B.kind == K.kind == "disc":
        return _disc_hull_clearance(A.c, A.radius, B.c, B.radius, K.c, K.radius)
    return _support_hull_clearance(A, B, K)


@dataclass
class GeometryReport:
    kappa: float
    L: float | None
    N: int
    convex_hull_ok: dict = field(default_factory=dict)
    kappa_L: float | None = None
    kappa_L_boundary: bool = False
    ikawa_ok: bool = False

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "L": self.L,
            "N": self.N,
            "kappa_L": self.kappa_L,
            "kappa_L_boundary": self.kappa_L_boundary,
            "convex_hull_ok": {k: bool(v) for k, v in sorted(self.convex_hull_ok.items())},
            "ikawa_ok": bool(self.ikawa_ok),
        }


def check_ikawa(scene: SceneGeometry) -> GeometryReport:
    """Evaluate the geometric hypotheses; failures are carried in the report.

    ``kappa * L > N`` is required strictly (only for N > 2); the equality case
    is flagged via ``kappa_L_boundary``.
    """
    N = scene.N
    kappa = curvature_infimum(scene) if N else math.inf
    L = pairwise_gap_infimum(scene) if N >= 2 else None
    hull = {}
    for i, j in itertools.combinations(range(N), 2):
        for k in range(N):
            if k in (i, j):
                continue
            clearance = convex_hull_separation(scene.obstacles[i], scene.obstacles[j], scene.obstacles[k])
            hull[f"{i},{j},{k}"] = clearance > 0
    kl = kappa * L if L is not None else None
    boundary = False
    if N > 2:
        boundary = math.isclose(kl, N, rel_tol=1e-12, abs_tol=0.0)
        strength_ok = kl > N and not boundary
    else:
        strength_ok = True
    ok = all(hull.values()) and strength_ok
    return GeometryReport(kappa, L, N, hull, kl, boundary, ok)
