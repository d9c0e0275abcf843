"""Broken bicharacteristic (billiard) flow outside convex obstacles.

Hamiltonian p(z, zeta) = |zeta|^2, so between reflections z' = 2 zeta and
zeta' = 0. At a transversal boundary hit the covector is reflected,
zeta -> zeta - 2 (zeta . n) n. Tangential (glancing) encounters are not
continued: the trajectory stops with a ``glancing_abort`` terminal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .cutoffs import Cutoff
from .geometry import GeometryError, SceneGeometry, closest_points

__all__ = [
    "PhasePoint",
    "HitEvent",
    "Trajectory",
    "SymbolSpec",
    "TrapResult",
    "PeriodicOrbit",
    "GlancingAbort",
    "flow",
    "classify_hit",
    "reflect",
    "trap_integral",
    "escape_time",
    "two_obstacle_periodic_orbit",
    "return_map",
    "return_map_jacobian_fd",
    "GLANCING_TOL",
]

GLANCING_TOL = 1e-6
MAX_REFLECTIONS = 10_000_000

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


class GlancingAbort(RuntimeError):
    def __init__(self, s, point):
        self.s = s
        self.point = point
        super().__init__(f"glancing encounter at s={s:.6g}, z={tuple(np.round(point, 12))}")


@dataclass(frozen=True)
class PhasePoint:
    z: tuple[float, float]
    zeta: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "z", (float(self.z[0]), float(self.z[1])))
        object.__setattr__(self, "zeta", (float(self.zeta[0]), float(self.zeta[1])))
        if not math.hypot(*self.zeta) > 0:
            raise ValueError("zeta must be nonzero")

    @property
    def zv(self):
        return np.array(self.z)

    @property
    def zetav(self):
        return np.array(self.zeta)

    def reversed(self) -> "PhasePoint":
        return PhasePoint(self.z, (-self.zeta[0], -self.zeta[1]))


@dataclass(frozen=True)
class HitEvent:
    s: float
    point: tuple[float, float]
    obstacle: int
    incidence: float
    classification: str


@dataclass
class Segment:
    s0: float
    s1: float
    z0: np.ndarray
    zeta: np.ndarray

    def at(self, s):
        return self.z0 + 2.0 * (s - self.s0) * self.zeta


@dataclass
class Trajectory:
    """Piecewise affine trajectory.

    ``terminal`` is one of ``escaped``, ``time_exhausted``, ``glancing_abort``;
    ``s_end`` is the exit time, s_max, or the glancing time respectively.
    ``free_from`` is the start of the final segment when that segment never
    meets an obstacle again (the ray goes to infinity), else None.
    """

    start: PhasePoint
    segments: list[Segment]
    hits: list[HitEvent]
    terminal: str
    s_end: float
    free_from: float | None = None

    @property
    def samples(self) -> list[tuple[float, PhasePoint]]:
        out = [(0.0, self.start)]
        for seg in self.segments[1:]:
            out.append((seg.s0, PhasePoint(tuple(seg.z0), tuple(seg.zeta))))
        out.append((self.s_end, self.state_at(self.s_end)))
        return out

    def _segment_index(self, s):
        starts = [seg.s0 for seg in self.segments]
        k = int(np.searchsorted(starts, s, side="right")) - 1
        return min(max(k, 0), len(self.segments) - 1)

    def state_at(self, s: float) -> PhasePoint:
        if s < 0 or s > self.s_end + 1e-12:
            raise ValueError(f"s={s} outside [0, {self.s_end}]")
        seg = self.segments[self._segment_index(s)]
        return PhasePoint(tuple(seg.at(s)), tuple(seg.zeta))

    def positions(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        starts = np.array([seg.s0 for seg in self.segments])
        idx = np.clip(np.searchsorted(starts, s, side="right") - 1, 0, len(self.segments) - 1)
        z0 = np.array([seg.z0 for seg in self.segments])[idx]
        ze = np.array([seg.zeta for seg in self.segments])[idx]
        return z0 + 2.0 * (s - starts[idx])[:, None] * ze

    def zeta_norms(self):
        return np.array([math.hypot(*seg.zeta) for seg in self.segments])


def classify_hit(incidence: float, tol: float = GLANCING_TOL) -> str:
    if abs(incidence) > 1.0 + 1e-12:
        raise ValueError("|incidence| must not exceed 1")
    return "glancing" if abs(incidence) < tol else "transversal"


def reflect(zeta, n):
    zeta = np.asarray(zeta, dtype=float)
    n = np.asarray(n, dtype=float)
    return zeta - 2.0 * (zeta @ n) * n


def _ray_hit(obs, p, d):
    """Smallest s > 0 with p + s d on the boundary of ``obs`` (None if missed).

    Works in the obstacle frame scaled to the unit circle, where the
    intersection is a quadratic.
    """
    a, b = obs.semi_axes
    pl = obs.to_local(p) / (a, b)
    c, s_ = math.cos(obs.rotation), math.sin(obs.rotation)
    dl = np.array([c * d[0] + s_ * d[1], -s_ * d[0] + c * d[1]]) / (a, b)
    A = float(dl @ dl)
    B = 2.0 * float(pl @ dl)
    C = float(pl @ pl) - 1.0
    disc = B * B - 4 * A * C
    if disc < 0:
        return None
    sq = math.sqrt(disc)
    q = -0.5 * (B + math.copysign(sq, B))
    roots = []
    if A > 0:
        roots.append(q / A)
    if q != 0:
        roots.append(C / q)
    roots = [r for r in roots if r > 1e-13]
    if not roots:
        return None
    return min(roots)


def _outward_normal_at(obs, point):
    if obs.kind == "disc":
        v = point - obs.c
        return v / math.hypot(*v)
    return obs.normal(obs.parameter_of(point))


def _box_exit(box, p, d):
    xmin, xmax, ymin, ymax = box
    if not (xmin <= p[0] <= xmax and ymin <= p[1] <= ymax):
        return 0.0
    t = math.inf
    if d[0] > 0:
        t = min(t, (xmax - p[0]) / d[0])
    elif d[0] < 0:
        t = min(t, (xmin - p[0]) / d[0])
    if d[1] > 0:
        t = min(t, (ymax - p[1]) / d[1])
    elif d[1] < 0:
        t = min(t, (ymin - p[1]) / d[1])
    return t


def flow(start: PhasePoint, s_max: float, scene: SceneGeometry, glancing_tol: float = GLANCING_TOL,
         stop_on_escape: bool = True, max_reflections: int = MAX_REFLECTIONS) -> Trajectory:
    """Integrate the broken bicharacteristic from ``start`` up to flow time ``s_max``."""
    if not s_max > 0:
        raise ValueError("s_max must be positive")
    z = start.zv
    if scene.obstacles and np.any(scene.inside_any(z[None, :])):
        raise GeometryError(f"start point {start.z} lies inside an obstacle")
    zeta = start.zetav
    s = 0.0
    last = -1
    segments, hits = [], []
    box = scene.box if stop_on_escape else None
    for _ in range(max_reflections + 1):
        d = 2.0 * zeta
        s_hit, k_hit = math.inf, -1
        for k, obs in enumerate(scene.obstacles):
            if k == last:
                continue
            t = _ray_hit(obs, z, d)
            if t is not None and t < s_hit:
                s_hit, k_hit = t, k
        s_box = _box_exit(box, z, d) if box is not None else math.inf
        free = k_hit < 0
        if s + min(s_hit, s_box) >= s_max:
            segments.append(Segment(s, s_max, z, zeta))
            return Trajectory(start, segments, hits, "time_exhausted", s_max, s if free else None)
        if s_box <= s_hit:
            segments.append(Segment(s, s + s_box, z, zeta))
            return Trajectory(start, segments, hits, "escaped", s + s_box, s if free else None)
        s_new = s + s_hit
        p = z + s_hit * d
        obs = scene.obstacles[k_hit]
        n = _outward_normal_at(obs, p)
        inc = float(zeta @ n) / math.hypot(*zeta)
        cls = classify_hit(max(-1.0, min(1.0, inc)), glancing_tol)
        segments.append(Segment(s, s_new, z, zeta))
        hits.append(HitEvent(s_new, (float(p[0]), float(p[1])), k_hit, inc, cls))
        if cls == "glancing":
            return Trajectory(start, segments, hits, "glancing_abort", s_new, None)
        zeta = reflect(zeta, n)
        z, s, last = p, s_new, k_hit
    raise RuntimeError("reflection cap exceeded")


# -- trapping integral ------------------------------------------------------------

@dataclass(frozen=True)
class SymbolSpec:
    """Principal symbol a(z) |zeta|^{1/2} of the order-1/2 observable a(z)|D|^{1/2}."""

    amplitude: Cutoff
    order: float = 0.5

    def principal(self, z, zeta):
        zeta = np.asarray(zeta, dtype=float)
        return self.amplitude(z) * np.linalg.norm(zeta, axis=-1) ** self.order

    def density(self, z, zeta_norm):
        """|sigma_{1/2}|^2 = a(z)^2 |zeta|."""
        return self.amplitude(z) ** 2 * zeta_norm


@dataclass
class TrapResult:
    value: float
    diagnosis: str
    T: float
    window: float
    windows: list[float]
    rate: float | None = None
    period: float | None = None
    per_period: float | None = None
    tail_bound: float | None = None
    escaped_at: float | None = None
    direction: str = "backward"
    trajectory: Trajectory | None = field(default=None, repr=False)
    _cum: np.ndarray | None = field(default=None, repr=False)
    _seg_starts: np.ndarray | None = field(default=None, repr=False)
    _symbol: SymbolSpec | None = field(default=None, repr=False)

    def running(self, s):
        """Running integral from 0 to each time in ``s`` (s <= T)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        return np.array([self._running_scalar(v) for v in s])

    def _running_scalar(self, t):
        k = int(np.searchsorted(self._seg_starts, t, side="right")) - 1
        k = min(max(k, 0), len(self._seg_starts) - 1)
        seg = self.trajectory.segments[k]
        return float(self._cum[k] + _segment_integral(self._symbol, seg, seg.s0, min(t, seg.s1)))


def _clip_to_ball(seg, s0, s1, ball):
    """Sub-interval of [s0, s1] during which the segment is inside ``ball``."""
    if ball is None:
        return s0, s1
    c, R = ball
    w = seg.at(s0) - c
    d = 2.0 * seg.zeta
    A = float(d @ d)
    B = 2.0 * float(w @ d)
    C = float(w @ w) - R * R
    disc = B * B - 4 * A * C
    if disc <= 0:
        return None
    sq = math.sqrt(disc)
    t0 = (-B - sq) / (2 * A)
    t1 = (-B + sq) / (2 * A)
    a, b = max(0.0, t0), min(s1 - s0, t1)
    if a >= b:
        return None
    return s0 + a, s0 + b


def _segment_integral(symbol: SymbolSpec, seg: Segment, s0: float, s1: float) -> float:
    """Integral of a(z(s))^2 |zeta| over [s0, s1] by composite 16-point Gauss-Legendre.

    For plateau cutoffs the stretch inside the plateau (where a = 1) is
    integrated exactly and only the transition zone uses quadrature.
    """
    if s1 <= s0:
        return 0.0
    amp = symbol.amplitude
    zn = math.hypot(*seg.zeta)
    if amp.kind == "constant":
        return (s1 - s0) * zn
    clipped = _clip_to_ball(seg, s0, s1, amp.support_ball())
    if clipped is None:
        return 0.0
    a, b = clipped
    pieces = [(a, b)]
    exact = 0.0
    if amp.kind == "plateau" and amp.inner > 0:
        core = _clip_to_ball(seg, a, b, (np.asarray(amp.center), amp.inner))
        if core is not None:
            exact = (core[1] - core[0]) * zn
            pieces = [(a, core[0]), (core[1], b)]
    # panels no longer than an eighth of the symbol's length scale (in flow time)
    ds_panel = amp.length_scale() / (8.0 * 2.0 * zn)
    total = exact
    for lo, hi in pieces:
        if hi <= lo:
            continue
        npan = min(4096, max(1, int(math.ceil((hi - lo) / ds_panel))))
        edges = np.linspace(lo, hi, npan + 1)
        mid = 0.5 * (edges[1:] + edges[:-1])
        half = 0.5 * (edges[1:] - edges[:-1])
        s = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
        w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
        z = seg.z0[None, :] + 2.0 * (s - seg.s0)[:, None] * seg.zeta[None, :]
        total += float(np.sum(w * symbol.density(z, zn)))
    return total


def _free_tail(symbol: SymbolSpec, seg: Segment, t0: float) -> float:
    """Integral over [t0, inf) along a ray that never meets an obstacle again."""
    amp = symbol.amplitude
    zn = math.hypot(*seg.zeta)
    if amp.compact:
        c, R = amp.support_ball()
        w = seg.at(t0) - c
        d = 2.0 * seg.zeta
        # leaves the support ball for good after the larger root
        A, B, C = d @ d, 2 * w @ d, w @ w - R * R
        disc = B * B - 4 * A * C
        if disc <= 0:
            return 0.0
        t1 = (-B + math.sqrt(disc)) / (2 * A)
        if t1 <= 0:
            return 0.0
        return _segment_integral(symbol, seg, t0, t0 + t1)
    if amp.kind == "constant":
        return math.inf
    if amp.kind == "decay":
        if 2.0 * amp.power <= 1.0:
            return math.inf
        f = lambda t: float(symbol.density(seg.at(t0 + t)[None, :], zn)[0])
        val, _ = quad(f, 0.0, math.inf, limit=500, epsabs=1e-14, epsrel=1e-12)
        return val
    raise ValueError(f"no tail rule for symbol kind {amp.kind!r}")


def _detect_period(traj: Trajectory, tol: float = 1e-9):
    """Return (s_first, s_second) of two hits carrying the same phase state."""
    hits = traj.hits
    segs = traj.segments
    # post-reflection state at hit k is the start of segment k+1
    states = [(np.array(h.point), segs[k + 1].zeta) for k, h in enumerate(hits) if k + 1 < len(segs)]
    for j in range(1, len(states)):
        for i in range(j):
            if (np.allclose(states[i][0], states[j][0], atol=tol, rtol=0)
                    and np.allclose(states[i][1], states[j][1], atol=tol, rtol=0)):
                return hits[i].s, hits[j].s
    return None


def trap_integral(start: PhasePoint, symbol: SymbolSpec, T: float, scene: SceneGeometry,
                  direction: str = "backward", window: float | None = None,
                  tol: float = 1e-10, glancing_tol: float = GLANCING_TOL) -> TrapResult:
    """Evaluate int_0^T |sigma_{1/2}(A)|^2 along the flow and diagnose divergence.

    ``direction='backward'`` integrates along s -> phi_{-s}(start), i.e. the
    forward flow of the reversed covector; ``'forward'`` along phi_s(start).

    Diagnosis:
      divergent       last three window contributions agree within 5% and exceed 1e-8
      convergent      the ray escapes to infinity and the tail past T is finite,
                      or the last three window contributions are all below ``tol``
      glancing_abort  a tangential encounter happened before T
      undetermined    none of the above (increase T)
    """
    if not T > 0:
        raise ValueError("T must be positive")
    if direction not in ("backward", "forward"):
        raise ValueError("direction must be 'backward' or 'forward'")
    launch = start.reversed() if direction == "backward" else start
    zn = math.hypot(*launch.zeta)
    if window is None:
        diam = scene.diameter() if scene.obstacles else 0.0
        window = 4.0 * diam / (2.0 * zn) if diam > 0 else 1.0
    traj = flow(launch, T, scene, glancing_tol=glancing_tol, stop_on_escape=False)

    seg_vals = np.array([_segment_integral(symbol, seg, seg.s0, seg.s1) for seg in traj.segments])
    cum = np.concatenate([[0.0], np.cumsum(seg_vals)])
    value = float(cum[-1])
    res = TrapResult(value=value, diagnosis="undetermined", T=T, window=window, windows=[],
                     direction=direction, trajectory=traj, _cum=cum,
                     _seg_starts=np.array([seg.s0 for seg in traj.segments]), _symbol=symbol)

    s_reached = traj.s_end
    nwin = int(math.floor(s_reached / window + 1e-12))
    edges = np.arange(nwin + 1) * window
    run = res.running(edges) if nwin > 0 else np.array([0.0])
    res.windows = [float(v) for v in np.diff(run)]

    if traj.terminal == "glancing_abort":
        res.diagnosis = "glancing_abort"
        return res

    if traj.free_from is not None:
        res.escaped_at = traj.free_from
        tail = _free_tail(symbol, traj.segments[-1], T)
        res.tail_bound = tail
        res.diagnosis = "convergent" if math.isfinite(tail) else "divergent"
        if not math.isfinite(tail):
            res.rate = _asymptotic_rate(symbol, zn)
        return res

    per = _detect_period(traj)
    if per is not None:
        s_a, s_b = per
        res.period = s_b - s_a
        res.per_period = float(res._running_scalar(s_b) - res._running_scalar(s_a))

    w = res.windows
    if len(w) >= 3:
        last = np.array(w[-3:])
        if np.all(last < tol):
            res.diagnosis = "convergent"
            res.tail_bound = float(np.max(last))
        elif np.min(last) > 1e-8 and (np.max(last) - np.min(last)) <= 0.05 * np.max(last):
            res.diagnosis = "divergent"
            res.rate = float(np.mean(last) / window)
    return res


def _asymptotic_rate(symbol, zn):
    if symbol.amplitude.kind == "constant":
        return zn
    return 0.0


# -- escape -------------------------------------------------------------------

def escape_time(start: PhasePoint, scene: SceneGeometry, R: float, s_cap: float,
                glancing_tol: float = GLANCING_TOL) -> float | None:
    """First flow time with |z(s)| > R, or None if the ray is still inside at ``s_cap``."""
    if scene.obstacles and R <= scene.enclosing_radius():
        raise ValueError("R must exceed the radius of the scene")
    traj = flow(start, s_cap, scene, glancing_tol=glancing_tol, stop_on_escape=False)
    if traj.terminal == "glancing_abort":
        raise GlancingAbort(traj.s_end, np.array(traj.hits[-1].point))
    for seg in traj.segments:
        d = 2.0 * seg.zeta
        A = float(d @ d)
        B = 2.0 * float(seg.z0 @ d)
        C = float(seg.z0 @ seg.z0) - R * R
        if C > 0:
            return seg.s0
        t = (-B + math.sqrt(B * B - 4 * A * C)) / (2 * A)
        if seg.s0 + t <= seg.s1:
            return seg.s0 + t
    return None


# -- periodic orbits ------------------------------------------------------------

@dataclass
class PeriodicOrbit:
    obstacles: tuple[int, int]
    endpoints: tuple[tuple[float, float], tuple[float, float]]
    gap: float
    period: float
    linearization: np.ndarray
    eigenvalues: np.ndarray

    def to_dict(self) -> dict:
        return {
            "obstacles": list(self.obstacles),
            "endpoints": [list(p) for p in self.endpoints],
            "gap": self.gap,
            "period": self.period,
            "linearization": self.linearization.tolist(),
            "eigenvalues": [float(v) for v in self.eigenvalues.real],
            "determinant": float(np.linalg.det(self.linearization)),
            "hyperbolic": bool(np.all(np.abs(self.eigenvalues.imag) == 0)
                               and abs(abs(self.eigenvalues[0]) - 1) > 1e-12),
        }


def _bounce_jacobian(tau, k0, k1, phi0, phi1):
    """Differential of the billiard map in (arc length, angle) coordinates.

    Both boundaries are convex (dispersing); arc length runs counterclockwise
    around each obstacle and angles are measured counterclockwise from the
    outward normal.
    """
    c0, c1 = math.cos(phi0), math.cos(phi1)
    return np.array([
        [-(tau * k0 + c0) / c1, -tau / c1],
        [-(tau * k0 * k1 + k0 * c1 + k1 * c0) / c1, -(tau * k1 + c1) / c1],
    ])


def two_obstacle_periodic_orbit(scene: SceneGeometry, i: int, j: int) -> PeriodicOrbit:
    """The 2-bounce orbit along the segment realising dist(obstacle i, obstacle j).

    Period is the flow time of one round trip with |zeta| = 1 (speed 2),
    which equals the gap. The linearization is the differential of the
    return map i -> j -> i in (arc length, angle) coordinates.
    """
    if i == j:
        raise ValueError("need two distinct obstacles")
    A, B = scene.obstacles[i], scene.obstacles[j]
    gap, p, q = closest_points(A, B)
    if not gap > 0:
        raise GeometryError("obstacles overlap")
    # the closest pair must be mutually normal
    n_p = _outward_normal_at(A, p)
    n_q = _outward_normal_at(B, q)
    e = (q - p) / gap
    if not (np.allclose(n_p, e, atol=1e-7) and np.allclose(n_q, -e, atol=1e-7)):
        raise RuntimeError("closest-point minimisation did not converge to a common normal")
    kp = float(A.curvature(A.parameter_of(p))) if A.kind != "disc" else 1.0 / A.radius
    kq = float(B.curvature(B.parameter_of(q))) if B.kind != "disc" else 1.0 / B.radius
    J1 = _bounce_jacobian(gap, kp, kq, 0.0, 0.0)
    J2 = _bounce_jacobian(gap, kq, kp, 0.0, 0.0)
    J = J2 @ J1
    ev = np.linalg.eigvals(J)
    ev = ev[np.argsort(-np.abs(ev))]
    if np.all(np.abs(ev.imag) < 1e-12):
        ev = ev.real.astype(complex)
    return PeriodicOrbit((i, j), (tuple(map(float, p)), tuple(map(float, q))), float(gap),
                         float(gap), J, ev)


def _arclength_to_param(obs, theta_ref, r):
    if obs.kind == "disc":
        return theta_ref + r / obs.radius
    f = lambda t: quad(lambda u: float(obs.speed(u)), theta_ref, t, epsabs=1e-15, epsrel=1e-14)[0] - r
    guess = theta_ref + r / float(obs.speed(theta_ref))
    h = 4 * abs(r) / float(np.min(obs.semi_axes)) + 1e-12
    return brentq(f, guess - h, guess + h, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def _param_to_arclength(obs, theta_ref, theta):
    dt = (theta - theta_ref + math.pi) % (2 * math.pi) - math.pi
    if obs.kind == "disc":
        return obs.radius * dt
    return quad(lambda u: float(obs.speed(u)), theta_ref, theta_ref + dt, epsabs=1e-15, epsrel=1e-14)[0]


def _signed_angle(n, d):
    return math.atan2(n[0] * d[1] - n[1] * d[0], n @ d)


def _bounce(scene, src, dst, theta_src_ref, theta_dst_ref, r, phi):
    A, B = scene.obstacles[src], scene.obstacles[dst]
    th = _arclength_to_param(A, theta_src_ref, r)
    p = A.boundary_point(th)
    n = A.normal(th)
    c, s = math.cos(phi), math.sin(phi)
    d = np.array([c * n[0] - s * n[1], s * n[0] + c * n[1]])
    t = _ray_hit(B, p, d)
    if t is None:
        raise RuntimeError("return map left the orbit neighbourhood")
    qpt = p + t * d
    thq = float(B.parameter_of(qpt))
    nq = B.normal(thq)
    d_out = reflect(d, nq)
    return _param_to_arclength(B, theta_dst_ref, thq), _signed_angle(nq, d_out)


def return_map(scene: SceneGeometry, orbit: PeriodicOrbit, r: float, phi: float):
    """Boundary-to-boundary return map i -> j -> i near the orbit foot point on i."""
    i, j = orbit.obstacles
    A, B = scene.obstacles[i], scene.obstacles[j]
    th_i = float(A.parameter_of(np.array(orbit.endpoints[0])))
    th_j = float(B.parameter_of(np.array(orbit.endpoints[1])))
    r1, phi1 = _bounce(scene, i, j, th_i, th_j, r, phi)
    return _bounce(scene, j, i, th_j, th_i, r1, phi1)


def return_map_jacobian_fd(scene: SceneGeometry, orbit: PeriodicOrbit, step: float = 1e-5,
                           richardson: bool = True) -> np.ndarray:
    """Central finite-difference Jacobian of ``return_map`` at the orbit (0, 0)."""

    def central(h):
        J = np.empty((2, 2))
        for col, (dr, dp) in enumerate(((h, 0.0), (0.0, h))):
            fp = np.array(return_map(scene, orbit, dr, dp))
            fm = np.array(return_map(scene, orbit, -dr, -dp))
            J[:, col] = (fp - fm) / (2 * h)
        return J

    J = central(step)
    if richardson:
        J = (4.0 * central(step / 2) - J) / 3.0
    return J
