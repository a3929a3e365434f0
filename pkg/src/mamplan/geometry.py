"""Convex polytope algebra and continuous-time disc collision queries.

Polytopes are halfspace intersections {x : Hx <= b}. Everything here is
value-semantics numpy: no caller-visible mutation, safe to share across
threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Polytope:
    """Halfspace set {x : Hx <= b}; H is (faces, dim), b is (faces,)."""

    H: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        b = np.asarray(self.b, dtype=float).ravel()
        if H.shape[0] != b.shape[0]:
            raise ValueError(f"H has {H.shape[0]} rows but b has {b.shape[0]} entries")
        norms = np.linalg.norm(H, axis=1)
        if np.any(norms == 0.0):
            raise ValueError("every H row must be nonzero")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    @property
    def n_faces(self) -> int:
        return self.H.shape[0]

    def contains(self, x, tol: float = 1e-9):
        """Membership test; x may be a point (dim,) or points (..., dim)."""
        x = np.asarray(x, dtype=float)
        return np.all(x @ self.H.T <= self.b + tol, axis=-1)

    def to_dict(self) -> dict:
        return {"H": self.H.tolist(), "b": self.b.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "Polytope":
        return Polytope(np.asarray(d["H"], dtype=float), np.asarray(d["b"], dtype=float))

    @staticmethod
    def box(lo, hi) -> "Polytope":
        """Axis-aligned box [lo, hi]."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ValueError(f"bad box bounds lo={lo}, hi={hi}")
        d = lo.size
        eye = np.eye(d)
        return Polytope(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))


@dataclass(frozen=True)
class MovingObstacle:
    """A region occupied during the time window [t_lb, t_ub]."""

    region: Polytope
    t_lb: float
    t_ub: float

    def __post_init__(self):
        if self.t_lb > self.t_ub:
            raise ValueError(f"t_lb={self.t_lb} > t_ub={self.t_ub}")


def bloat_polytope(obs: Polytope, l: float) -> Polytope:
    """Offset every face of ``obs`` outward by ``l``: b_i -> b_i + ||H_i|| * l."""
    if l < 0:
        raise ValueError("bloat amount must be >= 0")
    norms = np.linalg.norm(obs.H, axis=1)
    return Polytope(obs.H, obs.b + norms * l)


def ball_inner_polytope(r: float, n: int = 8, dim: int = 2) -> Polytope:
    """Polytope contained in the radius-r ball around the origin.

    2D: regular n-gon with vertices on the circle (faces at distance
    r*cos(pi/n)). 3D: an n-sided prism scaled so all vertices stay inside
    the sphere.
    """
    if r <= 0:
        raise ValueError("r must be > 0")
    if dim == 2:
        if n < 3:
            raise ValueError("need n >= 3 faces in 2D")
        ang = 2.0 * np.pi * np.arange(n) / n
        H = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return Polytope(H, np.full(n, r * math.cos(math.pi / n)))
    if dim == 3:
        if n < 4:
            raise ValueError("need n >= 4 lateral faces in 3D")
        # Prism: lateral n-gon plus z-caps, balanced so the extreme
        # vertices sit at radius r (lateral vertex ring and cap corners
        # coincide at sqrt((a/cos(pi/n))^2 + c^2) = r).
        c = r / math.sqrt(2.0)
        a = c * math.cos(math.pi / n)
        ang = 2.0 * np.pi * np.arange(n) / n
        lateral = np.stack([np.cos(ang), np.sin(ang), np.zeros(n)], axis=1)
        caps = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
        H = np.vstack([lateral, caps])
        b = np.concatenate([np.full(n, a), [c, c]])
        return Polytope(H, b)
    raise ValueError(f"unsupported dim {dim}")


def ball_outer_polytope(r: float, n: int = 8, dim: int = 2) -> Polytope:
    """Polytope containing the radius-r ball, faces tangent at distance r.

    r = 0 degenerates to the single point {0}; callers treating r as a
    minimum-speed bound should skip the disjunction instead (a zero
    minimum speed constrains nothing).
    """
    if r < 0:
        raise ValueError("r must be >= 0")
    if dim == 2:
        if n < 3:
            raise ValueError("need n >= 3 faces in 2D")
        ang = 2.0 * np.pi * np.arange(n) / n
        H = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return Polytope(H, np.full(n, r))
    if dim == 3:
        if n < 4:
            raise ValueError("need n >= 4 lateral faces in 3D")
        ang = 2.0 * np.pi * np.arange(n) / n
        lateral = np.stack([np.cos(ang), np.sin(ang), np.zeros(n)], axis=1)
        caps = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
        H = np.vstack([lateral, caps])
        return Polytope(H, np.full(n + 2, r))
    raise ValueError(f"unsupported dim {dim}")


def segment_tube(p_a, p_b, l: float) -> Polytope:
    """Polytope covering the radius-l ball swept along segment (p_a, p_b).

    2D: rectangle aligned with the segment. 3D: octagonal prism around the
    axis, capped l beyond each endpoint. Degenerate segments fall back to
    the axis-aligned bounding box of the ball.
    """
    if l <= 0:
        raise ValueError("tube radius must be > 0")
    p_a = np.asarray(p_a, dtype=float)
    p_b = np.asarray(p_b, dtype=float)
    d = p_a.size
    delta = p_b - p_a
    length = float(np.linalg.norm(delta))
    if length < 1e-12:
        return Polytope.box(p_a - l, p_a + l)
    u = delta / length
    caps_H = np.stack([u, -u])
    caps_b = np.array([u @ p_b + l, -(u @ p_a) + l])
    if d == 2:
        n = np.array([-u[1], u[0]])
        lat_H = np.stack([n, -n])
        lat_b = np.array([n @ p_a + l, -(n @ p_a) + l])
    elif d == 3:
        # Octagon circumscribing the radius-l circle in the plane normal
        # to the axis; normals built from any orthonormal pair (n1, n2).
        pick = np.argmin(np.abs(u))
        e = np.zeros(3)
        e[pick] = 1.0
        n1 = np.cross(u, e)
        n1 /= np.linalg.norm(n1)
        n2 = np.cross(u, n1)
        ang = 2.0 * np.pi * np.arange(8) / 8
        lat_H = np.outer(np.cos(ang), n1) + np.outer(np.sin(ang), n2)
        lat_b = lat_H @ p_a + l
    else:
        raise ValueError(f"unsupported dim {d}")
    return Polytope(np.vstack([lat_H, caps_H]), np.concatenate([lat_b, caps_b]))


def _quadratic_entry_time(d0, vd, R, t0, dt):
    """Earliest t in [t0, t0+dt] with ||d0 + (t-t0) vd|| <= R, else None."""
    c0 = float(d0 @ d0) - R * R
    if c0 <= 0.0:
        return t0
    a = float(vd @ vd)
    bq = 2.0 * float(d0 @ vd)
    if a < 1e-16:
        return None
    disc = bq * bq - 4.0 * a * c0
    if disc < 0.0:
        return None
    s = (-bq - math.sqrt(disc)) / (2.0 * a)
    if 0.0 <= s <= dt:
        return t0 + s
    return None


def earliest_disc_collision(path_a, r_a: float, path_b, r_b: float):
    """Earliest time two discs following PWL paths come within r_a + r_b.

    Paths are compared over the union of their knot grids; an agent whose
    path has ended is parked at its final waypoint. Returns the exact
    first-contact time (per-interval quadratic roots) or None.
    """
    R = r_a + r_b
    t_end = max(path_a.t_end, path_b.t_end)
    knots = np.unique(np.concatenate([path_a.times, path_b.times, [0.0, t_end]]))
    knots = knots[knots <= t_end + 1e-12]
    for t0, t1 in zip(knots[:-1], knots[1:]):
        dt = float(t1 - t0)
        if dt <= 0.0:
            continue
        pa0 = path_a.position(t0)
        pb0 = path_b.position(t0)
        pa1 = path_a.position(t1)
        pb1 = path_b.position(t1)
        d0 = pa0 - pb0
        vd = ((pa1 - pb1) - d0) / dt
        t_hit = _quadratic_entry_time(d0, vd, R, float(t0), dt)
        if t_hit is not None:
            return t_hit
    # Both parked from t_end on.
    if np.linalg.norm(path_a.position(t_end) - path_b.position(t_end)) <= R:
        return float(t_end)
    return None


def polytope_vertices(poly: Polytope, tol: float = 1e-9) -> np.ndarray:
    """Vertices of a bounded polytope by face-combination enumeration.

    Fine for the small face counts used here (boxes, tubes, n-gons); not a
    general vertex enumerator.
    """
    H, b = poly.H, poly.b
    m, d = H.shape
    verts = []
    from itertools import combinations

    for idx in combinations(range(m), d):
        A = H[list(idx)]
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        v = np.linalg.solve(A, b[list(idx)])
        if np.all(H @ v <= b + 1e-7):
            verts.append(v)
    if not verts:
        return np.empty((0, d))
    uniq: list[np.ndarray] = []
    for v in verts:
        if not any(np.linalg.norm(v - u) < 1e-7 for u in uniq):
            uniq.append(v)
    return np.array(uniq)


def point_polytope_distance(points, poly: Polytope) -> np.ndarray:
    """Exact Euclidean distance from each point to a bounded convex polytope.

    The projection of an outside point lands on a face, edge, or vertex;
    we enumerate those candidates (cheap for <= ~10 faces) and keep the
    nearest feasible one. Inside points get distance 0.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    H, b = poly.H, poly.b
    m, d = H.shape
    norms = np.linalg.norm(H, axis=1)
    dist = np.full(pts.shape[0], np.inf)
    inside = np.all(pts @ H.T <= b + 1e-12, axis=1)
    dist[inside] = 0.0
    todo = ~inside
    if np.any(todo):
        P = pts[todo]
        best = np.full(P.shape[0], np.inf)
        # Face projections
        for j in range(m):
            h = H[j] / norms[j]
            off = (P @ H[j] - b[j]) / norms[j]
            proj = P - np.outer(off, h)
            ok = np.all(proj @ H.T <= b + 1e-7, axis=1) & (off > 0)
            best[ok] = np.minimum(best[ok], off[ok])
        # Edge projections (3D only: pairs of faces meet in a line)
        if d == 3:
            from itertools import combinations

            for i, j in combinations(range(m), 2):
                A = H[[i, j]]
                if np.linalg.matrix_rank(A, tol=1e-10) < 2:
                    continue
                # Point on the line: least-squares solution; direction: cross product
                x0, *_ = np.linalg.lstsq(A, b[[i, j]], rcond=None)
                u = np.cross(H[i], H[j])
                u /= np.linalg.norm(u)
                s = (P - x0) @ u
                proj = x0 + np.outer(s, u)
                ok = np.all(proj @ H.T <= b + 1e-7, axis=1)
                dd = np.linalg.norm(P - proj, axis=1)
                best[ok] = np.minimum(best[ok], dd[ok])
        # Vertices
        verts = polytope_vertices(poly)
        for v in verts:
            best = np.minimum(best, np.linalg.norm(P - v, axis=1))
        dist[todo] = best
    return dist if np.asarray(points).ndim > 1 else dist
