"""Time-stamped piecewise-linear paths, the plan unit for every agent."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PwlPath:
    """Waypoint sequence {(t_k, p_k)} with linear interpolation in between.

    Times start at 0 and are nondecreasing; after t_K the agent is parked
    at the final waypoint.
    """

    times: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        p = np.atleast_2d(np.asarray(self.points, dtype=float))
        if t.size != p.shape[0]:
            raise ValueError(f"{t.size} times but {p.shape[0]} waypoints")
        if t.size < 1:
            raise ValueError("need at least one waypoint")
        if abs(t[0]) > 1e-9:
            raise ValueError(f"paths start at t=0, got t_0={t[0]}")
        if np.any(np.diff(t) < -1e-9):
            raise ValueError("timestamps must be nondecreasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "points", p)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_segments(self) -> int:
        return self.times.size - 1

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def makespan(self) -> float:
        return self.t_end

    def segment(self, k: int):
        """((t_{k-1}, p_{k-1}), (t_k, p_k)) for segment k in 1..K."""
        return (
            (float(self.times[k - 1]), self.points[k - 1]),
            (float(self.times[k]), self.points[k]),
        )

    def position(self, t: float) -> np.ndarray:
        """Linear interpolation; parked at p_K beyond the final time."""
        t = float(t)
        if t < -1e-9:
            raise ValueError(f"t={t} before path start")
        tk = self.times
        if t >= tk[-1]:
            return self.points[-1].copy()
        k = int(np.searchsorted(tk, t, side="right"))
        k = min(max(k, 1), tk.size - 1)
        dt = tk[k] - tk[k - 1]
        if dt <= 0.0:
            return self.points[k].copy()
        a = (t - tk[k - 1]) / dt
        return (1.0 - a) * self.points[k - 1] + a * self.points[k]

    def positions(self, ts: np.ndarray) -> np.ndarray:
        """Vectorized interpolation over a time grid (parked past the end)."""
        ts = np.asarray(ts, dtype=float)
        out = np.empty(ts.shape + (self.dim,))
        for j in range(self.dim):
            out[..., j] = np.interp(ts, self.times, self.points[:, j])
        return out

    def velocity(self, k: int) -> np.ndarray:
        """Average velocity of segment k (zero for zero-duration segments)."""
        (t0, p0), (t1, p1) = self.segment(k)
        dt = t1 - t0
        if dt <= 0.0:
            return np.zeros(self.dim)
        return (p1 - p0) / dt

    def segment_speeds(self) -> np.ndarray:
        dts = np.diff(self.times)
        dps = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(dts > 0, dps / np.where(dts > 0, dts, 1.0), 0.0)
        return v

    def to_dict(self, agent=None) -> dict:
        d = {"waypoints": [[float(t), [float(c) for c in p]] for t, p in zip(self.times, self.points)]}
        if agent is not None:
            d["agent"] = agent
        return d

    @staticmethod
    def from_dict(d: dict) -> "PwlPath":
        ts = [w[0] for w in d["waypoints"]]
        ps = [w[1] for w in d["waypoints"]]
        return PwlPath(np.asarray(ts), np.asarray(ps))

    @staticmethod
    def from_waypoints(waypoints) -> "PwlPath":
        """Build from [(t_0, p_0), (t_1, p_1), ...]."""
        ts = np.array([w[0] for w in waypoints], dtype=float)
        ps = np.array([np.asarray(w[1], dtype=float) for w in waypoints])
        return PwlPath(ts, ps)


def nominal_position(path: PwlPath, t: float) -> np.ndarray:
    """Reference position at time t (final waypoint once the path ends)."""
    return path.position(t)
