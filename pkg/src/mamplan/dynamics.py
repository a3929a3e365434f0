"""Agent dynamics, tracking controllers, and closed-loop RK4 rollouts.

All state operations broadcast over leading batch axes, so a batch of
rollouts integrates as one vectorized trajectory; states are numpy arrays
with the model's components along the last axis.

diff-drive-2d state: (p_x, p_y, theta, v, omega)
double-integrator-3d state: (p_x, p_y, p_z, vx, vy, vz)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .paths import PwlPath

DIFF_DRIVE = "diff-drive-2d"
DOUBLE_INT = "double-integrator-3d"


class RolloutDiverged(RuntimeError):
    """Raised when an integrated state stops being finite."""


@dataclass(frozen=True)
class ControllerParams:
    """Tracking-controller gains.

    L, G, p_exp drive the differential-drive hand controller; kp, kd,
    a_max drive the double-integrator PD law. u_max optionally saturates
    the diff-drive force/torque inputs (off by default).
    """

    L: float = 0.1
    G: float = 5.0
    p_exp: int = 1
    kp: float = 4.0
    kd: float = 4.0
    a_max: float = 10.0
    u_max: float | None = None

    def __post_init__(self):
        if self.L <= 0 or self.G < 0 or self.p_exp < 1:
            raise ValueError("need L > 0, G >= 0, p_exp >= 1")


@dataclass(frozen=True)
class AgentSpec:
    """Physical agent description: shape, speed range, disturbances, gains."""

    model: str = DIFF_DRIVE
    r: float = 0.5
    v_min: float = 0.0
    v_max: float = 1.0
    dist_bounds: tuple = (0.05, 0.05, 0.02)
    ctrl: ControllerParams = field(default_factory=ControllerParams)
    k_drag: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.v_min < self.v_max):
            raise ValueError("need 0 <= v_min < v_max")
        if self.r <= 0:
            raise ValueError("agent radius must be > 0")
        if any(b < 0 for b in self.dist_bounds):
            raise ValueError("disturbance bounds must be >= 0")
        if self.model not in (DIFF_DRIVE, DOUBLE_INT):
            raise ValueError(f"unknown model {self.model!r}")
        expect = 3 if self.model == DIFF_DRIVE else 3
        if len(self.dist_bounds) != expect:
            raise ValueError(f"{self.model} takes {expect} disturbance channels")

    @property
    def state_dim(self) -> int:
        return 5 if self.model == DIFF_DRIVE else 6

    @property
    def pos_dim(self) -> int:
        return 2 if self.model == DIFF_DRIVE else 3

    def to_dict(self) -> dict:
        c = self.ctrl
        return {
            "model": self.model,
            "r": self.r,
            "v_min": self.v_min,
            "v_max": self.v_max,
            "dist_bounds": list(self.dist_bounds),
            "k_drag": self.k_drag,
            "ctrl": {
                "L": c.L, "G": c.G, "p_exp": c.p_exp,
                "kp": c.kp, "kd": c.kd, "a_max": c.a_max, "u_max": c.u_max,
            },
        }

    @staticmethod
    def from_dict(d: dict) -> "AgentSpec":
        ctrl = ControllerParams(**d.get("ctrl", {}))
        return AgentSpec(
            model=d.get("model", DIFF_DRIVE),
            r=float(d["r"]),
            v_min=float(d.get("v_min", 0.0)),
            v_max=float(d["v_max"]),
            dist_bounds=tuple(d.get("dist_bounds", (0.0, 0.0, 0.0))),
            ctrl=ctrl,
            k_drag=float(d.get("k_drag", 1.0)),
        )


@dataclass(frozen=True)
class Trajectory:
    """Uniform-step state history: states[i] is the state at t0 + i*dt."""

    dt: float
    states: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.states.shape[0] < 1:
            raise ValueError("states must be nonempty")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.states.shape[0])

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1


@dataclass(frozen=True)
class DisturbanceTrace:
    """Piecewise-constant disturbance, one held value per dt_hold window.

    values has shape (n_holds, channels) or (n_holds, batch, channels).
    """

    dt_hold: float
    values: np.ndarray

    def __post_init__(self):
        if self.dt_hold <= 0:
            raise ValueError("dt_hold must be > 0")

    def value_at(self, t: float) -> np.ndarray:
        idx = int(math.floor(t / self.dt_hold + 1e-12))
        idx = min(max(idx, 0), self.values.shape[0] - 1)
        return self.values[idx]


def sample_disturbance(bounds, T: float, dt_hold: float = 0.1, seed=0,
                       n_samples: int | None = None) -> DisturbanceTrace:
    """Uniform per-channel held values in [-bound, +bound], seed-reproducible.

    n_samples -> a batch trace with values (n_holds, n_samples, channels).
    """
    if dt_hold <= 0:
        raise ValueError("dt_hold must be > 0")
    bounds = np.asarray(bounds, dtype=float)
    n_holds = max(int(math.ceil(T / dt_hold + 1e-12)), 1)
    rng = np.random.default_rng(seed)
    shape = (n_holds, bounds.size) if n_samples is None else (n_holds, n_samples, bounds.size)
    vals = rng.uniform(-1.0, 1.0, size=shape) * bounds
    return DisturbanceTrace(dt_hold, vals)


def zero_disturbance(spec: AgentSpec, T: float, dt_hold: float = 0.1) -> DisturbanceTrace:
    n_holds = max(int(math.ceil(T / dt_hold + 1e-12)), 1)
    return DisturbanceTrace(dt_hold, np.zeros((n_holds, len(spec.dist_bounds))))


# --------------------------------------------------------------------------
# Reference generation along a PWL path
# --------------------------------------------------------------------------

class PathRef:
    """Per-segment reference (position, velocity, speed, heading) lookups.

    Zero-duration segments are skipped outright (interval lookup never
    lands in them); zero-length wait segments keep the neighboring
    heading so the reference heading never jumps to an arbitrary value.
    """

    def __init__(self, path: PwlPath):
        t = path.times
        p = path.points
        keep = np.diff(t) > 1e-12
        if not np.any(keep):
            # Path is a single point (or all zero-duration): pure parking.
            self.t0 = np.array([0.0])
            self.t1 = np.array([0.0])
            self.p0 = p[-1:].copy()
            self.vel = np.zeros((1, path.dim))
            self.speed = np.zeros(1)
            self.heading = np.zeros(1)
            self.p_end = p[-1].copy()
            self.t_end = float(t[-1])
            self.end_heading = 0.0
            return
        idx = np.where(keep)[0]
        self.t0 = t[idx]
        self.t1 = t[idx + 1]
        self.p0 = p[idx]
        dp = p[idx + 1] - p[idx]
        dt = (self.t1 - self.t0)[:, None]
        self.vel = dp / dt
        self.speed = np.linalg.norm(self.vel, axis=1)
        moving = self.speed > 1e-9
        head = np.zeros(len(idx))
        head[moving] = np.arctan2(dp[moving, 1], dp[moving, 0]) if path.dim >= 2 else 0.0
        # Wait segments inherit the last moving heading (next one if the
        # path starts with a wait).
        filled = moving.copy()
        last = None
        for i in range(len(idx)):
            if moving[i]:
                last = head[i]
            elif last is not None:
                head[i] = last
                filled[i] = True
        nxt = None
        for i in range(len(idx) - 1, -1, -1):
            if moving[i]:
                nxt = head[i]
            elif not filled[i] and nxt is not None:
                head[i] = nxt
        self.heading = head
        self.p_end = p[-1].copy()
        self.t_end = float(t[-1])
        self.end_heading = float(head[-1])

    def lookup(self, t: float):
        """(p_star, vel_star, speed_star, heading_star) at time t."""
        if t >= self.t_end - 1e-12:
            return self.p_end, np.zeros_like(self.p_end), 0.0, self.end_heading
        k = int(np.searchsorted(self.t1, t, side="right"))
        k = min(k, len(self.t0) - 1)
        tt = min(max(t, self.t0[k]), self.t1[k])
        p_star = self.p0[k] + self.vel[k] * (tt - self.t0[k])
        return p_star, self.vel[k], float(self.speed[k]), float(self.heading[k])


# --------------------------------------------------------------------------
# Differential drive
# --------------------------------------------------------------------------

def deriv_diff_drive(x: np.ndarray, u: np.ndarray, d: np.ndarray,
                     spec: AgentSpec) -> np.ndarray:
    """State derivative of the disturbed differential-drive model."""
    theta = x[..., 2]
    v = x[..., 3]
    omega = x[..., 4]
    k = spec.k_drag
    out = np.empty_like(x)
    out[..., 0] = v * np.cos(theta) + d[..., 0]
    out[..., 1] = v * np.sin(theta) + d[..., 1]
    out[..., 2] = omega + d[..., 2]
    out[..., 3] = u[..., 0] - k * v
    out[..., 4] = u[..., 1] - k * omega
    return out


def controller_diff_drive(x: np.ndarray, ref, t: float,
                          spec: AgentSpec) -> np.ndarray:
    """Force/torque inputs tracking a PWL reference via a look-ahead point.

    The controlled point is the hand h = p + L*(cos theta, sin theta); the
    feedback acts on the hand error z, saturated so its magnitude never
    exceeds the gain G.
    """
    if isinstance(ref, PwlPath):
        ref = PathRef(ref)
    p_star, _, v_star, th_star = ref.lookup(t)
    c = spec.ctrl
    L, G, pe = c.L, c.G, c.p_exp
    theta = x[..., 2]
    v = x[..., 3]
    omega = x[..., 4]
    ct, st = np.cos(theta), np.sin(theta)
    cs, ss = math.cos(th_star), math.sin(th_star)
    zx = (x[..., 0] - p_star[0]) + L * (ct - cs)
    zy = (x[..., 1] - p_star[1]) + L * (st - ss)
    # omega_star = 0: PWL references hold a constant heading per segment.
    q = 2 * pe - 1
    znorm = np.sqrt(zx * zx + zy * zy)
    denom = 1.0 + znorm ** q
    u1p = v_star * cs - G * np.sign(zx) * np.abs(zx) ** q / denom
    u2p = v_star * ss - G * np.sign(zy) * np.abs(zy) ** q / denom
    a = u1p + v * omega * st + L * omega * omega * ct
    b = u2p - v * omega * ct + L * omega * omega * st
    u1 = ct * a + st * b
    u2 = (-st * a + ct * b) / L
    if c.u_max is not None:
        u1 = np.clip(u1, -c.u_max, c.u_max)
        u2 = np.clip(u2, -c.u_max, c.u_max)
    return np.stack([u1, u2], axis=-1)


# --------------------------------------------------------------------------
# 3D double integrator
# --------------------------------------------------------------------------

def deriv_double_integrator(x: np.ndarray, u: np.ndarray, d: np.ndarray,
                            spec: AgentSpec) -> np.ndarray:
    out = np.empty_like(x)
    out[..., :3] = x[..., 3:]
    out[..., 3:] = u + d
    return out


def controller_double_integrator(x: np.ndarray, ref, t: float,
                                 spec: AgentSpec) -> np.ndarray:
    """Saturated PD acceleration toward the moving reference point."""
    if isinstance(ref, PwlPath):
        ref = PathRef(ref)
    p_star, v_star, _, _ = ref.lookup(t)
    c = spec.ctrl
    a = c.kp * (p_star - x[..., :3]) + c.kd * (v_star - x[..., 3:])
    norm = np.linalg.norm(a, axis=-1, keepdims=True)
    scale = np.where(norm > c.a_max, c.a_max / np.maximum(norm, 1e-12), 1.0)
    return a * scale


def controller(x, ref, t, spec: AgentSpec) -> np.ndarray:
    if spec.model == DIFF_DRIVE:
        return controller_diff_drive(x, ref, t, spec)
    return controller_double_integrator(x, ref, t, spec)


def deriv(x, u, d, spec: AgentSpec) -> np.ndarray:
    if spec.model == DIFF_DRIVE:
        return deriv_diff_drive(x, u, d, spec)
    return deriv_double_integrator(x, u, d, spec)


def workspace_projection(states: np.ndarray, spec: AgentSpec) -> np.ndarray:
    """Project state history onto workspace coordinates."""
    return states[..., : spec.pos_dim]


# --------------------------------------------------------------------------
# Integration
# --------------------------------------------------------------------------

def rk4_step(f, t: float, x: np.ndarray, dt: float) -> np.ndarray:
    """One classical Runge-Kutta 4 step of x' = f(t, x)."""
    k1 = f(t, x)
    k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = f(t + dt, x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_rollout(x0: np.ndarray, path: PwlPath, dist: DisturbanceTrace,
                dt: float, spec: AgentSpec, t_end: float | None = None) -> Trajectory:
    """Integrate the closed loop (controller + disturbance) from t=0.

    x0 may be a single state (state_dim,) or a batch (n, state_dim); the
    whole batch shares the path and time grid, with per-sample disturbance
    values if the trace carries a batch axis.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if dt > dist.dt_hold + 1e-12:
        raise ValueError(f"dt={dt} exceeds disturbance hold {dist.dt_hold}")
    x0 = np.asarray(x0, dtype=float)
    horizon = path.t_end if t_end is None else float(t_end)
    n_steps = max(int(math.ceil(horizon / dt - 1e-9)), 1)
    ref = PathRef(path)

    def f(t, x):
        d = dist.value_at(t)
        return deriv(x, controller(x, ref, t, spec), d, spec)

    out = np.empty((n_steps + 1,) + x0.shape)
    out[0] = x0
    x = x0
    t = 0.0
    for i in range(n_steps):
        x = rk4_step(f, t, x, dt)
        t += dt
        out[i + 1] = x
        if not np.all(np.isfinite(x)):
            raise RolloutDiverged(f"non-finite state at t={t:.4f}")
    return Trajectory(dt=dt, states=out)
