"""Kinematic tile-transport simulator and a synthetic expert demonstrator.

The end-effector moves to a commanded absolute position, limited to
``max_step`` meters of displacement per timestep. A single spherical
obstacle sits between the start region and the target.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import DEFAULT_T, EnvAction, EnvState, Trajectory
from .errors import ConfigError, DomainError


def _v3(x):
    return tuple(float(v) for v in np.asarray(x, dtype=np.float64).reshape(3))


@dataclass(frozen=True)
class TaskConfig:
    workspace_min: tuple = (0.0, 0.0, 0.0)
    workspace_max: tuple = (1.0, 1.0, 1.0)
    obstacle_center: tuple = (0.5, 0.5, 0.2)
    obstacle_radius: float = 0.12
    target: tuple = (0.9, 0.5, 0.1)
    start_min: tuple = (0.05, 0.3, 0.1)
    start_max: tuple = (0.2, 0.7, 0.4)
    success_radius: float = 0.05
    max_step: Optional[float] = None
    T: int = DEFAULT_T

    def __post_init__(self):
        for name in ("workspace_min", "workspace_max", "obstacle_center", "target", "start_min", "start_max"):
            object.__setattr__(self, name, _v3(getattr(self, name)))
        object.__setattr__(self, "T", int(self.T))
        if self.T < 1:
            raise ConfigError("T must be at least 1")
        if self.max_step is None:
            object.__setattr__(self, "max_step", self.default_max_step())
        object.__setattr__(self, "max_step", float(self.max_step))
        self.check()

    def default_max_step(self) -> float:
        """1.5x the longest straight start-to-target distance, spread over T."""
        corners = np.array(np.meshgrid(*zip(self.start_min, self.start_max))).reshape(3, -1).T
        longest = np.max(np.linalg.norm(corners - np.array(self.target), axis=1))
        return 1.5 * float(longest) / self.T

    def check(self):
        lo, hi = np.array(self.workspace_min), np.array(self.workspace_max)
        slo, shi = np.array(self.start_min), np.array(self.start_max)
        if np.any(lo >= hi):
            raise ConfigError("workspace_min must be below workspace_max")
        if np.any(slo > shi) or np.any(slo < lo) or np.any(shi > hi):
            raise ConfigError("start region must be a box inside the workspace")
        if np.any(np.array(self.target) < lo) or np.any(np.array(self.target) > hi):
            raise ConfigError("target must lie inside the workspace")
        if self.obstacle_radius <= 0:
            raise ConfigError("obstacle_radius must be positive")
        if np.linalg.norm(np.array(self.target) - np.array(self.obstacle_center)) <= self.obstacle_radius:
            raise ConfigError("obstacle contains the target")
        if self.success_radius <= 0:
            raise ConfigError("success_radius must be positive")
        if not self.max_step > 0:
            raise ConfigError("max_step must be positive")
        if self.T < 1:
            raise ConfigError("T must be at least 1")

    def to_dict(self) -> dict:
        return {
            "workspace_min": list(self.workspace_min),
            "workspace_max": list(self.workspace_max),
            "obstacle_center": list(self.obstacle_center),
            "obstacle_radius": self.obstacle_radius,
            "target": list(self.target),
            "start_min": list(self.start_min),
            "start_max": list(self.start_max),
            "success_radius": self.success_radius,
            "max_step": self.max_step,
            "T": self.T,
        }

    @classmethod
    def from_dict(cls, d) -> "TaskConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        try:
            return cls(**known)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad task config: {exc}") from None


def features(position, config: TaskConfig) -> np.ndarray:
    """State feature vector(s) for end-effector position(s); works on (..., 3)."""
    p = np.asarray(position, dtype=np.float64)
    to_target = np.asarray(config.target) - p
    clearance = np.linalg.norm(p - np.asarray(config.obstacle_center), axis=-1) - config.obstacle_radius
    dist = np.maximum(0.0, clearance)
    height = np.maximum(0.0, p[..., 2])
    return np.concatenate([to_target, dist[..., None], height[..., None]], axis=-1)


def position_of(state, config: TaskConfig) -> np.ndarray:
    s = state.as_array() if isinstance(state, EnvState) else np.asarray(state)
    return np.asarray(config.target) - s[..., :3]


def state_at(position, config: TaskConfig) -> EnvState:
    return EnvState.from_array(features(position, config))


def in_workspace(position, config: TaskConfig, tol=1e-12) -> bool:
    p = np.asarray(position)
    return bool(np.all(p >= np.asarray(config.workspace_min) - tol) and np.all(p <= np.asarray(config.workspace_max) + tol))


def _clip_step(current, commanded, max_step):
    delta = commanded - current
    norm = np.linalg.norm(delta, axis=-1, keepdims=True)
    scale = np.where(norm > max_step, max_step / np.maximum(norm, 1e-300), 1.0)
    return current + delta * scale


def step_positions(current, commanded, config: TaskConfig) -> np.ndarray:
    """Vectorised core of :func:`transition` on raw (..., 3) positions."""
    commanded = np.asarray(commanded, dtype=np.float64)
    if not np.all(np.isfinite(commanded)):
        raise DomainError("action must be finite")
    return _clip_step(np.asarray(current, dtype=np.float64), commanded, config.max_step)


def transition(s: EnvState, a: EnvAction, config: TaskConfig) -> EnvState:
    """Move toward the commanded position, at most ``max_step`` meters."""
    if not np.all(np.isfinite(a.position)):
        raise DomainError("action must be finite")
    if not in_workspace(a.position, config):
        raise DomainError(f"action {a.position} lies outside the workspace")
    new = step_positions(position_of(s, config), a.position, config)
    return state_at(new, config)


def _inside_obstacle(p, config):
    return np.linalg.norm(np.asarray(p) - np.asarray(config.obstacle_center), axis=-1) <= config.obstacle_radius


def reset(config: TaskConfig, rng: np.random.Generator, max_tries: int = 10_000) -> EnvState:
    """State at a start position drawn uniformly from the start region,
    rejecting positions inside the obstacle."""
    lo, hi = np.array(config.start_min), np.array(config.start_max)
    corners = np.array(np.meshgrid(*zip(lo, hi))).reshape(3, -1).T
    if np.all(_inside_obstacle(corners, config)):
        raise ConfigError("start region lies entirely inside the obstacle")
    for _ in range(max_tries):
        p = lo + (hi - lo) * rng.random(3)
        if not _inside_obstacle(p, config):
            return state_at(p, config)
    raise ConfigError("could not sample a start outside the obstacle")


# ---------------------------------------------------------------------------
# Rollouts


class Policy:
    """Anything mapping a batch of state features (B, 5) to Gaussian action
    parameters: means (B, 3) and isotropic variances (B,)."""

    def mean_var(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


def rollout(
    policy,
    s0: EnvState,
    config: TaskConfig,
    rng: Optional[np.random.Generator] = None,
    stochastic: bool = False,
    perturb: Optional[Callable[[int, np.ndarray, np.ndarray], np.ndarray]] = None,
) -> Trajectory:
    """Run ``policy`` for exactly T steps from ``s0``.

    Stochastic rollouts draw a ~ N(mu(s), var(s) I); deterministic ones use
    mu(s). Commanded positions are clipped to the workspace. ``perturb(t,
    position, action)`` may override the commanded action at step t, which
    is how scripted failures are injected.
    """
    trajs = rollout_batch(policy, [s0], config, rng, stochastic, perturb)
    return trajs[0]


def rollout_batch(policy, starts, config: TaskConfig, rng=None, stochastic=False, perturb=None) -> list:
    """Vectorised rollouts, one per start state."""
    if stochastic and rng is None:
        raise DomainError("stochastic rollouts need an rng")
    lo, hi = np.asarray(config.workspace_min), np.asarray(config.workspace_max)
    pos = np.stack([position_of(s, config) for s in starts])
    B, T = len(starts), config.T
    states = np.empty((B, T, 5))
    actions = np.empty((B, T, 3))
    for t in range(T):
        feats = features(pos, config)
        mu, var = policy.mean_var(feats)
        if stochastic:
            a = mu + np.sqrt(var)[:, None] * rng.standard_normal(mu.shape)
        else:
            a = mu
        if perturb is not None:
            a = np.stack([perturb(t, pos[i], a[i]) for i in range(B)])
        a = np.clip(a, lo, hi)
        states[:, t] = feats
        actions[:, t] = a
        pos = step_positions(pos, a, config)
    source = "robot_rollout"
    return [Trajectory(states[i], actions[i], source) for i in range(B)]


def final_position(traj: Trajectory, config: TaskConfig) -> np.ndarray:
    """Position reached after the last action is applied."""
    return step_positions(position_of(traj.states[-1], config), traj.actions[-1], config)


def final_state(traj: Trajectory, config: TaskConfig) -> EnvState:
    return state_at(final_position(traj, config), config)


def task_success(traj: Trajectory, config: TaskConfig) -> bool:
    """True iff the end-effector finishes within ``success_radius`` of the target."""
    if len(traj) != config.T:
        raise DomainError(f"trajectory has {len(traj)} steps, expected T={config.T}")
    dist = np.linalg.norm(final_position(traj, config) - np.asarray(config.target))
    return bool(dist <= config.success_radius)


def chains(traj: Trajectory, config: TaskConfig, atol=1e-12) -> bool:
    """Do consecutive states follow the transition function?"""
    pos = position_of(traj.states[:-1], config)
    nxt = features(step_positions(pos, traj.actions[:-1], config), config)
    return bool(np.allclose(nxt, traj.states[1:], atol=atol, rtol=0))


# ---------------------------------------------------------------------------
# Synthetic demonstrator


def _segment_clearance(a, b, center):
    ab = b - a
    denom = float(ab @ ab)
    u = 0.0 if denom == 0 else float(np.clip((center - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(a + u * ab - center))


def _polyline_clearance(points, center):
    return min(_segment_clearance(points[i], points[i + 1], center) for i in range(len(points) - 1))


def plan_path(start, config: TaskConfig, margin: float = 0.06) -> np.ndarray:
    """Waypoints start -> [via point] -> target keeping ``margin`` meters of
    clearance from the obstacle surface.

    The via point is pushed away from the obstacle center along the direction
    of the straight line's closest approach (upward when that is degenerate)
    until both legs clear the obstacle.
    """
    start = np.asarray(start, dtype=np.float64)
    target = np.asarray(config.target)
    center = np.asarray(config.obstacle_center)
    need = config.obstacle_radius + margin
    if _segment_clearance(start, target, center) >= need:
        return np.stack([start, target])

    ab = target - start
    u = np.clip((center - start) @ ab / (ab @ ab), 0.0, 1.0)
    closest = start + u * ab
    lo, hi = np.asarray(config.workspace_min), np.asarray(config.workspace_max)
    candidates = []
    away = closest - center
    if np.linalg.norm(away) > 1e-9:
        candidates.append(away / np.linalg.norm(away))
    candidates += [np.array(d, dtype=float) for d in ((0, 0, 1), (0, 1, 0), (0, -1, 0))]
    for direction in candidates:
        d = need
        while d < 10 * need:
            via = np.clip(center + d * direction, lo, hi)
            path = np.stack([start, via, target])
            if _polyline_clearance(path, center) >= need:
                return path
            d *= 1.05
    raise ConfigError("no obstacle-avoiding via point found")


def _resample(path, step, T):
    """Positions after each of T steps, walking the polyline at ``step``
    meters per step and holding at its end."""
    seg = np.diff(path, axis=0)
    seglen = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seglen)])
    total = cum[-1]
    out = np.empty((T, 3))
    for t in range(T):
        s = min((t + 1) * step, total)
        i = min(np.searchsorted(cum, s, side="right") - 1, len(seg) - 1)
        frac = 0.0 if seglen[i] == 0 else (s - cum[i]) / seglen[i]
        out[t] = path[i] + frac * seg[i]
    return out


def synth_demo(
    s0: EnvState,
    config: TaskConfig,
    rng: Optional[np.random.Generator] = None,
    noise: float = 0.0,
    pace: float = 0.75,
) -> Trajectory:
    """Expert demonstration from ``s0``: walk the obstacle-avoiding polyline
    at a steady pace (at least ``pace * max_step`` per step), hold at the
    target once there, then add Gaussian jitter of scale ``noise`` to the
    commanded positions."""
    if noise < 0:
        raise DomainError("noise must be >= 0")
    if noise > 0 and rng is None:
        raise DomainError("noisy demonstrations need an rng")
    start = position_of(s0, config)
    path = plan_path(start, config)
    length = float(np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1)))
    if length > config.T * config.max_step * (1 + 1e-12):
        raise ConfigError(
            f"target unreachable: path length {length:.3f} m exceeds T*max_step = {config.T * config.max_step:.3f} m"
        )
    step = min(config.max_step, max(length / config.T, pace * config.max_step))
    waypoints = _resample(path, step, config.T)
    if noise > 0:
        waypoints = waypoints + noise * rng.standard_normal(waypoints.shape)
    waypoints = np.clip(waypoints, config.workspace_min, config.workspace_max)

    states = np.empty((config.T, 5))
    pos = start
    for t in range(config.T):
        states[t] = features(pos, config)
        pos = step_positions(pos, waypoints[t], config)
    return Trajectory(states, waypoints, source="human_demo")


def random_trajectory(s0: EnvState, config: TaskConfig, rng: np.random.Generator) -> Trajectory:
    """Uniformly random commanded positions in the workspace."""
    lo, hi = np.asarray(config.workspace_min), np.asarray(config.workspace_max)
    acts = lo + (hi - lo) * rng.random((config.T, 3))
    states = np.empty((config.T, 5))
    pos = position_of(s0, config)
    for t in range(config.T):
        states[t] = features(pos, config)
        pos = step_positions(pos, acts[t], config)
    return Trajectory(states, acts, source="robot_rollout")
