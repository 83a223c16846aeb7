"""Beta-reputation trust with per-timestep weighted aging.

Trust is Beta(alpha, beta) distributed. Every timestep both parameters are
discounted by ``gamma``; a reward above the threshold ``eps`` then adds
``w_s * r`` to alpha, otherwise ``w_f * exp(|r|)`` is added to beta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import DomainError

FLOOR = 1e-6
PARAM_NAMES = ("alpha0", "beta0", "w_s", "w_f", "eps", "gamma")


@dataclass(frozen=True)
class TrustParams:
    alpha0: float = 1.0
    beta0: float = 1.0
    w_s: float = 1.0
    w_f: float = 1.0
    eps: float = 0.0
    gamma: float = 0.99

    def __post_init__(self):
        for name in PARAM_NAMES:
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise DomainError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.alpha0 <= 0 or self.beta0 <= 0:
            raise DomainError("alpha0 and beta0 must be positive")
        if self.w_s <= 0 or self.w_f <= 0:
            raise DomainError("success and failure weights must be positive")
        if not -1.0 <= self.eps <= 1.0:
            raise DomainError("eps must lie in [-1, 1]")
        if not 0.0 < self.gamma <= 1.0:
            raise DomainError("gamma must lie in (0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES])

    @classmethod
    def from_array(cls, x) -> "TrustParams":
        return cls(*[float(v) for v in x])

    def to_dict(self) -> dict:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    @classmethod
    def from_dict(cls, d) -> "TrustParams":
        return cls(**{n: d[n] for n in PARAM_NAMES})


@dataclass(frozen=True)
class BetaTrustState:
    alpha: float
    beta: float
    n: int = 0
    m: int = 0
    q: int = 0

    def __post_init__(self):
        if not (self.alpha >= FLOOR and self.beta >= FLOOR):
            raise DomainError(f"alpha and beta must be >= {FLOOR}")
        if self.n < 0 or self.m < 0 or self.q != self.n + self.m:
            raise DomainError("counts must be nonnegative with q == n + m")

    @property
    def mean(self) -> float:
        return trust_mean(self)

    @property
    def variance(self) -> float:
        return trust_variance(self)


def init_state(params: TrustParams) -> BetaTrustState:
    return BetaTrustState(params.alpha0, params.beta0)


def is_success(r: float, params: TrustParams) -> bool:
    return r > params.eps


def update(state: BetaTrustState, r: float, params: TrustParams) -> BetaTrustState:
    """One timestep of weighted aging.

    Both parameters decay by gamma; success (r > eps) adds w_s * r to alpha,
    failure (r <= eps) adds w_f * exp(|r|) to beta. Results are floored at 1e-6.
    """
    r = float(r)
    if not math.isfinite(r):
        raise DomainError(f"reward must be finite, got {r}")
    a = params.gamma * state.alpha
    b = params.gamma * state.beta
    if r > params.eps:
        a += params.w_s * r
        n, m = state.n + 1, state.m
    else:
        b += params.w_f * math.exp(abs(r))
        n, m = state.n, state.m + 1
    return BetaTrustState(max(a, FLOOR), max(b, FLOOR), n, m, state.q + 1)


def trust_mean(state: BetaTrustState) -> float:
    return state.alpha / (state.alpha + state.beta)


def trust_variance(state: BetaTrustState) -> float:
    a, b = state.alpha, state.beta
    s = a + b
    return a * b / (s * s * (s + 1.0))


def run_episode(state: BetaTrustState, rewards: Sequence[float], params: TrustParams):
    """Fold :func:`update` over one task's rewards. Returns the final state
    (the next task starts from it) and the (mean, variance) after each step."""
    trace = []
    for r in rewards:
        state = update(state, r, params)
        trace.append((trust_mean(state), trust_variance(state)))
    return state, trace


def episode_records(state: BetaTrustState, rewards: Sequence[float], params: TrustParams, t0: int = 1):
    """Per-step rows (q, t, reward, alpha, beta, mean, variance, branch) for
    trace export, plus the final state."""
    rows = []
    for t, r in enumerate(rewards, start=t0):
        branch = "success" if is_success(r, params) else "failure"
        state = update(state, r, params)
        rows.append({
            "q": state.q, "t": t, "reward": float(r), "alpha": state.alpha, "beta": state.beta,
            "mean": trust_mean(state), "variance": trust_variance(state), "branch": branch,
        })
    return state, rows


TRACE_COLUMNS = ("q", "t", "reward", "alpha", "beta", "mean", "variance", "branch")


def trace_csv(rows) -> str:
    lines = [",".join(TRACE_COLUMNS)]
    for row in rows:
        lines.append(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in TRACE_COLUMNS))
    return "\n".join(lines) + "\n"


def fixed_point(r: float, params: TrustParams) -> tuple:
    """Limit of (alpha, beta) under a constant reward stream r with gamma < 1."""
    if params.gamma >= 1.0:
        raise DomainError("no fixed point without discounting (gamma = 1)")
    k = 1.0 - params.gamma
    if r > params.eps:
        return max(params.w_s * r / k, FLOOR), FLOOR
    return FLOOR, params.w_f * math.exp(abs(r)) / k


def literal_replay(rewards: Sequence[float], params: TrustParams):
    """Replay with the unrolled-sum form of the aging rule taken literally:
    each new parameter is sum_i gamma^i * (i-th most recent past value),
    plus the increment on its branch. Re-adding past values compounds
    history, so this diverges; kept only for comparison with :func:`update`.

    Returns arrays of alpha and beta after each step.
    """
    alphas, betas = [params.alpha0], [params.beta0]
    for r in rewards:
        r = float(r)
        w = params.gamma ** np.arange(len(alphas))
        a = float(np.dot(w, alphas[::-1]))
        b = float(np.dot(w, betas[::-1]))
        if r > params.eps:
            a += params.w_s * r
        else:
            b += params.w_f * math.exp(abs(r))
        alphas.append(max(a, FLOOR))
        betas.append(max(b, FLOOR))
    return np.array(alphas[1:]), np.array(betas[1:])


# ---------------------------------------------------------------------------
# Binary performance-based baseline


def baseline_update(state: BetaTrustState, task_succeeded: bool, params: TrustParams) -> BetaTrustState:
    """End-of-task update from the overall outcome only: success adds w_s to
    alpha, failure adds w_f to beta, and both age by gamma. ``eps`` is unused."""
    a = params.gamma * state.alpha
    b = params.gamma * state.beta
    if task_succeeded:
        return BetaTrustState(max(a + params.w_s, FLOOR), max(b, FLOOR), state.n + 1, state.m, state.q + 1)
    return BetaTrustState(max(a, FLOOR), max(b + params.w_f, FLOOR), state.n, state.m + 1, state.q + 1)


baseline_binary_update = baseline_update


def baseline_episode(state: BetaTrustState, task_succeeded: bool, params: TrustParams, T: int):
    """Baseline trace for one task: constant at the pre-task estimate for all
    T steps; the outcome is folded in only after the task ends."""
    trace = [(trust_mean(state), trust_variance(state))] * T
    return baseline_update(state, task_succeeded, params), trace


def with_eps(params: TrustParams, eps: float) -> TrustParams:
    return replace(params, eps=eps)
