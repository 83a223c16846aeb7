"""Maximum-likelihood calibration of the trust parameters.

Recorded reward streams are replayed under a candidate parameter set; the
score is the Beta log-density of each self-reported trust value under the
end-of-task distribution. The piecewise update is not differentiable in the
threshold, so the search is derivative-free (DE/rand/1/bin).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import ExperimentLog, seeded_rng
from .errors import DomainError, OptimizationError
from .trust import FLOOR, PARAM_NAMES, TrustParams

REPORT_CLIP = (0.01, 0.99)
PENALTY = 1e10

DEFAULT_BOUNDS = {
    "alpha0": (0.1, 50.0),
    "beta0": (0.1, 50.0),
    "w_s": (0.01, 20.0),
    "w_f": (0.01, 20.0),
    "eps": (-1.0, 1.0),
    "gamma": (0.5, 1.0),
}


@dataclass(frozen=True)
class DEConfig:
    population: int = 48
    F: float = 0.7
    CR: float = 0.9
    generations: int = 300
    bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    seed: int = 0

    def __post_init__(self):
        if self.population < 4:
            raise DomainError("population must be >= 4")
        if not 0 < self.F <= 2:
            raise DomainError("F must lie in (0, 2]")
        if not 0 <= self.CR <= 1:
            raise DomainError("CR must lie in [0, 1]")
        if self.generations < 0:
            raise DomainError("generations must be >= 0")
        for name, (lo, hi) in self.bounds.items():
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise DomainError(f"bad bounds for {name}: ({lo}, {hi})")

    def to_dict(self):
        return {
            "population": self.population, "F": self.F, "CR": self.CR,
            "generations": self.generations, "seed": self.seed,
            "bounds": {k: list(v) for k, v in self.bounds.items()},
        }

    @classmethod
    def from_dict(cls, d):
        kw = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "bounds" in kw:
            kw["bounds"] = {**DEFAULT_BOUNDS, **{k: tuple(v) for k, v in kw["bounds"].items()}}
        return cls(**kw)


class CalibrationSet:
    """Ordered tasks with per-step rewards and an end-of-task report each."""

    def __init__(self, episodes: Sequence[ExperimentLog]):
        episodes = list(episodes)
        for e in episodes:
            if e.report is None:
                raise DomainError(f"experiment {e.experiment_id} has no trust report")
        self.episodes = episodes

    def __len__(self):
        return len(self.episodes)

    @property
    def streams(self) -> list:
        return [e.rewards for e in self.episodes]

    @property
    def reports(self) -> list:
        return [e.report.fraction for e in self.episodes]

    @property
    def outcomes(self) -> list:
        return [e.success_flag for e in self.episodes]


def beta_logpdf(x: float, a: float, b: float) -> float:
    return (
        (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x)
        + math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    )


def clamp_report(tau: float) -> float:
    return min(max(tau, REPORT_CLIP[0]), REPORT_CLIP[1])


def replay_end_states(params: TrustParams, streams: Sequence[Sequence[float]]) -> list:
    """(alpha, beta) at the end of each task, carrying state across tasks.
    Same arithmetic as :func:`trust.update`, without building state objects."""
    a, b = params.alpha0, params.beta0
    g, ws, wf, eps = params.gamma, params.w_s, params.w_f, params.eps
    out = []
    for rewards in streams:
        for r in rewards:
            a = g * a
            b = g * b
            if r > eps:
                a += ws * r
            else:
                b += wf * math.exp(abs(r))
            a = max(a, FLOOR)
            b = max(b, FLOOR)
        out.append((a, b))
    return out


def baseline_end_states(params: TrustParams, outcomes: Sequence[bool]) -> list:
    a, b = params.alpha0, params.beta0
    out = []
    for ok in outcomes:
        a, b = params.gamma * a, params.gamma * b
        if ok:
            a += params.w_s
        else:
            b += params.w_f
        a, b = max(a, FLOOR), max(b, FLOOR)
        out.append((a, b))
    return out


def _score(ends, reports) -> float:
    total = 0.0
    for (a, b), tau in zip(ends, reports):
        try:
            lp = beta_logpdf(clamp_report(tau), a, b)
        except (ValueError, OverflowError):
            lp = -math.inf
        total += -lp if math.isfinite(lp) else PENALTY
    return total


def nll(params: TrustParams, data: CalibrationSet) -> float:
    """Negative log-likelihood of the reports under the granular model."""
    return _score(replay_end_states(params, data.streams), data.reports)


def baseline_nll(params: TrustParams, data: CalibrationSet) -> float:
    """Negative log-likelihood of the reports under the binary baseline."""
    return _score(baseline_end_states(params, data.outcomes), data.reports)


# ---------------------------------------------------------------------------
# Differential evolution


@dataclass
class DEResult:
    x: np.ndarray
    fun: float
    history: list
    nfev: int


def differential_evolution(
    objective: Callable[[np.ndarray], float],
    bounds: Sequence[tuple],
    population: int = 48,
    F: float = 0.7,
    CR: float = 0.9,
    generations: int = 300,
    seed: int = 0,
    x0: Optional[np.ndarray] = None,
) -> DEResult:
    """Minimise ``objective`` over a box with DE/rand/1/bin.

    Trials for a generation are built from the current population, clipped
    to the bounds, then each replaces its parent if not worse. ``history``
    holds the best value after initialisation and after every generation.
    """
    bounds = np.asarray(bounds, dtype=np.float64)
    lo, hi = bounds[:, 0], bounds[:, 1]
    dim = len(bounds)
    if population < 4:
        raise DomainError("population must be >= 4")
    rng = seeded_rng(seed)

    def evaluate(x):
        v = float(objective(x))
        return v if math.isfinite(v) else math.inf

    pop = lo + (hi - lo) * rng.random((population, dim))
    if x0 is not None:
        pop[0] = np.clip(np.asarray(x0, dtype=np.float64), lo, hi)
    fit = np.array([evaluate(x) for x in pop])
    nfev = population
    if not np.any(np.isfinite(fit)):
        raise OptimizationError("objective is non-finite on the whole initial population")
    history = [float(fit.min())]
    idx = np.arange(population)

    for _ in range(generations):
        trials = np.empty_like(pop)
        for i in range(population):
            r1, r2, r3 = rng.choice(idx[idx != i], size=3, replace=False)
            mutant = pop[r1] + F * (pop[r2] - pop[r3])
            cross = rng.random(dim) < CR
            cross[rng.integers(dim)] = True
            trials[i] = np.clip(np.where(cross, mutant, pop[i]), lo, hi)
        trial_fit = np.array([evaluate(x) for x in trials])
        nfev += population
        better = trial_fit <= fit
        pop[better] = trials[better]
        fit[better] = trial_fit[better]
        history.append(float(fit.min()))

    best = int(np.argmin(fit))
    if not math.isfinite(fit[best]):
        raise OptimizationError("objective stayed non-finite for every candidate")
    return DEResult(pop[best].copy(), float(fit[best]), history, nfev)


def _search(score, data, config: DEConfig, fixed, x0):
    fixed = dict(fixed or {})
    free = [n for n in PARAM_NAMES if n not in fixed]
    bounds = [config.bounds[n] for n in free]
    base = TrustParams()

    def to_params(x):
        values = dict(zip(free, x))
        values.update(fixed)
        return TrustParams(**{n: values.get(n, getattr(base, n)) for n in PARAM_NAMES})

    def objective(x):
        return score(to_params(x), data)

    start = None if x0 is None else [getattr(x0, n) for n in free]
    res = differential_evolution(objective, bounds, config.population, config.F, config.CR,
                                 config.generations, config.seed, start)
    return to_params(res.x), res


def calibrate(data: CalibrationSet, config: DEConfig = DEConfig(), fixed: Optional[dict] = None,
              warm_start: Optional[TrustParams] = None):
    """Fit the granular model: argmin of :func:`nll` within the DE bounds.
    Parameters named in ``fixed`` are held at the given values. Returns
    (params, DEResult)."""
    if len(data) == 0:
        raise DomainError("calibration set is empty")
    return _search(nll, data, config, fixed, warm_start)


def calibrate_baseline(data: CalibrationSet, config: DEConfig = DEConfig(), warm_start=None):
    """Fit the binary baseline (the threshold is irrelevant and held at 0)."""
    if len(data) == 0:
        raise DomainError("calibration set is empty")
    return _search(baseline_nll, data, config, {"eps": 0.0}, warm_start)


def history_csv(history: Sequence[float]) -> str:
    lines = ["generation,best_nll"] + [f"{g},{v!r}" for g, v in enumerate(history)]
    return "\n".join(lines) + "\n"
