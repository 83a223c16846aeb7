"""Stage 3 (iterative trust calibration) and Stage 4 (frozen inference),
the humans that report trust, and the end-of-task error comparison."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .calibrate import (
    CalibrationSet,
    DEConfig,
    baseline_end_states,
    calibrate,
    calibrate_baseline,
    replay_end_states,
)
from .core import (
    DEFAULT_LIKERT_PERCENTS,
    LIKERT_LABELS,
    ExperimentLog,
    LikertLevel,
    percent_to_likert,
)
from .diffnet import PolicyNet, RewardNet
from .env import TaskConfig, reset, rollout, task_success
from .errors import DomainError
from .learning import step_rewards
from .trust import (
    BetaTrustState,
    TrustParams,
    baseline_episode,
    init_state,
    run_episode,
    trust_mean,
    trust_variance,
)

log = logging.getLogger(__name__)

# Initial trust parameters used for display before the first calibration.
PRIOR_PARAMS = TrustParams(1.0, 1.0, 1.0, 1.0, 0.0, 0.99)
# Default hidden parameters of the synthetic reporter.
REFERENCE_PARAMS = TrustParams(1.0, 1.0, 3.7897, 4.5390, 0.0, 0.99)


# ---------------------------------------------------------------------------
# Humans


@dataclass(frozen=True)
class SyntheticHumanConfig:
    params: TrustParams = REFERENCE_PARAMS
    quantize: bool = True
    report_noise: int = 0

    def __post_init__(self):
        if self.report_noise not in (0, 1):
            raise DomainError("report_noise must be 0 or 1")

    def to_dict(self):
        return {"params": self.params.to_dict(), "quantize": self.quantize, "report_noise": self.report_noise}

    @classmethod
    def from_dict(cls, d):
        return cls(TrustParams.from_dict(d["params"]) if "params" in d else REFERENCE_PARAMS,
                   d.get("quantize", True), d.get("report_noise", 0))


class SyntheticHuman:
    """Reports trust by running the granular model with hidden parameters
    over everything it has seen, then rounding to the nearest Likert level."""

    def __init__(self, config: SyntheticHumanConfig, rng: np.random.Generator,
                 mapping=DEFAULT_LIKERT_PERCENTS):
        self.config = config
        self.rng = rng
        self.mapping = tuple(mapping)
        self.state = init_state(config.params)

    @property
    def trust(self) -> float:
        return trust_mean(self.state)

    def observe(self, rewards) -> float:
        self.state, _ = run_episode(self.state, rewards, self.config.params)
        return self.trust

    def report(self, rewards, success: bool = True) -> LikertLevel:
        percent = 100.0 * self.observe(rewards)
        level = percent_to_likert(percent, self.mapping)
        if self.config.report_noise:
            level = int(np.clip(level + self.rng.integers(-1, 2), 1, 7))
        if self.config.quantize:
            return LikertLevel.from_level(level, self.mapping)
        return LikertLevel(level, percent)


class EndOfInput(Exception):
    pass


class InteractiveHuman:
    """Prompts for a 1..7 rating after each task; re-prompts on bad input."""

    def __init__(self, read: Callable[[str], str] = input, write: Callable[[str], None] = print,
                 mapping=DEFAULT_LIKERT_PERCENTS):
        self.read = read
        self.write = write
        self.mapping = tuple(mapping)

    def report(self, rewards, success: bool = True) -> LikertLevel:
        self.write("How much do you trust the robot after this task?")
        for i, label in enumerate(LIKERT_LABELS, 1):
            self.write(f"  {i}. {label} ({self.mapping[i - 1]:g}%)")
        while True:
            try:
                text = self.read("rating [1-7]: ")
            except EOFError:
                raise EndOfInput() from None
            text = text.strip()
            if text.isdigit() and 1 <= int(text) <= 7:
                return LikertLevel.from_level(int(text), self.mapping)
            self.write(f"Please enter a whole number from 1 to 7 (got {text!r}).")


# ---------------------------------------------------------------------------
# Tasks


def stall_after(onset: int):
    """Scripted mid-task failure: from step ``onset`` on, the robot holds its
    current position instead of following the policy."""
    def perturb(t, position, action):
        return position.copy() if t >= onset else action
    return perturb


@dataclass
class TaskRun:
    trajectory: object
    rewards: np.ndarray
    success: bool


def run_task(policy: PolicyNet, reward: RewardNet, task: TaskConfig, rng, fail_onset: Optional[int] = None) -> TaskRun:
    s0 = reset(task, rng)
    perturb = None if fail_onset is None else stall_after(fail_onset)
    traj = rollout(policy, s0, task, stochastic=False, perturb=perturb)
    r = np.clip(step_rewards(reward, traj), -1.0, 1.0)
    return TaskRun(traj, r, task_success(traj, task))


def granular_state_after(params: TrustParams, streams) -> BetaTrustState:
    """Trust state after replaying ``streams`` from the initial state."""
    state = init_state(params)
    for rewards in streams:
        state, _ = run_episode(state, rewards, params)
    return state


def baseline_state_after(params: TrustParams, outcomes) -> BetaTrustState:
    state = init_state(params)
    for ok in outcomes:
        state, _ = baseline_episode(state, ok, params, 1)
    return state


# ---------------------------------------------------------------------------
# Stage 3


@dataclass
class Stage3Result:
    logs: list
    params: TrustParams
    baseline_params: TrustParams
    history: list  # best nll per generation of the final calibration
    params_per_episode: list = field(default_factory=list)
    completed: bool = True


def stage3(
    policy: PolicyNet,
    reward: RewardNet,
    task: TaskConfig,
    human,
    episodes: int,
    rng: np.random.Generator,
    de: DEConfig = DEConfig(),
    fail_episodes: Sequence[int] = (),
    fail_onset: int = 6,
    warm_start: bool = False,
    on_episode: Optional[Callable] = None,
) -> Stage3Result:
    """Run ``episodes`` tasks; after each, collect a report and refit the
    trust parameters on all reports so far. ``fail_episodes`` are 1-based
    task numbers in which the robot stalls at step ``fail_onset``."""
    logs, per_episode = [], []
    params, history = PRIOR_PARAMS, []
    completed = True
    for e in range(1, episodes + 1):
        run = run_task(policy, reward, task, rng, fail_onset if e in fail_episodes else None)
        state = granular_state_after(params, [l.rewards for l in logs])
        _, trace = run_episode(state, run.rewards, params)
        try:
            report = human.report(run.rewards, run.success)
        except EndOfInput:
            completed = False
            log.info("input closed after %d episodes; saving", len(logs))
            break
        entry = ExperimentLog(e, run.trajectory, run.rewards, trace, report, run.success, stage="stage3")
        logs.append(entry)
        params, res = calibrate(CalibrationSet(logs), de, warm_start=params if warm_start else None)
        history = res.history
        per_episode.append(params)
        log.info("stage3 episode %d: success=%s report=%s nll=%.4f", e, run.success, report.label, res.fun)
        if on_episode is not None:
            on_episode(entry, params)
    if logs:
        baseline_params, _ = calibrate_baseline(CalibrationSet(logs), de)
    else:
        baseline_params = PRIOR_PARAMS
    return Stage3Result(logs, params, baseline_params, history, per_episode, completed)


# ---------------------------------------------------------------------------
# Stage 4


@dataclass
class Stage4Result:
    logs: list
    granular_traces: list  # per episode, T (mean, variance)
    baseline_traces: list  # per episode, T (mean, variance), constant
    granular_final: list   # (mean, variance) at the end of each task
    baseline_final: list   # (mean, variance) after the end-of-task update


def stage4(
    policy: PolicyNet,
    reward: RewardNet,
    task: TaskConfig,
    params: TrustParams,
    baseline_params: TrustParams,
    history: Sequence[ExperimentLog],
    human,
    episodes: int,
    rng: np.random.Generator,
    fail_episodes: Sequence[int] = (),
    fail_onset: int = 6,
) -> Stage4Result:
    """Frozen-parameter inference. Both models continue from the state their
    Stage-3 replay ended in; nothing is recalibrated."""
    gstate = granular_state_after(params, [l.rewards for l in history])
    bstate = baseline_state_after(baseline_params, [l.success_flag for l in history])
    offset = max((l.experiment_id for l in history), default=0)
    logs, gtr, btr, gfin, bfin = [], [], [], [], []
    for e in range(1, episodes + 1):
        run = run_task(policy, reward, task, rng, fail_onset if e in fail_episodes else None)
        gstate, trace = run_episode(gstate, run.rewards, params)
        bstate, btrace = baseline_episode(bstate, run.success, baseline_params, task.T)
        report = None if human is None else human.report(run.rewards, run.success)
        logs.append(ExperimentLog(offset + e, run.trajectory, run.rewards, trace, report, run.success, stage="stage4"))
        gtr.append(trace)
        btr.append(btrace)
        gfin.append((trust_mean(gstate), trust_variance(gstate)))
        bfin.append((trust_mean(bstate), trust_variance(bstate)))
    return Stage4Result(logs, gtr, btr, gfin, bfin)


def replay_stage4(params: TrustParams, baseline_params: TrustParams, stage3_logs, stage4_logs, T: int) -> Stage4Result:
    """Recompute Stage-4 traces of both models from stored logs."""
    gstate = granular_state_after(params, [l.rewards for l in stage3_logs])
    bstate = baseline_state_after(baseline_params, [l.success_flag for l in stage3_logs])
    gtr, btr, gfin, bfin = [], [], [], []
    for l in stage4_logs:
        gstate, trace = run_episode(gstate, l.rewards, params)
        bstate, btrace = baseline_episode(bstate, l.success_flag, baseline_params, T)
        gtr.append(trace)
        btr.append(btrace)
        gfin.append((trust_mean(gstate), trust_variance(gstate)))
        bfin.append((trust_mean(bstate), trust_variance(bstate)))
    return Stage4Result(list(stage4_logs), gtr, btr, gfin, bfin)


# ---------------------------------------------------------------------------
# Comparison table


COMPARE_COLUMNS = (
    "experiment", "report", "reported_percent",
    "binary_abs_error", "binary_var_max", "granular_abs_error", "granular_var_max",
)


def compare(result: Stage4Result) -> list:
    """Per task: absolute error (percentage points) between the report and
    each model's end-of-task mean, and each model's largest variance over
    the task (percent squared)."""
    rows = []
    for i, l in enumerate(result.logs):
        if l.report is None:
            continue
        tau = l.report.percent
        g_var = max([v for _, v in result.granular_traces[i]] + [result.granular_final[i][1]])
        b_var = max([v for _, v in result.baseline_traces[i]] + [result.baseline_final[i][1]])
        rows.append({
            "experiment": i + 1,
            "report": l.report.label,
            "reported_percent": tau,
            "binary_abs_error": abs(tau - 100.0 * result.baseline_final[i][0]),
            "binary_var_max": 1e4 * b_var,
            "granular_abs_error": abs(tau - 100.0 * result.granular_final[i][0]),
            "granular_var_max": 1e4 * g_var,
        })
    return rows


def compare_csv(rows) -> str:
    lines = [",".join(COMPARE_COLUMNS)]
    for r in rows:
        lines.append(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in COMPARE_COLUMNS))
    return "\n".join(lines) + "\n"


def compare_markdown(rows) -> str:
    out = [
        "| Experiment | Self-reported trust | Binary mu | Binary var_max | Granular mu | Granular var_max |",
        "|---:|---|---:|---:|---:|---:|",
    ]
    for r in rows:
        b, g = r["binary_abs_error"], r["granular_abs_error"]
        bs = f"**{b:.2f}**" if b < g else f"{b:.2f}"
        gs = f"**{g:.2f}**" if g <= b else f"{g:.2f}"
        out.append(
            f"| {r['experiment']} | {r['report']} | {bs} | {r['binary_var_max']:.2f} | {gs} | {r['granular_var_max']:.2f} |"
        )
    return "\n".join(out) + "\n"
