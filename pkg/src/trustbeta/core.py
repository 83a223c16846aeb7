"""Domain vocabulary shared by every module: states, actions, trajectories,
the Likert trust scale, seeded randomness and the JSON record formats."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Optional, Sequence

import jsonschema
import numpy as np

from .errors import DomainError, SchemaError

SCHEMA_VERSION = 1
DEFAULT_T = 20
STATE_DIM = 5
ACTION_DIM = 3

LIKERT_LABELS = (
    "High Distrust",
    "Moderate Distrust",
    "Slight Distrust",
    "Neutral",
    "Slight Trust",
    "Moderate Trust",
    "High Trust",
)
DEFAULT_LIKERT_PERCENTS = (2.0, 18.0, 34.0, 50.0, 66.0, 82.0, 98.0)


def _vec(values, size, name):
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if arr.shape != (size,):
        raise DomainError(f"{name} must have {size} components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite, got {arr}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class EnvState:
    """Robot state features: displacement to the target, clearance from the
    obstacle surface and height above the ground (all meters)."""

    ee_to_target: np.ndarray
    dist_obstacle: float
    height: float

    def __post_init__(self):
        object.__setattr__(self, "ee_to_target", _vec(self.ee_to_target, 3, "ee_to_target"))
        d, h = float(self.dist_obstacle), float(self.height)
        if not (np.isfinite(d) and np.isfinite(h)):
            raise DomainError("state features must be finite")
        if d < 0 or h < 0:
            raise DomainError(f"dist_obstacle and height must be >= 0, got {d}, {h}")
        object.__setattr__(self, "dist_obstacle", d)
        object.__setattr__(self, "height", h)

    def as_array(self) -> np.ndarray:
        return np.array([*self.ee_to_target, self.dist_obstacle, self.height])

    @classmethod
    def from_array(cls, x) -> "EnvState":
        x = np.asarray(x, dtype=np.float64)
        return cls(x[:3], x[3], x[4])

    def __eq__(self, other):
        if not isinstance(other, EnvState):
            return NotImplemented
        return bool(np.array_equal(self.as_array(), other.as_array()))

    def to_dict(self) -> dict:
        return {
            "ee_to_target": [float(v) for v in self.ee_to_target],
            "dist_obstacle": self.dist_obstacle,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d) -> "EnvState":
        return cls(d["ee_to_target"], d["dist_obstacle"], d["height"])


@dataclass(frozen=True, eq=False)
class EnvAction:
    """Commanded absolute end-effector position (meters)."""

    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _vec(self.position, 3, "position"))

    def __eq__(self, other):
        if not isinstance(other, EnvAction):
            return NotImplemented
        return bool(np.array_equal(self.position, other.position))

    def to_dict(self) -> dict:
        return {"position": [float(v) for v in self.position]}

    @classmethod
    def from_dict(cls, d) -> "EnvAction":
        return cls(d["position"])


SOURCES = ("human_demo", "robot_rollout")


class Trajectory:
    """A fixed-horizon sequence of (state, action) pairs.

    Stored as two read-only arrays, ``states`` (T, 5) and ``actions`` (T, 3);
    ``steps`` yields the typed pairs.
    """

    __slots__ = ("states", "actions", "source")

    def __init__(self, states, actions, source="robot_rollout"):
        states = np.array(states, dtype=np.float64)
        actions = np.array(actions, dtype=np.float64)
        if states.ndim != 2 or states.shape[1] != STATE_DIM:
            raise DomainError(f"states must be (T, {STATE_DIM}), got {states.shape}")
        if actions.shape != (states.shape[0], ACTION_DIM):
            raise DomainError(f"actions must be ({states.shape[0]}, {ACTION_DIM}), got {actions.shape}")
        if len(states) == 0:
            raise DomainError("trajectory must have at least one step")
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(actions))):
            raise DomainError("trajectory contains non-finite values")
        if np.any(states[:, 3:] < 0):
            raise DomainError("dist_obstacle and height must be >= 0")
        if source not in SOURCES:
            raise DomainError(f"source must be one of {SOURCES}, got {source!r}")
        states.flags.writeable = False
        actions.flags.writeable = False
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "source", source)

    def __setattr__(self, name, value):
        raise AttributeError("Trajectory is immutable")

    def __len__(self):
        return len(self.states)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.source == other.source
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
        )

    def __repr__(self):
        return f"Trajectory(T={len(self)}, source={self.source!r})"

    @property
    def steps(self) -> list[tuple[EnvState, EnvAction]]:
        return [(EnvState.from_array(s), EnvAction(a)) for s, a in zip(self.states, self.actions)]

    @classmethod
    def from_steps(cls, steps: Iterable[tuple[EnvState, EnvAction]], source="robot_rollout"):
        steps = list(steps)
        return cls([s.as_array() for s, _ in steps], [a.position for _, a in steps], source)

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "steps": [
                {"state": s.to_dict(), "action": a.to_dict()} for s, a in self.steps
            ],
        }

    @classmethod
    def from_dict(cls, d) -> "Trajectory":
        steps = [(EnvState.from_dict(p["state"]), EnvAction.from_dict(p["action"])) for p in d["steps"]]
        return cls.from_steps(steps, d["source"])


# ---------------------------------------------------------------------------
# Likert scale


def check_likert_mapping(mapping: Sequence[float]) -> tuple:
    mapping = tuple(float(p) for p in mapping)
    if len(mapping) != 7:
        raise DomainError(f"Likert mapping needs 7 percents, got {len(mapping)}")
    if any(not (0.0 <= p <= 100.0) for p in mapping):
        raise DomainError("Likert percents must lie in [0, 100]")
    if any(b <= a for a, b in zip(mapping, mapping[1:])):
        raise DomainError("Likert mapping must be strictly increasing")
    if mapping[3] != 50.0:
        raise DomainError("Likert level 4 (Neutral) must map to 50%")
    return mapping


def likert_to_percent(level: int, mapping: Sequence[float] = DEFAULT_LIKERT_PERCENTS) -> float:
    mapping = check_likert_mapping(mapping)
    if isinstance(level, bool) or int(level) != level or not 1 <= level <= 7:
        raise DomainError(f"Likert level must be an integer in 1..7, got {level!r}")
    return mapping[int(level) - 1]


def percent_to_likert(percent: float, mapping: Sequence[float] = DEFAULT_LIKERT_PERCENTS) -> int:
    """Nearest Likert level to a percent value; ties go to the lower level."""
    mapping = check_likert_mapping(mapping)
    dist = [abs(percent - p) for p in mapping]
    return int(np.argmin(dist)) + 1


@dataclass(frozen=True)
class LikertLevel:
    level: int
    percent: float

    def __post_init__(self):
        if isinstance(self.level, bool) or int(self.level) != self.level or not 1 <= self.level <= 7:
            raise DomainError(f"Likert level must be in 1..7, got {self.level!r}")
        if not 0.0 <= self.percent <= 100.0:
            raise DomainError(f"percent must be in [0, 100], got {self.percent}")
        object.__setattr__(self, "level", int(self.level))
        object.__setattr__(self, "percent", float(self.percent))

    @classmethod
    def from_level(cls, level, mapping=DEFAULT_LIKERT_PERCENTS) -> "LikertLevel":
        return cls(level, likert_to_percent(level, mapping))

    @property
    def label(self) -> str:
        return LIKERT_LABELS[self.level - 1]

    @property
    def fraction(self) -> float:
        return self.percent / 100.0

    def to_dict(self):
        return {"level": self.level, "percent": self.percent}

    @classmethod
    def from_dict(cls, d):
        return cls(d["level"], d["percent"])


# ---------------------------------------------------------------------------
# Experiment records


@dataclass(frozen=True, eq=False)
class ExperimentLog:
    """One completed task: the rollout, its per-step rewards and trust
    estimates, and the end-of-task self-report (if any)."""

    experiment_id: int
    trajectory: Trajectory
    rewards: tuple
    trust_estimates: tuple
    report: Optional[LikertLevel] = None
    success_flag: bool = False
    stage: Optional[str] = None

    def __post_init__(self):
        rewards = tuple(float(r) for r in self.rewards)
        estimates = tuple((float(m), float(v)) for m, v in self.trust_estimates)
        if len(rewards) != len(self.trajectory):
            raise DomainError(f"expected {len(self.trajectory)} rewards, got {len(rewards)}")
        if len(estimates) != len(rewards):
            raise DomainError("trust_estimates and rewards must have equal length")
        if any(not (-1.0 <= r <= 1.0) for r in rewards):
            raise DomainError("rewards must lie in [-1, 1]")
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "trust_estimates", estimates)
        object.__setattr__(self, "success_flag", bool(self.success_flag))
        object.__setattr__(self, "experiment_id", int(self.experiment_id))

    def __eq__(self, other):
        if not isinstance(other, ExperimentLog):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def to_dict(self) -> dict:
        d = {
            "experiment_id": self.experiment_id,
            "trajectory": self.trajectory.to_dict(),
            "rewards": list(self.rewards),
            "trust_estimates": [list(e) for e in self.trust_estimates],
            "report": None if self.report is None else self.report.to_dict(),
            "success_flag": self.success_flag,
        }
        if self.stage is not None:
            d["stage"] = self.stage
        return d

    @classmethod
    def from_dict(cls, d) -> "ExperimentLog":
        return cls(
            experiment_id=d["experiment_id"],
            trajectory=Trajectory.from_dict(d["trajectory"]),
            rewards=d["rewards"],
            trust_estimates=d["trust_estimates"],
            report=None if d.get("report") is None else LikertLevel.from_dict(d["report"]),
            success_flag=d["success_flag"],
            stage=d.get("stage"),
        )


# ---------------------------------------------------------------------------
# Randomness


def seeded_rng(seed: int) -> np.random.Generator:
    """PCG64 stream; identical seeds give identical streams on every platform."""
    return np.random.Generator(np.random.PCG64(int(seed) % 2**64))


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)


def spawn_rngs(rng: np.random.Generator, n: int) -> list:
    """Independent child streams, one per worker."""
    return rng.spawn(n)


# ---------------------------------------------------------------------------
# Serialization

_SCHEMA = None


def schema() -> dict:
    global _SCHEMA
    if _SCHEMA is None:
        text = resources.files("trustbeta").joinpath("schemas/v1.json").read_text()
        _SCHEMA = json.loads(text)
    return _SCHEMA


def validate(record: dict, kind: str) -> None:
    """Validate a record against the named definition of the schema document."""
    doc = schema()
    if kind not in doc["$defs"]:
        raise SchemaError(f"unknown record kind {kind!r}")
    sub = {"$schema": doc["$schema"], "$defs": doc["$defs"], "$ref": f"#/$defs/{kind}"}
    try:
        jsonschema.validate(record, sub)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise SchemaError(f"invalid {kind} record at '{path}': {exc.message}") from None


def dumps(record: dict) -> str:
    """Canonical JSON text: sorted keys, compact separators, shortest float repr."""
    return json.dumps(record, sort_keys=True, separators=(",", ":"), allow_nan=False)


def to_record(obj, kind: str) -> dict:
    record = {"schema_version": SCHEMA_VERSION, "kind": kind, **obj.to_dict()}
    validate(record, kind)
    return record


def from_record(record: dict, kind: str, cls):
    if not isinstance(record, dict):
        raise SchemaError(f"expected a JSON object for {kind}")
    if record.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {record.get('schema_version')!r}")
    validate(record, kind)
    body = {k: v for k, v in record.items() if k not in ("schema_version", "kind")}
    try:
        return cls.from_dict(body)
    except DomainError as exc:
        raise SchemaError(f"invalid {kind} record: {exc}") from None


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")


def read_jsonl(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: not valid JSON ({exc.msg})") from None
    return out


def write_json(path, record: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(record) + "\n")


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc.msg})") from None
