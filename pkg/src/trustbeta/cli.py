"""Command-line orchestration of the four stages.

Every run is anchored by a manifest (``--manifest``, default
``run/manifest.json``). The first command creates it from ``--seed`` and
``--config``; later commands read seeds, configuration and file locations
from it, so a stage re-run with the same manifest rewrites identical bytes.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import core
from .calibrate import CalibrationSet, DEConfig, calibrate, calibrate_baseline, history_csv, nll, baseline_nll
from .core import DEFAULT_LIKERT_PERCENTS, ExperimentLog, Trajectory, check_likert_mapping, seeded_rng
from .diffnet import PolicyNet, RewardNet
from .env import TaskConfig, reset, synth_demo
from .errors import ConfigError, DomainError, SchemaError, TrustBetaError
from .learning import TrainConfig, train_stage2
from .pipeline import (
    InteractiveHuman,
    SyntheticHuman,
    SyntheticHumanConfig,
    compare,
    compare_csv,
    compare_markdown,
    granular_state_after,
    baseline_state_after,
    replay_stage4,
    stage3,
    stage4,
)
from .trust import TrustParams, baseline_update, episode_records, trace_csv, trust_mean, trust_variance

log = logging.getLogger("trustbeta")

DEFAULT_MANIFEST = "run/manifest.json"

PATHS = {
    "demos": "demos.jsonl",
    "policy": "policy.json",
    "reward": "reward.json",
    "train_log": "train_losses.csv",
    "stage3_logs": "stage3.jsonl",
    "lambda": "lambda.json",
    "baseline_lambda": "baseline_lambda.json",
    "calibration_history": "calibration_history.csv",
    "stage4_logs": "stage4.jsonl",
    "stage4_traces": "stage4_traces.csv",
    "compare_csv": "compare.csv",
    "compare_md": "compare.md",
    "traces": "traces",
}

STAGE_SEEDS = ("demo", "train", "calibrate", "stage3", "human3", "stage4", "human4")


# ---------------------------------------------------------------------------
# Configuration


def default_config() -> dict:
    return {
        "task": TaskConfig().to_dict(),
        "demo": {"N": 30, "noise": 0.01},
        "train": {k: v for k, v in TrainConfig().to_dict().items() if k != "seed"},
        "de": {k: v for k, v in DEConfig().to_dict().items() if k != "seed"},
        "human": SyntheticHumanConfig().to_dict(),
        "likert": list(DEFAULT_LIKERT_PERCENTS),
        "stage3": {"episodes": 10, "fail_episodes": [4, 7], "fail_onset": 6, "warm_start": False},
        "stage4": {"episodes": 5, "fail_episodes": [3, 4, 5], "fail_onset": 6},
    }


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key '{where}{key}'")
        if isinstance(base[key], dict) and key != "bounds":
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{where}{key}' must be a table")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            return tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc.msg})") from None


def resolve_config(override: dict | None = None) -> dict:
    """Defaults overlaid with ``override``; every section is checked by
    building the typed config it describes."""
    cfg = _merge(default_config(), override or {})
    try:
        cfg["task"] = TaskConfig.from_dict(cfg["task"]).to_dict()
        TrainConfig.from_dict(cfg["train"])
        DEConfig.from_dict(cfg["de"])
        SyntheticHumanConfig.from_dict(cfg["human"])
        cfg["likert"] = list(check_likert_mapping(cfg["likert"]))
        for stage in ("stage3", "stage4"):
            s = cfg[stage]
            if int(s["episodes"]) < 0 or int(s["fail_onset"]) < 0:
                raise ConfigError(f"{stage}: episodes and fail_onset must be >= 0")
    except DomainError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(core.dumps(cfg).encode("utf-8")).hexdigest()


def derive_seeds(seed: int) -> dict:
    """One independent 63-bit seed per stage, all derived from the run seed."""
    ss = np.random.SeedSequence(int(seed))
    return {name: int(child.generate_state(1, np.uint64)[0] >> 1) for name, child in zip(STAGE_SEEDS, ss.spawn(len(STAGE_SEEDS)))}


# ---------------------------------------------------------------------------
# Manifest


@dataclass
class RunManifest:
    path: Path
    seed: int
    config: dict

    @property
    def root(self) -> Path:
        return self.path.parent

    @property
    def seeds(self) -> dict:
        return derive_seeds(self.seed)

    def file(self, name: str) -> Path:
        return self.root / PATHS[name]

    def to_record(self) -> dict:
        return {
            "schema_version": core.SCHEMA_VERSION,
            "kind": "manifest",
            "seed": self.seed,
            "seeds": self.seeds,
            "config": self.config,
            "config_hash": config_hash(self.config),
            "paths": dict(PATHS),
        }

    def save(self):
        self.root.mkdir(parents=True, exist_ok=True)
        record = self.to_record()
        core.validate(record, "manifest")
        core.write_json(self.path, record)

    @classmethod
    def load(cls, path) -> "RunManifest":
        path = Path(path)
        record = core.read_json(path)
        core.validate(record, "manifest")
        if record["schema_version"] != core.SCHEMA_VERSION:
            raise SchemaError(f"unsupported manifest schema_version {record['schema_version']}")
        if config_hash(record["config"]) != record["config_hash"]:
            raise SchemaError(f"{path}: config does not match its recorded hash")
        return cls(path, int(record["seed"]), resolve_config(record["config"]))

    # typed views of the configuration
    @property
    def task(self) -> TaskConfig:
        return TaskConfig.from_dict(self.config["task"])

    @property
    def train(self) -> TrainConfig:
        return TrainConfig.from_dict({**self.config["train"], "seed": self.seeds["train"]})

    @property
    def de(self) -> DEConfig:
        return DEConfig.from_dict({**self.config["de"], "seed": self.seeds["calibrate"]})

    @property
    def human(self) -> SyntheticHumanConfig:
        return SyntheticHumanConfig.from_dict(self.config["human"])

    @property
    def likert(self) -> tuple:
        return tuple(self.config["likert"])


def open_manifest(args) -> RunManifest:
    """Load the manifest, or create it from ``--seed``/``--config`` if absent.
    Conflicting flags for an existing manifest are an error."""
    path = Path(args.manifest or DEFAULT_MANIFEST)
    override = load_config_file(args.config) if args.config else None
    if path.exists():
        m = RunManifest.load(path)
        if args.seed is not None and int(args.seed) != m.seed:
            raise ConfigError(f"{path} was created with seed {m.seed}, not {args.seed}")
        if override is not None and config_hash(resolve_config(override)) != config_hash(m.config):
            raise ConfigError(f"{path} was created with a different configuration")
        return m
    seed = 0 if args.seed is None else int(args.seed)
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    m = RunManifest(path, seed, resolve_config(override))
    m.save()
    log.info("created manifest %s (seed %d)", path, seed)
    return m


# ---------------------------------------------------------------------------
# Typed file I/O


def write_checkpoint(path, net, role: str, seed: int, training: dict):
    record = {"schema_version": core.SCHEMA_VERSION, "kind": "checkpoint", "role": role,
              **net.to_dict(), "seed": seed, "training": training}
    core.validate(record, "checkpoint")
    core.write_json(path, record)


def read_checkpoint(path, role: str):
    record = _read_record(path, "checkpoint")
    if record["role"] != role:
        raise SchemaError(f"{path}: expected a {role} checkpoint, found {record['role']}")
    cls = PolicyNet if role == "policy" else RewardNet
    try:
        net = cls.from_dict(record)
    except (DomainError, ValueError) as exc:
        raise SchemaError(f"{path}: {exc}") from None
    net.params.flags.writeable = False
    return net


def _read_record(path, kind):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path} not found")
    record = core.read_json(path)
    try:
        core.validate(record, kind)
    except SchemaError as exc:
        raise SchemaError(f"{path}: {exc}") from None
    return record


def write_params(path, params: TrustParams, model: str, score: float):
    record = {"schema_version": core.SCHEMA_VERSION, "kind": "trust_params",
              **params.to_dict(), "model": model, "nll": float(score)}
    core.validate(record, "trust_params")
    core.write_json(path, record)


def read_params(path) -> TrustParams:
    return core.from_record(_read_record(path, "trust_params"), "trust_params", TrustParams)


def write_trajectories(path, trajs):
    core.write_jsonl(path, [core.to_record(t, "trajectory") for t in trajs])


def read_trajectories(path) -> list:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path} not found; run demo-gen first")
    records = core.read_jsonl(path)
    if not records:
        raise SchemaError(f"{path}: corpus is empty")
    out = []
    for i, rec in enumerate(records, 1):
        try:
            out.append(core.from_record(rec, "trajectory", Trajectory))
        except SchemaError as exc:
            raise SchemaError(f"{path}:{i}: {exc}") from None
    return out


def write_logs(path, logs):
    core.write_jsonl(path, [core.to_record(l, "experiment_log") for l in logs])


def read_logs(path, hint: str) -> list:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path} not found; run {hint} first")
    out = []
    for i, rec in enumerate(core.read_jsonl(path), 1):
        try:
            out.append(core.from_record(rec, "experiment_log", ExperimentLog))
        except SchemaError as exc:
            raise SchemaError(f"{path}:{i}: {exc}") from None
    return out


def _write_text(path, text: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# Commands


def cmd_demo_gen(m: RunManifest, args) -> int:
    n = m.config["demo"]["N"] if args.n is None else args.n
    noise = m.config["demo"]["noise"] if args.noise is None else args.noise
    if n < 1:
        raise SchemaError("a demonstration corpus needs at least one trajectory (N >= 1)")
    task = m.task
    rng = seeded_rng(m.seeds["demo"])
    demos = [synth_demo(reset(task, rng), task, rng, noise) for _ in range(n)]
    write_trajectories(m.file("demos"), demos)
    print(f"wrote {n} demonstrations to {m.file('demos')}")
    return 0


def cmd_train(m: RunManifest, args) -> int:
    demos = read_trajectories(m.file("demos"))
    config = m.train
    policy, reward, report = train_stage2(demos, config, m.task)
    final = report.rows[-1]
    meta = {"config": config.to_dict(), "demos": len(demos), "final": final,
            "config_hash": config_hash(m.config)}
    write_checkpoint(m.file("policy"), policy, "policy", config.seed, meta)
    write_checkpoint(m.file("reward"), reward, "reward", config.seed, meta)
    _write_text(m.file("train_log"), report.to_csv())
    print(f"trained {config.K} epochs: bc_loss={final['bc_loss']:.4f} maxent_loss={final['maxent_loss']:.4f}")
    return 0


def _load_models(m):
    return read_checkpoint(m.file("policy"), "policy"), read_checkpoint(m.file("reward"), "reward")


def _fail_set(values):
    return tuple(int(v) for v in values)


def _parse_episodes(text):
    if text is None:
        return None
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"episode list must be comma-separated integers, got {text!r}") from None


def cmd_stage3(m: RunManifest, args) -> int:
    policy, reward = _load_models(m)
    s3 = m.config["stage3"]
    episodes = s3["episodes"] if args.episodes is None else args.episodes
    fails = _fail_set(s3["fail_episodes"]) if args.fail_episodes is None else _parse_episodes(args.fail_episodes)
    if args.human == "interactive":
        human = InteractiveHuman(mapping=m.likert)
    else:
        human = SyntheticHuman(m.human, seeded_rng(m.seeds["human3"]), m.likert)

    def show(entry, params):
        if args.human == "interactive":
            print(f"task {entry.experiment_id}: success={entry.success_flag} "
                  f"estimated trust {100 * entry.trust_estimates[0][0]:.1f}% -> {100 * entry.trust_estimates[-1][0]:.1f}%")

    result = stage3(policy, reward, m.task, human, episodes, seeded_rng(m.seeds["stage3"]), m.de,
                    fail_episodes=fails, fail_onset=s3["fail_onset"],
                    warm_start=bool(args.warm_start or s3["warm_start"]), on_episode=show)
    write_logs(m.file("stage3_logs"), result.logs)
    if result.logs:
        data = CalibrationSet(result.logs)
        write_params(m.file("lambda"), result.params, "granular", nll(result.params, data))
        write_params(m.file("baseline_lambda"), result.baseline_params, "binary",
                     baseline_nll(result.baseline_params, data))
        _write_text(m.file("calibration_history"), history_csv(result.history))
    if not result.completed:
        print(f"input closed; saved {len(result.logs)} episode(s)")
    print(f"stage 3: {len(result.logs)} episodes, lambda* = {result.params.to_dict()}")
    return 0


def _stage3_outputs(m):
    if not m.file("lambda").exists():
        raise ConfigError(f"{m.file('lambda')} not found; run 'stage3' to calibrate the trust parameters first")
    params = read_params(m.file("lambda"))
    baseline = read_params(m.file("baseline_lambda"))
    logs = read_logs(m.file("stage3_logs"), "stage3")
    return params, baseline, logs


def cmd_stage4(m: RunManifest, args) -> int:
    params, baseline, history = _stage3_outputs(m)
    policy, reward = _load_models(m)
    s4 = m.config["stage4"]
    episodes = s4["episodes"] if args.episodes is None else args.episodes
    fails = _fail_set(s4["fail_episodes"]) if args.fail_episodes is None else _parse_episodes(args.fail_episodes)
    if args.human == "interactive":
        human = InteractiveHuman(mapping=m.likert)
    elif args.human == "synthetic":
        human = SyntheticHuman(m.human, seeded_rng(m.seeds["human4"]), m.likert)
        human.state = granular_state_after(m.human.params, [l.rewards for l in history])
    else:
        human = None
    result = stage4(policy, reward, m.task, params, baseline, history, human, episodes,
                    seeded_rng(m.seeds["stage4"]), fail_episodes=fails, fail_onset=s4["fail_onset"])
    write_logs(m.file("stage4_logs"), result.logs)
    lines = ["experiment,t,granular_mean,granular_variance,baseline_mean,baseline_variance"]
    for l, g, b in zip(result.logs, result.granular_traces, result.baseline_traces):
        for t, ((gm, gv), (bm, bv)) in enumerate(zip(g, b), 1):
            lines.append(f"{l.experiment_id},{t},{gm!r},{gv!r},{bm!r},{bv!r}")
    _write_text(m.file("stage4_traces"), "\n".join(lines) + "\n")
    for l, (gm, _), (bm, _) in zip(result.logs, result.granular_final, result.baseline_final):
        rep = "-" if l.report is None else f"{l.report.percent:g}%"
        print(f"task {l.experiment_id}: success={l.success_flag} granular={100 * gm:.2f}% "
              f"binary={100 * bm:.2f}% report={rep}")
    return 0


def cmd_compare(m: RunManifest, args) -> int:
    params, baseline, history = _stage3_outputs(m)
    logs = read_logs(m.file("stage4_logs"), "stage4")
    if not any(l.report is not None for l in logs):
        raise ConfigError("stage 4 logs carry no trust reports; run stage4 with a human")
    rows = compare(replay_stage4(params, baseline, history, logs, m.task.T))
    md = compare_markdown(rows)
    _write_text(m.file("compare_csv"), compare_csv(rows))
    _write_text(m.file("compare_md"), md)
    print(md, end="")
    return 0


def cmd_export(m: RunManifest, args) -> int:
    """Per-episode granular trust traces for every logged task, plus the
    baseline's before/after estimates per task."""
    params, baseline, history = _stage3_outputs(m)
    logs = list(history)
    if m.file("stage4_logs").exists():
        logs += read_logs(m.file("stage4_logs"), "stage4")
    out = m.file("traces")
    out.mkdir(parents=True, exist_ok=True)
    state, bstate = granular_state_after(params, []), baseline_state_after(baseline, [])
    lines = ["experiment,stage,success,pre_mean,pre_variance,post_mean,post_variance"]
    for l in logs:
        state, rows = episode_records(state, l.rewards, params)
        _write_text(out / f"{l.stage or 'episode'}_{l.experiment_id:03d}.csv", trace_csv(rows))
        pre = (trust_mean(bstate), trust_variance(bstate))
        bstate = baseline_update(bstate, l.success_flag, baseline)
        lines.append(f"{l.experiment_id},{l.stage},{l.success_flag},{pre[0]!r},{pre[1]!r},"
                     f"{trust_mean(bstate)!r},{trust_variance(bstate)!r}")
    _write_text(out / "baseline.csv", "\n".join(lines) + "\n")
    print(f"wrote {len(logs)} trace files to {out}")
    return 0


def cmd_calibrate(args) -> int:
    """Standalone calibration of a JSON-lines experiment log."""
    logs = read_logs(args.input, "stage3")
    data = CalibrationSet(logs)
    override = load_config_file(args.config) if args.config else {}
    de_cfg = resolve_config(override)["de"]
    de = DEConfig.from_dict({**de_cfg, "seed": 0 if args.seed is None else int(args.seed)})
    if args.model == "binary":
        params, res = calibrate_baseline(data, de)
    else:
        params, res = calibrate(data, de)
    write_params(args.output, params, args.model, res.fun)
    if args.history:
        _write_text(args.history, history_csv(res.history))
    print(f"nll={res.fun:.6f} params={params.to_dict()}")
    return 0


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", default=argparse.SUPPRESS, help=f"run manifest (default {DEFAULT_MANIFEST})")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="run seed, used when creating the manifest")
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON or TOML configuration overrides")

    parser = argparse.ArgumentParser(prog="trustbeta", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo-gen", parents=[common], help="stage 1: synthesize a demonstration corpus")
    p.add_argument("--n", type=int, default=None, help="number of demonstrations")
    p.add_argument("--noise", type=float, default=None, help="jitter scale of the demonstrator")

    sub.add_parser("train", parents=[common], help="stage 2: behavior cloning and reward learning")

    p = sub.add_parser("stage3", parents=[common], help="stage 3: collect reports and calibrate trust")
    p.add_argument("--human", choices=("interactive", "synthetic"), default="synthetic")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--fail-episodes", default=None, help="comma-separated 1-based tasks that stall mid-way")
    p.add_argument("--warm-start", action="store_true", help="seed each recalibration with the previous fit")

    p = sub.add_parser("stage4", parents=[common], help="stage 4: frozen-parameter trust inference")
    p.add_argument("--human", choices=("interactive", "synthetic", "none"), default="synthetic")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--fail-episodes", default=None, help="comma-separated 1-based tasks that stall mid-way")

    sub.add_parser("compare", parents=[common], help="end-of-task error table for both trust models")
    sub.add_parser("export", parents=[common], help="write per-episode trust traces as CSV")

    p = sub.add_parser("calibrate", parents=[common], help="fit trust parameters to an experiment log")
    p.add_argument("--input", required=True, help="JSON-lines experiment logs with reports")
    p.add_argument("--output", required=True, help="where to write the fitted parameters")
    p.add_argument("--history", default=None, help="optional CSV of best nll per generation")
    p.add_argument("--model", choices=("granular", "binary"), default="granular")
    return parser


COMMANDS = {
    "demo-gen": cmd_demo_gen,
    "train": cmd_train,
    "stage3": cmd_stage3,
    "stage4": cmd_stage4,
    "compare": cmd_compare,
    "export": cmd_export,
}


def setup_logging():
    level = os.environ.get("TRUSTBETA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    for name in ("manifest", "seed", "config"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        if args.command == "calibrate":
            return cmd_calibrate(args)
        return COMMANDS[args.command](open_manifest(args), args)
    except TrustBetaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
