"""How report resolution decides the granular-versus-binary comparison.

With gamma = 0.99 one 20-step task replaces under a fifth of the Beta mass,
so a failed task moves the reporter's trust by a few points, well below the
16-point spacing of the Likert levels. This script repeats Stage 3 and
Stage 4 over several seeds, with Likert-rounded and with exact reports, and
counts the seeds where the granular model's end-of-task error is no larger
than the baseline's on all three failed Stage-4 tasks. Takes several minutes.

    python demos/report_resolution.py [--seeds 8] [--generations 150]
"""

import argparse

from trustbeta.calibrate import DEConfig
from trustbeta.core import seeded_rng
from trustbeta.env import TaskConfig, reset, synth_demo
from trustbeta.learning import TrainConfig, train_stage2
from trustbeta.pipeline import SyntheticHuman, SyntheticHumanConfig, compare, stage3, stage4

parser = argparse.ArgumentParser()
parser.add_argument("--seeds", type=int, default=8)
parser.add_argument("--generations", type=int, default=150)
args = parser.parse_args()

task = TaskConfig()
rng = seeded_rng(0)
demos = [synth_demo(reset(task, rng), task, rng, noise=0.01) for _ in range(30)]
policy, reward, _ = train_stage2(demos, TrainConfig(seed=1), task)
de = DEConfig(generations=args.generations)

for quantize in (True, False):
    wins = 0
    for seed in range(args.seeds):
        rng = seeded_rng(seed)
        human = SyntheticHuman(SyntheticHumanConfig(quantize=quantize), rng.spawn(1)[0])
        s3 = stage3(policy, reward, task, human, 10, rng, de, fail_episodes=(4, 7))
        s4 = stage4(policy, reward, task, s3.params, s3.baseline_params, s3.logs, human, 5, rng,
                    fail_episodes=(3, 4, 5))
        rows = compare(s4)[2:]
        ok = all(r["granular_abs_error"] <= r["binary_abs_error"] for r in rows)
        wins += ok
        pairs = ", ".join(f"{r['granular_abs_error']:.1f}/{r['binary_abs_error']:.1f}" for r in rows)
        print(f"{'likert' if quantize else 'exact '} seed {seed}: granular/binary {pairs} {'ok' if ok else 'no'}")
    print(f"{'likert' if quantize else 'exact'} reports: pattern held on {wins}/{args.seeds} seeds\n")
