"""All four stages in one process with a synthetic reporter.

Stage 1 synthesizes 30 demonstrations, Stage 2 learns a policy and a reward,
Stage 3 runs 10 tasks (two of them stall mid-way) and recalibrates the trust
parameters after each Likert report, Stage 4 freezes everything and runs 5
more tasks, three of which stall. Prints the per-task error table for the
granular and the end-of-task model. Takes about half a minute.

    python demos/closed_loop.py [--unquantized]
"""

import argparse

import numpy as np

from trustbeta.calibrate import replay_end_states
from trustbeta.core import seeded_rng
from trustbeta.env import TaskConfig, reset, synth_demo
from trustbeta.learning import TrainConfig, train_stage2
from trustbeta.pipeline import (
    REFERENCE_PARAMS,
    SyntheticHuman,
    SyntheticHumanConfig,
    compare,
    compare_markdown,
    stage3,
    stage4,
)

parser = argparse.ArgumentParser()
parser.add_argument("--unquantized", action="store_true", help="report exact percentages instead of Likert levels")
args = parser.parse_args()

task = TaskConfig()
rng = seeded_rng(0)
demos = [synth_demo(reset(task, rng), task, rng, noise=0.01) for _ in range(30)]
policy, reward, report = train_stage2(demos, TrainConfig(seed=1), task)
print(f"stage 2: final bc_loss {report.rows[-1]['bc_loss']:.3f}")

human = SyntheticHuman(SyntheticHumanConfig(quantize=not args.unquantized), seeded_rng(2))
s3 = stage3(policy, reward, task, human, 10, seeded_rng(3), fail_episodes=(4, 7))
print("stage 3 reports:", " ".join(f"{l.report.percent:.0f}" for l in s3.logs))
print("fitted:", {k: round(v, 4) for k, v in s3.params.to_dict().items()})

streams = [l.rewards for l in s3.logs]
fit = [a / (a + b) for a, b in replay_end_states(s3.params, streams)]
true = [a / (a + b) for a, b in replay_end_states(REFERENCE_PARAMS, streams)]
print(f"in-sample MAE against the hidden generator: {100 * np.mean(np.abs(np.subtract(fit, true))):.2f} points\n")

s4 = stage4(policy, reward, task, s3.params, s3.baseline_params, s3.logs, human, 5, seeded_rng(4),
            fail_episodes=(3, 4, 5))
print(compare_markdown(compare(s4)))
