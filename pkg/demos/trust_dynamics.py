"""Granular trust versus end-of-task trust on scripted reward streams.

No learning here: three tasks with hand-made per-step rewards (a clean run,
a run that stalls at step 6, another clean run) are fed to both models with
the same parameters. The granular estimate reacts inside the task; the
baseline only moves once the task is over.

    python demos/trust_dynamics.py
"""

import numpy as np

from trustbeta.pipeline import REFERENCE_PARAMS
from trustbeta.trust import baseline_episode, init_state, run_episode, trust_mean

T = 20
rng = np.random.default_rng(0)
clean = np.clip(rng.normal(0.45, 0.1, T), -1, 1)
stalled = np.concatenate([clean[:6], np.clip(rng.normal(-0.4, 0.1, T - 6), -1, 1)])
tasks = [("clean", clean, True), ("stall at t=6", stalled, False), ("clean", clean, True)]

p = REFERENCE_PARAMS
g, b = init_state(p), init_state(p)
print(f"parameters: {p.to_dict()}")
print(f"start: trust {100 * trust_mean(g):.2f}%\n")
for k, (name, rewards, ok) in enumerate(tasks, 1):
    start = trust_mean(g)
    g, trace = run_episode(g, rewards, p)
    b, btrace = baseline_episode(b, ok, p, T)
    means = [100 * m for m, _ in trace]
    print(f"task {k} ({name})")
    print("  granular  " + " ".join(f"{m:5.1f}" for m in means[::2]))
    print("  baseline  " + " ".join(f"{100 * m:5.1f}" for m, _ in btrace[::2]))
    print(f"  granular {100 * start:.2f}% -> {means[-1]:.2f}%, baseline after task {100 * trust_mean(b):.2f}%\n")

# the next task starts from the aged end state, not from the prior
r = clean[0]
fresh, _ = run_episode(init_state(p), [r], p)
cont, _ = run_episode(g, [r], p)
print(f"first step of a fourth task: {100 * trust_mean(cont):.2f}% (from history) "
      f"vs {100 * trust_mean(fresh):.2f}% (from the prior)")
