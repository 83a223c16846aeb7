import numpy as np
import pytest

from trustbeta.core import EnvAction, seeded_rng
from trustbeta.env import (
    TaskConfig,
    chains,
    features,
    final_position,
    in_workspace,
    plan_path,
    position_of,
    random_trajectory,
    reset,
    rollout,
    state_at,
    synth_demo,
    task_success,
    transition,
)
from trustbeta.errors import ConfigError, DomainError


class ConstantPolicy:
    """Commands a fixed position with a fixed variance."""

    def __init__(self, target, var=1e-2):
        self.target = np.asarray(target, dtype=float)
        self.var = var

    def mean_var(self, states):
        n = len(np.atleast_2d(states))
        return np.tile(self.target, (n, 1)), np.full(n, self.var)


class Homing:
    """Steers toward the target using the displacement feature."""

    def __init__(self, config, var=1e-2):
        self.config = config
        self.var = var

    def mean_var(self, states):
        states = np.atleast_2d(states)
        return position_of(states, self.config) + states[:, :3], np.full(len(states), self.var)


def test_default_max_step_allows_the_longest_straight_path(task):
    corners = np.array(np.meshgrid(*zip(task.start_min, task.start_max))).reshape(3, -1).T
    longest = np.max(np.linalg.norm(corners - np.array(task.target), axis=1))
    assert task.max_step * task.T == pytest.approx(1.5 * longest)


@pytest.mark.parametrize("kw", [
    {"obstacle_radius": 0.0},
    {"target": (0.5, 0.5, 0.25)},
    {"start_min": (0.5, 0.3, 0.1)},
    {"T": 0},
    {"workspace_max": (1.0, 0.0, 1.0)},
])
def test_task_config_rejects_infeasible_geometry(kw):
    with pytest.raises(ConfigError):
        TaskConfig(**kw)


def test_task_config_dict_round_trip(task):
    assert TaskConfig.from_dict(task.to_dict()) == task


# Features


def test_features_at_target(task):
    s = state_at(task.target, task)
    assert np.array_equal(s.ee_to_target, np.zeros(3))


def test_features_on_obstacle_surface(task):
    p = np.array(task.obstacle_center) + task.obstacle_radius * np.array([1.0, 0, 0])
    assert state_at(p, task).dist_obstacle == pytest.approx(0.0, abs=1e-15)


def test_features_hand_evaluated_clearance():
    cfg = TaskConfig(target=(0.0, 0.0, 0.0))
    p = np.array(cfg.obstacle_center) + (cfg.obstacle_radius + 1.0) * np.array([0, 0, 1.0])
    f = features(p, cfg)
    assert f[3] == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(f[:3], -p)
    assert f[4] == pytest.approx(p[2])


def test_features_vectorise(task, rng):
    ps = rng.random((7, 3))
    assert np.array_equal(features(ps, task), np.stack([features(p, task) for p in ps]))


# Reset


def test_reset_point_start_region():
    p = (0.1, 0.4, 0.3)
    cfg = TaskConfig(start_min=p, start_max=p)
    s = reset(cfg, seeded_rng(0))
    assert s == state_at(p, cfg)


def test_reset_containment(task):
    rng = seeded_rng(3)
    lo, hi = np.array(task.start_min), np.array(task.start_max)
    c = np.array(task.obstacle_center)
    for _ in range(10_000):
        p = position_of(reset(task, rng), task)
        assert np.all(p >= lo - 1e-12) and np.all(p <= hi + 1e-12)
        assert np.linalg.norm(p - c) > task.obstacle_radius


def test_reset_is_deterministic(task):
    assert reset(task, seeded_rng(9)) == reset(task, seeded_rng(9))


def test_reset_start_region_inside_obstacle():
    cfg = TaskConfig(obstacle_center=(0.3, 0.5, 0.3), obstacle_radius=0.5, target=(0.9, 0.5, 0.9),
                     start_min=(0.25, 0.45, 0.25), start_max=(0.35, 0.55, 0.35))
    with pytest.raises(ConfigError):
        reset(cfg, seeded_rng(0))


# Transition


def test_transition_limits_step_length(task):
    s = reset(task, seeded_rng(1))
    p0 = position_of(s, task)
    s1 = transition(s, EnvAction(task.target), task)
    assert np.linalg.norm(position_of(s1, task) - p0) == pytest.approx(task.max_step)


def test_transition_reaches_nearby_command_exactly(task):
    s = state_at((0.5, 0.8, 0.5), task)
    goal = np.array([0.51, 0.8, 0.5])
    assert np.allclose(position_of(transition(s, EnvAction(goal), task), task), goal)


def test_transition_rejects_bad_actions(task):
    s = reset(task, seeded_rng(1))
    with pytest.raises(DomainError):
        transition(s, EnvAction([np.nan, 0, 0]), task)
    with pytest.raises(DomainError):
        transition(s, EnvAction([2.0, 0.5, 0.5]), task)


# Rollouts


def test_rollout_length_and_chaining(task):
    s0 = reset(task, seeded_rng(2))
    traj = rollout(Homing(task), s0, task)
    assert len(traj) == task.T
    assert traj.states[0].tolist() == s0.as_array().tolist()
    assert chains(traj, task)


def test_deterministic_rollout_repeats(task):
    s0 = reset(task, seeded_rng(2))
    assert rollout(Homing(task), s0, task) == rollout(Homing(task), s0, task)


def test_vanishing_variance_matches_deterministic(task):
    s0 = reset(task, seeded_rng(2))
    a = rollout(Homing(task, var=1e-300), s0, task, rng=seeded_rng(5), stochastic=True)
    b = rollout(Homing(task), s0, task)
    assert np.allclose(a.states, b.states, atol=1e-12)


def test_stochastic_rollout_needs_rng(task):
    with pytest.raises(DomainError):
        rollout(Homing(task), reset(task, seeded_rng(0)), task, stochastic=True)


def test_rollout_clips_commands_to_workspace(task):
    traj = rollout(ConstantPolicy([5.0, -5.0, 0.5]), reset(task, seeded_rng(0)), task)
    assert all(in_workspace(a, task) for a in traj.actions)


def test_perturbation_overrides_actions(task):
    s0 = reset(task, seeded_rng(0))
    hold = lambda t, pos, a: pos.copy()
    traj = rollout(Homing(task), s0, task, perturb=hold)
    assert np.allclose(traj.states, s0.as_array())
    assert not task_success(traj, task)


# Success


def test_task_success_cases(task):
    s0 = reset(task, seeded_rng(0))
    at_target = rollout(ConstantPolicy(task.target), s0, task)
    assert task_success(at_target, task)
    d = 2 * task.success_radius
    off = np.array(task.target) + np.array([0.0, d, 0.0])
    assert not task_success(rollout(ConstantPolicy(off), s0, task), task)
    assert np.linalg.norm(final_position(rollout(ConstantPolicy(off), s0, task), task) - task.target) == pytest.approx(d)


# Demonstrator


def test_plan_path_clears_obstacle(task):
    rng = seeded_rng(4)
    c, r = np.array(task.obstacle_center), task.obstacle_radius
    for _ in range(50):
        path = plan_path(position_of(reset(task, rng), task), task)
        dense = np.concatenate([np.linspace(a, b, 50) for a, b in zip(path[:-1], path[1:])])
        assert np.min(np.linalg.norm(dense - c, axis=1)) > r


def test_noise_free_demos_succeed_and_avoid(task):
    rng = seeded_rng(0)
    for _ in range(30):
        d = synth_demo(reset(task, rng), task, rng, noise=0.0)
        assert len(d) == task.T and d.source == "human_demo"
        assert task_success(d, task)
        assert np.linalg.norm(final_position(d, task) - task.target) <= task.success_radius
        assert d.states[:, 3].min() > 0
        assert chains(d, task)


def test_noisy_corpus_stays_in_workspace(task, demos):
    assert len(demos) == 30
    for d in demos:
        assert len(d) == task.T
        assert all(in_workspace(a, task) for a in d.actions)
        assert all(in_workspace(p, task) for p in position_of(d.states, task))


def test_demo_rejects_negative_noise(task):
    with pytest.raises(DomainError):
        synth_demo(reset(task, seeded_rng(0)), task, seeded_rng(0), noise=-1.0)


def test_demo_needs_enough_steps():
    cfg = TaskConfig(max_step=0.01)
    with pytest.raises(ConfigError):
        synth_demo(reset(cfg, seeded_rng(0)), cfg)


def test_random_trajectory_is_valid(task):
    traj = random_trajectory(reset(task, seeded_rng(0)), task, seeded_rng(1))
    assert len(traj) == task.T
    assert chains(traj, task)
