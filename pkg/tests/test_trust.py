import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trustbeta.calibrate import replay_end_states
from trustbeta.errors import DomainError
from trustbeta.trust import (
    FLOOR,
    TRACE_COLUMNS,
    BetaTrustState,
    TrustParams,
    baseline_episode,
    baseline_update,
    episode_records,
    fixed_point,
    init_state,
    is_success,
    literal_replay,
    run_episode,
    trace_csv,
    trust_mean,
    trust_variance,
    update,
)

params_st = st.builds(
    TrustParams,
    alpha0=st.floats(0.1, 50), beta0=st.floats(0.1, 50),
    w_s=st.floats(0.01, 20), w_f=st.floats(0.01, 20),
    eps=st.floats(-1, 1), gamma=st.floats(0.5, 1.0),
)
state_st = st.builds(lambda a, b: BetaTrustState(a, b), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))


def test_params_validation():
    for bad in ({"alpha0": 0}, {"w_f": -1}, {"eps": 1.5}, {"gamma": 0}, {"gamma": 1.01}, {"beta0": math.nan}):
        with pytest.raises(DomainError):
            TrustParams(**bad)
    p = TrustParams(2, 3, 4, 5, 0.1, 0.9)
    assert TrustParams.from_array(p.as_array()) == p
    assert TrustParams.from_dict(p.to_dict()) == p


def test_state_validation():
    with pytest.raises(DomainError):
        BetaTrustState(0.0, 1.0)
    with pytest.raises(DomainError):
        BetaTrustState(1.0, 1.0, n=1, m=0, q=0)


# Initial state


def test_init_symmetric_prior():
    s = init_state(TrustParams(alpha0=1, beta0=1))
    assert trust_mean(s) == 0.5
    assert (s.n, s.m, s.q) == (0, 0, 0)


def test_init_asymmetric_prior():
    assert trust_mean(init_state(TrustParams(alpha0=2, beta0=1))) == pytest.approx(2 / 3)


# Single-step update


LAM = TrustParams(alpha0=1, beta0=1, w_s=2, w_f=2, eps=0, gamma=0.9)


def test_update_success_example():
    s = update(BetaTrustState(1, 1), 0.5, LAM)
    assert s.alpha == pytest.approx(1.9, abs=1e-12)
    assert s.beta == pytest.approx(0.9, abs=1e-12)
    assert trust_mean(s) == pytest.approx(1.9 / 2.8, abs=1e-12)
    assert round(trust_mean(s), 4) == 0.6786
    assert (s.n, s.m, s.q) == (1, 0, 1)


def test_update_failure_example():
    s = update(BetaTrustState(1, 1), -0.5, LAM)
    assert s.alpha == pytest.approx(0.9, abs=1e-12)
    assert s.beta == pytest.approx(0.9 + 2 * math.exp(0.5), abs=1e-12)
    assert round(s.beta, 4) == 4.1974
    assert round(trust_mean(s), 4) == 0.1766
    assert (s.n, s.m, s.q) == (0, 1, 1)


def test_threshold_belongs_to_failure():
    p = TrustParams(w_s=1, w_f=1, eps=0.2, gamma=1.0)
    s = update(BetaTrustState(1, 1), 0.2, p)
    assert s.alpha == 1.0 and s.m == 1
    assert not is_success(0.2, p) and is_success(0.2000001, p)


def test_update_rejects_non_finite_reward():
    with pytest.raises(DomainError):
        update(BetaTrustState(1, 1), math.nan, LAM)


def test_floor_applies():
    p = TrustParams(gamma=0.5)
    s = BetaTrustState(FLOOR, FLOOR)
    s = update(s, 1.0, p)
    assert s.beta == FLOOR


@settings(max_examples=300, deadline=None)
@given(state_st, st.floats(-1, 1), params_st)
def test_update_counts_and_positivity(s, r, p):
    s1 = update(s, r, p)
    assert s1.q == s.q + 1 and s1.n + s1.m == s1.q
    assert s1.alpha >= FLOOR and s1.beta >= FLOOR


def test_monotonicity_sweep():
    rng = np.random.default_rng(0)
    violations = 0
    for _ in range(10_000):
        p = TrustParams(rng.uniform(0.1, 50), rng.uniform(0.1, 50), rng.uniform(0.01, 20),
                        rng.uniform(0.01, 20), rng.uniform(-1, 1), rng.uniform(0.5, 1.0))
        s = BetaTrustState(rng.uniform(0.01, 100), rng.uniform(0.01, 100))
        r = rng.uniform(-1, 1)
        before, after = trust_mean(s), trust_mean(update(s, r, p))
        if r > max(p.eps, 0.0):
            violations += not after > before
        elif r <= p.eps:
            violations += not after < before
    assert violations == 0


# Mean and variance


def test_mean_values():
    assert trust_mean(BetaTrustState(2, 2)) == 0.5
    assert trust_mean(BetaTrustState(3, 1)) == 0.75


def test_variance_values():
    assert trust_variance(BetaTrustState(1, 1)) == pytest.approx(1 / 12)
    assert trust_variance(BetaTrustState(10, 10)) == pytest.approx(1 / 84)
    assert trust_variance(BetaTrustState(10, 10)) < trust_variance(BetaTrustState(1, 1))


def test_state_properties_agree():
    s = BetaTrustState(2.5, 4.0)
    assert s.mean == trust_mean(s) and s.variance == trust_variance(s)


def test_variance_matches_scipy():
    from scipy.stats import beta

    assert trust_variance(BetaTrustState(2.5, 7.0)) == pytest.approx(beta(2.5, 7.0).var(), rel=1e-12)
    assert trust_mean(BetaTrustState(2.5, 7.0)) == pytest.approx(beta(2.5, 7.0).mean(), rel=1e-12)


# Convergence


@pytest.mark.parametrize("gamma", [0.9, 0.99])
def test_converges_to_fixed_point(gamma):
    p = TrustParams(w_s=1.5, w_f=2.0, gamma=gamma)
    r = 0.6
    (a, b), = replay_end_states(p, [[r] * 10_000])
    a_star, b_star = fixed_point(r, p)
    assert a == pytest.approx(1.5 * r / (1 - gamma), abs=1e-6)
    assert abs(a - a_star) < 1e-6 and b == b_star == FLOOR
    assert 1 - a / (a + b) < 1e-6


def test_million_successes_drive_trust_to_one():
    p = TrustParams(gamma=0.9)
    (a, b), = replay_end_states(p, [[1.0] * 1_000_000])
    assert b == FLOOR
    assert a / (a + b) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("gamma", [0.9, 0.99])
def test_linear_rate_is_gamma(gamma):
    p = TrustParams(w_s=1.0, gamma=gamma)
    r = 0.5
    a_star = fixed_point(r, p)[0]
    s, errs = init_state(p), []
    for _ in range(200):
        s = update(s, r, p)
        errs.append(abs(s.alpha - a_star))
    ratios = np.array(errs[51:150]) / np.array(errs[50:149])
    assert np.allclose(ratios, gamma, atol=1e-9)


def test_fixed_point_needs_discount():
    with pytest.raises(DomainError):
        fixed_point(0.5, TrustParams(gamma=1.0))


# Episodes


def test_success_stream_raises_trust_every_step():
    rng = np.random.default_rng(1)
    p = TrustParams(w_s=2, w_f=3, eps=0.1, gamma=0.95)
    _, trace = run_episode(init_state(p), rng.uniform(0.11, 1.0, 20), p)
    assert np.all(np.diff([m for m, _ in trace]) > 0)


def test_failure_stream_lowers_trust_every_step():
    rng = np.random.default_rng(2)
    p = TrustParams(w_s=2, w_f=3, eps=0.1, gamma=0.95)
    _, trace = run_episode(init_state(p), rng.uniform(-1.0, 0.1, 20), p)
    assert np.all(np.diff([m for m, _ in trace]) < 0)


def test_history_carries_over():
    p = TrustParams(w_s=2, w_f=3, gamma=0.95)
    first, second = [-0.5] * 10, [0.3] * 10
    carried, _ = run_episode(run_episode(init_state(p), first, p)[0], second, p)
    fresh, _ = run_episode(init_state(p), second, p)
    assert trust_mean(carried) != trust_mean(fresh)


def test_next_episode_continues_from_final_state():
    p = TrustParams(w_s=3.7897, w_f=4.5390, gamma=0.99)
    rng = np.random.default_rng(3)
    end1, trace1 = run_episode(init_state(p), rng.uniform(-1, 1, 20), p)
    r = 0.4
    _, trace2 = run_episode(end1, [r] + list(rng.uniform(-1, 1, 19)), p)
    a = p.gamma * end1.alpha + p.w_s * r
    b = p.gamma * end1.beta
    assert trace2[0][0] == a / (a + b)


def test_episode_records_match_trace():
    p = TrustParams(w_s=2, w_f=1, eps=0.05, gamma=0.9)
    rewards = [0.3, -0.2, 0.05, 0.9]
    end, rows = episode_records(init_state(p), rewards, p)
    _, trace = run_episode(init_state(p), rewards, p)
    assert [r["mean"] for r in rows] == [m for m, _ in trace]
    assert [r["branch"] for r in rows] == ["success", "failure", "failure", "success"]
    assert [r["q"] for r in rows] == [1, 2, 3, 4] and rows[-1]["alpha"] == end.alpha
    csv = trace_csv(rows).splitlines()
    assert csv[0] == ",".join(TRACE_COLUMNS) and len(csv) == 5


def test_fast_replay_agrees_with_update():
    rng = np.random.default_rng(4)
    p = TrustParams(1.3, 0.7, 2.2, 3.1, 0.05, 0.93)
    streams = [rng.uniform(-1, 1, 20) for _ in range(5)]
    s, ends = init_state(p), []
    for rs in streams:
        s, _ = run_episode(s, rs, p)
        ends.append((s.alpha, s.beta))
    assert replay_end_states(p, streams) == ends


def test_literal_unrolled_sum_diverges():
    p = TrustParams(w_s=1, w_f=1, gamma=0.9)
    rewards = [0.5] * 60
    a_lit, _ = literal_replay(rewards, p)
    (a_rec, _), = replay_end_states(p, [rewards])
    # the newest past value enters with weight gamma**0, so step one is undiscounted
    assert a_lit[0] == pytest.approx(p.alpha0 + p.w_s * 0.5)
    assert a_lit[-1] > 1e6 * a_rec


# Baseline


def test_baseline_unit_update():
    p = TrustParams(w_s=1, w_f=1, gamma=1.0)
    assert trust_mean(baseline_update(BetaTrustState(1, 1), True, p)) == pytest.approx(2 / 3)
    assert trust_mean(baseline_update(BetaTrustState(1, 1), False, p)) == pytest.approx(1 / 3)


def test_baseline_trace_is_constant():
    p = TrustParams(w_s=2, w_f=3, gamma=0.9)
    s = BetaTrustState(3, 2)
    end, trace = baseline_episode(s, False, p, 20)
    assert len(trace) == 20 and len(set(trace)) == 1
    assert trace[0] == (trust_mean(s), trust_variance(s))
    assert end == baseline_update(s, False, p)


def test_baseline_ignores_threshold():
    ref = baseline_update(BetaTrustState(1, 1), True, TrustParams(2, 1, 2, 3, 0.0, 0.9))
    for eps in (-0.9, 0.9):
        assert baseline_update(BetaTrustState(1, 1), True, TrustParams(2, 1, 2, 3, eps, 0.9)) == ref


def test_baseline_alternating_with_heavier_failures():
    p = TrustParams(w_s=1, w_f=2, gamma=0.95)
    s = init_state(p)
    for i in range(400):
        s = baseline_update(s, i % 2 == 0, p)
    assert trust_mean(s) < 0.5
