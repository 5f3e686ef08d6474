import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from skelstop.errors import ConfigError, DomainError, InstanceTooLargeError
from skelstop.rng import substream
from skelstop.skeleton import ExitTimeDistribution, SkeletonConfig, sample_batch
from skelstop.solver import (DYADIC, LevelFamily, LsConfig, apply_rule, cascade_payoffs,
                             classify_regions, error_bound_report, lipschitz_probe,
                             lower_bound_estimate, ls_solve, oracle_dp, plan_resolution,
                             variational_check)
from skelstop.solver.bounds import complexity_exponent, envelope_constant
from skelstop.structures import (ConstantStructure, constant_coefficients, identity_payoff, EulerStructure, RewardFunctional,
                                 StepIndexStructure, bounded_put_payoff, path_vol_coefficients,
                                 random_walk_coefficients)

TWO_STEP = SkeletonConfig(1 / math.sqrt(2), 1, 1.0, seed=0)


def rw_put():
    return EulerStructure(random_walk_coefficients(1.0), bounded_put_payoff(1.0))


# cascade -----------------------------------------------------------------------

def test_cascade_always_and_never():
    z = np.arange(12, dtype=float).reshape(3, 4)
    assert np.array_equal(cascade_payoffs(np.ones_like(z, bool), z), z)
    never = np.zeros_like(z, bool)
    never[:, -1] = True
    assert np.all(cascade_payoffs(never, z) == z[:, [-1]])


def test_cascade_hand_enumeration():
    z = np.array([[1.0, 5.0, 2.0, 7.0]])
    stop = np.array([[False, True, False, True]])
    # from 0: continue to 1, stop there; from 2: continue to 3
    assert cascade_payoffs(stop, z).tolist() == [[5.0, 5.0, 7.0, 7.0]]
    stop = np.array([[True, False, True, True]])
    assert cascade_payoffs(stop, z).tolist() == [[1.0, 2.0, 2.0, 7.0]]


def test_cascade_malformed():
    with pytest.raises(IndexError):
        cascade_payoffs(np.zeros((2, 3), bool), np.zeros((2, 3)))
    with pytest.raises(IndexError):
        cascade_payoffs(np.ones((2, 3), bool), np.zeros((2, 4)))


@given(st.integers(0, 2**31))
def test_cascade_matches_first_stop(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(6, 5))
    stop = rng.random((6, 5)) < 0.4
    stop[:, -1] = True
    out = cascade_payoffs(stop, z)
    for i in range(6):
        for j in range(5):
            k = j + int(np.argmax(stop[i, j:]))
            assert out[i, j] == z[i, k]


# least squares -----------------------------------------------------------------

def test_ls_constant_payoff():
    cfg = LsConfig(SkeletonConfig(0.5, 1, 1.0, seed=1), ConstantStructure(0.7), 500,
                   fresh_paths=200)
    res = ls_solve(cfg)
    assert res.value == pytest.approx(0.7, abs=1e-9)
    assert res.lower_bound == pytest.approx(0.7, abs=1e-12) and res.lower_bound_se == 0.0


def test_ls_step_index_waits_to_the_end():
    sk = SkeletonConfig(0.5, 1, 1.0, seed=2)
    res = ls_solve(LsConfig(sk, StepIndexStructure(4), 2000, degree=2))
    assert res.value == pytest.approx(4.0, abs=1e-6)
    assert np.all(res.stop_indices == 4)


def test_ls_value_identity_and_rule_form():
    sk = SkeletonConfig(0.5, 1, 1.0, seed=3)
    cfg = LsConfig(sk, rw_put(), 3000, degree=2)
    res = ls_solve(cfg)
    assert res.value == max(res.payoff0, res.continuation0)
    assert res.stop_indices.min() >= 0 and res.stop_indices.max() <= 4
    # replaying the fitted rule on the training paths reproduces the stop indices
    batch = sample_batch(sk, 3000, tag="train")
    ev = cfg.structure.evaluate(batch.dts, batch.coords, batch.signs, sk.epsilon, sk.horizon)
    from skelstop.solver import fitted_rule
    tau = apply_rule(fitted_rule(res, cfg), batch, ev)
    if res.payoff0 < res.continuation0:
        np.testing.assert_array_equal(tau, res.stop_indices)


def test_ls_deterministic():
    cfg = LsConfig(SkeletonConfig(0.5, 1, 1.0, seed=9), rw_put(), 4000, degree=3, fresh_paths=1000)
    a, b = ls_solve(cfg), ls_solve(cfg)
    assert a.value.hex() == b.value.hex() and a.lower_bound.hex() == b.lower_bound.hex()


def test_ls_two_dimensional_skeleton():
    from skelstop.structures import StepIndexStructure
    res = ls_solve(LsConfig(SkeletonConfig(1.0, 2, 1.0, seed=4), StepIndexStructure(2), 500))
    assert res.value == pytest.approx(2.0, abs=1e-6)


def test_ls_config_errors():
    sk = SkeletonConfig(0.5)
    with pytest.raises(ConfigError):
        LsConfig(sk, rw_put(), 1)
    with pytest.raises(ConfigError):
        LsConfig(sk, rw_put(), 10, fresh_paths=-1)
    with pytest.raises(ConfigError):
        LsConfig(sk, EulerStructure(random_walk_coefficients(),
                                    RewardFunctional(lambda t, v, e: v[:, -1])), 10).resolved_payoff_bound


def test_payoff_bound_floor_and_truncation():
    sk = SkeletonConfig(0.5)
    assert LsConfig(sk, ConstantStructure(0.2), 10).resolved_payoff_bound == 1.0
    assert LsConfig(sk, ConstantStructure(0.2), 10, truncation=3.0).resolved_payoff_bound == 3.0


# oracle ------------------------------------------------------------------------

def test_oracle_constant_payoffs():
    for eps in (1.0, 0.5):
        res = oracle_dp(ConstantStructure(1.5), SkeletonConfig(eps, 1, 1.0))
        assert res.value == pytest.approx(1.5, abs=1e-8)
        assert variational_check(res) == 0.0
        for lvl in res.levels:
            np.testing.assert_allclose(lvl.continuation, lvl.payoff, atol=1e-12)
            np.testing.assert_allclose(lvl.value, lvl.payoff, atol=1e-12)


def test_oracle_increasing_payoff_continues_everywhere():
    # pure drift: the payoff is the clock itself, frozen after the horizon
    clock = EulerStructure(constant_coefficients(1.0, 0.0, 0.0), identity_payoff())
    sk = SkeletonConfig(1 / math.sqrt(3), 1, 1.0)
    res = oracle_dp(clock, sk)
    assert res.terminal_gap == 0.0
    # stopping never helps, so the value is the mean clock at the last renewal capped at T
    mean, se = lower_bound_estimate([lambda d, c, s, ev, j: np.full(d.shape[0], np.inf)] * 3,
                                    clock, sk, 200_000)
    assert abs(res.value - mean) < 3 * se
    # the state only moves at renewals, so U = Z to rounding where none can fire before T
    for lvl, labels in zip(res.levels, classify_regions(res)):
        assert np.all(lvl.continuation >= lvl.payoff - 1e-15)
        room = 1.0 - lvl.dts.sum(axis=1) > 0.1
        assert not labels[room].any()


def test_oracle_matches_monte_carlo_with_known_continuation():
    # two periods: the step-1 continuation has a closed form through the exit survival
    eps, T = TWO_STEP.epsilon, 1.0
    dist = ExitTimeDistribution(eps)
    put = lambda x: np.minimum(1.0, np.maximum(1.0 - x, 0.0))
    rng = substream(0, "nested_mc")
    n = 10_000_000
    t1 = dist.sample(rng, n)
    x1 = 1.0 + eps * (rng.integers(0, 2, n) * 2 - 1)
    z1 = np.where(t1 <= T, put(x1), 0.0)
    stay = dist.survival(np.maximum(T - t1, 0.0))
    u1 = np.where(t1 <= T, stay * z1 + (1 - stay) * 0.5 * (put(x1 + eps) + put(x1 - eps)), 0.0)
    v1 = np.maximum(z1, u1)
    mc, se = v1.mean(), v1.std() / math.sqrt(n)
    res = oracle_dp(rw_put(), TWO_STEP)
    assert abs(res.value - max(0.0, mc)) < 3 * se


def test_oracle_rule_attains_value():
    res = oracle_dp(rw_put(), TWO_STEP)
    mean, se = lower_bound_estimate(res.rule(), rw_put(), TWO_STEP, 100_000)
    assert abs(mean - res.value) < 3 * se


def test_always_stop_at_zero_rule():
    rule = [lambda dts, coords, signs, ev, j: np.full(dts.shape[0], -np.inf)] * 2
    mean, se = lower_bound_estimate(rule, rw_put(), TWO_STEP, 1000)
    assert mean == 0.0 and se == 0.0


def test_lower_bound_below_oracle():
    sk = SkeletonConfig(1 / math.sqrt(3), 1, 1.0, seed=5)
    res = ls_solve(LsConfig(sk, rw_put(), 20_000, degree=4, fresh_paths=20_000))
    oracle = oracle_dp(rw_put(), sk)
    assert res.lower_bound <= oracle.value + 3 * res.lower_bound_se


def test_oracle_terminal_layer_and_residual():
    res = oracle_dp(EulerStructure(path_vol_coefficients(1.0, 0.2, 0.1), bounded_put_payoff(1.0)),
                    TWO_STEP)
    assert res.terminal_gap == 0.0
    assert variational_check(res) <= 1e-8
    assert len(classify_regions(res)) == res.periods


def test_oracle_gates():
    with pytest.raises(InstanceTooLargeError):
        oracle_dp(ConstantStructure(1.0), SkeletonConfig(1 / math.sqrt(7), 1, 1.0))
    with pytest.raises(DomainError):
        oracle_dp(ConstantStructure(1.0), SkeletonConfig(1.0, 2, 1.0))


# bounds ------------------------------------------------------------------------

def test_bound_constants():
    assert envelope_constant(1.0, 1.0) == 144.0
    assert complexity_exponent(2, 1) == pytest.approx(4 * math.log2(2 * math.e), abs=1e-12)
    assert complexity_exponent(2, 1) == pytest.approx(9.7708, abs=1e-4)


def test_bound_scaling_in_n():
    rep = error_bound_report([10_000, 40_000], periods=4, step=1, bound=1.0, payoff_bound=1.0, vc=8)
    t1, t4 = rep.stochastic_terms
    a = math.sqrt(rep.vc * rep.c_j)
    b = math.sqrt(max(rep.log_c_jk, 0.0))
    exact = (a * math.sqrt(math.log(40_000)) + b) / (a * math.sqrt(math.log(10_000)) + b) / 2
    assert t4 / t1 == pytest.approx(exact, rel=1e-12)
    assert t4 < t1 and rep.c_bl > 0 and rep.c_j > 0


def test_bound_alpha_flags():
    rep = error_bound_report([10, 10**9], periods=2, step=1, bound=1.0, payoff_bound=1.0,
                             vc=3, alpha=0.5)
    assert rep.alpha_threshold() == pytest.approx(36 * 144**2 / 0.5)
    assert rep.alpha_violations == [True, False]


# planner -----------------------------------------------------------------------

def test_plan_examples():
    p = plan_resolution(0.45, 0.2)
    assert p.resolution == pytest.approx(2.88, abs=0.01) and p.periods == 55
    p = plan_resolution(0.3, 0.2)
    assert p.resolution == pytest.approx(4.35, abs=0.01) and p.periods == 416
    exact = plan_resolution(0.3, 0.2, rounding="exact")
    assert exact.resolution == pytest.approx(-math.log2(0.3 ** 2.5), rel=1e-12)


def test_plan_near_one():
    for dim in (1, 3):
        p = plan_resolution(1 - 1e-15, 0.5, dim=dim, rounding="exact")
        assert abs(p.resolution) < 1e-12 and p.periods == dim
    levels = [plan_resolution(e, 0.2, rounding="exact").resolution for e in (0.9, 0.99, 0.999)]
    assert levels[0] > levels[1] > levels[2] > 0


def test_plan_errors_and_custom_family():
    with pytest.raises(DomainError):
        plan_resolution(1.5, 0.2)
    with pytest.raises(DomainError):
        plan_resolution(0.5, 0.0)
    fam = LevelFamily(lambda k: 1 / (1 + k), lambda e: 1 / e - 1, "harmonic")
    p = plan_resolution(0.25, 0.5, fam, rounding="exact")
    assert p.epsilon == pytest.approx(0.25) and p.periods == 16
    assert DYADIC.phi(DYADIC.xi(0.3)) == pytest.approx(0.3)


# probe -------------------------------------------------------------------------

def test_probe_constant_is_zero():
    res = oracle_dp(ConstantStructure(0.4), TWO_STEP)
    rep = lipschitz_probe(res.continuation, 1, 30, 1.0)
    assert max(rep.max_ratio) < 1e-10  # rounding only


def test_probe_shift_invariance():
    coeffs = path_vol_coefficients(1.0, 0.2, 0.1)
    base = bounded_put_payoff(1.0)
    shifted = RewardFunctional(lambda t, v, e: base.evaluator(t, v, e) + 0.3, 1.3, 1.0)
    r1 = lipschitz_probe(oracle_dp(EulerStructure(coeffs, base), TWO_STEP).continuation, 1, 50, 1.0)
    r2 = lipschitz_probe(oracle_dp(EulerStructure(coeffs, shifted), TWO_STEP).continuation, 1, 50, 1.0)
    np.testing.assert_allclose(r1.max_ratio, r2.max_ratio, rtol=1e-6, atol=1e-9)


def test_probe_linear_function_exact():
    rep = lipschitz_probe(lambda d, m: 3 * d.sum(axis=1), 2, 100, 1.0)
    # the quotient of a linear map is the projection of its gradient on the direction
    assert max(rep.max_ratio) <= 3 * math.sqrt(2) + 1e-9
    with pytest.raises(DomainError):
        lipschitz_probe(lambda d, m: d.sum(axis=1), 0, 10, 1.0)
