import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from skelstop.errors import DomainError, InvalidMarkError, ResolutionTooFineError
from skelstop.oracles import simulate_walk_exits, walk_exit_law
from skelstop.rng import substream
from skelstop.skeleton import (ExitTimeDistribution, Mark, SkeletonConfig, SkeletonIncrement,
                               SkeletonPath, aleph, num_periods, periods_for, sample_batch,
                               sample_path, step_process, unit_density_branches,
                               unit_survival_branches)


@pytest.mark.parametrize("eps, dim, expected", [
    (2 ** -2.88, 1, 55), (2 ** -4.35, 1, 416), (1.0, 2, 2), (0.5, 1, 4), (0.5, 3, 12),
])
def test_num_periods(eps, dim, expected):
    assert num_periods(SkeletonConfig(eps, dim, 1.0)) == expected


def test_periods_snap_float_noise():
    # 1/sqrt(3)**2 is 0.33333333333333337 in floating point
    assert periods_for(1.0, 1 / math.sqrt(3)) == 3


def test_periods_too_fine():
    with pytest.raises(ResolutionTooFineError):
        periods_for(1.0, 1e-200)


def test_bad_config():
    with pytest.raises(DomainError):
        SkeletonConfig(-1.0)
    with pytest.raises(DomainError):
        SkeletonConfig(0.5, dim=0)


# exit-time law ---------------------------------------------------------------

@pytest.mark.parametrize("eps", [1.0, 0.5, 0.1])
def test_density_normalization_and_mean(eps):
    dist = ExitTimeDistribution(eps)
    mass = integrate.quad(dist.density, 0, np.inf, epsabs=1e-13, limit=200)[0]
    mean = integrate.quad(lambda t: t * dist.density(t), 0, np.inf, epsabs=1e-14, limit=200)[0]
    assert abs(mass - 1) < 1e-8
    assert abs(mean - eps**2) < 1e-8


def test_density_scaling():
    rng = np.random.default_rng(3)
    t = rng.uniform(0.01, 3.0, 100)
    one = ExitTimeDistribution(1.0)
    for eps in (0.5, 0.25):
        d = ExitTimeDistribution(eps)
        np.testing.assert_allclose(d.density(t * eps**2), one.density(t) / eps**2, rtol=1e-12)


def test_survival_basics():
    d = ExitTimeDistribution(0.5)
    assert d.survival(0.0) == 1.0
    grid = np.linspace(0, 5, 500)
    assert np.all(np.diff(d.survival(grid)) <= 0)
    assert d.survival(10 * 0.25) < d.survival(0.25)
    np.testing.assert_allclose(d.survival(grid) + d.cdf(grid), 1.0, atol=1e-15)


def test_series_branches_agree():
    t = np.geomspace(0.05, 1.0, 40)
    a, b = unit_density_branches(t)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)
    a, b = unit_survival_branches(t)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)


def test_tail_accuracy_against_high_precision():
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 50

    def surv(s):
        s = mp.mpf(s)
        return sum((-1) ** n * 4 / (mp.pi * (2 * n + 1)) * mp.e ** (-(2 * n + 1) ** 2 * mp.pi**2 * s / 8)
                   for n in range(600))

    d = ExitTimeDistribution(1.0)
    for s in (0.05, 0.12, 0.45, 1.0, 3.0, 20.0):
        exact = surv(s)
        assert abs(float((d.unit_survival(np.array(s)) - exact) / exact)) < 1e-11
        assert abs(float((d.unit_cdf(np.array(s)) - (1 - exact)) / (1 - exact))) < 1e-11


def test_domain_errors():
    d = ExitTimeDistribution(1.0)
    with pytest.raises(DomainError):
        d.density(-1.0)
    with pytest.raises(DomainError):
        d.survival(-0.1)


def test_quantile_table_matches_exact_inversion():
    d = ExitTimeDistribution(0.7)
    rng = np.random.default_rng(0)
    v = np.concatenate([rng.random(5000), np.exp(-rng.uniform(0, 36, 500)),
                        1 - np.exp(-rng.uniform(0.7, 30, 500))])
    fast = d.unit_quantile(v)
    exact = d.unit_quantile(v, exact=True)
    np.testing.assert_allclose(fast, exact, rtol=1e-12)
    np.testing.assert_allclose(d.unit_cdf(exact), v, rtol=1e-12, atol=1e-15)


@given(st.floats(1e-12, 1 - 1e-12))
def test_quantile_inverts_cdf(v):
    d = ExitTimeDistribution(1.0)
    s = d.unit_quantile(np.array([v]))[0]
    target = min(v, 1 - v)
    got = d.unit_cdf(np.array([s]))[0] if v <= 0.5 else d.unit_survival(np.array([s]))[0]
    assert abs(got - target) <= 1e-11 * target


def test_fine_walk_law_mean_exact():
    law = walk_exit_law()
    steps = np.arange(len(law.pmf))
    assert abs((law.pmf * steps).sum() / 100**2 - 1) < 1e-9
    assert law.tail < 1e-14


def test_fine_walk_law_matches_direct_simulation():
    # exact pmf propagation vs brute-force walks for a small barrier
    law = walk_exit_law(n=5)
    sims = simulate_walk_exits(5, 200_000, np.random.default_rng(11))
    for k in (10, 25, 50):
        emp = (sims > k).mean()
        se = math.sqrt(emp * (1 - emp) / sims.size)
        assert abs(emp - law.survival_steps(k)) < 4 * se


def test_survival_matches_fine_walk():
    eps = 0.5
    d = ExitTimeDistribution(eps)
    law = walk_exit_law()
    draws = law.sample_times(eps, substream(5, "test_walk"), 1_000_000)
    emp = (draws > eps**2).mean()
    se = math.sqrt(emp * (1 - emp) / draws.size)
    assert abs(emp - d.survival(eps**2)) < 3 * se + 1e-4  # walk bias O(1/n^2)


def test_sampler_mean_and_ks():
    d = ExitTimeDistribution(0.5)
    x = d.sample(substream(1, "test_sampler"), 1_000_000)
    assert np.all(x > 0)
    se = x.std() / math.sqrt(x.size)
    assert abs(x.mean() - 0.25) < 3 * se
    ks = stats.kstest(x, d.cdf).statistic
    assert ks < stats.kstwobign.isf(0.01) / math.sqrt(x.size)


# marks and paths ---------------------------------------------------------------

@pytest.mark.parametrize("vec, expected", [((0, 1), (2, 1)), ((-1, 0), (1, -1)),
                                            ((0, 0, 0, -1), (4, -1))])
def test_aleph(vec, expected):
    assert aleph(vec) == expected
    assert aleph(Mark(*expected).as_vector(len(vec))) == expected


@pytest.mark.parametrize("vec", [(0, 0), (1, 1), (2, 0), (0.5, 0)])
def test_aleph_rejects(vec):
    with pytest.raises(InvalidMarkError):
        aleph(vec)


def test_sample_path_shape():
    cfg = SkeletonConfig(0.5, 1, 1.0, seed=4)
    path = sample_path(cfg, substream(4, "p"))
    assert len(path) == 4
    assert np.all(path.coords == 1)
    assert np.all(np.diff(path.epochs) > 0)


def test_first_coordinate_frequency_d2():
    cfg = SkeletonConfig(1.0, 2, 1.0, seed=8)
    batch = sample_batch(cfg, 100_000)
    p = (batch.coords[:, 0] == 1).mean()
    assert abs(p - 0.5) < 3 * math.sqrt(0.25 / 100_000)


def test_sign_symmetry():
    batch = sample_batch(SkeletonConfig(0.25, 2, 1.0, seed=2), 10_000)
    m = batch.signs.size
    assert m >= 100_000
    assert abs((batch.signs == 1).mean() - 0.5) < 3 * math.sqrt(0.25 / m)


def test_first_renewal_of_each_coordinate_is_an_exit_time():
    eps = 1.0
    batch = sample_batch(SkeletonConfig(eps, 2, 16.0, seed=9), 20_000)
    d = ExitTimeDistribution(eps)
    for coord in (1, 2):
        hits = batch.coords == coord
        has = hits.any(axis=1)
        assert has.all()  # no conditioning on the path length
        first = batch.epochs[has, 1:][hits[has].argmax(axis=1)[:, None] == np.arange(hits.shape[1])]
        assert stats.kstest(first, d.cdf).pvalue > 0.01


def test_determinism_and_worker_independence():
    cfg = SkeletonConfig(0.5, 2, 1.0, seed=123)
    a = sample_batch(cfg, 5000, workers=1)
    b = sample_batch(cfg, 5000, workers=4)
    c = sample_batch(cfg, 5000, workers=1)
    for x, y in ((a, b), (a, c)):
        assert np.array_equal(x.dts, y.dts)
        assert np.array_equal(x.coords, y.coords)
        assert np.array_equal(x.signs, y.signs)


def test_scaling_of_interarrivals():
    a = sample_batch(SkeletonConfig(0.5, 1, 1.0, seed=3), 100)
    b = sample_batch(SkeletonConfig(1.0, 1, 4.0, seed=3), 100)
    assert np.array_equal(4 * a.dts, b.dts)


def test_step_process():
    cfg = SkeletonConfig(0.25, 1, 1.0)
    path = SkeletonPath.from_increments([SkeletonIncrement(0.3, Mark(1, 1))], 0.25, 1)
    assert np.allclose(step_process(path, cfg, 0.0), 0.0)
    assert np.allclose(step_process(path, cfg, 0.5), 0.25)


@given(st.integers(0, 2**32), st.floats(0.0, 1.0))
def test_step_process_bound(seed, t):
    cfg = SkeletonConfig(0.5, 2, 1.0, seed)
    path = sample_path(cfg, substream(seed, "prop"))
    value = step_process(path, cfg, t)
    jumps = int((path.epochs[1:] <= t).sum())
    assert np.abs(value).max() <= 0.5 * jumps + 1e-12
