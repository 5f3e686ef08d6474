"""Statistical and numerical check batteries for the exit-time law and the kernel."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .kernel import KernelQuery, history_stats, transition_prob
from .oracles import simulate_transition, walk_exit_law
from .quadrature import integrate
from .rng import substream
from .skeleton import (ExitTimeDistribution, SkeletonConfig, sample_path,
                       unit_density_branches, unit_survival_branches)

KS_ALPHA = 0.01
CHI2_ALPHA = 0.01


@dataclass
class Check:
    name: str
    value: float
    limit: float
    passed: bool
    detail: str = ""


@dataclass
class Battery:
    name: str
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, value, limit, passed, detail=""):
        self.checks.append(Check(name, float(value), float(limit), bool(passed), detail))


def ks_critical(n: int, alpha: float = KS_ALPHA) -> float:
    """Asymptotic one-sample Kolmogorov-Smirnov critical value."""
    return float(sps.kstwobign.isf(alpha)) / math.sqrt(n)


def exit_time_battery(epsilon: float, draws: int = 1_000_000, seed: int = 0) -> Battery:
    dist = ExitTimeDistribution(epsilon)
    bat = Battery(f"exit time, epsilon={epsilon:g}")
    scale = dist.scale
    mass, _ = integrate(dist.density, 0.0, np.inf, scale=scale, abs_tol=1e-12)
    bat.add("density mass", abs(mass - 1.0), 1e-8, abs(mass - 1.0) <= 1e-8)
    mean, _ = integrate(lambda t: t * dist.density(t), 0.0, np.inf, scale=scale, abs_tol=1e-13)
    bat.add("mean by quadrature", abs(mean - scale), 1e-8, abs(mean - scale) <= 1e-8)

    law = walk_exit_law()
    walk = law.sample_times(epsilon, substream(seed, "walk_mean"), draws)
    se = walk.std(ddof=1) / math.sqrt(draws)
    gap = abs(walk.mean() - scale)
    bat.add("mean by fine-step walk (in SE)", gap / se, 3.0, gap <= 3 * se)

    t_switch = dist.switch
    dens = unit_density_branches(np.array([t_switch]))
    surv = unit_survival_branches(np.array([t_switch]))
    diff = max(abs(float(dens[0][0] - dens[1][0])), abs(float(surv[0][0] - surv[1][0])))
    bat.add("series branch agreement", diff, 1e-10, diff <= 1e-10)

    sample = dist.sample(substream(seed, "ks"), draws)
    ks = sps.kstest(sample, dist.cdf).statistic
    crit = ks_critical(draws)
    bat.add("sampler KS statistic", ks, crit, ks < crit)
    return bat


def random_histories(dim: int, count: int, epsilon: float, seed: int,
                     max_len: int = 12) -> list:
    """Histories of random length cut from simulated skeleton paths."""
    rng = substream(seed, "kernel_histories", dim)
    cfg = SkeletonConfig(epsilon, dim, horizon=max_len * epsilon**2 / dim + epsilon**2, seed=seed)
    out = []
    for _ in range(count):
        path = sample_path(cfg, rng)
        n = int(rng.integers(0, min(max_len, len(path)) + 1))
        out.append(history_stats(path.increments[:n], dim))
    return out


def gap_bin_edges(dist, stats, bins: int, seed: int, pilot: int = 200_000) -> np.ndarray:
    """Bin edges at the deciles of an independent pilot sample of the next gap."""
    gaps, _, _ = simulate_transition(dist, stats, pilot, substream(seed, "pilot_bins"))
    inner = np.quantile(gaps, np.linspace(0, 1, bins + 1)[1:-1])
    return np.concatenate([[0.0], inner, [np.inf]])


def kernel_chi_square(dist, stats, draws: int, seed: int, index: int, bins: int = 10):
    """Chi-square p-value of simulated (bin, coordinate, sign) counts against the kernel."""
    d = stats.dim
    edges = gap_bin_edges(dist, stats, bins, seed + 7919 * index)
    gaps, coords, signs = simulate_transition(dist, stats, draws, substream(seed, "kernel_sim", index))
    bin_idx = np.clip(np.searchsorted(edges, gaps, side="right") - 1, 0, bins - 1)
    cell = (bin_idx * d + (coords - 1)) * 2 + (signs > 0)
    observed = np.bincount(cell, minlength=bins * d * 2).astype(float)
    probs = np.empty(bins * d * 2)
    for b in range(bins):
        for j in range(d):
            for s_i, s in enumerate((-1, 1)):
                q = KernelQuery(stats, j + 1, s, edges[b], edges[b + 1])
                probs[(b * d + j) * 2 + s_i] = transition_prob(dist, q)
    mass = probs.sum()
    expected = probs / mass * draws
    stat = float(((observed - expected) ** 2 / expected).sum())
    pval = float(sps.chi2.sf(stat, probs.size - 1))
    return pval, mass, probs


def kernel_battery(dim: int, histories: int, draws: int = 1_000_000, epsilon: float = 1.0,
                   seed: int = 0) -> Battery:
    dist = ExitTimeDistribution(epsilon)
    bat = Battery(f"kernel, d={dim}")
    if dim == 1:
        rng = substream(seed, "kernel_d1")
        worst = 0.0
        for _ in range(histories):
            a, b = np.sort(rng.exponential(epsilon**2, 2))
            stats = history_stats([], 1)
            for s in (-1, 1):
                got = transition_prob(dist, KernelQuery(stats, 1, s, a, b))
                want = 0.5 * (float(dist.survival(a)) - float(dist.survival(b))) if a > 0 else \
                    0.5 * (1.0 - float(dist.survival(b)))
                worst = max(worst, abs(got - want))
        bat.add("d=1 window probability", worst, 1e-8, worst <= 1e-8)
        return bat
    for i, stats in enumerate(random_histories(dim, histories, epsilon, seed)):
        pval, mass, probs = kernel_chi_square(dist, stats, draws, seed, i)
        sym = float(np.abs(probs[0::2] - probs[1::2]).max())
        bat.add(f"history {i} mass", abs(mass - 1.0), 1e-6, abs(mass - 1.0) <= 1e-6,
                f"ages={tuple(round(a, 4) for a in stats.ages)}")
        bat.add(f"history {i} sign symmetry", sym, 0.0, sym == 0.0)
        bat.add(f"history {i} chi-square p-value", pval, CHI2_ALPHA, pval >= CHI2_ALPHA)
    return bat
