"""Independent reference computations used for validation.

None of these share code paths with the series formulas they check, apart
from ``simulate_transition`` which needs the exit-time survival function to
condition residual lifetimes on their ages.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .kernel import HistoryStats
from .skeleton import ExitTimeDistribution, uniform_open


@dataclass(frozen=True)
class WalkExitLaw:
    """Exit-step law of a simple random walk from ``(-n, n)``.

    A walk with spatial step ``epsilon / n`` and time step ``(epsilon / n)**2``
    is the fine-step approximation of Brownian motion leaving
    ``(-epsilon, epsilon)``. ``pmf[k]`` is the probability of leaving at step
    ``k``; the tail left beyond the last step is below ``tail``.
    """

    n: int
    pmf: np.ndarray
    tail: float

    def time_step(self, epsilon: float) -> float:
        return (epsilon / self.n) ** 2

    def sample_steps(self, rng: np.random.Generator, size: int) -> np.ndarray:
        cdf = np.cumsum(self.pmf)
        return np.searchsorted(cdf, uniform_open(rng, size) * cdf[-1], side="left")

    def sample_times(self, epsilon: float, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.sample_steps(rng, size) * self.time_step(epsilon)

    def survival_steps(self, k: int) -> float:
        """Probability that the walk is still inside after ``k`` steps."""
        return float(self.pmf[k + 1:].sum() + self.tail)


@lru_cache(maxsize=4)
def walk_exit_law(n: int = 100, tail: float = 1e-15) -> WalkExitLaw:
    """Exact exit-step pmf by propagating the walk's occupation vector."""
    width = 2 * n - 1
    occ = np.zeros(width)
    occ[n - 1] = 1.0
    probs = [0.0]
    alive = 1.0
    nxt = np.empty_like(occ)
    while alive > tail:
        exited = 0.5 * (occ[0] + occ[-1])
        nxt[1:] = 0.5 * occ[:-1]
        nxt[0] = 0.0
        nxt[:-1] += 0.5 * occ[1:]
        occ, nxt = nxt, occ
        probs.append(exited)
        alive = occ.sum()
    return WalkExitLaw(n, np.array(probs), float(alive))


def simulate_walk_exits(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Exit steps of ``size`` directly simulated walks (slow; small ``n`` only)."""
    pos = np.zeros(size, dtype=np.int64)
    steps = np.zeros(size, dtype=np.int64)
    alive = np.arange(size)
    k = 0
    while alive.size:
        k += 1
        pos[alive] += rng.integers(0, 2, alive.size) * 2 - 1
        out = np.abs(pos[alive]) >= n
        steps[alive[out]] = k
        alive = alive[~out]
    return steps


def simulate_transition(dist: ExitTimeDistribution, stats: HistoryStats, size: int,
                        rng: np.random.Generator):
    """Draw the next ``(gap, coordinate, sign)`` by continuing every renewal stream.

    Each coordinate's residual is sampled from its exit law conditioned on
    having survived its age; the winner is the smallest residual.
    """
    ages = np.asarray(stats.ages, dtype=float) / dist.scale
    d = len(ages)
    u = uniform_open(rng, (size, d))
    target = u * dist.unit_survival(ages)[None, :]
    residual = dist.unit_inverse_survival(target) - ages[None, :]
    residual = np.maximum(residual, 0.0)
    winner = residual.argmin(axis=1)
    gap = residual[np.arange(size), winner] * dist.scale
    sign = rng.integers(0, 2, size) * 2 - 1
    return gap, winner + 1, sign


def binomial_american_put(spot: float, strike: float, rate: float, vol: float,
                          maturity: float, steps: int = 10_000) -> float:
    """Cox-Ross-Rubinstein tree value of an American put."""
    dt = maturity / steps
    up = np.exp(vol * np.sqrt(dt))
    down = 1.0 / up
    growth = np.exp(rate * dt)
    p = (growth - down) / (up - down)
    disc = 1.0 / growth
    j = np.arange(steps + 1)
    prices = spot * up ** (steps - 2 * j)
    values = np.maximum(strike - prices, 0.0)
    for n in range(steps - 1, -1, -1):
        prices = prices[:-1] * down
        cont = disc * (p * values[:-1] + (1 - p) * values[1:])
        values = np.maximum(cont, strike - prices)
    return float(values[0])
