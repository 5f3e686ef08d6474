"""Transition law of the skeleton given its full history.

Conditionally on the history, coordinate ``lam`` has been alive for
``ages[lam]`` and its residual exit time has density
``f(t + age) / S(age)``. The next global increment is the smallest residual;
its sign is an independent fair coin.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, InvalidHistoryError
from .quadrature import integrate
from .skeleton import ExitTimeDistribution, Mark, SkeletonIncrement, SkeletonPath

ABS_TOL = 1e-9
MAX_PANELS = 10_000


@dataclass(frozen=True)
class HistoryStats:
    """Bookkeeping derived from a history of ``n`` increments.

    Per-coordinate tuples are indexed by ``coordinate - 1``.
    """

    n: int
    clock: float
    last_epochs: tuple[float, ...]
    ages: tuple[float, ...]
    jump_counts: tuple[int, ...]
    last_index: tuple[int, ...]

    @property
    def dim(self) -> int:
        return len(self.ages)


def history_stats(history, dim: int | None = None) -> HistoryStats:
    """Compute clock, ages, jump counts and last-jump indices of a history.

    ``history`` is a ``SkeletonPath`` or a sequence of ``SkeletonIncrement``.
    """
    if isinstance(history, SkeletonPath):
        dts = np.asarray(history.dts, dtype=float)
        coords = np.asarray(history.coords, dtype=int)
        signs = np.asarray(history.signs, dtype=int)
        dim = history.dim if dim is None else dim
    else:
        incs: Sequence[SkeletonIncrement] = list(history)
        dts = np.array([i.dt for i in incs], dtype=float)
        coords = np.array([i.mark.coordinate for i in incs], dtype=int)
        signs = np.array([i.mark.sign for i in incs], dtype=int)
        if dim is None:
            dim = int(coords.max()) if coords.size else 1
    if np.any(~(dts > 0)):
        raise InvalidHistoryError("increments must have positive dt")
    if np.any((coords < 1) | (coords > dim)) or np.any(np.abs(signs) != 1):
        raise InvalidHistoryError("marks must name a coordinate in 1..d with sign +-1")
    epochs = np.concatenate([[0.0], np.cumsum(dts)])
    clock = float(epochs[-1])
    last_index = [0] * dim
    counts = [0] * dim
    for pos, c in enumerate(coords, start=1):
        last_index[c - 1] = pos
        counts[c - 1] += 1
    last_epochs = tuple(float(epochs[i]) for i in last_index)
    ages = tuple(clock - le for le in last_epochs)
    return HistoryStats(len(dts), clock, last_epochs, ages, tuple(counts), tuple(last_index))


def fresh_stats(ages: Sequence[float], clock: float | None = None) -> HistoryStats:
    """Stats with prescribed ages, for probing the kernel directly."""
    ages = tuple(float(a) for a in ages)
    if any(a < 0 for a in ages):
        raise DomainError("ages must be nonnegative")
    clock = max(ages) if clock is None else float(clock)
    return HistoryStats(0, clock, tuple(clock - a for a in ages), ages,
                        (0,) * len(ages), (0,) * len(ages))


@dataclass(frozen=True)
class KernelQuery:
    stats: HistoryStats
    coordinate: int
    sign: int
    a: float = 0.0
    b: float = np.inf

    def __post_init__(self):
        if not 1 <= self.coordinate <= self.stats.dim:
            raise DomainError("coordinate out of range")
        if self.sign not in (-1, 1):
            raise DomainError("sign must be +-1")
        if not 0 <= self.a < self.b:
            raise DomainError("window must satisfy 0 <= a < b")


# ---------------------------------------------------------------------------
# building blocks in scaled time (epsilon = 1)
# ---------------------------------------------------------------------------

def _scaled_ages(dist: ExitTimeDistribution, stats: HistoryStats) -> np.ndarray:
    return np.asarray(stats.ages, dtype=float) / dist.scale


def _residual_density(dist, age, s):
    return dist.unit_density(s + age) / dist.unit_survival(np.asarray(age))


def _residual_survival(dist, age, s):
    return dist.unit_survival(s + age) / dist.unit_survival(np.asarray(age))


def _others_min_density(dist, ages, j, s):
    """Density at ``s`` of the smallest residual among coordinates other than ``j``."""
    others = [a for i, a in enumerate(ages) if i != j]
    total = np.zeros_like(s)
    for i, a in enumerate(others):
        term = _residual_density(dist, a, s)
        for k, b in enumerate(others):
            if k != i:
                term = term * _residual_survival(dist, b, s)
        total += term
    return total


def _others_survival(dist, ages, j, s):
    out = np.ones_like(s)
    for i, a in enumerate(ages):
        if i != j:
            out = out * _residual_survival(dist, a, s)
    return out


def _joint_density_scaled(dist, ages, j, s):
    return 0.5 * _residual_density(dist, ages[j], s) * _others_survival(dist, ages, j, s)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def coordinate_win_prob(dist: ExitTimeDistribution, stats: HistoryStats, j: int) -> float:
    """Probability that coordinate ``j`` produces the next renewal.

    Evaluated as the iterated double integral over ``w, v > 0`` of the
    residual density of ``j`` at ``v`` times the density of the other
    coordinates' smallest residual at ``v + w``.
    """
    d = stats.dim
    if not 1 <= j <= d:
        raise DomainError("coordinate out of range")
    if d == 1:
        return 1.0
    ages = _scaled_ages(dist, stats)
    jj = j - 1

    def outer(w):
        def inner(v):
            return (_residual_density(dist, ages[jj], v)[:, None]
                    * _others_min_density(dist, ages, jj, v[:, None] + w[None, :]))
        val, _ = integrate(inner, 0.0, np.inf, abs_tol=ABS_TOL * 0.1, max_panels=MAX_PANELS)
        return val

    value, _ = integrate(outer, 0.0, np.inf, abs_tol=ABS_TOL, max_panels=MAX_PANELS)
    return float(min(max(value, 0.0), 1.0))


def coordinate_win_prob_single(dist: ExitTimeDistribution, stats: HistoryStats, j: int) -> float:
    """Same probability from the one-dimensional form: the integral of
    ``j``'s residual density times the survival of all other residuals."""
    if stats.dim == 1:
        return 1.0
    ages = _scaled_ages(dist, stats)
    val, _ = integrate(lambda s: 2.0 * _joint_density_scaled(dist, ages, j - 1, s),
                       0.0, np.inf, abs_tol=ABS_TOL, max_panels=MAX_PANELS)
    return float(val)


def time_density_given_mark(dist: ExitTimeDistribution, stats: HistoryStats, j: int, t):
    """Residual-life density ``f(t + age_j) / S(age_j)`` of coordinate ``j``."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0):
        raise DomainError("t must be positive")
    age = stats.ages[j - 1] / dist.scale
    out = _residual_density(dist, age, t_arr / dist.scale) / dist.scale
    return float(out) if out.ndim == 0 else out


def transition_density(dist: ExitTimeDistribution, query: KernelQuery, t):
    """Joint density in ``t`` of the next gap with the mark ``(j, sign)``.

    Equals half the residual density of ``j`` times the probability that
    every other coordinate is still alive at ``t``; for ``d = 1`` this is
    ``f(t) / 2``.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0):
        raise DomainError("t must be positive")
    ages = _scaled_ages(dist, query.stats)
    out = _joint_density_scaled(dist, ages, query.coordinate - 1, t_arr / dist.scale) / dist.scale
    return float(out) if out.ndim == 0 else out


def factorized_transition_density(dist: ExitTimeDistribution, query: KernelQuery, t):
    """Product form: half the residual density of ``j`` times its win probability.

    Agrees with ``transition_density`` for ``d = 1`` only; kept for comparison.
    """
    win = coordinate_win_prob(dist, query.stats, query.coordinate)
    return 0.5 * time_density_given_mark(dist, query.stats, query.coordinate, t) * win


def transition_prob(dist: ExitTimeDistribution, query: KernelQuery) -> float:
    """Probability of the next gap falling in ``(a, b)`` with the given mark."""
    ages = _scaled_ages(dist, query.stats)
    j = query.coordinate - 1
    val, _ = integrate(lambda s: _joint_density_scaled(dist, ages, j, s),
                       query.a / dist.scale, query.b / dist.scale,
                       abs_tol=ABS_TOL, max_panels=MAX_PANELS)
    return float(val)


def next_gap_survival(dist: ExitTimeDistribution, stats: HistoryStats, t):
    """Probability that no coordinate renews within ``t`` (any mark)."""
    ages = _scaled_ages(dist, stats)
    s = np.asarray(t, dtype=float) / dist.scale
    out = np.ones_like(s)
    for a in ages:
        out = out * _residual_survival(dist, a, s)
    return out


Integrand = Callable[[object, np.ndarray, Mark], np.ndarray]


def condexp_step(g: Integrand, history, dist: ExitTimeDistribution,
                 dim: int | None = None) -> float:
    """One-step conditional expectation of ``g(history, dt, mark)``.

    ``g`` must accept an array of gaps for a fixed mark. Sums the integrals
    against the joint density over all coordinates and both signs.
    """
    stats = history if isinstance(history, HistoryStats) else history_stats(history, dim)
    ages = _scaled_ages(dist, stats)
    total = 0.0
    for j in range(stats.dim):
        for sign in (-1, 1):
            mark = Mark(j + 1, sign)

            def integrand(s, j=j, mark=mark):
                gap = s * dist.scale
                return np.asarray(g(history, gap, mark), dtype=float) * _joint_density_scaled(dist, ages, j, s)

            val, _ = integrate(integrand, 0.0, np.inf, abs_tol=ABS_TOL * 0.1,
                               max_panels=MAX_PANELS)
            total += val
    return float(total)
