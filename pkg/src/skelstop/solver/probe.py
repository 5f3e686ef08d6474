"""Finite-difference probe of the Lipschitz regularity of continuation values."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import DomainError
from ..rng import substream

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class ProbeReport:
    step: int
    scales: list[float]
    max_ratio: list[float]
    median_ratio: list[float]
    pairs: int

    def ratio_at(self, scale: float) -> float:
        return self.max_ratio[self.scales.index(scale)]


def random_histories(n: int, step: int, horizon: float, rng: np.random.Generator,
                     clock_fraction: float = 0.7, mark_radius: float = 1.0,
                     min_gap: float = 0.05):
    """Histories with gaps summing to at most ``clock_fraction * T`` and real marks."""
    budget = clock_fraction * horizon
    if step * min_gap >= budget:
        raise DomainError("step count too large for the clock budget")
    w = rng.dirichlet(np.ones(step + 1), size=n)
    total = rng.uniform(step * min_gap, budget, size=(n, 1))
    dts = min_gap + (total - step * min_gap) * w[:, :step]
    marks = rng.uniform(-mark_radius, mark_radius, size=(n, step))
    return dts, marks


def lipschitz_probe(evaluator: Evaluator, step: int, pairs: int, horizon: float,
                    scales=(1e-2, 1e-3, 1e-4), seed: int = 0,
                    mark_radius: float = 1.0) -> ProbeReport:
    """Difference quotients ``|U(b) - U(b')| / |b - b'|`` at several scales.

    ``b`` is drawn at random in the relaxed history domain and ``b' = b + h v``
    for a random unit direction ``v`` in the flattened ``(gaps, marks)``
    space, so ``|b - b'| = h``.
    """
    if step < 1 or pairs < 1:
        raise DomainError("need step >= 1 and pairs >= 1")
    rng = substream(seed, "lipschitz_probe", step)
    dts, marks = random_histories(pairs, step, horizon, rng, mark_radius=mark_radius)
    direction = rng.standard_normal((pairs, 2 * step))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    base = np.asarray(evaluator(dts, marks), dtype=float)
    maxes, medians = [], []
    for h in scales:
        d2 = dts + h * direction[:, :step]
        m2 = marks + h * direction[:, step:]
        moved = np.asarray(evaluator(d2, m2), dtype=float)
        ratio = np.abs(moved - base) / h
        maxes.append(float(ratio.max()))
        medians.append(float(np.median(ratio)))
    return ProbeReport(step, [float(s) for s in scales], maxes, medians, pairs)
