"""Resolution planning: how fine a skeleton is needed for a target error."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from ..errors import DomainError
from ..skeleton import periods_for


@dataclass(frozen=True)
class LevelFamily:
    """A strictly decreasing level map ``phi`` with inverse ``xi``."""

    phi: Callable[[float], float]
    xi: Callable[[float], float]
    name: str = "custom"


DYADIC = LevelFamily(lambda k: 2.0 ** (-k), lambda y: -math.log2(y), "dyadic")


@dataclass(frozen=True)
class Plan:
    resolution: float
    epsilon: float
    periods: int
    tolerance_level: float


def plan_resolution(target: float, beta: float, family: LevelFamily = DYADIC, *,
                    horizon: float = 1.0, dim: int = 1, rounding: str = "printed") -> Plan:
    """Resolution ``k* = xi(target ** (1 / (2 beta)))`` and its period count.

    With ``rounding="printed"`` the level ``target ** (1/(2 beta))`` is quoted
    to three decimals and ``k*`` to two before the period count
    ``d * ceil(T / phi(k*)**2)`` is formed, which is how hand-worked plans are
    usually tabulated. ``rounding="exact"`` keeps full precision throughout.
    """
    if not 0.0 < target < 1.0:
        raise DomainError("target must lie in (0, 1)")
    if not 0.0 < beta <= 1.0:
        raise DomainError("beta must lie in (0, 1]")
    if rounding not in ("printed", "exact"):
        raise DomainError("rounding must be 'printed' or 'exact'")
    level = target ** (1.0 / (2.0 * beta))
    if rounding == "printed" and round(level, 3) > 0:
        level = round(level, 3)
    k = family.xi(level)
    if rounding == "printed":
        k = round(k, 2)
    eps = family.phi(k)
    return Plan(k, eps, periods_for(horizon, eps, dim), level)
