"""Evaluation of the theoretical regression error bound constants.

The numbers are reported as-is; nothing claims the bound is tight.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..errors import DomainError


def complexity_exponent(periods: int, j: int) -> float:
    """``c_j = 2 (e - j + 1) log2(euler_e * (e - j + 1))``."""
    if not 0 <= j <= periods:
        raise DomainError("step must lie in 0..periods")
    m = periods - j + 1
    return 2.0 * m * math.log2(math.e * m)


def envelope_constant(bound: float, payoff_bound: float) -> float:
    """``36 (B + L)**2``."""
    return 36.0 * (bound + payoff_bound) ** 2


def log_joint_constant(c_j: float, vc: float, bound: float, payoff_bound: float,
                       numeric: float) -> float:
    """Natural log of ``C (c nu + 1)^4 B^(2 nu) L^(2 c nu) (C (B + L))^(3 nu (1 + c))``."""
    return (math.log(numeric) + 4.0 * math.log(c_j * vc + 1.0) + 2.0 * vc * math.log(bound)
            + 2.0 * c_j * vc * math.log(payoff_bound)
            + 3.0 * vc * (1.0 + c_j) * math.log(numeric * (bound + payoff_bound)))


@dataclass
class BoundReport:
    periods: int
    step: int
    bound: float
    payoff_bound: float
    vc: float
    numeric: float
    c_j: float
    c_bl: float
    log_c_jk: float
    alpha: float | None = None
    n_samples: list[int] = field(default_factory=list)
    stochastic_terms: list[float] = field(default_factory=list)
    alpha_violations: list[bool] = field(default_factory=list)

    def stochastic_term(self, n: float) -> float:
        """``6^(e-j) C (B+L)^2 (sqrt(nu c_j log N) + sqrt(log C_jk)) / sqrt(N)``.

        A negative ``log C_jk`` (possible when ``B`` or ``L`` is below one)
        is floored at zero before the square root.
        """
        lead = 6.0 ** (self.periods - self.step) * self.numeric * (self.bound + self.payoff_bound) ** 2
        inner = math.sqrt(self.vc * self.c_j * math.log(n)) + math.sqrt(max(self.log_c_jk, 0.0))
        return lead * inner / math.sqrt(n)

    def alpha_threshold(self) -> float | None:
        """Smallest ``N`` allowed by the tail-bound condition ``N >= 36 C_BL^2 / alpha``."""
        if self.alpha is None:
            return None
        return 36.0 * self.c_bl**2 / self.alpha


def error_bound_report(n_samples, periods: int, step: int, bound: float, payoff_bound: float,
                       vc: float, numeric: float = 1.0, alpha: float | None = None) -> BoundReport:
    """Constants and stochastic-error terms for each requested sample count."""
    if isinstance(n_samples, (int, float)):
        n_samples = [n_samples]
    if any(n < 2 for n in n_samples):
        raise DomainError("sample counts must be at least 2")
    if min(bound, payoff_bound, vc, numeric) <= 0:
        raise DomainError("bound, payoff bound, vc and C must be positive")
    if alpha is not None and not alpha > 0:
        raise DomainError("alpha must be positive")
    c_j = complexity_exponent(periods, step)
    rep = BoundReport(periods, step, float(bound), float(payoff_bound), float(vc), float(numeric),
                      c_j, envelope_constant(bound, payoff_bound),
                      log_joint_constant(c_j, vc, bound, payoff_bound, numeric), alpha)
    for n in n_samples:
        rep.n_samples.append(int(n))
        rep.stochastic_terms.append(rep.stochastic_term(n))
        thr = rep.alpha_threshold()
        rep.alpha_violations.append(thr is not None and n < thr)
    return rep
