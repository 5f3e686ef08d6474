"""Least-squares Monte Carlo backward induction on skeleton paths."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import BoundViolationError, ConfigError, CoefficientError, RegressionError
from ..regression import (Architecture, BoundPolicy, FitResult, design_matrix,
                          fit_least_squares, flatten_history, schedule_degree, truncate)
from ..skeleton import SkeletonBatch, SkeletonConfig, num_periods, sample_batch
from ..structures import Evaluation, Structure

# A history summary: (dts, coords, signs, evaluation, j) -> (N, m) inputs.
Compressor = Callable[[np.ndarray, np.ndarray, np.ndarray, Evaluation, int], np.ndarray]
# A continuation evaluator for step j on the first j increments of each path.
Continuation = Callable[[np.ndarray, np.ndarray, np.ndarray, Evaluation, int], np.ndarray]


def markov_compressor(x0: float, horizon: float) -> Compressor:
    """Summary ``((h_j - x0) / max(1, |x0|), t_j / T)`` of the current state and clock.

    This is a projection heuristic: it discards the rest of the history.
    """
    scale = max(1.0, abs(x0))

    def compress(dts, coords, signs, ev, j):
        if ev.states is None:
            raise ConfigError("markov features need a structure with a state process")
        return np.column_stack([(ev.states[:, j] - x0) / scale, ev.epochs[:, j] / horizon])

    compress.input_dim = 2  # type: ignore[attr-defined]
    return compress


@dataclass
class LsConfig:
    skeleton: SkeletonConfig
    structure: Structure
    n_paths: int
    degree: int | None = None
    bound_policy: BoundPolicy = field(default_factory=BoundPolicy)
    payoff_bound: float | None = None
    fresh_paths: int = 0
    truncation: float | None = None
    compressor: Compressor | None = None
    workers: int = 1
    # regress and exercise only where the payoff is strictly positive
    itm_only: bool = False

    def __post_init__(self):
        if self.n_paths < 2:
            raise ConfigError("paths: need at least 2 sample paths")
        if self.fresh_paths < 0:
            raise ConfigError("fresh_paths: must be nonnegative")
        if self.degree is not None and self.degree < 0:
            raise ConfigError("degree: must be nonnegative")
        if self.truncation is not None and not self.truncation > 0:
            raise ConfigError("truncation: must be positive")

    @property
    def resolved_payoff_bound(self) -> float:
        """The envelope ``L >= 1`` on payoffs."""
        if self.truncation is not None:
            return max(1.0, float(self.truncation))
        declared = self.payoff_bound if self.payoff_bound is not None else self.structure.sup_bound
        if declared is None:
            raise ConfigError("payoff_bound: structure has no declared sup bound; set one or a truncation")
        return max(1.0, float(declared))


@dataclass
class StepSummary:
    step: int
    input_dim: int
    degree: int
    basis_size: int
    rank: int
    bound: float
    empirical_risk: float
    stop_fraction: float


@dataclass
class LsResult:
    value: float
    continuation0: float
    payoff0: float
    fits: list[FitResult | None]
    architectures: list[Architecture | None]
    stop_indices: np.ndarray
    steps: list[StepSummary]
    lower_bound: float | None = None
    lower_bound_se: float | None = None
    metadata: dict = field(default_factory=dict)

    def rule(self, config: LsConfig) -> list[Continuation]:
        return fitted_rule(self, config)


def _payoffs(config: LsConfig, batch: SkeletonBatch) -> tuple[np.ndarray, Evaluation]:
    sk = config.skeleton
    ev = config.structure.evaluate(batch.dts, batch.coords, batch.signs, sk.epsilon, sk.horizon)
    z = ev.payoffs
    bad = ~np.isfinite(z)
    if bad.any():
        raise CoefficientError(f"non-finite payoff on path {int(np.argwhere(bad)[0, 0])}")
    if config.truncation is not None:
        z = truncate(z, config.truncation)
    else:
        lim = config.resolved_payoff_bound
        over = np.abs(z) > lim * (1 + 1e-12)
        if over.any():
            raise BoundViolationError(
                f"payoff exceeds L={lim} on path {int(np.argwhere(over)[0, 0])}")
    ev.payoffs = z
    return z, ev


def _inputs(config: LsConfig, batch: SkeletonBatch, ev: Evaluation, j: int) -> np.ndarray:
    if config.compressor is not None:
        return config.compressor(batch.dts[:, :j], batch.coords[:, :j], batch.signs[:, :j], ev, j)
    return flatten_history(batch.dts[:, :j], batch.coords[:, :j], batch.signs[:, :j],
                           config.skeleton.dim, config.skeleton.horizon)


def _architecture(config: LsConfig, j: int, m: int, targets: np.ndarray) -> Architecture:
    if config.degree is not None:
        degree = config.degree
    else:
        degree = schedule_degree(config.n_paths, j, config.skeleton.dim)
    bound = config.bound_policy.resolve(config.resolved_payoff_bound,
                                        float(np.max(np.abs(targets))))
    return Architecture(m, degree, bound, config.skeleton.horizon)


def cascade_payoffs(stop: np.ndarray, payoffs: np.ndarray) -> np.ndarray:
    """Realized payoffs ``Z_{tau_j}`` for every start step ``j``.

    ``stop[:, j]`` says whether the rule stops at ``j``; the last column must
    be all true.
    """
    stop = np.asarray(stop, dtype=bool)
    payoffs = np.asarray(payoffs, dtype=float)
    if stop.shape != payoffs.shape or stop.ndim != 2:
        raise IndexError("stop flags and payoffs must both be (paths, steps + 1)")
    if not stop[:, -1].all():
        raise IndexError("the rule must stop at the terminal step")
    out = np.empty_like(payoffs)
    out[:, -1] = payoffs[:, -1]
    for j in range(payoffs.shape[1] - 2, -1, -1):
        out[:, j] = np.where(stop[:, j], payoffs[:, j], out[:, j + 1])
    return out


def ls_solve(config: LsConfig) -> LsResult:
    """Run the regression backward induction and the optional fresh-path pass."""
    t_start = time.perf_counter()
    sk = config.skeleton
    e = num_periods(sk)
    batch = sample_batch(sk, config.n_paths, tag="train", workers=config.workers)
    z, ev = _payoffs(config, batch)
    t_sim = time.perf_counter()
    lim = config.resolved_payoff_bound
    n = config.n_paths
    realized = z[:, e].copy()
    first_stop = np.full(n, e, dtype=np.int64)
    fits: list[FitResult | None] = [None] * e
    archs: list[Architecture | None] = [None] * e
    steps: list[StepSummary] = []
    for j in range(e - 1, 0, -1):
        x = _inputs(config, batch, ev, j)
        rows = z[:, j] > 0 if config.itm_only else slice(None)
        x, targets = x[rows], realized[rows]
        arch = _architecture(config, j, x.shape[1], realized)
        if targets.size < 2:
            steps.append(StepSummary(j, arch.input_dim, arch.degree, arch.basis_size, 0,
                                     arch.bound, float("nan"), 0.0))
            continue
        design = design_matrix(x, arch)
        fit = fit_least_squares(x, targets, arch, design=design, step=j)
        u_hat = fit.predict_design(design)
        del design
        stop = np.zeros(n, dtype=bool)
        stop[rows] = z[rows, j] >= u_hat
        realized = np.where(stop, z[:, j], realized)
        first_stop[stop] = j
        fits[j], archs[j] = fit, arch
        steps.append(StepSummary(j, arch.input_dim, arch.degree, arch.basis_size, fit.rank,
                                 arch.bound, fit.empirical_risk, float(stop.mean())))
    # step 0: the history is empty, so the fit is a clamped sample mean
    u0 = truncate(float(realized.mean()), lim)
    z0 = float(z[0, 0])
    value = max(z0, u0)
    if z0 >= u0:
        first_stop[:] = 0
    const_fit = FitResult(np.array([u0]), float(np.mean((u0 - realized) ** 2)),
                          float(np.mean((u0 - realized) ** 2)), n, lim, 1)
    fits[0] = const_fit
    archs[0] = None
    steps.append(StepSummary(0, 0, 0, 1, 1, lim, const_fit.empirical_risk, float(z0 >= u0)))
    steps.reverse()
    t_fit = time.perf_counter()
    result = LsResult(value, u0, z0, fits, archs, first_stop, steps,
                      metadata={"seed": sk.seed, "periods": e, "payoff_bound": lim})
    if config.fresh_paths > 0:
        mean, se = lower_bound_estimate(fitted_rule(result, config), config.structure, sk,
                                        config.fresh_paths, workers=config.workers,
                                        truncation=config.truncation)
        result.lower_bound, result.lower_bound_se = mean, se
    t_end = time.perf_counter()
    result.metadata["timings_ms"] = {
        "simulate": 1e3 * (t_sim - t_start),
        "regress": 1e3 * (t_fit - t_sim),
        "lower_bound": 1e3 * (t_end - t_fit),
        "total": 1e3 * (t_end - t_start),
    }
    return result


def fitted_rule(result: LsResult, config: LsConfig) -> list[Continuation]:
    """Continuation evaluators from a solved instance, indexed by step."""
    rule: list[Continuation] = []
    for j, (fit, arch) in enumerate(zip(result.fits, result.architectures)):
        if j == 0:
            u0 = result.continuation0
            rule.append(lambda dts, coords, signs, ev, j, u0=u0: np.full(dts.shape[0], u0))
            continue

        def cont(dts, coords, signs, ev, j, fit=fit, arch=arch):
            out = np.full(dts.shape[0], np.inf)
            if fit is None:
                return out
            rows = ev.payoffs[:, j] > 0 if config.itm_only else slice(None)
            fake = SkeletonBatch(dts[rows], coords[rows], signs[rows], config.skeleton.epsilon,
                                 config.skeleton.dim)
            sub = Evaluation(ev.payoffs[rows], None if ev.states is None else ev.states[rows],
                             ev.epochs[rows])
            x = _inputs(config, fake, sub, j)
            out[rows] = fit.predict_design(design_matrix(x, arch))
            return out

        rule.append(cont)
    return rule


def apply_rule(rule: Sequence[Continuation], batch: SkeletonBatch, ev: Evaluation) -> np.ndarray:
    """First step ``j < e`` with ``Z_j >= U_j`` on each path, else ``e``."""
    z = ev.payoffs
    n, e1 = z.shape
    e = e1 - 1
    if len(rule) != e:
        raise IndexError(f"rule has {len(rule)} steps, paths have {e}")
    tau = np.full(n, e, dtype=np.int64)
    open_ = np.ones(n, dtype=bool)
    for j in range(e):
        if not open_.any():
            break
        idx = np.flatnonzero(open_)
        sub = Evaluation(z[idx], None if ev.states is None else ev.states[idx], ev.epochs[idx])
        u = np.asarray(rule[j](batch.dts[idx, :j], batch.coords[idx, :j], batch.signs[idx, :j],
                               sub, j), dtype=float)
        stop = z[idx, j] >= u
        tau[idx[stop]] = j
        open_[idx[stop]] = False
    return tau


def lower_bound_estimate(rule: Sequence[Continuation], structure: Structure,
                         skeleton: SkeletonConfig, n_fresh: int, *, tag: str = "fresh",
                         workers: int = 1, truncation: float | None = None) -> tuple[float, float]:
    """Mean realized payoff of a frozen rule on independent paths, with its standard error."""
    if n_fresh < 1:
        raise ConfigError("fresh_paths: need at least one path")
    batch = sample_batch(skeleton, n_fresh, tag=tag, workers=workers)
    ev = structure.evaluate(batch.dts, batch.coords, batch.signs, skeleton.epsilon, skeleton.horizon)
    if truncation is not None:
        ev.payoffs = truncate(ev.payoffs, truncation)
    tau = apply_rule(rule, batch, ev)
    realized = ev.payoffs[np.arange(n_fresh), tau]
    se = float(realized.std(ddof=1) / math.sqrt(n_fresh)) if n_fresh > 1 else 0.0
    return float(realized.mean()), se
