"""Reward structures driven by skeleton paths.

Functionals take ``(t, values, epochs)`` where ``values`` and ``epochs`` are
``(M, m + 1)`` arrays describing piecewise-constant paths that are already
stopped at ``t``: the last column is the value in force at time ``t``. They
return an ``(M,)`` array. Only stopped paths are ever passed in, which is
what makes every functional non-anticipative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .errors import BoundViolationError, CoefficientError, ConfigError, DomainError
from .rng import substream
from .skeleton import SkeletonIncrement, SkeletonPath

PathFunctional = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class RewardFunctional:
    evaluator: PathFunctional
    sup_bound: float | None = None
    lipschitz: float | None = None
    name: str = "custom"

    def __call__(self, t, values, epochs) -> np.ndarray:
        out = np.asarray(self.evaluator(np.asarray(t, dtype=float), values, epochs), dtype=float)
        bad = ~np.isfinite(out)
        if bad.any():
            raise CoefficientError(f"payoff '{self.name}' non-finite on path {int(np.argmax(bad))}")
        if self.sup_bound is not None:
            over = np.abs(out) > self.sup_bound * (1 + 1e-12)
            if over.any():
                i = int(np.argmax(over))
                raise BoundViolationError(
                    f"payoff '{self.name}' = {out[i]} exceeds declared bound {self.sup_bound} on path {i}")
        return out


@dataclass(frozen=True)
class SdeCoefficients:
    drift: PathFunctional
    diffusion: PathFunctional
    x0: float
    lipschitz: float | None = None
    name: str = "custom"


@dataclass(frozen=True)
class StatePath:
    """Euler node values on the random partition."""

    values: np.ndarray
    epochs: np.ndarray

    def gamma(self, j: int) -> "StatePath":
        """The path frozen at its ``j``-th epoch."""
        return StatePath(self.values[: j + 1].copy(), self.epochs[: j + 1].copy())

    def at(self, t: float) -> float:
        k = int(np.searchsorted(self.epochs, t, side="right")) - 1
        return float(self.values[max(k, 0)])


@dataclass(frozen=True)
class PayoffSequence:
    values: np.ndarray
    horizon_index: int


# ---------------------------------------------------------------------------
# Euler scheme and payoffs, batched over paths
# ---------------------------------------------------------------------------

def _check_finite(arr: np.ndarray, what: str, step: int):
    bad = ~np.isfinite(arr)
    if bad.any():
        raise CoefficientError(f"{what} non-finite at step {step} on path {int(np.argmax(bad))}")


def euler_states(coeffs: SdeCoefficients, dts: np.ndarray, signs: np.ndarray,
                 epsilon: float) -> tuple[np.ndarray, np.ndarray]:
    """Node values and epochs of the Euler scheme for a batch of skeletons.

    ``signs`` may be real-valued (relaxed marks); the driving increment is
    ``epsilon * sign``.
    """
    dts = np.atleast_2d(np.asarray(dts, dtype=float))
    signs = np.atleast_2d(np.asarray(signs, dtype=float))
    m_paths, n = dts.shape
    values = np.empty((m_paths, n + 1))
    epochs = np.zeros((m_paths, n + 1))
    np.cumsum(dts, axis=1, out=epochs[:, 1:])
    values[:, 0] = coeffs.x0
    for m in range(1, n + 1):
        t_prev = epochs[:, m - 1]
        hist_v, hist_e = values[:, :m], epochs[:, :m]
        a = np.asarray(coeffs.drift(t_prev, hist_v, hist_e), dtype=float)
        s = np.asarray(coeffs.diffusion(t_prev, hist_v, hist_e), dtype=float)
        _check_finite(a, "drift", m)
        _check_finite(s, "diffusion", m)
        values[:, m] = values[:, m - 1] + a * dts[:, m - 1] + s * epsilon * signs[:, m - 1]
        _check_finite(values[:, m], "state", m)
    return values, epochs


def euler_step(coeffs: SdeCoefficients, state: StatePath, increment: SkeletonIncrement,
               epsilon: float) -> float:
    """Next Euler node after ``state`` for one increment (first coordinate drives)."""
    v = state.values[None, :]
    e = state.epochs[None, :]
    t = e[:, -1]
    a = float(coeffs.drift(t, v, e)[0])
    s = float(coeffs.diffusion(t, v, e)[0])
    out = state.values[-1] + a * increment.dt + s * epsilon * increment.mark.sign
    if not (math.isfinite(a) and math.isfinite(s) and math.isfinite(out)):
        raise CoefficientError("non-finite coefficient in euler_step")
    return out


def euler_path(coeffs: SdeCoefficients, path: SkeletonPath) -> StatePath:
    if path.dim != 1:
        raise DomainError("the Euler layer supports one-dimensional skeletons only")
    v, e = euler_states(coeffs, path.dts[None, :], path.signs[None, :], path.epsilon)
    return StatePath(v[0], e[0])


def horizon_index(epochs: np.ndarray, horizon: float) -> np.ndarray:
    """Index of the last epoch not exceeding the horizon, per row."""
    return (np.atleast_2d(epochs) <= horizon).sum(axis=1) - 1


def payoff_matrix(F: RewardFunctional, values: np.ndarray, epochs: np.ndarray,
                  horizon: float) -> np.ndarray:
    """Payoffs ``Z_j = F(t_j, path stopped at t_j)``, frozen after the horizon."""
    values = np.atleast_2d(values)
    epochs = np.atleast_2d(epochs)
    m_paths, n1 = values.shape
    last = horizon_index(epochs, horizon)
    out = np.empty((m_paths, n1))
    rows = np.arange(m_paths)
    for j in range(n1):
        live = last >= j
        col = np.empty(m_paths)
        if live.all():
            col[:] = F(epochs[:, j], values[:, : j + 1], epochs[:, : j + 1])
        else:
            if live.any():
                col[live] = F(epochs[live, j], values[live, : j + 1], epochs[live, : j + 1])
            frozen = ~live
            col[frozen] = out[rows[frozen], last[frozen]]
        out[:, j] = col
    return out


def reward_path(F: RewardFunctional, state: StatePath, horizon: float) -> PayoffSequence:
    z = payoff_matrix(F, state.values[None, :], state.epochs[None, :], horizon)[0]
    return PayoffSequence(z, int(horizon_index(state.epochs[None, :], horizon)[0]))


# ---------------------------------------------------------------------------
# Structures consumed by the solvers
# ---------------------------------------------------------------------------

@dataclass
class Evaluation:
    payoffs: np.ndarray
    states: np.ndarray | None
    epochs: np.ndarray


class Structure(Protocol):
    name: str
    sup_bound: float | None

    def evaluate(self, dts, coords, signs, epsilon: float, horizon: float) -> Evaluation: ...


@dataclass
class EulerStructure:
    """Payoff functional of the Euler state process on the skeleton partition."""

    coeffs: SdeCoefficients
    payoff: RewardFunctional
    name: str = "euler"

    @property
    def sup_bound(self) -> float | None:
        return self.payoff.sup_bound

    def evaluate(self, dts, coords, signs, epsilon, horizon) -> Evaluation:
        if coords is not None and np.any(np.asarray(coords) != 1):
            raise DomainError("the Euler layer supports one-dimensional skeletons only")
        values, epochs = euler_states(self.coeffs, dts, signs, epsilon)
        return Evaluation(payoff_matrix(self.payoff, values, epochs, horizon), values, epochs)


@dataclass
class ConstantStructure:
    """Payoff ``c`` at every step, on skeletons of any dimension."""

    value: float
    name: str = "constant"

    @property
    def sup_bound(self) -> float:
        return abs(self.value)

    def evaluate(self, dts, coords, signs, epsilon, horizon) -> Evaluation:
        dts = np.atleast_2d(dts)
        epochs = np.concatenate([np.zeros((dts.shape[0], 1)), np.cumsum(dts, axis=1)], axis=1)
        return Evaluation(np.full(epochs.shape, float(self.value)), None, epochs)


@dataclass
class StepIndexStructure:
    """Payoff equal to the step index ``j``; deterministic and increasing."""

    periods: int
    name: str = "step_index"

    @property
    def sup_bound(self) -> float:
        return float(self.periods)

    def evaluate(self, dts, coords, signs, epsilon, horizon) -> Evaluation:
        dts = np.atleast_2d(dts)
        epochs = np.concatenate([np.zeros((dts.shape[0], 1)), np.cumsum(dts, axis=1)], axis=1)
        z = np.broadcast_to(np.arange(dts.shape[1] + 1, dtype=float), epochs.shape).copy()
        return Evaluation(z, None, epochs)


# ---------------------------------------------------------------------------
# built-in coefficient sets and payoffs
# ---------------------------------------------------------------------------

def _current(values):
    return values[:, -1]


def zero_coefficients(x0: float = 0.0) -> SdeCoefficients:
    zero = lambda t, v, e: np.zeros(v.shape[0])
    return SdeCoefficients(zero, zero, x0, 0.0, "zero")


def constant_coefficients(drift: float, diffusion: float, x0: float = 0.0) -> SdeCoefficients:
    return SdeCoefficients(lambda t, v, e: np.full(v.shape[0], float(drift)),
                           lambda t, v, e: np.full(v.shape[0], float(diffusion)),
                           x0, 0.0, "constant")


def random_walk_coefficients(x0: float = 0.0, sigma: float = 1.0) -> SdeCoefficients:
    return constant_coefficients(0.0, sigma, x0)


def geometric_coefficients(rate: float, vol: float, x0: float) -> SdeCoefficients:
    return SdeCoefficients(lambda t, v, e: rate * v[:, -1], lambda t, v, e: vol * v[:, -1],
                           x0, max(abs(rate), abs(vol)), "geometric")


def path_vol_coefficients(x0: float = 0.0, base: float = 0.2, slope: float = 0.1,
                          reversion: float = 0.0) -> SdeCoefficients:
    """Volatility ``base + slope * min(1, running sup |x|)`` with clipped mean reversion."""
    def drift(t, v, e):
        return -reversion * np.clip(v[:, -1], -1.0, 1.0)

    def diffusion(t, v, e):
        return base + slope * np.minimum(1.0, np.abs(v).max(axis=1))

    return SdeCoefficients(drift, diffusion, x0, max(abs(reversion), abs(slope)), "path_vol")


def _discounted(payoff, rate: float):
    if rate == 0.0:
        return lambda t, v, e: payoff(v)
    return lambda t, v, e: np.exp(-rate * t) * payoff(v)


def put_payoff(strike: float, rate: float = 0.0) -> RewardFunctional:
    """``exp(-rate t) (K - x)^+``; its declared bound assumes nonnegative states."""
    return RewardFunctional(_discounted(lambda v: np.maximum(strike - v[:, -1], 0.0), rate),
                            float(strike), 1.0 + abs(rate) * strike, "put")


def bounded_put_payoff(strike: float, rate: float = 0.0) -> RewardFunctional:
    """``min(K, (K - x)^+)``, optionally discounted."""
    return RewardFunctional(
        _discounted(lambda v: np.minimum(strike, np.maximum(strike - v[:, -1], 0.0)), rate),
        float(strike), 1.0 + abs(rate) * strike, "bounded_put")


def running_max_payoff() -> RewardFunctional:
    return RewardFunctional(lambda t, v, e: v.max(axis=1), None, 1.0, "running_max")


def identity_payoff() -> RewardFunctional:
    return RewardFunctional(lambda t, v, e: v[:, -1].copy(), None, 1.0, "identity")


def constant_payoff(value: float) -> RewardFunctional:
    return RewardFunctional(lambda t, v, e: np.full(v.shape[0], float(value)),
                            abs(float(value)), 0.0, "constant")


COEFFICIENTS = {
    "zero": zero_coefficients,
    "random_walk": random_walk_coefficients,
    "geometric": geometric_coefficients,
    "path_vol": path_vol_coefficients,
    "constant": constant_coefficients,
}
PAYOFFS = {
    "put": put_payoff,
    "bounded_put": bounded_put_payoff,
    "running_max": running_max_payoff,
    "identity": identity_payoff,
    "constant": constant_payoff,
}


def build_structure(description: dict, periods: int | None = None):
    """Build a structure from a plain description.

    ``{"kind": "constant", "value": c}``, ``{"kind": "step_index"}`` or
    ``{"kind": "euler", "coefficients": {"name": ..., ...},
    "payoff": {"name": ..., ...}}``.
    """
    description = dict(description)
    kind = description.pop("kind", "euler")
    try:
        if kind == "constant":
            return ConstantStructure(float(description.pop("value")))
        if kind == "step_index":
            if periods is None:
                raise ConfigError("step_index structure needs the period count")
            return StepIndexStructure(periods)
        if kind == "euler":
            coeff_desc = dict(description.pop("coefficients"))
            payoff_desc = dict(description.pop("payoff"))
            coeffs = COEFFICIENTS[coeff_desc.pop("name")](**coeff_desc)
            payoff = PAYOFFS[payoff_desc.pop("name")](**payoff_desc)
            if description:
                raise ConfigError(f"unknown structure keys: {sorted(description)}")
            return EulerStructure(coeffs, payoff, f"{coeffs.name}/{payoff.name}")
    except KeyError as exc:
        raise ConfigError(f"structure: unknown or missing entry {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"structure: {exc}") from None
    raise ConfigError(f"structure: unknown kind '{kind}'")


# ---------------------------------------------------------------------------
# coupling with a fine-grid reference
# ---------------------------------------------------------------------------

def lattice_walk(increments: np.ndarray, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Fine Brownian path that lands exactly on lattice points when crossing them.

    The path is tracked as ``index * spacing + offset`` with ``|offset| <
    spacing``; a step that would carry the offset to ``+-spacing`` or beyond
    is cut short at the lattice point. Returns the clipped increments and the
    integer lattice index after every step, shape ``(M, n)``.
    """
    m_paths, n = increments.shape
    offset = np.zeros(m_paths)
    index = np.zeros(m_paths, dtype=np.int64)
    clipped = np.empty_like(increments)
    indices = np.empty((m_paths, n), dtype=np.int64)
    for i in range(n):
        trial = offset + increments[:, i]
        up = trial >= spacing
        down = trial <= -spacing
        hit = up | down
        clipped[:, i] = np.where(up, spacing - offset,
                                 np.where(down, -spacing - offset, increments[:, i]))
        index += up.astype(np.int64) - down.astype(np.int64)
        offset = np.where(hit, 0.0, trial)
        indices[:, i] = index
    return clipped, indices


def embedded_skeleton(indices: np.ndarray, step: float, ratio: int, periods: int):
    """Level-crossing skeleton of size ``ratio * spacing`` read off a lattice walk.

    A renewal fires at the first grid time where the lattice index has moved
    ``ratio`` sites from the previous renewal site. Returns ``(epochs, signs,
    counts)``; rows hold at most ``periods`` renewals, unused slots are inf.
    """
    m_paths, n = indices.shape
    level = np.zeros(m_paths, dtype=np.int64)
    epochs = np.full((m_paths, periods), np.inf)
    signs = np.zeros((m_paths, periods))
    counts = np.zeros(m_paths, dtype=np.int64)
    for i in range(n):
        moved = indices[:, i] - level
        hit = (np.abs(moved) >= ratio) & (counts < periods)
        if hit.any():
            rows = np.flatnonzero(hit)
            sgn = np.sign(moved[rows])
            epochs[rows, counts[rows]] = (i + 1) * step
            signs[rows, counts[rows]] = sgn
            level[rows] += sgn * ratio
            counts[rows] += 1
    return epochs, signs, counts


def _fine_reference(coeffs, F, increments, step):
    m_paths, n = increments.shape
    values = np.empty((m_paths, n + 1))
    epochs = np.arange(n + 1) * step
    ep2 = np.broadcast_to(epochs, (m_paths, n + 1))
    values[:, 0] = coeffs.x0
    z = np.empty((m_paths, n + 1))
    for i in range(n + 1):
        if F is not None:
            z[:, i] = F(ep2[:, i], values[:, : i + 1], ep2[:, : i + 1])
        if i == n:
            break
        t = ep2[:, i]
        a = coeffs.drift(t, values[:, : i + 1], ep2[:, : i + 1])
        s = coeffs.diffusion(t, values[:, : i + 1], ep2[:, : i + 1])
        values[:, i + 1] = values[:, i] + a * step + s * increments[:, i]
    return values, epochs, z


@dataclass
class ConvergenceReport:
    epsilons: list[float]
    distances: list[float]
    standard_errors: list[float]


def _coupled_levels(coeffs, F, epsilons, n_paths, seed, horizon, index):
    eps_min = min(epsilons)
    ratios = [e / eps_min for e in epsilons]
    if any(abs(r - round(r)) > 1e-9 for r in ratios):
        raise DomainError("every level must be an integer multiple of the finest one")
    step = eps_min**2 / 100.0
    n_fine = int(math.ceil(horizon / step - 1e-9))
    rng = substream(seed, "fine_grid", index)
    raw = rng.standard_normal((n_paths, n_fine)) * math.sqrt(step)
    incs, sites = lattice_walk(raw, eps_min)
    ref_values, ref_epochs, ref_z = _fine_reference(coeffs, F, incs, step)
    levels = []
    for eps, ratio in zip(epsilons, ratios):
        periods = int(math.ceil(horizon / eps**2 - 1e-9))
        ep, sg, counts = embedded_skeleton(sites, step, int(round(ratio)), periods)
        # renewals beyond the simulated window get placeholder epochs past the
        # horizon, where payoffs are frozen anyway
        filled = np.where(np.isfinite(ep), ep, horizon + step * (1 + np.arange(periods)))
        filled = np.maximum.accumulate(filled, axis=1)
        dts = np.diff(filled, axis=1, prepend=0.0)
        sg = np.where(np.isfinite(ep), sg, 0.0)
        values, epochs = euler_states(coeffs, dts, sg, eps)
        levels.append((eps, values, epochs))
    return ref_values, ref_epochs, ref_z, levels


def structure_convergence_check(F: RewardFunctional, coeffs: SdeCoefficients, epsilons,
                                n_paths: int, seed: int = 0, horizon: float = 1.0,
                                replication: int = 0) -> ConvergenceReport:
    """Mean sup-distance between skeleton payoffs and a coupled fine-grid reference.

    The reference is an Euler scheme on a grid of width ``min(eps)**2 / 100``
    driven by a lattice-clipped Brownian path; every skeleton is read off
    that same path, so crossings are exact.
    """
    epsilons = [float(e) for e in epsilons]
    if len(epsilons) < 2:
        raise DomainError("need at least two resolution levels")
    _, ref_epochs, ref_z, levels = _coupled_levels(coeffs, F, epsilons, n_paths, seed,
                                                   horizon, replication)
    dists, ses = [], []
    for eps, values, epochs in levels:
        z = payoff_matrix(F, values, epochs, horizon)
        # skeleton payoff in force at each fine time, frozen after the last renewal
        idx = np.empty((n_paths, len(ref_epochs)), dtype=np.int64)
        for i in range(n_paths):
            idx[i] = np.searchsorted(epochs[i], ref_epochs, side="right") - 1
        skel = np.take_along_axis(z, idx, axis=1)
        per_path = np.abs(skel - ref_z).max(axis=1)
        dists.append(float(per_path.mean()))
        ses.append(float(per_path.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0)
    return ConvergenceReport(epsilons, dists, ses)


def euler_strong_errors(coeffs: SdeCoefficients, epsilons, n_paths: int, seed: int = 0,
                        horizon: float = 1.0, replication: int = 0) -> list[np.ndarray]:
    """Per-path ``max_m |h_m - X_ref(t_m)|`` over skeleton nodes up to the horizon."""
    epsilons = [float(e) for e in epsilons]
    ref_values, ref_epochs, _, levels = _coupled_levels(coeffs, None, epsilons, n_paths,
                                                        seed, horizon, replication)
    out = []
    step = ref_epochs[1]
    for eps, values, epochs in levels:
        ok = epochs <= horizon
        grid_idx = np.clip(np.rint(np.where(ok, epochs, 0.0) / step).astype(np.int64),
                           0, len(ref_epochs) - 1)
        ref = np.take_along_axis(ref_values, grid_idx, axis=1)
        err = np.where(ok, np.abs(values - ref), 0.0).max(axis=1)
        out.append(err)
    return out
