"""Truncated polynomial regression architectures and their least-squares fit."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg

from .errors import DomainError, RegressionError

MAX_BASIS = 5_000_000
SV_CUTOFF = 1e-12


def poly_dim(m: int, r: int) -> int:
    """Number of monomials of total degree at most ``r`` in ``m`` variables."""
    if m < 1 or r < 0:
        raise DomainError("need m >= 1 and r >= 0")
    value = math.comb(r + m, m)
    if value > MAX_BASIS:
        raise DomainError(f"basis of size {value} is too large")
    return value


@lru_cache(maxsize=64)
def _monomial_tree(m: int, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Graded monomial order as (parent index, multiplying variable) pairs.

    Entry 0 is the constant; every later monomial equals its parent times
    one variable, with variables only ever appended in nondecreasing order.
    """
    parents, variables, last_var = [-1], [-1], [0]
    frontier = [0]
    for _ in range(r):
        nxt = []
        for p in frontier:
            for v in range(last_var[p], m):
                parents.append(p)
                variables.append(v)
                last_var.append(v)
                nxt.append(len(parents) - 1)
        frontier = nxt
    return np.array(parents), np.array(variables)


def monomial_exponents(m: int, r: int) -> np.ndarray:
    parents, variables = _monomial_tree(m, r)
    exps = np.zeros((len(parents), m), dtype=np.int64)
    for i in range(1, len(parents)):
        exps[i] = exps[parents[i]]
        exps[i, variables[i]] += 1
    return exps


@dataclass(frozen=True)
class Architecture:
    """Polynomials of degree ``degree`` in ``input_dim`` normalized inputs, clamped to ``bound``."""

    input_dim: int
    degree: int
    bound: float
    time_scale: float = 1.0

    def __post_init__(self):
        if self.input_dim < 1 or self.degree < 0:
            raise DomainError("need input_dim >= 1 and degree >= 0")
        if not self.bound > 0:
            raise DomainError("bound must be positive")
        poly_dim(self.input_dim, self.degree)

    @property
    def basis_size(self) -> int:
        return poly_dim(self.input_dim, self.degree)

    @property
    def vc_bound(self) -> int:
        return 1 + self.basis_size


def design_matrix(inputs: np.ndarray, arch: Architecture) -> np.ndarray:
    """Monomial features of normalized inputs, shape ``(N, basis_size)``."""
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    if x.shape[1] != arch.input_dim:
        raise DomainError(f"expected {arch.input_dim} inputs, got {x.shape[1]}")
    parents, variables = _monomial_tree(arch.input_dim, arch.degree)
    out = np.empty((x.shape[0], len(parents)), order="F")
    out[:, 0] = 1.0
    for i in range(1, len(parents)):
        np.multiply(out[:, parents[i]], x[:, variables[i]], out=out[:, i])
    return out


def flatten_history(dts, coords, signs, dim: int, time_scale: float) -> np.ndarray:
    """Inputs ``(s_1/T, x_1, ..., s_j/T, x_j)`` with mark vectors ``x``.

    Real-valued signs are accepted, which gives the relaxed-mark domain.
    """
    dts = np.atleast_2d(np.asarray(dts, dtype=float))
    signs = np.atleast_2d(np.asarray(signs, dtype=float))
    n, j = dts.shape
    out = np.zeros((n, j, dim + 1))
    out[:, :, 0] = dts / time_scale
    if dim == 1:
        out[:, :, 1] = signs
    else:
        coords = np.atleast_2d(np.asarray(coords, dtype=np.int64))
        rows = np.arange(n)[:, None]
        steps = np.arange(j)[None, :]
        out[rows, steps, coords] = signs
    return out.reshape(n, j * (dim + 1))


def features(history, arch: Architecture, dim: int = 1) -> np.ndarray:
    """Feature vector of one history (a ``SkeletonPath`` or list of increments)."""
    if hasattr(history, "dts"):
        dts, coords, signs = history.dts, history.coords, history.signs
    else:
        history = list(history)
        dts = [h.dt for h in history]
        coords = [h.mark.coordinate for h in history]
        signs = [h.mark.sign for h in history]
    x = flatten_history(np.asarray(dts)[None, :], np.asarray(coords)[None, :],
                        np.asarray(signs)[None, :], dim, arch.time_scale)
    return design_matrix(x, arch)[0]


@dataclass
class FitResult:
    coefficients: np.ndarray
    empirical_risk: float
    raw_risk: float
    n_samples: int
    bound: float
    rank: int = 0

    def predict_design(self, design: np.ndarray) -> np.ndarray:
        return np.clip(design @ self.coefficients, -self.bound, self.bound)


def _merge_duplicate_columns(design: np.ndarray):
    """Group exactly equal columns (e.g. ``x**2 == 1`` for +-1 marks)."""
    p = design.shape[1]
    seen: dict[bytes, int] = {}
    groups: list[list[int]] = []
    for i in range(p):
        key = design[:, i].tobytes()
        g = seen.get(key)
        if g is None:
            seen[key] = len(groups)
            groups.append([i])
        else:
            groups[g].append(i)
    return groups


def min_norm_lstsq(design: np.ndarray, targets: np.ndarray, cutoff: float = SV_CUTOFF):
    """Minimum-norm least squares with a relative singular-value cutoff.

    Householder QR reduces the problem to the triangular factor, whose SVD
    gives the pseudo-inverse. Duplicate columns are merged first with weights
    ``sqrt(k)`` and their coefficient split equally, which leaves both the
    singular values and the minimum-norm solution unchanged.
    """
    n, p = design.shape
    groups = _merge_duplicate_columns(design)
    if len(groups) < p:
        firsts = [g[0] for g in groups]
        mult = np.sqrt(np.array([len(g) for g in groups], dtype=float))
        work = np.asarray(design[:, firsts] * mult, order="F")
    else:
        work = design
    if n >= work.shape[1]:
        qty, r = scipy.linalg.qr_multiply(work, targets[None, :], mode="right")
        qty = qty[0]
        u, sv, vt = np.linalg.svd(r, full_matrices=False)
        rhs = u.T @ qty
    else:
        u, sv, vt = np.linalg.svd(work, full_matrices=False)
        rhs = u.T @ targets
    if sv.size == 0 or sv[0] == 0.0:
        sol = np.zeros(work.shape[1])
        rank = 0
    else:
        keep = sv > cutoff * sv[0]
        rank = int(keep.sum())
        sol = vt[keep].T @ (rhs[keep] / sv[keep])
    if len(groups) < p:
        coef = np.empty(p)
        for g, m, c in zip(groups, mult, sol):
            coef[g] = c / m
        return coef, rank
    return sol, rank


def fit_least_squares(inputs: np.ndarray, targets, arch: Architecture, *,
                      design: np.ndarray | None = None, step: int | None = None) -> FitResult:
    """Least-squares fit of ``targets`` on the architecture's features."""
    y = np.asarray(targets, dtype=float).ravel()
    if y.size == 0 or not np.all(np.isfinite(y)):
        raise RegressionError("targets must be finite and nonempty", step)
    x = design_matrix(inputs, arch) if design is None else design
    if x.shape[0] != y.size:
        raise DomainError("inputs and targets disagree in length")
    try:
        coef, rank = min_norm_lstsq(x, y)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise RegressionError(str(exc), step) from None
    raw = x @ coef
    raw_risk = float(np.mean((raw - y) ** 2))
    risk = float(np.mean((np.clip(raw, -arch.bound, arch.bound) - y) ** 2))
    return FitResult(coef, risk, raw_risk, y.size, arch.bound, rank)


def evaluate(fit: FitResult, inputs: np.ndarray, arch: Architecture) -> np.ndarray:
    """Clamped predictions for a batch of normalized inputs."""
    if len(fit.coefficients) != arch.basis_size:
        raise DomainError("fit and architecture have different basis sizes")
    return fit.predict_design(design_matrix(inputs, arch))


def integer_root_floor(n: int, q: int) -> int:
    """Largest ``r`` with ``r**q <= n``."""
    r = int(math.floor(n ** (1.0 / q)))
    while (r + 1) ** q <= n:
        r += 1
    while r > 0 and r**q > n:
        r -= 1
    return r


@dataclass(frozen=True)
class BoundPolicy:
    """How the clamp bound is chosen: ``constant``, ``payoff`` or ``twice_sup``."""

    kind: str = "payoff"
    value: float | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "payoff", "twice_sup"):
            raise DomainError(f"unknown bound policy '{self.kind}'")
        if self.kind == "constant" and not (self.value and self.value > 0):
            raise DomainError("constant bound policy needs a positive value")

    def resolve(self, payoff_bound: float, sup_estimate: float | None = None) -> float:
        if self.kind == "constant":
            return float(self.value)
        if self.kind == "twice_sup":
            est = payoff_bound if sup_estimate is None else sup_estimate
            return max(2.0 * float(est), 1e-12)
        return float(payoff_bound)


def schedule_degree(n_samples: int, j: int, d: int) -> int:
    """``max(1, floor(N ** (1 / (j (d + 1) + 2))))`` computed in exact integers."""
    if n_samples < 2 or j < 1 or d < 1:
        raise DomainError("need N >= 2, j >= 1, d >= 1")
    return max(1, integer_root_floor(int(n_samples), j * (d + 1) + 2))


def architecture_schedule(n_samples: int, j: int, d: int, policy: BoundPolicy | None = None,
                          payoff_bound: float = 1.0, sup_estimate: float | None = None,
                          time_scale: float = 1.0) -> Architecture:
    policy = policy or BoundPolicy()
    return Architecture(j * (d + 1), schedule_degree(n_samples, j, d),
                        policy.resolve(payoff_bound, sup_estimate), time_scale)


def truncate(value, beta: float):
    """Clamp to ``[-beta, beta]``."""
    if not beta > 0:
        raise DomainError("beta must be positive")
    out = np.clip(value, -beta, beta)
    return float(out) if np.ndim(out) == 0 else out
