"""Brownian level-crossing skeletons.

Each coordinate of a d-dimensional Brownian motion renews whenever it has
moved by ``epsilon`` from its last renewal point. The renewal gaps are i.i.d.
first-exit times of Brownian motion from ``(-epsilon, epsilon)`` and each
crossing carries an independent fair sign. Merging the coordinates in time
order gives the global increments ``(dt, coordinate, sign)``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import erfc

from .errors import DomainError, InvalidMarkError, ResolutionTooFineError
from .rng import BLOCK_SIZE, block_ranges, substream

SERIES_TOL = 1e-12
SWITCH_TIME = 0.1
# cdf and survival switch series near the median, so whichever of the two is
# below 1/2 is always summed directly rather than formed as 1 minus the other
TAIL_SWITCH = 0.75
_MAX_TERMS = 400
_PI2_8 = math.pi**2 / 8.0
_LOG_HALF = math.log(2.0)
_Y_MAX = 40.0
_HERMITE_POINTS = 8192


# ---------------------------------------------------------------------------
# Exit-time law for the unit interval (-1, 1); general epsilon by scaling.
# ---------------------------------------------------------------------------

def _alternating_sum(term, t: np.ndarray, tol: float) -> np.ndarray:
    total = np.zeros_like(t)
    for n in range(_MAX_TERMS):
        nxt = term(n, t)
        total += nxt
        ahead = np.abs(term(n + 1, t))
        if np.all(ahead < tol * (np.abs(total) + 1e-300)):
            return total
    return total


def _spectral_density(n, t):
    a = 2 * n + 1
    return (-1) ** n * (math.pi / 2) * a * np.exp(-a * a * _PI2_8 * t)


def _spectral_survival(n, t):
    a = 2 * n + 1
    return (-1) ** n * (4 / math.pi) / a * np.exp(-a * a * _PI2_8 * t)


def _image_density(n, t):
    a = 2 * n + 1
    return (-1) ** n * 2 * a / np.sqrt(2 * math.pi * t**3) * np.exp(-a * a / (2 * t))


def _image_cdf(n, t):
    a = 2 * n + 1
    return (-1) ** n * 2 * erfc(a / np.sqrt(2 * t))


def unit_density_branches(t, tol: float = SERIES_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Both series for the unit-interval density, evaluated everywhere."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return _alternating_sum(_image_density, t, tol), _alternating_sum(_spectral_density, t, tol)


def unit_survival_branches(t, tol: float = SERIES_TOL) -> tuple[np.ndarray, np.ndarray]:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return 1.0 - _alternating_sum(_image_cdf, t, tol), _alternating_sum(_spectral_survival, t, tol)


def _split(t: np.ndarray, switch: float, small, large, tol: float) -> np.ndarray:
    out = np.empty_like(t)
    lo = t < switch
    if lo.any():
        out[lo] = _alternating_sum(small, t[lo], tol)
    if (~lo).any():
        out[~lo] = _alternating_sum(large, t[~lo], tol)
    return out


@dataclass(frozen=True)
class ExitTimeDistribution:
    """Law of the first exit time of Brownian motion from ``(-epsilon, epsilon)``.

    ``density``, ``survival`` and ``cdf`` accept scalars or arrays. The
    lower tail is computed from the image series and the upper tail from the
    spectral series, so each is accurate in relative terms where it is small.
    """

    epsilon: float
    tol: float = SERIES_TOL
    switch: float = SWITCH_TIME

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")
        if not (self.tol > 0 and self.switch > 0):
            raise DomainError("tolerance and switch point must be positive")

    @property
    def scale(self) -> float:
        """Time scale ``epsilon**2``, also the mean exit time."""
        return self.epsilon**2

    # scaled-time primitives -------------------------------------------------
    def unit_density(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = _split(s[pos], self.switch, _image_density, _spectral_density, self.tol)
        return np.maximum(out, 0.0)

    def unit_survival(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = np.ones_like(s)
        pos = s > 0
        if pos.any():
            sp = s[pos]
            small = sp < TAIL_SWITCH
            vals = np.empty_like(sp)
            if small.any():
                vals[small] = 1.0 - _alternating_sum(_image_cdf, sp[small], self.tol)
            if (~small).any():
                vals[~small] = _alternating_sum(_spectral_survival, sp[~small], self.tol)
            out[pos] = vals
        out[np.isinf(s)] = 0.0
        return np.clip(out, 0.0, 1.0)

    def unit_cdf(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        pos = s > 0
        if pos.any():
            sp = s[pos]
            small = sp < TAIL_SWITCH
            vals = np.empty_like(sp)
            if small.any():
                vals[small] = _alternating_sum(_image_cdf, sp[small], self.tol)
            if (~small).any():
                vals[~small] = 1.0 - _alternating_sum(_spectral_survival, sp[~small], self.tol)
            out[pos] = vals
        return np.clip(out, 0.0, 1.0)

    # physical time ------------------------------------------------------------
    def density(self, t):
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr <= 0):
            raise DomainError("exit density needs t > 0")
        out = self.unit_density(t_arr / self.scale) / self.scale
        return float(out) if out.ndim == 0 else out

    def survival(self, t):
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0):
            raise DomainError("exit survival needs t >= 0")
        out = self.unit_survival(t_arr / self.scale)
        return float(out) if out.ndim == 0 else out

    def cdf(self, t):
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0):
            raise DomainError("exit cdf needs t >= 0")
        out = self.unit_cdf(t_arr / self.scale)
        return float(out) if out.ndim == 0 else out

    # sampling ------------------------------------------------------------------
    @cached_property
    def _table(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        grid = np.geomspace(5e-3, 60.0, 4096)
        return grid, self.unit_cdf(grid), self.unit_survival(grid)

    def unit_quantile(self, v: np.ndarray, exact: bool = False) -> np.ndarray:
        """Scaled time ``s`` with ``cdf(s) = v`` for ``v`` in ``(0, 1)``.

        Probabilities below 1/2 are matched on the cdf, the rest on the
        survival function, so both tails keep full relative precision.
        ``exact=True`` solves every point by Newton iteration instead of
        using the interpolation table.
        """
        v = np.asarray(v, dtype=float)
        flat = v.ravel()
        out = np.empty_like(flat)
        lower = flat <= 0.5
        solve = self._invert if exact else self._lookup
        if lower.any():
            out[lower] = solve(flat[lower], upper=False)
        if (~lower).any():
            out[~lower] = solve(1.0 - flat[~lower], upper=True)
        return out.reshape(v.shape)

    def unit_inverse_survival(self, w: np.ndarray, exact: bool = False) -> np.ndarray:
        """Scaled time ``s`` with ``survival(s) = w`` for ``w`` in ``(0, 1]``."""
        w = np.asarray(w, dtype=float)
        flat = w.ravel()
        out = np.empty_like(flat)
        hi = flat >= 0.5
        solve = self._invert if exact else self._lookup
        if hi.any():
            out[hi] = solve(1.0 - flat[hi], upper=False)
        if (~hi).any():
            out[~hi] = solve(flat[~hi], upper=True)
        return out.reshape(w.shape)

    @cached_property
    def _hermite(self):
        # s as a function of z = log(-log(probability)) on both branches;
        # smooth in z, so cubic Hermite with exact slopes is accurate to ~1e-14.
        z = np.linspace(math.log(_LOG_HALF), math.log(_Y_MAX), _HERMITE_POINTS)
        y = np.exp(z)
        p = np.exp(-y)
        tables = []
        for upper in (False, True):
            s = self._invert(p, upper)
            slope = y * p / self.unit_density(s) * (1.0 if upper else -1.0)
            tables.append((s, slope))
        return z, tables

    def _lookup(self, target: np.ndarray, upper: bool) -> np.ndarray:
        z_grid, tables = self._hermite
        s_tab, ds_tab = tables[int(upper)]
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.log(-np.log(target))
        h = z_grid[1] - z_grid[0]
        pos = (z - z_grid[0]) / h
        inside = (pos >= 0) & (pos < len(z_grid) - 1)
        i = np.where(inside, pos, 0).astype(np.int64)
        t = np.where(inside, pos - i, 0.0)
        t2, t3 = t * t, t * t * t
        out = ((2 * t3 - 3 * t2 + 1) * s_tab[i] + (t3 - 2 * t2 + t) * h * ds_tab[i]
               + (3 * t2 - 2 * t3) * s_tab[i + 1] + (t3 - t2) * h * ds_tab[i + 1])
        if not inside.all():
            out[~inside] = self._invert(target[~inside], upper)
        return out

    def _invert(self, target: np.ndarray, upper: bool) -> np.ndarray:
        # Solve G(s) = target where G is the cdf (upper=False) or survival.
        grid, cdf_t, surv_t = self._table
        n = len(grid)
        if upper:
            # survival is decreasing: search on its reversal
            pos = n - np.searchsorted(surv_t[::-1], target, side="left")
            func = self.unit_survival
            sign = -1.0
        else:
            pos = np.searchsorted(cdf_t, target, side="left")
            func = self.unit_cdf
            sign = 1.0
        lo = np.where(pos > 0, grid[np.clip(pos - 1, 0, n - 1)], 1e-6)
        hi = np.where(pos < n, grid[np.clip(pos, 0, n - 1)], np.inf)
        # beyond the table: leading spectral term inverts in closed form
        far = ~np.isfinite(hi)
        if far.any():
            guess = np.log((4 / math.pi) / target[far]) / _PI2_8
            hi[far] = guess + 1.0
            lo[far] = np.maximum(grid[-1], guess - 1.0)
        s = np.sqrt(lo * hi)
        active = np.ones(len(target), dtype=bool)
        for _ in range(100):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            si = s[idx]
            resid = sign * (func(si) - target[idx])
            dens = self.unit_density(si)
            lo[idx] = np.where(resid < 0, si, lo[idx])
            hi[idx] = np.where(resid > 0, si, hi[idx])
            with np.errstate(divide="ignore", invalid="ignore"):
                step = resid / dens
                cand = si - step
            bad = ~np.isfinite(cand) | (cand <= lo[idx]) | (cand >= hi[idx])
            cand = np.where(bad, 0.5 * (lo[idx] + hi[idx]), cand)
            s[idx] = cand
            conv = (np.abs(cand - si) <= 4e-16 * cand) | (resid == 0) | (
                hi[idx] - lo[idx] <= 4e-16 * hi[idx])
            active[idx[conv]] = False
        return s

    def sample(self, rng: np.random.Generator, size=None):
        """Draw exit times by inverse-cdf sampling from one uniform each."""
        u = uniform_open(rng, size)
        out = self.unit_quantile(u) * self.scale
        return float(out) if size is None else out


def uniform_open(rng: np.random.Generator, size=None) -> np.ndarray:
    """Uniforms on the open interval (0, 1)."""
    u = np.asarray(rng.random(size))
    return np.where(u == 0.0, 2.0**-54, u)


def sample_exit(dist: ExitTimeDistribution, rng: np.random.Generator) -> float:
    return dist.sample(rng)


# ---------------------------------------------------------------------------
# Configuration, marks and paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SkeletonConfig:
    epsilon: float
    dim: int = 1
    horizon: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise DomainError("epsilon must be positive and finite")
        if int(self.dim) != self.dim or self.dim < 1:
            raise DomainError("dim must be a positive integer")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise DomainError("horizon must be positive and finite")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")

    @property
    def periods(self) -> int:
        return num_periods(self)

    @property
    def distribution(self) -> ExitTimeDistribution:
        return ExitTimeDistribution(self.epsilon)


def periods_for(horizon: float, epsilon: float, dim: int = 1) -> int:
    square = epsilon**2
    ratio = horizon / square if square > 0 else math.inf
    if not math.isfinite(ratio) or ratio > 2**53:
        raise ResolutionTooFineError(f"T/epsilon^2 = {ratio:.3e} is too large")
    nearest = round(ratio)
    # absorb rounding noise such as 1/0.1**2 = 99.99999999999999
    if nearest > 0 and abs(ratio - nearest) <= 1e-12 * nearest:
        ratio = nearest
    return int(dim) * math.ceil(ratio)


def num_periods(config: SkeletonConfig) -> int:
    """Deterministic period count ``d * ceil(T / epsilon**2)``."""
    return periods_for(config.horizon, config.epsilon, config.dim)


@dataclass(frozen=True)
class Mark:
    coordinate: int
    sign: int

    def __post_init__(self):
        if self.coordinate < 1:
            raise InvalidMarkError("coordinate must be >= 1")
        if self.sign not in (-1, 1):
            raise InvalidMarkError("sign must be -1 or +1")

    def as_vector(self, dim: int) -> np.ndarray:
        if self.coordinate > dim:
            raise InvalidMarkError(f"coordinate {self.coordinate} exceeds dim {dim}")
        vec = np.zeros(dim)
        vec[self.coordinate - 1] = self.sign
        return vec


def aleph(vector) -> tuple[int, int]:
    """Map a mark vector with one nonzero entry ``+-1`` to ``(coordinate, sign)``."""
    vec = np.asarray(vector, dtype=float).ravel()
    nz = np.flatnonzero(vec)
    if nz.size != 1 or abs(vec[nz[0]]) != 1.0:
        raise InvalidMarkError(f"not a valid mark vector: {vec.tolist()}")
    return int(nz[0]) + 1, int(vec[nz[0]])


@dataclass(frozen=True)
class SkeletonIncrement:
    dt: float
    mark: Mark

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("increment dt must be positive")


@dataclass(frozen=True)
class SkeletonPath:
    """One skeleton realization stored column-wise."""

    dts: np.ndarray
    coords: np.ndarray
    signs: np.ndarray
    epsilon: float
    dim: int = 1

    @property
    def epochs(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.dts)])

    @property
    def increments(self) -> list[SkeletonIncrement]:
        return [SkeletonIncrement(float(s), Mark(int(c), int(x)))
                for s, c, x in zip(self.dts, self.coords, self.signs)]

    def __len__(self) -> int:
        return len(self.dts)

    @classmethod
    def from_increments(cls, increments, epsilon: float, dim: int = 1) -> "SkeletonPath":
        dts = np.array([inc.dt for inc in increments], dtype=float)
        coords = np.array([inc.mark.coordinate for inc in increments], dtype=np.int64)
        signs = np.array([inc.mark.sign for inc in increments], dtype=np.int64)
        return cls(dts, coords, signs, epsilon, dim)


@dataclass
class SkeletonBatch:
    """Many paths as ``(n_paths, periods)`` arrays."""

    dts: np.ndarray
    coords: np.ndarray
    signs: np.ndarray
    epsilon: float
    dim: int = 1
    ties: int = 0

    @property
    def n_paths(self) -> int:
        return self.dts.shape[0]

    @property
    def epochs(self) -> np.ndarray:
        out = np.zeros((self.dts.shape[0], self.dts.shape[1] + 1))
        np.cumsum(self.dts, axis=1, out=out[:, 1:])
        return out

    def path(self, i: int) -> SkeletonPath:
        return SkeletonPath(self.dts[i].copy(), self.coords[i].copy(),
                            self.signs[i].copy(), self.epsilon, self.dim)


def _simulate_block(config: SkeletonConfig, n: int, rng: np.random.Generator,
                    dist: ExitTimeDistribution):
    d, e = config.dim, num_periods(config)
    uniforms = uniform_open(rng, (n, d, e))
    raw_signs = rng.integers(0, 2, size=(n, d, e), dtype=np.int8) * 2 - 1
    gaps = dist.unit_quantile(uniforms) * dist.scale
    if d == 1:
        return gaps[:, 0, :], np.ones((n, e), dtype=np.int8), raw_signs[:, 0, :], 0
    epochs = np.cumsum(gaps, axis=2).reshape(n, d * e)
    order = np.argsort(epochs, axis=1, kind="stable")[:, :e]
    merged = np.take_along_axis(epochs, order, axis=1)
    ties = int(np.count_nonzero(np.diff(merged, axis=1) == 0))
    dts = np.diff(merged, axis=1, prepend=0.0)
    coords = (order // e + 1).astype(np.int8)
    signs = np.take_along_axis(raw_signs.reshape(n, d * e), order, axis=1)
    return dts, coords, signs, ties


def sample_path(config: SkeletonConfig, rng: np.random.Generator) -> SkeletonPath:
    """One path of ``num_periods(config)`` increments drawn from ``rng``."""
    dts, coords, signs, _ = _simulate_block(config, 1, rng, config.distribution)
    return SkeletonPath(dts[0], coords[0].astype(np.int64), signs[0].astype(np.int64),
                        config.epsilon, config.dim)


def sample_batch(config: SkeletonConfig, n_paths: int, *, tag: str = "paths",
                 workers: int = 1, block: int = BLOCK_SIZE) -> SkeletonBatch:
    """Simulate ``n_paths`` paths in fixed blocks with per-block substreams.

    The block layout depends only on ``n_paths`` and ``block``, so the output
    is identical for any ``workers`` count.
    """
    if n_paths < 1:
        raise DomainError("n_paths must be positive")
    dist = config.distribution
    ranges = block_ranges(n_paths, block)

    def work(item):
        b, start, stop = item
        return _simulate_block(config, stop - start, substream(config.seed, tag, b), dist)

    if workers > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, ranges))
    else:
        parts = [work(r) for r in ranges]
    return SkeletonBatch(
        dts=np.concatenate([p[0] for p in parts]),
        coords=np.concatenate([p[1] for p in parts]),
        signs=np.concatenate([p[2] for p in parts]),
        epsilon=config.epsilon,
        dim=config.dim,
        ties=sum(p[3] for p in parts),
    )


def step_process(path: SkeletonPath, config: SkeletonConfig, t: float) -> np.ndarray:
    """Value of the d-dimensional step process at time ``t`` in ``[0, T]``."""
    if not 0.0 <= t <= config.horizon:
        raise DomainError(f"t={t} outside [0, {config.horizon}]")
    seen = path.epochs[1:] <= t
    out = np.zeros(config.dim)
    np.add.at(out, np.asarray(path.coords)[seen] - 1, np.asarray(path.signs)[seen] * config.epsilon)
    return out
