"""Exact dynamic programming on quadrature trees for small one-dimensional instances.

The continuation value at a history of ``j`` steps with clock ``t_j < T`` is

    U_j = sum over signs of 1/2 * int_0^{T - t_j} f(s) V_{j+1}(history, s, sign) ds
          + S(T - t_j) * Z_j,

where the last term collects every gap that overshoots the horizon (payoffs
are frozen there, so ``V_{j+1} = Z_j``). Histories with ``t_j >= T`` are
frozen: ``U_j = V_j = Z_j``. The gap integral uses Gauss-Legendre nodes in
``u = s / (s + eps**2)``. Where ``max(Z_{j+1}, U_{j+1})`` switches branch
between two nodes, the interval is split at the switch point and each piece
gets its own Gauss rule.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError, InstanceTooLargeError
from ..quadrature import barycentric_eval, barycentric_weights, gauss_legendre
from ..skeleton import ExitTimeDistribution, SkeletonConfig, num_periods
from ..structures import Structure

MAX_STEPS = 6
MAX_LEAVES = 200_000_000
LEAF_CHUNK = 2_000_000
_FLAT = 1e-12


@dataclass
class OracleLevel:
    """Tree nodes at one step: their histories and ``Z``, ``U``, ``V`` values."""

    step: int
    dts: np.ndarray
    signs: np.ndarray
    payoff: np.ndarray
    continuation: np.ndarray
    value: np.ndarray


@dataclass
class OracleResult:
    value: float
    continuation0: float
    payoff0: float
    levels: list[OracleLevel]
    periods: int
    nodes: int
    terminal_nodes: int
    terminal_gap: float
    refined_rows: int
    engine: "_Engine" = field(repr=False, default=None)

    def continuation(self, dts, signs) -> np.ndarray:
        """``U_j`` on arbitrary histories of equal length ``j`` (signs may be real)."""
        return self.engine.query(dts, signs)[1]

    def value_function(self, dts, signs) -> np.ndarray:
        z, u = self.engine.query(dts, signs)
        return np.maximum(z, u)

    def rule(self):
        """Continuation evaluators usable with ``lower_bound_estimate``."""
        out = []
        for j in range(self.periods):
            if j == 0:
                out.append(lambda dts, coords, signs, ev, j, u=self.continuation0: np.full(dts.shape[0], u))
            else:
                out.append(lambda dts, coords, signs, ev, j: self.continuation(dts, signs))
        return out


def _match_mass(dens, w, mass):
    """Rescale each row of ``dens`` so ``sum(dens * w)`` equals ``mass``."""
    raw = dens @ w
    factor = np.divide(mass, raw, out=np.ones_like(raw), where=raw > 0)
    return dens * factor[:, None]


class _Engine:
    def __init__(self, structure: Structure, config: SkeletonConfig, nodes: int,
                 leaf_chunk: int = LEAF_CHUNK):
        self.structure = structure
        self.config = config
        self.e = num_periods(config)
        self.dist = ExitTimeDistribution(config.epsilon)
        self.q = nodes
        self.x, self.w = gauss_legendre(nodes)
        self.bw = barycentric_weights(nodes)
        self.leaf_chunk = leaf_chunk
        self.recording = False
        self.records: dict[int, list] = {}
        self.terminal_nodes = 0
        self.terminal_gap = 0.0
        self.refined_rows = 0

    # payoffs -------------------------------------------------------------------
    def payoff_last(self, dts: np.ndarray, signs: np.ndarray) -> np.ndarray:
        ev = self.structure.evaluate(dts, None, signs, self.config.epsilon, self.config.horizon)
        return ev.payoffs[:, -1]

    def _child_payoffs(self, dts, signs, gaps):
        """Payoffs after appending each gap in ``gaps`` (rows x k) with each sign."""
        ma, j = dts.shape
        k = gaps.shape[1]
        cd = np.empty((ma, 2, k, j + 1))
        cs = np.empty((ma, 2, k, j + 1))
        cd[..., :j] = dts[:, None, None, :]
        cs[..., :j] = signs[:, None, None, :]
        cd[..., j] = gaps[:, None, :]
        cs[:, 0, :, j] = -1.0
        cs[:, 1, :, j] = 1.0
        cd = cd.reshape(-1, j + 1)
        cs = cs.reshape(-1, j + 1)
        return cd, cs, self.payoff_last(cd, cs).reshape(ma, 2, k)

    # recursion -----------------------------------------------------------------
    def continuation(self, dts, signs, zj) -> np.ndarray:
        ma, j = dts.shape
        r = self.config.horizon - dts.sum(axis=1)
        u = zj.astype(float).copy()
        act = np.flatnonzero(r > 0)
        if act.size:
            per_row = (2 * self.q) ** (self.e - j)
            chunk = max(1, self.leaf_chunk // per_row)
            for start in range(0, act.size, chunk):
                rows = act[start:start + chunk]
                u[rows] = self._rows(dts[rows], signs[rows], zj[rows], r[rows])
        return u

    def _gap_map(self, xnodes, rho):
        """Map reference nodes in [-1, 1] to gaps and density weights per row.

        Weights are rescaled so the rule integrates the density exactly.
        """
        umax = rho / (1.0 + rho)
        u = umax[:, None] * (xnodes[None, :] + 1.0) * 0.5
        sig = u / (1.0 - u)
        dens = self.dist.unit_density(sig) / (1.0 - u) ** 2 * (umax[:, None] * 0.5)
        return sig * self.dist.scale, _match_mass(dens, self.w, self.dist.unit_cdf(rho))

    def _rows(self, dts, signs, zj, r):
        ma, j = dts.shape
        rho = r / self.dist.scale
        gaps, dens = self._gap_map(self.x, rho)
        cd, cs, zc = self._child_payoffs(dts, signs, gaps)
        if j + 1 == self.e:
            vc = zc
            if self.recording:
                self.terminal_nodes += vc.size
                self.terminal_gap = max(self.terminal_gap, float(np.max(np.abs(vc - zc))))
            uc = None
        else:
            uc = self.continuation(cd, cs, zc.ravel()).reshape(zc.shape)
            vc = np.maximum(zc, uc)
            if self.recording:
                self.records.setdefault(j + 1, []).append(
                    (cd, cs, zc.ravel(), uc.ravel(), vc.ravel()))
        # per (row, sign) integrals of f * V over the gap interval
        part = (vc * (self.w[None, None, :] * dens[:, None, :])).sum(axis=2)
        if uc is not None:
            self._refine(dts, signs, rho, zc, uc, part)
        return 0.5 * part.sum(axis=1) + self.dist.unit_survival(rho) * zj

    def _refine(self, dts, signs, rho, zc, uc, part):
        """Redo integrals where ``max(Z, U)`` switches branch between two nodes.

        The switch point is found by bisection on exact ``Z`` minus a
        barycentric interpolant of ``U`` (accurate away from the far end of
        the interval, where ``U`` flattens onto ``Z`` and no sign change is
        ever flagged). Each piece between switch points then gets its own
        Gauss rule with exactly evaluated children. Kinks of ``Z`` itself in
        the gap variable are not located.
        """
        d = zc - uc
        pos = d > _FLAT
        neg = d < -_FLAT
        cross = (pos[..., :-1] & neg[..., 1:]) | (neg[..., :-1] & pos[..., 1:])
        rows_sign = np.argwhere(cross.any(axis=2))
        if rows_sign.size == 0:
            return
        self.refined_rows += len(rows_sign)
        a_idx, s_idx = rows_sign[:, 0], rows_sign[:, 1]
        sgn = np.where(s_idx == 0, -1.0, 1.0)
        pk, pq = np.nonzero(cross[a_idx, s_idx])
        blo = self.x[pq].copy()
        bhi = self.x[pq + 1].copy()
        dlo = d[a_idx[pk], s_idx[pk], pq]
        for _ in range(52):
            mid = 0.5 * (blo + bhi)
            dm = self._diff_at(dts[a_idx[pk]], signs[a_idx[pk]], rho[a_idx[pk]], sgn[pk],
                               uc[a_idx[pk], s_idx[pk]], mid)
            same = np.sign(dm) == np.sign(dlo)
            blo = np.where(same, mid, blo)
            bhi = np.where(same, bhi, mid)
        roots = 0.5 * (blo + bhi)
        # pieces [-1, c_1], [c_1, c_2], ..., [c_m, 1] per flagged (row, sign)
        piece_lo, piece_hi, owner = [], [], []
        for i in range(len(a_idx)):
            cuts = np.sort(roots[pk == i])
            bounds = np.concatenate([[-1.0], cuts, [1.0]])
            piece_lo.append(bounds[:-1])
            piece_hi.append(bounds[1:])
            owner.append(np.full(len(cuts) + 1, i))
        piece_lo = np.concatenate(piece_lo)
        piece_hi = np.concatenate(piece_hi)
        owner = np.concatenate(owner)
        half = 0.5 * (piece_hi - piece_lo)
        xs = 0.5 * (piece_lo + piece_hi)[:, None] + half[:, None] * self.x[None, :]
        gaps, dens = self._gap_map_rows(xs, rho[a_idx[owner]])
        s_lo = self._unit_gap(piece_lo, rho[a_idx[owner]])
        s_hi = self._unit_gap(piece_hi, rho[a_idx[owner]])
        dens = _match_mass(dens * half[:, None], self.w,
                           self.dist.unit_cdf(s_hi) - self.dist.unit_cdf(s_lo)) / half[:, None]
        j = dts.shape[1]
        n_p, q = xs.shape
        cd = np.empty((n_p, q, j + 1))
        cs = np.empty((n_p, q, j + 1))
        cd[..., :j] = dts[a_idx[owner]][:, None, :]
        cs[..., :j] = signs[a_idx[owner]][:, None, :]
        cd[..., j] = gaps
        cs[..., j] = sgn[owner][:, None]
        cd = cd.reshape(-1, j + 1)
        cs = cs.reshape(-1, j + 1)
        zp = self.payoff_last(cd, cs)
        up = self.continuation(cd, cs, zp)
        vp = np.maximum(zp, up)
        if self.recording:
            self.records.setdefault(j + 1, []).append((cd, cs, zp, up, vp))
        vals = (vp.reshape(n_p, q) * dens * self.w[None, :] * half[:, None]).sum(axis=1)
        part[a_idx, s_idx] = np.bincount(owner, weights=vals, minlength=len(a_idx))

    @staticmethod
    def _unit_gap(xs, rho):
        u = rho / (1.0 + rho) * (xs + 1.0) * 0.5
        return u / (1.0 - u)

    def _gap_map_rows(self, xs, rho):
        umax = rho / (1.0 + rho)
        u = umax[:, None] * (xs + 1.0) * 0.5
        sig = u / (1.0 - u)
        dens = self.dist.unit_density(sig) / (1.0 - u) ** 2 * (umax[:, None] * 0.5)
        return sig * self.dist.scale, dens

    def _payoff_with(self, dts, signs, gaps, sign):
        k, j = dts.shape
        p = gaps.shape[1]
        cd = np.empty((k, p, j + 1))
        cs = np.empty((k, p, j + 1))
        cd[..., :j] = dts[:, None, :]
        cs[..., :j] = signs[:, None, :]
        cd[..., j] = gaps
        cs[..., j] = sign[:, None]
        return self.payoff_last(cd.reshape(-1, j + 1), cs.reshape(-1, j + 1)).reshape(k, p)

    def _diff_at(self, dts, signs, rho, sign, uvals, xs):
        gaps, _ = self._gap_map_rows(xs[:, None], rho)
        z = self._payoff_with(dts, signs, gaps, sign)[:, 0]
        u = barycentric_eval(self.x, self.bw, uvals, xs[:, None])[:, 0]
        return z - u

    # entry points --------------------------------------------------------------
    def query(self, dts, signs):
        dts = np.atleast_2d(np.asarray(dts, dtype=float))
        signs = np.atleast_2d(np.asarray(signs, dtype=float))
        if dts.shape != signs.shape:
            raise DomainError("dts and signs must have the same shape")
        if dts.shape[1] >= self.e:
            raise DomainError("continuation is defined for steps below the last one")
        z = self.payoff_last(dts, signs)
        return z, self.continuation(dts, signs, z)


def oracle_dp(structure: Structure, config: SkeletonConfig, nodes: int = 32, *,
              max_steps: int = MAX_STEPS, max_leaves: int = MAX_LEAVES,
              record: bool = True) -> OracleResult:
    """Exact value by tensorized Gauss quadrature over gaps and both signs."""
    if config.dim != 1:
        raise DomainError("the oracle handles one-dimensional skeletons only")
    if nodes < 2:
        raise DomainError("need at least two quadrature nodes")
    e = num_periods(config)
    leaves = (2 * nodes) ** e
    if e > max_steps or leaves > max_leaves:
        raise InstanceTooLargeError(
            f"{e} periods with {nodes} nodes means {leaves:.3g} leaves "
            f"(limits: {max_steps} periods, {max_leaves:.3g} leaves)")
    eng = _Engine(structure, config, nodes)
    eng.recording = record
    root_d = np.zeros((1, 0))
    z0 = eng.payoff_last(root_d, root_d)
    u0 = eng.continuation(root_d, root_d, z0)
    eng.recording = False
    levels = [OracleLevel(0, root_d, root_d, z0, u0, np.maximum(z0, u0))]
    for j in range(1, e):
        chunks = eng.records.get(j, [])
        if chunks:
            levels.append(OracleLevel(
                j,
                np.concatenate([c[0] for c in chunks]), np.concatenate([c[1] for c in chunks]),
                np.concatenate([c[2] for c in chunks]), np.concatenate([c[3] for c in chunks]),
                np.concatenate([c[4] for c in chunks])))
        else:
            empty = np.zeros((0, j))
            levels.append(OracleLevel(j, empty, empty, np.zeros(0), np.zeros(0), np.zeros(0)))
    eng.records = {}
    return OracleResult(float(max(z0[0], u0[0])), float(u0[0]), float(z0[0]), levels, e, nodes,
                        eng.terminal_nodes, eng.terminal_gap, eng.refined_rows, eng)


def variational_check(oracle: OracleResult) -> float:
    """Largest violation of ``V = max(Z, U)``, ``U <= V`` and ``Z <= V`` over all nodes."""
    worst = float(oracle.terminal_gap)
    for lvl in oracle.levels:
        if lvl.value.size == 0:
            continue
        z, u, v = lvl.payoff, lvl.continuation, lvl.value
        worst = max(worst,
                    float(np.max(np.abs(v - np.maximum(z, u)))),
                    float(np.max(np.maximum(u - v, 0.0))),
                    float(np.max(np.maximum(z - v, 0.0))))
    return worst


def classify_regions(oracle: OracleResult, tol: float = 1e-10) -> list[np.ndarray]:
    """Per step, ``True`` where the node lies in the stopping region (``V == Z``)."""
    return [lvl.value - lvl.payoff <= tol for lvl in oracle.levels]
