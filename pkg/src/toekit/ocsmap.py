"""Rounding a fractional topology onto the OCS planes.

Three methods share one skeleton: iterate over OCS planes, solve a per-plane
integer assignment via min-cost circulation, and track the best state seen by
the goodness count Psi (number of pod pairs whose aggregate link count lands
inside its floor/ceiling window).

* greedy: one pass, max-weight matching per plane on the residual demand
  (the classic baseline).
* bpm: barrier penalty. The soft windows move into a quadratic penalty that
  is linearized around the current state; the per-plane cost coefficient is
  2 * (current aggregate) - (floor + ceiling), and each plane re-solves
  inside a +/-1 trust region per cell.
* ldm: Lagrangian dual. Each soft window gets a pair of multipliers updated
  by a projected subgradient step (harmonic step 1/sweep) right after every
  plane solve; the primal utility -(x - h)^2 rewards using the physical
  fibers available, so link formation is maximized.

Hard port constraints are never relaxed; every result passes
``validate_logical``. Self-pairs (i, i) are excluded structurally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circulation import AssignmentProblem, solve_assignment
from .core import LogicalTopology, PhysicalTopology, check_fractional
from .errors import CapError
from .fractopo import throughput_over_capacity

__all__ = [
    "RoundingResult",
    "SoftConstraintSet",
    "bpm_round",
    "goodness",
    "greedy_round",
    "ilp_oracle_round",
    "ldm_round",
    "optimality_loss",
    "violation_count",
    "violation_ratio",
]


@dataclass(frozen=True)
class SoftConstraintSet:
    """Per-pair window [floor(d*), ceil(d*)] the aggregate should land in.

    Integral entries give a width-0 window (floor == ceil): the aggregate is
    pinned exactly, but still as a soft constraint.
    """

    floor: np.ndarray
    ceil: np.ndarray

    @staticmethod
    def from_fractional(d_star: np.ndarray, tol: float = 1e-9) -> "SoftConstraintSet":
        d = np.asarray(d_star, dtype=float)
        nearest = np.rint(d)
        integral = np.abs(d - nearest) <= tol
        floor = np.where(integral, nearest, np.floor(d)).astype(np.int64)
        ceil = np.where(integral, nearest, np.floor(d) + 1).astype(np.int64)
        np.fill_diagonal(floor, 0)
        np.fill_diagonal(ceil, 0)
        return SoftConstraintSet(floor, ceil)


@dataclass(frozen=True)
class RoundingResult:
    topo: LogicalTopology
    violations: int
    violation_ratio: float
    goodness: int
    iterations_used: int
    method: str
    psi_history: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "violations": self.violations,
            "violation_ratio": self.violation_ratio,
            "goodness": self.goodness,
            "iterations_used": self.iterations_used,
        }


def _offdiag_mask(n: int) -> np.ndarray:
    return ~np.eye(n, dtype=bool)


def violation_count(aggregate: np.ndarray, soft: SoftConstraintSet) -> int:
    off = _offdiag_mask(aggregate.shape[0])
    bad = (aggregate < soft.floor) | (aggregate > soft.ceil)
    return int(bad[off].sum())


def goodness(aggregate: np.ndarray, soft: SoftConstraintSet) -> int:
    n = aggregate.shape[0]
    return n * (n - 1) - violation_count(aggregate, soft)


def violation_ratio(topo: LogicalTopology | np.ndarray, soft: SoftConstraintSet) -> float:
    agg = topo.aggregate if isinstance(topo, LogicalTopology) else np.asarray(topo)
    n = agg.shape[0]
    return violation_count(agg, soft) / (n * (n - 1))


def _cell_caps(phys: PhysicalTopology, k: int) -> np.ndarray:
    caps = np.minimum.outer(phys.h_eg[k], phys.h_ig[k])
    np.fill_diagonal(caps, 0)
    return caps


def _result(x, soft, method, iters, history) -> RoundingResult:
    topo = LogicalTopology(x)
    v = violation_count(topo.aggregate, soft)
    n = topo.n
    return RoundingResult(
        topo=topo,
        violations=v,
        violation_ratio=v / (n * (n - 1)),
        goodness=n * (n - 1) - v,
        iterations_used=iters,
        method=method,
        psi_history=tuple(history),
    )


def greedy_round(d_star: np.ndarray, phys: PhysicalTopology) -> RoundingResult:
    """Helios-style baseline: per plane, a max-weight assignment on the
    residual fractional demand, weights equal to the residual itself."""
    d = check_fractional(d_star, phys)
    soft = SoftConstraintSet.from_fractional(d)
    n, y = phys.n, phys.ocs_count
    x = np.zeros((y, n, n), dtype=np.int64)
    placed = np.zeros((n, n))
    history = []
    for k in range(y):
        residual = np.maximum(d - placed, 0.0)
        upper = np.maximum(np.ceil(residual - 1e-9), 0.0).astype(np.int64)
        upper = np.minimum(upper, _cell_caps(phys, k))
        prob = AssignmentProblem(
            costs=-residual,
            col_caps=phys.h_ig[k],
            row_caps=phys.h_eg[k],
            lower=np.zeros((n, n), np.int64),
            upper=upper,
        )
        x[k] = solve_assignment(prob, epsilon=0.0)
        placed += x[k]
        history.append(goodness(x.sum(axis=0), soft))
    return _result(x, soft, "greedy", 1, history)


def _plane_solve(cost, phys, k, x_hat_k, hold=None):
    """Shared per-plane subproblem: min cost inside the +/-1 trust region.

    Solved without the volume tie-break (epsilon = 0), and cells in ``hold``
    stay put. Both guards exist for the same reason: a zero linearized cost
    marks a pair sitting exactly inside a width-0 window, where the true
    penalty is V-shaped and any move away is a loss the first-order cost
    cannot see.
    """
    lower = np.maximum(x_hat_k - 1, 0)
    upper = np.minimum(x_hat_k + 1, _cell_caps(phys, k))
    np.fill_diagonal(lower, 0)
    if hold is not None:
        lower = np.where(hold, x_hat_k, lower)
        upper = np.where(hold, x_hat_k, upper)
    prob = AssignmentProblem(
        costs=cost,
        col_caps=phys.h_ig[k],
        row_caps=phys.h_eg[k],
        lower=lower.astype(np.int64),
        upper=upper.astype(np.int64),
    )
    return solve_assignment(prob, epsilon=0.0)


def bpm_round(
    d_star: np.ndarray,
    phys: PhysicalTopology,
    iters: int = 50,
    patience: int | None = None,
) -> RoundingResult:
    """Barrier penalty rounding; ``iters`` full sweeps over the planes.

    Stops early once every soft window is met, or after ``patience`` sweeps
    without the tracked best improving.
    """
    if iters < 1:
        raise ValueError("need at least one sweep")
    d = check_fractional(d_star, phys)
    soft = SoftConstraintSet.from_fractional(d)
    n, y = phys.n, phys.ocs_count
    window_sum = (soft.floor + soft.ceil).astype(float)
    perfect = n * (n - 1)

    x_hat = np.zeros((y, n, n), dtype=np.int64)
    agg = np.zeros((n, n), dtype=np.int64)
    best = x_hat.copy()
    best_psi = goodness(agg, soft)
    history = [best_psi]
    sweeps = 0
    stale = 0
    for sweep in range(iters):
        improved = False
        for k in range(y):
            cost = 2.0 * agg - window_sum
            np.fill_diagonal(cost, 0.0)
            # zero cost <=> the pair sits inside a width-0 window right now
            new_k = _plane_solve(cost, phys, k, x_hat[k], hold=(cost == 0.0))
            agg += new_k - x_hat[k]
            x_hat[k] = new_k
            psi = goodness(agg, soft)
            if psi > best_psi:
                best_psi = psi
                best = x_hat.copy()
                improved = True
            history.append(best_psi)
        sweeps = sweep + 1
        if best_psi == perfect:
            break
        stale = 0 if improved else stale + 1
        if patience is not None and stale >= patience:
            break
    return _result(best, soft, "bpm", sweeps, history)


def ldm_round(
    d_star: np.ndarray,
    phys: PhysicalTopology,
    iters: int = 50,
    patience: int | None = None,
) -> RoundingResult:
    """Lagrangian dual rounding; duals move right after every plane solve.

    Updating inside the plane loop breaks the symmetry between identically
    striped planes (they would otherwise all pick the same configuration in
    a sweep). Multipliers stay nonnegative by projection.
    """
    if iters < 1:
        raise ValueError("need at least one sweep")
    d = check_fractional(d_star, phys)
    soft = SoftConstraintSet.from_fractional(d)
    n, y = phys.n, phys.ocs_count
    perfect = n * (n - 1)
    floor = soft.floor.astype(float)
    ceil = soft.ceil.astype(float)

    x_hat = np.zeros((y, n, n), dtype=np.int64)
    agg = np.zeros((n, n), dtype=np.int64)
    p_plus = np.zeros((n, n))
    p_minus = np.zeros((n, n))
    best = x_hat.copy()
    best_psi = goodness(agg, soft)
    history = [best_psi]
    sweeps = 0
    stale = 0
    for sweep in range(iters):
        delta = 1.0 / (sweep + 1)
        improved = False
        for k in range(y):
            h_k = np.minimum.outer(phys.h_eg[k], phys.h_ig[k]).astype(float)
            # maximize (dU/dx at x_hat + (p- - p+)) x  ==  min of its negation
            gain = 2.0 * (h_k - x_hat[k]) + (p_minus - p_plus)
            cost = -gain
            np.fill_diagonal(cost, 0.0)
            new_k = _plane_solve(cost, phys, k, x_hat[k])
            agg += new_k - x_hat[k]
            x_hat[k] = new_k
            psi = goodness(agg, soft)
            if psi > best_psi:
                best_psi = psi
                best = x_hat.copy()
                improved = True
            history.append(best_psi)
            p_plus = np.maximum(p_plus - delta * (ceil - agg), 0.0)
            p_minus = np.maximum(p_minus - delta * (agg - floor), 0.0)
        sweeps = sweep + 1
        if best_psi == perfect:
            break
        stale = 0 if improved else stale + 1
        if patience is not None and stale >= patience:
            break
    return _result(best, soft, "ldm", sweeps, history)


def optimality_loss(topo, d_star, tm_set, phys, paths) -> float:
    """Throughput gap 1 - mu_int / mu_frac between the integer topology and
    the fractional one it approximates, with each mu the min over the demand
    set of the fixed-topology throughput."""
    b = phys.link_capacity()
    agg = topo.aggregate if isinstance(topo, LogicalTopology) else np.asarray(topo)
    tm_set = list(tm_set)
    if not tm_set:
        raise ValueError("need at least one demand matrix")
    mu_frac = min(throughput_over_capacity(t, np.asarray(d_star) * b, paths).mu for t in tm_set)
    if mu_frac <= 0.0:
        raise ValueError("fractional throughput is zero; loss undefined")
    mu_int = min(throughput_over_capacity(t, agg * b, paths).mu for t in tm_set)
    return 1.0 - mu_int / mu_frac


def ilp_oracle_round(d_star: np.ndarray, phys: PhysicalTopology) -> RoundingResult:
    """Exact minimum-violation rounding on tiny instances (test oracle).

    Branch-and-bound over the full integer program with one indicator per
    pod pair; refuses anything beyond n <= 5, 2 planes, or per-plane port
    counts above 4.
    """
    from scipy.optimize import Bounds, LinearConstraint, milp
    import scipy.sparse as sp

    d = check_fractional(d_star, phys)
    n, y = phys.n, phys.ocs_count
    if n > 5 or y > 2 or max(phys.h_eg.max(), phys.h_ig.max()) > 4:
        raise CapError("ILP oracle capped at n <= 5, y <= 2, port counts <= 4")
    soft = SoftConstraintSet.from_fractional(d)
    off = np.flatnonzero(_offdiag_mask(n).ravel())
    n_pairs = len(off)
    nx = y * n * n
    big_m = float(y * 4 + int(soft.ceil.max()) + 1)

    rows, cols, vals = [], [], []
    lb, ub = [], []
    r = 0
    for k in range(y):
        for i in range(n):
            for j in range(n):
                rows.append(r)
                cols.append(k * n * n + i * n + j)
                vals.append(1.0)
            lb.append(-np.inf)
            ub.append(float(phys.h_eg[k, i]))
            r += 1
        for j in range(n):
            for i in range(n):
                rows.append(r)
                cols.append(k * n * n + i * n + j)
                vals.append(1.0)
            lb.append(-np.inf)
            ub.append(float(phys.h_ig[k, j]))
            r += 1
    for pi, cell in enumerate(off):
        for k in range(y):
            rows.append(r)
            cols.append(k * n * n + cell)
            vals.append(1.0)
        rows.append(r)
        cols.append(nx + pi)
        vals.append(-big_m)
        lb.append(-np.inf)
        ub.append(float(soft.ceil.ravel()[cell]))
        r += 1
        for k in range(y):
            rows.append(r)
            cols.append(k * n * n + cell)
            vals.append(1.0)
        rows.append(r)
        cols.append(nx + pi)
        vals.append(big_m)
        lb.append(float(soft.floor.ravel()[cell]))
        ub.append(np.inf)
        r += 1
    a = sp.csr_matrix((vals, (rows, cols)), shape=(r, nx + n_pairs))

    hi = np.empty(nx + n_pairs)
    for k in range(y):
        caps = _cell_caps(phys, k).ravel().astype(float)
        hi[k * n * n : (k + 1) * n * n] = caps
    hi[nx:] = 1.0
    c = np.concatenate([np.zeros(nx), np.ones(n_pairs)])
    res = milp(
        c,
        constraints=LinearConstraint(a, np.array(lb), np.array(ub)),
        bounds=Bounds(np.zeros(nx + n_pairs), hi),
        integrality=np.ones(nx + n_pairs),
    )
    if not res.success:
        raise RuntimeError(f"ILP oracle failed: {res.message}")
    x = np.rint(res.x[:nx]).astype(np.int64).reshape(y, n, n)
    return _result(x, soft, "ilp", 1, [goodness(x.sum(axis=0), soft)])
