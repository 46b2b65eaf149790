"""Optimal fractional topologies per demand matrix, and their combination.

For one demand matrix the pipeline is: maximize the throughput scale factor
(LP), then among throughput-optimal solutions minimize the squared usage of
2-hop paths (QP) so direct links carry as much as possible. Multiple
per-matrix topologies are combined by maximizing the uniform fraction of
each one the combined topology dominates.

The degree-budget variables d_ij are eliminated from the LP/QP: with all
other variables fixed, the cheapest feasible d is exactly (link flow) /
(link capacity), so budget constraints become row/column aggregates of path
flows. The returned topology is recovered the same way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import PathSet, PhysicalTopology, check_fractional, check_traffic_matrix
from .errors import CapError, InfeasibleError
from .solvers import solve_lp, solve_qp

__all__ = [
    "CombinedTopology",
    "ThroughputSolution",
    "combine",
    "joint_lp_oracle",
    "max_throughput_lp",
    "min_nonshortest_qp",
    "throughput_over_capacity",
]


@dataclass(frozen=True)
class ThroughputSolution:
    """Optimal scale factor, a topology attaining it, and the path flows."""

    mu: float
    topology: np.ndarray  # (n, n) fractional link counts
    path_flows: np.ndarray  # (P,) Gbps


@dataclass(frozen=True)
class CombinedTopology:
    alpha: float
    d_star: np.ndarray


def _offdiag_ids(n: int) -> np.ndarray:
    ids = np.arange(n * n)
    return ids[ids // n != ids % n]


def _path_matrices(paths: PathSet, b: np.ndarray):
    """Sparse operators reused by every formulation here, cached on the path set.

    Returns (a_pair, a_link, a_deg) where a_pair sums path flows per ordered
    pair, a_link sums them per off-diagonal link, and a_deg aggregates link
    flows divided by capacity into per-pod egress/ingress budget rows.
    """
    cache = paths.__dict__.setdefault("_matrix_cache", {})
    key = b.tobytes()
    if key not in cache:
        n = paths.n
        off = _offdiag_ids(n)
        npaths = len(paths)
        cols = np.arange(npaths)
        pair_rows = np.searchsorted(off, paths.pair_id)
        a_pair = sp.csr_matrix(
            (np.ones(npaths), (pair_rows, cols)), shape=(len(off), npaths)
        )
        a_link = paths.link_incidence()[off]
        b_off = b.ravel()[off]
        src = off // n
        dst = off % n
        inv_b = 1.0 / b_off
        rows_eg = sp.csr_matrix(
            (inv_b, (src, np.arange(len(off)))), shape=(n, len(off))
        )
        rows_ig = sp.csr_matrix(
            (inv_b, (dst, np.arange(len(off)))), shape=(n, len(off))
        )
        a_deg = sp.vstack([rows_eg @ a_link, rows_ig @ a_link], format="csr")
        cache[key] = (a_pair, a_link, a_deg)
    return cache[key]


def _recover_topology(paths: PathSet, b: np.ndarray, flows: np.ndarray) -> np.ndarray:
    n = paths.n
    link_flow = np.asarray(
        paths.link_incidence() @ np.maximum(flows, 0.0)
    ).reshape(n, n)
    d = np.zeros((n, n))
    off = ~np.eye(n, dtype=bool)
    d[off] = link_flow[off] / b[off]
    return d


def max_throughput_lp(
    tm: np.ndarray, phys: PhysicalTopology, paths: PathSet
) -> ThroughputSolution:
    """Largest mu such that mu*T routes on some fractional topology."""
    tm = check_traffic_matrix(tm)
    n = phys.n
    if tm.shape != (n, n) or paths.n != n:
        raise ValueError("demand/path dimensions do not match the fabric")
    if tm.sum() <= 0.0:
        raise ValueError("demand matrix is zero")
    b = phys.link_capacity()
    a_pair, _, a_deg = _path_matrices(paths, b)
    npaths = len(paths)
    t_off = tm.ravel()[_offdiag_ids(n)]

    a_eq = sp.hstack([a_pair, sp.csc_matrix(-t_off[:, None])], format="csc")
    a_ub = sp.hstack([a_deg, sp.csc_matrix((2 * n, 1))], format="csc")
    b_ub = np.concatenate([phys.r_eg, phys.r_ig]).astype(float)
    c = np.zeros(npaths + 1)
    c[-1] = -1.0
    res = solve_lp(c, a_ub=a_ub, b_ub=b_ub, a_eq=a_eq, b_eq=np.zeros(a_eq.shape[0]))
    flows = res.x[:npaths]
    mu = float(res.x[-1])
    return ThroughputSolution(mu, _recover_topology(paths, b, flows), flows)


def throughput_over_capacity(
    tm: np.ndarray, cap: np.ndarray, paths: PathSet
) -> ThroughputSolution:
    """Throughput of T over a fixed topology given as a link-capacity matrix.

    Returns mu = 0 when some demanded pair has no usable path; the topology
    field echoes cap / b semantics and is left as the capacity matrix itself.
    """
    tm = check_traffic_matrix(tm)
    n = paths.n
    off = _offdiag_ids(n)
    a_pair, a_link, _ = _path_matrices(paths, np.ones((n, n)))
    npaths = len(paths)
    t_off = tm.ravel()[off]
    cap_off = np.asarray(cap, dtype=float).ravel()[off]

    a_eq = sp.hstack([a_pair, sp.csc_matrix(-t_off[:, None])], format="csc")
    a_ub = sp.hstack([a_link, sp.csc_matrix((len(off), 1))], format="csc")
    c = np.zeros(npaths + 1)
    c[-1] = -1.0
    res = solve_lp(c, a_ub=a_ub, b_ub=cap_off, a_eq=a_eq, b_eq=np.zeros(len(off)))
    return ThroughputSolution(float(res.x[-1]), np.asarray(cap, dtype=float), res.x[:npaths])


def min_nonshortest_qp(
    tm: np.ndarray,
    mu_star: float,
    phys: PhysicalTopology,
    paths: PathSet,
) -> np.ndarray:
    """Among topologies routing mu*T, minimize the squared 2-hop path flows.

    The strictly convex objective on indirect paths picks out a unique flow
    split (equalized across interchangeable detours), which stabilizes the
    topology against small input changes. Membership of the non-shortest set
    is structural: every 2-hop path, independent of the final link counts.
    """
    tm = check_traffic_matrix(tm)
    n = phys.n
    b = phys.link_capacity()
    a_pair, _, a_deg = _path_matrices(paths, b)
    npaths = len(paths)
    n_pairs = a_pair.shape[0]
    t_off = tm.ravel()[_offdiag_ids(n)]

    p_diag = np.where(paths.is_direct, 0.0, 2.0)
    a = sp.vstack([a_pair, a_deg, sp.eye(npaths)], format="csc")
    budgets = np.concatenate([phys.r_eg, phys.r_ig]).astype(float)
    for scale in (1.0, 1.0 - 1e-9):
        lb = np.concatenate([scale * mu_star * t_off, np.full(2 * n, -np.inf), np.zeros(npaths)])
        ub = np.concatenate([scale * mu_star * t_off, budgets, np.full(npaths, np.inf)])
        try:
            flows = solve_qp(p_diag, np.zeros(npaths), a, lb, ub)
            return _recover_topology(paths, b, flows)
        except InfeasibleError:
            continue
    raise InfeasibleError(
        f"no topology routes the scaled demand at mu*={mu_star!r} (after retry)"
    )


def combine(fractionals, phys: PhysicalTopology) -> CombinedTopology:
    """Combine per-demand topologies, maximizing the guaranteed fraction alpha.

    Solves max alpha s.t. d*_ij >= alpha * d^tau_ij with d* inside the degree
    budgets. The optimum has the closed form alpha = min(1, budget / need)
    over all pod budgets, with d* = alpha * (entrywise max); routing demand
    tau on d* then achieves at least alpha times its own optimal throughput.
    """
    mats = [check_fractional(d, phys) for d in fractionals]
    if not mats:
        raise ValueError("need at least one fractional topology")
    peak = np.maximum.reduce([np.maximum(d, 0.0) for d in mats])
    np.fill_diagonal(peak, 0.0)
    row_need = peak.sum(axis=1)
    col_need = peak.sum(axis=0)
    with np.errstate(divide="ignore"):
        ratios = np.concatenate(
            [
                np.where(row_need > 0, phys.r_eg / row_need, np.inf),
                np.where(col_need > 0, phys.r_ig / col_need, np.inf),
            ]
        )
    alpha = float(min(1.0, ratios.min()))
    return CombinedTopology(alpha, alpha * peak)


def joint_lp_oracle(tms, phys: PhysicalTopology, paths: PathSet):
    """Exact joint optimum of the one-shot multi-demand LP (small instances).

    Kept as a test oracle: the two-step pipeline's min-throughput over the
    demand set can never exceed this value. Refuses instances above the
    desk-scale cap (n <= 12, m <= 4) where the variable count explodes.
    """
    tms = [check_traffic_matrix(t) for t in tms]
    n, m = phys.n, len(tms)
    if n > 12 or m > 4:
        raise CapError(f"joint LP oracle capped at n <= 12, m <= 4 (got n={n}, m={m})")
    if m == 0:
        raise ValueError("need at least one demand matrix")
    b = phys.link_capacity()
    off = _offdiag_ids(n)
    n_links = len(off)
    a_pair, a_link, _ = _path_matrices(paths, b)
    npaths = len(paths)
    b_off = b.ravel()[off]
    src, dst = off // n, off % n

    # variables: [flows tau=1..m | d (off-diagonal) | mu]
    n_vars = m * npaths + n_links + 1
    eq_blocks = []
    for tau, tm in enumerate(tms):
        t_off = tm.ravel()[off]
        block = sp.hstack(
            [
                sp.csr_matrix((a_pair.shape[0], tau * npaths)),
                a_pair,
                sp.csr_matrix((a_pair.shape[0], (m - 1 - tau) * npaths + n_links)),
                sp.csr_matrix(-t_off[:, None]),
            ]
        )
        eq_blocks.append(block)
    a_eq = sp.vstack(eq_blocks, format="csc")

    ub_blocks = []
    cap_coupling = sp.csr_matrix(
        (-b_off, (np.arange(n_links), np.arange(n_links))), shape=(n_links, n_links)
    )
    for tau in range(m):
        block = sp.hstack(
            [
                sp.csr_matrix((n_links, tau * npaths)),
                a_link,
                sp.csr_matrix((n_links, (m - 1 - tau) * npaths)),
                cap_coupling,
                sp.csr_matrix((n_links, 1)),
            ]
        )
        ub_blocks.append(block)
    deg_rows = sp.csr_matrix(
        (
            np.ones(2 * n_links),
            (
                np.concatenate([src, n + dst]),
                np.concatenate([np.arange(n_links), np.arange(n_links)]),
            ),
        ),
        shape=(2 * n, n_links),
    )
    ub_blocks.append(
        sp.hstack([sp.csr_matrix((2 * n, m * npaths)), deg_rows, sp.csr_matrix((2 * n, 1))])
    )
    a_ub = sp.vstack(ub_blocks, format="csc")
    b_ub = np.concatenate([np.zeros(m * n_links), phys.r_eg, phys.r_ig]).astype(float)

    c = np.zeros(n_vars)
    c[-1] = -1.0
    res = solve_lp(c, a_ub=a_ub, b_ub=b_ub, a_eq=a_eq, b_eq=np.zeros(a_eq.shape[0]))
    d = np.zeros((n, n))
    d.ravel()[off] = res.x[m * npaths : m * npaths + n_links]
    return float(res.x[-1]), d
