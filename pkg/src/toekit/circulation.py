"""Box-constrained min-cost circulation with exact integer flows.

The bipartite assignment problem solved in every topology-rounding step,

    min sum C_ij * a_ij
    s.t. column sums <= P_j, row sums <= Q_i, L_ij <= a_ij <= U_ij,

maps onto a circulation graph with a feedback arc of slightly negative cost
so that, among cost-ties, solutions with more assigned links win. All bounds
are integers, so an optimal integer flow always exists; the solver is a
successive-shortest-path method with Johnson potentials after the standard
lower-bound / negative-arc elimination, and returns exact integers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a hard dep, guard for safety

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


__all__ = [
    "INF_CAP",
    "AssignmentProblem",
    "CirculationGraph",
    "build_circulation",
    "solve_assignment",
    "solve_min_cost_circulation",
    "to_dimacs",
]

#: Sentinel for an unbounded arc capacity (the feedback arc).
INF_CAP = np.int64(2) ** 62


@dataclass(frozen=True)
class AssignmentProblem:
    """Degree-capped, box-constrained bipartite assignment (costs may be negative)."""

    costs: np.ndarray  # (I, J) float, per-unit cost
    col_caps: np.ndarray  # (J,) int, P_j
    row_caps: np.ndarray  # (I,) int, Q_i
    lower: np.ndarray  # (I, J) int
    upper: np.ndarray  # (I, J) int

    def __post_init__(self):
        c = np.asarray(self.costs, dtype=float)
        p = np.asarray(self.col_caps, dtype=np.int64)
        q = np.asarray(self.row_caps, dtype=np.int64)
        lo = np.asarray(self.lower, dtype=np.int64)
        up = np.asarray(self.upper, dtype=np.int64)
        if c.ndim != 2 or lo.shape != c.shape or up.shape != c.shape:
            raise ValueError("cost and bound matrices must share an (I, J) shape")
        if p.shape != (c.shape[1],) or q.shape != (c.shape[0],):
            raise ValueError("cap vectors must match the matrix sides")
        if (lo < 0).any() or (lo > up).any():
            raise ValueError("need 0 <= lower <= upper")
        if (p < 0).any() or (q < 0).any():
            raise ValueError("caps must be nonnegative")
        for name, val in (("costs", c), ("col_caps", p), ("row_caps", q),
                          ("lower", lo), ("upper", up)):
            val = np.ascontiguousarray(val)
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def shape(self):
        return self.costs.shape


@dataclass(frozen=True)
class CirculationGraph:
    """Flow network in arc-list form. Node order: source, I left, J right, sink."""

    n_nodes: int
    tail: np.ndarray
    head: np.ndarray
    lower: np.ndarray
    upper: np.ndarray  # INF_CAP marks an unbounded arc
    cost: np.ndarray
    source: int
    sink: int
    feedback_arc: int
    shape: tuple[int, int]

    def bipartite_slice(self) -> slice:
        i, j = self.shape
        return slice(i, i + i * j)


def build_circulation(prob: AssignmentProblem, epsilon: float = 1e-6) -> CirculationGraph:
    """Four-step transformation of an assignment problem into a circulation.

    Arcs: source->left_i with bounds [0, Q_i] and cost 0; left_i->right_j with
    bounds [L_ij, U_ij] and cost C_ij; right_j->sink with bounds [0, P_j] and
    cost 0; and a feedback arc sink->source with bounds [0, inf) and cost
    -epsilon (default 1e-6) so extra flow is assigned when it is free to.
    """
    ni, nj = prob.shape
    cell_cap = np.minimum(prob.row_caps[:, None], prob.col_caps[None, :])
    if (prob.lower > cell_cap).any():
        i, j = np.argwhere(prob.lower > cell_cap)[0]
        raise InfeasibleError(
            f"lower bound L[{i},{j}]={int(prob.lower[i, j])} exceeds "
            f"min(Q[{i}], P[{j}])={int(cell_cap[i, j])}"
        )
    if (prob.lower.sum(axis=1) > prob.row_caps).any():
        i = int(np.argmax(prob.lower.sum(axis=1) - prob.row_caps))
        raise InfeasibleError(f"row {i} lower bounds exceed its cap Q[{i}]")
    if (prob.lower.sum(axis=0) > prob.col_caps).any():
        j = int(np.argmax(prob.lower.sum(axis=0) - prob.col_caps))
        raise InfeasibleError(f"column {j} lower bounds exceed its cap P[{j}]")

    source = 0
    left = 1 + np.arange(ni)
    right = 1 + ni + np.arange(nj)
    sink = 1 + ni + nj
    ii, jj = np.divmod(np.arange(ni * nj), nj)

    tail = np.concatenate([np.full(ni, source), left[ii], right, [sink]])
    head = np.concatenate([left, right[jj], np.full(nj, sink), [source]])
    lower = np.concatenate([np.zeros(ni, np.int64), prob.lower.ravel(),
                            np.zeros(nj, np.int64), [0]])
    upper = np.concatenate([prob.row_caps, prob.upper.ravel(),
                            prob.col_caps, [INF_CAP]])
    cost = np.concatenate([np.zeros(ni), prob.costs.ravel(),
                           np.zeros(nj), [-float(epsilon)]])
    return CirculationGraph(
        n_nodes=sink + 1,
        tail=tail.astype(np.int64),
        head=head.astype(np.int64),
        lower=lower.astype(np.int64),
        upper=upper.astype(np.int64),
        cost=cost,
        source=source,
        sink=sink,
        feedback_arc=len(cost) - 1,
        shape=(ni, nj),
    )


@njit(cache=True)
def _ssp(n_nodes, tails, heads, lows, caps, costs):
    """Successive shortest paths with potentials; returns (flow, unmet deficit)."""
    n_arcs = tails.shape[0]
    flow = lows.copy()
    excess = np.zeros(n_nodes, np.int64)
    for e in range(n_arcs):
        if lows[e] > 0:
            excess[heads[e]] += lows[e]
            excess[tails[e]] -= lows[e]
    # Saturate negative-cost arcs so every residual arc starts nonnegative.
    for e in range(n_arcs):
        if costs[e] < 0.0 and caps[e] > flow[e]:
            d = caps[e] - flow[e]
            flow[e] += d
            excess[heads[e]] += d
            excess[tails[e]] -= d

    # CSR adjacency over residual arc ids (2e forward, 2e+1 backward).
    start = np.zeros(n_nodes + 1, np.int64)
    for e in range(n_arcs):
        start[tails[e] + 1] += 1
        start[heads[e] + 1] += 1
    for v in range(n_nodes):
        start[v + 1] += start[v]
    adj = np.empty(2 * n_arcs, np.int64)
    fill = start[:-1].copy()
    for e in range(n_arcs):
        adj[fill[tails[e]]] = 2 * e
        fill[tails[e]] += 1
        adj[fill[heads[e]]] = 2 * e + 1
        fill[heads[e]] += 1

    pot = np.zeros(n_nodes)
    dist = np.empty(n_nodes)
    done = np.empty(n_nodes, np.bool_)
    parent = np.empty(n_nodes, np.int64)

    while True:
        remaining = np.int64(0)
        for v in range(n_nodes):
            if excess[v] > 0:
                remaining += excess[v]
        if remaining == 0:
            return flow, np.int64(0)

        # Dense multi-source Dijkstra on reduced costs; stops at the
        # cheapest deficit node (ties broken by lowest node index).
        for v in range(n_nodes):
            dist[v] = 0.0 if excess[v] > 0 else np.inf
            done[v] = False
            parent[v] = -1
        target = -1
        while True:
            u = -1
            best = np.inf
            for v in range(n_nodes):
                if not done[v] and dist[v] < best:
                    best = dist[v]
                    u = v
            if u < 0:
                break
            done[u] = True
            if excess[u] < 0:
                target = u
                break
            for a_idx in range(start[u], start[u + 1]):
                a = adj[a_idx]
                e = a >> 1
                if a & 1:
                    v = tails[e]
                    rcap = flow[e] - lows[e]
                    c = -costs[e]
                else:
                    v = heads[e]
                    rcap = caps[e] - flow[e]
                    c = costs[e]
                if rcap <= 0 or done[v]:
                    continue
                rc = c + pot[u] - pot[v]
                if rc < 0.0:
                    rc = 0.0  # float fuzz only; exact zero for integer costs
                nd = best + rc
                if nd < dist[v]:
                    dist[v] = nd
                    parent[v] = a
        if target < 0:
            return flow, remaining
        dt = dist[target]
        for v in range(n_nodes):
            pot[v] += dist[v] if dist[v] < dt else dt

        # Bottleneck along the augmenting path, then push.
        delta = -excess[target]
        v = target
        while parent[v] >= 0:
            a = parent[v]
            e = a >> 1
            if a & 1:
                rcap = flow[e] - lows[e]
                v = heads[e]
            else:
                rcap = caps[e] - flow[e]
                v = tails[e]
            if rcap < delta:
                delta = rcap
        if excess[v] < delta:
            delta = excess[v]
        v = target
        while parent[v] >= 0:
            a = parent[v]
            e = a >> 1
            if a & 1:
                flow[e] -= delta
                v = heads[e]
            else:
                flow[e] += delta
                v = tails[e]
        excess[v] -= delta
        excess[target] += delta


def solve_min_cost_circulation(g: CirculationGraph) -> np.ndarray:
    """Optimal integer flow per arc; raises InfeasibleError with a best-effort cut."""
    caps = g.upper.copy()
    unbounded = caps >= INF_CAP
    if unbounded.any():
        # Any finite bound on total circulation works; no all-unbounded cycle exists.
        caps[unbounded] = caps[~unbounded].sum() + g.lower.sum() + 1
    flow, deficit = _ssp(g.n_nodes, g.tail, g.head, g.lower, caps, g.cost)
    if deficit > 0:
        saturated = _saturated_cut(g, flow, caps)
        raise InfeasibleError(
            f"circulation infeasible: {int(deficit)} units of lower-bound flow "
            f"cannot be routed", detail={"deficit": int(deficit), "cut_arcs": saturated},
        )
    return flow


def _saturated_cut(g: CirculationGraph, flow: np.ndarray, caps: np.ndarray) -> list[int]:
    """Arcs crossing the reachable set of unmet excess nodes in the residual graph."""
    excess = np.zeros(g.n_nodes, np.int64)
    np.add.at(excess, g.head, flow)
    np.subtract.at(excess, g.tail, flow)
    reached = excess > 0
    frontier = list(np.flatnonzero(reached))
    out_arcs: dict[int, list[int]] = {v: [] for v in range(g.n_nodes)}
    for e in range(len(g.tail)):
        out_arcs[int(g.tail[e])].append(e)
        out_arcs[int(g.head[e])].append(~e)  # ~e marks the backward direction
    while frontier:
        u = frontier.pop()
        for a in out_arcs[u]:
            if a >= 0:
                v, rcap = int(g.head[a]), int(caps[a] - flow[a])
            else:
                e = ~a
                v, rcap = int(g.tail[e]), int(flow[e] - g.lower[e])
            if rcap > 0 and not reached[v]:
                reached[v] = True
                frontier.append(v)
    return [
        int(e)
        for e in range(len(g.tail))
        if reached[g.tail[e]] and not reached[g.head[e]] and flow[e] == caps[e]
    ]


def solve_assignment(prob: AssignmentProblem, epsilon: float = 1e-6) -> np.ndarray:
    """Optimal integer assignment matrix for the box/cap-constrained problem."""
    g = build_circulation(prob, epsilon)
    flow = solve_min_cost_circulation(g)
    return flow[g.bipartite_slice()].reshape(prob.shape)


def to_dimacs(g: CirculationGraph) -> str:
    """Debug dump in a DIMACS-like text form (lower bounds in a comment column)."""
    lines = [f"p min {g.n_nodes} {len(g.tail)}"]
    for e in range(len(g.tail)):
        cap = "inf" if g.upper[e] >= INF_CAP else str(int(g.upper[e]))
        lines.append(
            f"a {int(g.tail[e])} {int(g.head[e])} {int(g.lower[e])} {cap} {g.cost[e]:.9g}"
        )
    return "\n".join(lines)
