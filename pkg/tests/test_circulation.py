import itertools
import math

import numpy as np
import pytest

from toekit.circulation import (
    AssignmentProblem,
    build_circulation,
    solve_assignment,
    solve_min_cost_circulation,
    to_dimacs,
)
from toekit.errors import InfeasibleError


def brute_force_assignment(prob):
    """Exhaustive minimum over all integer matrices in the box that satisfy
    the row/column caps. Row-by-row search with memoization on the remaining
    column capacity, which visits every feasible matrix implicitly."""
    ni, nj = prob.shape
    row_cands = []
    for i in range(ni):
        cands = []
        for combo in itertools.product(
            *[range(int(prob.lower[i, j]), int(prob.upper[i, j]) + 1) for j in range(nj)]
        ):
            if sum(combo) <= prob.row_caps[i]:
                cands.append(combo)
        row_cands.append(cands)

    memo = {}

    def best_from(i, rem):
        if i == ni:
            return 0.0
        key = (i, rem)
        if key not in memo:
            best = math.inf
            for cand in row_cands[i]:
                if all(c <= r for c, r in zip(cand, rem)):
                    tail = best_from(i + 1, tuple(r - c for r, c in zip(rem, cand)))
                    cost = sum(prob.costs[i, j] * cand[j] for j in range(nj)) + tail
                    best = min(best, cost)
            memo[key] = best
        return memo[key]

    return best_from(0, tuple(int(p) for p in prob.col_caps))


def random_problem(rng, max_side=4, max_upper=3, cost_lo=-5, cost_hi=5, with_lower=True):
    ni = int(rng.integers(1, max_side + 1))
    nj = int(rng.integers(1, max_side + 1))
    upper = rng.integers(0, max_upper + 1, size=(ni, nj))
    lower = rng.integers(0, upper + 1) if with_lower else np.zeros((ni, nj), np.int64)
    # caps drawn to keep the instance feasible: row/col sums of the lower
    # bounds always fit (a = lower is then a witness)
    row_caps = lower.sum(axis=1) + rng.integers(0, 2 * max_upper, size=ni)
    col_caps = lower.sum(axis=0) + rng.integers(0, 2 * max_upper, size=nj)
    costs = rng.integers(cost_lo, cost_hi + 1, size=(ni, nj)).astype(float)
    return AssignmentProblem(costs, col_caps, row_caps, lower, upper)


def test_graph_structure_counts():
    one = AssignmentProblem(np.zeros((1, 1)), [2], [2], np.zeros((1, 1), int), np.full((1, 1), 2))
    g = build_circulation(one)
    assert g.n_nodes == 4 and len(g.tail) == 4

    prob = AssignmentProblem(
        np.zeros((2, 3)), [1, 1, 1], [2, 2], np.zeros((2, 3), int), np.ones((2, 3), int)
    )
    g = build_circulation(prob)
    assert g.n_nodes == 7 and len(g.tail) == 2 + 6 + 3 + 1


def test_lower_bounds_have_feasibility_witness():
    rng = np.random.default_rng(7)
    for _ in range(50):
        prob = random_problem(rng)
        g = build_circulation(prob)
        bip = g.lower[g.bipartite_slice()].reshape(prob.shape)
        assert (bip.sum(axis=1) <= prob.row_caps).all()
        assert (bip.sum(axis=0) <= prob.col_caps).all()


def test_negative_cost_saturates():
    prob = AssignmentProblem(
        np.array([[-1.0]]), [2], [2], np.zeros((1, 1), int), np.full((1, 1), 2)
    )
    g = build_circulation(prob)
    flow = solve_min_cost_circulation(g)
    assert flow[g.bipartite_slice()][0] == 2
    assert flow[g.feedback_arc] == 2


def test_positive_cost_stays_at_zero():
    prob = AssignmentProblem(
        np.array([[1.0]]), [2], [2], np.zeros((1, 1), int), np.full((1, 1), 2)
    )
    assert solve_assignment(prob)[0, 0] == 0


def test_matches_bruteforce_on_random_instances():
    rng = np.random.default_rng(42)
    for _ in range(120):
        prob = random_problem(rng)
        a = solve_assignment(prob)
        assert a.dtype.kind == "i"
        assert (a >= prob.lower).all() and (a <= prob.upper).all()
        assert (a.sum(axis=1) <= prob.row_caps).all()
        assert (a.sum(axis=0) <= prob.col_caps).all()
        got = float((prob.costs * a).sum())
        want = brute_force_assignment(prob)
        assert got == pytest.approx(want, abs=1e-9)


def test_epsilon_only_breaks_volume_ties():
    rng = np.random.default_rng(3)
    for _ in range(40):
        prob = random_problem(rng, with_lower=False)
        costs = [
            float((prob.costs * solve_assignment(prob, epsilon=eps)).sum())
            for eps in (1e-6, 1e-8)
        ]
        assert costs[0] == pytest.approx(costs[1], abs=1e-9)


def test_zero_cost_prefers_more_flow_only_via_epsilon():
    prob = AssignmentProblem(
        np.zeros((1, 1)), [3], [3], np.zeros((1, 1), int), np.full((1, 1), 3)
    )
    assert solve_assignment(prob, epsilon=0.0)[0, 0] in (0, 3)
    assert solve_assignment(prob, epsilon=1e-6)[0, 0] == 3
    assert float(solve_assignment(prob, epsilon=1e-6)[0, 0] * 0.0) == 0.0


def test_infeasible_lower_bounds_precheck():
    prob = AssignmentProblem(
        np.zeros((1, 2)), [1, 1], [1], np.array([[1, 1]]), np.array([[1, 1]])
    )
    with pytest.raises(InfeasibleError) as err:
        build_circulation(prob)  # row cap 1 < lower-bound sum 2
    assert "row 0" in str(err.value)


def test_solver_level_infeasibility_reports_deficit():
    from toekit.circulation import CirculationGraph

    # two nodes, one mandatory arc, no way to return the flow
    g = CirculationGraph(
        n_nodes=2,
        tail=np.array([0]),
        head=np.array([1]),
        lower=np.array([2]),
        upper=np.array([2]),
        cost=np.array([0.0]),
        source=0,
        sink=1,
        feedback_arc=0,
        shape=(1, 1),
    )
    with pytest.raises(InfeasibleError) as err:
        solve_min_cost_circulation(g)
    assert err.value.detail["deficit"] == 2


def test_row_lower_bound_infeasibility_detected():
    prob = AssignmentProblem(
        np.zeros((2, 2)),
        [1, 1],
        [2, 2],
        np.array([[1, 1], [1, 1]]),
        np.array([[1, 1], [1, 1]]),
    )
    # column caps admit 1 unit each but lower bounds require 2 per column
    with pytest.raises(InfeasibleError) as err:
        build_circulation(prob)
    assert "column" in str(err.value)


def test_dimacs_dump_mentions_every_arc():
    prob = AssignmentProblem(
        np.array([[1.0, -2.0]]), [1, 1], [2], np.zeros((1, 2), int), np.ones((1, 2), int)
    )
    g = build_circulation(prob)
    text = to_dimacs(g)
    assert text.count("\na ") == len(g.tail)
    assert "inf" in text
