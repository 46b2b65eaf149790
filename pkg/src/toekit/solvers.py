"""Single internal interface to the embedded LP and convex-QP solvers.

Every optimization in the toolkit goes through these two calls: linear
programs run on HiGHS via scipy, and the convex quadratic program runs on
OSQP with settings pinned for determinism (rho adaptation on a fixed
iteration schedule, polishing on). Callers state problems in matrix form and
never touch solver objects.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import InfeasibleError, SolverFailure

__all__ = ["solve_lp", "solve_qp"]


def solve_lp(c, a_ub=None, b_ub=None, a_eq=None, b_eq=None, bounds=(0, None)):
    """Minimize ``c @ x`` subject to ``a_ub x <= b_ub`` and ``a_eq x == b_eq``.

    Returns the scipy result (fields ``x`` and ``fun``). Raises
    InfeasibleError or SolverFailure instead of returning unsuccessfully.
    """
    res = linprog(
        c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs"
    )
    if res.status == 2:
        raise InfeasibleError("LP infeasible")
    if res.status == 3:
        raise InfeasibleError("LP unbounded")
    if not res.success:
        raise SolverFailure(f"LP solve failed: {res.message}")
    return res


_QP_SETTINGS = dict(
    verbose=False,
    eps_abs=1e-9,
    eps_rel=1e-9,
    max_iter=200_000,
    polish=True,
    polish_refine_iter=10,
    adaptive_rho_interval=25,  # fixed schedule: wall-clock-based adaptation is not deterministic
)


def solve_qp(p_diag: np.ndarray, q: np.ndarray, a: sp.spmatrix, lb: np.ndarray, ub: np.ndarray) -> np.ndarray:
    """Minimize ``0.5 x' diag(p_diag) x + q @ x`` s.t. ``lb <= a x <= ub``."""
    import osqp

    n = len(q)
    prob = osqp.OSQP()
    prob.setup(
        sp.diags(p_diag, format="csc"),
        np.asarray(q, dtype=float),
        sp.csc_matrix(a),
        np.asarray(lb, dtype=float),
        np.asarray(ub, dtype=float),
        **_QP_SETTINGS,
    )
    res = prob.solve(raise_error=False)
    status = res.info.status
    if "infeasible" in status:
        raise InfeasibleError(f"QP {status}")
    if status not in ("solved", "solved inaccurate"):
        raise SolverFailure(f"QP solve failed: {status}")
    if status == "solved inaccurate":
        raise SolverFailure("QP solved only inaccurately at the pinned tolerances")
    x = np.asarray(res.x, dtype=float)
    if x.shape != (n,) or not np.isfinite(x).all():
        raise SolverFailure("QP returned a malformed solution")
    return x
