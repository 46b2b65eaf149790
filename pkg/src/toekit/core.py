"""Domain types for the physical plant, topologies, demands, and paths.

Conventions used throughout the toolkit:

* Pods are indexed densely ``0..n-1``; all matrices are dense numpy arrays.
* A traffic matrix is a plain ``(n, n)`` float array of Gbps rates with a
  zero diagonal (see :func:`check_traffic_matrix`).
* A fractional topology is a plain ``(n, n)`` float array of link counts
  respecting the per-pod degree budgets (see :func:`check_fractional`).
* Link capacity between pods i and j is ``min(b_i, b_j)`` where ``b_i`` is
  pod i's per-link speed; fabrics used in tests are uniform.

All types are immutable after construction and safe to share across threads;
the operations in this module are pure functions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import FabricError

__all__ = [
    "PodSpec",
    "PhysicalTopology",
    "LogicalTopology",
    "PathSet",
    "Violation",
    "build_path_set",
    "check_traffic_matrix",
    "check_fractional",
    "load_fabric",
    "uniform_mesh",
    "uniform_striping",
    "validate_logical",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PodSpec:
    """One aggregation block: degree budgets and per-link speed."""

    id: int
    egress_links: int
    ingress_links: int
    link_gbps: float = 1.0

    def __post_init__(self):
        if self.egress_links < 1 or self.ingress_links < 1:
            raise FabricError(f"pod {self.id}: link counts must be >= 1")
        if not self.link_gbps > 0:
            raise FabricError(f"pod {self.id}: link speed must be positive")


@dataclass(frozen=True)
class PhysicalTopology:
    """Pods plus the fixed fiber striping between pods and OCS planes.

    ``h_eg[k, i]`` / ``h_ig[k, i]`` count pod i's egress/ingress fibers into
    OCS k. Per pod they must sum to the pod's degree budget, and per OCS they
    may not exceed the OCS port radix (when one is given).
    """

    pods: tuple[PodSpec, ...]
    h_eg: np.ndarray
    h_ig: np.ndarray
    ocs_radix: int | None = None

    def __post_init__(self):
        n = len(self.pods)
        h_eg = np.asarray(self.h_eg, dtype=np.int64)
        h_ig = np.asarray(self.h_ig, dtype=np.int64)
        if h_eg.ndim != 2 or h_eg.shape != h_ig.shape or h_eg.shape[1] != n:
            raise FabricError("striping matrices must have shape (ocs_count, n_pods)")
        if (h_eg < 0).any() or (h_ig < 0).any():
            raise FabricError("striping entries must be nonnegative")
        r_eg = np.array([p.egress_links for p in self.pods])
        r_ig = np.array([p.ingress_links for p in self.pods])
        if not np.array_equal(h_eg.sum(axis=0), r_eg):
            raise FabricError("per-OCS egress striping does not sum to pod budgets")
        if not np.array_equal(h_ig.sum(axis=0), r_ig):
            raise FabricError("per-OCS ingress striping does not sum to pod budgets")
        if self.ocs_radix is not None:
            used = max(h_eg.sum(axis=1).max(), h_ig.sum(axis=1).max())
            if used > self.ocs_radix:
                raise FabricError(
                    f"striping exceeds OCS radix {self.ocs_radix} ({used} ports used)"
                )
        object.__setattr__(self, "pods", tuple(self.pods))
        object.__setattr__(self, "h_eg", _frozen(h_eg))
        object.__setattr__(self, "h_ig", _frozen(h_ig))

    @property
    def n(self) -> int:
        return len(self.pods)

    @property
    def ocs_count(self) -> int:
        return self.h_eg.shape[0]

    @property
    def r_eg(self) -> np.ndarray:
        return np.array([p.egress_links for p in self.pods])

    @property
    def r_ig(self) -> np.ndarray:
        return np.array([p.ingress_links for p in self.pods])

    def link_capacity(self) -> np.ndarray:
        """Per link-group capacity b_ij = min(b_i, b_j), in Gbps."""
        b = np.array([p.link_gbps for p in self.pods])
        return np.minimum.outer(b, b)

    @staticmethod
    def uniform(
        n: int,
        egress: int,
        ingress: int | None = None,
        link_gbps: float = 1.0,
        ocs_count: int = 1,
        ocs_radix: int | None = None,
    ) -> "PhysicalTopology":
        """Uniform fabric with round-robin striping across ``ocs_count`` planes."""
        ingress = egress if ingress is None else ingress
        pods = tuple(PodSpec(i, egress, ingress, link_gbps) for i in range(n))
        h_eg = uniform_striping(np.full(n, egress), ocs_count)
        h_ig = uniform_striping(np.full(n, ingress), ocs_count)
        return PhysicalTopology(pods, h_eg, h_ig, ocs_radix)

    def to_dict(self) -> dict:
        return {
            "pods": [
                {"egress": p.egress_links, "ingress": p.ingress_links, "link_gbps": p.link_gbps}
                for p in self.pods
            ],
            "ocs": {
                "count": self.ocs_count,
                "radix": self.ocs_radix,
                "per_ocs_striping": {
                    "h_eg": self.h_eg.tolist(),
                    "h_ig": self.h_ig.tolist(),
                },
            },
        }


def uniform_striping(r: np.ndarray, ocs_count: int) -> np.ndarray:
    """Spread each pod's ``r[i]`` fibers over planes, remainder round-robin
    by ascending plane index."""
    if ocs_count < 1:
        raise FabricError("need at least one OCS plane")
    r = np.asarray(r, dtype=np.int64)
    base = r // ocs_count
    rem = r % ocs_count
    k = np.arange(ocs_count)[:, None]
    return base[None, :] + (k < rem[None, :])


def fabric_from_dict(spec: dict) -> PhysicalTopology:
    try:
        pods = tuple(
            PodSpec(i, int(p["egress"]), int(p["ingress"]), float(p.get("link_gbps", 1.0)))
            for i, p in enumerate(spec["pods"])
        )
        ocs = spec["ocs"]
        count = int(ocs["count"])
        radix = ocs.get("radix")
        striping = ocs.get("per_ocs_striping", "uniform")
    except (KeyError, TypeError, ValueError) as exc:
        raise FabricError(f"malformed fabric description: {exc}") from exc
    if striping == "uniform":
        h_eg = uniform_striping(np.array([p.egress_links for p in pods]), count)
        h_ig = uniform_striping(np.array([p.ingress_links for p in pods]), count)
    else:
        h_eg = np.asarray(striping["h_eg"], dtype=np.int64)
        h_ig = np.asarray(striping["h_ig"], dtype=np.int64)
    return PhysicalTopology(pods, h_eg, h_ig, None if radix is None else int(radix))


def load_fabric(path) -> PhysicalTopology:
    with open(path) as fh:
        return fabric_from_dict(json.load(fh))


def check_traffic_matrix(tm: np.ndarray) -> np.ndarray:
    """Validate an (n, n) demand-rate matrix; returns it as a float array."""
    tm = np.asarray(tm, dtype=float)
    if tm.ndim != 2 or tm.shape[0] != tm.shape[1]:
        raise ValueError("traffic matrix must be square")
    if not np.isfinite(tm).all() or (tm < 0).any():
        raise ValueError("traffic rates must be finite and nonnegative")
    if np.diagonal(tm).any():
        raise ValueError("traffic matrix diagonal must be zero")
    return tm


def check_fractional(d: np.ndarray, phys: PhysicalTopology, tol: float = 1e-7) -> np.ndarray:
    """Validate degree budgets (row sums <= r_eg, column sums <= r_ig)."""
    d = np.asarray(d, dtype=float)
    if d.shape != (phys.n, phys.n):
        raise FabricError("fractional topology has wrong shape")
    if (d < -tol).any() or np.abs(np.diagonal(d)).max(initial=0.0) > tol:
        raise ValueError("fractional link counts must be nonnegative with zero diagonal")
    if (d.sum(axis=1) > phys.r_eg + tol).any() or (d.sum(axis=0) > phys.r_ig + tol).any():
        raise ValueError("fractional topology exceeds pod degree budgets")
    return d


@dataclass(frozen=True)
class LogicalTopology:
    """Integer per-OCS link assignment x[k, i, j] plus its cached aggregate."""

    x: np.ndarray
    aggregate: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        x = np.asarray(self.x)
        if x.ndim != 3 or x.shape[1] != x.shape[2]:
            raise FabricError("per-OCS assignment must have shape (ocs_count, n, n)")
        if not np.issubdtype(x.dtype, np.integer):
            rounded = np.rint(x)
            if np.abs(x - rounded).max(initial=0.0) > 1e-9:
                raise ValueError("link counts must be integers")
            x = rounded.astype(np.int64)
        object.__setattr__(self, "x", _frozen(x.astype(np.int64)))
        object.__setattr__(self, "aggregate", _frozen(self.x.sum(axis=0)))

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def ocs_count(self) -> int:
        return self.x.shape[0]


class Violation(NamedTuple):
    kind: str  # "egress" | "ingress" | "negative"
    ocs: int
    pod: int
    excess: int


def validate_logical(topo: LogicalTopology, phys: PhysicalTopology) -> list[Violation]:
    """Check the hard per-OCS port constraints. Empty report means feasible."""
    if topo.n != phys.n or topo.ocs_count != phys.ocs_count:
        raise FabricError(
            f"topology shape {topo.x.shape} does not match fabric "
            f"({phys.ocs_count} OCSs, {phys.n} pods)"
        )
    out: list[Violation] = []
    x = topo.x
    for k in range(phys.ocs_count):
        for i in range(phys.n):
            neg = int(-min(x[k, i, :].min(), x[k, :, i].min(), 0))
            if neg > 0:
                out.append(Violation("negative", k, i, neg))
        eg = x[k].sum(axis=1) - phys.h_eg[k]
        ig = x[k].sum(axis=0) - phys.h_ig[k]
        for i in np.flatnonzero(eg > 0):
            out.append(Violation("egress", k, int(i), int(eg[i])))
        for i in np.flatnonzero(ig > 0):
            out.append(Violation("ingress", k, int(i), int(ig[i])))
    return out


@dataclass(frozen=True)
class PathSet:
    """Direct plus all 2-hop paths for every ordered pod pair.

    Paths are stored flat, grouped by pair (direct path first, then 2-hop
    paths by ascending intermediate pod). ``mid == -1`` marks direct paths.
    Link ids are ``i * n + j``.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    mid: np.ndarray

    def __post_init__(self):
        for name in ("src", "dst", "mid"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), np.int64)))

    def __len__(self) -> int:
        return len(self.src)

    @property
    def is_direct(self) -> np.ndarray:
        return self.mid < 0

    @property
    def pair_id(self) -> np.ndarray:
        return self.src * self.n + self.dst

    def link_incidence(self):
        """Sparse (n*n, n_paths) matrix: entry 1 when the path uses the link."""
        import scipy.sparse as sp

        n, npaths = self.n, len(self)
        direct = self.is_direct
        rows = np.concatenate(
            [
                (self.src * n + self.dst)[direct],
                (self.src * n + self.mid)[~direct],
                (self.mid * n + self.dst)[~direct],
            ]
        )
        cols = np.concatenate(
            [np.flatnonzero(direct), np.flatnonzero(~direct), np.flatnonzero(~direct)]
        )
        data = np.ones(len(rows))
        return sp.csr_matrix((data, (rows, cols)), shape=(n * n, npaths))


def build_path_set(n: int) -> PathSet:
    """All candidate paths under the 2-hop cap: n(n-1)^2 in total."""
    if n < 2:
        raise FabricError("a fabric needs at least two pods")
    src, dst, mid = [], [], []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            src.append(i)
            dst.append(j)
            mid.append(-1)
            for m in range(n):
                if m != i and m != j:
                    src.append(i)
                    dst.append(j)
                    mid.append(m)
    return PathSet(n, np.array(src), np.array(dst), np.array(mid))


def uniform_mesh(phys: PhysicalTopology) -> LogicalTopology:
    """Baseline mesh: aggregate link counts as even as possible per row.

    The non-divisible remainder goes round-robin to peers by ascending index;
    column sums are then clipped to the ingress budgets (largest entry first).
    Per-OCS placement fills planes in ascending order, giving each plane an
    even share of every pair's links.
    """
    n = phys.n
    if n < 2:
        raise FabricError("a fabric needs at least two pods")
    r_eg, r_ig = phys.r_eg, phys.r_ig
    agg = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        peers = [j for j in range(n) if j != i]
        base, rem = divmod(int(r_eg[i]), n - 1)
        for rank, j in enumerate(peers):
            agg[i, j] = base + (1 if rank < rem else 0)
    for j in range(n):
        excess = int(agg[:, j].sum() - r_ig[j])
        while excess > 0:
            i = int(np.argmax(agg[:, j]))
            agg[i, j] -= 1
            excess -= 1
    x = _stripe_aggregate(agg, phys)
    return LogicalTopology(x)


def _stripe_aggregate(agg: np.ndarray, phys: PhysicalTopology) -> np.ndarray:
    """Split an aggregate matrix across OCS planes without violating ports.

    Planes are filled in ascending order; each plane gets an even quota of
    every pair's remaining links, placed by a max-flow assignment so that a
    feasible split is found whenever the quota admits one.
    """
    from .circulation import AssignmentProblem, solve_assignment
    from .errors import InfeasibleError

    n, y = phys.n, phys.ocs_count
    x = np.zeros((y, n, n), dtype=np.int64)
    remaining = agg.astype(np.int64).copy()
    for k in range(y):
        planes_left = y - k
        quota = -(-remaining // planes_left)  # ceil share per plane
        floor_share = remaining // planes_left
        cell_cap = np.minimum(quota, np.minimum.outer(phys.h_eg[k], phys.h_ig[k]))
        np.fill_diagonal(cell_cap, 0)
        placed = None
        # Force the fair floor share per cell when it fits; retry without the
        # lower bound when a plane's striping cannot carry it.
        for lower in (np.minimum(floor_share, cell_cap), np.zeros((n, n), np.int64)):
            prob = AssignmentProblem(
                costs=-remaining.astype(float),
                col_caps=phys.h_ig[k],
                row_caps=phys.h_eg[k],
                lower=lower,
                upper=cell_cap,
            )
            try:
                placed = solve_assignment(prob, epsilon=0.0)
                break
            except InfeasibleError:
                continue
        if placed is None:
            raise FabricError(f"OCS {k}: striping cannot carry its share of the mesh")
        x[k] = placed
        remaining -= placed
    if remaining.any():
        i, j = np.argwhere(remaining > 0)[0]
        raise FabricError(
            f"cannot stripe {int(agg[i, j])} links for pod pair ({int(i)}, {int(j)}): "
            f"OCS {y - 1} ran out of ports"
        )
    return x
