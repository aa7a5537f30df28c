"""
This module realizes the warped distance on an ε-net: a weighted graph
with metric edges (weight t·d) and unit-cost generator edges, the
controlled set E_r, and the comparison of Cantor warped levels with
cycle box spaces.
"""

import math
import logging
import numpy as np
import networkx as nx
from enum import Enum
from scipy import optimize, sparse
from scipy.sparse import csgraph
from scipy.spatial import cKDTree
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union
from src.actions import (
    ActionSpec,
    FreenessError,
    apply_many,
    max_free_radius,
)
from src.spaces import EpsNet, SpaceKind, SpaceMismatchError, build_eps_net

logger = logging.getLogger(__name__)

# all-pairs shortest paths are computed only up to this many nodes
ALL_PAIRS_LIMIT = 4000


class AdmissibilityError(ValueError):
    """Raised when r exceeds the radius at which E_r sections are disjoint."""


class SnapMode(str, Enum):
    SNAP = "snap"
    EXACT_OFFNET = "exact-offnet"


@dataclass(frozen=True, eq=False)
class WarpedGraph:
    """
    The warped graph of an action on a net at level t.

    :ivar net: The net.
    :ivar action: The action.
    :ivar cutoff: Metric edges join points with t·d ≤ cutoff.
    :ivar snap_mode: How generator images meet the net.
    :ivar free_radius: The admissible radius in d_M (0 if not free).
    :ivar metric_edges: Rows ``(i, j, t·d)`` with i < j.
    :ivar generator_edges: Rows ``(i, j, s)``, s the generator index.
    :ivar targets: ``targets[s, i]`` is the net point nearest s·p_i.
    :ivar snap_errors: Scaled distances from s·p_i to ``targets[s, i]``.
    :ivar adjacency: Symmetric sparse adjacency with minimal weights.
    """
    net: EpsNet
    action: ActionSpec
    cutoff: float
    snap_mode: SnapMode
    free_radius: float
    metric_edges: np.ndarray
    generator_edges: np.ndarray
    targets: np.ndarray
    snap_errors: np.ndarray
    adjacency: sparse.csr_matrix

    @property
    def size(self) -> int:
        return self.net.size

    @property
    def t(self) -> float:
        return self.net.t

    @property
    def admissible_r(self) -> float:
        """Largest admissible scaled radius t · free_radius."""
        return self.t * self.free_radius

    @property
    def components(self) -> int:
        n, _ = csgraph.connected_components(self.adjacency, directed=False)
        return int(n)

    @property
    def connected(self) -> bool:
        return self.components == 1

    @property
    def snap_exact(self) -> bool:
        """
        Whether every snapped generator map is a weight-preserving
        permutation with σ_{s⁻¹} = σ_s⁻¹.
        """
        if self.snap_mode != SnapMode.SNAP:
            return False
        everyone = np.arange(self.size)
        w = self.net.weights
        for s, s_inv in enumerate(self.action.generators.inverses):
            sigma = self.targets[s]
            if len(np.unique(sigma)) != self.size:
                return False
            if not np.array_equal(self.targets[s_inv][sigma], everyone):
                return False
            if np.max(np.abs(w[sigma] - w)) > 1e-12 * np.max(w):
                return False
        return True

    def check_admissible(self, r: float) -> None:
        """
        :raises AdmissibilityError: If r/t exceeds the free radius.
        """
        if r <= 0 or r > self.admissible_r * (1 + 1e-12):
            logger.error(
                "r=%s is not admissible at t=%s: sections s·B_r(x) are "
                "disjoint only for r ≤ %s", r, self.t, self.admissible_r
            )
            raise AdmissibilityError(
                f"r={r} is not admissible at t={self.t}: the action is "
                f"free at scale r only for r ≤ {self.admissible_r}"
            )

    def edge_list_lines(self) -> List[str]:
        """Edge list as text lines ``i j w label``."""
        lines = [f"{int(i)} {int(j)} {float(w)!r} metric"
                 for i, j, w in self.metric_edges]
        labels = self.action.labels
        lines += [f"{int(i)} {int(j)} 1.0 generator:{labels[int(s)]}"
                  for i, j, s in self.generator_edges]
        return lines

    def to_dict(self) -> Dict[str, Any]:
        labels = self.action.labels
        return {
            "action": self.action.describe(),
            "cutoff": self.cutoff,
            "snap_mode": self.snap_mode.value,
            "free_radius": self.free_radius,
            "connected": self.connected,
            "metric_edges": [[int(i), int(j), float(w)]
                             for i, j, w in self.metric_edges],
            "generator_edges": [[int(i), int(j), labels[int(s)]]
                                for i, j, s in self.generator_edges],
        }


def _min_weight_adjacency(rows: np.ndarray, cols: np.ndarray,
                          weights: np.ndarray, n: int) -> sparse.csr_matrix:
    # symmetric, self-loops dropped, parallel edges reduced to the minimum
    keep = rows != cols
    r = np.concatenate([rows[keep], cols[keep]])
    c = np.concatenate([cols[keep], rows[keep]])
    w = np.concatenate([weights[keep], weights[keep]])
    order = np.lexsort((w, c, r))
    r, c, w = r[order], c[order], w[order]
    first = np.ones(len(r), dtype=bool)
    first[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
    return sparse.csr_matrix((w[first], (r[first], c[first])), shape=(n, n))


def _ball_members(net: EpsNet, centers: np.ndarray,
                  radius: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Pairs ``(center index, net index)`` with scaled distance < radius for
    arbitrary (possibly off-net) centers.
    """
    space = net.space
    if (space.kind in (SpaceKind.CIRCLE, SpaceKind.FLAT_TORUS)
            and radius / net.t < 0.5):
        tree = cKDTree(net.points, boxsize=1.0)
        hits = tree.query_ball_point(centers, radius / net.t)
        c_idx = np.repeat(np.arange(len(centers)), [len(h) for h in hits])
        members = np.fromiter((j for h in hits for j in h), dtype=np.int64,
                              count=len(c_idx))
        d = net.t * space.distances(centers[c_idx], net.points[members])
        keep = d < radius
        return c_idx[keep], members[keep]
    parts_c, parts_m = [], []
    for start in range(0, len(centers), 1024):
        block = net.t * space.cdist(centers[start:start + 1024], net.points)
        ci, mi = np.nonzero(block < radius)
        parts_c.append(ci + start)
        parts_m.append(mi)
    return np.concatenate(parts_c), np.concatenate(parts_m)


def build_warped_graph(
        net: EpsNet,
        action: ActionSpec,
        cutoff: Optional[float] = None,
        snap_mode: Union[SnapMode, str] = SnapMode.SNAP,
        free_samples: int = 10_000
        ) -> WarpedGraph:
    """
    Build the warped graph of ``action`` on ``net``.

    Metric edges join net points at scaled distance ≤ ``cutoff`` (default
    3ε). In snap mode every point i gets one generator edge per s ∈ S to
    the net point nearest s·p_i; in exact-offnet mode it gets one to each
    net point within ε of s·p_i. A disconnected result is logged, not
    raised.

    :param net: The ε-net.
    :param action: An action on the net's space.
    :param cutoff: Metric cutoff in the scaled metric.
    :param snap_mode: ``snap`` or ``exact-offnet``.
    :param free_samples: Sample count for the admissible radius scan.
    :raises SpaceMismatchError: If net and action live on different spaces.
    """
    if net.space != action.space:
        logger.error("Net on %s, action on %s", net.space.name,
                     action.space.name)
        raise SpaceMismatchError(
            f"Net on {net.space.name}, action on {action.space.name}"
        )
    mode = SnapMode(snap_mode)
    if cutoff is None:
        cutoff = 3.0 * net.epsilon
    n = net.size

    rows, cols, dist = net.pairs_within(float(np.nextafter(cutoff, np.inf)),
                                        include_self=False)
    upper = rows < cols
    metric = np.column_stack([rows[upper], cols[upper], dist[upper]])

    targets = np.empty((action.size, n), dtype=np.int64)
    snap_errors = np.empty((action.size, n))
    gen_parts = []
    for s in range(action.size):
        images = apply_many(action, s, net.points)
        targets[s], snap_errors[s] = net.nearest(images)
        if mode == SnapMode.SNAP:
            gen_parts.append(np.column_stack(
                [np.arange(n), targets[s], np.full(n, s)]))
        else:
            c_idx, members = _ball_members(net, images, net.epsilon)
            if len(np.setdiff1d(np.arange(n), c_idx)):
                c_idx = np.concatenate([c_idx, np.arange(n)])
                members = np.concatenate([members, targets[s]])
            gen_parts.append(np.column_stack(
                [c_idx, members, np.full(len(c_idx), s)]))
    generator = np.unique(np.vstack(gen_parts), axis=0)

    worst = float(np.max(snap_errors))
    if worst >= net.epsilon:
        logger.warning("Maximal snap error %s is not below epsilon=%s",
                       worst, net.epsilon)

    all_rows = np.concatenate([metric[:, 0], generator[:, 0]]).astype(int)
    all_cols = np.concatenate([metric[:, 1], generator[:, 1]]).astype(int)
    all_w = np.concatenate([metric[:, 2], np.ones(len(generator))])
    adjacency = _min_weight_adjacency(all_rows, all_cols, all_w, n)

    try:
        free = max_free_radius(action, samples=free_samples)
    except FreenessError as e:
        logger.warning("No admissible radius: %s", e)
        free = 0.0

    graph = WarpedGraph(net, action, float(cutoff), mode, free, metric,
                        generator, targets, snap_errors, adjacency)
    if not graph.connected:
        logger.warning("Warped graph at t=%s has %d components",
                       net.t, graph.components)
    logger.info("Warped graph: %d nodes, %d metric and %d generator edges",
                n, len(metric), len(generator))
    return graph


def warped_distances_from(graph: WarpedGraph, i: int) -> np.ndarray:
    """Shortest-path distances from node ``i``; ``inf`` across components."""
    return csgraph.dijkstra(graph.adjacency, directed=False, indices=i)


def warped_distance(graph: WarpedGraph, i: int, j: int) -> float:
    """Warped distance between nodes ``i`` and ``j``."""
    if not (0 <= i < graph.size and 0 <= j < graph.size):
        raise ValueError(f"Nodes ({i}, {j}) are not in the graph")
    if i == j:
        return 0.0
    return float(warped_distances_from(graph, i)[j])


def all_pairs_distances(
        graph: Union[WarpedGraph, nx.Graph]) -> np.ndarray:
    """
    Dense all-pairs shortest-path matrix of a warped graph or of a
    networkx graph (edge attribute ``weight``, default 1).

    :raises ValueError: Above :data:`ALL_PAIRS_LIMIT` nodes.
    """
    if isinstance(graph, WarpedGraph):
        adjacency = graph.adjacency
    else:
        adjacency = nx.to_scipy_sparse_array(
            graph, nodelist=sorted(graph.nodes), weight="weight",
            format="csr")
    n = adjacency.shape[0]
    if n > ALL_PAIRS_LIMIT:
        raise ValueError(f"All-pairs distances limited to "
                         f"{ALL_PAIRS_LIMIT} nodes, got {n}")
    return csgraph.dijkstra(adjacency, directed=False)


def _raw_sections(graph: WarpedGraph, r: float) -> List[sparse.csr_matrix]:
    """
    One 0/1 matrix per generator s with entry (i, y) set when y lies in
    the r-ball around s·p_i (its snapped image in snap mode).
    """
    n = graph.size
    sections = []
    if graph.snap_mode == SnapMode.SNAP:
        b_rows, b_cols, _ = graph.net.pairs_within(r, include_self=True)
        ball = sparse.csr_matrix(
            (np.ones(len(b_rows)), (b_rows, b_cols)), shape=(n, n))
        for s in range(graph.action.size):
            # row i of P_s·B is the ball row of σ_s(i)
            sections.append(sparse.csr_matrix(ball[graph.targets[s]]))
        return sections
    for s in range(graph.action.size):
        images = apply_many(graph.action, s, graph.net.points)
        c_idx, members = _ball_members(graph.net, images, r)
        sections.append(sparse.csr_matrix(
            (np.ones(len(c_idx)), (c_idx, members)), shape=(n, n)))
    return sections


def section_asymmetry(graph: WarpedGraph, r: float) -> int:
    """
    Number of triples (i, y, s) of the raw sections whose reverse
    (y, i, s⁻¹) is missing. Zero on snap-exact graphs and in exact-offnet
    mode; snapped greedy nets usually have some.
    """
    raw = _raw_sections(graph, r)
    inverses = graph.action.generators.inverses
    missing = 0
    for s, s_inv in enumerate(inverses):
        diff = raw[s] - raw[s_inv].T
        missing += int(np.count_nonzero(diff.data > 0))
    return missing


def controlled_sections(graph: WarpedGraph,
                        r: float) -> List[sparse.csr_matrix]:
    """
    The sections of E_r per generator, closed under reversal: (i, y) has
    label s exactly when (y, i) has label s⁻¹.

    Snap mode uses the exact ball pairs of the net around the snapped
    images σ_s(i); exact-offnet mode uses balls around the true images.
    """
    raw = _raw_sections(graph, r)
    inverses = graph.action.generators.inverses
    closed = [sparse.csr_matrix(raw[s].maximum(raw[s_inv].T))
              for s, s_inv in enumerate(inverses)]
    added = sum(int(c.count_nonzero()) for c in closed) \
        - sum(int(m.count_nonzero()) for m in raw)
    if added:
        logger.info("Closed E_r sections under reversal: %d entries added "
                    "at r=%s", added, r)
    return closed


def controlled_neighbors(graph: WarpedGraph, i: int,
                         r: float) -> List[Tuple[int, str]]:
    """
    The section (E_r)_i: net points y with t·d(s·p_i, y) < r, tagged by s,
    closed under reversal as in :func:`controlled_sections`.

    In snap mode s·p_i is replaced by its snapped image.

    :raises AdmissibilityError: If r is above the admissible radius.
    :raises ValueError: If ``i`` is not a node.
    """
    if not 0 <= i < graph.size:
        raise ValueError(f"Node {i} is not in the graph")
    graph.check_admissible(r)
    labels = graph.action.labels
    return sorted((int(y), labels[s])
                  for s, section in enumerate(controlled_sections(graph, r))
                  for y in section[i].nonzero()[1])


def controlled_kernel(graph: WarpedGraph, r: float,
                      check: bool = True) -> sparse.csr_matrix:
    """
    The counting kernel α(x, y) = Σ_s 1[(x, y) has label s] of E_r. It is
    symmetric because the sections are closed under reversal.

    :param check: Enforce admissibility of ``r``.
    """
    if check:
        graph.check_admissible(r)
    alpha = sparse.csr_matrix((graph.size, graph.size))
    for section in controlled_sections(graph, r):
        alpha = alpha + section
    return alpha.tocsr()


def composition_chain_length(graph: WarpedGraph, r: float,
                             radius: float) -> float:
    """
    Least n such that every pair at warped distance ≤ ``radius`` is joined
    by a chain of at most n steps of E_r.

    :returns: The chain length, ``inf`` if some such pair is not joined.
    """
    alpha = controlled_kernel(graph, r)
    hops = csgraph.shortest_path(alpha, directed=False, unweighted=True)
    warped = all_pairs_distances(graph)
    close = warped <= radius
    if not np.any(close):
        return 0.0
    return float(np.max(hops[close]))


def gordo_constant(graph: WarpedGraph, r: float) -> float:
    """
    :returns: min over x of the scaled measure of the section (E_r)_x.
    """
    alpha = controlled_kernel(graph, r)
    support = (alpha > 0).astype(float)
    return float(np.min(support @ graph.net.weights))


def box_space_graph(depth: int) -> nx.Graph:
    """Cayley graph of ℤ/2^depth with generators ±1."""
    if depth < 1:
        raise ValueError(f"Box space depth must be positive: {depth}")
    return nx.cycle_graph(1 << depth)


@dataclass(frozen=True)
class Distortion:
    """Quasi-isometry constants (1/L)·d_A − C ≤ d_B ≤ L·d_A + C."""
    L: float
    C: float


def _additive_slack(d_a: np.ndarray, d_b: np.ndarray, L: float) -> float:
    return max(0.0, float(np.max(d_b - L * d_a)),
               float(np.max(d_a / L - d_b)))


def distortion(
        graph_a: Union[WarpedGraph, nx.Graph],
        graph_b: Union[WarpedGraph, nx.Graph],
        correspondence: Optional[Sequence[int]] = None
        ) -> Distortion:
    """
    Quasi-isometry constants of a node correspondence between two graphs.

    Among L ≥ 1 the pair minimizing L + C(L) is returned, where C(L) is
    the least additive constant for the multiplicative constant L.

    :param correspondence: ``correspondence[i]`` is the node of
        ``graph_b`` matched with node i of ``graph_a``; the identity
        when omitted and both graphs have the same size.
    :raises ValueError: Without a usable correspondence.
    """
    d_a = all_pairs_distances(graph_a)
    d_b = all_pairs_distances(graph_b)
    if correspondence is None:
        if d_a.shape != d_b.shape:
            logger.error("No correspondence between graphs of sizes %d "
                         "and %d", len(d_a), len(d_b))
            raise ValueError("A correspondence is required between "
                             "graphs of different sizes")
        match = np.arange(len(d_a))
    else:
        match = np.asarray(correspondence, dtype=np.int64)
        if len(match) != len(d_a) or np.any(match < 0) \
                or np.any(match >= len(d_b)):
            raise ValueError("Correspondence does not map graph A into B")
    d_b = d_b[np.ix_(match, match)]

    off = ~np.eye(len(d_a), dtype=bool)
    a, b = d_a[off], d_b[off]
    finite_a, finite_b = np.isfinite(a), np.isfinite(b)
    if np.any(finite_a != finite_b):
        logger.warning("Graphs disagree on connectivity")
        return Distortion(math.inf, math.inf)
    a, b = a[finite_a], b[finite_a]
    if len(a) == 0:
        return Distortion(1.0, 0.0)

    positive = (a > 0) & (b > 0)
    ratios = np.concatenate([b[positive] / a[positive],
                             a[positive] / b[positive]])
    ratios = np.unique(ratios[ratios >= 1.0])
    upper = float(ratios[-1]) if len(ratios) else 1.0

    def cost(L: float) -> float:
        return L + _additive_slack(a, b, L)

    candidates = [1.0, upper]
    if upper > 1.0:
        found = optimize.minimize_scalar(cost, bounds=(1.0, upper),
                                         method="bounded",
                                         options={"xatol": 1e-10})
        best_l = float(found.x)
        candidates.append(best_l)
        nearest = np.argsort(np.abs(ratios - best_l))[:50]
        candidates += [float(x) for x in ratios[nearest]]
    L = min(candidates, key=cost)
    return Distortion(L, _additive_slack(a, b, L))


def cantor_level_graph(depth: int, action: ActionSpec,
                       t: Optional[float] = None,
                       cutoff: Optional[float] = None) -> WarpedGraph:
    """
    The warped graph of a Cantor action on the full net of cantor:depth.

    The level defaults to t = 2^(2·depth − 1). From there on every metric
    edge costs at least the cycle distance between its endpoints, so the
    metric layer does not shorten any path and the level is a copy of the
    box space. The net separation is the smallest scaled distance
    t/2^depth and the cutoff defaults to three times that.
    """
    if action.space.kind != SpaceKind.CANTOR \
            or action.space.depth != depth:
        raise SpaceMismatchError(f"Action {action.name} is not on "
                                 f"cantor:{depth}")
    if t is None:
        t = float(1 << (2 * depth - 1))
    net = build_eps_net(action.space, float(t), t / (1 << depth), seed=0)
    return build_warped_graph(net, action, cutoff=cutoff)
