"""
This module assembles the local, group and coarse Laplacians of a warped
level as sparse symmetric operators on the weighted net.

An operator A on L²(μ_t) is stored through its symmetric form matrix
Q = W·A, W = diag(weights), so that ⟨ξ, Aξ⟩ = ξᵀQξ and A = W⁻¹Q.
"""

import logging
import numpy as np
from scipy import sparse
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Union
from src.warped import (
    AdmissibilityError,
    SnapMode,
    WarpedGraph,
    controlled_kernel,
)
from src.spaces import EpsNet

logger = logging.getLogger(__name__)

SYMMETRY_TOLERANCE = 1e-12
MODES = ("auto", "direct", "composed")


class KernelSymmetryError(ValueError):
    """Raised when a kernel or form that must be symmetric is not."""


def _max_abs(m: sparse.spmatrix) -> float:
    m = sparse.csr_matrix(m)
    return float(np.max(np.abs(m.data))) if m.nnz else 0.0


@dataclass(frozen=True, eq=False)
class SparseSymmetricOperator:
    """
    A self-adjoint operator on L²(μ_t) of a net.

    :ivar form: The symmetric form matrix Q = W·A.
    :ivar weights: The quadrature weights defining W.
    :ivar name: Identifier used in reports.
    :ivar symmetry_defect: Max asymmetry removed while assembling.
    """
    form: sparse.csr_matrix
    weights: np.ndarray
    name: str
    symmetry_defect: float = 0.0

    def __post_init__(self) -> None:
        form = sparse.csr_matrix(self.form)
        object.__setattr__(self, "form", form)
        if form.shape != (len(self.weights), len(self.weights)):
            raise ValueError(f"Form of {self.name} has shape {form.shape} "
                             f"for {len(self.weights)} weights")
        if form.nnz and not np.all(np.isfinite(form.data)):
            raise ValueError(f"Form of {self.name} has non-finite entries")
        asym = _max_abs(form - form.T)
        if asym > SYMMETRY_TOLERANCE * max(1.0, _max_abs(form)):
            logger.error("Form of %s is not symmetric (defect %s)",
                         self.name, asym)
            raise KernelSymmetryError(
                f"Form of {self.name} is not symmetric (defect {asym})"
            )

    @property
    def dim(self) -> int:
        return len(self.weights)

    @property
    def matrix(self) -> sparse.csr_matrix:
        """The operator matrix A = W⁻¹Q."""
        return sparse.csr_matrix(
            sparse.diags(1.0 / self.weights) @ self.form)

    def apply(self, xi: np.ndarray) -> np.ndarray:
        return (self.form @ xi) / self.weights

    def quadratic(self, xi: np.ndarray) -> float:
        """⟨ξ, Aξ⟩ in L²(μ_t)."""
        return float(np.real(np.vdot(xi, self.form @ xi)))

    def rayleigh(self, xi: np.ndarray) -> float:
        norm = float(np.real(np.vdot(xi, self.weights * xi)))
        return self.quadratic(xi) / norm

    def norm_bound(self) -> float:
        """Max absolute row sum of A, an upper bound of ‖A‖."""
        a = self.matrix
        if not a.nnz:
            return 0.0
        return float(np.max(np.abs(a).sum(axis=1)))

    def coordinate_lines(self) -> List[str]:
        """Nonzeros of A as ``i j value`` lines, row-major."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return [f"{int(coo.row[k])} {int(coo.col[k])} "
                f"{float(coo.data[k])!r}" for k in order]


@dataclass(frozen=True, eq=False)
class OperatorBundle:
    """
    The three Laplacians of one level and the ball-mass field φ.

    :ivar coarse: Δ_{E_r}.
    :ivar local: L_r.
    :ivar group: Δ_G.
    :ivar phi: Quadrature ball masses Σ_{t·d(x,y)<r} w_y.
    :ivar r: The scaled radius.
    :ivar graph: The warped graph.
    :ivar mode: The coarse assembly mode used.
    """
    coarse: SparseSymmetricOperator
    local: SparseSymmetricOperator
    group: SparseSymmetricOperator
    phi: np.ndarray
    r: float
    graph: WarpedGraph
    mode: str

    def header(self) -> Dict[str, Any]:
        net = self.graph.net
        return {"dim": net.size, "t": net.t, "epsilon": net.epsilon,
                "r": self.r, "action": self.graph.action.name,
                "mode": self.mode}

    def operator(self, which: str) -> SparseSymmetricOperator:
        try:
            return {"coarse": self.coarse, "local": self.local,
                    "group": self.group}[which]
        except KeyError as e:
            raise ValueError(f"Unknown operator: {which}") from e


def kernel_laplacian(alpha: Union[np.ndarray, sparse.spmatrix],
                     weights: np.ndarray, name: str,
                     ) -> SparseSymmetricOperator:
    """
    Laplacian (Tξ)(x) = Σ_y α(x,y)(ξ(x) − ξ(y)) w_y of a kernel α.

    The kernel is symmetrized as (α + αᵀ)/2 first and the removed defect
    is recorded; the diagonal of α does not contribute.
    """
    a = sparse.csr_matrix(alpha, dtype=float)
    defect = _max_abs(a - a.T)
    if defect > 0:
        logger.warning("Kernel of %s symmetrized, defect %s", name, defect)
        a = sparse.csr_matrix((a + a.T) * 0.5)
    w = sparse.diags(weights)
    m = sparse.csr_matrix(w @ a @ w)
    m.setdiag(0.0)
    m.eliminate_zeros()
    form = sparse.diags(np.asarray(m.sum(axis=1)).ravel()) - m
    return SparseSymmetricOperator(sparse.csr_matrix(form), weights, name,
                                   defect)


def kernel_form(alpha: Union[np.ndarray, sparse.spmatrix], xi: np.ndarray,
                weights: np.ndarray) -> float:
    """
    The quadratic form ½ Σ α(x,y)|ξ(x) − ξ(y)|² w_x w_y of a kernel.

    :raises KernelSymmetryError: If ``alpha`` is not symmetric.
    :raises ValueError: If ``alpha`` has negative entries.
    """
    a = sparse.coo_matrix(alpha, dtype=float)
    if _max_abs(sparse.csr_matrix(a) - sparse.csr_matrix(a).T) > 0:
        logger.error("Kernel is not symmetric")
        raise KernelSymmetryError("Kernel is not symmetric")
    if a.nnz and np.min(a.data) < 0:
        logger.error("Kernel has negative entries")
        raise ValueError("Kernel has negative entries")
    diff = np.abs(xi[a.row] - xi[a.col]) ** 2
    return 0.5 * float(np.sum(a.data * diff * weights[a.row]
                              * weights[a.col]))


def ball_kernel(net: EpsNet, r: float) -> sparse.csr_matrix:
    """Indicator K(x,y) = 1[t·d(x,y) < r], self pairs included."""
    rows, cols, _ = net.pairs_within(r, include_self=True)
    return sparse.csr_matrix((np.ones(len(rows)), (rows, cols)),
                             shape=(net.size, net.size))


def phi_field(net: EpsNet, r: float) -> np.ndarray:
    """Quadrature ball masses φ(x) = Σ_{t·d(x,y)<r} w_y."""
    return ball_kernel(net, r) @ net.weights


def assemble_local(net: EpsNet, r: float) -> SparseSymmetricOperator:
    """
    The local Laplacian (L_r ξ)(x) = ∫_{B} (ξ(x) − ξ(y)) dμ_t(y) over the
    ball of scaled radius r, by quadrature with the net weights.

    :raises ValueError: If ``r`` is not positive.
    """
    if r <= 0:
        raise ValueError(f"Radius must be positive, got {r}")
    op = kernel_laplacian(ball_kernel(net, r), net.weights, "local")
    if op.form.count_nonzero() == 0:
        logger.warning("Balls of radius r=%s contain only their centers "
                       "at t=%s; local Laplacian is zero", r, net.t)
    return op


def _generator_permutation(graph: WarpedGraph, s: int) -> sparse.csr_matrix:
    n = graph.size
    return sparse.csr_matrix(
        (np.ones(n), (np.arange(n), graph.targets[s])), shape=(n, n))


def assemble_group(graph: WarpedGraph) -> SparseSymmetricOperator:
    """
    The group Laplacian Δ_G = Σ_s (I − P_s) on the snapped generator maps,
    as the form ½ Σ_s (I − P_s)ᵀ W (I − P_s).

    :raises ValueError: If the graph is not in snap mode.
    """
    if graph.snap_mode != SnapMode.SNAP:
        logger.error("The group Laplacian needs a snap-mode graph")
        raise ValueError("The group Laplacian needs a snap-mode graph")
    n = graph.size
    w = sparse.diags(graph.net.weights)
    eye = sparse.identity(n, format="csr")
    form = sparse.csr_matrix((n, n))
    for s in range(graph.action.size):
        collisions = n - len(np.unique(graph.targets[s]))
        if collisions:
            logger.debug("Generator %s: %d snap collisions",
                         graph.action.labels[s], collisions)
        d = eye - _generator_permutation(graph, s)
        form = form + d.T @ w @ d
    form = sparse.csr_matrix(form * 0.5)
    form.eliminate_zeros()
    return SparseSymmetricOperator(form, graph.net.weights, "group")


def assemble_coarse(
        graph: WarpedGraph,
        r: float,
        mode: str = "auto",
        local: Optional[SparseSymmetricOperator] = None,
        group: Optional[SparseSymmetricOperator] = None
        ) -> SparseSymmetricOperator:
    """
    The coarse Laplacian Δ_{E_r}.

    ``direct`` builds it from the E_r counting kernel and needs an
    admissible r. ``composed`` evaluates |S|φ − (|S| − Δ_G)(φ − L_r) from
    the local and group parts and only warns on an inadmissible r.
    ``auto`` uses composed on snap-exact graphs, direct otherwise.

    :raises AdmissibilityError: In direct mode, for an inadmissible r.
    :raises ValueError: On an unknown mode.
    """
    if mode not in MODES:
        raise ValueError(f"Unknown coarse assembly mode: {mode}")
    if mode == "auto":
        mode = "composed" if graph.snap_exact else "direct"
    weights = graph.net.weights

    if mode == "direct":
        alpha = controlled_kernel(graph, r)
        op = kernel_laplacian(alpha, weights, "coarse")
        logger.info("Direct coarse Laplacian at t=%s, r=%s", graph.t, r)
        return op

    try:
        graph.check_admissible(r)
    except AdmissibilityError as e:
        logger.warning("Composed coarse Laplacian with %s", e)
    if local is None:
        local = assemble_local(graph.net, r)
    if group is None:
        group = assemble_group(graph)
    n = graph.size
    size = graph.action.size
    eye = sparse.identity(n, format="csr")
    phi = sparse.diags(phi_field(graph.net, r))
    a = size * phi - (size * eye - group.matrix) @ (phi - local.matrix)
    form = sparse.csr_matrix(sparse.diags(weights) @ a)
    defect = _max_abs(form - form.T)
    if defect > SYMMETRY_TOLERANCE * max(1.0, _max_abs(form)):
        logger.warning("Composed coarse form symmetrized, defect %s",
                       defect)
    form = sparse.csr_matrix((form + form.T) * 0.5)
    logger.info("Composed coarse Laplacian at t=%s, r=%s", graph.t, r)
    return SparseSymmetricOperator(form, weights, "coarse", defect)


def assemble_bundle(graph: WarpedGraph, r: float,
                    mode: str = "auto") -> OperatorBundle:
    """Assemble all three Laplacians and φ of one level."""
    local = assemble_local(graph.net, r)
    group = assemble_group(graph)
    chosen = mode if mode != "auto" else (
        "composed" if graph.snap_exact else "direct")
    coarse = assemble_coarse(graph, r, chosen, local=local, group=group)
    return OperatorBundle(coarse, local, group, phi_field(graph.net, r),
                          r, graph, chosen)


def decomposition_residual(graph: WarpedGraph, r: float) -> float:
    """
    Max-norm distance between the direct and composed coarse Laplacians.

    :raises AdmissibilityError: If r is inadmissible.
    """
    direct = assemble_coarse(graph, r, "direct").matrix
    composed = assemble_coarse(graph, r, "composed").matrix
    residual = _max_abs(direct - composed)
    logger.info("Decomposition residual at t=%s: %s", graph.t, residual)
    return residual


def equivariance_defect(graph: WarpedGraph,
                        op: SparseSymmetricOperator) -> float:
    """:returns: max over s of ‖P_s A P_s⁻¹ − A‖_max."""
    a = op.matrix
    worst = 0.0
    for s in range(graph.action.size):
        p = _generator_permutation(graph, s)
        worst = max(worst, _max_abs(p @ a @ p.T - a))
    return worst
