"""
This module holds the eigensolvers and the spectral experiments run on
warped levels: bottom spectra, gaps across levels, Weyl counting,
eigenvalue accumulation windows, and the heat-kernel sandwich on flat
models.
"""

import math
import logging
import numpy as np
from scipy import linalg, special
from scipy.sparse import diags, linalg as sparse_linalg
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union
from src.actions import ActionSpec, catalog
from src.escalation import BudgetExhausted, escalate
from src.operators import SparseSymmetricOperator, assemble_bundle
from src.spaces import (
    EpsNet,
    ModelSpace,
    SpaceKind,
    build_arithmetic_net,
    build_eps_net,
    unit_ball_volume,
)
from src.warped import build_warped_graph

logger = logging.getLogger(__name__)

DENSE_LIMIT = 4000
RESIDUAL_TOLERANCE = 1e-8
KERNEL_TOLERANCE = 1e-9


class SpectrumConvergenceError(RuntimeError):
    """
    Raised when the iterative eigensolver does not converge.

    :ivar residuals: Residual norms of the best available pairs.
    """
    def __init__(self, message: str, residuals: np.ndarray) -> None:
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    """
    The k smallest eigenpairs of A ξ = λ ξ in L²(μ_t).

    :ivar operator: Operator name.
    :ivar eigenvalues: Ascending eigenvalues.
    :ivar residuals: ‖Aξ − λξ‖ for W-normalized ξ.
    :ivar gap: λ₂, the bottom of the spectrum off the constants.
    :ivar t: The level.
    :ivar metadata: Action, ε, r, seed and solver details.
    :ivar vectors: W-orthonormal eigenvectors as columns.
    """
    operator: str
    eigenvalues: np.ndarray
    residuals: np.ndarray
    gap: float
    t: Optional[float] = None
    metadata: Dict[str, Any] = field(default_factory=dict)
    vectors: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if np.any(np.diff(self.eigenvalues) < 0):
            raise ValueError("Eigenvalues must be ascending")

    @property
    def kernel_ok(self) -> bool:
        """Whether λ₁ vanishes within tolerance."""
        return abs(float(self.eigenvalues[0])) <= KERNEL_TOLERANCE

    def rows(self) -> List[Dict[str, Any]]:
        return [{"level": self.t, "index": i, "eigenvalue": float(lam),
                 "residual": float(res)}
                for i, (lam, res) in enumerate(zip(self.eigenvalues,
                                                   self.residuals))]


def _residuals(op: SparseSymmetricOperator, values: np.ndarray,
               vectors: np.ndarray) -> np.ndarray:
    w = op.weights
    raw = op.form @ vectors - (w[:, None] * vectors) * values[None, :]
    # L² norm of W⁻¹(Qξ − λWξ), relative to ‖ξ‖
    num = np.sqrt(np.sum(raw * raw / w[:, None], axis=0))
    den = np.sqrt(np.sum(w[:, None] * vectors * vectors, axis=0))
    return num / den


@escalate(budget="ncv", retries=3)
def _shift_invert(op: SparseSymmetricOperator, k: int, sigma: float, *,
                  ncv: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    ncv = min(op.dim - 1, max(ncv, 2 * k + 1))
    try:
        values, vectors = sparse_linalg.eigsh(
            op.form.tocsc(), k=k, M=diags(op.weights).tocsc(),
            sigma=sigma, which="LM", ncv=ncv, maxiter=50 * op.dim,
            tol=1e-12,
        )
    except sparse_linalg.ArpackNoConvergence as e:
        raise BudgetExhausted(f"ARPACK did not converge with ncv={ncv}",
                              detail=(e.eigenvalues, e.eigenvectors)) from e
    return values, vectors


def bottom_spectrum(
        op: SparseSymmetricOperator,
        k: int,
        t: Optional[float] = None,
        metadata: Optional[Dict[str, Any]] = None
        ) -> SpectrumReport:
    """
    The ``k`` smallest eigenpairs of the weighted problem Qξ = λWξ.

    Dense for dimensions up to :data:`DENSE_LIMIT`; otherwise shift-invert
    Lanczos at σ = −10⁻³·‖A‖ with a Krylov size that is doubled on
    non-convergence.

    :param op: The operator.
    :param k: Number of eigenpairs (1 ≤ k ≤ dim).
    :param t: The level, recorded in the report.
    :param metadata: Provenance recorded in the report.
    :raises ValueError: If ``k`` is out of range.
    :raises SpectrumConvergenceError: If the iterative solver fails.
    """
    if not 1 <= k <= op.dim:
        raise ValueError(f"k={k} is out of range for dimension {op.dim}")
    meta = dict(metadata or {})
    norm = op.norm_bound()
    if op.dim <= DENSE_LIMIT:
        values, vectors = linalg.eigh(op.form.toarray(), np.diag(op.weights),
                                      subset_by_index=[0, k - 1])
        meta["solver"] = "dense"
    else:
        sigma = -1e-3 * max(norm, 1.0)
        try:
            values, vectors = _shift_invert(op, k, sigma,
                                            ncv=max(2 * k + 1, 20))
        except BudgetExhausted as e:
            partial = e.detail[1] if e.detail else None
            res = (np.asarray([]) if partial is None or not len(partial)
                   else _residuals(op, e.detail[0], partial))
            logger.error("Eigensolver failed for %s: %s", op.name, e)
            raise SpectrumConvergenceError(
                f"Eigensolver failed for {op.name}: {e}", res) from e
        order = np.argsort(values)
        values, vectors = values[order], vectors[:, order]
        meta["solver"] = "shift-invert"
    residuals = _residuals(op, values, vectors)
    worst = float(np.max(residuals)) if len(residuals) else 0.0
    if worst > RESIDUAL_TOLERANCE * max(norm, 1.0):
        logger.warning("Residual %s of %s exceeds tolerance", worst, op.name)
    gap = float(values[1]) if k >= 2 else math.nan
    logger.debug("Bottom spectrum of %s: %s", op.name, values[:4])
    return SpectrumReport(op.name, values, residuals, gap, t, meta, vectors)


@dataclass(frozen=True)
class LevelGap:
    """Spectral data of one level of a sweep."""
    t: float
    size: int
    lambda2: float
    phi: float
    normalized: float
    action_gap: float


@dataclass(frozen=True)
class GapSweepReport:
    """
    Normalized gaps λ₂(Δ_{E_r})/φ across levels.

    :ivar levels: One entry per level, in increasing t.
    :ivar r: The scaled radius used at every level.
    """
    action: str
    r: float
    levels: Tuple[LevelGap, ...]

    @property
    def min_normalized(self) -> float:
        return min(level.normalized for level in self.levels)

    @property
    def ratio_last_first(self) -> float:
        first = self.levels[0].normalized
        if first == 0:
            return math.nan
        return self.levels[-1].normalized / first


def action_gap(group_lambda2: float, size: int) -> float:
    """
    Lower bound √(λ₂(Δ_G)/(|S| − 1)) of the gap
    min_ξ max_s ‖ξ − π(s)ξ‖/‖ξ‖ over mean-zero ξ.
    """
    if size < 2:
        return 0.0
    return math.sqrt(max(group_lambda2, 0.0) / (size - 1))


def level_net(action: ActionSpec, t: float, epsilon: float,
              seed: int, kind: str = "auto") -> EpsNet:
    """
    The net used at one level: arithmetic on circle and torus (lattice
    size round(t/ε) per axis), full on Cantor levels, greedy otherwise.
    """
    space = action.space
    flat = space.kind in (SpaceKind.CIRCLE, SpaceKind.FLAT_TORUS)
    if kind == "auto":
        kind = "arithmetic" if flat else "greedy"
    if kind == "arithmetic":
        return build_arithmetic_net(space, t, max(2, round(t / epsilon)))
    return build_eps_net(space, t, epsilon, seed)


def _odometer_depth(t: float) -> int:
    depth = round(math.log2(t))
    if depth < 1 or 2.0 ** depth != t:
        logger.error("Odometer levels must be powers of two, got %s", t)
        raise ValueError(f"Odometer levels must be powers of two, got {t}")
    return depth


def gap_across_levels(
        action_name: str,
        levels: Sequence[float],
        epsilon: float,
        r: Union[float, str],
        seed: int = 0,
        params: Optional[Dict[str, Any]] = None,
        mode: str = "auto",
        net_kind: str = "auto"
        ) -> GapSweepReport:
    """
    Normalized spectral gap of the coarse Laplacian at each level.

    The odometer is rebuilt at depth log₂ t for every level. ``r="auto"``
    takes the largest radius admissible at the first level.

    :raises ValueError: If the levels are not increasing.
    """
    levels = [float(t) for t in levels]
    if not levels or any(b <= a for a, b in zip(levels, levels[1:])):
        logger.error("Levels must be increasing: %s", levels)
        raise ValueError(f"Levels must be increasing: {levels}")
    params = dict(params or {})
    rows = []
    radius: Optional[float] = None if r == "auto" else float(r)
    for t in levels:
        if action_name == "odometer":
            params["depth"] = _odometer_depth(t)
        action = catalog(action_name, **params)
        net = level_net(action, t, epsilon, seed, net_kind)
        graph = build_warped_graph(net, action)
        if radius is None:
            radius = graph.admissible_r
        bundle = assemble_bundle(graph, radius, mode)
        k = min(2, net.size)
        coarse = bottom_spectrum(bundle.coarse, k, t)
        group = bottom_spectrum(bundle.group, k, t)
        phi = float(np.mean(bundle.phi))
        lam2 = coarse.gap if k == 2 else 0.0
        rows.append(LevelGap(
            t, net.size, lam2, phi, lam2 / phi,
            action_gap(group.gap if k == 2 else 0.0, action.size),
        ))
        logger.info("Level t=%s: %d points, lambda2=%s, phi=%s",
                    t, net.size, lam2, phi)
    assert radius is not None
    return GapSweepReport(action_name, radius, tuple(rows))


def lattice_count(m: int, q: int) -> int:
    """Number of k ∈ ℤ^m with |k|² ≤ q."""
    if q < 0:
        return 0
    root = math.isqrt(q)
    if m == 1:
        return 2 * root + 1
    return sum(lattice_count(m - 1, q - j * j)
               for j in range(-root, root + 1))


def eigenvalue_count(space: ModelSpace, R: float) -> int:
    """N(R) = #{k : 4π²|k|² ≤ R} for the flat Laplacian."""
    _require_flat(space)
    return lattice_count(space.dimension,
                         math.floor(R / (4.0 * math.pi ** 2)))


def weyl_constant(m: int) -> float:
    """The limit of N(R)/R^{m/2}: ω_m/(2π)^m."""
    return unit_ball_volume(m) / (2.0 * math.pi) ** m


def _require_flat(space: ModelSpace) -> None:
    if space.kind not in (SpaceKind.CIRCLE, SpaceKind.FLAT_TORUS):
        logger.error("Closed-form spectra exist only on circle/torus, "
                     "not %s", space.name)
        raise ValueError(f"Closed-form spectra exist only on circle/torus, "
                         f"not {space.name}")


@dataclass(frozen=True, eq=False)
class WeylReport:
    """Eigenvalue counts N(R) on a log grid and the fitted constant."""
    space: str
    grid: np.ndarray
    counts: np.ndarray
    fitted: float
    oracle: float

    @property
    def relative_error(self) -> float:
        return abs(self.fitted - self.oracle) / self.oracle

    def rows(self) -> List[Dict[str, Any]]:
        m = ModelSpace.parse(self.space).dimension
        return [{"R": float(R), "N": int(n),
                 "fit": self.fitted * float(R) ** (m / 2.0)}
                for R, n in zip(self.grid, self.counts)]


def weyl_counting(space: ModelSpace, R_max: float,
                  points: int = 64) -> WeylReport:
    """
    Exact counts N(R) on a logarithmic grid up to ``R_max`` and the least
    squares fit of N(R) ≈ C·R^{m/2} on the upper half of the grid.
    """
    _require_flat(space)
    if R_max <= 1:
        raise ValueError(f"R_max must exceed 1, got {R_max}")
    m = space.dimension
    grid = np.geomspace(1.0, R_max, points)
    counts = np.array([eigenvalue_count(space, R) for R in grid])
    x = grid[points // 2:] ** (m / 2.0)
    y = counts[points // 2:].astype(float)
    fitted = float(np.dot(x, y) / np.dot(x, x))
    report = WeylReport(space.name, grid, counts, fitted, weyl_constant(m))
    logger.info("Weyl fit on %s: C=%s (oracle %s)", space.name, fitted,
                report.oracle)
    return report


@dataclass(frozen=True)
class AccumulationReport:
    """
    Counts of λ_j/t² in the window [ε, factor·ε] per level.

    :ivar threshold: Least tested t from which every count is ≥ 1, or
        ``None`` if the last level has count 0.
    """
    space: str
    epsilon: float
    factor: float
    levels: Tuple[float, ...]
    counts: Tuple[int, ...]
    threshold: Optional[float]

    @property
    def window(self) -> Tuple[float, float]:
        return (self.epsilon, self.factor * self.epsilon)


def window_count(space: ModelSpace, t: float, epsilon: float,
                 factor: float = 2.0) -> int:
    """#{k : ε ≤ 4π²|k|²/t² ≤ factor·ε}, with multiplicity."""
    scale = t * t / (4.0 * math.pi ** 2)
    low = math.ceil(epsilon * scale)
    high = math.floor(factor * epsilon * scale)
    m = space.dimension
    return lattice_count(m, high) - lattice_count(m, low - 1)


def accumulation_scan(space: ModelSpace, levels: Sequence[float],
                      epsilon: float,
                      factor: float = 2.0) -> AccumulationReport:
    """
    Per-level window counts and the least tested level t₀ with count ≥ 1
    at every tested level t ≥ t₀.

    :raises ValueError: If ε ≤ 0 or factor ≤ 1.
    """
    _require_flat(space)
    if epsilon <= 0 or factor <= 1:
        logger.error("Invalid window [%s, %s·%s]", epsilon, factor, epsilon)
        raise ValueError(f"Window [{epsilon}, {factor}·{epsilon}] must "
                         f"satisfy 0 < ε and factor > 1")
    levels = sorted(float(t) for t in levels)
    counts = tuple(window_count(space, t, epsilon, factor) for t in levels)
    threshold = None
    for t, c in zip(reversed(levels), reversed(counts)):
        if c < 1:
            break
        threshold = t
    logger.info("Accumulation on %s, window [%s, %s]: threshold %s",
                space.name, epsilon, factor * epsilon, threshold)
    return AccumulationReport(space.name, epsilon, factor, tuple(levels),
                              counts, threshold)


@dataclass(frozen=True, eq=False)
class HeatOperator:
    """
    The operator 1 − exp(−Δ_M/t²) on a flat model, diagonal in Fourier.

    :ivar frequencies: One representative k per ±pair, ``(M, m)``.
    :ivar eigenvalues: 4π²|k|².
    :ivar multiplicity: 1 for k = 0, else 2.
    :ivar sigma: 1 − exp(−λ_k/t²).
    """
    space: ModelSpace
    t: float
    frequencies: np.ndarray
    eigenvalues: np.ndarray
    multiplicity: np.ndarray
    sigma: np.ndarray


def _half_lattice(m: int, cap: int) -> np.ndarray:
    axis = np.arange(-cap, cap + 1)
    ks = np.stack(np.meshgrid(*([axis] * m), indexing="ij"),
                  axis=-1).reshape(-1, m)
    nonzero = ks != 0
    first = np.argmax(nonzero, axis=1)
    lead = ks[np.arange(len(ks)), first]
    keep = (lead > 0) | ~np.any(nonzero, axis=1)
    ks = ks[keep]
    order = np.lexsort(ks.T[::-1])
    ks = ks[order]
    return ks[np.argsort(np.sum(ks * ks, axis=1), kind="stable")]


def heat_operator(space: ModelSpace, t: float, cap: int) -> HeatOperator:
    """Fourier modes with |k|_∞ ≤ ``cap``, sorted by |k|."""
    _require_flat(space)
    ks = _half_lattice(space.dimension, cap)
    lam = 4.0 * math.pi ** 2 * np.sum(ks * ks, axis=1).astype(float)
    mult = np.where(np.any(ks != 0, axis=1), 2, 1)
    sigma = -np.expm1(-lam / (t * t))
    return HeatOperator(space, float(t), ks, lam, mult, sigma)


def local_symbol(space: ModelSpace, t: float, r: float,
                 frequencies: np.ndarray) -> np.ndarray:
    """
    Eigenvalues of the continuum local Laplacian L_r on the Fourier modes:
    vol(B_r) − (2πr/ω)^{m/2} J_{m/2}(rω), ω = 2π|k|/t.

    :raises ValueError: Unless r/t < 1/2.
    """
    _require_flat(space)
    if r / t >= 0.5:
        raise ValueError(f"Closed form needs r/t < 1/2, got {r / t}")
    m = space.dimension
    norm = np.sqrt(np.sum(np.asarray(frequencies, float) ** 2, axis=-1))
    omega = 2.0 * math.pi * norm / t
    volume = unit_ball_volume(m) * r ** m
    out = np.zeros_like(omega)
    nz = omega > 0
    if m == 1:
        out[nz] = 2.0 * r - 2.0 * np.sin(r * omega[nz]) / omega[nz]
    else:
        w = omega[nz]
        out[nz] = volume - (2.0 * math.pi * r / w) ** (m / 2.0) \
            * special.jv(m / 2.0, r * w)
    return out


def sandwich_constant(m: int, r: float) -> float:
    """C = 3(4π)^{m/2} exp(r²/4)."""
    return 3.0 * (4.0 * math.pi) ** (m / 2.0) * math.exp(r * r / 4.0)


@dataclass(frozen=True, eq=False)
class SandwichReport:
    """
    Outcome of 0 ≤ L_r ≤ C(1 − e^{−Δ/t²}) ≤ D·L_R + ε checked per mode.

    :ivar t0: Least tested t from which the first inequality holds.
    :ivar R: The radius found for the second inequality (``None``: FAIL).
    :ivar D: The fitted constant at ``R``.
    :ivar violation_first: Max of λ_r − Cσ (and −λ_r) at t ≥ t0.
    :ivar violation_second: Max of σ − Dλ_R − ε at the chosen R.
    :ivar trial_violation: Worst multiplicity-weighted mean excess over
        random Fourier combinations, first inequality at t ≥ t0 and second
        at R. A PASS needs it within the kernel tolerance.
    :ivar worst: The worst offending mode of a FAIL.
    :ivar rows: CSV rows (inequality, t, k, lhs, rhs, margin).
    """
    space: str
    r: float
    R: Optional[float]
    levels: Tuple[float, ...]
    C: float
    D: Optional[float]
    epsilon_target: float
    t0: Optional[float]
    violation_first: float
    violation_second: float
    trial_violation: float
    worst: Dict[str, Any] = field(default_factory=dict)
    rows: List[Dict[str, Any]] = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return (self.t0 is not None and self.R is not None
                and self.trial_violation <= KERNEL_TOLERANCE)


def _mode_label(k: np.ndarray) -> str:
    return ";".join(str(int(c)) for c in k)


def _trial_excess(rng: np.random.Generator, trials: int,
                  multiplicity: np.ndarray, excess: np.ndarray) -> float:
    # weighted mean of the per-mode excess
    coeff = rng.random((trials, len(excess))) * multiplicity
    return float(np.max(coeff @ excess / coeff.sum(axis=1)))


def sandwich_check(
        space: ModelSpace,
        levels: Sequence[float],
        r: float,
        epsilon_target: float = 0.01,
        trials: int = 20,
        cap: int = 500,
        low_cap: int = 10,
        R_cap: float = 50.0,
        seed: int = 0
        ) -> SandwichReport:
    """
    Check both heat-kernel sandwich inequalities mode by mode.

    The first inequality uses C = 3(4π)^{m/2}e^{r²/4}. For the second, R
    grows from r in steps of r/2; D(R) is the largest σ/λ_R over modes
    with 1 ≤ |k|_∞ ≤ ``low_cap`` at every level, and the first R for
    which σ ≤ D·λ_R + ε_target holds on all modes up to ``cap`` is kept.
    Random Fourier combinations (``trials``) check both inequalities as
    quadratic forms.
    """
    _require_flat(space)
    levels = tuple(sorted(float(t) for t in levels))
    m = space.dimension
    C = sandwich_constant(m, r)
    heats = [heat_operator(space, t, cap) for t in levels]
    rows: List[Dict[str, Any]] = []
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    first_ok = []
    first_trials = []
    first_excess = []
    for heat in heats:
        lam = local_symbol(space, heat.t, r, heat.frequencies)
        rhs = C * heat.sigma
        excess = np.maximum(lam - rhs, -lam)
        first_excess.append(float(np.max(excess)))
        first_ok.append(bool(np.all(excess <= KERNEL_TOLERANCE)))
        first_trials.append(_trial_excess(rng, trials, heat.multiplicity,
                                          lam - rhs))
        for k, a, b in zip(heat.frequencies, lam, rhs):
            rows.append({"inequality": "first", "t": heat.t,
                         "k": _mode_label(k), "lhs": float(a),
                         "rhs": float(b), "margin": float(b - a)})
    t0 = None
    for t, ok in zip(reversed(levels), reversed(first_ok)):
        if not ok:
            break
        t0 = t
    violation_first = max(excess for t, excess in zip(levels, first_excess)
                          if t0 is not None and t >= t0) \
        if t0 is not None else max(first_excess)
    trial_violation = max(trial for t, trial in zip(levels, first_trials)
                          if t0 is None or t >= t0)

    R_limit = min(R_cap, 0.5 * min(levels))
    R = r
    found: Optional[Tuple[float, float, float]] = None
    worst: Dict[str, Any] = {}
    while R < R_limit:
        D = 0.0
        for heat in heats:
            low = np.max(np.abs(heat.frequencies), axis=1) <= low_cap
            low &= np.any(heat.frequencies != 0, axis=1)
            lam_R = local_symbol(space, heat.t, R, heat.frequencies[low])
            D = max(D, float(np.max(heat.sigma[low] / lam_R)))
        violation = -math.inf
        for heat in heats:
            lam_R = local_symbol(space, heat.t, R, heat.frequencies)
            gap = heat.sigma - (D * lam_R + epsilon_target)
            i = int(np.argmax(gap))
            if gap[i] > violation:
                violation = float(gap[i])
                worst = {"t": heat.t, "k": _mode_label(heat.frequencies[i]),
                         "R": R, "D": D, "excess": violation}
        logger.debug("Sandwich R=%s: D=%s, violation %s", R, D, violation)
        if violation <= 0:
            found = (R, D, violation)
            break
        R += r / 2.0

    if found is None:
        logger.warning("No R below %s satisfies the second inequality; "
                       "worst mode %s", R_limit, worst)
        return SandwichReport(space.name, r, None, levels, C, None,
                              epsilon_target, t0, violation_first,
                              float(worst.get("excess", math.inf)),
                              trial_violation, worst, rows)

    R, D, violation = found
    for heat in heats:
        lam_R = local_symbol(space, heat.t, R, heat.frequencies)
        rhs = D * lam_R + epsilon_target
        trial_violation = max(trial_violation, _trial_excess(
            rng, trials, heat.multiplicity, heat.sigma - rhs))
        for k, a, b in zip(heat.frequencies, heat.sigma, rhs):
            rows.append({"inequality": "second", "t": heat.t,
                         "k": _mode_label(k), "lhs": float(a),
                         "rhs": float(b), "margin": float(b - a)})
    worst = {} if t0 is not None else {"inequality": "first",
                                       "excess": violation_first}
    if not worst and trial_violation > KERNEL_TOLERANCE:
        worst = {"inequality": "trials", "excess": trial_violation}
    logger.info("Sandwich on %s: t0=%s, R=%s, D=%s", space.name, t0, R, D)
    return SandwichReport(space.name, r, R, levels, C, D, epsilon_target,
                          t0, violation_first, violation, trial_violation,
                          worst, rows)
