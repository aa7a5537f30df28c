"""
This module covers the G-invariant kernel sector on group spaces: lifting
a section f to the kernel k(x, y) = f(y⁻¹x), the unitary
W: k ↦ √(μ_t(M))·k(·, e) and its intertwining with the local Laplacian,
and the joint spectrum of the group and local Laplacians on circle
lattice nets.
"""

import math
import logging
import numpy as np
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple
from src.actions import ActionSpec
from src.operators import (
    SparseSymmetricOperator,
    assemble_coarse,
    assemble_local,
)
from src.spaces import EpsNet, SpaceKind, cantor_codes
from src.spectra import bottom_spectrum
from src.warped import build_warped_graph

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-10


class NonCommutingError(ValueError):
    """Raised when the group and local Laplacians need not commute."""


def quotient_indices(net: EpsNet) -> Tuple[np.ndarray, float]:
    """
    Index matrix ``Q[x, y] = snap(p_y⁻¹ p_x)`` and the largest scaled snap
    error. Lattice and Cantor nets use exact index arithmetic.
    """
    n = net.size
    if net.kind == "full":
        codes = cantor_codes(net.points)
        return (codes[:, None] - codes[None, :]) % n, 0.0
    if net.kind == "arithmetic":
        per_axis = int(net.per_axis or 1)
        shape = (per_axis,) * net.space.coord_width
        multi = np.stack(np.unravel_index(np.arange(n), shape), axis=-1)
        diff = (multi[:, None, :] - multi[None, :, :]) % per_axis
        return np.ravel_multi_index(tuple(np.moveaxis(diff, -1, 0)),
                                    shape), 0.0
    space = net.space
    inverses = space.inverse(net.points)
    index = np.empty((n, n), dtype=np.int64)
    worst = 0.0
    for y in range(n):
        quotient = space.multiply(inverses[y:y + 1], net.points)
        index[:, y], err = net.nearest(quotient)
        worst = max(worst, float(np.max(err)))
    if worst >= net.epsilon:
        logger.warning("Kernel lift snap error %s is not below epsilon=%s",
                       worst, net.epsilon)
    else:
        logger.debug("Kernel lift snap error %s", worst)
    return index, worst


def lift_kernel(net: EpsNet, f: np.ndarray) -> np.ndarray:
    """
    The invariant kernel K[x, y] = f(snap(y⁻¹x)) of a section ``f``.

    :raises ValueError: If ``f`` does not match the net.
    """
    f = np.asarray(f)
    if f.shape != (net.size,):
        raise ValueError(f"Section has shape {f.shape}, net has "
                         f"{net.size} points")
    index, _ = quotient_indices(net)
    return f[index]


@dataclass(frozen=True, eq=False)
class InvariantKernel:
    """
    A kernel determined by its section f(z) = k(z, e).

    :ivar net: The net of a group space.
    :ivar f: The section.
    """
    net: EpsNet
    f: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return lift_kernel(self.net, self.f)

    def invariance_defect(self, action: ActionSpec,
                          targets: np.ndarray) -> float:
        """
        :param targets: Snapped generator maps ``targets[s, i]``.
        :returns: max over s of |K[σx, σy] − K[x, y]|.
        """
        k = self.matrix
        worst = 0.0
        for s in range(action.size):
            sigma = targets[s]
            worst = max(worst, float(np.max(np.abs(
                k[np.ix_(sigma, sigma)] - k))))
        return worst


@dataclass(frozen=True)
class IntertwiningReport:
    """
    Residuals of π(L_r) restricted to invariant kernels against W*L_rW.

    :ivar section: ‖section(L_r∘K) − L_r f‖/‖f‖.
    :ivar kernel: ‖L_r∘K − lift(L_r f)‖_HS/‖K‖_HS.
    :ivar isometry: |‖K‖_HS − √μ_t(M)·‖f‖| / (√μ_t(M)·‖f‖).
    :ivar snap_error: Largest scaled snap error of the lift.
    """
    section: float
    kernel: float
    isometry: float
    snap_error: float
    tolerance: float

    @property
    def residual(self) -> float:
        return max(self.section, self.kernel, self.isometry)

    @property
    def passed(self) -> bool:
        return self.residual <= self.tolerance


def _weighted_norm(weights: np.ndarray, v: np.ndarray) -> float:
    return math.sqrt(float(np.real(np.vdot(v, weights * v))))


def _hs_norm(weights: np.ndarray, k: np.ndarray) -> float:
    return math.sqrt(float(np.real(np.einsum(
        "x,y,xy->", weights, weights, np.abs(k) ** 2))))


def w_unitary_residual(
        net: EpsNet,
        r: float,
        f: np.ndarray,
        local: Optional[SparseSymmetricOperator] = None,
        tolerance: Optional[float] = None
        ) -> IntertwiningReport:
    """
    Intertwining and isometry residuals of W for the section ``f``.

    L_r acts on the first variable of the lifted kernel. The section
    residual compares the column at e with L_r f, the kernel residual
    compares the whole kernel with the lift of L_r f, and the isometry
    residual compares the weighted Hilbert-Schmidt norm of the kernel with
    √μ_t(M)·‖f‖.

    :param tolerance: PASS threshold; 1e-10 by default, 1e-2 on SO(3).
    """
    if tolerance is None:
        tolerance = 1e-2 if net.space.kind == SpaceKind.SO3 \
            else DEFAULT_TOLERANCE
    if local is None:
        local = assemble_local(net, r)
    f = np.asarray(f)
    index, snap_error = quotient_indices(net)
    k = f[index]
    a = local.matrix
    lk = a @ k
    lf = local.apply(f)
    w = net.weights
    f_norm = _weighted_norm(w, f)
    k_norm = _hs_norm(w, k)
    scale = math.sqrt(net.scaled_mass)
    if f_norm == 0:
        return IntertwiningReport(0.0, 0.0, 0.0, snap_error, tolerance)
    e = net.identity_index()
    section = _weighted_norm(w, lk[:, e] - lf) / f_norm
    kernel = _hs_norm(w, lk - lf[index]) / k_norm
    isometry = abs(k_norm - scale * f_norm) / (scale * f_norm)
    report = IntertwiningReport(section, kernel, isometry, snap_error,
                                tolerance)
    logger.info("W residuals: section %s, kernel %s, isometry %s",
                section, kernel, isometry)
    return report


@dataclass(frozen=True)
class JointSpectrumSample:
    """One Fourier mode with its joint eigenvalues and f = f(λ₁, λ₂)."""
    mode: int
    lambda1: float
    lambda2: float
    f_value: float
    phi: float
    size: int


def joint_f(lambda1: np.ndarray, lambda2: np.ndarray, phi: float,
            size: int) -> np.ndarray:
    """f(λ₁, λ₂) = φ|S| − (|S| − λ₁)(φ − λ₂)."""
    return phi * size - (size - np.asarray(lambda1)) \
        * (phi - np.asarray(lambda2))


def zero_set_lambda2(lambda1: np.ndarray, phi: float,
                     size: int) -> np.ndarray:
    """The λ₂ with f(λ₁, λ₂) = 0: φ(1 − |S|/(|S| − λ₁))."""
    return phi * (1.0 - size / (size - np.asarray(lambda1, dtype=float)))


@dataclass(frozen=True, eq=False)
class JointSpectrumReport:
    """
    Joint spectrum of Δ_G and L_r on a circle lattice net.

    :ivar samples: One sample per Fourier mode.
    :ivar mismatch: Max distance between the bottom of the coarse
        spectrum and the sorted f values.
    :ivar grid_margin: min of f − δφ over the grid rectangle.
    """
    samples: Tuple[JointSpectrumSample, ...]
    compared: int
    mismatch: float
    delta: float
    grid_margin: float
    tolerance: float
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.mismatch <= self.tolerance and self.grid_margin >= 0

    def rows(self) -> List[Dict[str, Any]]:
        return [{"mode": s.mode, "lambda1": s.lambda1,
                 "lambda2": s.lambda2, "f_value": s.f_value}
                for s in self.samples]


def joint_spectrum(
        action: ActionSpec,
        net: EpsNet,
        r: float,
        bottom: int = 50,
        delta: float = 0.1,
        grid: int = 101,
        tolerance: float = 2e-3
        ) -> JointSpectrumReport:
    """
    Circulant symbols of Δ_G and L_r on the lattice net {j/N}, the values
    f(λ₁, λ₂) per mode, and their comparison with the bottom of the
    composed coarse spectrum.

    :raises NonCommutingError: Unless the action is a circle rotation and
        the net is a lattice net.
    """
    if action.name != "circle-rotation" or net.kind != "arithmetic" \
            or net.space.kind != SpaceKind.CIRCLE:
        logger.error("Joint spectrum needs a circle rotation on a lattice "
                     "net, got %s on a %s net", action.name, net.kind)
        raise NonCommutingError(
            "Joint spectrum needs commuting circulant Laplacians: a "
            "circle-rotation action on an arithmetic circle net"
        )
    n = net.size
    alpha = float(action.generators.elements[
        action.labels.index("g")][0])
    alpha_hat = round(alpha * n) / n
    size = action.size
    w = net.t / n
    reach = int(math.floor(r * n / net.t))
    offsets = np.arange(-reach, reach + 1)
    offsets = offsets[net.t * np.abs(offsets) / n < r]
    modes = np.arange(n)
    lambda1 = 2.0 - 2.0 * np.cos(2.0 * math.pi * modes * alpha_hat)
    lambda2 = w * np.sum(1.0 - np.cos(
        2.0 * math.pi * np.outer(modes, offsets) / n), axis=1)
    phi = w * len(offsets)
    values = joint_f(lambda1, lambda2, phi, size)
    samples = tuple(JointSpectrumSample(int(k), float(a), float(b),
                                        float(c), phi, size)
                    for k, a, b, c in zip(modes, lambda1, lambda2, values))

    graph = build_warped_graph(net, action)
    coarse = assemble_coarse(graph, r, "composed")
    compared = min(bottom, n)
    spectrum = bottom_spectrum(coarse, compared, net.t)
    mismatch = float(np.max(np.abs(
        spectrum.eigenvalues - np.sort(values)[:compared])))

    l1 = np.linspace(delta, 2 * size - delta, grid)[1:-1]
    l2 = np.linspace(0.0, 2.0 * phi, grid)
    f_grid = joint_f(l1[:, None], l2[None, :], phi, size)
    margin = float(np.min(f_grid - delta * phi))
    logger.info("Joint spectrum: mismatch %s over %d modes, grid margin %s",
                mismatch, compared, margin)
    return JointSpectrumReport(
        samples, compared, mismatch, delta, margin, tolerance,
        {"N": n, "t": net.t, "r": r, "alpha_hat": alpha_hat, "phi": phi,
         "generators": size},
    )
