import math
import logging
import numpy as np
import pytest
from scipy import sparse
from src.actions import (
    CATALOG,
    catalog,
    circle_rotation,
    so3_rational_rotations,
)
from src.operators import (
    KernelSymmetryError,
    SparseSymmetricOperator,
    assemble_bundle,
    assemble_coarse,
    assemble_group,
    assemble_local,
    ball_kernel,
    decomposition_residual,
    equivariance_defect,
    kernel_form,
    kernel_laplacian,
    phi_field,
)
from src.spaces import ModelSpace, build_arithmetic_net, build_eps_net
from src.spectra import bottom_spectrum, level_net
from src.warped import AdmissibilityError, build_warped_graph


def _fourier_mode(net, k):
    return np.cos(2 * math.pi * k * net.points[:, 0])


def _local_oracle(t, r, k):
    return 2 * r - (t / (math.pi * k)) * math.sin(2 * math.pi * k * r / t)


class TestSparseSymmetricOperator:
    def test_rejects_asymmetric_form(self):
        form = sparse.csr_matrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
        with pytest.raises(KernelSymmetryError):
            SparseSymmetricOperator(form, np.ones(2), "bad")

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            SparseSymmetricOperator(sparse.identity(3), np.ones(2), "bad")

    def test_rejects_non_finite(self):
        form = sparse.csr_matrix(np.array([[np.nan]]))
        with pytest.raises(ValueError, match="non-finite"):
            SparseSymmetricOperator(form, np.ones(1), "bad")

    def test_matrix_and_rayleigh(self):
        form = sparse.csr_matrix(np.array([[2.0, -1.0], [-1.0, 2.0]]))
        op = SparseSymmetricOperator(form, np.array([1.0, 2.0]), "toy")
        np.testing.assert_allclose(op.matrix.toarray(),
                                   [[2.0, -1.0], [-0.5, 1.0]])
        xi = np.array([1.0, 1.0])
        assert op.quadratic(xi) == pytest.approx(2.0)
        assert op.rayleigh(xi) == pytest.approx(2.0 / 3.0)
        assert op.norm_bound() == pytest.approx(3.0)
        assert op.coordinate_lines()[1] == "0 1 -1.0"


class TestKernelLaplacian:
    @pytest.fixture(scope="class")
    def kernel(self):
        rng = np.random.default_rng(0)
        a = rng.random((12, 12)) * (rng.random((12, 12)) < 0.4)
        return a + a.T, rng.random(12) + 0.5

    def test_form_matches_quadratic(self, kernel):
        alpha, weights = kernel
        op = kernel_laplacian(alpha, weights, "toy")
        xi = np.random.default_rng(1).standard_normal(12)
        assert op.quadratic(xi) == pytest.approx(
            kernel_form(alpha, xi, weights), rel=1e-12)

    def test_constants_in_kernel(self, kernel):
        alpha, weights = kernel
        op = kernel_laplacian(alpha, weights, "toy")
        np.testing.assert_allclose(op.apply(np.ones(12)), 0.0, atol=1e-12)

    def test_symmetrizes_and_records_defect(self):
        alpha = np.array([[0.0, 1.0], [0.0, 0.0]])
        op = kernel_laplacian(alpha, np.ones(2), "toy")
        assert op.symmetry_defect == 1.0
        np.testing.assert_allclose(op.form.toarray(),
                                   [[0.5, -0.5], [-0.5, 0.5]])

    def test_form_rejects_asymmetric_kernel(self):
        with pytest.raises(KernelSymmetryError):
            kernel_form(np.array([[0.0, 1.0], [0.0, 0.0]]), np.ones(2),
                        np.ones(2))

    def test_form_rejects_negative_kernel(self):
        with pytest.raises(ValueError, match="negative"):
            kernel_form(-np.ones((2, 2)), np.ones(2), np.ones(2))

    def test_form_is_non_negative(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            n = int(rng.integers(2, 9))
            a = rng.random((n, n)) * (rng.random((n, n)) < 0.5)
            xi = rng.standard_normal(n) * 10.0 ** rng.integers(-3, 4)
            weights = rng.random(n) + 0.01
            assert kernel_form(a + a.T, xi, weights) >= 0.0


class TestLocalLaplacian:
    @pytest.fixture(scope="class")
    def fine_net(self):
        return build_arithmetic_net(ModelSpace.circle(), 10.0, 4105)

    @pytest.fixture(scope="class")
    def fine_local(self, fine_net):
        return assemble_local(fine_net, 1.0)

    def test_phi_is_ball_mass(self, fine_net):
        np.testing.assert_allclose(phi_field(fine_net, 1.0), 2.0,
                                   rtol=1e-12)

    @pytest.mark.parametrize("k", range(1, 11))
    def test_fourier_modes(self, fine_net, fine_local, k):
        local = fine_local
        xi = _fourier_mode(fine_net, k)
        expected = _local_oracle(10.0, 1.0, k)
        np.testing.assert_allclose(local.apply(xi), expected * xi,
                                   atol=1e-3)
        assert local.rayleigh(xi) == pytest.approx(expected, abs=1e-3)

    def test_second_eigenvalue(self):
        net = build_arithmetic_net(ModelSpace.circle(), 10.0, 2005)
        report = bottom_spectrum(assemble_local(net, 1.0), 3, 10.0)
        assert report.kernel_ok
        assert report.gap == pytest.approx(_local_oracle(10.0, 1.0, 1),
                                           abs=1e-3)
        assert abs(report.gap - 0.129634) <= 1e-3
        assert report.eigenvalues[2] == pytest.approx(report.gap, rel=1e-9)

    def test_non_negative(self):
        net = build_eps_net(ModelSpace.so3(), 4.0, 2.5, seed=0)
        local = assemble_local(net, 1.8)
        values = np.linalg.eigvalsh(
            np.diag(net.weights ** -0.5) @ local.form.toarray()
            @ np.diag(net.weights ** -0.5))
        assert values[0] >= -1e-9

    def test_isolated_balls_warn(self, caplog):
        net = build_arithmetic_net(ModelSpace.circle(), 10.0, 10)
        with caplog.at_level(logging.WARNING):
            local = assemble_local(net, 0.5)
        assert local.form.count_nonzero() == 0
        assert "only their centers" in caplog.text

    def test_radius(self, fine_net):
        with pytest.raises(ValueError):
            assemble_local(fine_net, 0.0)

    def test_ball_kernel_includes_self(self):
        net = build_arithmetic_net(ModelSpace.circle(), 10.0, 100)
        k = ball_kernel(net, 0.25)
        assert k.diagonal().min() == 1.0
        assert k.sum(axis=1).max() == 5


class TestGroupLaplacian:
    @pytest.fixture(scope="class")
    def graph(self):
        net = build_arithmetic_net(ModelSpace.circle(), 10.0, 4096)
        return build_warped_graph(net, circle_rotation())

    @pytest.mark.parametrize("k", range(1, 11))
    def test_fourier_modes(self, graph, k):
        group = assemble_group(graph)
        xi = _fourier_mode(graph.net, k)
        shift = round((math.sqrt(2) - 1) * 4096) / 4096
        expected = 2 - 2 * math.cos(2 * math.pi * k * shift)
        np.testing.assert_allclose(group.apply(xi), expected * xi,
                                   atol=1e-10)

    def test_equivariant(self, graph):
        assert equivariance_defect(graph, assemble_group(graph)) < 1e-12
        local = assemble_local(graph.net, 0.4)
        assert equivariance_defect(graph, local) < 1e-12

    def test_needs_snap_mode(self):
        net = build_arithmetic_net(ModelSpace.circle(), 10.0, 64)
        graph = build_warped_graph(net, circle_rotation(),
                                   snap_mode="exact-offnet")
        with pytest.raises(ValueError, match="snap-mode"):
            assemble_group(graph)


class TestCoarseLaplacian:
    @pytest.mark.parametrize("t", [5.0, 10.0, 20.0])
    def test_decomposition(self, t):
        net = build_arithmetic_net(ModelSpace.circle(), t, 1024)
        graph = build_warped_graph(net, circle_rotation())
        assert decomposition_residual(graph, 0.4) <= 1e-10

    def test_auto_mode(self):
        net = build_arithmetic_net(ModelSpace.circle(), 10.0, 256)
        bundle = assemble_bundle(build_warped_graph(net, circle_rotation()),
                                 0.4)
        assert bundle.mode == "composed"
        assert bundle.header()["mode"] == "composed"
        assert bundle.operator("local") is bundle.local
        with pytest.raises(ValueError, match="Unknown operator"):
            bundle.operator("heat")

    def test_auto_mode_on_greedy_net(self):
        action = so3_rational_rotations()
        net = build_eps_net(action.space, 4.0, 2.5, seed=0)
        graph = build_warped_graph(net, action)
        bundle = assemble_bundle(graph, 1.8)
        assert bundle.mode == "direct"
        report = bottom_spectrum(bundle.coarse, 2, 4.0)
        assert report.kernel_ok
        assert report.gap > 0

    def test_direct_needs_admissible_radius(self):
        net = build_arithmetic_net(ModelSpace.circle(), 10.0, 256)
        graph = build_warped_graph(net, circle_rotation())
        with pytest.raises(AdmissibilityError):
            assemble_coarse(graph, 1.0, "direct")

    def test_composed_warns_on_inadmissible_radius(self, caplog):
        net = build_arithmetic_net(ModelSpace.circle(), 10.0, 256)
        graph = build_warped_graph(net, circle_rotation())
        with caplog.at_level(logging.WARNING):
            coarse = assemble_coarse(graph, 1.0, "composed")
        assert "not admissible" in caplog.text
        np.testing.assert_allclose(coarse.apply(np.ones(256)), 0.0,
                                   atol=1e-10)

    def test_unknown_mode(self):
        net = build_arithmetic_net(ModelSpace.circle(), 10.0, 64)
        graph = build_warped_graph(net, circle_rotation())
        with pytest.raises(ValueError, match="Unknown coarse"):
            assemble_coarse(graph, 0.4, "sideways")

    def test_dominates_local(self):
        net = build_arithmetic_net(ModelSpace.circle(), 10.0, 256)
        bundle = assemble_bundle(build_warped_graph(net, circle_rotation()),
                                 0.4)
        rng = np.random.default_rng(2)
        for _ in range(5):
            xi = rng.standard_normal(256)
            assert bundle.coarse.quadratic(xi) >= \
                bundle.local.quadratic(xi) - 1e-9


LEVELS = {
    "circle-rotation": ((5.0, 10.0, 20.0), 0.1),
    "torus-translation": ((4.0, 6.0, 8.0), 0.5),
    "so3-rational-rotations": ((3.0, 4.0, 5.0), 2.5),
    "odometer": ((8.0, 16.0, 32.0), 0.5),
    "identity": ((5.0, 10.0, 20.0), 0.1),
}


def _catalog_action(name, t):
    if name == "odometer":
        return catalog(name, depth=round(math.log2(t)))
    return catalog(name)


class TestPositivity:
    @pytest.mark.parametrize("name", CATALOG)
    def test_forms_are_positive(self, name):
        levels, epsilon = LEVELS[name]
        for t in levels:
            action = _catalog_action(name, t)
            net = level_net(action, t, epsilon, seed=0)
            graph = build_warped_graph(net, action)
            r = min(0.9 * graph.admissible_r, 1.0)
            bundle = assemble_bundle(graph, r)
            scale = np.diag(net.weights ** -0.5)
            for which in ("coarse", "local", "group"):
                op = bundle.operator(which)
                values = np.linalg.eigvalsh(scale @ op.form.toarray()
                                            @ scale)
                assert values[0] >= -1e-9 * max(1.0, op.norm_bound()), \
                    (name, t, which)
