import math
import numpy as np
import pytest
from src.actions import circle_rotation, so3_rational_rotations
from src.invariant import (
    InvariantKernel,
    NonCommutingError,
    joint_f,
    joint_spectrum,
    lift_kernel,
    quotient_indices,
    w_unitary_residual,
    zero_set_lambda2,
)
from src.spaces import ModelSpace, build_arithmetic_net, build_eps_net
from src.warped import build_warped_graph


@pytest.fixture(scope="module")
def circle_net():
    return build_arithmetic_net(ModelSpace.circle(), 10.0, 256)


class TestKernelLift:
    def test_lattice_quotient(self):
        net = build_arithmetic_net(ModelSpace.circle(), 4.0, 8)
        index, error = quotient_indices(net)
        x, y = np.indices((8, 8))
        np.testing.assert_array_equal(index, (x - y) % 8)
        assert error == 0.0

    def test_torus_quotient(self):
        net = build_arithmetic_net(ModelSpace.torus(2), 4.0, 4)
        index, _ = quotient_indices(net)
        shifted = net.space.multiply(net.space.inverse(net.points[5:6]),
                                     net.points)
        expected, _ = net.nearest(shifted)
        np.testing.assert_array_equal(index[:, 5], expected)

    def test_cantor_quotient(self):
        net = build_eps_net(ModelSpace.cantor(3), 8.0, 0.5, seed=0)
        index, _ = quotient_indices(net)
        np.testing.assert_array_equal(index[:, 0], np.arange(8))
        assert index[3, 5] == 6

    def test_lift_shape(self, circle_net):
        with pytest.raises(ValueError, match="shape"):
            lift_kernel(circle_net, np.ones(3))

    def test_lifted_kernel_is_invariant(self, circle_net):
        graph = build_warped_graph(circle_net, circle_rotation())
        f = np.random.default_rng(0).standard_normal(256)
        kernel = InvariantKernel(circle_net, f)
        assert kernel.matrix[:, 0].tolist() == f.tolist()
        assert kernel.invariance_defect(graph.action, graph.targets) == 0.0


class TestUnitaryResidual:
    def test_circle_lattice(self, circle_net):
        f = np.random.default_rng(1).standard_normal(256)
        report = w_unitary_residual(circle_net, 0.4, f)
        assert report.passed
        assert report.tolerance == 1e-10
        assert report.residual <= 1e-10
        assert report.isometry <= 1e-12

    def test_cantor_net(self):
        net = build_eps_net(ModelSpace.cantor(5), 32.0, 0.5, seed=0)
        f = np.random.default_rng(2).standard_normal(32)
        report = w_unitary_residual(net, 5.0, f)
        assert report.passed

    def test_zero_section(self, circle_net):
        report = w_unitary_residual(circle_net, 0.4, np.zeros(256))
        assert report.residual == 0.0

    def test_so3_tolerance(self):
        space = ModelSpace.so3()
        net = build_eps_net(space, 4.0, 2.5, seed=0)
        f = np.cos(space.distances(net.points, space.identity()))
        report = w_unitary_residual(net, 1.8, f)
        assert report.tolerance == 1e-2
        assert report.section <= 1e-12
        assert 0 < report.snap_error <= net.epsilon
        # cos of d(z, e) is 1/t-Lipschitz in the scaled metric
        assert report.kernel <= 10 * report.snap_error / net.t


class TestJointSpectrum:
    def test_function_and_zero_set(self):
        lambda1 = np.array([0.5, 1.0, 2.5])
        lambda2 = zero_set_lambda2(lambda1, 2.0, 3)
        np.testing.assert_allclose(joint_f(lambda1, lambda2, 2.0, 3), 0.0,
                                   atol=1e-12)
        assert joint_f(0.0, 0.0, 2.0, 3) == 0.0

    def test_circle_lattice(self, circle_net):
        report = joint_spectrum(circle_rotation(), circle_net, 1.0)
        assert report.passed
        assert report.compared == 50
        assert report.mismatch <= 1e-8
        assert report.grid_margin >= 0
        assert len(report.samples) == 256
        zero = report.samples[0]
        assert zero.lambda1 == 0.0
        assert zero.f_value == pytest.approx(0.0, abs=1e-12)
        assert report.metadata["alpha_hat"] == round(
            (math.sqrt(2) - 1) * 256) / 256
        assert set(report.rows()[1]) == {"mode", "lambda1", "lambda2",
                                         "f_value"}

    def test_needs_circle_rotation(self):
        action = so3_rational_rotations()
        net = build_eps_net(action.space, 4.0, 2.5, seed=0)
        with pytest.raises(NonCommutingError):
            joint_spectrum(action, net, 1.8)

    def test_needs_lattice_net(self):
        net = build_eps_net(ModelSpace.circle(), 10.0, 1.0, seed=0)
        with pytest.raises(NonCommutingError):
            joint_spectrum(circle_rotation(), net, 0.4)
