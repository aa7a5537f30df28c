import math
import numpy as np
import pytest
from src.actions import (
    CATALOG,
    ActionSpec,
    FreenessError,
    GeneratorError,
    GeneratorSet,
    apply,
    apply_many,
    catalog,
    circle_rotation,
    identity_action,
    isometry_defect,
    max_free_radius,
    odometer,
    pushforward_statistic,
    so3_rational_rotations,
    torus_translation,
    word_length,
)
from src.spaces import ModelSpace, Point, SpaceMismatchError, haar_sample


class TestGeneratorSet:
    def test_requires_unit(self):
        with pytest.raises(GeneratorError, match="must contain 'e'"):
            GeneratorSet(np.zeros((2, 1)), ("a", "b"), (1, 0))

    def test_requires_symmetry(self):
        with pytest.raises(GeneratorError, match="not symmetric"):
            GeneratorSet(np.zeros((3, 1)), ("e", "a", "b"), (0, 2, 2))

    def test_duplicate_labels(self):
        with pytest.raises(GeneratorError, match="Duplicate"):
            GeneratorSet(np.zeros((2, 1)), ("e", "e"), (0, 1))

    def test_index_and_inverse(self):
        gens = circle_rotation(0.25).generators
        assert gens.index("g^-1") == 2
        assert gens.index(1) == 1
        assert gens.inverse_label("g") == "g^-1"
        assert gens.identity_index == 0
        with pytest.raises(GeneratorError):
            gens.index("h")
        with pytest.raises(GeneratorError):
            gens.index(3)

    def test_action_checks_inverses(self):
        gens = GeneratorSet(np.array([[0.0], [0.1], [0.2]]),
                            ("e", "g", "h"), (0, 2, 1))
        with pytest.raises(GeneratorError, match="not the inverse"):
            ActionSpec(ModelSpace.circle(), gens, "broken")


class TestCatalog:
    @pytest.mark.parametrize("name, params, size, space", [
        ("circle-rotation", {}, 3, "circle"),
        ("torus-translation", {"m": 3}, 3, "torus:3"),
        ("so3-rational-rotations", {}, 5, "so3"),
        ("odometer", {"depth": 6}, 3, "cantor:6"),
        ("identity", {"space": "torus:2"}, 1, "torus:2"),
    ])
    def test_catalog(self, name, params, size, space):
        action = catalog(name, **params)
        assert action.name == name
        assert action.size == size
        assert action.space.name == space
        assert action.generators.contains_identity
        assert name in CATALOG

    def test_unknown_action(self):
        with pytest.raises(ValueError, match="Unknown action"):
            catalog("shift-map")

    def test_bad_parameters(self):
        with pytest.raises(ValueError):
            catalog("torus-translation", m=2, vector=[0.1])

    def test_describe(self):
        info = catalog("circle-rotation", alpha=0.3).describe()
        assert info == {"name": "circle-rotation", "space": "circle",
                        "labels": ["e", "g", "g^-1"],
                        "params": {"alpha": 0.3}}


class TestApply:
    def test_circle_rotation(self):
        action = circle_rotation(0.3)
        x = Point(action.space, np.array([0.8]))
        assert apply(action, "g", x).coords[0] == pytest.approx(0.1)
        assert apply(action, "g^-1", x).coords[0] == pytest.approx(0.5)
        assert apply(action, "e", x).coords[0] == pytest.approx(0.8)

    def test_odometer_adds_one(self):
        action = odometer(4)
        x = Point.from_string(action.space, "1110")
        assert apply(action, "+1", x).as_string() == "0001"
        assert apply(action, "-1", x).as_string() == "0110"

    def test_so3_generator_inverse(self):
        action = so3_rational_rotations()
        xs = haar_sample(action.space, 0, 20)
        back = apply_many(action, "a^-1", apply_many(action, "a", xs))
        assert np.max(action.space.distances(back, xs)) < 1e-12

    def test_space_mismatch(self):
        action = circle_rotation()
        x = Point(ModelSpace.torus(1), np.array([0.2]))
        with pytest.raises(SpaceMismatchError):
            apply(action, "g", x)

    def test_unknown_generator(self):
        action = circle_rotation()
        x = Point(action.space, np.array([0.2]))
        with pytest.raises(GeneratorError):
            apply(action, "h", x)

    def test_word_length(self):
        assert word_length(circle_rotation(), ["e", "g", "g^-1", "e"]) == 2


class TestFreeRadius:
    def test_circle(self):
        action = circle_rotation()
        alpha = math.sqrt(2) - 1
        expected = 0.99 * 0.5 * min(alpha, 1 - 2 * alpha)
        assert max_free_radius(action) == pytest.approx(expected, rel=1e-9)
        assert max_free_radius(action) == pytest.approx(0.084928, abs=1e-6)

    def test_so3(self):
        radius = max_free_radius(so3_rational_rotations(), samples=2000)
        assert radius == pytest.approx(0.495 * math.acos(0.6), rel=1e-9)

    def test_odometer(self):
        assert max_free_radius(odometer(5)) == pytest.approx(0.12375)

    def test_odometer_depth_one_is_not_free(self):
        with pytest.raises(FreenessError):
            max_free_radius(odometer(1))

    def test_trivial_action(self):
        assert max_free_radius(identity_action(ModelSpace.circle())) \
            == math.inf


class TestInvariance:
    @pytest.mark.parametrize("action", [
        circle_rotation(), torus_translation(2), so3_rational_rotations(),
        odometer(8),
    ], ids=lambda a: a.name)
    def test_isometry(self, action):
        assert isometry_defect(action, pairs=500) < 1e-12

    @pytest.mark.parametrize("action", [
        circle_rotation(), torus_translation(2), so3_rational_rotations(),
    ], ids=lambda a: a.name)
    def test_pushforward_is_haar(self, action):
        for s in action.labels:
            stat = pushforward_statistic(action, s, samples=5000, seed=3)
            assert stat.statistic < stat.critical_value(0.001)

    def test_critical_value(self):
        stat = pushforward_statistic(circle_rotation(), "g", samples=2000)
        assert stat.critical_value(0.05) == pytest.approx(
            1.3581 * math.sqrt(2 / 2000), rel=1e-3)
