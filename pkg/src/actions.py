"""
This module provides finite symmetric generating sets acting isometrically
on the model spaces, the built-in action catalog, and the admissible
radius of an action.
"""

import math
import logging
import numpy as np
from scipy import stats
from dataclasses import dataclass, field
from typing import Any, Dict, Sequence, Tuple, Union
from src.spaces import (
    ModelSpace,
    Point,
    SpaceMismatchError,
    axis_rotation,
    cantor_bits,
    haar_sample,
    seed_streams,
)

logger = logging.getLogger(__name__)

IDENTITY = "e"
# sampled freeness threshold
FREENESS_TOLERANCE = 1e-10
SAFETY_MARGIN = 0.99
# irrational translation components of the torus catalog action
TORUS_DEFAULTS = (
    math.sqrt(2) - 1, math.sqrt(3) - 1, math.sqrt(5) - 2,
    math.sqrt(7) - 2, math.sqrt(11) - 3, math.sqrt(13) - 3,
)

Generator = Union[str, int]


class GeneratorError(ValueError):
    """Raised for a generator outside S or a malformed generating set."""


class FreenessError(ValueError):
    """Raised when two distinct generators move a point to the same place."""


@dataclass(frozen=True, eq=False)
class GeneratorSet:
    """
    A finite symmetric generating set S = S⁻¹ containing the unit.

    :ivar elements: Group elements as space coordinates ``(|S|, width)``.
    :ivar labels: One label per element; the unit is labelled ``e``.
    :ivar inverses: For each element, the index of its inverse.
    """
    elements: np.ndarray
    labels: Tuple[str, ...]
    inverses: Tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.labels) != len(self.elements) or not self.labels:
            raise GeneratorError("Every generator needs exactly one label")
        if len(set(self.labels)) != len(self.labels):
            raise GeneratorError(f"Duplicate generator labels: {self.labels}")
        if IDENTITY not in self.labels:
            raise GeneratorError("The generating set must contain 'e'")
        if len(self.inverses) != len(self.labels):
            raise GeneratorError("Every generator needs an inverse")
        for i, j in enumerate(self.inverses):
            if not 0 <= j < len(self.labels) or self.inverses[j] != i:
                raise GeneratorError(
                    f"Generating set is not symmetric at '{self.labels[i]}'"
                )

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def contains_identity(self) -> bool:
        return IDENTITY in self.labels

    @property
    def identity_index(self) -> int:
        return self.labels.index(IDENTITY)

    def index(self, s: Generator) -> int:
        """
        :returns: The index of a generator given by label or index.
        :raises GeneratorError: If ``s`` is not in S.
        """
        if isinstance(s, (int, np.integer)) and not isinstance(s, bool):
            if 0 <= s < self.size:
                return int(s)
        elif s in self.labels:
            return self.labels.index(str(s))
        logger.error("Generator %r is not in S = %s", s, self.labels)
        raise GeneratorError(f"Generator {s!r} is not in S = {self.labels}")

    def inverse_label(self, s: Generator) -> str:
        return self.labels[self.inverses[self.index(s)]]


@dataclass(frozen=True, eq=False)
class ActionSpec:
    """
    An isometric, measure-preserving action by left translation.

    :ivar space: The model space acted upon.
    :ivar generators: The generating set S.
    :ivar name: Catalog name, e.g. ``circle-rotation``.
    :ivar params: Catalog parameters, echoed in reports.
    """
    space: ModelSpace
    generators: GeneratorSet
    name: str
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.generators.elements.shape[1] != self.space.coord_width:
            raise GeneratorError(
                f"Generators of '{self.name}' do not live in "
                f"{self.space.name}"
            )
        elems = self.generators.elements
        unit = self.space.identity()
        for i, j in enumerate(self.generators.inverses):
            prod = self.space.multiply(elems[i:i + 1], elems[j:j + 1])
            if self.space.distances(prod, unit)[0] > 1e-12:
                raise GeneratorError(
                    f"'{self.generators.labels[j]}' is not the inverse of "
                    f"'{self.generators.labels[i]}'"
                )

    @property
    def size(self) -> int:
        return self.generators.size

    @property
    def labels(self) -> Tuple[str, ...]:
        return self.generators.labels

    def describe(self) -> Dict[str, Any]:
        return {"name": self.name, "space": self.space.name,
                "labels": list(self.labels), "params": dict(self.params)}


def _generating_set(space: ModelSpace, pairs: Sequence[Tuple[str, Any]],
                    ) -> GeneratorSet:
    # pairs of (label, element); inverses are appended as "<label>^-1"
    labels = [IDENTITY]
    elements = [space.identity()[0]]
    inverses = [0]
    for label, element in pairs:
        elem = space.canonicalize(np.asarray(element).reshape(1, -1))
        inv = space.inverse(elem)
        base = len(labels)
        labels += [label, f"{label}^-1"]
        elements += [elem[0], inv[0]]
        inverses += [base + 1, base]
    return GeneratorSet(np.stack(elements), tuple(labels), tuple(inverses))


def circle_rotation(alpha: float = math.sqrt(2) - 1) -> ActionSpec:
    """Rotation of the circle by ``alpha`` with S = {e, g, g⁻¹}."""
    space = ModelSpace.circle()
    gens = _generating_set(space, [("g", [alpha])])
    return ActionSpec(space, gens, "circle-rotation", {"alpha": alpha})


def torus_translation(m: int = 2,
                      vector: Sequence[float] = ()) -> ActionSpec:
    """Translation of the m-torus by ``vector`` with S = {e, v, v⁻¹}."""
    if not vector:
        if m > len(TORUS_DEFAULTS):
            raise GeneratorError(f"No default translation for m={m}")
        vector = TORUS_DEFAULTS[:m]
    if len(vector) != m:
        raise GeneratorError(
            f"Translation vector has {len(vector)} components, expected {m}"
        )
    space = ModelSpace.torus(m)
    gens = _generating_set(space, [("v", list(vector))])
    return ActionSpec(space, gens, "torus-translation",
                      {"m": m, "vector": list(vector)})


def so3_rational_rotations() -> ActionSpec:
    """
    Rotations of SO(3) through arccos(3/5) about the x- and z-axes, with
    their inverses and the unit, acting by left multiplication.
    """
    theta = math.acos(3.0 / 5.0)
    space = ModelSpace.so3()
    gens = _generating_set(space, [("a", axis_rotation("x", theta)),
                                   ("b", axis_rotation("z", theta))])
    return ActionSpec(space, gens, "so3-rational-rotations",
                      {"angle": theta})


def odometer(depth: int) -> ActionSpec:
    """The ±1 odometer on the Cantor level of the given depth."""
    space = ModelSpace.cantor(depth)
    step = cantor_bits(np.array([1]), depth)
    back = cantor_bits(np.array([(1 << depth) - 1]), depth)
    gens = GeneratorSet(
        np.vstack([space.identity(), step, back]),
        (IDENTITY, "+1", "-1"), (0, 2, 1),
    )
    return ActionSpec(space, gens, "odometer", {"depth": depth})


def identity_action(space: ModelSpace) -> ActionSpec:
    """The trivial action S = {e}."""
    gens = GeneratorSet(space.identity(), (IDENTITY,), (0,))
    return ActionSpec(space, gens, "identity", {"space": space.name})


CATALOG = (
    "circle-rotation", "torus-translation", "so3-rational-rotations",
    "odometer", "identity",
)


def catalog(name: str, **params: Any) -> ActionSpec:
    """
    Build a catalog action from its name and parameters.

    :param name: One of :data:`CATALOG`.
    :param params: ``alpha`` (circle), ``m``/``vector`` (torus), ``depth``
        (odometer), ``space`` (identity).
    :raises ValueError: On an unknown name or bad parameters.
    """
    logger.debug("Catalog action %s with %s", name, params)
    try:
        if name == "circle-rotation":
            return circle_rotation(float(params.get("alpha",
                                                    math.sqrt(2) - 1)))
        if name == "torus-translation":
            return torus_translation(int(params.get("m", 2)),
                                     params.get("vector", ()))
        if name == "so3-rational-rotations":
            return so3_rational_rotations()
        if name == "odometer":
            return odometer(int(params.get("depth", 5)))
        if name == "identity":
            return identity_action(
                ModelSpace.parse(str(params.get("space", "circle")))
            )
    except (TypeError, KeyError) as e:
        logger.error("Invalid parameters for %s: %s", name, e)
        raise ValueError(f"Invalid parameters for {name}: {e}") from e
    logger.error("Unknown action: %s", name)
    raise ValueError(f"Unknown action: {name}")


def apply_many(action: ActionSpec, s: Generator,
               coords: np.ndarray) -> np.ndarray:
    """Images ``s·x`` of a batch of coordinates."""
    elem = action.generators.elements[action.generators.index(s)]
    return action.space.multiply(elem.reshape(1, -1), coords)


def apply(action: ActionSpec, s: Generator, x: Point) -> Point:
    """
    The image s·x.

    :raises GeneratorError: If ``s`` is not in S.
    :raises SpaceMismatchError: If ``x`` is a point of another space.
    """
    if x.space != action.space:
        logger.error("Point of %s given to an action on %s",
                     x.space.name, action.space.name)
        raise SpaceMismatchError(
            f"Point of {x.space.name} given to an action on "
            f"{action.space.name}"
        )
    return Point(action.space, apply_many(action, s, x.batch())[0])


def word_length(action: ActionSpec, word: Sequence[Generator]) -> int:
    """Number of non-identity letters of ``word``."""
    gens = action.generators
    return sum(1 for s in word if gens.index(s) != gens.identity_index)


def separation_scan(action: ActionSpec, samples: int = 10_000,
                    seed: int = 0) -> float:
    """
    :returns: min over sampled x and distinct s, s′ of d(sx, s′x).
    """
    if action.size < 2:
        return math.inf
    xs = haar_sample(action.space, seed, samples)
    images = [apply_many(action, s, xs) for s in range(action.size)]
    best = math.inf
    for i in range(action.size):
        for j in range(i + 1, action.size):
            d = action.space.distances(images[i], images[j])
            k = int(np.argmin(d))
            if d[k] < FREENESS_TOLERANCE:
                logger.error(
                    "Action %s is not free: '%s' and '%s' agree at "
                    "sample %d", action.name, action.labels[i],
                    action.labels[j], k
                )
                raise FreenessError(
                    f"Action {action.name} is not free: "
                    f"'{action.labels[i]}' and '{action.labels[j]}' "
                    f"agree at sample {k}"
                )
            best = min(best, float(d[k]))
    return best


def max_free_radius(action: ActionSpec, samples: int = 10_000,
                    seed: int = 0) -> float:
    """
    Largest radius (in d_M, less a 1% margin) for which the translates
    s·B_r(x) over s ∈ S are pairwise disjoint.

    :returns: 0.99 · ½ · min d(sx, s′x), or ``math.inf`` when S = {e}.
    :raises FreenessError: If two generators agree at a sampled point.
    """
    radius = SAFETY_MARGIN * 0.5 * separation_scan(action, samples, seed)
    logger.info("Admissible radius of %s: %s", action.name, radius)
    return radius


@dataclass(frozen=True)
class PushforwardStatistic:
    """
    Two-sample Kolmogorov-Smirnov comparison of d(x₀, s·X) with d(x₀, Y)
    for independent Haar samples X, Y.
    """
    statistic: float
    pvalue: float
    samples: int

    def critical_value(self, level: float = 0.01) -> float:
        """Asymptotic two-sample critical value at ``level``."""
        c = math.sqrt(-0.5 * math.log(level / 2.0))
        return c * math.sqrt(2.0 / self.samples)


def pushforward_statistic(action: ActionSpec, s: Generator,
                          samples: int = 10_000, seed: int = 0,
                          ) -> PushforwardStatistic:
    """Measure-preservation statistic of the generator ``s``."""
    space = action.space
    rng_x, rng_y, rng_0 = seed_streams(seed, 3)
    x0 = space.sample(rng_0, 1)
    moved = apply_many(action, s, space.sample(rng_x, samples))
    fresh = space.sample(rng_y, samples)
    result = stats.ks_2samp(space.distances(moved, x0),
                            space.distances(fresh, x0))
    return PushforwardStatistic(float(result.statistic),
                                float(result.pvalue), samples)


def isometry_defect(action: ActionSpec, pairs: int = 1000,
                    seed: int = 0) -> float:
    """:returns: max |d(sx, sy) − d(x, y)| over sampled pairs and s ∈ S."""
    rng_x, rng_y = seed_streams(seed, 2)
    xs = action.space.sample(rng_x, pairs)
    ys = action.space.sample(rng_y, pairs)
    base = action.space.distances(xs, ys)
    worst = 0.0
    for s in range(action.size):
        moved = action.space.distances(apply_many(action, s, xs),
                                       apply_many(action, s, ys))
        worst = max(worst, float(np.max(np.abs(moved - base))))
    return worst
