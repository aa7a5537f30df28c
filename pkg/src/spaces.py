"""
This module provides the compact model metric-measure spaces (circle, flat
torus, SO(3) and finite Cantor levels), Haar sampling, and the
construction of weighted ε-nets at a level t.

All spaces carry total mass 1. Points are stored as coordinate arrays:
circle ``(n, 1)`` and torus ``(n, m)`` in [0, 1), SO(3) ``(n, 4)`` unit
quaternions with non-negative real part, Cantor ``(n, depth)`` bits with
the least significant bit first.
"""

import json
import math
import logging
import numpy as np
from enum import Enum
from scipy import special
from scipy.spatial import cKDTree
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple
from src.escalation import BudgetExhausted, escalate

logger = logging.getLogger(__name__)

# chunk length for dense distance blocks
_CHUNK = 2048


class SpaceMismatchError(ValueError):
    """Raised when points or nets belong to a different space."""


class SpaceKind(str, Enum):
    CIRCLE = "circle"
    FLAT_TORUS = "torus"
    SO3 = "so3"
    CANTOR = "cantor"


@dataclass(frozen=True)
class ModelSpace:
    """
    A compact model metric-measure space.

    :ivar kind: The space family.
    :ivar m: Torus dimension (ignored by the other kinds).
    :ivar depth: Cantor truncation depth (ignored by the other kinds).
    """
    kind: SpaceKind
    m: int = 1
    depth: int = 0

    def __post_init__(self) -> None:
        if self.kind == SpaceKind.FLAT_TORUS and self.m < 1:
            raise ValueError(f"Torus dimension must be positive: {self.m}")
        if self.kind == SpaceKind.CANTOR and not 1 <= self.depth <= 62:
            raise ValueError(
                f"Cantor depth must lie in [1, 62]: {self.depth}"
            )

    @classmethod
    def circle(cls) -> "ModelSpace":
        return cls(SpaceKind.CIRCLE)

    @classmethod
    def torus(cls, m: int) -> "ModelSpace":
        return cls(SpaceKind.FLAT_TORUS, m=m)

    @classmethod
    def so3(cls) -> "ModelSpace":
        return cls(SpaceKind.SO3)

    @classmethod
    def cantor(cls, depth: int) -> "ModelSpace":
        return cls(SpaceKind.CANTOR, depth=depth)

    @classmethod
    def parse(cls, name: str) -> "ModelSpace":
        """
        Parse ``circle``, ``torus:m``, ``so3`` or ``cantor:depth``.

        :raises ValueError: On an unknown name.
        """
        head, _, arg = name.strip().lower().partition(":")
        try:
            if head == "circle" and not arg:
                return cls.circle()
            if head == "torus":
                return cls.torus(int(arg or 2))
            if head == "so3" and not arg:
                return cls.so3()
            if head == "cantor":
                return cls.cantor(int(arg))
        except ValueError as e:
            raise ValueError(f"Invalid space name: {name}") from e
        raise ValueError(f"Invalid space name: {name}")

    @property
    def name(self) -> str:
        if self.kind == SpaceKind.FLAT_TORUS:
            return f"torus:{self.m}"
        if self.kind == SpaceKind.CANTOR:
            return f"cantor:{self.depth}"
        return self.kind.value

    @property
    def dimension(self) -> int:
        return {
            SpaceKind.CIRCLE: 1,
            SpaceKind.FLAT_TORUS: self.m,
            SpaceKind.SO3: 3,
            SpaceKind.CANTOR: 0,
        }[self.kind]

    @property
    def total_mass(self) -> float:
        return 1.0

    @property
    def coord_width(self) -> int:
        return {
            SpaceKind.CIRCLE: 1,
            SpaceKind.FLAT_TORUS: self.m,
            SpaceKind.SO3: 4,
            SpaceKind.CANTOR: self.depth,
        }[self.kind]

    @property
    def diameter(self) -> float:
        if self.kind == SpaceKind.CIRCLE:
            return 0.5
        if self.kind == SpaceKind.FLAT_TORUS:
            return 0.5 * math.sqrt(self.m)
        if self.kind == SpaceKind.SO3:
            return math.pi
        return 0.5

    def scaled_mass(self, t: float) -> float:
        """:returns: μ_t(M) = t^m · total mass."""
        return float(t) ** self.dimension * self.total_mass

    def canonicalize(self, coords: np.ndarray) -> np.ndarray:
        """
        Reduce raw coordinates to the normal form of the space.

        :param coords: Array of shape ``(n, coord_width)``.
        :returns: A new array in normal form.
        """
        c = np.array(coords, dtype=np.int8 if self.is_cantor else float)
        c = np.atleast_2d(c)
        if c.shape[1] != self.coord_width:
            raise SpaceMismatchError(
                f"{self.name} expects {self.coord_width} coordinates, "
                f"got {c.shape[1]}"
            )
        if self.kind in (SpaceKind.CIRCLE, SpaceKind.FLAT_TORUS):
            c = np.mod(c, 1.0)
            c[c >= 1.0] = 0.0
        elif self.kind == SpaceKind.SO3:
            c = c / np.linalg.norm(c, axis=1, keepdims=True)
            flip = (c[:, 0] < 0) | ((c[:, 0] == 0) & (c[:, 1] < 0))
            c[flip] *= -1.0
        else:
            c = np.mod(c, 2).astype(np.int8)
        return c

    @property
    def is_cantor(self) -> bool:
        return self.kind == SpaceKind.CANTOR

    def identity(self) -> np.ndarray:
        """:returns: Coordinates ``(1, width)`` of the group unit."""
        c = np.zeros((1, self.coord_width))
        if self.kind == SpaceKind.SO3:
            c[0, 0] = 1.0
        return self.canonicalize(c)

    def distances(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """
        Elementwise distances between two broadcast-compatible batches.

        :param a: Coordinates ``(n, width)`` or ``(1, width)``.
        :param b: Coordinates ``(n, width)`` or ``(1, width)``.
        :returns: Distances of shape ``(n,)``.
        """
        if self.kind in (SpaceKind.CIRCLE, SpaceKind.FLAT_TORUS):
            diff = np.abs(a - b)
            diff = np.minimum(diff, 1.0 - diff)
            return np.sqrt(np.sum(diff * diff, axis=-1))
        if self.kind == SpaceKind.SO3:
            sign = np.where(np.sum(a * b, axis=-1) < 0, -1.0, 1.0)
            sb = b * sign[..., None]
            num = np.linalg.norm(a - sb, axis=-1)
            den = np.linalg.norm(a + sb, axis=-1)
            return 4.0 * np.arctan2(num, den)
        return _cantor_code_distance(
            cantor_codes(a)[..., None], cantor_codes(b)[..., None]
        )[..., 0]

    def cdist(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """
        Pairwise distance matrix between two batches.

        :returns: Array of shape ``(len(a), len(b))``.
        """
        if self.kind in (SpaceKind.CIRCLE, SpaceKind.FLAT_TORUS):
            diff = np.abs(a[:, None, :] - b[None, :, :])
            diff = np.minimum(diff, 1.0 - diff)
            return np.sqrt(np.sum(diff * diff, axis=-1))
        if self.kind == SpaceKind.SO3:
            dots = np.clip(np.abs(a @ b.T), 0.0, 1.0)
            return 2.0 * np.arccos(dots)
        return _cantor_code_distance(
            cantor_codes(a)[:, None], cantor_codes(b)[None, :]
        )

    def multiply(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """
        Group law ``a · b`` on batches (translation, quaternion product,
        addition modulo 2^depth).
        """
        if self.kind in (SpaceKind.CIRCLE, SpaceKind.FLAT_TORUS):
            return self.canonicalize(a + b)
        if self.kind == SpaceKind.SO3:
            return self.canonicalize(quaternion_multiply(a, b))
        codes = (cantor_codes(a) + cantor_codes(b)) % (1 << self.depth)
        return cantor_bits(codes, self.depth)

    def inverse(self, a: np.ndarray) -> np.ndarray:
        """Group inverse on a batch."""
        if self.kind in (SpaceKind.CIRCLE, SpaceKind.FLAT_TORUS):
            return self.canonicalize(-a)
        if self.kind == SpaceKind.SO3:
            conj = a.copy()
            conj[:, 1:] *= -1.0
            return self.canonicalize(conj)
        codes = (-cantor_codes(a)) % (1 << self.depth)
        return cantor_bits(codes, self.depth)

    def ball_mass(self, rho: float) -> Optional[float]:
        """
        Exact normalized mass of a closed-form ball of radius ``rho``.

        :returns: μ(B_rho), or ``None`` past the injectivity guard of the
            circle and torus (rho ≥ 1/2).
        """
        if rho <= 0:
            return 0.0
        if self.kind == SpaceKind.CIRCLE:
            return 2.0 * rho if rho < 0.5 else None
        if self.kind == SpaceKind.FLAT_TORUS:
            if rho >= 0.5:
                return None
            return unit_ball_volume(self.m) * rho ** self.m
        if self.kind == SpaceKind.SO3:
            theta = min(rho, math.pi)
            return (theta - math.sin(theta)) / math.pi
        # open ultrametric ball: strings agreeing on the first k-1 bits,
        # where k is the least index with 2^-k < rho
        k = max(1, math.floor(-math.log2(rho)) + 1)
        return 2.0 ** -min(k - 1, self.depth)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` Haar-distributed points with ``rng``."""
        if self.kind in (SpaceKind.CIRCLE, SpaceKind.FLAT_TORUS):
            return self.canonicalize(rng.random((n, self.coord_width)))
        if self.kind == SpaceKind.SO3:
            return self.canonicalize(rng.standard_normal((n, 4)))
        return rng.integers(0, 2, size=(n, self.depth), dtype=np.int8)


@dataclass(frozen=True, eq=False)
class Point:
    """
    A single point of a model space.

    :ivar space: The space the point belongs to.
    :ivar coords: Coordinates of shape ``(coord_width,)``.
    """
    space: ModelSpace
    coords: np.ndarray

    def __post_init__(self) -> None:
        raw = np.asarray(self.coords)
        if self.space.kind == SpaceKind.SO3:
            norm = float(np.linalg.norm(raw))
            if abs(norm - 1.0) > 1e-12:
                raise ValueError(f"Quaternion norm {norm} is not 1")
        c = self.space.canonicalize(raw.reshape(1, -1))[0]
        object.__setattr__(self, "coords", c)

    @classmethod
    def from_string(cls, space: ModelSpace, bits: str) -> "Point":
        """Cantor point from a bit string, least significant bit first."""
        if not space.is_cantor or len(bits) != space.depth:
            raise SpaceMismatchError(f"'{bits}' is not a point of "
                                     f"{space.name}")
        return cls(space, np.array([int(b) for b in bits], dtype=np.int8))

    def as_string(self) -> str:
        return "".join(str(int(b)) for b in self.coords)

    def batch(self) -> np.ndarray:
        return self.coords.reshape(1, -1)


def unit_ball_volume(m: int) -> float:
    """:returns: Volume of the Euclidean unit ball in dimension ``m``."""
    return math.pi ** (m / 2.0) / float(special.gamma(m / 2.0 + 1.0))


def quaternion_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of two batches of quaternions ``(w, x, y, z)``."""
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrices ``(n, 3, 3)`` of unit quaternions ``(n, 4)``."""
    w, x, y, z = np.moveaxis(np.atleast_2d(q), -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w),
                  2 * (x * z + y * w)], axis=-1),
        np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z),
                  2 * (y * z - x * w)], axis=-1),
        np.stack([2 * (x * z - y * w), 2 * (y * z + x * w),
                  1 - 2 * (x * x + y * y)], axis=-1),
    ], axis=-2)


def axis_rotation(axis: str, angle: float) -> np.ndarray:
    """Unit quaternion ``(4,)`` of a rotation about ``x``, ``y`` or ``z``."""
    q = np.zeros(4)
    q[0] = math.cos(angle / 2.0)
    q["xyz".index(axis) + 1] = math.sin(angle / 2.0)
    return q


def cantor_codes(bits: np.ndarray) -> np.ndarray:
    """Integer codes of bit strings, least significant bit first."""
    bits = np.asarray(bits, dtype=np.int64)
    powers = np.left_shift(np.int64(1), np.arange(bits.shape[-1]))
    return np.sum(bits * powers, axis=-1)


def cantor_bits(codes: np.ndarray, depth: int) -> np.ndarray:
    """Bit strings of integer codes, least significant bit first."""
    codes = np.atleast_1d(np.asarray(codes, dtype=np.int64))
    shifts = np.arange(depth)
    return ((codes[:, None] >> shifts[None, :]) & 1).astype(np.int8)


def _cantor_code_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # 2^-k with k the 1-based index of the lowest differing bit
    xor = np.bitwise_xor(a, b)
    low = np.bitwise_and(xor, -xor)
    with np.errstate(divide="ignore"):
        d = 0.5 / low.astype(float)
    return np.where(xor == 0, 0.0, d)


def distance(space: ModelSpace, a: Point, b: Point) -> float:
    """
    Geodesic distance between two points of ``space``.

    :raises SpaceMismatchError: If either point belongs to another space.
    """
    for p in (a, b):
        if p.space != space:
            logger.error("Point of %s used with %s", p.space.name,
                         space.name)
            raise SpaceMismatchError(
                f"Point of {p.space.name} used with {space.name}"
            )
    return float(space.distances(a.batch(), b.batch())[0])


def seed_streams(seed: int, n: int) -> Tuple[np.random.Generator, ...]:
    """
    Independent generators derived from one seed.

    Stream ``i`` is ``SeedSequence(seed).spawn(n)[i]``; callers splitting
    work into chunks take one stream per chunk in chunk order.
    """
    children = np.random.SeedSequence(seed).spawn(n)
    return tuple(np.random.default_rng(c) for c in children)


def haar_sample(space: ModelSpace, seed: int, n: int) -> np.ndarray:
    """
    I.i.d. samples from the normalized invariant measure.

    :param space: The model space.
    :param seed: Random seed; equal seeds give equal samples.
    :param n: Number of samples (≥ 1).
    :returns: Coordinates ``(n, coord_width)``.
    """
    if n < 1:
        raise ValueError(f"Sample count must be positive, got {n}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return space.sample(rng, n)


@dataclass(frozen=True, eq=False)
class EpsNet:
    """
    A weighted ε-separated net of a model space at level t.

    :ivar space: The model space.
    :ivar t: The level.
    :ivar epsilon: Separation in the scaled metric t·d.
    :ivar points: Coordinates ``(n, coord_width)``.
    :ivar weights: Quadrature masses summing to μ_t(M).
    :ivar seed: The construction seed.
    :ivar kind: ``greedy``, ``arithmetic`` or ``full``.
    :ivar per_axis: Lattice size of an arithmetic net.
    :ivar weight_stderr: Monte Carlo standard errors of greedy weights.
    """
    space: ModelSpace
    t: float
    epsilon: float
    points: np.ndarray
    weights: np.ndarray
    seed: int
    kind: str = "greedy"
    per_axis: Optional[int] = None
    weight_stderr: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    @property
    def scaled_mass(self) -> float:
        return self.space.scaled_mass(self.t)

    def point(self, i: int) -> Point:
        return Point(self.space, self.points[i])

    def scaled_cdist(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Scaled distance block between net indices ``rows``, ``cols``."""
        return self.t * self.space.cdist(self.points[rows],
                                         self.points[cols])

    def identity_index(self) -> int:
        """
        :returns: Index of the group unit in the net.
        :raises ValueError: If the unit is not a net point.
        """
        idx, dist = self.nearest(self.space.identity())
        if dist[0] > 1e-12:
            raise ValueError("The group unit is not a point of the net")
        return int(idx[0])

    def nearest(self, coords: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Nearest net point of each query point.

        :returns: ``(indices, scaled distances)``.
        """
        coords = self.space.canonicalize(coords)
        if self.kind == "full":
            idx = cantor_codes(coords)
            return idx, np.zeros(len(idx))
        if self.kind == "arithmetic":
            n = int(self.per_axis or 1)
            lattice = np.mod(np.rint(coords * n).astype(np.int64), n)
            idx = np.ravel_multi_index(tuple(lattice.T),
                                       (n,) * self.space.coord_width)
            d = self.space.distances(coords, self.points[idx])
            return idx, self.t * d
        if self.space.kind in (SpaceKind.CIRCLE, SpaceKind.FLAT_TORUS):
            tree = cKDTree(self.points, boxsize=1.0)
            dist, idx = tree.query(coords)
            return np.asarray(idx, dtype=np.int64), self.t * dist
        idx = np.empty(len(coords), dtype=np.int64)
        for start in range(0, len(coords), _CHUNK):
            block = np.abs(coords[start:start + _CHUNK] @ self.points.T)
            idx[start:start + _CHUNK] = np.argmax(block, axis=1)
        return idx, self.t * self.space.distances(coords, self.points[idx])

    def pairs_within(
            self,
            radius: float,
            include_self: bool = True
            ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        All ordered pairs ``(i, j)`` with scaled distance ``< radius``.

        On arithmetic nets membership depends only on the lattice offset,
        so it is exactly translation invariant.

        :returns: ``(rows, cols, scaled distances)``.
        """
        if self.kind == "arithmetic":
            found = self._lattice_pairs(radius, include_self)
            if found is not None:
                return found
        if (self.space.kind in (SpaceKind.CIRCLE, SpaceKind.FLAT_TORUS)
                and radius / self.t < 0.5):
            tree = cKDTree(self.points, boxsize=1.0)
            pairs = tree.query_pairs(radius / self.t, output_type="ndarray")
            i, j = pairs[:, 0], pairs[:, 1]
            d = self.t * self.space.distances(self.points[i],
                                              self.points[j])
            keep = d < radius
            rows = np.concatenate([i[keep], j[keep]])
            cols = np.concatenate([j[keep], i[keep]])
            dist = np.concatenate([d[keep], d[keep]])
        else:
            parts_r, parts_c, parts_d = [], [], []
            everyone = np.arange(self.size)
            for start in range(0, self.size, _CHUNK):
                block_rows = everyone[start:start + _CHUNK]
                d = self.scaled_cdist(block_rows, everyone)
                np.fill_diagonal(d[:, start:start + _CHUNK], np.inf)
                r_loc, c = np.nonzero(d < radius)
                parts_r.append(block_rows[r_loc])
                parts_c.append(c)
                parts_d.append(d[r_loc, c])
            rows = np.concatenate(parts_r)
            cols = np.concatenate(parts_c)
            dist = np.concatenate(parts_d)
        if include_self:
            everyone = np.arange(self.size)
            rows = np.concatenate([everyone, rows])
            cols = np.concatenate([everyone, cols])
            dist = np.concatenate([np.zeros(self.size), dist])
        return rows, cols, dist

    def _lattice_pairs(self, radius: float, include_self: bool):
        n = int(self.per_axis or 1)
        m = self.space.coord_width
        reach = int(math.floor(radius * n / self.t))
        if 2 * reach + 1 > n:
            return None
        axis = np.arange(-reach, reach + 1)
        offsets = np.stack(np.meshgrid(*([axis] * m), indexing="ij"),
                           axis=-1).reshape(-1, m)
        scaled = self.t * np.sqrt(np.sum(offsets ** 2, axis=1)) / n
        keep = scaled < radius
        if not include_self:
            keep &= np.any(offsets != 0, axis=1)
        offsets, scaled = offsets[keep], scaled[keep]
        base = np.stack(np.unravel_index(np.arange(self.size), (n,) * m),
                        axis=-1)
        rows, cols, dist = [], [], []
        for off, d in zip(offsets, scaled):
            target = np.mod(base + off, n)
            rows.append(np.arange(self.size))
            cols.append(np.ravel_multi_index(tuple(target.T), (n,) * m))
            dist.append(np.full(self.size, d))
        if not rows:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, np.zeros(0)
        return (np.concatenate(rows), np.concatenate(cols),
                np.concatenate(dist))

    def to_json(self) -> str:
        """
        Serialize to JSON with round-trip exact decimals (at most 17
        significant digits); Cantor points are bit strings.
        """
        if self.space.is_cantor:
            points: Any = ["".join(map(str, row)) for row in self.points]
        else:
            points = self.points.tolist()
        payload: Dict[str, Any] = {
            "space": self.space.name,
            "t": self.t,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "kind": self.kind,
            "per_axis": self.per_axis,
            "points": points,
            "weights": self.weights.tolist(),
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EpsNet":
        data = json.loads(text)
        space = ModelSpace.parse(data["space"])
        if space.is_cantor:
            points = np.array([[int(b) for b in s] for s in data["points"]],
                              dtype=np.int8)
        else:
            points = np.asarray(data["points"], dtype=float)
        return cls(
            space=space, t=float(data["t"]),
            epsilon=float(data["epsilon"]),
            points=points, weights=np.asarray(data["weights"], dtype=float),
            seed=int(data["seed"]), kind=data.get("kind", "greedy"),
            per_axis=data.get("per_axis"),
        )


def _expected_net_size(space: ModelSpace, t: float, epsilon: float) -> int:
    mass = space.ball_mass(epsilon / t)
    if not mass:
        return 1
    return int(math.ceil(1.0 / mass))


def _farthest_point_net(space: ModelSpace, pool: np.ndarray, t: float,
                        epsilon: float) -> np.ndarray:
    chosen = [0]
    min_dist = t * space.distances(pool, pool[0:1])
    while True:
        nxt = int(np.argmax(min_dist))
        if min_dist[nxt] < epsilon:
            break
        chosen.append(nxt)
        min_dist = np.minimum(min_dist,
                              t * space.distances(pool, pool[nxt:nxt + 1]))
    return np.asarray(chosen)


@escalate(budget="probes", retries=3)
def _voronoi_counts(space: ModelSpace, net: EpsNet, seed: int, *,
                    probes: int = 10_000) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, probes]))
    samples = space.sample(rng, probes)
    idx, _ = net.nearest(samples)
    counts = np.bincount(idx, minlength=net.size).astype(float)
    if np.any(counts == 0):
        raise BudgetExhausted(
            f"{int(np.sum(counts == 0))} empty Voronoi cells "
            f"with {probes} probes", detail=counts
        )
    return counts


def build_eps_net(
        space: ModelSpace,
        t: float,
        epsilon: float,
        seed: int,
        pool_size: Optional[int] = None
        ) -> EpsNet:
    """
    Greedy maximal ε-separated net in the scaled metric with Voronoi
    Monte Carlo weights.

    The net is built by farthest-point insertion over a seeded Haar pool
    of ``max(10^4, 200 · expected size)`` points whose first point is the
    group unit; insertion stops once every pool point lies within
    ``epsilon`` of the net. Each weight is the fraction of at least
    ``100 · |net|`` probes falling in the point's Voronoi cell, times
    μ_t(M). A Cantor level is its own net, with uniform weights.

    :param space: The model space.
    :param t: The level (> 0).
    :param epsilon: Separation in the scaled metric (> 0).
    :param seed: Random seed.
    :param pool_size: Optional explicit pool size.
    :returns: The net.
    :raises ValueError: On non-positive ``t`` or ``epsilon``.
    """
    if t <= 0 or epsilon <= 0:
        logger.error("Invalid net parameters t=%s epsilon=%s", t, epsilon)
        raise ValueError(
            f"Invalid net parameters t={t} epsilon={epsilon}"
        )
    if space.is_cantor:
        n = 1 << space.depth
        points = cantor_bits(np.arange(n), space.depth)
        weights = np.full(n, space.scaled_mass(t) / n)
        logger.info("Full Cantor net of %d points at t=%s", n, t)
        return EpsNet(space, float(t), float(epsilon), points, weights,
                      seed, kind="full")

    pool_stream, probe_stream = np.random.SeedSequence(seed).spawn(2)
    expected = _expected_net_size(space, t, epsilon)
    if pool_size is None:
        pool_size = max(10_000, 200 * expected)
    pool = space.sample(np.random.default_rng(pool_stream), pool_size)
    pool[0] = space.identity()[0]
    logger.debug("Net pool of %d points (expected net size %d)",
                 pool_size, expected)

    chosen = _farthest_point_net(space, pool, t, epsilon)
    points = pool[chosen]
    draft = EpsNet(space, float(t), float(epsilon), points,
                   np.ones(len(chosen)), seed)

    probe_seed = int(probe_stream.generate_state(1)[0])
    try:
        counts = _voronoi_counts(space, draft, probe_seed,
                                 probes=max(10_000, 100 * draft.size))
    except BudgetExhausted as e:
        logger.warning("Smoothing Voronoi counts: %s", e)
        counts = np.asarray(e.detail) + 1.0
    total = float(np.sum(counts))
    frac = counts / total
    mass = space.scaled_mass(t)
    stderr = mass * np.sqrt(frac * (1.0 - frac) / total)
    logger.info("Greedy net on %s at t=%s, epsilon=%s: %d points",
                space.name, t, epsilon, draft.size)
    return EpsNet(space, float(t), float(epsilon), points, frac * mass,
                  seed, kind="greedy", weight_stderr=stderr)


def build_arithmetic_net(space: ModelSpace, t: float,
                         per_axis: int) -> EpsNet:
    """
    The lattice net {j/N}^m of a circle or torus with exact weights.

    Its separation is t/N and every translation by a lattice vector is a
    weight-preserving permutation of it.

    :raises SpaceMismatchError: On spaces other than circle/torus.
    """
    if space.kind not in (SpaceKind.CIRCLE, SpaceKind.FLAT_TORUS):
        raise SpaceMismatchError(
            f"Arithmetic nets exist only on circle/torus, not {space.name}"
        )
    if per_axis < 2:
        raise ValueError(f"Lattice size must be at least 2: {per_axis}")
    m = space.coord_width
    axis = np.arange(per_axis) / per_axis
    points = np.stack(np.meshgrid(*([axis] * m), indexing="ij"),
                      axis=-1).reshape(-1, m)
    weights = np.full(len(points), space.scaled_mass(t) / len(points))
    logger.debug("Arithmetic net %s, N=%d, t=%s", space.name, per_axis, t)
    return EpsNet(space, float(t), float(t) / per_axis, points, weights,
                  seed=0, kind="arithmetic", per_axis=per_axis)


@dataclass(frozen=True)
class PhiValue:
    """
    The value φ_n(x) = t^m · μ(B_{r/t}(x)).

    :ivar value: The value.
    :ivar stderr: Monte Carlo standard error (0 when exact).
    :ivar exact: Whether a closed form was used.
    :ivar flagged: Whether the injectivity guard forced Monte Carlo.
    """
    value: float
    stderr: float
    exact: bool
    flagged: bool = False


def phi_value(
        space: ModelSpace,
        net: EpsNet,
        r: float,
        x: Point,
        n_samples: int = 100_000,
        seed: int = 0
        ) -> PhiValue:
    """
    Scaled measure of the ball of scaled radius ``r`` around ``x``.

    Closed forms are used on the circle and torus below the injectivity
    guard r/t < 1/2, and on Cantor levels; otherwise the value is a Monte
    Carlo estimate from ``n_samples`` Haar samples.

    :raises ValueError: If ``r`` is not positive.
    :raises SpaceMismatchError: If ``x`` or ``net`` belong elsewhere.
    """
    if r <= 0:
        raise ValueError(f"Radius must be positive, got {r}")
    if net.space != space or x.space != space:
        raise SpaceMismatchError("phi_value arguments span several spaces")
    rho = r / net.t
    scale = space.scaled_mass(net.t)
    flagged = False
    if space.kind != SpaceKind.SO3:
        mass = space.ball_mass(rho)
        if mass is not None:
            return PhiValue(scale * mass, 0.0, True)
        flagged = True
        logger.warning("r/t=%s past the injectivity guard on %s, "
                       "falling back to Monte Carlo", rho, space.name)
    samples = haar_sample(space, seed, n_samples)
    inside = np.mean(net.t * space.distances(samples, x.batch()) < r)
    stderr = scale * math.sqrt(inside * (1.0 - inside) / n_samples)
    return PhiValue(scale * float(inside), stderr, False, flagged)
