"""Geometry primitives shared by every other module.

Points carry stable integer ids, all coordinates are double precision, and
the cone machinery fixes one set of conventions used everywhere:

* cones around an apex are half-open angular sectors ``[i*theta, (i+1)*theta)``
  with ``theta = 2*pi/k`` and the first cone side on the positive x axis;
* cone membership used by the spanner builders is expressed through the two
  boundary half-plane forms ``u_c(p) = cos(c*theta)*y - sin(c*theta)*x`` so
  that the distributed path and the brute-force oracles evaluate bit-identical
  predicates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np

TWO_PI = 2.0 * math.pi
_EPS = math.ulp(1.0)


@dataclass(frozen=True)
class Point:
    """A 2-D point with an id that is stable across shuffles and partitions."""

    id: int
    x: float
    y: float


class PointSet:
    """An ordered collection of points, stored as parallel numpy arrays.

    Duplicate coordinates are allowed, duplicate ids are not.
    """

    def __init__(self, ids, xs, ys):
        ids = np.asarray(ids, dtype=np.int64)
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        if not (ids.shape == xs.shape == ys.shape) or ids.ndim != 1:
            raise ValueError("ids, xs, ys must be 1-D arrays of equal length")
        if len(np.unique(ids)) != len(ids):
            raise ValueError("duplicate point ids")
        if len(xs) and not (np.isfinite(xs).all() and np.isfinite(ys).all()):
            raise ValueError("coordinates must be finite")
        self.ids = ids
        self.xs = xs
        self.ys = ys
        self._id_to_pos: Optional[dict] = None

    @classmethod
    def from_points(cls, points: Iterable[Point]) -> "PointSet":
        pts = list(points)
        return cls(
            [p.id for p in pts], [p.x for p in pts], [p.y for p in pts]
        )

    @classmethod
    def from_xy(cls, xs, ys, ids=None) -> "PointSet":
        xs = np.asarray(xs, dtype=np.float64)
        if ids is None:
            ids = np.arange(1, len(xs) + 1, dtype=np.int64)
        return cls(ids, xs, ys)

    @property
    def n(self) -> int:
        return len(self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[Point]:
        for i in range(len(self.ids)):
            yield Point(int(self.ids[i]), float(self.xs[i]), float(self.ys[i]))

    def point(self, pos: int) -> Point:
        return Point(int(self.ids[pos]), float(self.xs[pos]), float(self.ys[pos]))

    def position_of(self, point_id: int) -> int:
        if self._id_to_pos is None:
            self._id_to_pos = {int(v): i for i, v in enumerate(self.ids)}
        return self._id_to_pos[int(point_id)]

    def coords_of(self, point_id: int) -> tuple:
        pos = self.position_of(point_id)
        return float(self.xs[pos]), float(self.ys[pos])


def l1_distance(a: Point, b: Point) -> float:
    """Sum of absolute coordinate differences."""
    return abs(a.x - b.x) + abs(a.y - b.y)


def l2_distance(a: Point, b: Point) -> float:
    """Euclidean distance."""
    return math.hypot(a.x - b.x, a.y - b.y)


def cone_index(apex: Point, target: Point, k: int) -> int:
    """Index in ``[0, k)`` of the half-open cone of ``apex`` containing ``target``.

    The polar angle of ``target - apex`` is taken with the four-quadrant
    arc-tangent normalised to ``[0, 2*pi)``; a ratio within a few ulps of an
    integer snaps to it so that targets lying exactly on a cone side land in
    the cone that owns that side (lower boundary inclusive).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    dx = target.x - apex.x
    dy = target.y - apex.y
    if dx == 0.0 and dy == 0.0:
        raise ValueError("undefined direction: apex and target coincide")
    alpha = math.atan2(dy, dx)
    if alpha < 0.0:
        alpha += TWO_PI
    theta = TWO_PI / k
    ratio = alpha / theta
    idx = math.floor(ratio)
    nearest = round(ratio)
    if nearest != idx and abs(ratio - nearest) <= 4.0 * _EPS * max(1.0, abs(ratio)):
        idx = nearest
    return int(idx) % k


def cone_rotation_angle(cone: int, k: int) -> float:
    """Rotation that maps cone ``cone`` onto the first-quadrant diagonal."""
    theta = TWO_PI / k
    return -(cone * theta + theta / 2.0 - math.pi / 4.0)


def rotate_into_cone_frame(p: Point, cone: int, k: int) -> Point:
    """Rotate ``p`` so the bisector of cone ``cone`` maps to the diagonal x'=y'.

    Length preserving and invertible; valid as a quadrant reduction only for
    ``k >= 4`` where the cone angle does not exceed a quadrant.
    """
    if k < 4:
        raise ValueError("cone wider than quadrant: k must be >= 4")
    rho = cone_rotation_angle(cone, k)
    c, s = math.cos(rho), math.sin(rho)
    return Point(p.id, c * p.x - s * p.y, s * p.x + c * p.y)


def rotate_from_cone_frame(p: Point, cone: int, k: int) -> Point:
    """Inverse of :func:`rotate_into_cone_frame`."""
    if k < 4:
        raise ValueError("cone wider than quadrant: k must be >= 4")
    rho = -cone_rotation_angle(cone, k)
    c, s = math.cos(rho), math.sin(rho)
    return Point(p.id, c * p.x - s * p.y, s * p.x + c * p.y)


class ConeBasis:
    """Precomputed per-cone linear forms shared by every cone-NN engine.

    For cone ``c`` the boundary form is ``u_c(x, y) = bcos[c]*y - bsin[c]*x``;
    ``target`` lies in cone ``c`` of ``apex`` iff ``u_c(t) >= u_c(a)`` and
    ``u_{c+1 mod k}(t) < u_{c+1 mod k}(a)``.  The rotated-frame l1 length of an
    in-cone difference vector is ``score_c(t) - score_c(a)`` with
    ``score_c(x, y) = ax[c]*x + by[c]*y``.
    """

    def __init__(self, k: int):
        if k < 4:
            raise ValueError("cone wider than quadrant: k must be >= 4")
        self.k = k
        self.theta = TWO_PI / k
        c = np.arange(k, dtype=np.float64)
        self.bcos = np.cos(c * self.theta)
        self.bsin = np.sin(c * self.theta)
        rho = -(c * self.theta + self.theta / 2.0 - math.pi / 4.0)
        self.ax = np.cos(rho) + np.sin(rho)
        self.by = np.cos(rho) - np.sin(rho)

    def boundary_form(self, cone: int, xs, ys):
        """``u_cone`` evaluated on coordinate arrays."""
        c = cone % self.k
        return self.bcos[c] * np.asarray(ys) - self.bsin[c] * np.asarray(xs)

    def score(self, cone: int, xs, ys):
        """Rotated-frame ``x' + y'`` evaluated on coordinate arrays."""
        return self.ax[cone] * np.asarray(xs) + self.by[cone] * np.asarray(ys)

    def in_cone(self, cone: int, qx: float, qy: float, px: float, py: float) -> bool:
        lo = self.boundary_form(cone, px, py) >= self.boundary_form(cone, qx, qy)
        hi = self.boundary_form(cone + 1, px, py) < self.boundary_form(cone + 1, qx, qy)
        return bool(lo and hi)


@dataclass(frozen=True)
class YaoParams:
    """Spanner construction parameters.

    ``epsilon`` is populated only when derived from ``s`` via
    ``epsilon = 8/(s-4)``; ``theta`` is always ``2*pi/k``.
    """

    k: int
    theta: float
    s: Optional[float] = None
    epsilon: Optional[float] = None
    clamped: bool = False

    def __post_init__(self):
        if self.k < 4:
            raise ValueError("k must be >= 4")
        if not math.isclose(self.theta, TWO_PI / self.k, rel_tol=1e-12):
            raise ValueError("theta must equal 2*pi/k")

    @classmethod
    def from_k(cls, k: int) -> "YaoParams":
        return cls(k=k, theta=TWO_PI / k)


class SpannerGraph:
    """Undirected weighted graph over a PointSet.

    Edges are deduplicated unordered id pairs stored with ``u < v`` in
    lexicographic order; weights equal the Euclidean distance between the
    endpoints.
    """

    def __init__(self, vertices: PointSet, edge_pairs, weights=None):
        self.vertices = vertices
        pairs = np.asarray(edge_pairs, dtype=np.int64).reshape(-1, 2)
        if len(pairs):
            u = np.minimum(pairs[:, 0], pairs[:, 1])
            v = np.maximum(pairs[:, 0], pairs[:, 1])
            if (u == v).any():
                raise ValueError("self-loop edge")
            order = np.lexsort((v, u))
            u, v = u[order], v[order]
            keep = np.ones(len(u), dtype=bool)
            keep[1:] = (u[1:] != u[:-1]) | (v[1:] != v[:-1])
            u, v = u[keep], v[keep]
            pos = {int(i): p for p, i in enumerate(vertices.ids)}
            try:
                pu = np.array([pos[int(i)] for i in u], dtype=np.int64)
                pv = np.array([pos[int(i)] for i in v], dtype=np.int64)
            except KeyError as exc:
                raise ValueError(f"edge endpoint id {exc} not in vertex set") from None
            w = np.hypot(
                vertices.xs[pu] - vertices.xs[pv], vertices.ys[pu] - vertices.ys[pv]
            )
            if weights is not None:
                given = np.asarray(weights, dtype=np.float64)
                if len(given) == len(pairs):
                    given = given[order][keep]
                scale = np.maximum(np.abs(w), 1.0)
                if not (np.abs(given - w) <= 1e-9 * scale).all():
                    raise ValueError("edge weight disagrees with Euclidean distance")
            self.u = u
            self.v = v
            self.w = w
            self._pu = pu
            self._pv = pv
        else:
            self.u = np.empty(0, dtype=np.int64)
            self.v = np.empty(0, dtype=np.int64)
            self.w = np.empty(0, dtype=np.float64)
            self._pu = np.empty(0, dtype=np.int64)
            self._pv = np.empty(0, dtype=np.int64)

    @property
    def edge_count(self) -> int:
        return len(self.u)

    def edge_id_pairs(self) -> set:
        return {(int(a), int(b)) for a, b in zip(self.u, self.v)}

    def edges(self):
        for a, b, w in zip(self.u, self.v, self.w):
            yield int(a), int(b), float(w)

    def endpoint_positions(self):
        """Vertex positions (row indices into the PointSet) per edge."""
        return self._pu, self._pv
