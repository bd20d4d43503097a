import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from yaompc.core import (
    ConeBasis,
    Point,
    PointSet,
    SpannerGraph,
    cone_index,
    l1_distance,
    l2_distance,
    rotate_from_cone_frame,
    rotate_into_cone_frame,
)

finite_coord = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


def P(x, y, pid=0):
    return Point(pid, x, y)


class TestDistances:
    def test_l1_examples(self):
        assert l1_distance(P(0, 0), P(3, 4)) == 7
        assert l1_distance(P(1, 1), P(1, 1)) == 0
        # hand evaluation: |-2-3| + |5-(-1)| = 5 + 6
        assert l1_distance(P(-2, 5), P(3, -1)) == 11

    def test_l2_examples(self):
        assert l2_distance(P(0, 0), P(3, 4)) == 5
        assert l2_distance(P(0, 0), P(0, 0)) == 0
        assert l2_distance(P(1, 2), P(4, 6)) == 5

    @given(finite_coord, finite_coord, finite_coord, finite_coord)
    def test_symmetry_and_norm_sandwich(self, ax, ay, bx, by):
        a, b = P(ax, ay), P(bx, by, 1)
        assert l1_distance(a, b) == l1_distance(b, a)
        assert l2_distance(a, b) == pytest.approx(l2_distance(b, a))
        l1, l2 = l1_distance(a, b), l2_distance(a, b)
        assert l2 <= l1 * (1 + 1e-12)
        assert l1 <= math.sqrt(2) * l2 * (1 + 1e-12)

    @given(finite_coord, finite_coord, finite_coord, finite_coord,
           finite_coord, finite_coord)
    def test_triangle_inequality(self, ax, ay, bx, by, cx, cy):
        a, b, c = P(ax, ay), P(bx, by, 1), P(cx, cy, 2)
        assert l2_distance(a, c) <= l2_distance(a, b) + l2_distance(b, c) + 1e-6


class TestConeIndex:
    def test_examples(self):
        assert cone_index(P(0, 0), P(1, 0), 4) == 0
        assert cone_index(P(0, 0), P(0, 1), 4) == 1
        # angle 5*pi/4 over theta = pi/4: exactly on the lower side of cone 5
        assert cone_index(P(0, 0), P(-1, -1), 8) == 5

    def test_coincident_raises(self):
        with pytest.raises(ValueError, match="undefined direction"):
            cone_index(P(2, 3), P(2, 3), 8)

    @given(st.integers(1, 32), finite_coord, finite_coord)
    def test_in_range(self, k, dx, dy):
        if dx == 0 and dy == 0:
            return
        assert 0 <= cone_index(P(0, 0), P(dx, dy), k) < k

    def test_partition_and_shift_by_theta(self):
        rng = np.random.default_rng(7)
        k = 12
        theta = 2 * math.pi / k
        apex = P(0.3, -0.7)
        for _ in range(300):
            ang = rng.uniform(0, 2 * math.pi)
            r = rng.uniform(0.1, 5)
            t = P(apex.x + r * math.cos(ang), apex.y + r * math.sin(ang))
            i = cone_index(apex, t, k)
            rot = P(
                apex.x + r * math.cos(ang + theta),
                apex.y + r * math.sin(ang + theta),
            )
            assert cone_index(apex, rot, k) == (i + 1) % k


class TestRotation:
    def test_identity_for_k4_cone0(self):
        # theta/2 - pi/4 vanishes for k=4, so cone 0 rotates by zero
        q = rotate_into_cone_frame(P(1, 0), 0, 4)
        assert q.x == pytest.approx(1.0) and q.y == pytest.approx(0.0)

    def test_k_below_4_rejected(self):
        with pytest.raises(ValueError, match="cone wider than quadrant"):
            rotate_into_cone_frame(P(1, 0), 0, 3)

    @given(st.integers(4, 24), st.integers(0, 23), finite_coord, finite_coord)
    def test_invertible(self, k, cone, x, y):
        cone %= k
        p = P(x, y)
        q = rotate_from_cone_frame(rotate_into_cone_frame(p, cone, k), cone, k)
        scale = max(1.0, abs(x), abs(y))
        assert abs(q.x - x) <= 1e-12 * scale
        assert abs(q.y - y) <= 1e-12 * scale

    def test_membership_matches_first_quadrant(self):
        # target in cone i of apex <=> rotated target in the first quadrant
        # of the rotated apex (random data keeps us off the boundaries)
        rng = np.random.default_rng(3)
        for k in (4, 6, 8, 16):
            for _ in range(250):
                ax, ay, tx, ty = rng.uniform(-10, 10, size=4)
                if ax == tx and ay == ty:
                    continue
                i = cone_index(P(ax, ay), P(tx, ty), k)
                ra = rotate_into_cone_frame(P(ax, ay), i, k)
                rt = rotate_into_cone_frame(P(tx, ty), i, k)
                assert rt.x - ra.x >= -1e-9 and rt.y - ra.y >= -1e-9

    def test_preserves_pairwise_distances(self):
        rng = np.random.default_rng(11)
        pts = [P(x, y, i) for i, (x, y) in enumerate(rng.uniform(-5, 5, (40, 2)))]
        rot = [rotate_into_cone_frame(p, 3, 7) for p in pts]
        for i in range(0, 40, 7):
            for j in range(i + 1, 40, 5):
                d0 = l2_distance(pts[i], pts[j])
                d1 = l2_distance(rot[i], rot[j])
                assert d1 == pytest.approx(d0, rel=1e-9)


class TestConeBasis:
    def test_matches_cone_index_on_random_data(self):
        rng = np.random.default_rng(5)
        for k in (4, 6, 9):
            basis = ConeBasis(k)
            for _ in range(200):
                qx, qy, px, py = rng.uniform(-4, 4, size=4)
                cones = [
                    c for c in range(k) if basis.in_cone(c, qx, qy, px, py)
                ]
                assert cones == [cone_index(P(qx, qy), P(px, py), k)]

    def test_score_is_rotated_l1(self):
        basis = ConeBasis(8)
        rng = np.random.default_rng(9)
        for _ in range(100):
            qx, qy, px, py = rng.uniform(-4, 4, size=4)
            c = cone_index(P(qx, qy), P(px, py), 8)
            rq = rotate_into_cone_frame(P(qx, qy), c, 8)
            rp = rotate_into_cone_frame(P(px, py), c, 8)
            ell1 = (rp.x - rq.x) + (rp.y - rq.y)
            score_diff = basis.score(c, px, py) - basis.score(c, qx, qy)
            assert score_diff == pytest.approx(ell1, rel=1e-9, abs=1e-12)

    def test_coincident_never_in_cone(self):
        basis = ConeBasis(6)
        assert not any(basis.in_cone(c, 1.5, -2.0, 1.5, -2.0) for c in range(6))


class TestPointSet:
    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            PointSet([1, 1], [0.0, 1.0], [0.0, 1.0])

    def test_duplicate_coordinates_allowed(self):
        ps = PointSet([1, 2], [0.5, 0.5], [0.5, 0.5])
        assert ps.n == 2

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            PointSet([1], [float("nan")], [0.0])

    def test_round_trip(self):
        pts = [Point(3, 0.0, 1.0), Point(1, 2.0, -1.0)]
        ps = PointSet.from_points(pts)
        assert list(ps) == pts
        assert ps.coords_of(1) == (2.0, -1.0)


class TestSpannerGraph:
    def setup_method(self):
        self.ps = PointSet([1, 2, 3], [0.0, 3.0, 0.0], [0.0, 4.0, 1.0])

    def test_dedup_and_order(self):
        g = SpannerGraph(self.ps, [(2, 1), (1, 2), (1, 3)])
        assert g.edge_id_pairs() == {(1, 2), (1, 3)}
        assert g.edge_count == 2
        assert list(g.u) == [1, 1]

    def test_weights_are_euclidean(self):
        g = SpannerGraph(self.ps, [(1, 2)])
        assert g.w[0] == pytest.approx(5.0)

    def test_self_loop_rejected(self):
        with pytest.raises(ValueError, match="self-loop"):
            SpannerGraph(self.ps, [(2, 2)])

    def test_dangling_rejected(self):
        with pytest.raises(ValueError, match="not in vertex set"):
            SpannerGraph(self.ps, [(1, 9)])

    def test_bad_weight_rejected(self):
        with pytest.raises(ValueError, match="weight"):
            SpannerGraph(self.ps, [(1, 2)], weights=[4.0])
