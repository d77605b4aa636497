import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mimicforge import geom


def rng_quat(rng):
    q = rng.normal(size=4)
    return geom.quat_normalize(q)


unit_quats = st.builds(
    lambda seed: rng_quat(np.random.default_rng(seed)), st.integers(0, 2**32 - 1)
)


class TestQuatDelta:
    def test_self_delta_is_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            q = rng_quat(rng)
            d = geom.quat_delta(q, q)
            assert np.allclose(d, geom.quat_identity(), atol=1e-6) or np.allclose(
                d, -geom.quat_identity(), atol=1e-6
            )

    def test_identity_left_argument(self):
        q = geom.quat_from_axis_angle([0, 1, 0], 0.7)
        assert np.allclose(geom.quat_delta(geom.quat_identity(), q), q, atol=1e-12)

    def test_same_rotation(self):
        q = geom.quat_from_axis_angle([1, 0, 0], math.pi / 2)
        d = geom.quat_delta(q, q)
        assert abs(abs(d[0]) - 1.0) < 1e-12

    def test_non_finite_rejected(self):
        q = geom.quat_identity()
        bad = np.array([np.nan, 0.0, 0.0, 1.0])
        with pytest.raises(ValueError):
            geom.quat_delta(bad, q)
        with pytest.raises(ValueError):
            geom.quat_delta(q, np.array([1.0, np.inf, 0.0, 0.0]))


class TestQuatDist:
    def test_zero_for_equal(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            q = rng_quat(rng)
            assert geom.quat_dist(q, q) < 1e-9

    def test_90_degrees_is_pi_over_3(self):
        q = geom.quat_from_axis_angle([1, 0, 0], math.pi / 2)
        assert abs(geom.quat_dist(geom.quat_identity(), q) - math.pi / 3) < 1e-9

    def test_180_degrees_is_pi(self):
        for axis in ([1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]):
            q = geom.quat_from_axis_angle(axis, math.pi)
            assert abs(geom.quat_dist(geom.quat_identity(), q) - math.pi) < 1e-9

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            a, b = rng_quat(rng), rng_quat(rng)
            assert abs(geom.quat_dist(a, b) - geom.quat_dist(b, a)) < 1e-6

    def test_double_cover_insensitive(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a, b = rng_quat(rng), rng_quat(rng)
            assert abs(geom.quat_dist(a, b) - geom.quat_dist(a, -b)) < 1e-9

    def test_monotone_on_degree_sweep(self):
        prev = -1.0
        for deg in range(0, 181):
            q = geom.quat_from_axis_angle([0, 0, 1], math.radians(deg))
            d = geom.quat_dist(geom.quat_identity(), q)
            assert d >= prev - 1e-12
            prev = d

    def test_vector_norm_variant_recovers_angle(self):
        for angle in (0.1, 0.5, 1.0, 2.0, 3.0):
            q = geom.quat_from_axis_angle([0, 1, 0], angle)
            d = geom.quat_dist(geom.quat_identity(), q, variant="vector_norm")
            assert abs(d - angle) < 1e-9

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            geom.quat_dist(geom.quat_identity(), geom.quat_identity(), variant="bogus")


class TestAxisDist:
    def test_same_axis_zero(self):
        v = np.array([0.3, -0.4, 0.5])
        assert geom.axis_dist(v, v) < 1e-6

    def test_orthogonal(self):
        assert abs(geom.axis_dist([1, 0, 0], [0, 1, 0]) - math.pi / 2) < 1e-12

    def test_antipodal(self):
        assert abs(geom.axis_dist([1, 0, 0], [-1, 0, 0]) - math.pi) < 1e-12

    def test_zero_length_rejected(self):
        with pytest.raises(ValueError):
            geom.axis_dist([0, 0, 0], [1, 0, 0])


class TestRotateVec:
    def test_identity(self):
        v = np.array([1.0, 2.0, 3.0])
        assert np.allclose(geom.rotate_vec(geom.quat_identity(), v), v)

    def test_axis_permutation(self):
        q = geom.quat_from_axis_angle([0, 0, 1], math.pi / 2)
        assert np.allclose(geom.rotate_vec(q, [1, 0, 0]), [0, 1, 0], atol=1e-12)

    def test_flip(self):
        q = geom.quat_from_axis_angle([1, 0, 0], math.pi)
        assert np.allclose(geom.rotate_vec(q, [0, 0, 1]), [0, 0, -1], atol=1e-12)

    def test_preserves_dot_products(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            q = rng_quat(rng)
            u, v = rng.normal(size=3), rng.normal(size=3)
            ru, rv = geom.rotate_vec(q, u), geom.rotate_vec(q, v)
            assert abs(ru @ rv - u @ v) < 1e-6

    def test_matches_matrix_form(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            q = rng_quat(rng)
            v = rng.normal(size=3)
            assert np.allclose(geom.rotate_vec(q, v), geom.quat_to_mat(q) @ v, atol=1e-12)


class TestAxisAngle:
    def test_identity_convention(self):
        axis, angle = geom.quat_to_axis_angle(geom.quat_identity())
        assert angle == 0.0
        assert np.allclose(axis, [0, 0, 1])

    def test_90_about_y(self):
        axis, angle = geom.quat_to_axis_angle(geom.quat_from_axis_angle([0, 1, 0], math.pi / 2))
        assert abs(angle - math.pi / 2) < 1e-12
        assert np.allclose(axis, [0, 1, 0], atol=1e-12)

    def test_negative_angle_canonicalized(self):
        axis, angle = geom.quat_to_axis_angle(geom.quat_from_axis_angle([0, 1, 0], -math.pi / 2))
        assert abs(angle - math.pi / 2) < 1e-12
        assert np.allclose(axis, [0, -1, 0], atol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(unit_quats)
    def test_roundtrip(self, q):
        axis, angle = geom.quat_to_axis_angle(q)
        r = geom.quat_from_axis_angle(axis, angle)
        assert np.allclose(r, q, atol=1e-6) or np.allclose(r, -q, atol=1e-6)


class TestHelpers:
    def test_slerp_endpoints(self):
        a = geom.quat_from_axis_angle([1, 0, 0], 0.3)
        b = geom.quat_from_axis_angle([0, 1, 0], 1.1)
        assert np.allclose(geom.slerp(a, b, 0.0), a, atol=1e-12)
        assert np.allclose(geom.slerp(a, b, 1.0), b, atol=1e-12)

    def test_slerp_halfway_angle(self):
        b = geom.quat_from_axis_angle([0, 0, 1], 1.0)
        mid = geom.slerp(geom.quat_identity(), b, 0.5)
        axis, angle = geom.quat_to_axis_angle(mid)
        assert abs(angle - 0.5) < 1e-9

    def test_yaw_quat_strips_tilt(self):
        q = geom.quat_mul(
            geom.quat_from_axis_angle([0, 0, 1], 0.8),
            geom.quat_from_axis_angle([0, 1, 0], 0.4),
        )
        yq = geom.yaw_quat(q)
        fwd = geom.rotate_vec(yq, [1, 0, 0])
        assert abs(fwd[2]) < 1e-12
        assert abs(math.atan2(fwd[1], fwd[0]) - 0.8) < 1e-9

    def test_quat_from_omega_integrates(self):
        omega = np.array([0.0, 0.0, 2.0])
        q = geom.quat_identity()
        for _ in range(100):
            q = geom.quat_normalize(geom.quat_mul(geom.quat_from_omega(omega, 0.01), q))
        axis, angle = geom.quat_to_axis_angle(q)
        assert abs(angle - 2.0) < 1e-9
        assert np.allclose(axis, [0, 0, 1], atol=1e-9)

    def test_rotation_vector_zero_at_identity(self):
        assert np.allclose(geom.rotation_vector(geom.quat_identity()), 0.0)
