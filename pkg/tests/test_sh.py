import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import sph_harm_y

from partsplat.sh import (
    DC_OFFSET, SH_C0, SHShapeError, constant_block, degree_from_num_coeffs, fibonacci_sphere,
    num_coeffs, rgb_to_dc, sh_basis, sh_eval, sh_eval_raw,
)


def scipy_real_sh(degree, dirs):
    """Real SH assembled from scipy's complex harmonics.

    Index l*l + l + m holds sqrt(2) Re Y_l^m for m > 0, sqrt(2) Im Y_l^|m|
    for m < 0 and Y_l^0 for m = 0.
    """
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    theta = np.arccos(np.clip(z, -1, 1))
    phi = np.arctan2(y, x)
    cols = []
    for l in range(degree + 1):
        for m in range(-l, l + 1):
            Y = sph_harm_y(l, abs(m), theta, phi)
            if m > 0:
                v = np.sqrt(2) * Y.real
            elif m < 0:
                v = np.sqrt(2) * Y.imag
            else:
                v = Y.real
            cols.append(v)
    return np.stack(cols, axis=-1)


class TestBasis:
    @pytest.mark.parametrize("degree", [0, 1, 2, 3, 4])
    def test_matches_scipy(self, degree):
        d = fibonacci_sphere(200)
        assert_allclose(sh_basis(degree, d), scipy_real_sh(degree, d), rtol=0, atol=1e-12)

    def test_orthonormal_under_quadrature(self):
        rng = np.random.default_rng(0)
        d = rng.normal(size=(200_000, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        B = sh_basis(4, d)
        gram = 4 * np.pi * B.T @ B / len(d)
        assert_allclose(gram, np.eye(25), atol=0.02)

    def test_dc_constant(self):
        assert SH_C0 == pytest.approx(1 / (2 * np.sqrt(np.pi)))

    def test_count(self):
        assert [num_coeffs(d) for d in range(5)] == [1, 4, 9, 16, 25]
        assert degree_from_num_coeffs(16) == 3

    @pytest.mark.parametrize("n", [0, 2, 5, 36])
    def test_bad_count(self, n):
        with pytest.raises(SHShapeError):
            degree_from_num_coeffs(n)

    def test_bad_degree(self):
        with pytest.raises(SHShapeError):
            sh_basis(5, np.array([0.0, 0.0, 1.0]))


class TestEval:
    def test_zero_is_gray(self):
        assert_allclose(sh_eval(np.zeros((16, 3)), [0, 0, 1]), DC_OFFSET)

    def test_dc_inverse(self):
        rgb = np.array([0.1, 0.5, 0.9])
        block = np.zeros((1, 3))
        block[0] = rgb_to_dc(rgb)
        assert_allclose(sh_eval(block, [1, 0, 0]), rgb, atol=1e-15)

    def test_constant_block_direction_independent(self):
        rgb = np.array([0.2, 0.7, 0.4])
        vals = sh_eval_raw(constant_block(rgb, 3)[None], fibonacci_sphere(50))
        assert_allclose(vals, np.broadcast_to(rgb, vals.shape), atol=1e-15)

    def test_clamp(self):
        block = np.zeros((4, 3))
        block[0] = [10.0, -10.0, 0.0]
        assert_allclose(sh_eval(block, [0, 1, 0]), [1.0, 0.0, 0.5])
        assert sh_eval_raw(block, np.array([0, 1, 0.0]))[0] > 1.0

    def test_rejects_non_unit_direction(self):
        with pytest.raises(ValueError):
            sh_eval(np.zeros((4, 3)), [0, 0, 2.0])

    def test_rejects_bad_block(self):
        with pytest.raises(SHShapeError):
            sh_eval_raw(np.zeros((5, 3)), np.array([0, 0, 1.0]))
        with pytest.raises(SHShapeError):
            sh_eval_raw(np.zeros((4, 2)), np.array([0, 0, 1.0]))

    def test_linear_in_coefficients(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(2, 9, 3))
        d = fibonacci_sphere(10)
        lhs = sh_eval_raw(2 * a + b, d) - DC_OFFSET
        rhs = 2 * (sh_eval_raw(a, d) - DC_OFFSET) + (sh_eval_raw(b, d) - DC_OFFSET)
        assert_allclose(lhs, rhs, atol=1e-13)


def test_fibonacci_unit_and_spread():
    d = fibonacci_sphere(64)
    assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-15)
    assert_allclose(d.mean(axis=0), 0.0, atol=0.02)
