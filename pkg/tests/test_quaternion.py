import numpy as np
import numpy.testing as npt
import pytest

from BKLibQSeld.exceptions import ShapeError
from BKLibQSeld.quaternion import (
    Quaternion,
    QuatTensor,
    conjugate_and_norm,
    hamilton_matmul,
    hamilton_matmul_backward,
    hamilton_product,
    to_real_block,
)

ONE = Quaternion(1, 0, 0, 0)
I = Quaternion(0, 1, 0, 0)
J = Quaternion(0, 0, 1, 0)
K = Quaternion(0, 0, 0, 1)


class TestHamiltonProduct:
    def test_identity_is_neutral(self):
        q = Quaternion(0.3, -1.2, 2.5, 4.0)
        assert hamilton_product(ONE, q) == q
        assert hamilton_product(q, ONE) == q

    def test_basis_axioms(self):
        assert I * J == K
        assert J * K == I
        assert K * I == J
        assert J * I == -K
        assert I * I == -ONE
        assert I * J * K == -ONE

    def test_worked_product(self):
        p, q = Quaternion(1, 2, 3, 4), Quaternion(5, 6, 7, 8)
        assert hamilton_product(p, q) == Quaternion(-60, 12, 30, 24)

    def test_norm_is_multiplicative(self):
        p, q = Quaternion(1, 2, 3, 4), Quaternion(5, 6, 7, 8)
        _, norm_pq = conjugate_and_norm(p * q)
        assert norm_pq ** 2 == pytest.approx(5220.0)
        assert norm_pq ** 2 == pytest.approx(30.0 * 174.0)

    def test_norm_is_multiplicative_on_random_pairs(self, rng):
        p = QuatTensor(rng.standard_normal((4, 10_000)))
        q = QuatTensor(rng.standard_normal((4, 10_000)))
        expected = p.norm() * q.norm()
        assert np.all(np.abs((p * q).norm() - expected) <= 1e-12 * expected)

    def test_associativity_on_random_triples(self, rng):
        p, q, r = (QuatTensor(rng.standard_normal((4, 1000))) for _ in range(3))
        left, right = ((p * q) * r).data, (p * (q * r)).data
        scale = p.norm() * q.norm() * r.norm()
        assert np.all(np.linalg.norm(left - right, axis=0) <= 1e-12 * scale)


class TestConjugateAndNorm:
    @pytest.mark.parametrize("q, conj, norm", [
        ((1, 0, 0, 0), (1, 0, 0, 0), 1.0),
        ((0, 3, 0, 4), (0, -3, 0, -4), 5.0),
        ((1, 1, 1, 1), (1, -1, -1, -1), 2.0),
    ])
    def test_cases(self, q, conj, norm):
        c, n = conjugate_and_norm(Quaternion(*q))
        assert c == Quaternion(*conj)
        assert n == pytest.approx(norm)

    def test_product_with_conjugate_is_squared_norm(self):
        q = Quaternion(1, 2, 3, 4)
        c, n = conjugate_and_norm(q)
        npt.assert_allclose((q * c).as_array(), [n * n, 0, 0, 0], atol=1e-12)


class TestQuatTensor:
    def test_requires_four_planes(self):
        with pytest.raises(ShapeError):
            QuatTensor(np.zeros((3, 2)))

    def test_from_planes_rejects_mismatched_shapes(self):
        with pytest.raises(ShapeError):
            QuatTensor.from_planes(np.zeros(2), np.zeros(2), np.zeros(3), np.zeros(2))

    def test_elementwise_product_matches_scalar(self, rng):
        a = QuatTensor(rng.standard_normal((4, 3)))
        b = QuatTensor(rng.standard_normal((4, 3)))
        prod = a * b
        for i in range(3):
            expected = hamilton_product(a[i], b[i]).as_array()
            npt.assert_allclose(prod[i].as_array(), expected, atol=1e-12)

    def test_conjugate_and_norm(self, rng):
        q = QuatTensor(rng.standard_normal((4, 2, 5)))
        npt.assert_allclose(q.conjugate().norm(), q.norm())
        npt.assert_allclose(q.norm(), np.sqrt((q.data ** 2).sum(axis=0)))

    def test_features_packing(self, rng):
        features = rng.standard_normal((2, 5, 6, 8))
        q = QuatTensor.from_features(features)
        assert q.shape == (2, 2, 5, 6)
        # canal 0 = magnitudes (W, X, Y, Z), canal 1 = fases
        npt.assert_array_equal(q.x[:, 0], features[..., 1])
        npt.assert_array_equal(q.z[:, 1], features[..., 7])
        npt.assert_array_equal(q.to_features(), features)

    def test_features_packing_requires_eight_planes(self):
        with pytest.raises(ShapeError):
            QuatTensor.from_features(np.zeros((5, 6, 4)))


class TestRealBlock:
    def test_identity(self):
        block = to_real_block(QuatTensor(np.array([1.0, 0, 0, 0]).reshape(4, 1, 1)))
        npt.assert_array_equal(block, np.eye(4))

    def test_pure_i(self):
        block = to_real_block(QuatTensor(np.array([0, 1.0, 0, 0]).reshape(4, 1, 1)))
        # (w, x, y, z) -> (−x, w, −z, y)
        npt.assert_array_equal(block @ np.array([1.0, 2, 3, 4]), [-2, 1, -4, 3])
        for e in np.eye(4):
            npt.assert_array_equal(block @ e, hamilton_product(I, Quaternion.from_array(e)).as_array())

    def test_matches_hamilton_matvec(self, rng):
        w = rng.standard_normal((4, 2, 3))
        v = rng.standard_normal((4, 3, 1))
        expected = hamilton_matmul(w, v).reshape(-1)
        got = to_real_block(QuatTensor(w)) @ v.reshape(-1)
        assert np.max(np.abs(got - expected)) < 1e-12

    def test_product_homomorphism(self, rng):
        p, q = rng.standard_normal(4), rng.standard_normal(4)
        bp = to_real_block(QuatTensor(p.reshape(4, 1, 1)))
        bq = to_real_block(QuatTensor(q.reshape(4, 1, 1)))
        pq = hamilton_product(Quaternion.from_array(p), Quaternion.from_array(q)).as_array()
        npt.assert_allclose(bp @ bq, to_real_block(QuatTensor(pq.reshape(4, 1, 1))), atol=1e-12)

    def test_rejects_non_matrix(self):
        with pytest.raises(ShapeError):
            to_real_block(QuatTensor(np.zeros((4, 2))))


def test_hamilton_matmul_backward_matches_block_transpose(rng):
    w = rng.standard_normal((4, 2, 3))
    x = rng.standard_normal((4, 3, 1))
    grad_y = rng.standard_normal((4, 2, 1))
    _, grad_x = hamilton_matmul_backward(w, x, grad_y)
    expected = to_real_block(QuatTensor(w)).T @ grad_y.reshape(-1)
    npt.assert_allclose(grad_x.reshape(-1), expected, atol=1e-12)
