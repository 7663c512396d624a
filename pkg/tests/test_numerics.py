import numpy as np
import pytest

from onebitcs.numerics import (
    ContractViolation,
    RngStream,
    exact_sign,
    gaussian_matrix,
    gaussian_vector,
    matvec,
    matvec_t,
    norm2,
    relu,
    smooth_sign,
)


def test_matvec_identity():
    assert np.array_equal(matvec(np.eye(2), [3.0, -1.0]), [3.0, -1.0])


def test_matvec_zero_matrix():
    assert np.array_equal(matvec(np.zeros((2, 2)), [5.0, 7.0]), [0.0, 0.0])


def test_matvec_basis_vector_extracts_column():
    a = gaussian_matrix(RngStream(7), 4, 3)
    e1 = np.array([1.0, 0.0, 0.0])
    # oracle: direct column extraction
    assert np.array_equal(matvec(a, e1), a[:, 0])


def test_matvec_dimension_mismatch():
    with pytest.raises(ContractViolation):
        matvec(np.eye(2), [1.0, 2.0, 3.0])


def test_matvec_t_identity():
    y = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(matvec_t(np.eye(3), y), y)


def test_matvec_t_basis_vector_extracts_row():
    a = gaussian_matrix(RngStream(3), 3, 5)
    e2 = np.array([0.0, 1.0, 0.0])
    assert np.array_equal(matvec_t(a, e2), a[1, :])


def test_matvec_t_scalar_chain():
    a = np.array([[2.0]])
    assert matvec_t(a, matvec(a, np.array([3.0])))[0] == 12.0


def test_matvec_t_dimension_mismatch():
    with pytest.raises(ContractViolation):
        matvec_t(np.eye(2), [1.0, 2.0, 3.0])


def test_relu_basic():
    assert np.array_equal(relu([-1.0, 0.0, 2.0]), [0.0, 0.0, 2.0])
    assert np.array_equal(relu([-3.0, -0.5]), [0.0, 0.0])


def test_relu_abs_identity():
    rng = RngStream(11)
    for _ in range(1000):
        x = rng.standard_normal(7)
        assert np.allclose(relu(x) + relu(-x), np.abs(x), rtol=0, atol=0)


def test_smooth_sign_at_zero():
    assert smooth_sign(np.array([0.0]), 50.0)[0] == 0.0


def test_smooth_sign_value():
    # tanh(50 * 0.1) = tanh(5)
    got = smooth_sign(np.array([0.1]), 50.0)[0]
    assert got == pytest.approx(np.tanh(5.0))
    assert got == pytest.approx(0.999909, abs=1e-6)


def test_smooth_sign_tail_bound():
    # past magnitude 0.1 the surrogate is within 1e-4 of the exact sign
    xs = np.concatenate([np.linspace(0.1, 5.0, 500), -np.linspace(0.1, 5.0, 500)])
    assert np.max(np.abs(smooth_sign(xs, 50.0) - exact_sign(xs))) < 1e-4


def test_smooth_sign_bounds_monotone_odd():
    rng = RngStream(5)
    x = np.sort(rng.standard_normal(1000))
    y = smooth_sign(x, 7.0)
    assert np.all(y >= -1.0) and np.all(y <= 1.0)
    # strictly interior wherever float64 tanh has not saturated (|7x| < 19)
    inner = np.abs(7.0 * x) < 19.0
    assert np.all(np.abs(y[inner]) < 1.0)
    assert np.all(np.diff(y) >= 0.0)
    assert np.allclose(smooth_sign(-x, 7.0), -y)


def test_smooth_sign_rejects_bad_sharpness():
    with pytest.raises(ContractViolation):
        smooth_sign(np.array([1.0]), 0.0)


def test_exact_sign_convention():
    assert np.array_equal(exact_sign([0.5, -2.0, 0.0]), [1.0, -1.0, 1.0])


def test_exact_sign_scale_invariance():
    rng = RngStream(13)
    for _ in range(100):
        x = rng.standard_normal(9)
        c = float(np.exp(rng.standard_normal()))
        assert np.array_equal(exact_sign(c * x), exact_sign(x))


def test_exact_sign_agrees_with_rounded_smooth_sign():
    rng = RngStream(17)
    for _ in range(200):
        x = rng.standard_normal(16)
        x = x[np.abs(x) > 1e-3]
        assert np.array_equal(exact_sign(x), np.sign(smooth_sign(x, 50.0)))


def test_norm2():
    assert norm2([3.0, 4.0]) == 5.0
    assert norm2(np.zeros(4)) == 0.0


def test_norm2_homogeneity():
    rng = RngStream(19)
    for _ in range(1000):
        x = rng.standard_normal(6)
        c = float(rng.standard_normal())
        assert norm2(c * x) == pytest.approx(abs(c) * norm2(x), rel=1e-12)


def test_matvec_linearity():
    rng = RngStream(23)
    for _ in range(50):
        a = rng.standard_normal((16, 8))
        x, y = rng.standard_normal(8), rng.standard_normal(8)
        ca, cb = rng.standard_normal(2)
        lhs = matvec(a, ca * x + cb * y)
        rhs = ca * matvec(a, x) + cb * matvec(a, y)
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_adjoint_identity():
    rng = RngStream(29)
    for _ in range(50):
        a = rng.standard_normal((16, 8))
        x, y = rng.standard_normal(8), rng.standard_normal(16)
        lhs = float(matvec(a, x) @ y)
        rhs = float(x @ matvec_t(a, y))
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_rng_reproducibility():
    a = RngStream(42).standard_normal(100)
    b = RngStream(42).standard_normal(100)
    assert a.tobytes() == b.tobytes()


def test_rng_children_independent_of_draw_order():
    parent1 = RngStream(42)
    parent1.standard_normal(1000)  # consume some of the parent stream
    parent2 = RngStream(42)
    a = parent1.child("x").standard_normal(10)
    b = parent2.child("x").standard_normal(10)
    assert a.tobytes() == b.tobytes()
    c = parent2.child("y").standard_normal(10)
    assert a.tobytes() != c.tobytes()


def test_gaussian_draws_deterministic():
    a = gaussian_matrix(RngStream(1), 5, 3)
    b = gaussian_matrix(RngStream(1), 5, 3)
    assert a.tobytes() == b.tobytes()


def test_gaussian_moments():
    draws = gaussian_vector(RngStream(99), 100_000)
    assert -0.02 < draws.mean() < 0.02
    assert 0.97 < draws.var() < 1.03


def test_gaussian_rejects_bad_shapes():
    with pytest.raises(ContractViolation):
        gaussian_vector(RngStream(0), 0)
    with pytest.raises(ContractViolation):
        gaussian_matrix(RngStream(0), 3, -1)
