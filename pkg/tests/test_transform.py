import numpy as np
import pytest

from hyperplateau import symfunc, transform as tf
from hyperplateau.expr import RhsSpec
from hyperplateau.graphgeom import PointJet, a_matrix
from hyperplateau.symfunc import DomainError

from _jets import admissible_jets, central_grad, rel_err


class Fixed:
    """psi frozen at one value, standing in for f(kappa[u]) at a jet."""

    def __init__(self, value):
        self.v = value

    def value(self, x, u):
        return self.v

    def d_u(self, x, u):
        return 0.0


def hemi(x):
    x = np.asarray(x, float)
    s = np.sqrt(1 - x @ x)
    du = -x / s
    return PointJet(x, s, du, -(np.eye(len(x)) + np.outer(du, du)) / s)


def test_hemisphere_maps_to_constant():
    mj = tf.to_ma(hemi([0.3, -0.5]))
    assert mj.U == pytest.approx(1.0)
    np.testing.assert_allclose(mj.dU, 0, atol=1e-15)
    np.testing.assert_allclose(mj.d2U, 0, atol=1e-14)


def test_flat_jet():
    mj = tf.to_ma(PointJet([0.2, 0.1], 0.5, [0.0, 0.0], np.zeros((2, 2))))
    assert mj.U == pytest.approx(0.25 + 0.05)
    np.testing.assert_allclose(mj.d2U, 2 * np.eye(2))
    assert tf.psi_to_Psi(Fixed(1.0), mj) == pytest.approx(4.0)
    assert tf.ma_residual(mj, 4.0) == pytest.approx(0.0, abs=1e-14)


def test_cap_is_strictly_convex():
    for x in ([0.0, 0.0], [0.5, 0.3], [-0.7, 0.1]):
        j = hemi(x)
        cap = PointJet(j.x, j.u - 0.5, j.du, j.d2u)
        assert np.linalg.eigvalsh(tf.to_ma(cap).d2U).min() > 0


@pytest.mark.parametrize("n", [2, 3])
def test_round_trip(n):
    for jet in admissible_jets(n, n, 1, 200):
        back = tf.from_ma(tf.to_ma(jet))
        for a, b in zip((jet.u, jet.du, jet.d2u), (back.u, back.du, back.d2u)):
            assert rel_err(a, b) <= 1e-12


def test_from_ma_rejects_ideal_boundary():
    with pytest.raises(DomainError):
        tf.from_ma(tf.MaJet([0.5, 0.0], 0.25, [1.0, 0.0], 2 * np.eye(2)))


def test_hemisphere_ma_to_jet():
    j = hemi([0.3, 0.4])
    back = tf.from_ma(tf.MaJet(j.x, 1.0, [0.0, 0.0], np.zeros((2, 2))))
    np.testing.assert_allclose([back.u, *back.du], [j.u, *j.du], atol=1e-15)
    np.testing.assert_allclose(back.d2u, j.d2u, atol=1e-14)


def test_gradient_ratio_is_w_squared():
    for jet in admissible_jets(4, 2, 1, 100):
        mj = tf.to_ma(jet)
        rho, _, _ = tf.gradient_ratio(mj.x, mj.U, mj.dU)
        assert rho == pytest.approx(1 + jet.du @ jet.du, rel=1e-13)


@pytest.mark.parametrize("n", [2, 3])
def test_det_equals_Psi(n):
    # det D^2U = 2^n w^(n+2) det A for every jet, so equality holds with psi = det(A)^(1/n)
    for jet in admissible_jets(50 + n, n, n, 1000):
        A = a_matrix(jet.u, jet.du, jet.d2u)
        psi = Fixed(symfunc.matrix_f_value(A, n))
        mj = tf.to_ma(jet)
        lhs = np.linalg.det(mj.d2U)
        assert abs(lhs - tf.psi_to_Psi(psi, mj)) <= 1e-9 * abs(lhs)


def test_hemisphere_both_sides_zero():
    mj = tf.to_ma(hemi([0.1, 0.2]))
    assert tf.psi_to_Psi(Fixed(0.0), mj) == 0.0
    assert tf.ma_residual(mj, 0.0) == pytest.approx(0.0, abs=1e-14)


def test_ma_residual_on_exact_cap():
    psi = RhsSpec("0.5")
    for x in ([0.0, 0.0], [0.4, -0.3], [0.1, 0.8]):
        j = hemi(x)
        mj = tf.to_ma(PointJet(j.x, j.u - 0.5, j.du, j.d2u))
        assert abs(tf.ma_residual(mj, tf.psi_to_Psi(psi, mj))) <= 1e-10


def test_ma_residual_rejects_indefinite():
    with pytest.raises(tf.AdmissibilityError):
        tf.ma_residual(tf.MaJet([0.0, 0.0], 1.0, [0.0, 0.0], np.diag([1.0, -1.0])), 0.0)


def test_Psi_terms_derivatives_fd():
    psi = RhsSpec("2*u^2 + x1")
    x = np.array([0.2, -0.1])
    U, dU = 0.7, np.array([0.3, -0.4])
    val, PU, Pp = tf.Psi_terms(psi, x, U, dU)
    f = lambda z: tf.Psi_terms(psi, x, z[0], z[1:])[0]
    fd = central_grad(f, np.array([U, *dU]))
    assert rel_err(np.array([PU, *Pp]), fd) < 1e-7
    mj = tf.MaJet(x, U, dU, np.eye(2))
    assert val == pytest.approx(tf.psi_to_Psi(psi, mj), rel=1e-15)
