import numpy as np
import pytest

from hyperplateau import graphgeom as gg
from hyperplateau.domain import StencilError, field_from_function, make_grid
from hyperplateau.expr import RhsSpec
from hyperplateau.symfunc import ConeLabel, DomainError

from _jets import admissible_jets, rel_err


def sphere_jet(x, R=1.0, shift=0.0):
    x = np.asarray(x, dtype=float)
    s = np.sqrt(R**2 - x @ x)
    du = -x / s
    d2u = -(np.eye(len(x)) + np.outer(du, du)) / s
    return gg.PointJet(x, s - shift, du, d2u)


def test_flat_jet_quantities():
    q = gg.graph_quantities(gg.PointJet([0.3, -0.2], 0.7, [0.0, 0.0], np.zeros((2, 2))))
    assert q.w == 1.0 and q.nu_up == 1.0
    np.testing.assert_allclose(q.gamma_up, np.eye(2))
    np.testing.assert_allclose(q.a_matrix, np.eye(2))


def test_hemisphere_jet_gives_zero_matrix():
    jet = sphere_jet([0.6, 0.0])
    assert jet.u == pytest.approx(0.8)
    np.testing.assert_allclose(jet.du, [-0.75, 0.0])
    np.testing.assert_allclose(gg.graph_quantities(jet).a_matrix, np.zeros((2, 2)), atol=1e-15)


def test_cap_jet_gives_half_identity():
    jet = sphere_jet([0.6, 0.0], shift=0.5)
    assert jet.u == pytest.approx(0.3)
    np.testing.assert_allclose(gg.graph_quantities(jet).a_matrix, 0.5 * np.eye(2), atol=1e-15)


def test_gamma_squares_to_inverse_metric():
    rng = np.random.default_rng(0)
    for _ in range(20):
        du = rng.normal(size=3)
        q = gg.graph_quantities(gg.PointJet(np.zeros(3), 1.0, du, np.eye(3)))
        np.testing.assert_allclose(q.gamma_up @ q.gamma_up, np.linalg.inv(q.g_tilde), atol=1e-13)
        np.testing.assert_allclose(q.gamma_up @ q.gamma_down, np.eye(3), atol=1e-13)


def test_a_matrix_matches_second_form_oracle():
    # A = u gamma h gamma with the second form assembled independently
    for jet in admissible_jets(5, 3, 2, 50):
        q = gg.graph_quantities(jet)
        h = gg.hyperbolic_second_form(jet)
        np.testing.assert_allclose(jet.u * q.gamma_up @ h @ q.gamma_up * jet.u, q.a_matrix, atol=1e-12)


@pytest.mark.parametrize(
    ("jet", "expected"),
    [
        (gg.PointJet([0.1, 0.2], 0.4, [0.0, 0.0], np.zeros((2, 2))), 1.0),
        (sphere_jet([0.3, -0.4]), 0.0),
        (sphere_jet([0.3, -0.4], shift=0.5), 0.5),
    ],
)
def test_curvature_examples(jet, expected):
    sp = gg.curvature_spectrum(jet, 1)
    np.testing.assert_allclose(sp.kappa, expected, atol=1e-12)


def test_curvature_rotation_invariant():
    rng = np.random.default_rng(2)
    for jet in admissible_jets(2, 2, 2, 20):
        th = rng.uniform(0, 2 * np.pi)
        R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        a = gg.curvature_spectrum(jet, 2).kappa
        b = gg.curvature_spectrum(jet.rotated(R), 2).kappa
        np.testing.assert_allclose(a, b, atol=1e-11)


def test_cone_label_of_spectrum():
    assert gg.curvature_spectrum(sphere_jet([0.2, 0.1], shift=0.5), 2).cone is ConeLabel.INTERIOR
    assert gg.curvature_spectrum(sphere_jet([0.2, 0.1]), 2).cone is ConeLabel.BOUNDARY


def test_nonpositive_height_raises():
    with pytest.raises(DomainError):
        gg.graph_quantities(gg.PointJet([0.0, 0.0], 0.0, [0.0, 0.0], np.zeros((2, 2))))


def test_residual_examples():
    x = np.array([0.45, 0.2])
    jet = sphere_jet(x, shift=0.5)
    assert gg.residual(jet, RhsSpec("0.5"), 2) == pytest.approx(0.0, abs=1e-12)
    assert gg.residual(jet, RhsSpec("1"), 1) == pytest.approx(0.0, abs=1e-12)
    apex = sphere_jet([0.0, 0.0], shift=0.5)
    assert gg.residual(apex, RhsSpec("2*u^2"), 2) == pytest.approx(0.0, abs=1e-14)
    assert gg.residual(jet, RhsSpec("2*u^2"), 2) > 0


def test_residual_outside_cone_raises():
    jet = gg.PointJet([0.0, 0.0], 1.0, [0.0, 0.0], np.diag([-3.0, 0.0]))
    with pytest.raises(DomainError):
        gg.residual(jet, RhsSpec("1"), 2)


@pytest.mark.parametrize(("n", "k"), [(2, 1), (2, 2), (3, 1), (3, 2), (3, 3)])
def test_linearization_matches_fd(n, k):
    step = 1e-6
    rng = np.random.default_rng(n * 7 + k)
    for jet in admissible_jets(n * 31 + k, n, k, 30):
        G = lambda u, du, d2u: gg.operator_terms(u, du, d2u, k)[0]
        lin = gg.linearization(jet, None, k)
        M = rng.normal(size=(n, n))
        S = M + M.T
        fd = (G(jet.u, jet.du, jet.d2u + step * S) - G(jet.u, jet.du, jet.d2u - step * S)) / (2 * step)
        assert rel_err(np.sum(lin.Gij * S), fd) < 1e-5
        for m in range(n):
            e = np.zeros(n)
            e[m] = step
            fd = (G(jet.u, jet.du + e, jet.d2u) - G(jet.u, jet.du - e, jet.d2u)) / (2 * step)
            assert rel_err(lin.Gi[m], fd) < 1e-5
        fd = (G(jet.u + step, jet.du, jet.d2u) - G(jet.u - step, jet.du, jet.d2u)) / (2 * step)
        assert rel_err(lin.Gu, fd) < 1e-5


def test_linearization_flat_k1():
    # at a flat jet G = sigma_1(I)/1 = 2, trace F = 2 and w = 1, so G_u = 0
    lin = gg.linearization(gg.PointJet([0.0, 0.0], 0.7, [0.0, 0.0], np.zeros((2, 2))), None, 1)
    assert lin.Gu == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(lin.Gij, 0.7 * np.eye(2), atol=1e-15)


def test_linearization_elliptic():
    for jet in admissible_jets(9, 3, 3, 40):
        ev = np.linalg.eigvalsh(gg.linearization(jet, None, 3).Gij)
        assert ev.min() > 0


def test_first_order_identities():
    h = 1 / 64
    g = make_grid(1.0, h)
    hemi = field_from_function(g, lambda p: np.sqrt(1 - np.sum(p**2, axis=-1)))
    cap = field_from_function(g, lambda p: np.sqrt(1 - np.sum(p**2, axis=-1)) - 0.5)
    flat = field_from_function(g, lambda p: np.full(p.shape[:-1], 0.3))
    node = (g.dims[0] // 2 + 10, g.dims[1] // 2 - 7)
    assert gg.first_order_identities(flat, node) < 1e-15
    assert gg.first_order_identities(hemi, node) <= 10 * h**2
    assert gg.first_order_identities(cap, node) <= 10 * h**2
    # the defect decays at second order
    g2 = make_grid(1.0, h / 2)
    cap2 = field_from_function(g2, lambda p: np.sqrt(1 - np.sum(p**2, axis=-1)) - 0.5)
    node2 = (g2.dims[0] // 2 + 20, g2.dims[1] // 2 - 14)
    ratio = gg.first_order_identities(cap, node) / gg.first_order_identities(cap2, node2)
    assert 3.0 < ratio < 5.0


def test_first_order_identities_needs_stencil():
    g = make_grid(1.0, 1 / 16)
    f = field_from_function(g, lambda p: np.ones(p.shape[:-1]))
    with pytest.raises(StencilError):
        gg.first_order_identities(f, (1, 5))
