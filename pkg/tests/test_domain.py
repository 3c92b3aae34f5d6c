import numpy as np
import pytest
from scipy.optimize import linprog

from hyperplateau import domain as dm
from hyperplateau.domain import ACTIVE, OUTSIDE, ConfigurationError, ResolutionError, UnsupportedDomainError
from hyperplateau import verify


def enumerate_disk(R, h, closed=False):
    m = int(np.ceil(R / h)) + 1
    count = 0
    for i in range(-m, m + 1):
        for j in range(-m, m + 1):
            r = np.hypot(i * h, j * h)
            count += r <= R if closed else r < R
    return count


def test_enumeration_oracle_small_case():
    # the (R=1, h=0.5) example: 13 nodes in the closed disk, 9 strictly inside
    assert enumerate_disk(1.0, 0.5, closed=True) == 13
    assert enumerate_disk(1.0, 0.5) == 9


def test_build_disk_rejects_coarse_grid():
    with pytest.raises(ResolutionError):
        dm.build_disk(1.0, 0.5)
    with pytest.raises(ResolutionError):
        dm.build_disk(-1.0, 0.1)


@pytest.mark.parametrize("h", [0.2, 0.1, 1 / 16, 0.07])
def test_build_disk_matches_enumeration(h):
    assert dm.build_disk(1.0, h).n_active == enumerate_disk(1.0, h)


def test_build_disk_area():
    h = 1 / 64
    assert dm.build_disk(1.0, h).n_active * h * h == pytest.approx(np.pi, rel=0.02)


def test_build_disk_symmetry():
    mask = dm.build_disk(1.0, 0.2).mask
    for m in (mask.T, mask[::-1], mask[:, ::-1], np.rot90(mask)):
        np.testing.assert_array_equal(m, mask)


def test_ghost_layer_closes_stencil():
    dom = dm.build_disk(1.0, 0.1)
    act = dom.mask == ACTIVE
    padded = np.pad(dom.mask, 1)
    nx, ny = dom.mask.shape
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            nb = padded[1 + di : 1 + di + nx, 1 + dj : 1 + dj + ny]
            assert np.all(nb[act] != OUTSIDE)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_ghost_rows_reproduce_polynomials(order):
    # a degree-`order` polynomial restricted to a grid line is reproduced exactly
    dom = dm.build_disk(1.0, 1 / 16, order=order)
    P = dom.as_field().points()
    x, y = P[..., 0], P[..., 1]
    poly = lambda x, y: 0.3 + x - 2 * y + (x * y - x**2 if order >= 2 else 0) + (x**3 - 2 * y**2 * x if order >= 3 else 0)
    got = dom.interpolate_at_cuts(poly(x, y))
    c = dom.cut_points
    np.testing.assert_allclose(got, poly(c[:, 0], c[:, 1]), atol=1e-12)
    np.testing.assert_allclose(dom.row_weights.sum(axis=1), 1.0, atol=1e-12)


def test_cut_points_on_circle():
    dom = dm.build_disk(1.0, 1 / 32)
    np.testing.assert_allclose(np.hypot(*dom.cut_points.T), 1.0, atol=1e-13)


def test_level_set_circle_radius():
    g = dm.make_grid(1.0, 1 / 32)
    orc = verify.cap_oracle(1.0, 0.5, g)
    exact = dm.level_set_domain(orc.ubar, 0.1, orc.ubar_fn)
    np.testing.assert_allclose(np.hypot(*exact.cut_points.T), 0.8, atol=1e-12)
    linear = dm.level_set_domain(orc.ubar, 0.1)
    np.testing.assert_allclose(np.hypot(*linear.cut_points.T), 0.8, atol=(1 / 32) ** 2 * 5)
    assert exact.epsilon == 0.1
    assert exact.min_grad > 0


def test_level_set_near_max_is_small_disk():
    g = dm.make_grid(1.0, 1 / 32)
    orc = verify.cap_oracle(1.0, 0.5, g)
    dom = dm.level_set_domain(orc.ubar, 0.5 - 1e-3, orc.ubar_fn)
    P = dom.as_field().points()[dom.mask == ACTIVE]
    assert 0 < len(P) <= 9
    assert np.all(np.hypot(*P.T) < 0.05)


def test_level_sets_monotone():
    g = dm.make_grid(1.0, 1 / 32)
    orc = verify.cap_oracle(1.0, 0.5, g)
    a = dm.level_set_domain(orc.ubar, 0.05).mask == ACTIVE
    b = dm.level_set_domain(orc.ubar, 0.2).mask == ACTIVE
    assert np.all(a[b]) and a.sum() > b.sum()


@pytest.mark.parametrize("eps", [0.0, -0.1, 0.5, 2.0])
def test_level_set_bad_eps(eps):
    g = dm.make_grid(1.0, 1 / 16)
    orc = verify.cap_oracle(1.0, 0.5, g)
    with pytest.raises(ConfigurationError):
        dm.level_set_domain(orc.ubar, eps)


def test_envelope_on_disk_is_hemisphere():
    dom = dm.build_disk(1.0, 1 / 16)
    V, v, _ = dm.convex_envelope_solution(dom)
    sel = dom.mask == ACTIVE
    np.testing.assert_allclose(V.values[sel], 1.0, atol=1e-12)
    P = V.points()[sel]
    np.testing.assert_allclose(v.values[sel], np.sqrt(1 - np.sum(P**2, axis=-1)), atol=1e-12)


def lp_envelope(pts, g, x0):
    # sup of a.x0 + b over affine minorants of the boundary data
    A = np.hstack([pts, np.ones((len(pts), 1))])
    res = linprog(-np.array([x0[0], x0[1], 1.0]), A_ub=A, b_ub=g, bounds=[(None, None)] * 3, method="highs")
    return -res.fun


def ellipse_domain(h):
    grid = dm.make_grid(2.0, h)
    X, Y = grid.coords()
    phi = 1 - np.sqrt(X**2 / 4 + Y**2)
    return dm.cut_domain(grid, phi, lambda p: 1 - np.sqrt(p[0] ** 2 / 4 + p[1] ** 2))


def test_envelope_on_ellipse_against_lp():
    h = 1 / 8
    dom = ellipse_domain(h)
    pts = dm.sample_ellipse(2.0, 1.0, h)
    g = np.sum(pts**2, axis=1)
    V, _, env = dm.convex_envelope_solution(dom, boundary_points=pts)
    rng = np.random.default_rng(0)
    P = V.points()[dom.mask == ACTIVE]
    for x0 in P[rng.choice(len(P), 25, replace=False)]:
        assert env(x0) == pytest.approx(lp_envelope(pts, g, x0), abs=1e-9)
    assert env(np.zeros(2)) == pytest.approx(1.0, abs=1e-3)
    assert np.nanmax(V.values) <= g.max() + 1e-12


def test_envelope_is_convex():
    dom = ellipse_domain(1 / 8)
    pts = dm.sample_ellipse(2.0, 1.0, 1 / 8)
    _, _, env = dm.convex_envelope_solution(dom, boundary_points=pts)
    rng = np.random.default_rng(1)
    a = rng.uniform(-1, 1, (500, 2)) * [1.4, 0.7]
    b = rng.uniform(-1, 1, (500, 2)) * [1.4, 0.7]
    t = rng.uniform(0, 1, (500, 1))
    assert np.all(env(t * a + (1 - t) * b) <= t[:, 0] * env(a) + (1 - t[:, 0]) * env(b) + 1e-12)


def test_envelope_dominates_cap_transform():
    g = dm.make_grid(1.0, 1 / 32)
    orc = verify.cap_oracle(1.0, 0.5, g)
    V, _ = verify.upper_barriers(orc.ubar, orc.ubar_fn)
    P = g.points()
    sel = orc.ubar.values > 0.01
    Ubar = orc.ubar.values**2 + np.sum(P**2, axis=-1)
    assert np.all(V.values[sel] > Ubar[sel])


def test_nonconvex_boundary_rejected():
    th = np.linspace(0, 2 * np.pi, 200, endpoint=False)
    r = 1 + 0.3 * np.cos(5 * th)
    pts = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
    dom = dm.build_disk(1.0, 0.1)
    with pytest.raises(UnsupportedDomainError):
        dm.convex_envelope_solution(dom, boundary_points=pts)


def test_dyadic_floor():
    assert dm.dyadic_floor(3.0) == 2.0
    assert dm.dyadic_floor(0.3) == 0.25
    with pytest.raises(ConfigurationError):
        dm.dyadic_floor(0.0)


@pytest.mark.parametrize("path", ["ma", "general"])
def test_nested_domains_on_exact_fields(path):
    g = dm.make_grid(1.0, 1 / 32)
    orc = verify.cap_oracle(1.0, 0.5, g)
    V, v = verify.upper_barriers(orc.ubar, orc.ubar_fn)
    eps0 = 0.2
    for eps in (eps0 / 8, eps0 / 16):
        dom = dm.level_set_domain(orc.ubar, eps, orc.ubar_fn)
        u_eps = orc.ubar.with_values(orc.ubar.values, dom.mask)
        nd = dm.nested_domains(V if path == "ma" else v, u_eps, orc.ubar, eps0, path=path, ubar_fn=orc.ubar_fn)
        assert nd.omega_eps_eps0.any()
        assert np.all(nd.omega_eps_eps0[nd.omega_eps0])
        assert nd.gap >= 2 * nd.c
        assert nd.tau * nd.r**2 <= nd.gap < 2 * nd.tau * nd.r**2
        inc = nd.inclusions()
        assert inc["omega_eps0 < omega_eps_eps0"] and inc["omega_hat < omega"]
        # u_eps = ubar: the middle pair coincides as node sets
        np.testing.assert_array_equal(nd.omega_eps_eps0, nd.omega_hat & (u_eps.mask == ACTIVE))


def test_nested_paths_agree():
    g = dm.make_grid(1.0, 1 / 32)
    orc = verify.cap_oracle(1.0, 0.5, g)
    V, v = verify.upper_barriers(orc.ubar, orc.ubar_fn)
    dom = dm.level_set_domain(orc.ubar, 0.02, orc.ubar_fn)
    u_eps = orc.ubar.with_values(orc.ubar.values, dom.mask)
    a = dm.nested_domains(V, u_eps, orc.ubar, 0.2, path="ma", ubar_fn=orc.ubar_fn)
    b = dm.nested_domains(v, u_eps, orc.ubar, 0.2, path="general", ubar_fn=orc.ubar_fn)
    assert a.gap == pytest.approx(b.gap, rel=1e-12)
    np.testing.assert_array_equal(a.omega_eps_eps0, b.omega_eps_eps0)


def test_nested_domains_errors():
    g = dm.make_grid(1.0, 1 / 16)
    orc = verify.cap_oracle(1.0, 0.5, g)
    V, _ = verify.upper_barriers(orc.ubar, orc.ubar_fn)
    dom = dm.level_set_domain(orc.ubar, 0.3, orc.ubar_fn)
    u_eps = orc.ubar.with_values(orc.ubar.values, dom.mask)
    with pytest.raises(ConfigurationError):
        dm.nested_domains(V, u_eps, orc.ubar, 0.2)
    ok = orc.ubar.with_values(orc.ubar.values, dm.level_set_domain(orc.ubar, 0.02, orc.ubar_fn).mask)
    with pytest.raises(ConfigurationError, match="unknown path"):
        dm.nested_domains(V, ok, orc.ubar, 0.2, path="bogus", ubar_fn=orc.ubar_fn)
