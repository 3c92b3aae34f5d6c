"""Pointwise geometry of a vertical graph {(x, u(x))} in the half-space model.

Functions accept a single jet or a batch (leading axes on every field).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import symfunc
from .symfunc import CONE_TOL, ConeLabel, DomainError


@dataclass
class PointJet:
    x: np.ndarray
    u: np.ndarray
    du: np.ndarray
    d2u: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        self.du = np.asarray(self.du, dtype=float)
        self.d2u = np.asarray(self.d2u, dtype=float)

    @property
    def n(self) -> int:
        return self.du.shape[-1]

    def rotated(self, R: np.ndarray) -> "PointJet":
        """Apply a horizontal rotation to x, Du and D^2u consistently."""
        R = np.asarray(R, dtype=float)
        return PointJet(
            self.x @ R.T,
            self.u,
            self.du @ R.T,
            R @ self.d2u @ R.T,
        )


@dataclass
class GraphQuantities:
    w: np.ndarray
    nu: np.ndarray
    nu_up: np.ndarray
    gamma_up: np.ndarray
    gamma_down: np.ndarray
    g_tilde: np.ndarray
    h_tilde: np.ndarray
    a_tilde: np.ndarray
    a_matrix: np.ndarray


@dataclass
class CurvatureSpectrum:
    kappa: np.ndarray
    kappa_euclid: np.ndarray
    cone: ConeLabel | np.ndarray


@dataclass
class LinearizationCoeffs:
    Gij: np.ndarray
    Gi: np.ndarray
    Gu: np.ndarray


def _outer(p: np.ndarray) -> np.ndarray:
    return p[..., :, None] * p[..., None, :]


def _eye_like(p: np.ndarray) -> np.ndarray:
    n = p.shape[-1]
    return np.broadcast_to(np.eye(n), p.shape[:-1] + (n, n))


def _check(jet: PointJet) -> None:
    if np.any(jet.u <= 0):
        raise DomainError("graph height u must be positive")


def gamma_up(du: np.ndarray) -> np.ndarray:
    w = np.sqrt(1.0 + np.sum(du * du, axis=-1))
    return _eye_like(du) - _outer(du) / (w * (1.0 + w))[..., None, None]


def a_matrix(u, du, d2u) -> np.ndarray:
    """A[u] = (I + u gamma D^2u gamma) / w."""
    u = np.asarray(u, dtype=float)
    w = np.sqrt(1.0 + np.sum(du * du, axis=-1))
    g = gamma_up(du)
    M = _eye_like(du) + u[..., None, None] * (g @ d2u @ g)
    return M / w[..., None, None]


def graph_quantities(jet: PointJet) -> GraphQuantities:
    _check(jet)
    du = jet.du
    I = _eye_like(du)
    P = _outer(du)
    w = np.sqrt(1.0 + np.sum(du * du, axis=-1))
    wb = w[..., None, None]
    nu = np.concatenate([-du, np.ones(du.shape[:-1] + (1,))], axis=-1) / w[..., None]
    g_up = I - P / (wb * (1.0 + wb))
    g_down = I + P / (1.0 + wb)
    a_tilde = g_up @ jet.d2u @ g_up / wb
    A = (I + jet.u[..., None, None] * (g_up @ jet.d2u @ g_up)) / wb
    return GraphQuantities(
        w=w,
        nu=nu,
        nu_up=1.0 / w,
        gamma_up=g_up,
        gamma_down=g_down,
        g_tilde=I + P,
        h_tilde=jet.d2u / wb,
        a_tilde=a_tilde,
        a_matrix=A,
    )


def hyperbolic_second_form(jet: PointJet) -> np.ndarray:
    """h_ij = (delta_ij + u_i u_j + u u_ij) / (u^2 w), assembled on its own."""
    _check(jet)
    w = np.sqrt(1.0 + np.sum(jet.du * jet.du, axis=-1))
    M = _eye_like(jet.du) + _outer(jet.du) + jet.u[..., None, None] * jet.d2u
    return M / (jet.u**2 * w)[..., None, None]


def curvature_spectrum(jet: PointJet, k: int, tol: float = CONE_TOL) -> CurvatureSpectrum:
    q = graph_quantities(jet)
    kappa, Q = symfunc.jacobi_eigh(q.a_matrix)
    # same eigenframe: A = nu_up I + u a_tilde
    kt = np.einsum("...ji,...jk,...ki->...i", Q, q.a_tilde, Q)
    if kappa.ndim == 1:
        cone = symfunc.cone_classify(kappa, k, tol)
    else:
        s = symfunc.sigma_all(kappa, k)[..., 1:]
        cone = np.where(
            np.all(s > tol, axis=-1),
            ConeLabel.INTERIOR.value,
            np.where(np.all(s >= -tol, axis=-1), ConeLabel.BOUNDARY.value, ConeLabel.OUTSIDE.value),
        )
    return CurvatureSpectrum(kappa=kappa, kappa_euclid=kt, cone=cone)


def residual(jet: PointJet, psi, k: int, tol: float = CONE_TOL):
    """f(kappa[u]) - psi(x, u)."""
    _check(jet)
    A = a_matrix(jet.u, jet.du, jet.d2u)
    e = symfunc.matrix_sigmas(A, k)[..., 1:]
    bad = np.any(e < -tol, axis=-1)
    if np.any(bad):
        raise DomainError(f"inadmissible jet: {np.count_nonzero(bad)} point(s) outside closed Gamma_{k}")
    f = np.clip(e[..., k - 1], 0.0, None) ** (1.0 / k)
    return (f - psi.value(jet.x, jet.u))[()]


def operator_terms(u, du, d2u, k: int, tol: float = CONE_TOL):
    """G = F(A[u]) with its derivatives in D^2u, Du and u.

    Returns (G, Gij, Gi, Gu) where Gu = (G - sum f_i / w) / u is the exact
    derivative of G in u (homogeneity of F gives sum f_i kappa_i = G).
    """
    u = np.asarray(u, dtype=float)
    du = np.asarray(du, dtype=float)
    d2u = np.asarray(d2u, dtype=float)
    n = du.shape[-1]
    I = _eye_like(du)
    w = np.sqrt(1.0 + np.sum(du * du, axis=-1))
    wb = w[..., None, None]
    ub = u[..., None, None]
    s = 1.0 / (w * (1.0 + w))
    g = I - _outer(du) * s[..., None, None]
    gHg = g @ d2u @ g
    A = (I + ub * gHg) / wb
    e = symfunc.matrix_sigmas(A, k)
    if not np.all(e[..., 1:] > tol):
        raise DomainError("operator_terms needs kappa strictly in Gamma_k")
    G = e[..., k] ** (1.0 / k)
    F = (1.0 / k) * (e[..., k] ** (1.0 / k - 1.0))[..., None, None] * symfunc.newton_transform(A, k - 1)
    Gij = (ub / wb) * (g @ F @ g)
    Gij = 0.5 * (Gij + np.swapaxes(Gij, -1, -2))
    trF = np.trace(F, axis1=-2, axis2=-1)
    Gu = (G - trF / w) / u
    ds = -(1.0 + 2.0 * w) / (w**2 * (1.0 + w) ** 2)
    Gi = np.empty(du.shape)
    P = _outer(du)
    for m in range(n):
        em = np.zeros(n)
        em[m] = 1.0
        pm = du[..., m]
        dg = -(em[:, None] * du[..., None, :] + du[..., :, None] * em[None, :]) * s[..., None, None]
        dg = dg - P * (ds * pm / w)[..., None, None]
        dA = -(pm / w**2)[..., None, None] * A + (ub / wb) * (dg @ d2u @ g + g @ d2u @ dg)
        Gi[..., m] = np.sum(F * dA, axis=(-2, -1))
    return G, Gij, Gi, Gu


def linearization(jet: PointJet, psi=None, k: int = 1) -> LinearizationCoeffs:
    """Coefficients of the linearized operator G[u] around ``jet``.

    Gu is the derivative of G alone; subtract psi_u to linearize the residual.
    """
    _check(jet)
    _, Gij, Gi, Gu = operator_terms(jet.u, jet.du, jet.d2u, k)
    return LinearizationCoeffs(Gij=Gij, Gi=Gi, Gu=Gu)


# grid-level identities -----------------------------------------------------


def first_order_identities(field, node) -> float:
    """Max defect of the first-order surface identities at a grid node.

    Checks |grad~ u|^2 = 1 - (nu^{n+1})^2, u_i = tau_i . e_{n+1} and
    (nu^{n+1})_i = -h~_ij g~^{jk} u_k, the last one with grid differences of
    the nu^{n+1} field.
    """
    from .domain import StencilError

    vals = field.values
    h = field.h
    i, j = node
    nx, ny = vals.shape
    if not (2 <= i < nx - 2 and 2 <= j < ny - 2):
        raise StencilError(f"node {node} lacks two layers of neighbours")
    win = vals[i - 2 : i + 3, j - 2 : j + 3]
    if field.mask is not None:
        mwin = field.mask[i - 2 : i + 3, j - 2 : j + 3]
        if np.any(mwin == 0) or not np.all(np.isfinite(win)):
            raise StencilError(f"node {node} lacks two layers of neighbours")

    def grad(a, b):
        return np.array(
            [(vals[a + 1, b] - vals[a - 1, b]) / (2 * h), (vals[a, b + 1] - vals[a, b - 1]) / (2 * h)]
        )

    def nu_up(a, b):
        p = grad(a, b)
        return 1.0 / np.sqrt(1.0 + p @ p)

    p = grad(i, j)
    u = vals[i, j]
    H = np.array(
        [
            [(vals[i + 1, j] - 2 * u + vals[i - 1, j]) / h**2,
             (vals[i + 1, j + 1] - vals[i + 1, j - 1] - vals[i - 1, j + 1] + vals[i - 1, j - 1]) / (4 * h**2)],
            [0.0, (vals[i, j + 1] - 2 * u + vals[i, j - 1]) / h**2],
        ]
    )
    H[1, 0] = H[0, 1]
    w = np.sqrt(1.0 + p @ p)
    g_inv = np.eye(2) - np.outer(p, p) / w**2
    d1 = abs(p @ g_inv @ p - (1.0 - 1.0 / w**2))
    # tau_i = e_i + u_i e_{n+1}; its vertical component is u_i by construction
    tau = np.hstack([np.eye(2), p[:, None]])
    d2 = np.max(np.abs(tau[:, 2] - p))
    dnu = np.array(
        [(nu_up(i + 1, j) - nu_up(i - 1, j)) / (2 * h), (nu_up(i, j + 1) - nu_up(i, j - 1)) / (2 * h)]
    )
    d3 = np.max(np.abs(dnu + (H / w) @ g_inv @ p))
    return float(max(d1, d2, d3))
