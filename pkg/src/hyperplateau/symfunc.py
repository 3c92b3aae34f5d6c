"""Elementary symmetric functions and the operator f = sigma_k^(1/k).

Everything here accepts a single tuple/matrix or a batch with leading axes;
eigenvalue tuples live on the last axis, matrices on the last two.
"""

from __future__ import annotations

import enum
from math import comb

import numpy as np

CONE_TOL = 1e-12
JACOBI_TOL = 1e-13


class DomainError(ValueError):
    """Raised when an argument lies outside the closed Garding cone."""


class DegenerateGapError(ValueError):
    pass


class ConeLabel(enum.Enum):
    INTERIOR = "InteriorOfGammaK"
    BOUNDARY = "BoundaryOfGammaK"
    OUTSIDE = "Outside"


def _check_k(k: int, n: int) -> None:
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for n={n}")


def sigma_all(kappa: np.ndarray, kmax: int | None = None) -> np.ndarray:
    """Return [sigma_0, ..., sigma_kmax] along a new last axis.

    Uses the recursion e_j <- e_j + kappa_i * e_{j-1} over entries, which is
    exact polynomial arithmetic (no root finding).
    """
    kappa = np.asarray(kappa, dtype=float)
    n = kappa.shape[-1]
    kmax = n if kmax is None else kmax
    e = np.zeros(kappa.shape[:-1] + (kmax + 1,))
    e[..., 0] = 1.0
    for i in range(n):
        ki = kappa[..., i, None]
        e[..., 1:] = e[..., 1:] + ki * e[..., :-1]
    return e


def sigma(k: int, kappa) -> np.ndarray | float:
    kappa = np.asarray(kappa, dtype=float)
    n = kappa.shape[-1]
    if k == 0:
        return np.ones(kappa.shape[:-1])[()]
    _check_k(k, n)
    return sigma_all(kappa, k)[..., k][()]


def sigma_deleted(k: int, kappa) -> np.ndarray:
    """sigma_k(kappa | i) for every i, stacked on the last axis."""
    kappa = np.asarray(kappa, dtype=float)
    n = kappa.shape[-1]
    out = np.empty(kappa.shape)
    for i in range(n):
        rest = np.delete(kappa, i, axis=-1)
        if k == 0:
            out[..., i] = 1.0
        elif k > n - 1 or k < 0:
            out[..., i] = 0.0
        else:
            out[..., i] = sigma_all(rest, k)[..., k]
    return out


def sigma_deleted2(k: int, kappa) -> np.ndarray:
    """sigma_k(kappa | ij) on the last two axes; diagonal is zero."""
    kappa = np.asarray(kappa, dtype=float)
    n = kappa.shape[-1]
    out = np.zeros(kappa.shape + (n,))
    if k < 0 or k > n - 2:
        return out
    for i in range(n):
        for j in range(i + 1, n):
            rest = np.delete(kappa, [i, j], axis=-1)
            val = 1.0 if k == 0 else sigma_all(rest, k)[..., k]
            out[..., i, j] = val
            out[..., j, i] = val
    return out


def cone_classify(kappa, k: int, tol: float = CONE_TOL) -> ConeLabel:
    kappa = np.asarray(kappa, dtype=float)
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    _check_k(k, kappa.shape[-1])
    s = sigma_all(kappa, k)[1:]
    if np.all(s > tol):
        return ConeLabel.INTERIOR
    if np.all(s >= -tol) and np.min(s) <= tol:
        return ConeLabel.BOUNDARY
    return ConeLabel.OUTSIDE


def in_cone(kappa, k: int, tol: float = CONE_TOL) -> np.ndarray:
    """Vectorized strict-interior test over a batch of tuples."""
    s = sigma_all(kappa, k)[..., 1:]
    return np.all(s > tol, axis=-1)


def f_value(kappa, k: int, tol: float = CONE_TOL):
    kappa = np.asarray(kappa, dtype=float)
    _check_k(k, kappa.shape[-1])
    s = sigma_all(kappa, k)[..., 1:]
    if np.any(np.any(s < -tol, axis=-1)):
        raise DomainError("kappa outside the closed cone Gamma_k")
    sk = np.clip(s[..., k - 1], 0.0, None)
    return (sk ** (1.0 / k))[()]


def f_gradient(kappa, k: int, tol: float = CONE_TOL) -> np.ndarray:
    kappa = np.asarray(kappa, dtype=float)
    _check_k(k, kappa.shape[-1])
    if not np.all(in_cone(kappa, k, tol)):
        raise DomainError("f_gradient needs kappa strictly inside Gamma_k")
    sk = sigma_all(kappa, k)[..., k]
    return (1.0 / k) * sk[..., None] ** (1.0 / k - 1.0) * sigma_deleted(k - 1, kappa)


def f_hessian(kappa, k: int, tol: float = CONE_TOL) -> np.ndarray:
    """d^2 f / d kappa_i d kappa_j on the last two axes."""
    kappa = np.asarray(kappa, dtype=float)
    if not np.all(in_cone(kappa, k, tol)):
        raise DomainError("f_hessian needs kappa strictly inside Gamma_k")
    sk = sigma_all(kappa, k)[..., k][..., None, None]
    d1 = sigma_deleted(k - 1, kappa)
    d2 = sigma_deleted2(k - 2, kappa)
    p = 1.0 / k
    return p * sk ** (p - 1.0) * d2 + p * (p - 1.0) * sk ** (p - 2.0) * (
        d1[..., :, None] * d1[..., None, :]
    )


# matrix form -----------------------------------------------------------


def matrix_sigmas(A: np.ndarray, kmax: int) -> np.ndarray:
    """sigma_0..sigma_kmax of the eigenvalues of A via Newton's identities."""
    A = np.asarray(A, dtype=float)
    n = A.shape[-1]
    e = np.zeros(A.shape[:-2] + (kmax + 1,))
    e[..., 0] = 1.0
    p = np.zeros(A.shape[:-2] + (kmax + 1,))
    P = np.broadcast_to(np.eye(n), A.shape).copy()
    for j in range(1, kmax + 1):
        P = P @ A
        p[..., j] = np.trace(P, axis1=-2, axis2=-1)
    for j in range(1, kmax + 1):
        acc = np.zeros(A.shape[:-2])
        for i in range(1, j + 1):
            acc = acc + (-1) ** (i - 1) * e[..., j - i] * p[..., i]
        e[..., j] = acc / j
    return e


def newton_transform(A: np.ndarray, m: int) -> np.ndarray:
    """T_m(A) = sum_i (-1)^i sigma_{m-i}(A) A^i, the gradient of sigma_{m+1}."""
    A = np.asarray(A, dtype=float)
    n = A.shape[-1]
    e = matrix_sigmas(A, m)
    P = np.broadcast_to(np.eye(n), A.shape).copy()
    T = np.zeros(A.shape)
    for i in range(m + 1):
        T = T + (-1) ** i * e[..., m - i, None, None] * P
        P = P @ A
    return T


def matrix_sigma_gradient(A, k: int, tol: float = CONE_TOL) -> np.ndarray:
    """d sigma_k(A) / d a_ij for symmetric A with lambda(A) in Gamma_k."""
    A = np.asarray(A, dtype=float)
    _check_k(k, A.shape[-1])
    e = matrix_sigmas(A, k)
    if not np.all(e[..., 1:] > tol):
        raise DomainError("matrix_sigma_gradient needs lambda(A) in Gamma_k")
    return newton_transform(A, k - 1)


def matrix_f_gradient(A, k: int, tol: float = CONE_TOL) -> np.ndarray:
    """F^{ij} = dF/da_ij for F(A) = sigma_k(A)^(1/k)."""
    A = np.asarray(A, dtype=float)
    e = matrix_sigmas(A, k)
    if not np.all(e[..., 1:] > tol):
        raise DomainError("matrix_f_gradient needs lambda(A) in Gamma_k")
    sk = e[..., k]
    return (1.0 / k) * sk[..., None, None] ** (1.0 / k - 1.0) * newton_transform(A, k - 1)


def matrix_f_value(A, k: int, tol: float = CONE_TOL):
    e = matrix_sigmas(np.asarray(A, dtype=float), k)
    if np.any(np.any(e[..., 1:] < -tol, axis=-1)):
        raise DomainError("lambda(A) outside the closed cone Gamma_k")
    return (np.clip(e[..., k], 0.0, None) ** (1.0 / k))[()]


# eigen-decomposition ------------------------------------------------------


def jacobi_eigh(A, tol: float = JACOBI_TOL, max_sweeps: int = 60):
    """Cyclic Jacobi rotations for (batches of) small symmetric matrices.

    Returns eigenvalues sorted descending and the matching eigenvectors as
    columns. Iterates until every off-diagonal entry is below
    ``tol * (1 + max|a_ij|)``.
    """
    A = np.array(A, dtype=float)
    n = A.shape[-1]
    batch = A.shape[:-2]
    A = A.reshape((-1, n, n))
    V = np.broadcast_to(np.eye(n), A.shape).copy()
    scale = 1.0 + np.max(np.abs(A), axis=(1, 2))
    for _ in range(max_sweeps):
        off = np.zeros(A.shape[0])
        for p in range(n - 1):
            for q in range(p + 1, n):
                off = np.maximum(off, np.abs(A[:, p, q]))
        if np.all(off <= tol * scale):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[:, p, q]
                active = np.abs(apq) > tol * scale * 1e-3
                if not np.any(active):
                    continue
                app = A[:, p, p]
                aqq = A[:, q, q]
                safe = np.where(active, apq, 1.0)
                theta = (aqq - app) / (2.0 * safe)
                t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
                t = np.where(theta == 0.0, 1.0, t)
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J, J the (p, q) rotation
                Ap = A[:, :, p].copy()
                Aq = A[:, :, q].copy()
                A[:, :, p] = c[:, None] * Ap - s[:, None] * Aq
                A[:, :, q] = s[:, None] * Ap + c[:, None] * Aq
                Ap = A[:, p, :].copy()
                Aq = A[:, q, :].copy()
                A[:, p, :] = c[:, None] * Ap - s[:, None] * Aq
                A[:, q, :] = s[:, None] * Ap + c[:, None] * Aq
                Vp = V[:, :, p].copy()
                Vq = V[:, :, q].copy()
                V[:, :, p] = c[:, None] * Vp - s[:, None] * Vq
                V[:, :, q] = s[:, None] * Vp + c[:, None] * Vq
    w = np.diagonal(A, axis1=1, axis2=2).copy()
    order = np.argsort(-w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    return w.reshape(batch + (n,)), V.reshape(batch + (n, n))


def eig_gap_threshold(kappa) -> np.ndarray:
    kappa = np.asarray(kappa, dtype=float)
    return 1e-8 * (1.0 + np.max(np.abs(kappa), axis=-1))


def divided_differences(kappa, k: int) -> np.ndarray:
    """(f_i - f_j)/(kappa_i - kappa_j), switching to the analytic limit
    -(1/k) sigma_k^(1/k-1) sigma_{k-2}(kappa|ij) for nearly equal entries."""
    kappa = np.asarray(kappa, dtype=float)
    fi = f_gradient(kappa, k)
    sk = sigma_all(kappa, k)[..., k][..., None, None]
    limit = -(1.0 / k) * sk ** (1.0 / k - 1.0) * sigma_deleted2(k - 2, kappa)
    diff = kappa[..., :, None] - kappa[..., None, :]
    close = np.abs(diff) < eig_gap_threshold(kappa)[..., None, None]
    safe = np.where(close, 1.0, diff)
    dd = (fi[..., :, None] - fi[..., None, :]) / safe
    return np.where(close, limit, dd)


def second_directional(A, B, k: int) -> np.ndarray:
    """F^{ij,rs} B_ij B_rs for F = sigma_k^(1/k), evaluated in A's eigenframe."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    kappa, Q = jacobi_eigh(A)
    if not np.all(in_cone(kappa, k)):
        raise DomainError("second_directional needs lambda(A) strictly in Gamma_k")
    Bh = np.swapaxes(Q, -1, -2) @ B @ Q
    d = np.diagonal(Bh, axis1=-2, axis2=-1)
    fh = f_hessian(kappa, k)
    term1 = np.einsum("...i,...ij,...j->...", d, fh, d)
    dd = divided_differences(kappa, k)
    n = A.shape[-1]
    off = ~np.eye(n, dtype=bool)
    term2 = np.sum(np.where(off, dd * Bh * Bh, 0.0), axis=(-2, -1))
    return (term1 + term2)[()]


def andrews_gerhardt_margin(kappa, B, k: int, J) -> float:
    """Slack in -F^{ij,rs}B_ij B_rs >= 2 sum_{j in J} (f_j - f_1)/(k_1 - k_j) B_1j^2.

    ``kappa`` is sorted descending and B is expressed in the eigenframe of
    diag(kappa). Index 0 plays the role of the largest curvature.
    """
    kappa = np.asarray(kappa, dtype=float)
    B = np.asarray(B, dtype=float)
    if np.any(np.diff(kappa) > 0):
        raise ValueError("kappa must be sorted descending")
    J = list(J)
    for j in J:
        if not kappa[0] > kappa[j]:
            raise DegenerateGapError(f"kappa_1 == kappa_{j + 1}")
    lhs = -float(second_directional(np.diag(kappa), B, k))
    fi = f_gradient(kappa, k)
    rhs = 2.0 * sum((fi[j] - fi[0]) / (kappa[0] - kappa[j]) * B[0, j] ** 2 for j in J)
    return lhs - rhs


def binom_f_ones(n: int, k: int) -> float:
    """f(1, ..., 1) = C(n, k)^(1/k); f is not normalized."""
    return comb(n, k) ** (1.0 / k)
