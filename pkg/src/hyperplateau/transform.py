"""Change of variables U = u^2 + |x|^2 for the k = n equation.

The curvature equation is written canonically as sigma_n(kappa)^(1/n) = psi;
on the Monge-Ampere side it becomes det D^2U = Psi with psi raised to the
n-th power here and nowhere else.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphgeom import PointJet
from .symfunc import DomainError, jacobi_eigh


class AdmissibilityError(ValueError):
    pass


@dataclass
class MaJet:
    x: np.ndarray
    U: np.ndarray
    dU: np.ndarray
    d2U: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.U = np.asarray(self.U, dtype=float)
        self.dU = np.asarray(self.dU, dtype=float)
        self.d2U = np.asarray(self.d2U, dtype=float)


def to_ma(jet: PointJet) -> MaJet:
    n = jet.du.shape[-1]
    u = jet.u
    U = u**2 + np.sum(jet.x**2, axis=-1)
    dU = 2 * u[..., None] * jet.du + 2 * jet.x
    d2U = (
        2 * jet.du[..., :, None] * jet.du[..., None, :]
        + 2 * u[..., None, None] * jet.d2u
        + 2 * np.eye(n)
    )
    return MaJet(jet.x, U, dU, d2U)


def from_ma(majet: MaJet) -> PointJet:
    n = majet.dU.shape[-1]
    u2 = majet.U - np.sum(majet.x**2, axis=-1)
    if np.any(u2 <= 0):
        raise DomainError("U <= |x|^2: the graph reaches the ideal boundary")
    u = np.sqrt(u2)
    du = (majet.dU - 2 * majet.x) / (2 * u[..., None])
    d2u = (majet.d2U / 2 - np.eye(n) - du[..., :, None] * du[..., None, :]) / u[..., None, None]
    return PointJet(majet.x, u, du, d2u)


def gradient_ratio(x, U, dU):
    """(|DU|^2 - 4 x.DU + 4U) / (4U - 4|x|^2), which equals w^2 = 1 + |Du|^2."""
    den = 4 * U - 4 * np.sum(x**2, axis=-1)
    if np.any(den <= 0):
        raise DomainError("Psi undefined: U <= |x|^2")
    num = np.sum(dU**2, axis=-1) - 4 * np.sum(x * dU, axis=-1) + 4 * U
    return num / den, num, den


def psi_to_Psi(psi, majet: MaJet):
    n = majet.dU.shape[-1]
    rho, _, _ = gradient_ratio(majet.x, majet.U, majet.dU)
    u = np.sqrt(majet.U - np.sum(majet.x**2, axis=-1))
    return (2.0**n * rho ** ((n + 2) / 2) * psi.value(majet.x, u) ** n)[()]


def Psi_terms(psi, x, U, dU):
    """Psi with its partial derivatives in U and DU (for Newton)."""
    n = dU.shape[-1]
    rho, num, den = gradient_ratio(x, U, dU)
    u = np.sqrt(U - np.sum(x**2, axis=-1))
    pv = psi.value(x, u)
    pu = psi.d_u(x, u)
    m = (n + 2) / 2
    Psi = 2.0**n * rho**m * pv**n
    drho_dU = 4 / den - 4 * num / den**2
    drho_dp = (2 * dU - 4 * x) / den[..., None]
    dpsin_dU = n * pv ** (n - 1) * pu / (2 * u)
    Psi_U = 2.0**n * (m * rho ** (m - 1) * drho_dU * pv**n + rho**m * dpsin_dU)
    Psi_p = 2.0**n * m * (rho ** (m - 1) * pv**n)[..., None] * drho_dp
    return Psi, Psi_U, Psi_p


def ma_residual(majet: MaJet, Psi_value, tol: float = 1e-12):
    d2U = majet.d2U
    ev, _ = jacobi_eigh(d2U)
    if np.any(ev < -tol * (1 + np.abs(ev).max())):
        raise AdmissibilityError("D^2U is indefinite")
    return (np.linalg.det(d2U) - Psi_value)[()]
