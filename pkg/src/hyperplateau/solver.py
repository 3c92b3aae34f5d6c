"""Damped Newton for the approximating Dirichlet problems and eps-continuation.

Unknowns are the node values on Active and Boundary nodes of a CutDomain.
Active rows carry the PDE discretized with the nine-point central stencil;
each Boundary row sets the interpolated value at its cut point equal to
the Dirichlet value.

Two formulations:

* curvature path: F(A[u]) - psi(x, u) = 0, any 1 <= k <= n;
* Monge-Ampere path (k = n): det D^2U - Psi(x, U, DU) = 0 with
  U = u^2 + |x|^2 and U = eps^2 + |x|^2 on Gamma_eps.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from . import graphgeom, symfunc, transform
from .domain import ACTIVE, BOUNDARY, OUTSIDE, CutDomain, GridField, level_set_domain
from .symfunc import CONE_TOL

log = logging.getLogger(__name__)

# constant in the O(h^2) allowances (ordering, subsolution, comparison)
C_H2 = 10.0

OFFSETS = {
    "C": (0, 0),
    "E": (1, 0),
    "W": (-1, 0),
    "N": (0, 1),
    "S": (0, -1),
    "NE": (1, 1),
    "SW": (-1, -1),
    "SE": (1, -1),
    "NW": (-1, 1),
}


class InadmissibleError(ValueError):
    def __init__(self, nodes, labels):
        self.nodes = nodes
        self.labels = labels
        shown = ", ".join(f"{nd}:{lb}" for nd, lb in list(zip(nodes, labels))[:8])
        super().__init__(f"{len(nodes)} inadmissible node(s): {shown}")


class EllipticityLossError(RuntimeError):
    pass


@dataclass
class NewtonConfig:
    tol: float | None = None
    max_iter: int = 40
    max_halvings: int = 40
    ma_path: bool | None = None
    cone_tol: float = CONE_TOL


@dataclass
class NewtonReport:
    iterations: int = 0
    residual: float = float("inf")
    damping: list[float] = dc_field(default_factory=list)
    repairs: int = 0
    converged: bool = False
    history: list[float] = dc_field(default_factory=list)
    path: str = "curvature"
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "damping": list(self.damping),
            "repairs": self.repairs,
            "converged": self.converged,
            "history": list(self.history),
            "path": self.path,
            "message": self.message,
        }


@dataclass
class ContinuationSchedule:
    eps0: float
    levels: list[float]
    max_iter: int = 40
    tol: float | None = None

    def __post_init__(self):
        lv = list(self.levels)
        if not lv or any(e <= 0 for e in lv):
            raise ValueError("eps levels must be positive")
        if any(b >= a for a, b in zip(lv, lv[1:])):
            raise ValueError("eps levels must be strictly decreasing")
        if any(b < a / 2 - 1e-15 for a, b in zip(lv, lv[1:])):
            raise ValueError("consecutive eps levels may shrink by at most a factor 2")

    @classmethod
    def halving(cls, ubar_max: float, count: int, **kw) -> "ContinuationSchedule":
        eps0 = 0.2 * ubar_max
        return cls(eps0=eps0, levels=[eps0 / 2**m for m in range(count)], **kw)


@dataclass
class Solution:
    eps: float
    domain: CutDomain
    u: GridField
    report: NewtonReport
    U: GridField | None = None


def default_tol(h: float) -> float:
    return max(1e-10, h * h / 100)


# stencil -----------------------------------------------------------------------


class Stencil:
    """Index bookkeeping for one CutDomain."""

    def __init__(self, dom: CutDomain):
        self.dom = dom
        self.h = dom.h
        nx, ny = dom.dims
        self.ny = ny
        self.unknowns = dom.unknowns()
        self.index = np.full(nx * ny, -1, dtype=np.int64)
        self.index[self.unknowns] = np.arange(len(self.unknowns))
        flat_mask = dom.mask.ravel()
        self.active = np.flatnonzero(flat_mask == ACTIVE)
        self.nbr = {}
        for name, (di, dj) in OFFSETS.items():
            self.nbr[name] = self.active + di * ny + dj
        for name, idx in self.nbr.items():
            if np.any(flat_mask[idx] == OUTSIDE):
                raise ValueError(f"stencil leaves the domain ({name})")
        ai, aj = np.divmod(self.active, ny)
        self.x = np.stack([dom.origin[0] + dom.h * ai, dom.origin[1] + dom.h * aj], axis=1)
        self.rows_active = self.index[self.active]
        self.rows_ghost = self.index[dom.ghost_nodes]

    @property
    def size(self) -> int:
        return len(self.unknowns)

    def derivatives(self, flat: np.ndarray):
        h = self.h
        v = {k: flat[i] for k, i in self.nbr.items()}
        d1 = np.stack([(v["E"] - v["W"]) / (2 * h), (v["N"] - v["S"]) / (2 * h)], axis=1)
        uxx = (v["E"] - 2 * v["C"] + v["W"]) / h**2
        uyy = (v["N"] - 2 * v["C"] + v["S"]) / h**2
        uxy = (v["NE"] - v["NW"] - v["SE"] + v["SW"]) / (4 * h**2)
        d2 = np.stack([np.stack([uxx, uxy], -1), np.stack([uxy, uyy], -1)], -2)
        return v["C"], d1, d2

    def assemble(self, a11, a22, a12, b1, b2, c, ghost_weights) -> sp.csc_matrix:
        """Rows for the linear operator a:D^2 + b.D + c plus ghost rows.

        ``a12`` multiplies the single discrete mixed derivative, i.e. it is
        the sum of both off-diagonal coefficients.
        """
        h = self.h
        coef = {
            "C": -2 * a11 / h**2 - 2 * a22 / h**2 + c,
            "E": a11 / h**2 + b1 / (2 * h),
            "W": a11 / h**2 - b1 / (2 * h),
            "N": a22 / h**2 + b2 / (2 * h),
            "S": a22 / h**2 - b2 / (2 * h),
            "NE": a12 / (4 * h**2),
            "SW": a12 / (4 * h**2),
            "SE": -a12 / (4 * h**2),
            "NW": -a12 / (4 * h**2),
        }
        rows, cols, vals = [], [], []
        for name, cv in coef.items():
            rows.append(self.rows_active)
            cols.append(self.index[self.nbr[name]])
            vals.append(cv)
        rn = self.dom.row_nodes
        for q in range(rn.shape[1]):
            ok = rn[:, q] >= 0
            rows.append(self.rows_ghost[ok])
            cols.append(self.index[rn[ok, q]])
            vals.append(ghost_weights[ok, q])
        n = self.size
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        ).tocsc()


# residuals -------------------------------------------------------------------


def _flat(field: GridField) -> np.ndarray:
    return np.nan_to_num(field.values.ravel(), nan=0.0)


def _ghost_target(dom: CutDomain, ma: bool) -> np.ndarray:
    eps = dom.epsilon if dom.epsilon is not None else 0.0
    if ma:
        return eps**2 + np.sum(dom.cut_points**2, axis=1)
    return np.full(len(dom.ghost_nodes), eps)


def _cone_labels(kappa_or_matrix_sigmas, tol):
    s = kappa_or_matrix_sigmas
    return np.where(
        np.all(s > tol, axis=-1),
        symfunc.ConeLabel.INTERIOR.value,
        np.where(np.all(s >= -tol, axis=-1), symfunc.ConeLabel.BOUNDARY.value, symfunc.ConeLabel.OUTSIDE.value),
    )


class Problem:
    """Residual and Jacobian of one approximating problem on one domain."""

    def __init__(self, dom: CutDomain, psi, k: int, ma: bool, cone_tol: float = CONE_TOL):
        self.dom = dom
        self.st = Stencil(dom)
        self.psi = psi
        self.k = k
        self.n = 2
        self.ma = ma
        self.cone_tol = cone_tol
        if ma and k != self.n:
            raise ValueError("the Monge-Ampere path needs k = n")
        self.target = _ghost_target(dom, ma)

    # vector <-> grid
    def to_vector(self, values: np.ndarray) -> np.ndarray:
        return np.nan_to_num(values.ravel(), nan=0.0)[self.st.unknowns]

    def to_grid(self, z: np.ndarray) -> np.ndarray:
        out = np.full(self.dom.dims[0] * self.dom.dims[1], np.nan)
        out[self.st.unknowns] = z
        return out.reshape(self.dom.dims)

    def _full(self, z: np.ndarray) -> np.ndarray:
        full = np.zeros(self.dom.dims[0] * self.dom.dims[1])
        full[self.st.unknowns] = z
        return full

    def admissible(self, z: np.ndarray) -> np.ndarray:
        """Boolean per active node: strictly admissible and above the ideal boundary."""
        full = self._full(z)
        c, d1, d2 = self.st.derivatives(full)
        x = self.st.x
        if self.ma:
            pos = c - np.sum(x**2, axis=1) > 0
            s = symfunc.matrix_sigmas(d2, self.n)[:, 1:]
        else:
            pos = c > 0
            safe = np.where(pos, c, 1.0)
            s = symfunc.matrix_sigmas(graphgeom.a_matrix(safe, d1, d2), self.k)[:, 1:]
        return pos & np.all(s > self.cone_tol, axis=-1)

    def cone_report(self, z: np.ndarray):
        full = self._full(z)
        c, d1, d2 = self.st.derivatives(full)
        if self.ma:
            s = symfunc.matrix_sigmas(d2, self.n)[:, 1:]
        else:
            safe = np.where(c > 0, c, 1.0)
            s = symfunc.matrix_sigmas(graphgeom.a_matrix(safe, d1, d2), self.k)[:, 1:]
        return _cone_labels(s, self.cone_tol)

    def residual(self, z: np.ndarray, check: bool = True) -> np.ndarray:
        full = self._full(z)
        c, d1, d2 = self.st.derivatives(full)
        x = self.st.x
        if check:
            ok = self.admissible(z)
            if not ok.all():
                bad = np.flatnonzero(~ok)
                nodes = [tuple(int(t) for t in divmod(int(self.st.active[b]), self.st.ny)) for b in bad]
                raise InadmissibleError(nodes, list(self.cone_report(z)[bad]))
        out = np.empty(self.st.size)
        if self.ma:
            det = np.linalg.det(d2)
            Psi = 2.0**self.n * transform.gradient_ratio(x, c, d1)[0] ** ((self.n + 2) / 2) * self.psi.value(
                x, np.sqrt(c - np.sum(x**2, axis=1))
            ) ** self.n
            out[self.st.rows_active] = det - Psi
        else:
            A = graphgeom.a_matrix(c, d1, d2)
            e = symfunc.matrix_sigmas(A, self.k)[:, self.k]
            out[self.st.rows_active] = np.clip(e, 0, None) ** (1.0 / self.k) - self.psi.value(x, c)
        out[self.st.rows_ghost] = self.dom.interpolate_at_cuts(full.reshape(self.dom.dims)) - self.target
        return out

    def jacobian(self, z: np.ndarray) -> sp.csc_matrix:
        full = self._full(z)
        c, d1, d2 = self.st.derivatives(full)
        x = self.st.x
        if self.ma:
            _, Psi_U, Psi_p = transform.Psi_terms(self.psi, x, c, d1)
            a11, a22, a12 = d2[:, 1, 1], d2[:, 0, 0], -2 * d2[:, 0, 1]
            b = -Psi_p
            cc = -Psi_U
        else:
            _, Gij, Gi, Gu = graphgeom.operator_terms(c, d1, d2, self.k, self.cone_tol)
            a11, a22, a12 = Gij[:, 0, 0], Gij[:, 1, 1], 2 * Gij[:, 0, 1]
            b = Gi
            cc = Gu - self.psi.d_u(x, c)
        return self.st.assemble(a11, a22, a12, b[:, 0], b[:, 1], cc, self.dom.row_weights)

    def ghost_fill_u(self, u_active_grid: np.ndarray) -> np.ndarray:
        """Fill ghost u-values from the u-space boundary rows (u = eps at cuts)."""
        flat = np.nan_to_num(u_active_grid.ravel(), nan=0.0).copy()
        rn, wt = self.dom.row_nodes, self.dom.row_weights
        eps = self.dom.epsilon if self.dom.epsilon is not None else 0.0
        rest = np.sum(np.where(rn[:, 1:] >= 0, wt[:, 1:] * flat[np.maximum(rn[:, 1:], 0)], 0.0), axis=1)
        flat[rn[:, 0]] = (eps - rest) / wt[:, 0]
        out = flat.reshape(self.dom.dims)
        return np.where(self.dom.mask == OUTSIDE, np.nan, out)


def discrete_residual(field: GridField, dom: CutDomain, psi, k: int, ma: bool = False) -> GridField:
    """Per-node residual; Boundary nodes carry the cut-point value minus its Dirichlet data.

    With ``ma=True`` the field holds U and rows are det D^2U - Psi.
    """
    prob = Problem(dom, psi, k, ma)
    r = prob.residual(prob.to_vector(field.values))
    return GridField(dom.origin.copy(), dom.h, prob.to_grid(r), dom.mask.copy())


# Newton ------------------------------------------------------------------------


def _solve_linear(J, rhs):
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            dz = spsolve(J, rhs)
        except (MatrixRankWarning, RuntimeError) as exc:
            raise EllipticityLossError(f"singular linearized system: {exc}") from exc
    if not np.all(np.isfinite(dz)):
        raise EllipticityLossError("linear solve produced non-finite values")
    return dz


def newton(prob: Problem, z0: np.ndarray, tol: float, max_iter: int = 40, max_halvings: int = 40):
    rep = NewtonReport(path="ma" if prob.ma else "curvature")
    z = z0.copy()
    if not prob.admissible(z).all():
        raise InadmissibleError(
            [tuple(int(t) for t in divmod(int(prob.st.active[b]), prob.st.ny)) for b in np.flatnonzero(~prob.admissible(z))],
            list(prob.cone_report(z)[~prob.admissible(z)]),
        )
    r = prob.residual(z, check=False)
    norm = float(np.linalg.norm(r))
    rep.history.append(float(np.max(np.abs(r))))
    for it in range(max_iter):
        if np.max(np.abs(r)) <= tol:
            rep.converged = True
            break
        dz = _solve_linear(prob.jacobian(z), -r)
        alpha = 1.0
        for _ in range(max_halvings):
            trial = z + alpha * dz
            if not prob.admissible(trial).all():
                rep.repairs += 1
                alpha /= 2
                continue
            rt = prob.residual(trial, check=False)
            nt = float(np.linalg.norm(rt))
            if nt < norm or nt == 0.0:
                break
            alpha /= 2
        else:
            rep.message = "line search failed"
            rep.iterations = it
            rep.residual = float(np.max(np.abs(r)))
            return z, rep
        z, r, norm = trial, rt, nt
        rep.damping.append(alpha)
        rep.iterations = it + 1
        rep.history.append(float(np.max(np.abs(r))))
        log.debug("newton it=%d alpha=%g res=%.3e", it + 1, alpha, rep.history[-1])
    else:
        rep.converged = bool(np.max(np.abs(r)) <= tol)
    rep.residual = float(np.max(np.abs(r)))
    if not rep.converged and not rep.message:
        rep.message = "iteration budget exhausted"
    return z, rep


def newton_solve(
    init: GridField,
    dom: CutDomain,
    psi,
    k: int,
    cfg: NewtonConfig | None = None,
) -> tuple[GridField, NewtonReport, GridField | None]:
    """Solve the approximating problem on ``dom`` starting from ``init`` (u-values).

    Returns the u-field, the report and, on the Monge-Ampere path, the U-field.
    """
    cfg = cfg or NewtonConfig()
    n = 2
    ma = (k == n) if cfg.ma_path is None else cfg.ma_path
    tol = cfg.tol if cfg.tol is not None else default_tol(dom.h)
    prob = Problem(dom, psi, k, ma, cfg.cone_tol)
    P = init.points()
    r2 = np.sum(P**2, axis=-1)
    start = init.values**2 + r2 if ma else init.values
    z, rep = newton(prob, prob.to_vector(start), tol, cfg.max_iter, cfg.max_halvings)
    grid = prob.to_grid(z)
    if ma:
        U = GridField(dom.origin.copy(), dom.h, grid, dom.mask.copy())
        with np.errstate(invalid="ignore"):
            u_act = np.where(dom.mask == ACTIVE, np.sqrt(grid - r2), np.nan)
        u = GridField(dom.origin.copy(), dom.h, prob.ghost_fill_u(u_act), dom.mask.copy())
        return u, rep, U
    return GridField(dom.origin.copy(), dom.h, grid, dom.mask.copy()), rep, None


def blended_solve(start, fallback, dom: CutDomain, psi, k: int, cfg: NewtonConfig | None = None, max_blends: int = 6):
    """newton_solve from ``start``, blended toward ``fallback`` until admissible.

    Tries fallback + theta (start - fallback) for theta = 1, 1/2, .., then
    theta = 0. The number of blends is added to the report's repairs.
    """
    theta, blends = 1.0, 0
    while True:
        init = fallback + theta * (start - fallback)
        field = GridField(dom.origin.copy(), dom.h, init, dom.mask.copy())
        try:
            u, rep, U = newton_solve(field, dom, psi, k, cfg)
        except InadmissibleError:
            if theta == 0.0:
                raise
            blends += 1
            theta = theta / 2 if blends < max_blends else 0.0
            continue
        rep.repairs += blends
        return u, rep, U


def continuation_solve(
    ubar: GridField,
    psi,
    k: int,
    sched: ContinuationSchedule,
    ubar_fn: Callable | None = None,
    cfg: NewtonConfig | None = None,
    order: int = 3,
) -> tuple[list[Solution], bool]:
    """Solve along the eps schedule, warm-starting each level from the last.

    Returns the (possibly partial) sequence and whether every level converged.
    """
    cfg = cfg or NewtonConfig()
    if sched.tol is not None:
        cfg = NewtonConfig(**{**cfg.__dict__, "tol": sched.tol})
    cfg = NewtonConfig(**{**cfg.__dict__, "max_iter": sched.max_iter})
    out: list[Solution] = []
    prev: Solution | None = None
    for eps in sched.levels:
        dom = level_set_domain(ubar, eps, ubar_fn, order=order)
        warm = ubar.values
        if prev is not None:
            warm = np.where(prev.domain.mask == ACTIVE, prev.u.values, ubar.values)
        try:
            u, rep, U = blended_solve(warm, ubar.values, dom, psi, k, cfg)
        except (InadmissibleError, EllipticityLossError) as exc:
            rep = NewtonReport(message=str(exc))
            out.append(Solution(eps, dom, GridField(ubar.origin.copy(), ubar.h, warm, dom.mask.copy()), rep))
            return out, False
        sol = Solution(eps, dom, u, rep, U)
        out.append(sol)
        log.info("eps=%g iterations=%d residual=%.3e converged=%s", eps, rep.iterations, rep.residual, rep.converged)
        if not rep.converged:
            return out, False
        prev = sol
    return out, True


# checks --------------------------------------------------------------------


@dataclass
class SubsolutionReport:
    min_margin: float
    argmin: tuple[int, int]
    allowance: float
    passed: bool
    nodes_checked: int


def subsolution_check(
    ubar: GridField,
    psi,
    k: int,
    jet_fn: Callable | None = None,
    allowance: float | None = None,
) -> SubsolutionReport:
    """Check f(kappa[ubar]) >= psi(x, ubar) - C h^2 on nodes of {ubar > 0}.

    Derivatives come from the central stencil unless ``jet_fn`` (returning a
    PointJet for an (N, 2) array of points) is supplied. Nodes whose stencil
    is incomplete are skipped.
    """
    vals = ubar.values
    h = ubar.h
    allowance = C_H2 * h * h if allowance is None else allowance
    with np.errstate(invalid="ignore"):
        pos = vals > 0
    nx, ny = vals.shape
    padded = np.pad(pos, 1)
    ok = pos.copy()
    for di, dj in OFFSETS.values():
        ok &= padded[1 + di : 1 + di + nx, 1 + dj : 1 + dj + ny]
    idx = np.flatnonzero(ok.ravel())
    P = ubar.points().reshape(-1, 2)[idx]
    if jet_fn is not None:
        jet = jet_fn(P)
    else:
        flat = np.nan_to_num(vals.ravel())
        st = _FreeStencil(idx, ny, h)
        c, d1, d2 = st.derivatives(flat)
        jet = graphgeom.PointJet(P, c, d1, d2)
    A = graphgeom.a_matrix(jet.u, jet.du, jet.d2u)
    e = symfunc.matrix_sigmas(A, k)
    if np.any(np.any(e[:, 1:] < -CONE_TOL, axis=-1)):
        raise symfunc.DomainError("subsolution is not admissible")
    margin = np.clip(e[:, k], 0, None) ** (1.0 / k) - psi.value(jet.x, jet.u)
    j = int(np.argmin(margin))
    mm = float(margin[j])
    return SubsolutionReport(
        min_margin=mm,
        argmin=tuple(int(t) for t in divmod(int(idx[j]), ny)),
        allowance=allowance,
        passed=mm >= -allowance,
        nodes_checked=len(idx),
    )


class _FreeStencil:
    def __init__(self, centres: np.ndarray, ny: int, h: float):
        self.h = h
        self.nbr = {name: centres + di * ny + dj for name, (di, dj) in OFFSETS.items()}

    derivatives = Stencil.derivatives


@dataclass
class UniquenessConditionReport:
    min_value: float
    passed: bool
    samples: int


def uniqueness_condition(psi, x_box: tuple[float, float], u_range: tuple[float, float], num: int = 21) -> UniquenessConditionReport:
    """Evaluate psi_u - psi/u on a tensor sample over [x_box]^n x [u_range]."""
    n = psi.n
    xs = np.linspace(x_box[0], x_box[1], num)
    us = np.linspace(u_range[0], u_range[1], num)
    grids = np.meshgrid(*([xs] * n + [us]), indexing="ij")
    x = np.stack(grids[:n], axis=-1).reshape(-1, n)
    u = grids[n].reshape(-1)
    vals = psi.d_u(x, u) - psi.value(x, u) / u
    scale = 1.0 + float(np.max(np.abs(psi.value(x, u) / u)))
    lo = float(np.min(vals))
    return UniquenessConditionReport(min_value=lo, passed=lo >= -1e-12 * scale, samples=len(u))
