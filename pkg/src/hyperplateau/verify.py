"""Gap certificates, Pogorelov-type monitors and uniform-estimate tables
for a family of approximate solutions indexed by eps, plus the cap oracle.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field as dc_field
from typing import Callable

import numpy as np

from . import graphgeom, symfunc
from .domain import (
    ACTIVE,
    ConfigurationError,
    GridField,
    NestedDomains,
    StencilError,
    convex_envelope_solution,
    cut_domain,
    field_from_function,
    level_set_domain,
    nested_domains,
)
from .graphgeom import PointJet
from .solver import (
    C_H2,
    OFFSETS,
    NewtonConfig,
    Solution,
    UniquenessConditionReport,
    _FreeStencil,
    blended_solve,
    uniqueness_condition,
)


class DomainConstructionError(RuntimeError):
    pass


class MonitorMarginError(RuntimeError):
    pass


class InsufficientDataError(ValueError):
    pass


# cap oracle ------------------------------------------------------------------


@dataclass
class CapOracle:
    """Spherical cap u = sqrt(R1^2 - |x|^2) - sigma R1 and its hemisphere.

    Every hyperbolic principal curvature of the cap equals sigma; the
    hemisphere v = sqrt(rho^2 - |x|^2), rho = sqrt(1 - sigma^2) R1, spans
    the same boundary circle and is totally geodesic.
    """

    R1: float
    sigma: float
    n: int
    k: int
    rho: float
    alpha: float
    curvature: float
    ubar: GridField | None = None
    v: GridField | None = None

    @property
    def psi_text(self) -> str:
        return f"{self.alpha!r}*u^2"

    @property
    def psi_const_text(self) -> str:
        """Constant right-hand side solved exactly by the cap itself."""
        return repr(symfunc.binom_f_ones(self.n, self.k) * self.sigma)

    def ubar_fn(self, p):
        r2 = np.sum(np.asarray(p, dtype=float) ** 2, axis=-1)
        with np.errstate(invalid="ignore"):
            return np.sqrt(self.R1**2 - r2) - self.sigma * self.R1

    def v_fn(self, p):
        r2 = np.sum(np.asarray(p, dtype=float) ** 2, axis=-1)
        with np.errstate(invalid="ignore"):
            return np.sqrt(self.rho**2 - r2)

    @staticmethod
    def _sphere_jet(p, radius, shift):
        x = np.atleast_2d(np.asarray(p, dtype=float))
        s = np.sqrt(radius**2 - np.sum(x**2, axis=-1))
        du = -x / s[:, None]
        n = x.shape[-1]
        d2u = -np.eye(n) / s[:, None, None] - x[:, :, None] * x[:, None, :] / (s**3)[:, None, None]
        return PointJet(x, s - shift, du, d2u)

    def ubar_jet(self, p) -> PointJet:
        return self._sphere_jet(p, self.R1, self.sigma * self.R1)

    def v_jet(self, p) -> PointJet:
        return self._sphere_jet(p, self.rho, 0.0)


def cap_oracle(R1: float, sigma: float, grid: GridField | None = None, n: int = 2, k: int = 2) -> CapOracle:
    if not (R1 > 0 and 0 < sigma < 1):
        raise ValueError(f"need R1 > 0 and 0 < sigma < 1, got R1={R1}, sigma={sigma}")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    f_sigma = symfunc.binom_f_ones(n, k) * sigma
    orc = CapOracle(
        R1=R1,
        sigma=sigma,
        n=n,
        k=k,
        rho=math.sqrt(1 - sigma**2) * R1,
        alpha=f_sigma / ((1 - sigma) ** 2 * R1**2),
        curvature=sigma,
    )
    if grid is not None:
        orc.ubar = field_from_function(grid, orc.ubar_fn)
        orc.v = field_from_function(grid, orc.v_fn)
    return orc


# grid derivatives ------------------------------------------------------------


def grid_jets(field: GridField, sel: np.ndarray) -> tuple[np.ndarray, PointJet]:
    """Central-difference jets (same nine-point stencil as the solver) on ``sel``."""
    vals = field.values
    nx, ny = vals.shape
    idx = np.flatnonzero(sel.ravel())
    ii, jj = np.divmod(idx, ny)
    if len(idx) and (ii.min() < 1 or jj.min() < 1 or ii.max() > nx - 2 or jj.max() > ny - 2):
        raise StencilError("selected node on the grid edge")
    flat = vals.ravel()
    for di, dj in OFFSETS.values():
        if not np.all(np.isfinite(flat[idx + di * ny + dj])):
            raise StencilError("selected node has an undefined neighbour")
    c, d1, d2 = _FreeStencil(idx, ny, field.h).derivatives(flat)
    P = field.points().reshape(-1, 2)[idx]
    return idx, PointJet(P, c, d1, d2)


def _interior_flag(sel: np.ndarray, node: tuple[int, int]) -> bool:
    i, j = node
    win = sel[i - 1 : i + 2, j - 1 : j + 2]
    return win.shape == (3, 3) and bool(win.all())


# gap certificate -------------------------------------------------------------


@dataclass
class GapCertificate:
    value: float
    threshold: float
    passed: bool

    def __float__(self) -> float:
        return self.value


def _difference(upper: GridField, u_eps: GridField, path: str) -> np.ndarray:
    u = u_eps.values
    with np.errstate(invalid="ignore"):
        if path == "ma":
            r2 = np.sum(u_eps.points() ** 2, axis=-1)
            return upper.values - (u**2 + r2)
        return upper.values**2 - u**2


def gap_certificate(upper: GridField, u_eps: GridField, nested: NestedDomains) -> GapCertificate:
    """min over Omega_eps0 of V - U^eps (path 'ma') or v^2 - u^2; passes iff >= tau r^2."""
    if not upper.same_grid(u_eps):
        raise ConfigurationError("fields must share one grid")
    sel = nested.omega_eps0
    if not sel.any():
        raise ConfigurationError("Omega_eps0 is empty")
    d = _difference(upper, u_eps, nested.path)[sel]
    value = float(np.min(d)) if np.all(np.isfinite(d)) else float("nan")
    thr = nested.tau * nested.r**2
    return GapCertificate(value=value, threshold=thr, passed=bool(value >= thr))


# monitors --------------------------------------------------------------------


@dataclass
class MonitorConfig:
    a: float | None = None
    b: float = 2.0
    beta: float = 1.0
    tau: float | None = None
    r: float | None = None
    c: float | None = None
    eps0: float | None = None

    def __post_init__(self):
        if self.b < 1:
            raise ValueError("b must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


@dataclass
class MonitorResult:
    value: float
    argmax: tuple[int, int]
    interior: bool
    nodes: int
    bounded: float = float("nan")


def _ma_integrand(U_eps: GridField, V: GridField, nested: NestedDomains, cfg: MonitorConfig):
    sel = nested.omega_eps_eps0
    c = nested.c if cfg.c is None else cfg.c
    idx, jet = grid_jets(U_eps, sel)
    eta = V.values.ravel()[idx] - jet.u - c
    if np.any(eta <= 0):
        raise DomainConstructionError("eta <= 0 inside Omega^eps_eps0")
    lam, _ = symfunc.jacobi_eigh(jet.d2u)
    g2 = np.sum(jet.du**2, axis=-1)
    return idx, eta * np.exp(cfg.beta * g2 / 2) * lam[:, 0]


def pogorelov_ma_monitor(U_eps: GridField, V: GridField, nested: NestedDomains, cfg: MonitorConfig) -> MonitorResult:
    """sup of eta e^{beta |DU|^2 / 2} lambda_max(D^2U), eta = V - U - tau r^2 / 2."""
    sel = nested.omega_eps_eps0
    idx, val = _ma_integrand(U_eps, V, nested, cfg)
    j = int(np.argmax(val))
    node = tuple(int(t) for t in divmod(int(idx[j]), sel.shape[1]))
    return MonitorResult(float(val[j]), node, _interior_flag(sel, node), len(idx))


def measure_a(u_eps: GridField, nested: NestedDomains) -> float:
    """Half the minimum of nu^{n+1} = 1/w over Omega^eps_eps0."""
    _, jet = grid_jets(u_eps, nested.omega_eps_eps0)
    w = np.sqrt(1 + np.sum(jet.du**2, axis=-1))
    return float(0.5 * np.min(1 / w))


def pogorelov_curvature_monitor(
    u_eps: GridField, v: GridField, nested: NestedDomains, cfg: MonitorConfig, k: int
) -> MonitorResult:
    """sup of (v^2 - u^2 - c)^b kappa_max / (nu^{n+1} - a) e^{beta/u} over Omega^eps_eps0.

    ``bounded`` holds sup of (v^2 - u^2 - c) kappa_max.
    """
    if cfg.a is None:
        raise ValueError("MonitorConfig.a must be set (see measure_a)")
    sel = nested.omega_eps_eps0
    c = nested.c if cfg.c is None else cfg.c
    idx, jet = grid_jets(u_eps, sel)
    spec = graphgeom.curvature_spectrum(jet, k)
    kmax = spec.kappa[:, 0]
    nu = 1 / np.sqrt(1 + np.sum(jet.du**2, axis=-1))
    if np.any(nu <= cfg.a):
        raise MonitorMarginError(f"nu^(n+1) <= a = {cfg.a} at {np.count_nonzero(nu <= cfg.a)} node(s)")
    g = v.values.ravel()[idx] ** 2 - jet.u**2 - c
    if np.any(g <= 0):
        raise DomainConstructionError("v^2 - u^2 - c <= 0 inside Omega^eps_eps0")
    val = g**cfg.b * kmax / (nu - cfg.a) * np.exp(cfg.beta / jet.u)
    j = int(np.argmax(val))
    node = tuple(int(t) for t in divmod(int(idx[j]), sel.shape[1]))
    return MonitorResult(float(val[j]), node, _interior_flag(sel, node), len(idx), float(np.max(g * kmax)))


# tables ----------------------------------------------------------------------


def relative_variation(xs) -> float:
    xs = np.asarray(xs, dtype=float)
    scale = np.max(np.abs(xs))
    if scale == 0:
        return 0.0
    return float((xs.max() - xs.min()) / scale)


@dataclass
class EstimateReport:
    columns: list[str]
    rows: list[dict]
    passed: dict[str, bool]
    variation: dict[str, float]
    tol: float = 0.1
    meta: dict = dc_field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps"] + self.columns)
        for row in self.rows:
            w.writerow([format(row["eps"], ".16e")] + [format(row[c], ".16e") for c in self.columns])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=float)


def omega_eps0_mask(ubar: GridField, eps0: float) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return ubar.values > eps0


def uniform_estimate_table(
    run: list[Solution],
    ubar: GridField,
    eps0: float,
    k: int,
    extras: list[dict] | None = None,
    tol: float = 0.1,
) -> EstimateReport:
    """sup|u|, sup|Du| and sup|D^2U| (k = n) or max|kappa_i| over Omega_eps0 per eps.

    A column passes when its last three rows vary by less than ``tol``
    relative. ``extras`` adds per-row columns (monitors, gaps) that are
    judged the same way.
    """
    sel = omega_eps0_mask(ubar, eps0)
    if not sel.any():
        raise ConfigurationError("Omega_eps0 is empty")
    # levels whose domain does not yet contain Omega_eps0 carry no estimate
    skipped = [s.eps for s in run if not np.all(s.domain.mask[sel] == ACTIVE)]
    if extras is not None:
        extras = [e for s, e in zip(run, extras) if s.eps not in skipped]
    run = [s for s in run if s.eps not in skipped]
    if len(run) < 3:
        raise InsufficientDataError(f"need at least 3 eps levels containing Omega_eps0, got {len(run)}")
    eps = [s.eps for s in run]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("rows must be keyed by strictly decreasing eps")
    n = 2
    rows = []
    for m, s in enumerate(run):
        _, jet = grid_jets(s.u, sel)
        row = {"eps": s.eps, "sup_u": float(np.max(np.abs(jet.u))), "sup_du": float(np.max(np.linalg.norm(jet.du, axis=-1)))}
        if k == n:
            P = s.u.points()
            U = GridField(s.u.origin, s.u.h, s.u.values**2 + np.sum(P**2, axis=-1), s.u.mask)
            _, jU = grid_jets(U, sel)
            row["sup_d2U"] = float(np.max(np.linalg.norm(jU.d2u, ord=2, axis=(-2, -1))))
        else:
            kap = graphgeom.curvature_spectrum(jet, k).kappa
            row["max_kappa"] = float(np.max(np.abs(kap)))
        if extras is not None:
            row.update(extras[m])
        rows.append(row)
    cols = [c for c in rows[0] if c != "eps"]
    var = {c: relative_variation([r[c] for r in rows[-3:]]) for c in cols}
    return EstimateReport(
        columns=cols,
        rows=rows,
        passed={c: var[c] < tol for c in cols},
        variation=var,
        tol=tol,
        meta={"eps0": eps0, "k": k, "h": ubar.h, "skipped_eps": skipped},
    )


# ordering and uniqueness ------------------------------------------------------


@dataclass
class OrderingMargins:
    lower: float
    upper: float
    allowance: float
    lower_ok: bool
    upper_ok: bool

    @property
    def passed(self) -> bool:
        return self.lower_ok and self.upper_ok


def ordering_check(ubar: GridField, u_eps: GridField, v: GridField | None = None, allowance: float | None = None) -> OrderingMargins:
    """min(u - ubar) >= -C h^2 and min(v - u) > 0 on the active nodes of u_eps."""
    allowance = C_H2 * u_eps.h**2 if allowance is None else allowance
    act = u_eps.mask == ACTIVE
    lower = float(np.min((u_eps.values - ubar.values)[act]))
    if v is None:
        upper, up_ok = float("nan"), True
    else:
        upper = float(np.min((v.values - u_eps.values)[act]))
        up_ok = upper > 0
    return OrderingMargins(lower, upper, allowance, lower >= -allowance, up_ok)


@dataclass
class UniquenessProbe:
    diff: float
    status: str
    condition: UniquenessConditionReport | None
    reports: list = dc_field(default_factory=list)

    @property
    def claim(self) -> bool:
        """True only when the hypothesis holds and the solutions agree."""
        return self.status == "ok" and self.condition is not None and self.condition.passed


def uniqueness_probe(
    psi,
    dom,
    k: int,
    init1: np.ndarray,
    init2: np.ndarray,
    fallback: np.ndarray | None = None,
    cfg: NewtonConfig | None = None,
    condition_box: tuple[tuple[float, float], tuple[float, float]] | None = None,
) -> UniquenessProbe:
    """Solve twice from independent starts and report the sup difference.

    Starts that are not admissible are blended toward ``fallback``
    (default ``init1``). The report carries psi_u - psi/u >= 0 sampled on
    ``condition_box`` = (x range, u range); without it the sampled box is
    the grid extent times (0, 1].
    """
    fallback = init1 if fallback is None else fallback
    if condition_box is None:
        P = dom.as_field().points()
        lo, hi = float(P.min()), float(P.max())
        condition_box = ((lo, hi), (1e-3, 1.0))
    cond = uniqueness_condition(psi, condition_box[0], condition_box[1])
    sols, reps = [], []
    for init in (init1, init2):
        try:
            u, rep, _ = blended_solve(init, fallback, dom, psi, k, cfg)
        except Exception as exc:  # any failed solve makes the probe inconclusive
            return UniquenessProbe(float("nan"), f"inconclusive: {exc}", cond, reps)
        reps.append(rep)
        if not rep.converged:
            return UniquenessProbe(float("nan"), "inconclusive: solve did not converge", cond, reps)
        sols.append(u.values)
    act = dom.mask == ACTIVE
    diff = float(np.max(np.abs(sols[0] - sols[1])[act]))
    return UniquenessProbe(diff, "ok", cond, reps)


# family driver -----------------------------------------------------------------


@dataclass
class FamilyRow:
    eps: float
    gap: float
    gap_passed: bool
    ma_monitor: float = float("nan")
    ma_interior: bool = True
    curvature_monitor: float = float("nan")
    curvature_interior: bool = True
    bounded: float = float("nan")
    inclusions: dict = dc_field(default_factory=dict)


@dataclass
class FamilyMonitors:
    rows: list[FamilyRow]
    cfg: MonitorConfig
    nested: list[NestedDomains]

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.rows]

    def stable(self, name: str, tol: float = 0.1) -> bool:
        return relative_variation(self.column(name)[-3:]) < tol


def upper_barriers(ubar: GridField, ubar_fn: Callable | None = None) -> tuple[GridField, GridField]:
    """(V, v): the convex envelope of |x|^2 over Gamma = {ubar = 0} and v = sqrt(V - |x|^2)."""
    dom0 = cut_domain(ubar, ubar.values, ubar_fn, epsilon=0.0)
    V, v, _ = convex_envelope_solution(dom0)
    return V, v


def family_monitors(
    run: list[Solution],
    ubar: GridField,
    eps0: float,
    k: int,
    cfg: MonitorConfig | None = None,
    ubar_fn: Callable | None = None,
    barriers: tuple[GridField, GridField] | None = None,
) -> FamilyMonitors:
    """Gap certificates and monitors along a solved family.

    tau and r are fixed once for the whole family from the smallest gap,
    and a (when not given) is measured on the first level, then frozen.
    The curvature monitor runs for every k; the Monge-Ampere monitor only
    for k = n = 2.
    """
    cfg = cfg or MonitorConfig()
    V, v = barriers if barriers is not None else upper_barriers(ubar, ubar_fn)
    path = "ma" if k == 2 else "general"
    upper = V if path == "ma" else v
    sel = omega_eps0_mask(ubar, eps0)
    gaps = [float(np.min(_difference(upper, s.u, path)[sel])) for s in run]
    gap = min(gaps)
    nested = [nested_domains(upper, s.u, ubar, eps0, gap=gap, path=path, ubar_fn=ubar_fn) for s in run]
    a = cfg.a if cfg.a is not None else measure_a(run[0].u, nested[0])
    cfg = MonitorConfig(a=a, b=cfg.b, beta=cfg.beta, tau=nested[0].tau, r=nested[0].r, c=nested[0].c, eps0=eps0)
    rows = []
    for s, nd in zip(run, nested):
        cert = gap_certificate(upper, s.u, nd)
        row = FamilyRow(eps=s.eps, gap=cert.value, gap_passed=cert.passed, inclusions=nd.inclusions())
        if path == "ma":
            P = s.u.points()
            U = s.U if s.U is not None else GridField(s.u.origin, s.u.h, s.u.values**2 + np.sum(P**2, axis=-1), s.u.mask)
            mm = pogorelov_ma_monitor(U, V, nd, cfg)
            row.ma_monitor, row.ma_interior = mm.value, mm.interior
        cm = pogorelov_curvature_monitor(s.u, v, nd, cfg, k)
        row.curvature_monitor, row.curvature_interior, row.bounded = cm.value, cm.interior, cm.bounded
        rows.append(row)
    return FamilyMonitors(rows, cfg, nested)


def choose_b(
    run: list[Solution],
    ubar: GridField,
    eps0: float,
    k: int,
    bs=(2.0, 3.0, 4.0, 6.0, 8.0),
    beta: float = 1.0,
    ubar_fn: Callable | None = None,
    barriers: tuple[GridField, GridField] | None = None,
) -> tuple[FamilyMonitors, list[tuple[float, bool]]]:
    """Smallest gap exponent b in ``bs`` whose monitor maxima are all interior.

    Returns the chosen family result and the sweep as (b, all interior)
    pairs; when no b qualifies the last one tried is returned.
    """
    barriers = barriers if barriers is not None else upper_barriers(ubar, ubar_fn)
    sweep = []
    fm = None
    for b in bs:
        fm = family_monitors(run, ubar, eps0, k, MonitorConfig(b=b, beta=beta), ubar_fn, barriers)
        inside = all(r.curvature_interior and r.ma_interior for r in fm.rows)
        sweep.append((b, inside))
        if inside:
            break
    return fm, sweep
