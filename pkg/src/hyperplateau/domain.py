"""Uniform 2-D grids, cut-cell domains, the homogeneous solution and nested domains.

A domain is the set of Active nodes where a level function is positive,
plus one layer of Boundary (ghost) nodes that completes every Active node's
nine-point stencil. Each ghost carries one interpolation row tying the
field to its Dirichlet value at a point where a grid segment crosses the
level set.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import ConvexHull, QhullError, cKDTree

OUTSIDE, ACTIVE, BOUNDARY = 0, 1, 2

# axis directions first: ties in the cut fraction keep the axis choice
DIRECTIONS = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1)]


class ResolutionError(ValueError):
    pass


class RegularityError(ValueError):
    pass


class StencilError(ValueError):
    pass


class UnsupportedDomainError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass
class GridField:
    origin: np.ndarray
    h: float
    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=np.int8)
            if self.mask.shape != self.values.shape:
                raise ValueError("mask and values must have the same shape")

    @property
    def dims(self) -> tuple[int, ...]:
        return self.values.shape

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        nx, ny = self.dims
        xs = self.origin[0] + self.h * np.arange(nx)
        ys = self.origin[1] + self.h * np.arange(ny)
        return np.meshgrid(xs, ys, indexing="ij")

    def points(self) -> np.ndarray:
        X, Y = self.coords()
        return np.stack([X, Y], axis=-1)

    def same_grid(self, other: "GridField") -> bool:
        return (
            self.dims == other.dims
            and np.allclose(self.origin, other.origin, rtol=0, atol=1e-14)
            and abs(self.h - other.h) < 1e-15
        )

    def with_values(self, values, mask=None) -> "GridField":
        return GridField(self.origin.copy(), self.h, values, self.mask if mask is None else mask)


def make_grid(half_width: float, h: float) -> GridField:
    """Square grid symmetric about the origin with nodes at multiples of h."""
    m = int(np.ceil(half_width / h)) + 3
    dims = (2 * m + 1, 2 * m + 1)
    return GridField(origin=np.array([-m * h, -m * h]), h=h, values=np.zeros(dims), mask=np.zeros(dims))


def field_from_function(grid: GridField, fn: Callable, mask=None) -> GridField:
    X, Y = grid.coords()
    with np.errstate(invalid="ignore"):
        vals = np.asarray(fn(np.stack([X, Y], axis=-1)), dtype=float)
    return GridField(grid.origin.copy(), grid.h, vals, mask)


@dataclass
class CutDomain:
    """Active mask, ghost layer and ghost interpolation rows on a grid.

    ``row_nodes`` has one entry per ghost: flat indices ``(B, S1, ..)`` of the
    ghost and its active support nodes on the same grid line (-1 pads rows
    that found fewer supports); ``row_weights`` are the weights of each node
    in the interpolated value at the cut point.
    """

    origin: np.ndarray
    h: float
    mask: np.ndarray
    ghost_nodes: np.ndarray
    row_nodes: np.ndarray
    row_weights: np.ndarray
    cut_points: np.ndarray
    cut_fraction: np.ndarray
    epsilon: float | None = None
    min_grad: float = float("nan")
    meta: dict = dc_field(default_factory=dict)

    @property
    def dims(self) -> tuple[int, int]:
        return self.mask.shape

    @property
    def active(self) -> np.ndarray:
        return self.mask == ACTIVE

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.mask == ACTIVE))

    def unknowns(self) -> np.ndarray:
        """Flat indices of Active and Boundary nodes, row-major."""
        return np.flatnonzero(self.mask.ravel() != OUTSIDE)

    def as_field(self, values=None) -> GridField:
        vals = np.zeros(self.dims) if values is None else values
        return GridField(self.origin.copy(), self.h, vals, self.mask.copy())

    def interpolate_at_cuts(self, values: np.ndarray) -> np.ndarray:
        flat = values.ravel()
        idx = np.where(self.row_nodes < 0, 0, self.row_nodes)
        return np.sum(self.row_weights * flat[idx], axis=1)


# Cut fractions below this make A a poor support: its weight in the row
# grows like 1/t and errors at A get amplified into the ghost value. Such
# rows move their support one node further in.
FAR_SUPPORT_T = 0.5


def _lagrange_weights(t: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Lagrange weights at position t for nodes at ``pos`` (B sits at 1).

    ``pos`` has shape (m, q); a NaN entry drops that node.
    """
    t = np.asarray(t, dtype=float)[:, None]
    out = np.zeros(pos.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        return _lagrange_fill(t, pos, out)


def _lagrange_fill(t, pos, out):
    width = pos.shape[1]
    for q in range(width):
        wq = np.ones(len(pos))
        for r in range(width):
            if r == q:
                continue
            pr = pos[:, r]
            use = np.isfinite(pr)
            wq = np.where(use, wq * (t[:, 0] - pr) / (pos[:, q] - np.where(use, pr, 0.0)), wq)
        out[:, q] = np.where(np.isfinite(pos[:, q]), wq, 0.0)
    return out


def cut_domain(
    grid: GridField,
    phi: np.ndarray,
    phi_fn: Callable | None = None,
    epsilon: float | None = None,
    order: int = 3,
    grad_tol: float = 1e-6,
) -> CutDomain:
    """Domain {phi > 0} on ``grid`` with cut points on {phi = 0}.

    ``phi`` holds node values (NaN where undefined). Cut points come from
    linear interpolation of node values along grid segments (the marching
    squares edge rule); if ``phi_fn`` is given they are refined to the exact
    root along the segment.
    """
    phi = np.asarray(phi, dtype=float)
    nx, ny = phi.shape
    h = grid.h
    with np.errstate(invalid="ignore"):
        act = phi > 0
    if not act.any():
        raise ConfigurationError("domain has no active nodes")
    if act[[0, 1, -2, -1], :].any() or act[:, [0, 1, -2, -1]].any():
        raise ResolutionError("domain touches the edge of the grid")
    near = np.zeros_like(act)
    for di, dj in DIRECTIONS:
        near |= np.roll(np.roll(act, di, axis=0), dj, axis=1)
    ghost = near & ~act
    mask = np.where(act, ACTIVE, np.where(ghost, BOUNDARY, OUTSIDE)).astype(np.int8)

    X, Y = grid.coords()
    gi, gj = np.nonzero(ghost)
    m = len(gi)
    rows = np.full((m, order + 1), -1, dtype=np.int64)
    tbest = np.full(m, -1.0)
    cuts = np.zeros((m, 2))
    pos = np.full((m, order + 1), np.nan)
    for r in range(m):
        i, j = gi[r], gj[r]
        best = None
        for di, dj in DIRECTIONS:
            ai, aj = i + di, j + dj
            if not act[ai, aj]:
                continue
            pa, pb = phi[ai, aj], phi[i, j]
            xa = np.array([X[ai, aj], Y[ai, aj]])
            xb = np.array([X[i, j], Y[i, j]])
            if phi_fn is not None:
                g = lambda s: float(phi_fn(xa + s * (xb - xa)))
                gb = g(1.0)
                if not np.isfinite(gb):
                    continue
                t = 1.0 if gb == 0 else brentq(g, 0.0, 1.0, xtol=1e-15, rtol=1e-15)
            else:
                if not np.isfinite(pb):
                    continue
                t = pa / (pa - pb)
            if best is None or t > best[0] + 1e-12:
                best = (t, ai, aj, di, dj, xa, xb)
        if best is None:
            raise RegularityError(f"ghost node {(i, j)} has no usable cut")
        t, ai, aj, di, dj, xa, xb = best
        rows[r, 0] = i * ny + j
        pos[r, 0] = 1.0
        # support nodes A + s d (moving away from B), s = 0, 1, ..
        line = [(ai + q * di, aj + q * dj) for q in range(order + 1)]
        ok = []
        for p, q in line:
            ok.append(bool(ok[-1] if ok else True) and 0 <= p < nx and 0 <= q < ny and bool(act[p, q]))
        start = 1 if (t < FAR_SUPPORT_T and ok[1]) else 0
        chosen = [q for q in range(start, order + 1) if ok[q]][:order]
        if len(chosen) < order:
            chosen = [q for q in range(order + 1) if ok[q]][:order]
        for c, q in enumerate(chosen):
            rows[r, 1 + c] = line[q][0] * ny + line[q][1]
            pos[r, 1 + c] = -float(q)
        tbest[r] = t
        cuts[r] = xa + t * (xb - xa)

    # |D phi| near the level set, from central differences at the inner nodes
    inner = np.unique(rows[:, 1])
    ii, jj = np.divmod(inner, ny)
    with np.errstate(invalid="ignore"):
        gx = (phi[ii + 1, jj] - phi[ii - 1, jj]) / (2 * h)
        gy = (phi[ii, jj + 1] - phi[ii, jj - 1]) / (2 * h)
    gnorm = np.hypot(gx, gy)
    finite = np.isfinite(gnorm)
    min_grad = float(np.min(gnorm[finite])) if finite.any() else float("nan")
    if finite.any() and min_grad < grad_tol:
        raise RegularityError("level set meets a critical point of the level function")

    return CutDomain(
        origin=grid.origin.copy(),
        h=h,
        mask=mask,
        ghost_nodes=rows[:, 0].copy(),
        row_nodes=rows,
        row_weights=_lagrange_weights(tbest, pos),
        cut_points=cuts,
        cut_fraction=tbest,
        epsilon=epsilon,
        min_grad=min_grad,
    )


def build_disk(R: float, h: float, order: int = 3) -> CutDomain:
    """Disk {|x| < R}; ghost rows sit on exact grid-line/circle intersections."""
    if R <= 0 or not 0 < h < R / 4:
        raise ResolutionError(f"need R > 0 and 0 < h < R/4, got R={R}, h={h}")
    grid = make_grid(R, h)
    X, Y = grid.coords()
    phi = R - np.hypot(X, Y)
    return cut_domain(grid, phi, lambda p: R - np.hypot(p[0], p[1]), order=order)


def level_set_domain(
    ubar: GridField,
    eps: float,
    ubar_fn: Callable | None = None,
    order: int = 3,
) -> CutDomain:
    """Omega_eps = {ubar > eps} with Dirichlet value eps on Gamma_eps."""
    vmax = np.nanmax(ubar.values)
    if not 0 < eps < vmax:
        raise ConfigurationError(f"eps={eps} must lie in (0, max ubar = {vmax})")
    phi = ubar.values - eps
    fn = None if ubar_fn is None else (lambda p: ubar_fn(p) - eps)
    return cut_domain(ubar, phi, fn, epsilon=eps, order=order)


# homogeneous solution -------------------------------------------------------


def sample_circle(R: float, h: float, center=(0.0, 0.0)) -> np.ndarray:
    m = int(np.ceil(4 * 2 * np.pi * R / h))
    th = 2 * np.pi * np.arange(m) / m
    return np.stack([center[0] + R * np.cos(th), center[1] + R * np.sin(th)], axis=1)


def sample_ellipse(a: float, b: float, h: float) -> np.ndarray:
    # Ramanujan's perimeter approximation is plenty for a sample count
    per = np.pi * (3 * (a + b) - np.sqrt((3 * a + b) * (a + 3 * b)))
    m = int(np.ceil(4 * per / h))
    th = 2 * np.pi * np.arange(m) / m
    return np.stack([a * np.cos(th), b * np.sin(th)], axis=1)


def _check_convex(pts: np.ndarray) -> None:
    hull = ConvexHull(pts)
    scale = np.max(np.abs(pts)) + 1.0
    # signed distance of every sample to the hull boundary (<= 0 inside)
    d = pts @ hull.equations[:, :2].T + hull.equations[:, 2]
    depth = -np.max(d, axis=1)
    if np.any(depth > 1e-9 * scale):
        raise UnsupportedDomainError("boundary samples do not bound a convex domain")


@dataclass
class Envelope:
    """Convex envelope as a max of affine functions a.x + b."""

    slopes: np.ndarray
    offsets: np.ndarray

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, 2)
        out = np.empty(len(flat))
        for s in range(0, len(flat), 4096):
            blk = flat[s : s + 4096]
            out[s : s + 4096] = np.max(blk @ self.slopes.T + self.offsets, axis=1)
        return out.reshape(pts.shape[:-1])


def lower_envelope(pts: np.ndarray, g: np.ndarray) -> Envelope:
    """Supremum of affine functions below the lifted points (pts, g)."""
    pts = np.asarray(pts, dtype=float)
    g = np.asarray(g, dtype=float)
    M = np.hstack([pts, np.ones((len(pts), 1))])
    coef, *_ = np.linalg.lstsq(M, g, rcond=None)
    scale = np.max(np.abs(g)) + 1.0
    if np.max(np.abs(M @ coef - g)) <= 1e-12 * scale:
        return Envelope(coef[None, :2], coef[None, 2])
    try:
        hull = ConvexHull(np.hstack([pts, g[:, None]]))
    except QhullError as exc:  # pragma: no cover - degenerate but not affine
        raise UnsupportedDomainError(str(exc)) from exc
    eq = hull.equations
    lower = eq[:, 2] < -1e-12
    a, b, c, d = eq[lower].T
    slopes = np.stack([-a / c, -b / c], axis=1)
    return Envelope(slopes, -d / c)


def convex_envelope_solution(
    domain: CutDomain,
    boundary_points: np.ndarray | None = None,
    g: Callable | None = None,
) -> tuple[GridField, GridField, Envelope]:
    """V = convex envelope of g (default |x|^2) on the boundary; v = sqrt(V - |x|^2).

    Both fields are defined on Active and Boundary nodes of ``domain``.
    """
    pts = domain.cut_points if boundary_points is None else np.asarray(boundary_points, dtype=float)
    _check_convex(pts)
    gfun = g if g is not None else (lambda p: np.sum(np.asarray(p) ** 2, axis=-1))
    env = lower_envelope(pts, gfun(pts))
    grid = domain.as_field()
    P = grid.points()
    V = np.full(domain.dims, np.nan)
    sel = domain.mask != OUTSIDE
    V[sel] = env(P[sel])
    with np.errstate(invalid="ignore"):
        vv = V - np.sum(P**2, axis=-1)
        v = np.where(vv > 0, np.sqrt(np.where(vv > 0, vv, 0.0)), np.nan)
    return domain.as_field(V), domain.as_field(v), env


# nested domains --------------------------------------------------------------


@dataclass
class NestedDomains:
    omega_eps0: np.ndarray
    omega_eps_eps0: np.ndarray
    omega_hat: np.ndarray
    omega: np.ndarray
    tau: float
    r: float
    c: float
    delta_eps0: float
    gap: float
    path: str

    def inclusions(self) -> dict[str, bool]:
        def strict(a, b):
            return bool(np.all(b[a]) and np.count_nonzero(b) > np.count_nonzero(a))

        return {
            "omega_eps0 < omega_eps_eps0": strict(self.omega_eps0, self.omega_eps_eps0),
            "omega_eps_eps0 < omega_hat": strict(self.omega_eps_eps0, self.omega_hat),
            "omega_hat < omega": strict(self.omega_hat, self.omega),
        }


def dyadic_floor(x: float) -> float:
    if x <= 0:
        raise ConfigurationError("gap must be positive to certify tau")
    return float(2.0 ** np.floor(np.log2(x)))


def nested_domains(
    upper: GridField,
    u_eps: GridField,
    ubar: GridField,
    eps0: float,
    gap: float | None = None,
    path: str = "ma",
    ubar_fn: Callable | None = None,
) -> NestedDomains:
    """Nested interior domains built from the gap to the homogeneous solution.

    ``path='ma'`` works in U-variables (``upper`` is V, thresholds on
    V - U with U = u^2 + |x|^2); ``path='general'`` works with v^2 - u^2
    (``upper`` is v). The two differences coincide pointwise; both are
    kept so each path reads like its estimate. ``gap`` defaults to the
    minimum of the difference over Omega_eps0 for ``u_eps``.
    """
    if not (upper.same_grid(u_eps) and upper.same_grid(ubar)):
        raise ConfigurationError("fields must share one grid")
    P = ubar.points()
    r2 = np.sum(P**2, axis=-1)
    with np.errstate(invalid="ignore"):
        omega = ubar.values > 0
        omega_eps0 = ubar.values > eps0
    if not omega_eps0.any():
        raise ConfigurationError("Omega_eps0 is empty")
    half = level_set_domain(ubar, eps0 / 2, ubar_fn)
    tree = cKDTree(half.cut_points)
    dist, _ = tree.query(P[omega_eps0])
    r = float(np.min(dist))

    u = u_eps.values
    active = u_eps.mask == ACTIVE
    with np.errstate(invalid="ignore"):
        if path == "ma":
            diff = upper.values - (u**2 + r2)
            diff_bar = upper.values - (ubar.values**2 + r2)
        elif path == "general":
            diff = upper.values**2 - u**2
            diff_bar = upper.values**2 - ubar.values**2
        else:
            raise ConfigurationError(f"unknown path {path!r}")
    if not np.all(active[omega_eps0]):
        raise ConfigurationError("Omega_eps0 is not inside the solution's active set")
    if gap is None:
        gap = float(np.min(diff[omega_eps0]))
    tau = dyadic_floor(gap / r**2)
    c = tau * r**2 / 2
    with np.errstate(invalid="ignore"):
        omega_eps_eps0 = active & (diff > c)
        omega_hat = omega & (diff_bar >= c)
    delta = float(np.min(ubar.values[omega_hat]))
    return NestedDomains(
        omega_eps0=omega_eps0,
        omega_eps_eps0=omega_eps_eps0,
        omega_hat=omega_hat,
        omega=omega,
        tau=tau,
        r=r,
        c=c,
        delta_eps0=delta,
        gap=gap,
        path=path,
    )
