"""Command line driver: solve | verify | oracle-test | parse-check."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import expr, graphgeom, symfunc, transform, verify
from .domain import ConfigurationError, GridField, level_set_domain, make_grid
from .expr import EvaluationError, ParseError, RhsSpec
from .solver import (
    ContinuationSchedule,
    NewtonConfig,
    Solution,
    continuation_solve,
    newton_solve,
    subsolution_check,
)

log = logging.getLogger("hyperplateau")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2
CSV_HEADER = "i,j,x,y,mask,u"


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        super().__init__(message)
        self.message = message
        self.line = line
        self.column = column


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    mode: str = "solve"
    n: int = 2
    k: int = 2
    domain: str = "cap"  # "cap": level sets of the cap subsolution; "disk": same family fitted to radius R
    R1: float = 1.0
    sigma: float = 0.5
    R: float | None = None
    psi: str | None = None  # default: alpha*u^2 of the cap family
    h: float = 1 / 64
    eps0: float = 0.1
    eps_levels: list[float] = field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025])
    monitor_levels: list[float] = field(default_factory=list)
    monitor_b: float = 2.0
    monitor_beta: float = 1.0
    ma_path: bool | None = None
    out_dir: str = "out"

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if self.mode not in ("solve", "verify", "oracle-test"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.n != 2:
            raise ConfigError("the grid solver supports n = 2 only")
        if not 1 <= self.k <= self.n:
            raise ConfigError(f"need 1 <= k <= n, got k={self.k}")
        if not self.h > 0:
            raise ConfigError("h must be positive")
        if self.domain not in ("cap", "disk"):
            raise ConfigError(f"unknown domain {self.domain!r}")
        if self.domain == "disk" and not (self.R and self.R > 0):
            raise ConfigError("domain 'disk' needs R > 0")
        if not (self.R1 > 0 and 0 < self.sigma < 1):
            raise ConfigError("need R1 > 0 and 0 < sigma < 1")
        try:
            ContinuationSchedule(self.eps0, self.eps_levels)
            if self.monitor_levels:
                ContinuationSchedule(self.eps0, list(self.eps_levels) + list(self.monitor_levels))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        psi = self.rhs()
        orc = self.oracle()
        x = np.zeros((64, 2))
        t = np.linspace(0, 2 * np.pi, 64, endpoint=False)
        x[:, 0], x[:, 1] = 0.5 * orc.rho * np.cos(t), 0.5 * orc.rho * np.sin(t)
        u = np.linspace(min(self.eps_levels), orc.R1 * (1 - orc.sigma), 64)
        try:
            psi.check_positive(x, u)
        except EvaluationError as exc:
            raise ConfigError(str(exc)) from None

    def oracle(self, grid: GridField | None = None) -> verify.CapOracle:
        R1 = self.R1 if self.domain == "cap" else self.R / math.sqrt(1 - self.sigma**2)
        return verify.cap_oracle(R1, self.sigma, grid, n=self.n, k=self.k)

    def rhs(self) -> RhsSpec:
        text = self.psi if self.psi is not None else self.oracle().psi_text
        return RhsSpec(text, self.n)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(exc.msg, exc.lineno, exc.colno) from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object", 1, 1)
        known = {f.name for f in fields(cls)}
        extra = sorted(set(data) - known)
        if extra:
            raise ConfigError(f"unknown config key(s): {', '.join(extra)}")
        for key, val in data.items():
            if isinstance(val, dict):
                raise ConfigError(f"config must be flat; key {key!r} holds an object")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


# serialization ---------------------------------------------------------------


def fmt(v: float) -> str:
    return format(float(v), ".16e")


def field_csv(u: GridField) -> str:
    """Row-major node dump; outside nodes are written as nan."""
    P = u.points()
    nx, ny = u.dims
    mask = u.mask if u.mask is not None else np.ones(u.dims, dtype=np.int8)
    lines = [CSV_HEADER]
    for i in range(nx):
        for j in range(ny):
            lines.append(f"{i},{j},{fmt(P[i, j, 0])},{fmt(P[i, j, 1])},{int(mask[i, j])},{fmt(u.values[i, j])}")
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _json(obj) -> str:
    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.bool_):
            return bool(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(f"not serializable: {type(o).__name__}")

    return json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n"


# modes -----------------------------------------------------------------------


def _solve(cfg: ExperimentConfig, levels: list[float]) -> tuple[verify.CapOracle, list[Solution], bool]:
    grid = make_grid(1.05 * cfg.oracle().rho, cfg.h)
    orc = cfg.oracle(grid)
    sched = ContinuationSchedule(cfg.eps0, levels)
    run, ok = continuation_solve(orc.ubar, cfg.rhs(), cfg.k, sched, orc.ubar_fn, NewtonConfig(ma_path=cfg.ma_path))
    return orc, run, ok


def _emit_run(run: list[Solution], out: Path, tag: str = "solution") -> list[dict]:
    reports = []
    for m, s in enumerate(run):
        _write(out / f"{tag}_eps{m}.csv", field_csv(s.u))
        reports.append({"eps": s.eps, **s.report.to_dict()})
    return reports


def run_solve(cfg: ExperimentConfig, out: Path) -> int:
    orc, run, ok = _solve(cfg, list(cfg.eps_levels))
    reports = _emit_run(run, out)
    _write(out / "newton_reports.json", _json({"config": asdict(cfg), "converged": ok, "levels": reports}))
    print(f"solved {len(run)} level(s); all converged: {ok}")
    return EXIT_OK if ok else EXIT_NUMERIC


def run_verify(cfg: ExperimentConfig, out: Path) -> int:
    levels = list(cfg.eps_levels) + list(cfg.monitor_levels)
    orc, run, ok = _solve(cfg, levels)
    reports = _emit_run(run, out)
    result: dict = {"config": asdict(cfg), "converged": ok, "levels": reports}
    if not ok:
        _write(out / "verify_report.json", _json(result))
        print("continuation failed; see verify_report.json")
        return EXIT_NUMERIC
    psi = cfg.rhs()
    barriers = verify.upper_barriers(orc.ubar, orc.ubar_fn)
    base = run[: len(cfg.eps_levels)]
    sub = subsolution_check(orc.ubar, psi, cfg.k)
    order = [asdict(verify.ordering_check(orc.ubar, s.u, barriers[1])) | {"eps": s.eps} for s in run]
    # the table covers the whole family, so its last three rows are the finest levels
    table = verify.uniform_estimate_table(run, orc.ubar, cfg.eps0, cfg.k)
    _write(out / "estimate_table.csv", table.to_csv())
    result.update(
        subsolution=asdict(sub),
        ordering=order,
        estimate_table=table.to_dict(),
    )
    passed = sub.passed and all(o["lower_ok"] and o["upper_ok"] for o in order) and table.all_passed
    mon_run = run[len(cfg.eps_levels) :] if cfg.monitor_levels else base
    try:
        fm = verify.family_monitors(
            mon_run,
            orc.ubar,
            cfg.eps0,
            cfg.k,
            verify.MonitorConfig(b=cfg.monitor_b, beta=cfg.monitor_beta),
            orc.ubar_fn,
            barriers,
        )
        result["monitors"] = {"config": asdict(fm.cfg), "rows": [asdict(r) for r in fm.rows]}
        cols = ["curvature_monitor"] + (["ma_monitor"] if cfg.k == cfg.n else [])
        result["monitor_stable"] = {c: fm.stable(c) for c in cols}
        passed = passed and all(result["monitor_stable"].values())
    except (ConfigurationError, verify.DomainConstructionError, verify.MonitorMarginError) as exc:
        result["monitors"] = {"error": f"{type(exc).__name__}: {exc}"}
        passed = False
    result["passed"] = passed
    _write(out / "verify_report.json", _json(result))
    print(table.to_csv(), end="")
    print(f"verification {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if passed else EXIT_NUMERIC


def oracle_suite(h: float = 1 / 32) -> list[tuple[str, bool, float, float]]:
    """Cap and hemisphere checks: (name, passed, value, threshold)."""
    rows = []
    orc = verify.cap_oracle(1.0, 0.5)
    rng = np.random.default_rng(0)
    r = orc.rho * np.sqrt(rng.uniform(0, 0.9, 200))
    t = rng.uniform(0, 2 * np.pi, 200)
    P = np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
    kv = graphgeom.curvature_spectrum(orc.v_jet(P), 2).kappa
    rows.append(("hemisphere curvature = 0", float(np.max(np.abs(kv))), 1e-10))
    ku = graphgeom.curvature_spectrum(orc.ubar_jet(P), 2).kappa
    rows.append(("cap curvature = sigma", float(np.max(np.abs(ku - orc.sigma))), 1e-10))
    jet = orc.ubar_jet(P)
    mj = transform.to_ma(jet)
    f = symfunc.f_value(graphgeom.curvature_spectrum(jet, 2).kappa, 2)
    Psi = 2.0**2 * transform.gradient_ratio(mj.x, mj.U, mj.dU)[0] ** 2 * f**2
    det = np.linalg.det(mj.d2U)
    rows.append(("det D2U = Psi on cap jets", float(np.max(np.abs(det - Psi) / np.abs(Psi))), 1e-9))
    grid = make_grid(1.0, h)
    for k, label in ((1, "exact solve k=1"), (2, "exact solve k=2 (MA)")):
        o = verify.cap_oracle(1.0, 0.5, grid, k=k)
        dom = level_set_domain(o.ubar, 0.05, o.ubar_fn)
        u, rep, _ = newton_solve(o.ubar.with_values(o.ubar.values, dom.mask), dom, RhsSpec(o.psi_const_text), k)
        err = float(np.max(np.abs(np.where(dom.mask == 1, u.values - o.ubar.values, 0.0)))) if rep.converged else math.inf
        rows.append((label + f" h={h:g}", err, 5e-3))
    o = verify.cap_oracle(1.0, 0.5, grid)
    V, v = verify.upper_barriers(o.ubar, o.ubar_fn)
    sel = np.isfinite(V.values)
    rows.append(("envelope V = rho^2 on the disk", float(np.max(np.abs(V.values[sel] - o.rho**2))), 1e-12))
    sub = subsolution_check(o.ubar, RhsSpec(o.psi_text), 2, jet_fn=o.ubar_jet, allowance=1e-12)
    rows.append(("cap is a subsolution (analytic jets)", -sub.min_margin, 1e-12))
    return [(name, bool(val <= thr), val, thr) for name, val, thr in rows]


def run_oracle_test(cfg: ExperimentConfig, out: Path | None) -> int:
    rows = oracle_suite(min(cfg.h, 1 / 32))
    width = max(len(r[0]) for r in rows)
    for name, ok, val, thr in rows:
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {val:.3e} <= {thr:.0e}")
    if out is not None:
        _write(out / "oracle_test.json", _json([{"name": n, "passed": p, "value": v, "threshold": t} for n, p, v, t in rows]))
    return EXIT_OK if all(r[1] for r in rows) else EXIT_NUMERIC


def run_parse_check(text: str) -> int:
    node = expr.parse(text)
    printed = expr.to_string(node)
    again = expr.parse(printed)
    print(f"psi      = {printed}")
    print(f"psi_u    = {expr.to_string(expr.differentiate(node, 'u'))}")
    for i in (1, 2):
        print(f"psi_x{i}   = {expr.to_string(expr.differentiate(node, f'x{i}'))}")
    print(f"round trip: {'ok' if again == node else 'MISMATCH'}")
    return EXIT_OK if again == node else EXIT_NUMERIC


# entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hyperplateau", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("solve", "verify", "oracle-test"):
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="flat JSON experiment config")
        s.add_argument("--out", type=Path, help="output directory (overrides out_dir)")
        s.add_argument("--eps-levels", type=int, metavar="N", help="use N halving levels from the first eps level")
        s.add_argument("--grid", type=float, metavar="H", help="grid spacing (overrides h)")
    pc = sub.add_parser("parse-check")
    pc.add_argument("expression", nargs="?", help="psi text (default: psi from --config)")
    pc.add_argument("--config", type=Path)
    return p


def _error(kind: str, exc: Exception, line=None, column=None) -> None:
    payload = {"error": kind, "message": getattr(exc, "message", str(exc))}
    if line is not None:
        payload["line"], payload["column"] = line, column
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def _load(args) -> ExperimentConfig:
    if getattr(args, "config", None) is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        cfg = ExperimentConfig.from_json(text)
    else:
        cfg = ExperimentConfig()
    if getattr(args, "grid", None) is not None:
        cfg.h = args.grid
    if getattr(args, "eps_levels", None) is not None:
        if args.eps_levels < 1:
            raise ConfigError("--eps-levels must be >= 1")
        first = cfg.eps_levels[0]
        cfg.eps_levels = [first / 2**m for m in range(args.eps_levels)]
    if getattr(args, "command", None) in ("solve", "verify", "oracle-test"):
        cfg.mode = args.command
    return cfg


def _thread_cap():
    raw = os.environ.get("HYPERPLATEAU_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"HYPERPLATEAU_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("HYPERPLATEAU_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("HYPERPLATEAU_LOG", "WARNING"))
    args = build_parser().parse_args(argv)
    try:
        limiter = _thread_cap()
        cfg = _load(args)
        if args.command == "parse-check":
            text = args.expression if args.expression is not None else cfg.rhs().text
            return run_parse_check(text)
        cfg.validate()
        out = Path(args.out) if args.out is not None else Path(cfg.out_dir)
        try:
            if args.command == "solve":
                return run_solve(cfg, out)
            if args.command == "verify":
                return run_verify(cfg, out)
            return run_oracle_test(cfg, out)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except ParseError as exc:
        _error("parse", exc, exc.line, exc.column)
        return EXIT_CONFIG
    except ConfigError as exc:
        _error("config", exc, exc.line, exc.column)
        return EXIT_CONFIG
    except (ConfigurationError, TypeError) as exc:
        _error("config", exc)
        return EXIT_CONFIG
    except Exception as exc:  # numerical failures surface as exit 1 with a record
        _error(type(exc).__name__, exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
