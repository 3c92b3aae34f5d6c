"""Sup error against the exact cap on the eps = 0.05 level set, both solver paths."""

import argparse

import numpy as np

from hyperplateau import solver as sv
from hyperplateau import verify
from hyperplateau.domain import ACTIVE, level_set_domain, make_grid
from hyperplateau.expr import RhsSpec


def cap_error(h, k, eps, order):
    grid = make_grid(1.0, h)
    orc = verify.cap_oracle(1.0, 0.5, grid, k=k)
    dom = level_set_domain(orc.ubar, eps, orc.ubar_fn, order=order)
    init = orc.ubar.with_values(orc.ubar.values * 0.9 + 0.005, dom.mask)
    u, rep, _ = sv.newton_solve(init, dom, RhsSpec(orc.psi_const_text), k)
    act = dom.mask == ACTIVE
    return float(np.max(np.abs(u.values - orc.ubar.values)[act])), rep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", type=int, default=4, help="grids h = 1/32, 1/64, ...")
    ap.add_argument("--eps", type=float, default=0.05)
    ap.add_argument("--order", type=int, default=3, help="boundary transfer order (1, 2, 3)")
    args = ap.parse_args()
    hs = [1 / (32 * 2**m) for m in range(args.levels)]
    for k, path in ((1, "curvature"), (2, "ma")):
        prev = None
        print(f"k={k} ({path} path)")
        print("h,sup_err,ratio,iterations")
        for h in hs:
            err, rep = cap_error(h, k, args.eps, args.order)
            ratio = prev / err if prev else float("nan")
            print(f"{h:.6g},{err:.4e},{ratio:.3f},{rep.iterations}")
            prev = err


if __name__ == "__main__":
    main()
