#!/usr/bin/env python3
"""External MILP backend: ``highs_solve.py <instance.mps> <solution.txt>``.

Reads the MPS file and solves it with HiGHS through scipy.optimize.milp,
then writes one ``name value`` pair per line.
"""
import sys
import time

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from mpbs.mpsio import read_mps, write_solution


def main(argv):
    if len(argv) != 3:
        print(__doc__, file=sys.stderr)
        return 2
    inst = read_mps(argv[1])
    lo = np.where(inst.sense == ">", inst.rhs, np.where(inst.sense == "=", inst.rhs, -np.inf))
    hi = np.where(inst.sense == "<", inst.rhs, np.where(inst.sense == "=", inst.rhs, np.inf))
    t0 = time.perf_counter()

    def attempt(presolve):
        return milp(
            -inst.c,
            constraints=[LinearConstraint(inst.A, lo, hi)] if inst.n_rows else [],
            integrality=inst.binary.astype(int),
            bounds=Bounds(inst.lb, inst.ub),
            options={"mip_rel_gap": 1e-7, "time_limit": 3600.0, "presolve": presolve},
        )

    res = attempt(True)
    if res.status == 2:
        # presolve occasionally declares badly scaled windows infeasible; confirm without it
        print("highs: presolve reports infeasible, retrying without presolve", file=sys.stderr)
        res = attempt(False)
    print(f"highs: status {res.status} ({res.message}) in {time.perf_counter() - t0:.2f}s", file=sys.stderr)
    if res.status == 2 or res.x is None:
        write_solution(argv[2], [], [], status="infeasible" if res.status == 2 else "iteration-limit")
        return 0
    x = np.asarray(res.x)
    x[inst.binary] = np.round(x[inst.binary])
    write_solution(argv[2], inst.names, x, status="optimal" if res.status == 0 else "iteration-limit", objective=inst.objective(x))
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
