"""Deterministic branch and bound over LP relaxations, plus an external backend.

LP relaxations use scipy's HiGHS simplex.  Nodes are explored best-bound
first (ties by creation order); the branching variable is the most
fractional binary, ties to the lowest column index.
"""
from __future__ import annotations

import heapq
import logging
import math
import os
import shlex
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .config import SolverOptions
from .milp.instance import MilpInstance
from .mpsio import read_solution, write_mps

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass
class Solution:
    status: str  # optimal | infeasible | iteration-limit
    x: np.ndarray | None
    objective: float
    nodes: int = 0
    gap: float = 0.0
    bound: float = math.nan
    names: list[str] = field(default_factory=list)
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "optimal" and self.x is not None

    def value(self, name: str) -> float:
        return float(self.x[self.names.index(name)])

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.x)}


class LpRelaxation:
    """Row data converted once; each solve only changes column bounds."""

    def __init__(self, inst: MilpInstance):
        A = inst.A.tocsr()
        le = inst.sense == "<"
        ge = inst.sense == ">"
        eq = inst.sense == "="
        ub_rows = sp.vstack([A[le], -A[ge]]).tocsr() if (le.any() or ge.any()) else None
        self.A_ub = ub_rows
        self.b_ub = np.concatenate([inst.rhs[le], -inst.rhs[ge]]) if ub_rows is not None else None
        self.A_eq = A[eq] if eq.any() else None
        self.b_eq = inst.rhs[eq] if eq.any() else None
        self.c = -inst.c
        self.n = inst.n_vars

    def solve(self, lb: np.ndarray, ub: np.ndarray, method: str = "highs-ds"):
        """Returns (status, x, value) with status in ok | infeasible | unbounded."""
        if np.any(lb > ub + 1e-12):
            return "infeasible", None, -math.inf
        bounds = np.column_stack([lb, ub])
        opts = {"primal_feasibility_tolerance": 1e-9, "dual_feasibility_tolerance": 1e-9, "presolve": True}
        res = linprog(self.c, self.A_ub, self.b_ub, self.A_eq, self.b_eq, bounds=bounds, method=method, options=opts)
        if res.status == 4 and method != "highs-ipm":  # numerical trouble: retry once with interior point
            log.warning("simplex reported numerical difficulties; retrying with interior point")
            return self.solve(lb, ub, method="highs-ipm")
        if res.status == 2:
            return "infeasible", None, -math.inf
        if res.status == 3:
            return "unbounded", None, math.inf
        if res.status != 0:
            raise SolverError(f"LP relaxation failed: {res.message}")
        return "ok", np.asarray(res.x, dtype=float), -float(res.fun)


def _fix_and_polish(lp: LpRelaxation, inst: MilpInstance, lb, ub, x, tol):
    """Round binaries of ``x``, fix them, re-solve the LP; returns (x, value) or None."""
    bi = inst.binary
    r = np.round(x[bi])
    lb2, ub2 = lb.copy(), ub.copy()
    if np.any(r < lb[bi] - tol) or np.any(r > ub[bi] + tol):
        return None
    lb2[bi] = r
    ub2[bi] = r
    st, xx, val = lp.solve(lb2, ub2)
    if st != "ok":
        return None
    xx = xx.copy()
    xx[bi] = r
    return xx, val


def solve_embedded(inst: MilpInstance, opts: SolverOptions | None = None) -> Solution:
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    lp = LpRelaxation(inst)
    bi = np.flatnonzero(inst.binary)
    tol = opts.int_tol
    lb0, ub0 = inst.lb.astype(float).copy(), inst.ub.astype(float).copy()

    st, x, val = lp.solve(lb0, ub0)
    if st == "infeasible":
        return Solution("infeasible", None, -math.inf, 1, math.inf, names=inst.names, message="root LP infeasible")
    if st == "unbounded":
        raise SolverError("LP relaxation is unbounded (malformed instance)")

    best_x, best_val = None, -math.inf
    counter = 0
    heap = [(-val, counter, lb0, ub0, x)]
    nodes = 1
    status = "optimal"
    root_bound = val

    def gap_ok(bound):
        return best_x is not None and bound - best_val <= opts.gap * max(1.0, abs(best_val))

    while heap:
        negb, _, lb, ub, x = heapq.heappop(heap)
        bound = -negb
        if gap_ok(bound):
            heap.clear()
            break
        frac = np.abs(x[bi] - np.round(x[bi]))
        if frac.size == 0 or frac.max() <= tol:
            pol = _fix_and_polish(lp, inst, lb, ub, x, tol) if bi.size else (x, bound)
            if pol is not None and pol[1] > best_val:
                best_x, best_val = pol
            continue
        if best_x is None or nodes % 25 == 0:
            pol = _fix_and_polish(lp, inst, lb, ub, x, tol)
            if pol is not None and pol[1] > best_val:
                best_x, best_val = pol
                if gap_ok(bound):
                    heap.clear()
                    break
        dist = np.minimum(x[bi] - np.floor(x[bi]), np.ceil(x[bi]) - x[bi])
        j = int(bi[int(np.argmax(dist))])  # first maximum = lowest column index
        for fixv in (0.0, 1.0):
            lb2, ub2 = lb.copy(), ub.copy()
            lb2[j] = ub2[j] = fixv
            cst, cx, cval = lp.solve(lb2, ub2)
            nodes += 1
            if cst == "ok" and cval > best_val:
                counter += 1
                heapq.heappush(heap, (-cval, counter, lb2, ub2, cx))
        if nodes >= opts.node_limit or time.perf_counter() - t0 > opts.time_limit:
            status = "iteration-limit"
            break

    open_bound = max((-h[0] for h in heap), default=-math.inf)
    if best_x is None:
        if status == "iteration-limit":
            return Solution(status, None, -math.inf, nodes, math.inf, open_bound, inst.names, "no incumbent before limit")
        return Solution("infeasible", None, -math.inf, nodes, math.inf, root_bound, inst.names, "no integer-feasible point")
    bound = max(open_bound, best_val)
    gap = (bound - best_val) / max(1.0, abs(best_val))
    if status == "iteration-limit" and gap <= opts.gap:
        status = "optimal"
    x = best_x
    obj = inst.objective(x)
    viol = inst.max_violation(x)
    if viol > 1e-6:
        raise SolverError(f"incumbent violates constraints by {viol:.3g}")
    log.debug("B&B: %d nodes, obj %.6f, gap %.2e, %.2fs", nodes, obj, gap, time.perf_counter() - t0)
    return Solution(status, x, obj, nodes, gap, bound + inst.obj_const, inst.names)


def lp_relaxation_value(inst: MilpInstance) -> float:
    st, _, val = LpRelaxation(inst).solve(inst.lb.astype(float), inst.ub.astype(float))
    if st != "ok":
        return -math.inf if st == "infeasible" else math.inf
    return val + inst.obj_const


# --------------------------------------------------------------------------
# external


def import_solution(path: str | Path, inst: MilpInstance, tol: float = 1e-6, strict: bool = False) -> Solution:
    """Read a ``name value`` file into a Solution for ``inst``.

    Unknown names raise; missing names are taken as zero unless ``strict``.
    """
    vals, head = read_solution(path)
    unknown = sorted(set(vals) - set(inst.index))
    if unknown:
        raise SolverError(f"solution names not in instance: {unknown[:5]}")
    status = head.get("status", "optimal").lower()
    if status not in ("optimal", "infeasible", "iteration-limit"):
        status = "iteration-limit"
    if status == "infeasible":
        return Solution("infeasible", None, -math.inf, names=inst.names, message=head.get("message", ""))
    missing = [n for n in inst.names if n not in vals]
    if missing and strict:
        raise SolverError(f"solution lacks {len(missing)} variables, e.g. {missing[0]}")
    x = np.array([vals.get(n, 0.0) for n in inst.names])
    bi = inst.binary
    frac = np.abs(x[bi] - np.round(x[bi]))
    if frac.size and frac.max() > tol:
        j = np.flatnonzero(bi)[int(np.argmax(frac))]
        raise SolverError(f"imported binary {inst.names[j]} = {x[j]} is not integral")
    x[bi] = np.round(x[bi])
    return Solution(status, x, inst.objective(x), names=inst.names)


def _external_command(path: str) -> list[str]:
    parts = shlex.split(path)
    if parts and parts[0].endswith(".py"):
        return [sys.executable, *parts]
    return parts


def solve_external(inst: MilpInstance, command: str, opts: SolverOptions | None = None, workdir: str | Path | None = None) -> Solution:
    """Run ``<command> <instance.mps> <solution.txt>`` and import the result."""
    opts = opts or SolverOptions()
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        mps = Path(tmp) / "instance.mps"
        sol = Path(tmp) / "solution.txt"
        size = write_mps(inst, mps)
        log.info("exported %d rows x %d cols (%d bytes)", inst.n_rows, inst.n_vars, size)
        cmd = _external_command(command) + [str(mps), str(sol)]
        try:
            proc = subprocess.run(cmd, capture_output=True, text=True, timeout=opts.time_limit + 30)
        except FileNotFoundError as exc:
            raise SolverError(f"external solver not found: {command}") from exc
        except subprocess.TimeoutExpired as exc:
            raise SolverError("external solver timed out") from exc
        if proc.returncode != 0 or not sol.exists():
            raise SolverError(f"external solver failed ({proc.returncode}): {proc.stderr.strip()[-500:]}")
        out = import_solution(sol, inst, opts.int_tol)
    if out.x is not None:
        viol = inst.max_violation(out.x)
        if viol > 1e-5:
            raise SolverError(f"external solution violates constraints by {viol:.3g}")
    return out


def backend_from_env(default: str = "embedded") -> str:
    env = os.environ.get("MPBS_EXTERNAL_SOLVER")
    return f"external:{env}" if env else default


def solve(inst: MilpInstance, opts: SolverOptions | None = None) -> Solution:
    opts = opts or SolverOptions()
    backend = opts.backend
    if backend == "embedded":
        return solve_embedded(inst, opts)
    if backend.startswith("external:"):
        return solve_external(inst, backend.split(":", 1)[1], opts)
    raise ValueError(f"unknown solver backend {backend!r}")
