"""Shared test utilities: random toy feeders, a brute-force MILP oracle and a structural checker."""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import linprog

from mpbs.feeder import Feeder, feeder_from_dict, scenario_from_dict
from mpbs.milp import extract_plan, schedule_key
from mpbs.milp.instance import MilpInstance
from mpbs.solver import solve_embedded

KV_LN = 4.16 / math.sqrt(3)
HUGE = 1e6


def toy_case(rng: np.random.Generator, steps: int = 2):
    """Three blocks (star or chain) behind one GFMI with random loads and ratings."""
    star = rng.random() < 0.5
    second = ("a", "c") if star else ("b", "c")
    r, x = rng.uniform(0.05, 0.5), rng.uniform(0.1, 1.0)
    d = {
        "name": "toy",
        "base": {"kv_ln": KV_LN, "f_nom": 60.0},
        "buses": [{"id": b} for b in "Gabc"],
        "edges": [
            {"id": "L_Ga", "from": "G", "to": "a", "r": r, "x": x},
            {"id": "E1", "from": "a", "to": "b", "kind": "esw"},
            {"id": "E2", "from": second[0], "to": second[1], "kind": "esw"},
        ],
        "blocks": [{"id": "B0", "buses": ["G", "a"]}, {"id": "B1", "buses": ["b"]}, {"id": "B2", "buses": ["c"]}],
        "laterals": [{"id": "LAT1", "block": "B1", "buses": ["b"]}, {"id": "LAT2", "block": "B2", "buses": ["c"]}],
        "transformers": [
            {"id": "DT1", "bus": "b", "phase": "A", "kva": 25},
            {"id": "DT2", "bus": "c", "phase": "B", "kva": 25},
        ],
        "protection": [
            {"id": "F1", "kind": "fuse", "location": "LAT1", "threshold": HUGE},
            {"id": "F2", "kind": "fuse", "location": "LAT2", "threshold": HUGE},
            {"id": "R", "kind": "recloser", "location": "G", "threshold": HUGE},
        ],
        "devices": {
            "bess": [
                {
                    "bus": "G",
                    "s_nom": float(rng.uniform(300, 700)),
                    "e_nom": float(rng.uniform(300, 1000)),
                    "soc_init": float(rng.uniform(0.3, 1.0)),
                }
            ]
        },
    }
    loads = {}
    for b in "abc":
        cls = "NL" if b == "c" and rng.random() < 0.5 else "CL"
        loads[b] = {"class": cls, "p": {p: float(rng.uniform(5, 60)) for p in "ABC"}}
    sc = {"dt_min": 15, "steps": steps, "start": "09:00", "pv_rate": 0.0, "tg_available": False, "loads": loads}
    return feeder_from_dict(d), scenario_from_dict(sc)


def _lp_fixed(inst: MilpInstance, z: np.ndarray):
    bi = np.flatnonzero(inst.binary)
    lb, ub = inst.lb.astype(float).copy(), inst.ub.astype(float).copy()
    lb[bi] = ub[bi] = z
    A = inst.A.tocsr()
    le, ge, eq = inst.sense == "<", inst.sense == ">", inst.sense == "="
    a_ub = None
    b_ub = None
    if le.any() or ge.any():
        import scipy.sparse as sp

        a_ub = sp.vstack([A[le], -A[ge]]).tocsr()
        b_ub = np.concatenate([inst.rhs[le], -inst.rhs[ge]])
    res = linprog(
        -inst.c,
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=A[eq] if eq.any() else None,
        b_eq=inst.rhs[eq] if eq.any() else None,
        bounds=list(zip(lb, ub)),
        method="highs",
    )
    if res.status != 0:
        return None
    return res.x


def enumerate_optimum(inst: MilpInstance, feeder: Feeder, state, rtol: float = 1e-7):
    """Best objective and the set of optimal schedules, by exhaustive search over the binaries."""
    bi = np.flatnonzero(inst.binary)
    if bi.size > 16:
        raise ValueError("too many binaries to enumerate")
    A = inst.A.tocsc()
    other = np.setdiff1d(np.arange(inst.n_vars), bi)
    touches_other = np.asarray(abs(A[:, other]).sum(axis=1)).ravel() > 0
    pure = np.flatnonzero(~touches_other)
    Ab = A[pure][:, bi].toarray()
    results = []
    for bits in itertools.product((0.0, 1.0), repeat=bi.size):
        z = np.array(bits)
        if np.any(z < inst.lb[bi]) or np.any(z > inst.ub[bi]):
            continue
        if pure.size:
            ax = Ab @ z
            s, r = inst.sense[pure], inst.rhs[pure]
            if np.any((s == "<") & (ax > r + 1e-9)) or np.any((s == ">") & (ax < r - 1e-9)) or np.any(
                (s == "=") & (np.abs(ax - r) > 1e-9)
            ):
                continue
        x = _lp_fixed(inst, z)
        if x is not None:
            results.append((inst.objective(x), x))
    if not results:
        return None, set()
    best = max(v for v, _ in results)
    tol = rtol * max(1.0, abs(best))
    keys = {schedule_key(extract_plan(inst, x, feeder, state)) for v, x in results if v >= best - tol}
    return best, keys


def solve_and_compare(inst: MilpInstance, feeder: Feeder, state) -> tuple[bool, str]:
    sol = solve_embedded(inst)
    best, keys = enumerate_optimum(inst, feeder, state)
    if best is None:
        return (not sol.ok), "both infeasible" if not sol.ok else "solver found a point, enumeration none"
    if not sol.ok:
        return False, f"solver {sol.status}, enumeration {best:.6f}"
    plan = extract_plan(inst, sol.x, feeder, state)
    if abs(plan.objective - best) > 1e-6 * max(1.0, abs(best)):
        return False, f"objective {plan.objective:.8f} vs enumeration {best:.8f}"
    if schedule_key(plan) not in keys:
        return False, "schedule not among the enumerated optima"
    return True, f"objective {best:.6f}, {len(keys)} optimal schedule(s)"


# --------------------------------------------------------------------------
# structural checks on a solved window


def _val(inst, x, name, default=0.0):
    j = inst.index.get(name)
    return default if j is None else float(x[j])


def structural_violations(inst: MilpInstance, x: np.ndarray, feeder: Feeder) -> list[str]:
    """Radiality identity, acyclicity, monotone flags and one closure per dark block per step."""
    g = feeder.graph
    T = int(inst.meta["T"])
    out = []

    def on(name, default=0.0):
        return _val(inst, x, name, default) > 0.5

    def prev_on(sym, elem, t):
        if t > 1:
            return on(f"{sym}:{elem}::{t - 1}")
        j = inst.index.get(f"{sym}:{elem}::1")
        return j is not None and inst.lb[j] > 0.5

    for t in range(1, T + 1):
        blocks = {b.id for b in g.blocks if on(f"uBB:{b.id}::{t}")}
        closed = {e.id for e in g.esws if on(f"uESW:{e.id}::{t}")} | {e.id for e in g.ssws if on(f"uSSW:{e.id}::{t}")}
        edges = [e for e in g.edges if (e.kind == "line" and g.block_of_bus[e.from_bus] in blocks) or e.id in closed]
        buses = {b for blk in blocks for b in g.block[blk].buses}
        buses |= {b for b in g.tg_buses if on(f"uB:{b}::{t}")}
        r = _val(inst, x, f"R:::{t}")
        if abs(r - round(r)) > 1e-6 or len(edges) != len(buses) - int(round(r)):
            out.append(f"t={t}: {len(edges)} edges, {len(buses)} buses, R={r:g}")
        parent = {b: b for b in buses}

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for e in edges:
            if e.from_bus not in parent or e.to_bus not in parent:
                out.append(f"t={t}: edge {e.id} touches a dark bus")
                continue
            ra, rb = find(e.from_bus), find(e.to_bus)
            if ra == rb:
                out.append(f"t={t}: cycle through {e.id}")
            parent[ra] = rb
        for sym, elems in (
            ("uBB", [b.id for b in g.blocks]),
            ("uESW", [e.id for e in g.esws]),
            ("uSSW", [e.id for e in g.ssws]),
            ("w", [n.split(":")[1] for n in inst.names if n.startswith("w:") and n.endswith(f"::{t}")]),
        ):
            for el in elems:
                if prev_on(sym, el, t) and not on(f"{sym}:{el}::{t}"):
                    out.append(f"t={t}: {sym} {el} switched off")
        for blk in g.blocks:
            if prev_on("uBB", blk.id, t):
                continue
            new = [e.id for e in g.block_esws(blk.id) if on(f"uESW:{e.id}::{t}") and not prev_on("uESW", e.id, t)]
            if len(new) > 1:
                out.append(f"t={t}: block {blk.id} picked up through {new}")
    return out


class CheckedSolver:
    """Wraps a solve function and records structural violations of every solution."""

    def __init__(self, feeder: Feeder, inner=None):
        self.feeder = feeder
        self.inner = inner or solve_embedded
        self.solved = 0
        self.violations: list[str] = []

    def __call__(self, inst):
        sol = self.inner(inst)
        if sol.ok:
            self.solved += 1
            self.violations += structural_violations(inst, sol.x, self.feeder)
        return sol
