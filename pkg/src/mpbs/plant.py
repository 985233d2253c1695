"""Plant update after executing the first step of a plan.

Voltages come from the linear branch-flow equalities on each energized
island, with one reference source fixing the voltage (TG if present, else
the largest GFMI).  Other GFMIs inject their planned power.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .config import MilpConfig
from .feeder import PHASE_INDEX, PHASES, Feeder, Scenario
from .milp.build import clpu_weights, drop_scale, effective_rx, zip_coefficients
from .milp.plan import Actions, StepPlan
from .state import SystemState, microgrid_roots

log = logging.getLogger(__name__)


@dataclass
class PlantReport:
    p_source: dict[str, np.ndarray] = field(default_factory=dict)  # per source bus, per-phase kW
    q_source: dict[str, np.ndarray] = field(default_factory=dict)
    load_kw: dict[str, float] = field(default_factory=lambda: {"CL": 0.0, "NL": 0.0})
    pv_kw: float = 0.0
    violations: list[str] = field(default_factory=list)
    islands: dict[str, list[str]] = field(default_factory=dict)


def clpu_multiplier(hist: list[int], beta) -> float:
    """Staircase multiplier for the latest entry of an on/off history."""
    w = clpu_weights(beta)
    out = 0.0
    for lag, coef in enumerate(w):
        k = len(hist) - 1 - lag
        out += coef * (hist[k] if k >= 0 else 0)
    return out


def _advance_flags(feeder: Feeder, state: SystemState, plan: StepPlan, actions: Actions) -> SystemState:
    g = feeder.graph
    new = state.copy()
    for blk in g.blocks:
        on = state.block_on(blk.id) or blk.id in actions.blocks
        new.block_hist[blk.id].append(int(on))
    for e in actions.esws:
        new.esw_closed[e] = True
    for e in actions.ssws:
        new.ssw_closed[e] = True
    for b in actions.tg:
        new.tg_on[b] = True
    for b in new.w_hist:
        on = state.w_on(b) or b in actions.nl
        new.w_hist[b].append(int(on))
    new.t = state.t + 1
    return new


def plant_apply(
    feeder: Feeder,
    scenario: Scenario,
    state: SystemState,
    plan: StepPlan | None,
    actions: Actions,
    cfg: MilpConfig | None = None,
) -> tuple[SystemState, PlantReport]:
    """Execute ``actions`` at scenario step ``state.t`` and return the next state."""
    cfg = cfg or MilpConfig()
    g = feeder.graph
    t = state.t
    new = _advance_flags(feeder, state, plan, actions)
    rep = PlantReport()

    on = {b.id: new.block_on(b.id) for b in g.blocks}
    closed = {e for e, c in new.esw_closed.items() if c} | {e for e, c in new.ssw_closed.items() if c}
    roots = microgrid_roots(feeder, on, closed, new.tg_on, through_ssw=True)
    islands: dict[str, list[str]] = {}
    for node, root in roots.items():
        islands.setdefault(root, []).append(node)
    rep.islands = {k: sorted(v) for k, v in islands.items()}

    kz, ki, kp = scenario.zip
    tan = scenario.load_tan
    dt_h = scenario.dt_h
    s = drop_scale(g.kv_ln)
    bess = {d.bus: d for d in feeder.devices.bess}
    pv = {d.bus: d for d in feeder.devices.pv}
    tg = {d.bus: d for d in feeder.devices.tg}
    new_v = {k: 0.0 for k in state.v}
    p_total = {b: 0.0 for b in bess}
    reduced = {gf: r for gf, r in state.reduction.items() if r.until is None or r.until >= t}
    reduced.update({gf: r for gf, r in new.reduction.items() if r.until is None or r.until >= t})

    for root, nodes in sorted(islands.items()):
        buses = []
        for n in nodes:
            if n in g.block:
                buses.extend(g.block[n].buses)
            else:
                buses.append(n)
        bset = set(buses)
        edges = [e for e in g.edges if e.from_bus in bset and e.to_bus in bset and (e.kind == "line" or e.id in closed)]
        srcs_tg = sorted(b for b in bset if b in tg and new.tg_on[b])
        srcs_gf = sorted((b for b in bset if b in bess), key=lambda b: (-bess[b].s_nom, b))
        slack = srcs_tg[0] if srcs_tg else srcs_gf[0]
        if slack in tg:
            v_set = {ph: 1.0 for ph in g.bus[slack].phases}
        else:
            v_set = {ph: (plan.v.get((slack, ph), 0.0) if plan else 0.0) or 1.0 for ph in g.bus[slack].phases}

        bp = [(b, ph) for b in buses for ph in g.bus[b].phases]
        vi = {k: i for i, k in enumerate(bp)}
        ep = [(e, ph) for e in edges for ph in e.phases]
        n_v, n_e = len(bp), len(ep)
        sl_ph = list(g.bus[slack].phases)
        col_p = {(e.id, ph): n_v + k for k, (e, ph) in enumerate(ep)}
        col_q = {(e.id, ph): n_v + n_e + k for k, (e, ph) in enumerate(ep)}
        col_sp = {ph: n_v + 2 * n_e + k for k, ph in enumerate(sl_ph)}
        col_sq = {ph: n_v + 2 * n_e + len(sl_ph) + k for k, ph in enumerate(sl_ph)}
        n = n_v + 2 * n_e + 2 * len(sl_ph)
        rows, cols, vals, rhs = [], [], [], []

        def add(r, c, v):
            rows.append(r)
            cols.append(c)
            vals.append(v)

        r = 0
        load_lin: dict[tuple[str, str], tuple[float, float, str]] = {}
        for bus, ph in bp:
            ld = scenario.load_at.get(bus)
            if ld is not None and ph in ld.p:
                hist = new.block_hist[g.block_of_bus[bus]] if ld.cls == "CL" else new.w_hist[bus]
                mult = clpu_multiplier(hist, scenario.beta)
                vm = state.v.get((bus, ph), 0.0) or 1.0
                a, k0 = zip_coefficients(kz, ki, kp, vm)
                pl = float(ld.p[ph][t]) * mult
                load_lin[(bus, ph)] = (pl * a, pl * k0, ld.cls)
        # balance rows: sum_out - sum_in - injections + load = 0
        out_e = {}
        for e, ph in ep:
            out_e.setdefault((e.from_bus, ph), []).append((e.id, 1.0))
            out_e.setdefault((e.to_bus, ph), []).append((e.id, -1.0))
        pv_kw = 0.0
        for bus, ph in bp:
            inj_p, inj_q = 0.0, 0.0
            if bus in pv:
                pp = pv[bus].s_nom / 3 * float(scenario.pv_rate[t])
                inj_p += pp
                inj_q += cfg.pv_q_ratio * pp
                pv_kw += pp
            if bus in bess and bus != slack:
                k = PHASE_INDEX[ph]
                inj_p += float(plan.p_bess[bus][k]) if plan else 0.0
                inj_q += float(plan.q_bess[bus][k]) if plan else 0.0
            for sym, colmap, inj in (("p", col_p, inj_p), ("q", col_q, inj_q)):
                for eid, sign in out_e.get((bus, ph), []):
                    add(r, colmap[(eid, ph)], sign)
                if bus == slack:
                    add(r, (col_sp if sym == "p" else col_sq)[ph], -1.0)
                ll = load_lin.get((bus, ph))
                const = -inj
                if ll is not None:
                    fac = 1.0 if sym == "p" else tan
                    add(r, vi[(bus, ph)], fac * ll[0])
                    const += fac * ll[1]
                rhs.append(-const)
                r += 1
        for e in edges:
            rt, xt = effective_rx(e.z)
            for ph in e.phases:
                i = PHASE_INDEX[ph]
                add(r, vi[(e.to_bus, ph)], 1.0)
                add(r, vi[(e.from_bus, ph)], -1.0)
                for ps in e.phases:
                    j = PHASE_INDEX[ps]
                    if rt[i, j]:
                        add(r, col_p[(e.id, ps)], 2 * s * rt[i, j])
                    if xt[i, j]:
                        add(r, col_q[(e.id, ps)], 2 * s * xt[i, j])
                rhs.append(0.0)
                r += 1
        for ph in sl_ph:
            add(r, vi[(slack, ph)], 1.0)
            rhs.append(v_set[ph])
            r += 1
        A = sp.csr_matrix((vals, (rows, cols)), shape=(r, n))
        b = np.array(rhs)
        if r == n:
            try:
                x = spla.spsolve(A.tocsc(), b)
                ok = np.all(np.isfinite(x))
            except Exception:  # singular factorisation
                ok = False
        else:
            ok = False
        if not ok:
            log.warning("island %s: square solve failed, using least squares", root)
            x = spla.lsqr(A, b, atol=1e-12, btol=1e-12)[0]
        for (bus, ph), i in vi.items():
            new_v[(bus, ph)] = float(x[i])
        sp_vec = np.zeros(3)
        sq_vec = np.zeros(3)
        for ph in sl_ph:
            sp_vec[PHASE_INDEX[ph]] = x[col_sp[ph]]
            sq_vec[PHASE_INDEX[ph]] = x[col_sq[ph]]
        rep.p_source[slack] = sp_vec
        rep.q_source[slack] = sq_vec
        for b2 in srcs_gf:
            if b2 != slack:
                rep.p_source[b2] = np.array(plan.p_bess[b2]) if plan else np.zeros(3)
                rep.q_source[b2] = np.array(plan.q_bess[b2]) if plan else np.zeros(3)
        for (bus, ph), (sa, sb, cls) in load_lin.items():
            rep.load_kw[cls] += sa * new_v[(bus, ph)] + sb
        rep.pv_kw += pv_kw
        for b2 in srcs_gf:
            p_total[b2] = float(rep.p_source[b2].sum())
            cap = bess[b2].s_nom / 3
            mag = np.hypot(rep.p_source[b2], rep.q_source[b2])
            if np.any(mag > cap * (1 + 1e-6)):
                rep.violations.append(f"GFMI {b2}: phase apparent power {mag.max():.1f} kVA above {cap:.1f}")

    # SoC and frequency
    for b, d in bess.items():
        new.soc[b] = state.soc[b] - p_total[b] * dt_h / d.e_nom
        if not (d.soc_min - 1e-9 <= new.soc[b] <= d.soc_max + 1e-9):
            rep.violations.append(f"GFMI {b}: SoC {new.soc[b]:.4f} outside bounds")
        new.p_bess[b] = p_total[b]
    for node in list(new.f):
        new.f[node] = 0.0
    for root, nodes in islands.items():
        if root in bess:
            d = bess[root]
            f = g.f_nom - d.k_droop * p_total[root] / d.s_nom
        else:
            f = g.f_nom
        if any(n in tg for n in nodes):
            f = g.f_nom
        for n in nodes:
            new.f[n] = f
    new.v = new_v

    # voltage box check
    for (bus, ph), v in new_v.items():
        if not new.bus_on(feeder, bus) or bus in tg:
            continue
        floor = cfg.v_floor
        for gf, red in reduced.items():
            if red.mask[PHASE_INDEX[ph]] and roots.get(g.block_of_bus[bus]) == roots.get(g.block_of_bus[gf]):
                floor = cfg.v_relaxed_floor if bus != gf else cfg.v_red
        if v < floor - 1e-6 or v > cfg.v_ceil + 1e-6:
            rep.violations.append(f"bus {bus}.{ph}: v = {math.sqrt(max(v, 0)):.4f} pu outside box")
    return new, rep
