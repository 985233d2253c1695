"""Restoration MILP: energization logic, sources, loads and linearised power flow.

Each constraint family has its own builder so it can be tested in isolation.
Values at the step before the window come from the state and enter as
constants.  Units: kW/kvar per phase, squared voltage in pu^2, Hz.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..config import MilpConfig
from ..feeder import PHASE_INDEX, PHASES, Feeder, Scenario
from ..state import MitigationFlags, SystemState, Window, microgrid_roots
from .instance import InstanceBuilder, MilpInstance

log = logging.getLogger(__name__)

FAMILIES = (
    "energization",
    "freq_propagation",
    "esw_action",
    "esw_frequency",
    "switch_blocking",
    "ssw_action",
    "radiality",
    "tg",
    "bess",
    "gfmi_frequency",
    "pv",
    "zip",
    "clpu",
    "balance",
    "voltage_drop",
    "security",
    "voltage_reduction",
)

_A = np.exp(-2j * np.pi / 3)
PHASOR = np.array([1.0, _A, _A.conjugate()])
GAMMA = np.outer(PHASOR, PHASOR.conjugate())


def effective_rx(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Phase-frame resistance and reactance for the unbalanced linear drop."""
    r, x = z.real, z.imag
    return GAMMA.real * r + GAMMA.imag * x, GAMMA.real * x - GAMMA.imag * r


class Expr:
    """Sparse affine expression over variable keys."""

    __slots__ = ("terms", "const")

    def __init__(self, terms=None, const: float = 0.0):
        self.terms: dict[tuple, float] = dict(terms or {})
        self.const = float(const)

    @staticmethod
    def of(x) -> "Expr":
        if isinstance(x, Expr):
            return x
        if isinstance(x, tuple):
            return Expr({x: 1.0})
        return Expr(const=float(x))

    def __add__(self, other):
        o = Expr.of(other)
        t = dict(self.terms)
        for k, v in o.terms.items():
            t[k] = t.get(k, 0.0) + v
        return Expr(t, self.const + o.const)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-1.0) * Expr.of(other)

    def __rsub__(self, other):
        return Expr.of(other) - self

    def __mul__(self, s: float):
        return Expr({k: v * s for k, v in self.terms.items()}, self.const * s)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


@dataclass
class _Ctx:
    feeder: Feeder
    scenario: Scenario
    state: SystemState
    window: Window
    flags: MitigationFlags
    cfg: MilpConfig
    b: InstanceBuilder

    @property
    def T(self) -> int:
        return self.window.length

    @property
    def steps(self) -> range:
        return range(1, self.T + 1)


def uBB(c: _Ctx, g: str, t: int) -> Expr:
    if t <= 0:
        return Expr.of(float(c.state.history(g, -t)))
    return Expr.of(("uBB", g, "", t))


def uW(c: _Ctx, bus: str, t: int) -> Expr:
    if t <= 0:
        return Expr.of(float(c.state.history(bus, -t, nl=True)))
    return Expr.of(("w", bus, "", t))


def uB(c: _Ctx, bus: str, t: int) -> Expr:
    if t <= 0:
        g = c.feeder.graph.block_of_bus.get(bus)
        if g is None:
            return Expr.of(float(c.state.tg_on.get(bus, False)))
        return Expr.of(float(c.state.history(g, -t)))
    return Expr.of(("uB", bus, "", t))


def uE(c: _Ctx, eid: str, t: int) -> Expr:
    e = c.feeder.graph.edge[eid]
    if t <= 0:
        if e.kind == "esw":
            return Expr.of(float(c.state.esw_closed[eid]))
        if e.kind == "ssw":
            return Expr.of(float(c.state.ssw_closed[eid]))
        return uBB(c, c.feeder.graph.block_of_bus[e.from_bus], t)
    sym = {"line": "uE", "esw": "uESW", "ssw": "uSSW"}[e.kind]
    return Expr.of((sym, eid, "", t))


def p_bess_total(c: _Ctx, bus: str, t: int) -> Expr:
    if t <= 0:
        return Expr.of(c.state.p_bess.get(bus, 0.0))
    return sum((Expr.of(("pBESS", bus, ph, t)) for ph in c.feeder.graph.bus[bus].phases), Expr())


def _row(c: _Ctx, family: str, name: str, lhs: Expr, sense: str, rhs=0.0) -> None:
    e = lhs - Expr.of(rhs)
    c.b.row(family, name, e.terms, sense, -e.const)


# --------------------------------------------------------------------------
# variables


def _freq_buses(feeder: Feeder) -> list[str]:
    g = feeder.graph
    out = set(g.gfmi_buses) | set(g.tg_buses)
    for blk in g.blocks:
        out.update(g.switch_terminal_buses(blk.id))
    return [b.id for b in g.buses if b.id in out]


def _load_phases(c: _Ctx):
    """(bus, class, phase, nominal kW per window step) for loads with demand."""
    g = c.feeder.graph
    out = []
    for bus in sorted(c.window.loads, key=lambda b: g.bus_index[b]):
        cls, p = c.window.loads[bus]
        for ph in PHASES:
            if ph in p and np.any(p[ph] > 0):
                out.append((bus, cls, ph, p[ph]))
    return out


def _declare(c: _Ctx) -> None:
    b, g, st, cfg = c.b, c.feeder.graph, c.state, c.cfg
    bess = {d.bus: d for d in c.feeder.devices.bess}
    flow_m = (
        sum(d.s_nom for d in c.feeder.devices.bess)
        + sum(d.s_max for d in c.feeder.devices.tg)
        + sum(d.s_nom for d in c.feeder.devices.pv)
    ) / 3.0
    flow_m = max(flow_m, 1.0)
    b.big_m["flow"] = flow_m
    b.big_m["voltage"] = cfg.v_ceil
    b.big_m["frequency"] = cfg.f_var_max
    for t in c.steps:
        for blk in g.blocks:
            b.var(("uBB", blk.id, "", t), lb=float(st.block_on(blk.id)), binary=True)
        for bus in g.buses:
            if bus.id in g.tg_buses:
                avail = float(c.window.tg_available[t - 1])
                b.var(("uB", bus.id, "", t), lb=min(float(st.tg_on[bus.id]), avail), ub=avail, binary=True)
            else:
                b.var(("uB", bus.id, "", t), 0.0, 1.0, implied=True)
        for e in g.edges:
            if e.kind == "line":
                b.var(("uE", e.id, "", t), 0.0, 1.0, implied=True)
            elif e.kind == "esw":
                b.var(("uESW", e.id, "", t), lb=float(st.esw_closed[e.id]), binary=True)
            else:
                b.var(("uSSW", e.id, "", t), lb=float(st.ssw_closed[e.id]), binary=True)
        for bus, (cls, _) in sorted(c.window.loads.items(), key=lambda kv: g.bus_index[kv[0]]):
            if cls == "NL":
                b.var(("w", bus, "", t), lb=float(st.w_on(bus)), binary=True)
        for bus in g.buses:
            for ph in bus.phases:
                b.var(("v", bus.id, ph, t), 0.0, cfg.v_ceil)
        for bus in _freq_buses(c.feeder):
            b.var(("f", bus, "", t), 0.0, cfg.f_var_max)
        for blk in g.blocks:
            b.var(("fg", blk.id, "", t), 0.0, cfg.f_var_max)
        for e in g.edges:
            for ph in e.phases:
                b.var(("p", e.id, ph, t), -flow_m, flow_m)
                b.var(("q", e.id, ph, t), -flow_m, flow_m)
        for d in c.feeder.devices.tg:
            for ph in g.bus[d.bus].phases:
                b.var(("pTG", d.bus, ph, t), -d.s_max / 3, d.s_max / 3)
                b.var(("qTG", d.bus, ph, t), -d.s_max / 3, d.s_max / 3)
        for d in bess.values():
            for ph in g.bus[d.bus].phases:
                b.var(("pBESS", d.bus, ph, t), -d.s_nom / 3, d.s_nom / 3)
                b.var(("qBESS", d.bus, ph, t), -d.s_nom / 3, d.s_nom / 3)
            b.var(("soc", d.bus, "", t), d.soc_min, d.soc_max)
            b.var(("fqss", d.bus, "", t), *cfg.f_qss_bounds)
            b.var(("froc", d.bus, "", t), *cfg.f_roc_bounds)
            b.var(("fnadir", d.bus, "", t), *cfg.f_nadir_bounds)
        for d in c.feeder.devices.pv:
            for ph in g.bus[d.bus].phases:
                b.var(("pPV", d.bus, ph, t), 0.0, d.s_nom / 3)
        b.var(("R", "", "", t), 0.0, len(g.gfmi_buses) + len(g.tg_buses))


# --------------------------------------------------------------------------
# families


def add_energization(c: _Ctx) -> None:
    g = c.feeder.graph
    gfmi_blocks = set(g.gfmi_block.values())
    for blk in g.blocks:
        esws = [e.id for e in g.block_esws(blk.id)]
        m = float(max(len(esws), 1))
        c.b.big_m["esw_cap"] = max(c.b.big_m.get("esw_cap", 0.0), m)
        for t in c.steps:
            u = uBB(c, blk.id, t)
            if t > 1:
                _row(c, "energization", f"mono[{blk.id},{t}]", u - uBB(c, blk.id, t - 1), ">")
            for bus in blk.buses:
                _row(c, "energization", f"bus[{bus},{t}]", uB(c, bus, t) - u, "=")
            for lid in blk.lines:
                _row(c, "energization", f"line[{lid},{t}]", uE(c, lid, t) - u, "=")
            for eid in esws:
                _row(c, "energization", f"esw_on[{blk.id},{eid},{t}]", u - uE(c, eid, t), ">")
            if esws:
                closes = sum((uE(c, eid, t) - uE(c, eid, t - 1) for eid in esws), Expr())
                _row(c, "energization", f"esw_cap[{blk.id},{t}]", closes - m * uBB(c, blk.id, t - 1), "<", 1.0)
            if blk.id not in gfmi_blocks:
                feed = sum((uE(c, eid, t) for eid in esws), Expr())
                _row(c, "energization", f"fed[{blk.id},{t}]", u - uBB(c, blk.id, t - 1) - feed, "<")
    for e in g.esws:
        for t in c.steps:
            if t > 1:
                _row(c, "energization", f"esw_mono[{e.id},{t}]", uE(c, e.id, t) - uE(c, e.id, t - 1), ">")


def add_freq_propagation(c: _Ctx) -> None:
    g = c.feeder.graph
    fb = set(_freq_buses(c.feeder))
    for blk in g.blocks:
        members = [b for b in blk.buses if b in fb]
        for t in c.steps:
            for bus in members:
                _row(c, "freq_propagation", f"[{bus},{t}]", Expr.of(("f", bus, "", t)) - Expr.of(("fg", blk.id, "", t)), "=")


def add_esw_action(c: _Ctx) -> None:
    m = c.cfg.f_var_max
    for e in c.feeder.graph.esws:
        for t in c.steps:
            prev = uB(c, e.from_bus, t - 1) + uB(c, e.to_bus, t - 1)
            u = uE(c, e.id, t)
            _row(c, "esw_action", f"live[{e.id},{t}]", u - prev, "<")
            _row(c, "esw_action", f"nosync[{e.id},{t}]", u - uE(c, e.id, t - 1) + prev, "<", 2.0)
            fk, fl = Expr.of(("f", e.from_bus, "", t)), Expr.of(("f", e.to_bus, "", t))
            _row(c, "esw_frequency", f"up[{e.id},{t}]", fk - fl + m * u, "<", m)
            _row(c, "esw_frequency", f"dn[{e.id},{t}]", fl - fk + m * u, "<", m)


def add_switch_blocking(c: _Ctx) -> None:
    for eid, step in sorted(c.flags.blocked):
        if eid not in c.feeder.graph.edge or c.feeder.graph.edge[eid].kind != "esw":
            raise ValueError(f"blocked switch {eid} is not an ESW")
        if step > c.T or c.state.esw_closed[eid]:
            continue
        _row(c, "switch_blocking", f"[{eid},{step}]", uE(c, eid, step), "=")


def add_ssw_action(c: _Ctx) -> None:
    m = c.cfg.f_var_max
    half = c.cfg.eps_sync / 2.0
    for e in c.feeder.graph.ssws:
        for t in c.steps:
            u = uE(c, e.id, t)
            if t > 1:
                _row(c, "ssw_action", f"mono[{e.id},{t}]", u - uE(c, e.id, t - 1), ">")
            prev = uB(c, e.from_bus, t - 1) + uB(c, e.to_bus, t - 1)
            _row(c, "ssw_action", f"live[{e.id},{t}]", 2.0 * u - prev, "<")
            fk, fl = Expr.of(("f", e.from_bus, "", t)), Expr.of(("f", e.to_bus, "", t))
            _row(c, "ssw_action", f"fup[{e.id},{t}]", fk - fl + m * u, "<", m + half)
            _row(c, "ssw_action", f"fdn[{e.id},{t}]", fl - fk + m * u, "<", m + half)
            c.b.obj(("uSSW", e.id, "", t), c.cfg.sync_reward)


def add_radiality(c: _Ctx) -> None:
    g = c.feeder.graph
    for t in c.steps:
        r = Expr.of(("R", "", "", t))
        edges = sum((uE(c, e.id, t) for e in g.edges), Expr())
        buses = sum((uB(c, b.id, t) for b in g.buses), Expr())
        _row(c, "radiality", f"count[{t}]", edges - buses + r, "=")
        tg = sum((uB(c, b, t) for b in g.tg_buses), Expr())
        ssw = sum((uE(c, e.id, t) for e in g.ssws), Expr())
        _row(c, "radiality", f"roots[{t}]", r - tg + ssw, "=", float(len(g.gfmi_buses)))


def _polygon(c: _Ctx, family: str, name: str, p: tuple, q: tuple, radius: float, gate: Expr | None) -> None:
    n = c.cfg.polygon_sides
    apothem = radius * math.cos(math.pi / n)
    for k in range(n):
        th = 2 * math.pi * (k + 0.5) / n
        lhs = math.cos(th) * Expr.of(p) + math.sin(th) * Expr.of(q)
        if gate is None:
            _row(c, family, f"{name}[{k}]", lhs, "<", apothem)
        else:
            _row(c, family, f"{name}[{k}]", lhs - apothem * gate, "<")


def add_tg(c: _Ctx) -> None:
    g = c.feeder.graph
    for d in c.feeder.devices.tg:
        for t in c.steps:
            u = uB(c, d.bus, t)
            if t > 1:
                _row(c, "tg", f"mono[{d.bus},{t}]", u - uB(c, d.bus, t - 1), ">")
            for ph in g.bus[d.bus].phases:
                _row(c, "tg", f"v[{d.bus},{ph},{t}]", Expr.of(("v", d.bus, ph, t)) - u, "=")
                _polygon(c, "tg", f"cap[{d.bus},{ph},{t}]", ("pTG", d.bus, ph, t), ("qTG", d.bus, ph, t), d.s_max / 3, u)
            _row(c, "tg", f"f[{d.bus},{t}]", Expr.of(("f", d.bus, "", t)) - c.feeder.graph.f_nom * u, "=")


def add_bess(c: _Ctx) -> None:
    g = c.feeder.graph
    dt = c.window.dt_h
    for d in c.feeder.devices.bess:
        for t in c.steps:
            prev = Expr.of(c.state.soc[d.bus]) if t == 1 else Expr.of(("soc", d.bus, "", t - 1))
            lhs = Expr.of(("soc", d.bus, "", t)) - prev + (dt / d.e_nom) * p_bess_total(c, d.bus, t)
            _row(c, "bess", f"soc[{d.bus},{t}]", lhs, "=")
            for ph in g.bus[d.bus].phases:
                _polygon(c, "bess", f"cap[{d.bus},{ph},{t}]", ("pBESS", d.bus, ph, t), ("qBESS", d.bus, ph, t), d.s_nom / 3, None)


def add_gfmi_frequency(c: _Ctx) -> None:
    g = c.feeder.graph
    fnom = g.f_nom
    lo, hi = c.cfg.f_bounds
    for d in c.feeder.devices.bess:
        for t in c.steps:
            p = p_bess_total(c, d.bus, t)
            dp = p - p_bess_total(c, d.bus, t - 1)
            fq = Expr.of(("fqss", d.bus, "", t))
            _row(c, "gfmi_frequency", f"qss[{d.bus},{t}]", fq + (d.k_droop / d.s_nom) * p, "=", fnom)
            _row(
                c,
                "gfmi_frequency",
                f"roc[{d.bus},{t}]",
                Expr.of(("froc", d.bus, "", t)) - (fnom / (2 * d.h_inertia * d.s_nom)) * dp,
                "=",
            )
            _row(c, "gfmi_frequency", f"nadir[{d.bus},{t}]", Expr.of(("fnadir", d.bus, "", t)) - fq + (d.k_nadir / d.s_nom) * dp, "=")
            syn = sum(((uE(c, e.id, t) - uE(c, e.id, t - 1)) * d.df_syn for e in g.ssws), Expr())
            f = Expr.of(("f", d.bus, "", t))
            _row(c, "gfmi_frequency", f"f[{d.bus},{t}]", f - fq - syn, "=")
            _row(c, "gfmi_frequency", f"fmin[{d.bus},{t}]", f, ">", lo)
            _row(c, "gfmi_frequency", f"fmax[{d.bus},{t}]", f, "<", hi)


def add_pv(c: _Ctx) -> None:
    g = c.feeder.graph
    for d in c.feeder.devices.pv:
        for t in c.steps:
            eta = float(c.window.pv_rate[t - 1])
            for ph in g.bus[d.bus].phases:
                _row(c, "pv", f"[{d.bus},{ph},{t}]", Expr.of(("pPV", d.bus, ph, t)) - (d.s_nom / 3 * eta) * uB(c, d.bus, t), "=")


def zip_coefficients(kz: float, ki: float, kp: float, v_m: float) -> tuple[float, float]:
    """(slope, intercept) of the ZIP multiplier linearised in squared voltage at ``v_m``."""
    s = math.sqrt(v_m)
    return kz + ki / (2 * s), ki * s / 2 + kp


def linearization_point(c: _Ctx, bus: str, ph: str) -> float:
    v = c.state.v.get((bus, ph), 0.0)
    return v if v > 0 else 1.0


def clpu_weights(beta: tuple[float, float, float]) -> list[float]:
    """Coefficients on u_t, u_{t-1}, u_{t-2}, u_{t-3} of the staircase multiplier."""
    b1, b2, b3 = beta
    return [1.0 + b1, b2 - b1, b3 - b2, -b3]


def add_loads(c: _Ctx) -> None:
    """ZIP demand, CLPU staircase and McCormick products."""
    g = c.feeder.graph
    sc = c.scenario
    kz, ki, kp = sc.zip
    w = clpu_weights(sc.beta)
    vmax = c.cfg.v_ceil
    for bus, cls, ph, p_nom in _load_phases(c):
        blk = g.block_of_bus[bus]
        gamma = sc.gamma_cl if cls == "CL" else sc.gamma_nl
        status = (lambda t, blk=blk: uBB(c, blk, t)) if cls == "CL" else (lambda t, bus=bus: uW(c, bus, t))
        a, k0 = zip_coefficients(kz, ki, kp, linearization_point(c, bus, ph))
        for t in c.steps:
            pl = float(p_nom[t - 1])
            lo, hi = pl * k0, pl * (a * vmax + k0)
            pz = ("pZIP", bus, ph, t)
            c.b.var(pz, lo, hi)
            _row(c, "zip", f"[{bus},{ph},{t}]", Expr.of(pz) - (pl * a) * Expr.of(("v", bus, ph, t)), "=", pl * k0)
            px = (f"p{cls}", bus, ph, t)
            c.b.var(px, 0.0, hi * (1.0 + max(sc.beta)))
            total = Expr.of(px)
            for lag, coef in enumerate(w):
                j = t - lag
                if coef == 0.0:
                    continue
                u = status(j)
                if not u.terms:  # history constant
                    total = total - (coef * u.const) * Expr.of(pz)
                    continue
                z = ("z", f"{bus}@{j}", ph, t)
                c.b.var(z, 0.0, hi)
                zz = Expr.of(z)
                _row(c, "clpu", f"mc1[{bus},{ph},{t},{j}]", zz - hi * u, "<")
                _row(c, "clpu", f"mc2[{bus},{ph},{t},{j}]", zz - lo * u, ">")
                _row(c, "clpu", f"mc3[{bus},{ph},{t},{j}]", zz - Expr.of(pz) - lo * u, "<", -lo)
                _row(c, "clpu", f"mc4[{bus},{ph},{t},{j}]", zz - Expr.of(pz) - hi * u, ">", -hi)
                total = total - coef * zz
            _row(c, "clpu", f"demand[{bus},{ph},{t}]", total, "=")
            c.b.obj(px, c.window.dt_h * gamma)
    for bus, (cls, _) in c.window.loads.items():
        if cls != "NL":
            continue
        blk = g.block_of_bus[bus]
        for t in c.steps:
            _row(c, "clpu", f"w_gate[{bus},{t}]", uW(c, bus, t) - uBB(c, blk, t), "<")
            if t > 1:
                _row(c, "clpu", f"w_mono[{bus},{t}]", uW(c, bus, t) - uW(c, bus, t - 1), ">")


def add_balance(c: _Ctx) -> None:
    g = c.feeder.graph
    tan = c.scenario.load_tan
    out_e: dict[str, list] = {b.id: [] for b in g.buses}
    in_e: dict[str, list] = {b.id: [] for b in g.buses}
    for e in g.edges:
        out_e[e.from_bus].append(e)
        in_e[e.to_bus].append(e)
    loads = {(bus, ph): cls for bus, cls, ph, _ in _load_phases(c)}
    tg = {d.bus for d in c.feeder.devices.tg}
    bess = {d.bus for d in c.feeder.devices.bess}
    pv = {d.bus for d in c.feeder.devices.pv}
    for bus in g.buses:
        for ph in bus.phases:
            for t in c.steps:
                p, q = Expr(), Expr()
                for e in out_e[bus.id]:
                    if ph in e.phases:
                        p = p + ("p", e.id, ph, t)
                        q = q + ("q", e.id, ph, t)
                for e in in_e[bus.id]:
                    if ph in e.phases:
                        p = p - ("p", e.id, ph, t)
                        q = q - ("q", e.id, ph, t)
                if bus.id in tg:
                    p, q = p - ("pTG", bus.id, ph, t), q - ("qTG", bus.id, ph, t)
                if bus.id in bess:
                    p, q = p - ("pBESS", bus.id, ph, t), q - ("qBESS", bus.id, ph, t)
                if bus.id in pv:
                    p = p - ("pPV", bus.id, ph, t)
                    q = q - c.cfg.pv_q_ratio * Expr.of(("pPV", bus.id, ph, t))
                cls = loads.get((bus.id, ph))
                if cls is not None:
                    p = p + (f"p{cls}", bus.id, ph, t)
                    q = q + tan * Expr.of((f"p{cls}", bus.id, ph, t))
                _row(c, "balance", f"p[{bus.id},{ph},{t}]", p, "=")
                _row(c, "balance", f"q[{bus.id},{ph},{t}]", q, "=")


def drop_scale(kv_ln: float) -> float:
    """pu^2 per (ohm * kW): 1e3 W/kW over V_base^2."""
    return 1e3 / (kv_ln * 1e3) ** 2


def add_voltage_drop(c: _Ctx) -> None:
    g = c.feeder.graph
    s = drop_scale(g.kv_ln)
    m = c.cfg.v_ceil
    for e in g.edges:
        rt, xt = effective_rx(e.z)
        for t in c.steps:
            u = uE(c, e.id, t)
            for ph in e.phases:
                i = PHASE_INDEX[ph]
                d = Expr.of(("v", e.to_bus, ph, t)) - Expr.of(("v", e.from_bus, ph, t))
                for ps in e.phases:
                    j = PHASE_INDEX[ps]
                    if rt[i, j]:
                        d = d + (2 * s * rt[i, j]) * Expr.of(("p", e.id, ps, t))
                    if xt[i, j]:
                        d = d + (2 * s * xt[i, j]) * Expr.of(("q", e.id, ps, t))
                _row(c, "voltage_drop", f"le[{e.id},{ph},{t}]", d + m * u, "<", m)
                _row(c, "voltage_drop", f"ge[{e.id},{ph},{t}]", d - m * u, ">", -m)


def _reduced(c: _Ctx) -> dict[int, dict[str, set[str]]]:
    """step -> GFMI -> reduced phases."""
    out: dict[int, dict[str, set[str]]] = {}
    for gfmi in c.flags.reduction:
        for t in c.steps:
            mask = c.flags.phase_mask(gfmi, t)
            phs = {p for p, m in zip(PHASES, mask) if m}
            if phs:
                out.setdefault(t, {})[gfmi] = phs
    return out


def _relaxed_floor_buses(c: _Ctx, gfmi: str) -> set[str]:
    g = c.feeder.graph
    st = c.state
    on = {blk.id: st.block_on(blk.id) for blk in g.blocks}
    roots = microgrid_roots(c.feeder, on, st.energized_edges(c.feeder), st.tg_on)
    out = set()
    for blk in g.blocks:
        if not on[blk.id] or roots.get(blk.id) == gfmi:
            out.update(blk.buses)
    return out


def add_security(c: _Ctx) -> None:
    g = c.feeder.graph
    cfg = c.cfg
    fm = c.b.big_m["flow"]
    for e in g.edges:
        for t in c.steps:
            u = uE(c, e.id, t)
            for ph in e.phases:
                for sym in ("p", "q"):
                    x = Expr.of((sym, e.id, ph, t))
                    _row(c, "security", f"{sym}max[{e.id},{ph},{t}]", x - fm * u, "<")
                    _row(c, "security", f"{sym}min[{e.id},{ph},{t}]", x + fm * u, ">")
    reduced = _reduced(c)
    relaxed = {gf: _relaxed_floor_buses(c, gf) for gf in c.flags.reduction}
    gfmi = set(g.gfmi_buses)
    tg = set(g.tg_buses)
    for bus in g.buses:
        if bus.id in tg:
            continue
        for ph in bus.phases:
            for t in c.steps:
                v = Expr.of(("v", bus.id, ph, t))
                u = uB(c, bus.id, t)
                if bus.id in gfmi:
                    mask = ph in reduced.get(t, {}).get(bus.id, set())
                    ceil = cfg.v_red if mask else cfg.v_ceil
                    floor = cfg.v_red if mask else cfg.v_floor
                    _row(c, "voltage_reduction", f"ceil[{bus.id},{ph},{t}]", v, "<", ceil)
                    _row(c, "voltage_reduction", f"floor[{bus.id},{ph},{t}]", v, ">", floor)
                    continue
                floor = cfg.v_floor
                for gf, phs in reduced.get(t, {}).items():
                    if ph in phs and bus.id in relaxed[gf]:
                        floor = cfg.v_relaxed_floor
                _row(c, "security", f"vmax[{bus.id},{ph},{t}]", v - cfg.v_ceil * u, "<")
                _row(c, "security", f"vmin[{bus.id},{ph},{t}]", v - floor * u, ">")


BUILDERS = (
    add_energization,
    add_freq_propagation,
    add_esw_action,
    add_switch_blocking,
    add_ssw_action,
    add_radiality,
    add_tg,
    add_bess,
    add_gfmi_frequency,
    add_pv,
    add_loads,
    add_balance,
    add_voltage_drop,
    add_security,
)


def build(
    feeder: Feeder,
    scenario: Scenario,
    state: SystemState,
    window: Window,
    flags: MitigationFlags | None = None,
    cfg: MilpConfig | None = None,
) -> MilpInstance:
    cfg = cfg or MilpConfig()
    flags = flags or MitigationFlags(v_red=cfg.v_red)
    if window.length < 1:
        raise ValueError("window must contain at least one step")
    for d in feeder.devices.bess:
        soc = state.soc[d.bus]
        if not (d.soc_min - 1e-9 <= soc <= d.soc_max + 1e-9):
            raise ValueError(f"BESS {d.bus}: state SoC {soc:.4f} outside [{d.soc_min}, {d.soc_max}]")
    c = _Ctx(feeder, scenario, state, window, flags, cfg, InstanceBuilder())
    _declare(c)
    for fn in BUILDERS:
        fn(c)
    inst = c.b.build(
        meta={
            "window_start": window.start,
            "labels": list(window.labels),
            "T": window.length,
            "dt_h": window.dt_h,
        }
    )
    log.debug("MILP census: %s", inst.census())
    return inst
