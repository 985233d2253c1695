"""Restoration state, forecast windows and mitigation flags."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .feeder import PHASES, Feeder, Scenario


@dataclass
class ActiveReduction:
    mask: tuple[bool, bool, bool]
    trigger_blocks: tuple[str, ...]
    until: int | None = None  # last absolute step (inclusive); None = undecided


@dataclass
class SystemState:
    t: int
    block_hist: dict[str, list[int]]
    w_hist: dict[str, list[int]]
    esw_closed: dict[str, bool]
    ssw_closed: dict[str, bool]
    tg_on: dict[str, bool]
    soc: dict[str, float]
    p_bess: dict[str, float]  # total kW of the last executed step
    v: dict[tuple[str, str], float]  # (bus, phase) -> pu^2
    f: dict[str, float]  # block or TG bus -> Hz
    reduction: dict[str, ActiveReduction] = field(default_factory=dict)

    def copy(self) -> "SystemState":
        return copy.deepcopy(self)

    def block_on(self, g: str) -> bool:
        h = self.block_hist[g]
        return bool(h[-1]) if h else False

    def w_on(self, b: str) -> bool:
        h = self.w_hist[b]
        return bool(h[-1]) if h else False

    def bus_on(self, feeder: Feeder, b: str) -> bool:
        g = feeder.graph.block_of_bus.get(b)
        if g is None:
            return self.tg_on.get(b, False)
        return self.block_on(g)

    def history(self, g: str, lag: int, nl: bool = False) -> int:
        """On-flag ``lag`` executed steps ago (0 = latest); 0 before the start."""
        h = (self.w_hist if nl else self.block_hist)[g]
        return int(h[-1 - lag]) if lag < len(h) else 0

    def energized_edges(self, feeder: Feeder) -> set[str]:
        g = feeder.graph
        out = set()
        for blk in g.blocks:
            if self.block_on(blk.id):
                out.update(blk.lines)
        out.update(e for e, on in self.esw_closed.items() if on)
        out.update(e for e, on in self.ssw_closed.items() if on)
        return out

    def all_blocks_on(self) -> bool:
        return all(bool(h and h[-1]) for h in self.block_hist.values())


def initial_state(feeder: Feeder, scenario: Scenario) -> SystemState:
    g = feeder.graph
    nl_buses = [ld.bus for ld in scenario.loads if ld.cls == "NL"]
    return SystemState(
        t=0,
        block_hist={b.id: [] for b in g.blocks},
        w_hist={b: [] for b in nl_buses},
        esw_closed={e.id: False for e in g.esws},
        ssw_closed={e.id: False for e in g.ssws},
        tg_on={b: False for b in g.tg_buses},
        soc={b.bus: b.soc_init for b in feeder.devices.bess},
        p_bess={b.bus: 0.0 for b in feeder.devices.bess},
        v={(b.id, p): 0.0 for b in g.buses for p in b.phases},
        f={**{blk.id: 0.0 for blk in g.blocks}, **{b: 0.0 for b in g.tg_buses}},
    )


def microgrid_roots(
    feeder: Feeder,
    block_on: dict[str, bool],
    closed: set[str],
    tg_on: dict[str, bool],
    through_ssw: bool = False,
) -> dict[str, str]:
    """Map each energized block (and live TG bus) to the source bus of its island.

    Islands are searched over energized blocks joined by closed ESWs (and SSWs
    when ``through_ssw``).  The root is the GFMI in the island, the TG bus if
    there is no GFMI, else the lexicographically first GFMI.
    """
    g = feeder.graph
    nodes = [b.id for b in g.blocks if block_on.get(b.id)] + [b for b in g.tg_buses if tg_on.get(b)]
    node_of_bus = {}
    for blk in g.blocks:
        for b in blk.buses:
            node_of_bus[b] = blk.id
    for b in g.tg_buses:
        node_of_bus[b] = b
    parent = {n: n for n in nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in g.edges:
        if e.kind == "line" or e.id not in closed:
            continue
        if e.kind == "ssw" and not through_ssw:
            continue
        a, b = node_of_bus.get(e.from_bus), node_of_bus.get(e.to_bus)
        if a in parent and b in parent:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    comps: dict[str, list[str]] = {}
    for n in nodes:
        comps.setdefault(find(n), []).append(n)
    out = {}
    for members in comps.values():
        gfmis = sorted(b for b in g.gfmi_buses if node_of_bus[b] in members)
        tgs = sorted(b for b in g.tg_buses if b in members)
        root = gfmis[0] if gfmis else (tgs[0] if tgs else None)
        if root is None:
            continue
        for n in members:
            out[n] = root
    return out


@dataclass(frozen=True, eq=False)
class Window:
    start: int
    labels: tuple[str, ...]
    dt_h: float
    pv_rate: np.ndarray
    tg_available: np.ndarray
    loads: dict[str, tuple[str, dict[str, np.ndarray]]]
    truncated: bool = False

    @property
    def length(self) -> int:
        return len(self.labels)


def forecast(scenario: Scenario, t: int, tc: int, noise: float = 0.0, seed: int | None = None) -> Window:
    """Slice ``tc`` steps starting at ``t``; optional seeded multiplicative PV noise."""
    n = scenario.n_steps
    if not 0 <= t < n:
        raise IndexError(f"step {t} outside horizon of {n}")
    end = min(t + tc, n)
    sl = slice(t, end)
    pv = scenario.pv_rate[sl].copy()
    if noise > 0:
        rng = np.random.default_rng([int(seed or 0), t])
        pv = np.clip(pv * (1.0 + noise * rng.standard_normal(pv.size)), 0.0, 1.0)
    return Window(
        start=t,
        labels=scenario.labels[sl],
        dt_h=scenario.dt_h,
        pv_rate=pv,
        tg_available=scenario.tg_available[sl].copy(),
        loads={ld.bus: (ld.cls, {ph: v[sl].copy() for ph, v in ld.p.items()}) for ld in scenario.loads},
        truncated=end - t < tc,
    )


@dataclass(frozen=True)
class MitigationFlags:
    reduction: dict = field(default_factory=dict)  # GFMI bus -> (mask (3 bools), active window steps)
    blocked: frozenset = frozenset()  # (ESW id, window step 1-based)
    v_red: float = 0.64

    def with_reduction(self, gfmi: str, mask, steps: int) -> "MitigationFlags":
        old = self.reduction.get(gfmi)
        if old is not None:
            mask = tuple(bool(a or b) for a, b in zip(old[0], mask))
            steps = max(steps, old[1])
        return MitigationFlags({**self.reduction, gfmi: (tuple(bool(m) for m in mask), steps)}, self.blocked, self.v_red)

    def with_blocked(self, esw: str, step: int = 1) -> "MitigationFlags":
        return MitigationFlags(dict(self.reduction), self.blocked | {(esw, step)}, self.v_red)

    def phase_mask(self, gfmi: str, step: int) -> tuple[bool, bool, bool]:
        r = self.reduction.get(gfmi)
        if r is None or step > r[1]:
            return (False, False, False)
        return r[0]


def phase_list(mask) -> list[str]:
    return [p for p, m in zip(PHASES, mask) if m]
