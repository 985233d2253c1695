"""Typed restoration plan read back from a MILP solution."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..feeder import PHASES, Feeder
from ..state import SystemState
from .instance import MilpInstance, var_name


class PlanError(ValueError):
    pass


@dataclass
class StepPlan:
    step: int  # 1-based window step
    label: str
    blocks_on: set[str]
    esw_closed: set[str]
    ssw_closed: set[str]
    tg_on: set[str]
    w_on: set[str]
    v: dict[tuple[str, str], float]
    p_bess: dict[str, np.ndarray]
    q_bess: dict[str, np.ndarray]
    soc: dict[str, float]
    f: dict[str, float]
    restored_kw: dict[str, float]

    @property
    def closed(self) -> set[str]:
        return self.esw_closed | self.ssw_closed


@dataclass
class Actions:
    blocks: list[str] = field(default_factory=list)
    esws: list[str] = field(default_factory=list)
    ssws: list[str] = field(default_factory=list)
    tg: list[str] = field(default_factory=list)
    nl: list[str] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not (self.blocks or self.esws or self.ssws or self.tg or self.nl)


@dataclass
class RestorationPlan:
    steps: list[StepPlan]
    objective: float
    actions: Actions  # first-step changes relative to the state; the only executable part

    @property
    def first(self) -> StepPlan | None:
        return self.steps[0] if self.steps else None


def _val(inst: MilpInstance, x: np.ndarray, key: tuple, default: float = 0.0) -> float:
    j = inst.index.get(var_name(key))
    return default if j is None else float(x[j])


def extract_plan(inst: MilpInstance, x: np.ndarray, feeder: Feeder, state: SystemState, tol: float = 1e-6) -> RestorationPlan:
    x = np.asarray(x, dtype=float)
    mask = inst.binary | inst.implied
    frac = np.abs(x[mask] - np.round(x[mask]))
    if frac.size and frac.max() > tol:
        j = np.flatnonzero(mask)[int(np.argmax(frac))]
        raise PlanError(f"fractional integer variable {inst.names[j]} = {x[j]:.6g}")
    g = feeder.graph
    steps = []
    labels = inst.meta.get("labels", [])
    for t in range(1, int(inst.meta.get("T", 0)) + 1):
        on = lambda key: _val(inst, x, key) > 0.5  # noqa: E731
        restored = {"CL": 0.0, "NL": 0.0}
        for name, j in inst.index.items():
            sym, _, _, step = name.split(":")
            if step == str(t) and sym in ("pCL", "pNL"):
                restored[sym[1:]] += float(x[j])
        steps.append(
            StepPlan(
                step=t,
                label=labels[t - 1] if t - 1 < len(labels) else str(t),
                blocks_on={b.id for b in g.blocks if on(("uBB", b.id, "", t))},
                esw_closed={e.id for e in g.esws if on(("uESW", e.id, "", t))},
                ssw_closed={e.id for e in g.ssws if on(("uSSW", e.id, "", t))},
                tg_on={b for b in g.tg_buses if on(("uB", b, "", t))},
                w_on={b for b in state.w_hist if on(("w", b, "", t))},
                v={(b.id, p): _val(inst, x, ("v", b.id, p, t)) for b in g.buses for p in b.phases},
                p_bess={
                    d.bus: np.array([_val(inst, x, ("pBESS", d.bus, p, t)) for p in PHASES]) for d in feeder.devices.bess
                },
                q_bess={
                    d.bus: np.array([_val(inst, x, ("qBESS", d.bus, p, t)) for p in PHASES]) for d in feeder.devices.bess
                },
                soc={d.bus: _val(inst, x, ("soc", d.bus, "", t)) for d in feeder.devices.bess},
                f={b: _val(inst, x, ("f", b, "", t)) for b in (*g.gfmi_buses, *g.tg_buses)},
                restored_kw=restored,
            )
        )
    acts = Actions()
    if steps:
        s1 = steps[0]
        acts.blocks = [b.id for b in g.blocks if b.id in s1.blocks_on and not state.block_on(b.id)]
        acts.esws = [e.id for e in g.esws if e.id in s1.esw_closed and not state.esw_closed[e.id]]
        acts.ssws = [e.id for e in g.ssws if e.id in s1.ssw_closed and not state.ssw_closed[e.id]]
        acts.tg = [b for b in g.tg_buses if b in s1.tg_on and not state.tg_on[b]]
        acts.nl = [b for b in state.w_hist if b in s1.w_on and not state.w_on(b)]
    return RestorationPlan(steps, inst.objective(x), acts)


def schedule_key(plan: RestorationPlan) -> tuple:
    """Hashable switching schedule of a plan (for comparing against enumeration)."""
    return tuple(
        (
            tuple(sorted(s.blocks_on)),
            tuple(sorted(s.esw_closed)),
            tuple(sorted(s.ssw_closed)),
            tuple(sorted(s.tg_on)),
            tuple(sorted(s.w_on)),
        )
        for s in plan.steps
    )
