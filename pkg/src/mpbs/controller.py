"""Receding-horizon black-start loop: forecast, solve, inrush check, mitigate, execute."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .config import RunConfig
from .feeder import PHASES, Feeder, Scenario
from .inrush import InrushReport, MicrogridState, blocking_candidate, evaluate_step, voltage_reduction_mask
from .milp import Actions, RestorationPlan, StepPlan, build, extract_plan
from .milp.instance import MilpInstance
from .plant import PlantReport, plant_apply
from .solver import Solution, solve
from .state import ActiveReduction, MitigationFlags, SystemState, forecast, initial_state, microgrid_roots

log = logging.getLogger(__name__)


class ControllerError(RuntimeError):
    def __init__(self, msg: str, instance: MilpInstance | None = None):
        super().__init__(msg)
        self.instance = instance


@dataclass
class IterationLog:
    index: int
    reduction: dict[str, list[bool]]
    blocked: list[str]
    objective: float
    actions: Actions
    report: InrushReport
    nodes: int
    trigger: list[str] = field(default_factory=list)  # mitigation applied after this iteration


@dataclass
class StepLog:
    t: int
    label: str
    iterations: list[IterationLog]
    executed: Actions
    executed_report: InrushReport
    fail_safe: bool
    objective: float
    plant: PlantReport
    soc: dict[str, float]
    discharge_kwh: dict[str, float]
    voltages: dict[tuple[str, str], float]
    gfmi_v: dict[str, list[float]]
    blocks_on: list[str]
    reduction_active: dict[str, list[bool]]
    truncated: bool


@dataclass
class RestorationLog:
    steps: list[StepLog] = field(default_factory=list)
    complete: bool = False
    terminated_step: int | None = None
    warnings: list[str] = field(default_factory=list)
    runtime_s: float = 0.0
    index_maps: dict = field(default_factory=dict)

    def executed_flags(self) -> tuple[int, int]:
        """(#executed steps with a fuse flag, #with a recloser flag)."""
        fz = sum(1 for s in self.steps if s.executed_report.any_fuse)
        rc = sum(1 for s in self.steps if s.executed_report.any_recloser)
        return fz, rc

    def cumulative_discharge(self) -> np.ndarray:
        return np.array([sum(s.discharge_kwh.values()) for s in self.steps])

    # ----------------------------------------------------------------- output
    def to_dict(self) -> dict:
        def rep(r: InrushReport) -> dict:
            return {
                "theta_wc": r.theta_wc,
                "laterals": {k: v.tolist() for k, v in r.lateral_peak.items()},
                "fuse_flags": {k: v.astype(int).tolist() for k, v in r.fuse_flags.items()},
                "mg": {k: v.tolist() for k, v in r.mg_peak.items()},
                "recloser_flags": {k: v.astype(int).tolist() for k, v in r.recloser_flags.items()},
            }

        def acts(a: Actions) -> dict:
            return {"blocks": a.blocks, "esw": a.esws, "ssw": a.ssws, "tg": a.tg, "nl": a.nl}

        return {
            "complete": self.complete,
            "terminated_step": self.terminated_step,
            "warnings": self.warnings,
            "index_maps": self.index_maps,
            "steps": [
                {
                    "t": s.t,
                    "label": s.label,
                    "executed": acts(s.executed),
                    "fail_safe": s.fail_safe,
                    "objective": s.objective,
                    "blocks_on": s.blocks_on,
                    "soc": s.soc,
                    "discharge_kwh": s.discharge_kwh,
                    "gfmi_v_pu": s.gfmi_v,
                    "reduction_active": s.reduction_active,
                    "restored_kw": s.plant.load_kw,
                    "violations": s.plant.violations,
                    "window_truncated": s.truncated,
                    "iterations": [
                        {
                            "index": it.index,
                            "reduction": it.reduction,
                            "blocked": it.blocked,
                            "objective": it.objective,
                            "actions": acts(it.actions),
                            "nodes": it.nodes,
                            "mitigation": it.trigger,
                            "inrush": rep(it.report),
                        }
                        for it in s.iterations
                    ],
                }
                for s in self.steps
            ],
        }

    def write(self, out: str | Path) -> list[Path]:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "log.json").write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        f6 = lambda v: f"{v:.6g}"  # noqa: E731
        files = []

        def write(name, header, rows):
            p = out / name
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                w.writerows(rows)
            files.append(p)

        rows = []
        for s in self.steps:
            a = s.executed
            for kind, items in (("energize", a.blocks), ("close_esw", a.esws), ("close_ssw", a.ssws), ("tg_on", a.tg), ("pickup_nl", a.nl)):
                for it in items:
                    rows.append([s.t, s.label, kind, it, len(s.iterations)])
        write("cranking_path.csv", ["step", "label", "action", "element", "iterations"], rows)

        fr, rr = [], []
        for s in self.steps:
            for it in s.iterations:
                r = it.report
                executed = int(it.actions == s.executed and not s.fail_safe and it is s.iterations[-1])
                for lat in sorted(r.lateral_peak):
                    cur, fl = r.lateral_peak[lat], r.fuse_flags[lat]
                    fr.append([s.t, s.label, it.index, lat, r.lateral_block[lat], r.lateral_mg[lat], *map(f6, cur), *fl.astype(int), executed])
                for mg in sorted(r.mg_peak):
                    cur, fl = r.mg_peak[mg], r.recloser_flags[mg]
                    rr.append([s.t, s.label, it.index, mg, *map(f6, cur), *fl.astype(int), executed])
        write("inrush_fuses.csv", ["step", "label", "iteration", "lateral", "block", "mg", "iA", "iB", "iC", "flagA", "flagB", "flagC", "executed"], fr)
        write("inrush_reclosers.csv", ["step", "label", "iteration", "mg", "iA", "iB", "iC", "flagA", "flagB", "flagC", "executed"], rr)

        er = []
        for s in self.steps:
            for b in sorted(s.soc):
                p = s.plant.p_source.get(b, np.zeros(3))
                er.append([s.t, s.label, b, f6(float(np.sum(p))), f6(s.soc[b]), f6(s.discharge_kwh[b])])
        write("energy.csv", ["step", "label", "gfmi", "p_kw", "soc", "discharge_cum_kwh"], er)

        vr = []
        for s in self.steps:
            for (bus, ph), v in sorted(s.voltages.items()):
                if v > 0:
                    vr.append([s.t, s.label, bus, ph, f6(math.sqrt(v))])
        write("voltages.csv", ["step", "label", "bus", "phase", "v_pu"], vr)
        return files


# --------------------------------------------------------------------------


def inrush_check(feeder: Feeder, state: SystemState, plan: StepPlan, actions: Actions, angle_step: float = 1.0) -> InrushReport:
    """Inrush of the blocks a plan energizes in its first step."""
    g = feeder.graph
    if not actions.blocks:
        return InrushReport()
    on = {b.id: b.id in plan.blocks_on for b in g.blocks}
    closed = set(plan.closed)
    tg_on = {b: b in plan.tg_on for b in g.tg_buses}
    roots = microgrid_roots(feeder, on, closed, tg_on, through_ssw=False)
    energized = set(closed)
    for blk in g.blocks:
        if on[blk.id]:
            energized.update(blk.lines)
    bess = {d.bus: d for d in feeder.devices.bess}
    tgs = {d.bus: d for d in feeder.devices.tg}
    omega = 2 * math.pi * g.f_nom
    mgs: dict[str, MicrogridState] = {}
    pickups = []
    for blk in actions.blocks:
        root = roots.get(blk)
        if root is None:
            raise ControllerError(f"block {blk} energized without a source in the plan")
        if root not in mgs:
            z = bess[root].z_source if root in bess else tgs[root].z_source
            v = {ph: plan.v.get((root, ph), 0.0) for ph in PHASES}
            members = tuple(sorted(n for n, r in roots.items() if r == root))
            mgs[root] = MicrogridState(root, root, members, frozenset(energized), v, omega, z, g.kv_ln)
        pickups.append((mgs[root], blk))
    return evaluate_step(feeder, pickups, angle_step)


def _flags_from_state(state: SystemState, T: int, v_red: float) -> MitigationFlags:
    flags = MitigationFlags(v_red=v_red)
    for gf, r in sorted(state.reduction.items()):
        if r.until is None:
            steps = T
        elif r.until >= state.t:
            steps = r.until - state.t + 1
        else:
            continue
        flags = flags.with_reduction(gf, r.mask, steps)
    return flags


def _complete(feeder: Feeder, scenario: Scenario, state: SystemState) -> bool:
    if not state.all_blocks_on():
        return False
    if not all(state.w_on(b) for b in state.w_hist):
        return False
    if scenario.tg_first_available() is not None and feeder.devices.tg:
        g = feeder.graph
        for e in g.ssws:
            if (e.from_bus in g.tg_buses or e.to_bus in g.tg_buses) and not state.ssw_closed[e.id]:
                return False
    return True


SolveFn = Callable[[MilpInstance], Solution]


def run(feeder: Feeder, scenario: Scenario, config: RunConfig | None = None, solve_fn: SolveFn | None = None) -> RestorationLog:
    cfg = config or RunConfig()
    solve_fn = solve_fn or (lambda inst: solve(inst, cfg.solver))
    if not feeder.graph.gfmi_buses:
        raise ControllerError("feeder has no GFMI")
    t_start = time.perf_counter()
    g = feeder.graph
    state = initial_state(feeder, scenario)
    out = RestorationLog(index_maps={"bus": g.bus_index, "edge": g.edge_index, "block": g.block_index})
    soc0 = dict(state.soc)
    blocked_run: set[str] = set()

    while state.t < scenario.n_steps:
        t = state.t
        window = forecast(scenario, t, cfg.tc, cfg.noise, cfg.seed)
        flags = _flags_from_state(state, window.length, cfg.milp.v_red)
        for e in sorted(blocked_run):
            flags = flags.with_blocked(e, 1)
        iterations: list[IterationLog] = []
        chosen: RestorationPlan | None = None
        chosen_rep = InrushReport()
        new_reduction: dict[str, ActiveReduction] = {}
        for it in range(cfg.iter_cap):
            inst = build(feeder, scenario, state, window, flags, cfg.milp)
            sol = solve_fn(inst)
            if not sol.ok:
                raise ControllerError(f"step {window.labels[0]}: solver returned {sol.status} {sol.message}", inst)
            plan = extract_plan(inst, sol.x, feeder, state)
            rep = inrush_check(feeder, state, plan.first, plan.actions, cfg.angle_step)
            rec = IterationLog(
                it,
                {k: list(v[0]) for k, v in flags.reduction.items()},
                sorted(e for e, s in flags.blocked if s == 1),
                plan.objective,
                plan.actions,
                rep,
                sol.nodes,
            )
            iterations.append(rec)
            if rep.feasible or not cfg.mitigation:
                chosen, chosen_rep = plan, rep
                if not rep.feasible:
                    out.warnings.append(f"step {window.labels[0]}: executing inrush-infeasible action (mitigation off)")
                break
            changed = False
            for mg_id in sorted({m for lat, m in rep.lateral_mg.items() if rep.fuse_flags[lat].any()}):
                mask = voltage_reduction_mask(rep, mg_id, cfg.milp.per_lateral_mask)
                old = flags.reduction.get(mg_id, ((False,) * 3, 0))[0]
                if mask.any() and not all(o or not m for o, m in zip(old, mask)):
                    flags = flags.with_reduction(mg_id, tuple(mask), window.length)
                    trig = tuple(sorted({rep.lateral_block[l] for l, m in rep.lateral_mg.items() if m == mg_id}))
                    prev = new_reduction.get(mg_id)
                    merged = tuple(bool(a or b) for a, b in zip(prev.mask, mask)) if prev else tuple(bool(m) for m in mask)
                    new_reduction[mg_id] = ActiveReduction(merged, trig)
                    rec.trigger.append(f"voltage_reduction:{mg_id}:{''.join(p for p, m in zip(PHASES, mask) if m)}")
                    changed = True
            for mg_id in sorted(m for m, f in rep.recloser_flags.items() if f.any()):
                esw = blocking_candidate(feeder, rep, mg_id, set(plan.actions.esws))
                if esw is not None and (esw, 1) not in flags.blocked:
                    flags = flags.with_blocked(esw, 1)
                    if cfg.blocking_persist == "run":
                        blocked_run.add(esw)
                    rec.trigger.append(f"block_esw:{esw}")
                    changed = True
            if not changed:
                break
        fail_safe = chosen is None
        if fail_safe:
            out.warnings.append(f"step {window.labels[0]}: inrush infeasible after {len(iterations)} iterations; holding switches")
            hold = flags
            for e in g.esws:
                if not state.esw_closed[e.id]:
                    hold = hold.with_blocked(e.id, 1)
            inst = build(feeder, scenario, state, window, hold, cfg.milp)
            sol = solve_fn(inst)
            if not sol.ok:
                raise ControllerError(f"step {window.labels[0]}: hold problem {sol.status}", inst)
            chosen = extract_plan(inst, sol.x, feeder, state)
            chosen_rep = inrush_check(feeder, state, chosen.first, chosen.actions, cfg.angle_step)
            if chosen.actions.blocks:
                # only GFMI home blocks can appear here; they cannot be held back
                out.warnings.append(f"step {window.labels[0]}: source blocks {chosen.actions.blocks} energized during hold")

        # mitigation bookkeeping before the plant sees the step
        for gf, red in new_reduction.items():
            if not flags.reduction.get(gf):
                continue
            if cfg.reduction_persist == "step":
                red.until = t
            else:
                red.until = t + 2 if set(red.trigger_blocks) & set(chosen.actions.blocks) else t
            state.reduction[gf] = red

        state, prep = plant_apply(feeder, scenario, state, chosen.first, chosen.actions, cfg.milp)
        first = chosen.first
        out.steps.append(
            StepLog(
                t=t,
                label=scenario.labels[t],
                iterations=iterations,
                executed=chosen.actions,
                executed_report=chosen_rep,
                fail_safe=fail_safe,
                objective=chosen.objective,
                plant=prep,
                soc=dict(state.soc),
                discharge_kwh={b: (soc0[b] - state.soc[b]) * d.e_nom for b, d in ((d.bus, d) for d in feeder.devices.bess)},
                voltages=dict(state.v),
                gfmi_v={b: [math.sqrt(max(state.v.get((b, p), 0.0), 0.0)) for p in PHASES] for b in g.gfmi_buses},
                blocks_on=[b.id for b in g.blocks if state.block_on(b.id)],
                reduction_active={
                    gf: list(r.mask) for gf, r in state.reduction.items() if r.until is not None and r.until >= t
                },
                truncated=window.truncated,
            )
        )
        if _complete(feeder, scenario, state):
            out.complete = True
            out.terminated_step = t
            break
    out.runtime_s = time.perf_counter() - t_start
    return out
