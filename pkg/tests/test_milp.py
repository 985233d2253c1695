import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import KV_LN, enumerate_optimum, solve_and_compare, structural_violations, toy_case
from mpbs.config import MilpConfig
from mpbs.feeder import feeder_from_dict, scenario_from_dict
from mpbs.inrush import InrushReport, voltage_reduction_mask
from mpbs.milp import build, effective_rx, extract_plan, schedule_key, zip_coefficients
from mpbs.milp.build import drop_scale
from mpbs.solver import solve_embedded
from mpbs.state import MitigationFlags, forecast, initial_state


def _build(f, s, tc=2, flags=None, cfg=None):
    state = initial_state(f, s)
    return build(f, s, state, forecast(s, 0, tc), flags, cfg), state


def two_bus(zs=0.3 + 0.6j, zm=0.1 + 0.2j, kw=20.0):
    z = np.full((3, 3), zm)
    np.fill_diagonal(z, zs)
    d = {
        "name": "two_bus",
        "base": {"kv_ln": KV_LN, "f_nom": 60.0},
        "buses": [{"id": "G"}, {"id": "b"}],
        "edges": [{"id": "L", "from": "G", "to": "b", "r": z.real.tolist(), "x": z.imag.tolist()}],
        "blocks": [{"id": "B0", "buses": ["G", "b"]}],
        "laterals": [{"id": "LAT", "block": "B0", "buses": ["b"]}],
        "transformers": [{"id": f"DT{p}", "bus": "b", "phase": p, "kva": 25} for p in "ABC"],
        "protection": [
            {"id": "F", "kind": "fuse", "location": "LAT", "threshold": 1e6},
            {"id": "R", "kind": "recloser", "location": "G", "threshold": 1e6},
        ],
        "devices": {"bess": [{"bus": "G", "s_nom": 300.0, "e_nom": 500.0}]},
    }
    sc = {"steps": 1, "loads": {"b": {"class": "CL", "p": {p: kw for p in "ABC"}}}}
    return feeder_from_dict(d), scenario_from_dict(sc)


def test_dead_system_without_gfmi_gives_empty_plan():
    f, s = two_bus()
    from mpbs.feeder import feeder_to_dict

    raw = feeder_to_dict(f)
    raw["devices"]["bess"] = []
    raw["protection"] = [p for p in raw["protection"] if p["kind"] == "fuse"]
    f0 = feeder_from_dict(raw)
    inst, state = _build(f0, s, tc=1)
    sol = solve_embedded(inst)
    plan = extract_plan(inst, sol.x, f0, state)
    assert sol.ok and plan.objective == 0.0
    assert plan.actions.empty and not plan.first.blocks_on


def test_balanced_drop_equals_single_phase():
    zs, zm = 0.3 + 0.6j, 0.1 + 0.2j
    f, s = two_bus(zs, zm)
    inst, state = _build(f, s, tc=1)
    sol = solve_embedded(inst)
    x = dict(zip(inst.names, sol.x))
    z1 = zs - zm
    k = drop_scale(KV_LN)
    for ph in "ABC":
        p, q = x[f"p:L:{ph}:1"], x[f"q:L:{ph}:1"]
        assert x[f"p:L:A:1"] == pytest.approx(p, abs=1e-9)
        dv = x[f"v:b:{ph}:1"] - x[f"v:G:{ph}:1"]
        assert dv == pytest.approx(-2 * k * (z1.real * p + z1.imag * q), abs=1e-9)


@given(st.floats(0.01, 2.0), st.floats(0.0, 1.0), st.floats(0.01, 2.0), st.floats(0.0, 1.0))
def test_effective_rx_balanced_rows(rs, rm, xs, xm):
    z = np.full((3, 3), complex(rm, xm))
    np.fill_diagonal(z, complex(rs, xs))
    rt, xt = effective_rx(z)
    assert np.allclose(rt.sum(axis=1), rs - rm, atol=1e-12)
    assert np.allclose(xt.sum(axis=1), xs - xm, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.81, 1.21), st.floats(0.9, 1.1))
def test_zip_linearisation_error_within_ten_percent(v_m, rel):
    v = v_m * rel
    approx = v / (2 * math.sqrt(v_m)) + math.sqrt(v_m) / 2
    assert abs(math.sqrt(v) - approx) <= 0.0013


def test_zip_coefficients_exact_at_expansion_point():
    for vm in (0.81, 1.0, 1.1025):
        a, k0 = zip_coefficients(0.2, 0.3, 0.5, vm)
        assert a * vm + k0 == pytest.approx(0.2 * vm + 0.3 * math.sqrt(vm) + 0.5, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_toy_solutions_are_structurally_sound(seed):
    f, s = toy_case(np.random.default_rng(seed), steps=3)
    inst, state = _build(f, s, tc=3)
    inst.check()
    sol = solve_embedded(inst)
    if not sol.ok:
        return
    assert structural_violations(inst, sol.x, f) == []
    # McCormick products equal the true product at integral points
    x = dict(zip(inst.names, sol.x))
    for name, val in x.items():
        if not name.startswith("z:"):
            continue
        _, key, ph, t = name.split(":")
        bus, j = key.split("@")
        sym = f"uBB:{f.graph.block_of_bus[bus]}::{j}"
        if s.load_at[bus].cls == "NL":
            sym = f"w:{bus}::{j}"
        u = round(x[sym])
        assert val == pytest.approx(u * x[f"pZIP:{bus}:{ph}:{t}"], abs=1e-6)


def test_three_step_toy_matches_enumeration():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 3:
        f, s = toy_case(rng, steps=3)
        if any(ld.cls == "NL" for ld in s.loads):
            continue
        inst, state = _build(f, s, tc=3)
        ok, msg = solve_and_compare(inst, f, state)
        assert ok, msg
        checked += 1


def test_reduction_needs_every_lateral_flagged():
    rep = InrushReport()
    for lat, flag in (("L1", [True, False, False]), ("L2", [True, True, False])):
        rep.lateral_mg[lat] = "G"
        rep.lateral_peak[lat] = np.array([10.0, 10.0, 0.0])
        rep.fuse_flags[lat] = np.array(flag)
    assert voltage_reduction_mask(rep, "G").tolist() == [True, False, False]
    assert voltage_reduction_mask(rep, "G", per_lateral=True).tolist() == [True, True, False]
    rep.fuse_flags["L1"] = np.array([False, False, False])
    assert not voltage_reduction_mask(rep, "G").any()


def test_reduction_sets_gfmi_bounds(fuse_case):
    f, s = fuse_case
    cfg = MilpConfig()
    flags = MitigationFlags(v_red=cfg.v_red).with_reduction("G", (True, False, False), 1)
    inst, _ = _build(f, s, tc=2, flags=flags)
    rows = {n: i for i, n in enumerate(inst.row_names)}

    def rhs(name):
        return inst.rhs[rows[name]]

    assert rhs("voltage_reduction:floor[G,A,1]") == cfg.v_red == rhs("voltage_reduction:ceil[G,A,1]")
    assert rhs("voltage_reduction:floor[G,B,1]") == cfg.v_floor
    assert rhs("voltage_reduction:floor[G,A,2]") == cfg.v_floor


def test_blocked_switch_stays_open(recloser_case):
    f, s = recloser_case
    flags = MitigationFlags().with_blocked("ESW_ab", 1)
    inst, state = _build(f, s, tc=2, flags=flags)
    sol = solve_embedded(inst)
    plan = extract_plan(inst, sol.x, f, state)
    assert "ESW_ab" not in plan.first.esw_closed


def test_instance_bookkeeping(fuse_case):
    f, s = fuse_case
    inst, _ = _build(f, s, tc=3)
    inst.check()
    assert set(inst.big_m) >= {"flow", "voltage", "frequency"}
    assert all(math.isfinite(v) for v in inst.big_m.values())
    assert np.all(inst.lb[inst.binary] >= 0) and np.all(inst.ub[inst.binary] <= 1)
    assert len(set(inst.names)) == inst.n_vars


def test_plan_rejects_fractional_binaries(fuse_case):
    from mpbs.milp import PlanError

    f, s = fuse_case
    inst, state = _build(f, s, tc=1)
    x = solve_embedded(inst).x.copy()
    j = int(np.flatnonzero(inst.binary)[0])
    x[j] = 0.5
    with pytest.raises(PlanError):
        extract_plan(inst, x, f, state)
