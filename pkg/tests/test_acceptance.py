"""Acceptance criteria 1-9; each test records a PASS/FAIL line shown in the terminal summary."""
import math
import os
import time

import numpy as np
import pytest

from conftest import FIXTURES, SCRIPTS, record
from helpers import CheckedSolver, solve_and_compare, toy_case
from mpbs.cli import main, pickup_microgrid
from mpbs.config import RunConfig, SolverOptions
from mpbs.controller import run
from mpbs.emt import EnergizationCase, simulate_energization
from mpbs.inrush import evaluate_step, sweep_table
from mpbs.milp import build
from mpbs.solver import solve_external
from mpbs.state import forecast, initial_state

BENCH_KA = {0: 0.6440, 30: 0.5901, 60: 0.4428, 90: 0.3759}
BENCH_PHASE = {0: "A", 30: "A", 60: "A", 90: "C"}


def _check(n, ok, detail):
    record(n, bool(ok), detail)
    assert ok, detail


def test_1_bench_dt_reproduction(bench_feeder, tmp_path):
    t0 = time.perf_counter()
    out = tmp_path / "t1.csv"
    rc = main(["inrush", "--feeder", str(FIXTURES / "bench_feeder.json"), "--block", "B1", "--angles", "0,30,60,90", "--out", str(out)])
    dt = time.perf_counter() - t0
    rows = {}
    for line in out.read_text().splitlines()[1:]:
        th, ia, ib, ic, mx, ph, _ = line.split(",")
        rows[int(float(th))] = {"A": float(ia), "B": float(ib), "C": float(ic), "phase": ph}
    got = {th: round(rows[th][BENCH_PHASE[th]] / 1000, 4) for th in BENCH_KA}
    ok = rc == 0 and got == BENCH_KA and rows[90]["phase"] == "C" and dt < 1.0
    _check(1, ok, f"estimates {got} kA, 90 deg saturates {rows[90]['phase']}, {dt:.2f}s")


def test_2_estimator_vs_oracle(bench_feeder):
    t0 = time.perf_counter()
    g = bench_feeder.graph
    mg = pickup_microgrid(bench_feeder, "B1")
    est = {int(r["theta_deg"]): r for r in sweep_table(bench_feeder, mg, "B1", list(BENCH_KA))}
    z = g.edge["L_SK"].self_impedance("A") + mg.z_source
    specs = {s.phase: s for s in g.transformers}
    errs = {}
    for th in BENCH_KA:
        ph = BENCH_PHASE[th]
        wf = simulate_energization(EnergizationCase(specs, g.kv_ln * 1e3, z.real, z.imag, float(th), cycles=2.0, dt=1e-4))
        errs[th] = abs(est[th]["i" + ph] - wf.peak[ph]) / wf.peak[ph]
    dt = time.perf_counter() - t0
    ok = max(errs.values()) <= 0.10 and dt < 30
    _check(2, ok, "relative errors " + ", ".join(f"{k}deg {v:.1%}" for k, v in errs.items()) + f", {dt:.1f}s")


def test_3_voltage_reduction(fuse_case):
    f, s = fuse_case
    t0 = time.perf_counter()
    mg = pickup_microgrid(f, "B1", v_pu=1.05)
    cur = evaluate_step(f, [(mg, "B1")]).lateral_peak["LAT1"][0]
    excess = cur / f.fuse_of_lateral["LAT1"].threshold["A"] - 1
    log = run(f, s, RunConfig())
    dt = time.perf_counter() - t0
    resolves = sum(1 for st in log.steps for it in st.iterations if any(tr.startswith("voltage_reduction") for tr in it.trigger))
    affected = [st for st in log.steps if st.reduction_active]
    v = [st.gfmi_v["G"][0] for st in affected]
    ok = (
        0.10 <= excess <= 0.25
        and resolves >= 1
        and log.executed_flags()[0] == 0
        and affected
        and all(abs(x - 0.8) < 1e-6 for x in v)
        and dt < 120
    )
    _check(3, ok, f"excess {excess:.1%}, {resolves} reduction re-solve(s), GFMI v {v}, executed fuse flags {log.executed_flags()[0]}, {dt:.1f}s")


def test_4_switch_blocking(recloser_case):
    f, s = recloser_case
    t0 = time.perf_counter()
    log = run(f, s, RunConfig())
    dt = time.perf_counter() - t0
    first = next(st for st in log.steps if st.iterations[0].report.any_recloser)
    tripped = first.iterations[0].report
    scores = {
        blk: sum(float(tripped.lateral_peak[l].sum()) for l, b in tripped.lateral_block.items() if b == blk)
        for blk in tripped.block_mg
    }
    worst = max(scores, key=scores.get)
    expect = [e.id for e in f.graph.block_esws(worst) if e.id in first.iterations[0].actions.esws][0]
    blocked = [tr for it in first.iterations for tr in it.trigger if tr.startswith("block_esw")]
    pickup = {b: st.t for st in reversed(log.steps) for b in st.executed.blocks}
    staggered = pickup.get("B1") is not None and pickup.get("B2") is not None and pickup["B1"] != pickup["B2"]
    ok = tripped.any_recloser and blocked == [f"block_esw:{expect}"] and staggered and log.executed_flags()[1] == 0 and dt < 120
    _check(4, ok, f"blocked {blocked} (argmax {expect}), pickup steps {pickup}, executed recloser flags {log.executed_flags()[1]}, {dt:.1f}s")


def test_5_energy_ordering(fuse_case):
    f, s = fuse_case
    assert sum(s.zip[:2]) > 0
    with_red = run(f, s, RunConfig())
    without = run(f, s, RunConfig(mitigation=False))
    first = next(i for i, st in enumerate(with_red.steps) if st.reduction_active)
    a, b = with_red.cumulative_discharge(), without.cumulative_discharge()
    n = min(len(a), len(b))
    after = range(first + 1, n)
    ok = len(after) > 0 and all(a[i] < b[i] for i in after)
    _check(5, ok, f"cumulative kWh with reduction {np.round(a, 2).tolist()} vs without {np.round(b, 2).tolist()}")


def test_6_milp_enumeration():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    results = []
    while len(results) < 24:
        f, s = toy_case(rng)
        state = initial_state(f, s)
        inst = build(f, s, state, forecast(s, 0, 2))
        assert inst.n_binary <= 12
        results.append(solve_and_compare(inst, f, state))
    dt = time.perf_counter() - t0
    bad = [m for ok, m in results if not ok]
    ok = not bad and dt < 300
    _check(6, ok, f"{len(results) - len(bad)}/{len(results)} random toys match enumeration, {dt:.1f}s" + (f"; {bad[:2]}" if bad else ""))


def test_7_structural_invariants(fuse_case, recloser_case):
    solved, viol = 0, []
    for (f, s), cfg in (
        (fuse_case, RunConfig()),
        (fuse_case, RunConfig(mitigation=False)),
        (fuse_case, RunConfig(iter_cap=1)),
        (recloser_case, RunConfig()),
        (recloser_case, RunConfig(blocking_persist="run")),
    ):
        chk = CheckedSolver(f)
        run(f, s, cfg, solve_fn=chk)
        solved += chk.solved
        viol += chk.violations
    rng = np.random.default_rng(99)
    for _ in range(10):
        f, s = toy_case(rng, steps=3)
        chk = CheckedSolver(f)
        chk(build(f, s, initial_state(f, s), forecast(s, 0, 3)))
        solved += chk.solved
        viol += chk.violations
    _check(7, not viol and solved > 0, f"{solved} solved windows checked, {len(viol)} violation(s) {viol[:3]}")


def test_8_zip_linearisation_bound():
    v = np.linspace(0.81, 1.21, 400001)
    err = np.abs(np.sqrt(v) - (v / 2 + 0.5))
    worst = float(err.max())
    _check(8, worst <= 0.0013, f"max error {worst:.5f} pu at v = {v[int(np.argmax(err))]:.2f} pu^2 (bound 0.0013)")


@pytest.mark.skipif(os.environ.get("MPBS_SKIP_IEEE123") == "1", reason="full 123-node run disabled")
def test_9_ieee123_trajectory(ieee123):
    f, s = ieee123
    solver = str(SCRIPTS / "highs_solve.py")
    log = run(f, s, RunConfig(solver=SolverOptions(backend=f"external:{solver}", time_limit=300.0)))
    first = set(log.steps[0].executed.blocks)
    all_on = next((st.t for st in log.steps if len(st.blocks_on) == len(f.graph.blocks)), None)
    tg_step = s.tg_first_available()
    ssw = {st.t: st.executed.ssws for st in log.steps}
    tg_on = next((st.t for st in log.steps if st.executed.tg), None)
    sync = next((t for t, e in ssw.items() if e and t >= (tg_step or 0)), None)
    ok = first >= {"B1", "B8"} and all_on is not None and all_on <= 4 and tg_on is not None and sync is not None and sync >= tg_on
    _check(9, ok, f"step-1 blocks {sorted(first)}, all blocks on at step {all_on}, TG on at {tg_on}, SSW closed at {sync}")
