import itertools
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SCRIPTS
from helpers import toy_case
from mpbs.config import SolverOptions
from mpbs.milp import InstanceBuilder, build
from mpbs.mpsio import read_mps, read_solution, write_lp, write_mps, write_solution
from mpbs.solver import SolverError, import_solution, lp_relaxation_value, solve, solve_embedded, solve_external
from mpbs.state import forecast, initial_state

HAND_MPS = """\
NAME          TINY
OBJSENSE
    MAX
ROWS
 N  OBJ
 L  CAP
 G  MIN
 E  LINK
COLUMNS
    MARKER                 'MARKER'                 'INTORG'
    X         OBJ       3.0        CAP       2.0
    X         LINK      1.0
    MARKER                 'MARKER'                 'INTEND'
    Y         OBJ       1.0        CAP       1.0
    Y         MIN       1.0
    Z         LINK      -1.0       MIN       1.0
RHS
    RHS       CAP       4.0        MIN       0.5
BOUNDS
 BV BND       X
 UP BND       Y         3.0
 UP BND       Z         1.0
ENDATA
"""


def knapsack(values, weights, cap):
    b = InstanceBuilder()
    for i, (v, w) in enumerate(zip(values, weights)):
        b.var(("x", str(i), "", 1), binary=True)
        b.obj(("x", str(i), "", 1), v)
    b.row("cap", "cap", {("x", str(i), "", 1): w for i, w in enumerate(weights)}, "<", cap)
    return b.build()


def test_hand_written_mps(tmp_path):
    (tmp_path / "t.mps").write_text(HAND_MPS)
    inst = read_mps(tmp_path / "t.mps")
    assert inst.names == ["X", "Y", "Z"]
    assert inst.binary.tolist() == [True, False, False]
    assert inst.c.tolist() == [3.0, 1.0, 0.0]
    assert inst.row_names == ["CAP", "MIN", "LINK"]
    assert inst.sense.tolist() == ["<", ">", "="]
    assert inst.rhs.tolist() == [4.0, 0.5, 0.0]
    assert inst.row_dict(0) == {"X": 2.0, "Y": 1.0}
    assert inst.row_dict(2) == {"X": 1.0, "Z": -1.0}
    assert inst.ub.tolist() == [1.0, 3.0, 1.0]
    sol = solve_embedded(inst)
    assert sol.objective == pytest.approx(5.0)
    assert sol.value("X") == 1.0


def test_mps_round_trip(fuse_case, tmp_path):
    f, s = fuse_case
    inst = build(f, s, initial_state(f, s), forecast(s, 0, 2))
    write_mps(inst, tmp_path / "a.mps")
    back = read_mps(tmp_path / "a.mps")
    assert back.names == inst.names
    assert back.row_names == inst.row_names
    assert np.array_equal(back.binary, inst.binary)
    assert np.array_equal(back.sense, inst.sense)
    assert np.allclose(back.c, inst.c, rtol=1e-15, atol=0)
    assert np.allclose(back.rhs, inst.rhs, rtol=1e-15, atol=0)
    assert np.allclose(back.lb, inst.lb) and np.allclose(back.ub, inst.ub)
    assert abs(back.A - inst.A).max() <= 1e-15 * abs(inst.A).max()
    write_lp(inst, tmp_path / "a.lp")
    assert "\nMaximize\n" in (tmp_path / "a.lp").read_text()


def test_large_export(tmp_path):
    b = InstanceBuilder()
    n = 12000
    for i in range(n):
        b.var(("y", str(i), "", 1), 0.0, 1.0)
    for i in range(n):
        b.row("r", str(i), {("y", str(i), "", 1): 1.0}, "<", 1.0)
    inst = b.build()
    size = write_mps(inst, tmp_path / "big.mps")
    assert size > 0 and read_mps(tmp_path / "big.mps").n_rows == n


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.tuples(st.integers(1, 30), st.integers(1, 20)), min_size=1, max_size=10),
    st.integers(0, 80),
)
def test_knapsack_matches_enumeration(items, cap):
    values, weights = zip(*items)
    inst = knapsack(values, weights, cap)
    sol = solve_embedded(inst)
    best = max(
        sum(v for v, z in zip(values, bits) if z)
        for bits in itertools.product((0, 1), repeat=len(values))
        if sum(w for w, z in zip(weights, bits) if z) <= cap
    )
    assert sol.ok and sol.objective == pytest.approx(best)
    assert inst.max_violation(sol.x) <= 1e-7
    assert lp_relaxation_value(inst) >= sol.objective - 1e-9


def test_determinism(fuse_case):
    f, s = fuse_case
    inst = build(f, s, initial_state(f, s), forecast(s, 0, 3))
    a, b = solve_embedded(inst), solve_embedded(inst)
    assert np.array_equal(a.x, b.x) and a.objective == b.objective and a.nodes == b.nodes


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6))
def test_relaxation_bounds_and_feasibility(seed):
    f, s = toy_case(np.random.default_rng(seed))
    inst = build(f, s, initial_state(f, s), forecast(s, 0, 2))
    sol = solve_embedded(inst)
    if not sol.ok:
        return
    assert lp_relaxation_value(inst) >= sol.objective - 1e-7 * max(1.0, abs(sol.objective))
    assert inst.max_violation(sol.x) <= 1e-7
    assert np.all(np.abs(sol.x[inst.binary] - np.round(sol.x[inst.binary])) <= 1e-6)
    assert sol.objective == pytest.approx(float(inst.c @ sol.x) + inst.obj_const, rel=1e-7)


def test_infeasible_reported():
    b = InstanceBuilder()
    b.var(("x", "", "", 1), binary=True)
    b.row("r", "r", {("x", "", "", 1): 1.0}, ">", 2.0)
    assert solve_embedded(b.build()).status == "infeasible"


def test_solution_file_round_trip(tmp_path):
    inst = knapsack([3, 4], [1, 1], 1)
    write_solution(tmp_path / "s.txt", inst.names, [0.0, 1.0], objective=4.0)
    vals, head = read_solution(tmp_path / "s.txt")
    assert vals == {"x:0::1": 0.0, "x:1::1": 1.0}
    sol = import_solution(tmp_path / "s.txt", inst)
    assert sol.objective == 4.0
    write_solution(tmp_path / "bad.txt", inst.names, [0.4, 1.0])
    with pytest.raises(SolverError):
        import_solution(tmp_path / "bad.txt", inst)


def test_external_backend_matches_embedded(fuse_case):
    f, s = fuse_case
    inst = build(f, s, initial_state(f, s), forecast(s, 0, 2))
    ext = solve_external(inst, str(SCRIPTS / "highs_solve.py"))
    emb = solve_embedded(inst)
    assert ext.ok and ext.objective == pytest.approx(emb.objective, rel=1e-6)


def test_backend_selection(monkeypatch, fuse_case):
    f, s = fuse_case
    inst = knapsack([1, 2], [1, 1], 1)
    monkeypatch.setenv("MPBS_EXTERNAL_SOLVER", str(SCRIPTS / "highs_solve.py"))
    from mpbs.solver import backend_from_env

    assert backend_from_env().startswith("external:")
    assert solve(inst, SolverOptions(backend=backend_from_env())).objective == pytest.approx(2.0)
    with pytest.raises(ValueError):
        solve(inst, SolverOptions(backend="cplex"))


def test_missing_external_binary():
    with pytest.raises(SolverError):
        solve_external(knapsack([1], [1], 1), "/nonexistent/solver")


def test_highs_script_usage():
    r = subprocess.run([sys.executable, str(SCRIPTS / "highs_solve.py")], capture_output=True, text=True)
    assert r.returncode == 2
