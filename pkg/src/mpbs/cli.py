"""Command line: ``mpbs run | inrush | validate``."""
from __future__ import annotations

import argparse
import logging
import math
import sys
from collections import deque
from pathlib import Path

from .config import RunConfig, SolverOptions
from .controller import ControllerError, run
from .feeder import Feeder, FeederError, load_scenario, parse_feeder, validate_feeder, validate_scenario
from .inrush import MicrogridState, sweep_table, worst_case_angle, write_inrush_csv
from .solver import SolverError, backend_from_env

EXIT_OK, EXIT_CONFIG, EXIT_PARSE, EXIT_SOLVE, EXIT_INTERNAL = 0, 2, 3, 4, 5

log = logging.getLogger("mpbs")


class ConfigError(ValueError):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpbs", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run the receding-horizon restoration")
    r.add_argument("--feeder", required=True)
    r.add_argument("--scenario", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--solver", default=None, help="embedded | external:<path> (env MPBS_EXTERNAL_SOLVER overrides the default)")
    r.add_argument("--tc", type=int, default=4, help="look-ahead window in steps")
    r.add_argument("--iter-cap", type=int, default=3)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--noise", type=float, default=0.0, help="relative PV forecast noise")
    r.add_argument("--no-mitigation", action="store_true")
    r.add_argument("--reduction-persist", choices=("clpu", "step"), default="clpu")
    r.add_argument("--blocking-persist", choices=("step", "run"), default="step")
    r.add_argument("--time-limit", type=float, default=600.0, help="per-solve limit in seconds")

    i = sub.add_parser("inrush", help="peak inrush versus closing angle for one block")
    i.add_argument("--feeder", required=True)
    i.add_argument("--block", required=True)
    i.add_argument("--angles", default="0,30,60,90", help="comma-separated degrees")
    i.add_argument("--source", default=None, help="GFMI bus feeding the block (default: nearest)")
    i.add_argument("--v", type=float, default=1.0, help="source voltage, pu")
    i.add_argument("--out", default=None, help="CSV path (default stdout)")

    v = sub.add_parser("validate", help="check feeder (and scenario) invariants")
    v.add_argument("--feeder", required=True)
    v.add_argument("--scenario", default=None)
    return p


def _spanning_edges(feeder: Feeder, source: str) -> tuple[frozenset[str], dict[str, int]]:
    """BFS tree over all edges from ``source``; returns tree edges and hop depth per bus."""
    g = feeder.graph
    adj = g.adjacency(None)
    depth = {source: 0}
    tree = set()
    q = deque([source])
    while q:
        u = q.popleft()
        for w, eid in adj[u]:
            if w not in depth:
                depth[w] = depth[u] + 1
                tree.add(eid)
                q.append(w)
    return frozenset(tree), depth


def pickup_microgrid(feeder: Feeder, block: str, source: str | None = None, v_pu: float = 1.0) -> MicrogridState:
    """Microgrid that energizes ``block`` from ``source`` (nearest GFMI by hop count if None)."""
    g = feeder.graph
    if block not in g.block_index:
        raise ConfigError(f"unknown block {block!r}")
    if not g.gfmi_buses:
        raise ConfigError("feeder has no GFMI")
    head = g.block[block].buses[0]
    if source is None:
        best = None
        for gf in sorted(g.gfmi_buses):
            _, depth = _spanning_edges(feeder, gf)
            if head in depth and (best is None or depth[head] < best[0]):
                best = (depth[head], gf)
        if best is None:
            raise ConfigError(f"block {block} is not reachable from any GFMI")
        source = best[1]
    if source not in g.gfmi_buses:
        raise ConfigError(f"{source!r} is not a GFMI bus")
    tree, _ = _spanning_edges(feeder, source)
    bess = feeder.bess_at.get(source)
    return MicrogridState(
        id=source,
        source_bus=source,
        blocks=(block,),
        energized_edges=tree,
        v_source={ph: v_pu**2 for ph in ("A", "B", "C")},
        omega=2 * math.pi * g.f_nom,
        z_source=bess.z_source if bess is not None else 0j,
        kv_ln=g.kv_ln,
    )


def cmd_inrush(args) -> int:
    feeder = parse_feeder(args.feeder)
    try:
        angles = [float(a) for a in args.angles.split(",") if a.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --angles {args.angles!r}") from exc
    mg = pickup_microgrid(feeder, args.block, args.source, args.v)
    rows = sweep_table(feeder, mg, args.block, angles)
    theta_wc, cur = worst_case_angle(feeder, mg, args.block)
    for r in rows:
        r["wc"] = int(r["theta_deg"] == theta_wc)
    fields = ["theta_deg", "iA", "iB", "iC", "max", "phase", "wc"]
    if args.out:
        write_inrush_csv(args.out, rows, fields)
    else:
        write_inrush_csv("/dev/stdout", rows, fields)
    print(f"# theta_WC = {theta_wc:g} deg, peak {max(cur):.6g} A", file=sys.stderr)
    return EXIT_OK


def cmd_validate(args) -> int:
    violations: list[str] = []
    try:
        feeder = parse_feeder(args.feeder, strict=False)
        violations += validate_feeder(feeder)
    except FeederError as exc:
        violations.append(str(exc))
        feeder = None
    if args.scenario and feeder is not None:
        try:
            sc = load_scenario(args.scenario)
            violations += validate_scenario(feeder, sc)
        except FeederError as exc:
            violations.append(str(exc))
    print(f"{len(violations)} violations")
    for v in violations:
        print(f"  {v}")
    return EXIT_OK if not violations else 1


def cmd_run(args) -> int:
    backend = args.solver or backend_from_env()
    if not (backend == "embedded" or backend.startswith("external:")):
        raise ConfigError(f"unknown solver backend {backend!r}")
    try:
        cfg = RunConfig(
            tc=args.tc,
            iter_cap=args.iter_cap,
            mitigation=not args.no_mitigation,
            noise=args.noise,
            seed=args.seed,
            reduction_persist=args.reduction_persist,
            blocking_persist=args.blocking_persist,
            solver=SolverOptions(backend=backend, time_limit=args.time_limit),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    feeder = parse_feeder(args.feeder)
    scenario = load_scenario(args.scenario)
    problems = validate_feeder(feeder) + validate_scenario(feeder, scenario)
    if problems:
        raise FeederError("; ".join(problems))
    try:
        result = run(feeder, scenario, cfg)
    except ControllerError as exc:
        if exc.instance is not None:
            from .mpsio import write_mps

            write_mps(exc.instance, out / "failed_instance.mps")
        raise
    result.write(out)
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    fz, rc = result.executed_flags()
    status = "complete" if result.complete else "incomplete"
    print(f"{status} after {len(result.steps)} steps; executed fuse-flag steps {fz}, recloser-flag steps {rc}; {result.runtime_s:.2f}s")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": cmd_run, "inrush": cmd_inrush, "validate": cmd_validate}[args.cmd]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, FeederError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ControllerError, SolverError) as exc:
        print(f"solve error: {exc}", file=sys.stderr)
        return EXIT_SOLVE
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
