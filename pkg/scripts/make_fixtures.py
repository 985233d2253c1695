#!/usr/bin/env python3
"""Write the small JSON fixtures under fixtures/.

bench      one 100 kVA DT per phase behind a calibrated series impedance
fuse_risk   3-block chain whose middle block overloads its lateral fuse at nominal voltage
recloser    2-block star whose simultaneous pickup trips the GFMI recloser
"""
from __future__ import annotations

import argparse
import json
import math
from pathlib import Path

import numpy as np

from mpbs.cli import pickup_microgrid
from mpbs.feeder import feeder_from_dict
from mpbs.inrush import evaluate_step

KV_LN = 4.16 / math.sqrt(3)
BENCH_ISS = 402.51  # A, peak-voltage convention
BENCH_R = 0.14  # ohm, external series resistance of the validation circuit
HUGE = 1e6


def _l_s(kva: float, vd_pct: float, f: float = 60.0) -> float:
    z_base = (KV_LN * 1e3) ** 2 / (kva * 1e3)
    return 2.0 * vd_pct / 100.0 * z_base / (2 * math.pi * f)


def bench() -> dict:
    x_s = 2 * math.pi * 60 * _l_s(100, 2.5)
    z_tot = math.sqrt(2) * KV_LN * 1e3 / BENCH_ISS
    x_ext = math.sqrt(z_tot**2 - BENCH_R**2) - x_s
    return {
        "name": "bench",
        "base": {"kv_ln": KV_LN, "f_nom": 60.0},
        "buses": [{"id": "S"}, {"id": "K"}, {"id": "N"}],
        "edges": [
            {"id": "L_SK", "from": "S", "to": "K", "r": BENCH_R, "x": x_ext},
            {"id": "ESW_KN", "from": "K", "to": "N", "kind": "esw"},
        ],
        "blocks": [{"id": "B0", "buses": ["S", "K"]}, {"id": "B1", "buses": ["N"]}],
        "laterals": [{"id": "LAT1", "block": "B1", "buses": ["N"]}],
        "transformers": [{"id": f"DT_{p}", "bus": "N", "phase": p, "kva": 100} for p in "ABC"],
        "protection": [
            {"id": "F1", "kind": "fuse", "location": "LAT1", "threshold": HUGE},
            {"id": "R1", "kind": "recloser", "location": "S", "threshold": HUGE},
        ],
        "devices": {"bess": [{"bus": "S", "s_nom": 500.0, "e_nom": 1000.0}]},
    }


def _line(eid, a, b, r=0.3, x=0.6, phases="ABC"):
    return {"id": eid, "from": a, "to": b, "r": r, "x": x, "phases": phases}


def _peak(feeder_d: dict, block: str, lat: str, v_pu: float) -> np.ndarray:
    f = feeder_from_dict(feeder_d)
    mg = pickup_microgrid(f, block, v_pu=v_pu)
    return evaluate_step(f, [(mg, block)]).lateral_peak[lat]


def fuse_risk(excess: float = 1.2) -> dict:
    d = {
        "name": "fuse_risk",
        "base": {"kv_ln": KV_LN, "f_nom": 60.0},
        "buses": [{"id": b} for b in ("G", "a", "b", "c", "d", "e", "f")],
        "edges": [
            _line("L_Ga", "G", "a"),
            {"id": "ESW_ab", "from": "a", "to": "b", "kind": "esw"},
            _line("L_bc", "b", "c"),
            _line("L_cd", "c", "d"),
            {"id": "ESW_de", "from": "d", "to": "e", "kind": "esw"},
            _line("L_ef", "e", "f"),
        ],
        "blocks": [
            {"id": "B0", "buses": ["G", "a"]},
            {"id": "B1", "buses": ["b", "c", "d"]},
            {"id": "B2", "buses": ["e", "f"]},
        ],
        "laterals": [
            {"id": "LAT1", "block": "B1", "buses": ["c", "d"]},
            {"id": "LAT2", "block": "B2", "buses": ["f"]},
        ],
        "transformers": [
            {"id": "DT_c1", "bus": "c", "phase": "A", "kva": 50},
            {"id": "DT_c2", "bus": "c", "phase": "A", "kva": 50},
            {"id": "DT_d1", "bus": "d", "phase": "A", "kva": 25},
            {"id": "DT_f1", "bus": "f", "phase": "B", "kva": 25},
        ],
        "protection": [
            {"id": "F1", "kind": "fuse", "location": "LAT1", "threshold": HUGE},
            {"id": "F2", "kind": "fuse", "location": "LAT2", "threshold": HUGE},
            {"id": "R1", "kind": "recloser", "location": "G", "threshold": HUGE},
        ],
        "devices": {"bess": [{"bus": "G", "s_nom": 600.0, "e_nom": 2000.0, "soc_init": 0.9, "z_source": [0.05, 0.5]}]},
    }
    # threshold such that the 1.05 pu pickup exceeds it by ``excess``
    pk = _peak(d, "B1", "LAT1", 1.05)
    d["protection"][0]["threshold"] = {"A": round(float(pk[0]) / excess, 3), "B": HUGE, "C": HUGE}
    return d


def recloser() -> dict:
    d = {
        "name": "recloser",
        "base": {"kv_ln": KV_LN, "f_nom": 60.0},
        "buses": [{"id": b} for b in ("G", "a", "b", "c", "e", "f")],
        "edges": [
            _line("L_Ga", "G", "a"),
            {"id": "ESW_ab", "from": "a", "to": "b", "kind": "esw"},
            _line("L_bc", "b", "c"),
            {"id": "ESW_ae", "from": "a", "to": "e", "kind": "esw"},
            _line("L_ef", "e", "f"),
        ],
        "blocks": [
            {"id": "B0", "buses": ["G", "a"]},
            {"id": "B1", "buses": ["b", "c"]},
            {"id": "B2", "buses": ["e", "f"]},
        ],
        "laterals": [
            {"id": "LAT1", "block": "B1", "buses": ["c"]},
            {"id": "LAT2", "block": "B2", "buses": ["f"]},
        ],
        "transformers": [
            {"id": "DT_c1", "bus": "c", "phase": "A", "kva": 50},
            {"id": "DT_c2", "bus": "c", "phase": "A", "kva": 50},
            {"id": "DT_f1", "bus": "f", "phase": "A", "kva": 50},
        ],
        "protection": [
            {"id": "F1", "kind": "fuse", "location": "LAT1", "threshold": HUGE},
            {"id": "F2", "kind": "fuse", "location": "LAT2", "threshold": HUGE},
            {"id": "R1", "kind": "recloser", "location": "G", "threshold": HUGE},
        ],
        "devices": {"bess": [{"bus": "G", "s_nom": 600.0, "e_nom": 2000.0, "soc_init": 0.9, "z_source": [0.05, 0.5]}]},
    }
    i1 = _peak(d, "B1", "LAT1", 1.05)[0]
    i2 = _peak(d, "B2", "LAT2", 1.05)[0]
    # each block alone passes, both together trip (blocks may land on different angles,
    # so stay well below the same-angle sum)
    thr = max(i1, i2) * 1.05
    d["protection"][2]["threshold"] = {"A": round(float(thr), 3), "B": HUGE, "C": HUGE}
    return d


def chain_scenario(buses_cl: dict, buses_nl: dict | None = None, steps: int = 6, kw: float = 30.0) -> dict:
    loads = {b: {"class": "CL", "p": {p: kw * s for p in "ABC"}} for b, s in buses_cl.items()}
    for b, s in (buses_nl or {}).items():
        loads[b] = {"class": "NL", "p": {p: kw * s for p in "ABC"}}
    return {
        "dt_min": 15,
        "steps": steps,
        "start": "09:00",
        "pv_rate": 0.0,
        "tg_available": False,
        "loads": loads,
        "clpu": {"beta": [0.5, 0.3, 0.1]},
        "zip": {"kZ": 0.2, "kI": 0.3, "kP": 0.5},
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "fixtures"))
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "bench_feeder.json": bench(),
        "fuse_risk_feeder.json": fuse_risk(),
        "fuse_risk_scenario.json": chain_scenario({"a": 1.0, "c": 1.0, "f": 1.0}, {"d": 0.5}),
        "recloser_feeder.json": recloser(),
        "recloser_scenario.json": chain_scenario({"a": 1.0, "c": 1.0, "f": 1.0}),
    }
    for name, data in files.items():
        (out / name).write_text(json.dumps(data, indent=1) + "\n")
        print(out / name)


if __name__ == "__main__":
    main()
