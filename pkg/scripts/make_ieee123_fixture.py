#!/usr/bin/env python3
"""Black-start variant of the IEEE 123-node feeder.

Line data follow the public OpenDSS model (lengths in kft, regulators
collapsed onto their input bus).  Spot loads are the nominal per-phase
values; each load phase gets single-phase DTs sized from its peak.
Two GFMI-based BESSs sit at 149 and 98, the TG at 150.  Eleven blocks are
formed with ten ESWs; the 150-149 and 151-300 switches synchronize.
"""
import argparse
import json
import math
import re
from pathlib import Path

import numpy as np

from mpbs.cli import pickup_microgrid
from mpbs.feeder import feeder_from_dict
from mpbs.inrush import evaluate_step

# id from to phases code length_kft
LINES = """
L1 1 2 B 10 0.175
L2 1 3 C 11 0.25
L3 1 7 ABC 1 0.3
L4 3 4 C 11 0.2
L5 3 5 C 11 0.325
L6 5 6 C 11 0.25
L7 7 8 ABC 1 0.2
L8 8 12 B 10 0.225
L9 8 9 A 9 0.225
L10 8 13 ABC 1 0.3
L11 9r 14 A 9 0.425
L12 13 34 C 11 0.15
L13 13 18 ABC 2 0.825
L14 14 11 A 9 0.25
L15 14 10 A 9 0.25
L16 15 16 C 11 0.375
L17 15 17 C 11 0.35
L18 18 19 A 9 0.25
L19 18 21 ABC 2 0.3
L20 19 20 A 9 0.325
L21 21 22 B 10 0.525
L22 21 23 ABC 2 0.25
L23 23 24 C 11 0.55
L24 23 25 ABC 2 0.275
L25 25r 26 AC 7 0.35
L26 25 28 ABC 2 0.2
L27 26 27 AC 7 0.275
L28 26 31 C 11 0.225
L29 27 33 A 9 0.5
L30 28 29 ABC 2 0.3
L31 29 30 ABC 2 0.35
L32 30 250 ABC 2 0.2
L33 31 32 C 11 0.3
L34 34 15 C 11 0.1
L35 35 36 AB 8 0.65
L36 35 40 ABC 1 0.25
L37 36 37 A 9 0.3
L38 36 38 B 10 0.25
L39 38 39 B 10 0.325
L40 40 41 C 11 0.325
L41 40 42 ABC 1 0.25
L42 42 43 B 10 0.5
L43 42 44 ABC 1 0.2
L44 44 45 A 9 0.2
L45 44 47 ABC 1 0.25
L46 45 46 A 9 0.3
L47 47 48 ABC 4 0.15
L48 47 49 ABC 4 0.25
L49 49 50 ABC 4 0.25
L50 50 51 ABC 4 0.25
L51 51 151 ABC 4 0.5
L52 52 53 ABC 1 0.2
L53 53 54 ABC 1 0.125
L54 54 55 ABC 1 0.275
L55 54 57 ABC 3 0.35
L56 55 56 ABC 1 0.275
L57 57 58 B 10 0.25
L58 57 60 ABC 3 0.75
L59 58 59 B 10 0.25
L60 60 61 ABC 5 0.55
L61 60 62 ABC 12 0.25
L62 62 63 ABC 12 0.175
L63 63 64 ABC 12 0.35
L64 64 65 ABC 12 0.425
L65 65 66 ABC 12 0.325
L66 67 68 A 9 0.2
L67 67 72 ABC 3 0.275
L68 67 97 ABC 3 0.25
L69 68 69 A 9 0.275
L70 69 70 A 9 0.325
L71 70 71 A 9 0.275
L72 72 73 C 11 0.275
L73 72 76 ABC 3 0.2
L74 73 74 C 11 0.35
L75 74 75 C 11 0.4
L76 76 77 ABC 6 0.4
L77 76 86 ABC 3 0.7
L78 77 78 ABC 6 0.1
L79 78 79 ABC 6 0.225
L80 78 80 ABC 6 0.475
L81 80 81 ABC 6 0.475
L82 81 82 ABC 6 0.25
L83 81 84 C 11 0.675
L84 82 83 ABC 6 0.25
L85 84 85 C 11 0.475
L86 86 87 ABC 6 0.45
L87 87 88 A 9 0.175
L88 87 89 ABC 6 0.275
L89 89 90 B 10 0.25
L90 89 91 ABC 6 0.225
L91 91 92 C 11 0.3
L92 91 93 ABC 6 0.225
L93 93 94 A 9 0.275
L94 93 95 ABC 6 0.3
L95 95 96 B 10 0.2
L96 97 98 ABC 3 0.275
L97 98 99 ABC 3 0.55
L98 99 100 ABC 3 0.3
L99 100 450 ABC 3 0.8
L100 101 102 C 11 0.225
L101 101 105 ABC 3 0.275
L102 102 103 C 11 0.325
L103 103 104 C 11 0.7
L104 105 106 B 10 0.225
L105 105 108 ABC 3 0.325
L106 106 107 B 10 0.575
L107 108 109 A 9 0.45
L108 108 300 ABC 3 1
L109 109 110 A 9 0.3
L110 110 111 A 9 0.575
L111 110 112 A 9 0.125
L112 112 113 A 9 0.525
L113 113 114 A 9 0.325
L114 135 35 ABC 4 0.375
L115 149 1 ABC 1 0.4
L116 152 52 ABC 1 0.4
L117 160r 67 ABC 6 0.35
L118 197 101 ABC 3 0.25
"""

# kW per phase at peak; three-phase spot loads list all three phases
LOADS = """
1 A40 2 B20 4 C40 5 C20 6 C40 7 A20 9 A40 10 A20 11 A40 12 B20 16 C40 17 C20 19 A40 20 A40
22 B40 24 C40 28 A40 29 A40 30 C40 31 C20 32 C20 33 A40 34 C40 35 A40 37 A40 38 B20 39 B20
41 C20 42 A20 43 B40 45 A20 46 A20 47 A105B105C105 48 A210B210C210 49 A35B70C35 50 C40 51 A20
52 A40 53 A40 55 A20 56 B20 58 B20 59 B20 60 A20 62 C40 63 A40 64 B75 65 A35B35C70 66 C75
68 A20 69 A40 70 A20 71 A40 73 C40 74 C40 75 C40 76 A105B70C70 77 B40 79 A40 80 B40 82 A40
83 C20 84 C20 85 C40 86 B20 87 B40 88 A40 90 B40 92 C40 94 A40 95 B20 96 B20 98 A40 99 B40
100 C40 102 C20 103 C40 104 C40 106 B40 107 B40 109 A40 111 A20 112 A20 113 A40 114 A20
"""

# ohm/mile; 3-phase overhead (codes 1-6) share one matrix, 12 is underground
Z_OH = np.array(
    [
        [0.4576 + 1.0780j, 0.1560 + 0.5017j, 0.1535 + 0.3849j],
        [0.1560 + 0.5017j, 0.4666 + 1.0482j, 0.1580 + 0.4236j],
        [0.1535 + 0.3849j, 0.1580 + 0.4236j, 0.4615 + 1.0651j],
    ]
)
Z_UG = np.array(
    [
        [1.5209 + 0.7521j, 0.5198 + 0.2775j, 0.4924 + 0.2157j],
        [0.5198 + 0.2775j, 1.5329 + 0.7162j, 0.5198 + 0.2775j],
        [0.4924 + 0.2157j, 0.5198 + 0.2775j, 1.5209 + 0.7521j],
    ]
)
Z_1PH = 1.3292 + 1.3475j

BLOCKS = {
    "B1": "149 1 2 3 4 5 6 7 8 9 10 11 12 13 14 15 16 17 34",
    "B2": "18 19 20 21 22 23 24 25 26 27 28 29 30 31 32 33 250",
    "B3": "135 35 36 37 38 39 40 41 42 43 44 45 46 47 48 49 50 51 151",
    "B4": "152 52 53 54 55 56 57 58 59 60 61",
    "B5": "62 63 64 65 66",
    "B6": "160 67 68 69 70 71 72 73 74 75 76 86",
    "B7": "77 78 79 80 81 82 83 84 85",
    "B8": "97 98 99 100 450",
    "B9": "87 88 89 90 91 92 93 94 95 96",
    "B10": "197 101 102 103 104 105 106 107",
    "B11": "108 109 110 111 112 113 114 300",
}
# lines turned into energizing switches, plus the feeder's own switches
ESW_FROM_LINES = {"L13", "L61", "L68", "L76", "L86", "L105"}
EXTRA_ESW = [("13", "152"), ("18", "135"), ("60", "160")]
EXTRA_ESW += [("97", "197")]
SSW = [("150", "149"), ("151", "300")]
GFMI = {"149": (2294.0, 3942.0), "98": (2222.0, 3587.0)}
TG_BUS, TG_KVA = "150", 5000.0
PV_TOTAL_KW = 965.0
WEAK_LATERALS = 2  # taps in B1 whose fuse is sized below the nominal inrush
DT_SIZES = (25, 50, 75, 100, 125, 150)


def _alias(b: str) -> str:
    return b[:-1] if b.endswith("r") else b  # regulator outputs merge with their inputs


def _z(code: int, phases: str, length_kft: float) -> tuple[list, list]:
    scale = length_kft / 5.28
    z = np.zeros((3, 3), dtype=complex)
    if len(phases) == 3:
        z = (Z_UG if code == 12 else Z_OH) * scale
    else:
        idx = ["ABC".index(p) for p in phases]
        for a in idx:
            for b in idx:
                z[a, b] = (Z_1PH if a == b else Z_OH[a, b]) * scale
    return np.round(z.real, 6).tolist(), np.round(z.imag, 6).tolist()


def _parse_loads() -> dict[str, dict[str, float]]:
    out = {}
    for tok in LOADS.split():
        if tok[0].isdigit():
            bus = tok
            out[bus] = {}
        else:
            for ph, kw in re.findall(r"([ABC])(\d+)", tok):
                out[bus][ph] = float(kw)
    return out


def _dt_sizes(kw: float, pf: float = 0.9) -> list[int]:
    kva = kw / pf
    out = []
    while kva > DT_SIZES[-1]:
        out.append(125)
        kva -= 125
    out.append(next(s for s in DT_SIZES if s >= kva))
    return out


def build(kv_ln: float, z_gfmi: complex) -> tuple[dict, dict]:
    edges, phases = [], {}
    for row in LINES.strip().splitlines():
        lid, a, b, ph, code, ln = row.split()
        a, b = _alias(a), _alias(b)
        for bus in (a, b):
            phases.setdefault(bus, set()).update(ph)
        r, x = _z(int(code), ph, float(ln))
        kind = "esw" if lid in ESW_FROM_LINES else "line"
        edges.append({"id": lid, "from": a, "to": b, "phases": ph, "kind": kind, "r": r, "x": x})
    for a, b in EXTRA_ESW:
        edges.append({"id": f"SW_{a}_{b}", "from": a, "to": b, "kind": "esw"})
    for a, b in SSW:
        edges.append({"id": f"SSW_{a}_{b}", "from": a, "to": b, "kind": "ssw"})
    for a, b in EXTRA_ESW + SSW:
        phases.setdefault(a, set()).update("ABC")
        phases.setdefault(b, set()).update("ABC")
    buses = [{"id": b, "phases": "".join(sorted(p))} for b, p in sorted(phases.items(), key=lambda kv: int(kv[0]))]

    blocks = {g: s.split() for g, s in BLOCKS.items()}
    block_of = {b: g for g, bs in blocks.items() for b in bs}
    children: dict[str, list[tuple[str, dict]]] = {}
    for e in edges:
        if e["kind"] == "line":
            children.setdefault(e["from"], []).append((e["to"], e))

    loads = _parse_loads()
    laterals, transformers = [], []
    in_tap: dict[str, str] = {}
    for e in edges:
        if e["kind"] != "line" or len(e["phases"]) == 3 or len(phases[e["from"]]) < 3:
            continue
        lat = f"LAT_{e['to']}"
        stack, members = [e["to"]], []
        while stack:
            u = stack.pop()
            members.append(u)
            stack.extend(v for v, _ in children.get(u, []))
        for m in members:
            in_tap[m] = lat
        laterals.append({"id": lat, "block": block_of[e["to"]], "buses": sorted(members, key=int), "head_edge": e["id"]})
    for g, bs in blocks.items():
        trunk = [b for b in bs if b not in in_tap]
        if any(b in loads for b in trunk):
            laterals.append({"id": f"LAT_{g}_main", "block": g, "buses": sorted(trunk, key=int)})
    for bus, per in sorted(loads.items(), key=lambda kv: int(kv[0])):
        for ph, kw in per.items():
            for k, kva in enumerate(_dt_sizes(kw)):
                transformers.append({"id": f"DT_{bus}{ph.lower()}{k}", "bus": bus, "phase": ph, "kva": kva})

    load_buses = sorted(loads, key=int)
    total = sum(sum(p.values()) for p in loads.values())
    pv_buses = load_buses[::4]
    pv_share = sum(sum(loads[b].values()) for b in pv_buses)
    pv = [
        {"bus": b, "s_nom": round(PV_TOTAL_KW * sum(loads[b].values()) / pv_share * 3 / len(phases[b]), 3)}
        for b in pv_buses
    ]
    feeder = {
        "name": "ieee123_bs",
        "base": {"kv_ln": kv_ln, "f_nom": 60.0},
        "buses": buses,
        "edges": edges,
        "blocks": [{"id": g, "buses": bs} for g, bs in blocks.items()],
        "laterals": laterals,
        "transformers": transformers,
        "protection": [{"id": f"F_{lat['id'][4:]}", "kind": "fuse", "location": lat["id"], "threshold": 1200.0} for lat in laterals]
        + [{"id": f"R_{b}", "kind": "recloser", "location": b, "threshold": 2600.0} for b in GFMI],
        "devices": {
            "bess": [
                {"bus": b, "s_nom": s, "e_nom": e, "soc_init": 1.0, "soc_min": 0.1, "z_source": [z_gfmi.real, z_gfmi.imag]}
                for b, (s, e) in GFMI.items()
            ],
            "pv": pv,
            "tg": [{"bus": TG_BUS, "s_max": TG_KVA}],
        },
    }
    cls = {b: ("CL" if i % 5 in (0, 1, 3) else "NL") for i, b in enumerate(load_buses)}
    n = 13
    scenario = {
        "dt_min": 15,
        "steps": n,
        "start": "09:00",
        "pv_rate": [round(0.35 + 0.45 * k / (n - 1), 4) for k in range(n)],
        "tg_available": [k >= 8 for k in range(n)],
        "loads": {b: {"class": cls[b], "p": loads[b]} for b in load_buses},
        "clpu": {"beta": [0.5, 0.3, 0.1]},
        "weights": {"CL": 10.0, "NL": 1.0},
        "zip": {"kZ": 0.2, "kI": 0.3, "kP": 0.5},
        "load_pf": {"pf": 0.9, "tan_phi": 0.484, "use": "tan_phi"},
    }
    print(f"{len(buses)} buses, {len(edges)} edges, {len(transformers)} DTs, {len(laterals)} laterals, "
          f"{len(loads)} load buses ({total:.0f} kW), {sum(1 for c in cls.values() if c == 'CL')} CL")
    return feeder, scenario


def size_protection(feeder: dict) -> None:
    """Fuses at 1.3x the 1.05 pu pickup inrush (min 1200 A), except the largest
    taps of B1, which sit between the reduced and nominal inrush; reclosers clear
    every single-block pickup by 10 %."""
    f = feeder_from_dict(feeder)
    lat_cur, block_max = {}, {}
    for blk in f.graph.blocks:
        mg = pickup_microgrid(f, blk.id, v_pu=1.05)
        rep = evaluate_step(f, [(mg, blk.id)])
        for lat, cur in rep.lateral_peak.items():
            lat_cur[lat] = float(cur.max())
        block_max[blk.id] = float(max(rep.mg_peak[mg.id].max(), 0.0))
    b1_taps = sorted(
        (lat for lat in lat_cur if lat.startswith("LAT_") and not lat.endswith("_main") and f.graph.lateral[lat].block == "B1"),
        key=lambda lat: -lat_cur[lat],
    )
    weak = set(b1_taps[:WEAK_LATERALS])
    for dev in feeder["protection"]:
        if dev["kind"] == "fuse":
            cur = lat_cur.get(dev["location"], 0.0)
            dev["threshold"] = round(cur / 1.15, 3) if dev["location"] in weak else round(max(1200.0, 1.3 * cur), 3)
        else:
            dev["threshold"] = round(max(2600.0, 1.1 * max(block_max.values())), 3)
    print("weak laterals:", sorted(weak), {k: round(lat_cur[k], 1) for k in weak})


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "fixtures"))
    args = ap.parse_args(argv)
    kv_ln = 4.16 / math.sqrt(3)
    # GFMI source impedance: the series circuit that reproduces the 100 kVA inrush validation
    z_tot = math.sqrt(2) * kv_ln * 1e3 / 402.51
    x_s = 2 * 0.025 * (kv_ln * 1e3) ** 2 / 100e3
    z_gfmi = complex(0.14, round(math.sqrt(z_tot**2 - 0.14**2) - x_s, 6))
    feeder, scenario = build(kv_ln, z_gfmi)
    size_protection(feeder)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ieee123_feeder.json").write_text(json.dumps(feeder, indent=1) + "\n")
    (out / "ieee123_scenario.json").write_text(json.dumps(scenario, indent=1) + "\n")


if __name__ == "__main__":
    main()
