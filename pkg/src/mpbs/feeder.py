"""Feeder topology, devices, protection and scenario data.

Feeder and scenario files are JSON. Bus, edge and block ids are strings in
the files and mapped to dense integer indices in memory (``bus_index`` etc.).
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np

PHASES = ("A", "B", "C")
PHASE_INDEX = {p: i for i, p in enumerate(PHASES)}
EDGE_KINDS = ("line", "esw", "ssw")

# Distribution transformer table: capacity (kVA) -> (voltage drop %, load losses W)
DT_TABLE = {
    25: (1.0, 201.0),
    50: (1.5, 340.0),
    75: (2.0, 469.0),
    100: (2.5, 571.0),
    125: (3.2, 706.0),
    150: (4.0, 827.0),
}
DEFAULT_RESIDUAL_FLUX = {"A": 0.8, "B": -0.4, "C": -0.4}
LM_OVER_LS = 500.0

UNITS = {
    "power": "kW / kvar per phase",
    "apparent_power": "kVA (three-phase total for sources)",
    "energy": "kWh",
    "impedance": "ohm (3x3 phase frame A,B,C)",
    "voltage": "kV line-to-neutral (base); pu^2 for squared magnitudes",
    "current": "A (peak)",
    "flux": "pu of nominal peak flux",
    "inductance": "H",
    "time": "min for scenario steps, s for waveforms",
}


class FeederError(ValueError):
    """Schema, partition or consistency violation in an input file."""


def _phases(s: str | list[str]) -> tuple[str, ...]:
    ph = tuple(sorted(set(s), key=PHASE_INDEX.get)) if s else ()
    bad = [p for p in ph if p not in PHASE_INDEX]
    if bad:
        raise FeederError(f"unknown phase(s) {bad}")
    return ph


@dataclass(frozen=True)
class Bus:
    id: str
    phases: tuple[str, ...]


@dataclass(frozen=True, eq=False)
class Edge:
    id: str
    from_bus: str
    to_bus: str
    kind: str
    phases: tuple[str, ...]
    z: np.ndarray  # 3x3 complex, ohms

    def self_impedance(self, phase: str) -> complex:
        i = PHASE_INDEX[phase]
        return complex(self.z[i, i])


@dataclass(frozen=True)
class Block:
    id: str
    buses: tuple[str, ...]
    lines: tuple[str, ...]


@dataclass(frozen=True)
class Lateral:
    id: str
    block: str
    head_edge: str | None
    buses: tuple[str, ...]


@dataclass(frozen=True)
class TransformerSpec:
    id: str
    bus: str
    phase: str
    kva: float
    lambda_n: float
    lambda_s: float
    lambda_0: float
    l_s: float
    l_m: float
    r_w: float

    def __post_init__(self):
        if not (self.lambda_s > self.lambda_n > 0):
            raise FeederError(f"transformer {self.id}: need lambda_s > lambda_n > 0")
        if not abs(self.lambda_0) < self.lambda_s:
            raise FeederError(f"transformer {self.id}: |lambda_0| must be < lambda_s")
        if self.l_s <= 0:
            raise FeederError(f"transformer {self.id}: L_s must be positive")


@dataclass(frozen=True)
class ProtectionDevice:
    id: str
    kind: str  # fuse | recloser
    location: str  # lateral id (fuse) or GFMI bus id (recloser)
    threshold: dict[str, float]


@dataclass(frozen=True)
class Bess:
    bus: str
    s_nom: float
    e_nom: float
    soc_min: float = 0.1
    soc_max: float = 1.0
    soc_init: float = 1.0
    z_source: complex = 0j
    k_droop: float = 0.5  # Hz per pu of S_nom
    h_inertia: float = 5.0  # s
    k_nadir: float = 2.0  # Hz per pu step
    df_syn: float = 0.0  # Hz, applied on a synchronisation step


@dataclass(frozen=True)
class PV:
    bus: str
    s_nom: float


@dataclass(frozen=True)
class TG:
    bus: str
    s_max: float
    z_source: complex = 0j


@dataclass(frozen=True)
class DeviceFleet:
    bess: tuple[Bess, ...] = ()
    pv: tuple[PV, ...] = ()
    tg: tuple[TG, ...] = ()


@dataclass(frozen=True, eq=False)
class NetworkGraph:
    kv_ln: float
    f_nom: float
    buses: tuple[Bus, ...]
    edges: tuple[Edge, ...]
    blocks: tuple[Block, ...]
    laterals: tuple[Lateral, ...]
    transformers: tuple[TransformerSpec, ...]
    gfmi_buses: tuple[str, ...]
    tg_buses: tuple[str, ...]

    @cached_property
    def bus_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def edge_index(self) -> dict[str, int]:
        return {e.id: i for i, e in enumerate(self.edges)}

    @cached_property
    def block_index(self) -> dict[str, int]:
        return {g.id: i for i, g in enumerate(self.blocks)}

    @cached_property
    def bus(self) -> dict[str, Bus]:
        return {b.id: b for b in self.buses}

    @cached_property
    def edge(self) -> dict[str, Edge]:
        return {e.id: e for e in self.edges}

    @cached_property
    def block(self) -> dict[str, Block]:
        return {g.id: g for g in self.blocks}

    @cached_property
    def lateral(self) -> dict[str, Lateral]:
        return {lat.id: lat for lat in self.laterals}

    @cached_property
    def block_of_bus(self) -> dict[str, str]:
        return {b: g.id for g in self.blocks for b in g.buses}

    @cached_property
    def esws(self) -> tuple[Edge, ...]:
        return tuple(e for e in self.edges if e.kind == "esw")

    @cached_property
    def ssws(self) -> tuple[Edge, ...]:
        return tuple(e for e in self.edges if e.kind == "ssw")

    @cached_property
    def lines(self) -> tuple[Edge, ...]:
        return tuple(e for e in self.edges if e.kind == "line")

    def block_esws(self, g: str) -> tuple[Edge, ...]:
        """ESWs incident to block ``g`` (either terminal inside it)."""
        bb = self.block_of_bus
        return tuple(e for e in self.esws if g in (bb.get(e.from_bus), bb.get(e.to_bus)))

    def block_laterals(self, g: str) -> tuple[Lateral, ...]:
        return tuple(lat for lat in self.laterals if lat.block == g)

    @cached_property
    def lateral_of_bus(self) -> dict[str, str]:
        return {b: lat.id for lat in self.laterals for b in lat.buses}

    def block_transformers(self, g: str) -> tuple[TransformerSpec, ...]:
        members = set(self.block[g].buses)
        return tuple(t for t in self.transformers if t.bus in members)

    @cached_property
    def gfmi_block(self) -> dict[str, str]:
        return {b: self.block_of_bus[b] for b in self.gfmi_buses}

    def switch_terminal_buses(self, g: str) -> tuple[str, ...]:
        members = set(self.block[g].buses)
        out = []
        for e in self.edges:
            if e.kind == "line":
                continue
            for b in (e.from_bus, e.to_bus):
                if b in members and b not in out:
                    out.append(b)
        return tuple(out)

    def adjacency(self, edge_ids=None) -> dict[str, list[tuple[str, str]]]:
        """Undirected adjacency ``bus -> [(neighbour, edge id)]``, optionally restricted."""
        adj: dict[str, list[tuple[str, str]]] = {b.id: [] for b in self.buses}
        edges = self.edges if edge_ids is None else [self.edge[i] for i in edge_ids]
        for e in edges:
            adj[e.from_bus].append((e.to_bus, e.id))
            adj[e.to_bus].append((e.from_bus, e.id))
        return adj


@dataclass(frozen=True, eq=False)
class Feeder:
    graph: NetworkGraph
    devices: DeviceFleet
    protection: tuple[ProtectionDevice, ...]
    name: str = "feeder"

    @cached_property
    def fuse_of_lateral(self) -> dict[str, ProtectionDevice]:
        return {p.location: p for p in self.protection if p.kind == "fuse"}

    @cached_property
    def recloser_of_gfmi(self) -> dict[str, ProtectionDevice]:
        return {p.location: p for p in self.protection if p.kind == "recloser"}

    @cached_property
    def bess_at(self) -> dict[str, Bess]:
        return {b.bus: b for b in self.devices.bess}


# --------------------------------------------------------------------------
# transformer defaults


def default_transformer(
    id: str,
    bus: str,
    phase: str,
    kva: float,
    kv_ln: float,
    f_nom: float = 60.0,
    lambda_0: float | None = None,
    lambda_n: float = 1.0,
    lambda_s: float = 1.2,
) -> TransformerSpec:
    """Single-phase DT parameters derived from the capacity table."""
    key = int(round(kva))
    if key not in DT_TABLE:
        raise FeederError(f"transformer {id}: no table entry for {kva} kVA")
    vd_pct, loss_w = DT_TABLE[key]
    v = kv_ln * 1e3
    omega = 2 * math.pi * f_nom
    z_base = v**2 / (kva * 1e3)
    l_sc = vd_pct / 100.0 * z_base / omega
    l_s = 2.0 * l_sc
    i_rated = kva * 1e3 / v
    return TransformerSpec(
        id=id,
        bus=bus,
        phase=phase,
        kva=float(kva),
        lambda_n=lambda_n,
        lambda_s=lambda_s,
        lambda_0=DEFAULT_RESIDUAL_FLUX[phase] if lambda_0 is None else lambda_0,
        l_s=l_s,
        l_m=LM_OVER_LS * l_s,
        r_w=loss_w / i_rated**2,
    )


def dt_capacity_for(kva_needed: float) -> int:
    """Smallest tabulated DT capacity covering ``kva_needed``."""
    for cap in sorted(DT_TABLE):
        if cap >= kva_needed:
            return cap
    return max(DT_TABLE)


# --------------------------------------------------------------------------
# parsing


def _req(d: dict, key: str, where: str) -> Any:
    if key not in d:
        raise FeederError(f"{where}: missing field '{key}'")
    return d[key]


def _zmatrix(spec: dict, where: str) -> np.ndarray:
    z = np.zeros((3, 3), dtype=complex)
    r = spec.get("r", 0.0)
    x = spec.get("x", 0.0)
    phases = _phases(spec.get("phases", "ABC"))
    if np.isscalar(r) and np.isscalar(x):
        for p in phases:
            i = PHASE_INDEX[p]
            z[i, i] = complex(r, x)
        return z
    r = np.asarray(r, dtype=float)
    x = np.asarray(x, dtype=float)
    if r.shape != (3, 3) or x.shape != (3, 3):
        raise FeederError(f"{where}: r/x must be scalars or 3x3 matrices")
    return r + 1j * x


def _complex(v) -> complex:
    if v is None:
        return 0j
    if isinstance(v, (list, tuple)):
        return complex(v[0], v[1])
    return complex(v)


def feeder_from_dict(data: dict, name: str = "feeder", strict: bool = True) -> Feeder:
    base = data.get("base", {})
    kv_ln = float(base.get("kv_ln", 2.4018))
    f_nom = float(base.get("f_nom", 60.0))

    buses = []
    seen = set()
    for i, b in enumerate(_req(data, "buses", "feeder")):
        bid = str(_req(b, "id", f"buses[{i}]"))
        if bid in seen:
            raise FeederError(f"bus {bid}: duplicate id")
        seen.add(bid)
        buses.append(Bus(bid, _phases(b.get("phases", "ABC"))))
    bus_ph = {b.id: b.phases for b in buses}

    edges = []
    for i, e in enumerate(data.get("edges", [])):
        where = f"edges[{i}]"
        eid = str(_req(e, "id", where))
        fb, tb = str(_req(e, "from", where)), str(_req(e, "to", where))
        kind = str(e.get("kind", "line")).lower()
        if kind not in EDGE_KINDS:
            raise FeederError(f"edge {eid}: kind must be one of {EDGE_KINDS}")
        for b in (fb, tb):
            if b not in bus_ph:
                raise FeederError(f"edge {eid}: unknown bus {b}")
        ph = _phases(e.get("phases", "ABC"))
        if not set(ph) <= set(bus_ph[fb]) & set(bus_ph[tb]):
            raise FeederError(f"edge {eid}: phase inconsistency {ph} vs buses {fb},{tb}")
        edges.append(Edge(eid, fb, tb, kind, ph, _zmatrix({**e, "phases": "".join(ph)}, f"edge {eid}")))
    if len({e.id for e in edges}) != len(edges):
        raise FeederError("duplicate edge id")

    devices_d = data.get("devices", {})
    bess = tuple(
        Bess(
            bus=str(_req(d, "bus", "bess")),
            s_nom=float(_req(d, "s_nom", "bess")),
            e_nom=float(_req(d, "e_nom", "bess")),
            soc_min=float(d.get("soc_min", 0.1)),
            soc_max=float(d.get("soc_max", 1.0)),
            soc_init=float(d.get("soc_init", 1.0)),
            z_source=_complex(d.get("z_source")),
            k_droop=float(d.get("k_droop", 0.5)),
            h_inertia=float(d.get("h_inertia", 5.0)),
            k_nadir=float(d.get("k_nadir", 2.0)),
            df_syn=float(d.get("df_syn", 0.0)),
        )
        for d in devices_d.get("bess", [])
    )
    pv = tuple(PV(str(_req(d, "bus", "pv")), float(_req(d, "s_nom", "pv"))) for d in devices_d.get("pv", []))
    tg = tuple(
        TG(str(_req(d, "bus", "tg")), float(_req(d, "s_max", "tg")), _complex(d.get("z_source")))
        for d in devices_d.get("tg", [])
    )
    for dev in (*bess, *pv, *tg):
        if dev.bus not in bus_ph:
            raise FeederError(f"device at unknown bus {dev.bus}")
    for b in bess:
        if not (0.0 <= b.soc_min <= b.soc_init <= b.soc_max <= 1.0):
            raise FeederError(f"bess {b.bus}: SoC bounds must satisfy 0 <= min <= init <= max <= 1")
    gfmi = tuple(b.bus for b in bess)
    tgb = tuple(t.bus for t in tg)

    blocks = []
    line_ids = {e.id for e in edges if e.kind == "line"}
    for i, g in enumerate(_req(data, "blocks", "feeder")):
        gid = str(_req(g, "id", f"blocks[{i}]"))
        members = tuple(str(b) for b in _req(g, "buses", f"block {gid}"))
        mset = set(members)
        lines = tuple(
            e.id for e in edges if e.kind == "line" and e.from_bus in mset and e.to_bus in mset
        )
        blocks.append(Block(gid, members, lines))

    laterals = []
    for i, lat in enumerate(data.get("laterals", [])):
        lid = str(_req(lat, "id", f"laterals[{i}]"))
        laterals.append(
            Lateral(
                lid,
                str(_req(lat, "block", f"lateral {lid}")),
                lat.get("head_edge"),
                tuple(str(b) for b in _req(lat, "buses", f"lateral {lid}")),
            )
        )

    flux = {**DEFAULT_RESIDUAL_FLUX, **data.get("residual_flux", {})}
    transformers = []
    for i, t in enumerate(data.get("transformers", [])):
        where = f"transformers[{i}]"
        bus = str(_req(t, "bus", where))
        ph = str(_req(t, "phase", where))
        if ph not in PHASE_INDEX:
            raise FeederError(f"{where}: bad phase {ph}")
        tid = str(t.get("id", f"DT_{bus}_{ph}"))
        spec = default_transformer(
            tid,
            bus,
            ph,
            float(_req(t, "kva", where)),
            kv_ln,
            f_nom,
            lambda_0=float(t.get("lambda_0", flux[ph])),
            lambda_n=float(t.get("lambda_n", 1.0)),
            lambda_s=float(t.get("lambda_s", 1.2)),
        )
        overrides = {k: float(t[k]) for k in ("l_s", "l_m", "r_w") if k in t}
        if overrides:
            spec = TransformerSpec(**{**spec.__dict__, **overrides})
        transformers.append(spec)

    protection = []
    for i, p in enumerate(data.get("protection", [])):
        where = f"protection[{i}]"
        kind = str(_req(p, "kind", where))
        if kind not in ("fuse", "recloser"):
            raise FeederError(f"{where}: kind must be fuse or recloser")
        thr = _req(p, "threshold", where)
        if np.isscalar(thr):
            thr = {ph: float(thr) for ph in PHASES}
        thr = {str(k): float(v) for k, v in thr.items()}
        if any(not (v > 0) for v in thr.values()):
            raise FeederError(f"{where}: thresholds must be strictly positive")
        protection.append(ProtectionDevice(str(_req(p, "id", where)), kind, str(_req(p, "location", where)), thr))

    graph = NetworkGraph(
        kv_ln=kv_ln,
        f_nom=f_nom,
        buses=tuple(buses),
        edges=tuple(edges),
        blocks=tuple(blocks),
        laterals=tuple(laterals),
        transformers=tuple(transformers),
        gfmi_buses=gfmi,
        tg_buses=tgb,
    )
    feeder = Feeder(graph, DeviceFleet(bess, pv, tg), tuple(protection), name=str(data.get("name", name)))
    if strict:
        violations = validate_feeder(feeder)
        if violations:
            raise FeederError("; ".join(violations))
    return feeder


def parse_feeder(path: str | Path, strict: bool = True) -> Feeder:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"feeder file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FeederError(f"{path}: invalid JSON ({exc})") from exc
    return feeder_from_dict(data, name=path.stem, strict=strict)


def validate_feeder(feeder: Feeder) -> list[str]:
    """Every invariant violation, each naming the offending element."""
    g = feeder.graph
    out: list[str] = []
    tg = set(g.tg_buses)

    owner: dict[str, list[str]] = {}
    for blk in g.blocks:
        for b in blk.buses:
            owner.setdefault(b, []).append(blk.id)
            if b not in g.bus_index:
                out.append(f"block {blk.id}: unknown bus {b}")
    for b in g.buses:
        n = len(owner.get(b.id, []))
        if b.id in tg:
            if n:
                out.append(f"bus {b.id}: TG bus must not belong to a block")
        elif n == 0:
            out.append(f"bus {b.id}: not in any block (partition violation)")
        elif n > 1:
            out.append(f"bus {b.id}: in blocks {owner[b.id]} (partition violation)")
    bb = {b: v[0] for b, v in owner.items()}

    for e in g.edges:
        gf, gt = bb.get(e.from_bus), bb.get(e.to_bus)
        if e.kind == "line":
            if gf is None or gf != gt:
                out.append(f"edge {e.id}: line crosses blocks {gf}/{gt} (partition violation)")
        else:
            if gf == gt and gf is not None:
                out.append(f"edge {e.id}: switch inside block {gf}")
            if e.kind == "esw" and (gf is None or gt is None):
                out.append(f"edge {e.id}: ESW must join two blocks")

    for blk in g.blocks:
        members = set(blk.buses)
        if not members:
            out.append(f"block {blk.id}: empty")
            continue
        adj = {b: [] for b in members}
        for lid in blk.lines:
            e = g.edge[lid]
            adj[e.from_bus].append(e.to_bus)
            adj[e.to_bus].append(e.from_bus)
        start = blk.buses[0]
        seen = {start}
        q = deque([start])
        while q:
            u = q.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    q.append(v)
        if seen != members:
            out.append(f"block {blk.id}: not connected by its lines")
        if len(blk.lines) != len(members) - 1:
            out.append(f"block {blk.id}: lines do not form a tree")
        gf = [b for b in g.gfmi_buses if b in members]
        if len(gf) > 1:
            out.append(f"block {blk.id}: more than one GFMI ({gf})")

    for b in g.gfmi_buses:
        if b in tg or b not in bb:
            out.append(f"GFMI bus {b}: must lie in a block")

    dt_lat: dict[str, int] = {}
    for lat in g.laterals:
        if lat.block not in g.block_index:
            out.append(f"lateral {lat.id}: unknown block {lat.block}")
            continue
        for b in lat.buses:
            dt_lat[b] = dt_lat.get(b, 0) + 1
            if bb.get(b) != lat.block:
                out.append(f"lateral {lat.id}: bus {b} outside block {lat.block}")
    for t in g.transformers:
        if t.bus not in g.bus_index:
            out.append(f"transformer {t.id}: unknown bus {t.bus}")
            continue
        if t.phase not in g.bus[t.bus].phases:
            out.append(f"transformer {t.id}: phase {t.phase} absent at bus {t.bus}")
        n = dt_lat.get(t.bus, 0)
        if n != 1:
            out.append(f"transformer {t.id}: bus {t.bus} lies in {n} laterals (need exactly 1)")

    fuses = [p for p in feeder.protection if p.kind == "fuse"]
    fuse_loc = [p.location for p in fuses]
    for lat in g.laterals:
        if fuse_loc.count(lat.id) != 1:
            out.append(f"lateral {lat.id}: needs exactly one fuse, found {fuse_loc.count(lat.id)}")
    for p in fuses:
        if p.location not in g.lateral:
            out.append(f"fuse {p.id}: unknown lateral {p.location}")
    rec_loc = [p.location for p in feeder.protection if p.kind == "recloser"]
    for b in g.gfmi_buses:
        if rec_loc.count(b) != 1:
            out.append(f"GFMI {b}: needs exactly one recloser, found {rec_loc.count(b)}")
    return out


def feeder_to_dict(feeder: Feeder) -> dict:
    """Inverse of :func:`feeder_from_dict` (explicit transformer parameters)."""
    g = feeder.graph

    def z_out(e: Edge) -> dict:
        return {"r": np.real(e.z).tolist(), "x": np.imag(e.z).tolist()}

    return {
        "name": feeder.name,
        "units": UNITS,
        "base": {"kv_ln": g.kv_ln, "f_nom": g.f_nom},
        "buses": [{"id": b.id, "phases": "".join(b.phases)} for b in g.buses],
        "edges": [
            {"id": e.id, "from": e.from_bus, "to": e.to_bus, "kind": e.kind, "phases": "".join(e.phases), **z_out(e)}
            for e in g.edges
        ],
        "blocks": [{"id": b.id, "buses": list(b.buses)} for b in g.blocks],
        "laterals": [
            {"id": lat.id, "block": lat.block, "head_edge": lat.head_edge, "buses": list(lat.buses)}
            for lat in g.laterals
        ],
        "transformers": [
            {
                "id": t.id,
                "bus": t.bus,
                "phase": t.phase,
                "kva": t.kva,
                "lambda_0": t.lambda_0,
                "lambda_n": t.lambda_n,
                "lambda_s": t.lambda_s,
                "l_s": t.l_s,
                "l_m": t.l_m,
                "r_w": t.r_w,
            }
            for t in g.transformers
        ],
        "protection": [
            {"id": p.id, "kind": p.kind, "location": p.location, "threshold": dict(p.threshold)}
            for p in feeder.protection
        ],
        "devices": {
            "bess": [
                {
                    "bus": b.bus,
                    "s_nom": b.s_nom,
                    "e_nom": b.e_nom,
                    "soc_min": b.soc_min,
                    "soc_max": b.soc_max,
                    "soc_init": b.soc_init,
                    "z_source": [b.z_source.real, b.z_source.imag],
                    "k_droop": b.k_droop,
                    "h_inertia": b.h_inertia,
                    "k_nadir": b.k_nadir,
                    "df_syn": b.df_syn,
                }
                for b in feeder.devices.bess
            ],
            "pv": [{"bus": p.bus, "s_nom": p.s_nom} for p in feeder.devices.pv],
            "tg": [
                {"bus": t.bus, "s_max": t.s_max, "z_source": [t.z_source.real, t.z_source.imag]}
                for t in feeder.devices.tg
            ],
        },
    }


# --------------------------------------------------------------------------
# topology queries


def path_edges(graph: NetworkGraph, energized: set[str] | None, k: str, n: str) -> list[str]:
    """Edge ids on the unique k->n path through ``energized`` edges (all edges if None)."""
    if k == n:
        return []
    adj = graph.adjacency(sorted(energized) if energized is not None else None)
    parent: dict[str, tuple[str, str] | None] = {k: None}
    q = deque([k])
    n_edges = 0
    while q:
        u = q.popleft()
        for v, eid in adj[u]:
            n_edges += 1
            if v in parent:
                if parent[u] is None or parent[u][1] != eid:
                    # reached an already-visited bus via a different edge: loop
                    raise FeederError(f"energized topology is not radial (loop through edge {eid})")
                continue
            parent[v] = (u, eid)
            q.append(v)
    if n not in parent:
        raise FeederError(f"buses {k} and {n} are not connected through energized edges")
    out = []
    cur = n
    while parent[cur] is not None:
        u, eid = parent[cur]
        out.append(eid)
        cur = u
    return out[::-1]


def path_impedance(graph: NetworkGraph, energized: set[str] | None, k: str, n: str, phase: str) -> complex:
    """Series self-impedance of ``phase`` along the radial k->n path (ohms)."""
    z = 0j
    for eid in path_edges(graph, energized, k, n):
        e = graph.edge[eid]
        if phase not in e.phases:
            raise FeederError(f"edge {eid} on path {k}->{n} does not carry phase {phase}")
        z += e.self_impedance(phase)
    return z


# --------------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class LoadSpec:
    bus: str
    cls: str  # CL | NL
    p: dict[str, np.ndarray]  # phase -> kW per step


@dataclass(frozen=True, eq=False)
class Scenario:
    dt_min: float
    labels: tuple[str, ...]
    initial_label: str
    pv_rate: np.ndarray
    tg_available: np.ndarray
    loads: tuple[LoadSpec, ...]
    beta: tuple[float, float, float] = (0.5, 0.3, 0.1)
    gamma_cl: float = 10.0
    gamma_nl: float = 1.0
    zip: tuple[float, float, float] = (0.2, 0.3, 0.5)
    power_factor: float = 0.9
    tan_phi: float = 0.484
    use_tan_phi: bool = True

    @property
    def n_steps(self) -> int:
        return len(self.labels)

    @property
    def dt_h(self) -> float:
        return self.dt_min / 60.0

    @property
    def load_tan(self) -> float:
        if self.use_tan_phi:
            return self.tan_phi
        return math.tan(math.acos(self.power_factor))

    @cached_property
    def load_at(self) -> dict[str, LoadSpec]:
        return {ld.bus: ld for ld in self.loads}

    def tg_first_available(self) -> int | None:
        idx = np.flatnonzero(self.tg_available)
        return int(idx[0]) if idx.size else None


def _clock_labels(start: str, n: int, dt_min: float) -> tuple[str, tuple[str, ...]]:
    hh, mm = (int(x) for x in start.split(":"))
    t0 = hh * 60 + mm

    def fmt(m: float) -> str:
        m = int(round(m)) % (24 * 60)
        return f"{m // 60:02d}:{m % 60:02d}"

    return fmt(t0 - dt_min), tuple(fmt(t0 + i * dt_min) for i in range(n))


def scenario_from_dict(data: dict) -> Scenario:
    dt = float(data.get("dt_min", 15.0))
    steps = _req(data, "steps", "scenario")
    if isinstance(steps, int):
        n = steps
        initial, labels = _clock_labels(str(data.get("start", "09:00")), n, dt)
    else:
        labels = tuple(str(s) for s in steps)
        n = len(labels)
        initial = str(data.get("initial", "t0"))
        if ":" in labels[0] and "initial" not in data:
            initial, _ = _clock_labels(labels[0], 1, dt)
    if n < 1:
        raise FeederError("scenario: need at least one step")

    def per_step(key: str, default, dtype):
        v = data.get(key, default)
        arr = np.asarray([v] * n if np.isscalar(v) else v, dtype=dtype)
        if arr.shape != (n,):
            raise FeederError(f"scenario: '{key}' must have {n} entries")
        return arr

    pv = per_step("pv_rate", 0.0, float)
    if np.any(pv < 0) or np.any(pv > 1):
        raise FeederError("scenario: pv_rate outside [0, 1]")
    tg = per_step("tg_available", False, bool)
    first = np.flatnonzero(tg)
    if first.size and not tg[first[0]:].all():
        raise FeederError("scenario: tg_available must stay true once true")

    loads = []
    for bus, spec in sorted(data.get("loads", {}).items()):
        cls = str(spec.get("class", "CL")).upper()
        if cls not in ("CL", "NL"):
            raise FeederError(f"scenario: load {bus} class must be CL or NL")
        p = {}
        for ph, vals in spec.get("p", {}).items():
            if ph not in PHASE_INDEX:
                raise FeederError(f"scenario: load {bus} bad phase {ph}")
            arr = np.asarray([vals] * n if np.isscalar(vals) else vals, dtype=float)
            if arr.shape != (n,):
                raise FeederError(f"scenario: load {bus}.{ph} must have {n} entries")
            if np.any(arr < 0):
                raise FeederError(f"scenario: load {bus}.{ph} negative")
            p[ph] = arr
        loads.append(LoadSpec(str(bus), cls, p))

    clpu = data.get("clpu", {})
    beta = tuple(float(b) for b in clpu.get("beta", (0.5, 0.3, 0.1)))
    if len(beta) != 3 or any(b < 0 for b in beta):
        raise FeederError("scenario: clpu.beta must be three non-negative numbers")
    w = data.get("weights", {})
    zipc = data.get("zip", {})
    kz, ki, kp = (float(zipc.get(k, d)) for k, d in (("kZ", 0.2), ("kI", 0.3), ("kP", 0.5)))
    if abs(kz + ki + kp - 1.0) > 1e-9:
        raise FeederError(f"scenario: ZIP coefficients sum to {kz + ki + kp}, must be 1")
    pf = data.get("load_pf", {})
    return Scenario(
        dt_min=dt,
        labels=labels,
        initial_label=initial,
        pv_rate=pv,
        tg_available=tg,
        loads=tuple(loads),
        beta=beta,  # type: ignore[arg-type]
        gamma_cl=float(w.get("CL", 10.0)),
        gamma_nl=float(w.get("NL", 1.0)),
        zip=(kz, ki, kp),
        power_factor=float(pf.get("pf", 0.9)),
        tan_phi=float(pf.get("tan_phi", 0.484)),
        use_tan_phi=str(pf.get("use", "tan_phi")) == "tan_phi",
    )


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"scenario file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FeederError(f"{path}: invalid JSON ({exc})") from exc
    return scenario_from_dict(data)


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "units": UNITS,
        "dt_min": sc.dt_min,
        "steps": list(sc.labels),
        "initial": sc.initial_label,
        "pv_rate": sc.pv_rate.tolist(),
        "tg_available": sc.tg_available.tolist(),
        "loads": {
            ld.bus: {"class": ld.cls, "p": {ph: v.tolist() for ph, v in ld.p.items()}} for ld in sc.loads
        },
        "clpu": {"beta": list(sc.beta)},
        "weights": {"CL": sc.gamma_cl, "NL": sc.gamma_nl},
        "zip": dict(zip(("kZ", "kI", "kP"), sc.zip)),
        "load_pf": {"pf": sc.power_factor, "tan_phi": sc.tan_phi, "use": "tan_phi" if sc.use_tan_phi else "pf"},
    }


def validate_scenario(feeder: Feeder, sc: Scenario) -> list[str]:
    out = []
    g = feeder.graph
    for ld in sc.loads:
        if ld.bus not in g.bus_index:
            out.append(f"load {ld.bus}: unknown bus")
            continue
        if ld.bus in g.tg_buses:
            out.append(f"load {ld.bus}: loads cannot sit on a TG bus")
        for ph in ld.p:
            if ph not in g.bus[ld.bus].phases:
                out.append(f"load {ld.bus}: phase {ph} absent at bus")
    if sc.tg_first_available() is not None and not g.tg_buses:
        out.append("scenario: TG availability given but feeder has no TG bus")
    return out
