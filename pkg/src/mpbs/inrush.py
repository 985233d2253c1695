"""Analytic transformer inrush estimate and fuse/recloser feasibility checks."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .feeder import PHASE_INDEX, PHASES, Feeder, FeederError, ProtectionDevice, TransformerSpec, path_impedance

PHASE_OFFSET_DEG = {"A": 0.0, "B": -120.0, "C": 120.0}


def saturation_indicator(theta_deg: float, lambda_n: float, lambda_s: float, lambda_0: float) -> int:
    c = lambda_n * math.cos(math.radians(theta_deg))
    if c > lambda_s - lambda_n - lambda_0:
        return 1
    if c < lambda_n - lambda_s - lambda_0:
        return -1
    return 0


def steady_state_saturated_current(v_k: float, z_kk: complex, z_kn: complex, l_s: float, omega: float) -> float:
    """i_SS = v_k / |Z_kk + Z_kn + j w L_s|, in the units of ``v_k`` over ohms."""
    z = abs(z_kk + z_kn + 1j * omega * l_s)
    if z <= 0.0:
        raise ValueError("total saturated-branch impedance is zero")
    return v_k / z


def phase_angle(theta_deg: float, phase: str) -> float:
    return theta_deg + PHASE_OFFSET_DEG[phase]


def peak_multiplier(theta_phase_deg: float, lambda_n: float, lambda_s: float, lambda_0: float) -> float:
    h = saturation_indicator(theta_phase_deg, lambda_n, lambda_s, lambda_0)
    if h == 0:
        return 0.0
    return (lambda_0 - h * lambda_s) / lambda_n + math.cos(math.radians(theta_phase_deg)) + 1.0


def peak_inrush(theta_deg: float, spec: TransformerSpec, i_ss: float) -> float:
    """Peak inrush of one DT for a closing angle referenced to phase A."""
    m = peak_multiplier(phase_angle(theta_deg, spec.phase), spec.lambda_n, spec.lambda_s, spec.lambda_0)
    return max(m, 0.0) * i_ss


def angle_grid(step_deg: float = 1.0) -> np.ndarray:
    n = int(round(360.0 / step_deg))
    return np.arange(n) * step_deg


ONSET_NUDGE_DEG = 1e-6


def onset_angles(specs: list[TransformerSpec]) -> np.ndarray:
    """Phase-A angles just inside each DT's saturation onset.

    The peak jumps from zero to its largest value at the onset, so the
    supremum over angles sits there and no finite grid lands on it.
    """
    out = []
    for s in specs:
        off = PHASE_OFFSET_DEG[s.phase]
        a = (s.lambda_s - s.lambda_n - s.lambda_0) / s.lambda_n  # h=+1 when cos > a
        if -1.0 < a < 1.0:
            phi = math.degrees(math.acos(a)) - ONSET_NUDGE_DEG
            out += [phi - off, -phi - off]
        b = (s.lambda_n - s.lambda_s - s.lambda_0) / s.lambda_n  # h=-1 when cos < b
        if -1.0 < b < 1.0:
            phi = math.degrees(math.acos(b)) + ONSET_NUDGE_DEG
            out += [phi - off, -phi - off]
    return np.mod(np.array(out, dtype=float), 360.0)


def search_angles(specs: list[TransformerSpec], step_deg: float = 1.0) -> np.ndarray:
    """Sorted grid plus onset angles; the worst case is searched over these."""
    return np.unique(np.concatenate([angle_grid(step_deg), onset_angles(specs)]))


def _multiplier_table(specs: list[TransformerSpec], grid: np.ndarray) -> np.ndarray:
    """(n_dt, n_angle) peak multipliers, vectorised."""
    out = np.zeros((len(specs), grid.size))
    for i, s in enumerate(specs):
        th = np.radians(grid + PHASE_OFFSET_DEG[s.phase])
        c = s.lambda_n * np.cos(th)
        h = np.where(c > s.lambda_s - s.lambda_n - s.lambda_0, 1, np.where(c < s.lambda_n - s.lambda_s - s.lambda_0, -1, 0))
        m = (s.lambda_0 - h * s.lambda_s) / s.lambda_n + np.cos(th) + 1.0
        out[i] = np.where(h == 0, 0.0, np.maximum(m, 0.0))
    return out


@dataclass(frozen=True)
class MicrogridState:
    """Energized part of one microgrid seen from a block about to be picked up."""

    id: str
    source_bus: str
    blocks: tuple[str, ...]
    energized_edges: frozenset[str]
    v_source: dict[str, float]  # pu^2 per phase
    omega: float
    z_source: complex = 0j
    kv_ln: float = 2.4018

    def source_peak_voltage(self, phase: str) -> float:
        return math.sqrt(2.0) * self.kv_ln * 1e3 * math.sqrt(max(self.v_source.get(phase, 0.0), 0.0))


@dataclass
class InrushReport:
    theta_wc: dict[str, float] = field(default_factory=dict)  # block -> deg
    dt_peak: dict[str, np.ndarray] = field(default_factory=dict)  # DT id -> per-phase A
    lateral_peak: dict[str, np.ndarray] = field(default_factory=dict)
    mg_peak: dict[str, np.ndarray] = field(default_factory=dict)
    fuse_flags: dict[str, np.ndarray] = field(default_factory=dict)
    recloser_flags: dict[str, np.ndarray] = field(default_factory=dict)
    lateral_mg: dict[str, str] = field(default_factory=dict)
    lateral_block: dict[str, str] = field(default_factory=dict)
    block_mg: dict[str, str] = field(default_factory=dict)

    @property
    def any_fuse(self) -> bool:
        return any(f.any() for f in self.fuse_flags.values())

    @property
    def any_recloser(self) -> bool:
        return any(f.any() for f in self.recloser_flags.values())

    @property
    def feasible(self) -> bool:
        return not (self.any_fuse or self.any_recloser)

    def merge(self, other: "InrushReport") -> "InrushReport":
        out = InrushReport()
        for name in (
            "theta_wc",
            "dt_peak",
            "lateral_peak",
            "fuse_flags",
            "lateral_mg",
            "lateral_block",
            "block_mg",
        ):
            getattr(out, name).update(getattr(self, name))
            getattr(out, name).update(getattr(other, name))
        return out


def dt_saturated_currents(feeder: Feeder, mg: MicrogridState, specs: list[TransformerSpec]) -> np.ndarray:
    g = feeder.graph
    out = np.zeros(len(specs))
    for i, s in enumerate(specs):
        z_path = path_impedance(g, set(mg.energized_edges), mg.source_bus, s.bus, s.phase)
        out[i] = steady_state_saturated_current(mg.source_peak_voltage(s.phase), mg.z_source, z_path, s.l_s, mg.omega)
    return out


def block_sweep(
    feeder: Feeder, mg: MicrogridState, block: str, grid: np.ndarray
) -> tuple[list[TransformerSpec], np.ndarray]:
    """Per-DT peak currents (n_dt, n_angle) for energizing ``block`` from ``mg``."""
    specs = list(feeder.graph.block_transformers(block))
    if not specs:
        return specs, np.zeros((0, grid.size))
    iss = dt_saturated_currents(feeder, mg, specs)
    return specs, _multiplier_table(specs, grid) * iss[:, None]


def phase_totals(specs: list[TransformerSpec], peaks: np.ndarray) -> np.ndarray:
    """(3, n_angle) per-phase sums."""
    out = np.zeros((3, peaks.shape[1] if peaks.ndim == 2 else 1))
    for s, row in zip(specs, peaks):
        out[PHASE_INDEX[s.phase]] += row
    return out


def worst_case_angle(
    feeder: Feeder, mg: MicrogridState, block: str, step_deg: float = 1.0
) -> tuple[float, np.ndarray]:
    """Angle maximising the block-wide largest per-phase aggregate; ties -> smallest angle."""
    grid = search_angles(list(feeder.graph.block_transformers(block)), step_deg)
    specs, peaks = block_sweep(feeder, mg, block, grid)
    if not specs:
        return 0.0, np.zeros(3)
    tot = phase_totals(specs, peaks)
    score = tot.max(axis=0)
    k = int(np.argmax(score))  # first max = smallest angle
    return float(grid[k]), tot[:, k]


def _threshold_vec(dev: ProtectionDevice) -> np.ndarray:
    return np.array([dev.threshold.get(p, math.inf) for p in PHASES])


def trip_flags(current: np.ndarray, threshold: np.ndarray) -> np.ndarray:
    return np.asarray(current) > np.asarray(threshold)


def evaluate_action(
    feeder: Feeder, mg: MicrogridState, block: str, step_deg: float = 1.0
) -> InrushReport:
    """Inrush of a single block pickup (fuses of its laterals, recloser of ``mg``)."""
    return evaluate_step(feeder, [(mg, block)], step_deg)


def evaluate_step(
    feeder: Feeder, pickups: list[tuple[MicrogridState, str]], step_deg: float = 1.0
) -> InrushReport:
    """Inrush check of all blocks energized in one step.

    Each block is evaluated at its own worst-case angle; MG totals add the
    lateral currents of every block the MG picks up in this step.
    """
    g = feeder.graph
    rep = InrushReport()
    mg_by_id: dict[str, MicrogridState] = {}
    for mg, block in pickups:
        mg_by_id[mg.id] = mg
        rep.block_mg[block] = mg.id
        grid = search_angles(list(g.block_transformers(block)), step_deg)
        specs, peaks = block_sweep(feeder, mg, block, grid)
        if specs:
            tot = phase_totals(specs, peaks)
            k = int(np.argmax(tot.max(axis=0)))
        else:
            k = 0
        rep.theta_wc[block] = float(grid[k])
        for lat in g.block_laterals(block):
            rep.lateral_peak[lat.id] = np.zeros(3)
            rep.lateral_mg[lat.id] = mg.id
            rep.lateral_block[lat.id] = block
        for s, row in zip(specs, peaks):
            vec = np.zeros(3)
            vec[PHASE_INDEX[s.phase]] = row[k]
            rep.dt_peak[s.id] = vec
            lat_id = g.lateral_of_bus.get(s.bus)
            if lat_id is None:
                raise FeederError(f"transformer {s.id}: bus {s.bus} not in a lateral")
            rep.lateral_peak[lat_id] = rep.lateral_peak[lat_id] + vec
    for lat_id, cur in rep.lateral_peak.items():
        fuse = feeder.fuse_of_lateral.get(lat_id)
        if fuse is None:
            raise FeederError(f"lateral {lat_id}: energized without a fuse threshold")
        rep.fuse_flags[lat_id] = trip_flags(cur, _threshold_vec(fuse))
    for mg_id in mg_by_id:
        tot = np.zeros(3)
        for lat_id, m in rep.lateral_mg.items():
            if m == mg_id:
                tot = tot + rep.lateral_peak[lat_id]
        rep.mg_peak[mg_id] = tot
        rec = feeder.recloser_of_gfmi.get(mg_by_id[mg_id].source_bus)
        thr = _threshold_vec(rec) if rec is not None else np.full(3, math.inf)
        rep.recloser_flags[mg_id] = trip_flags(tot, thr)
    return rep


def voltage_reduction_mask(rep: InrushReport, mg_id: str, per_lateral: bool = False) -> np.ndarray:
    """Per-phase fuse-flag product over the MG's laterals that carry inrush.

    ``per_lateral`` switches the product to a logical OR.
    """
    lats = [l for l, m in rep.lateral_mg.items() if m == mg_id and rep.lateral_peak[l].sum() > 0]
    if not lats:
        return np.zeros(3, dtype=bool)
    flags = np.array([rep.fuse_flags[l] for l in lats])
    return flags.any(axis=0) if per_lateral else flags.all(axis=0)


def blocking_candidate(feeder: Feeder, rep: InrushReport, mg_id: str, closing: set[str]) -> str | None:
    """ESW to block after a recloser trip: the one serving the block with the largest
    total lateral inrush (sum of per-phase magnitudes). Only ESWs being closed count."""
    g = feeder.graph
    best, best_score = None, -1.0
    for block, m in sorted(rep.block_mg.items()):
        if m != mg_id:
            continue
        score = sum(float(np.abs(rep.lateral_peak[l]).sum()) for l, b in rep.lateral_block.items() if b == block)
        for e in g.block_esws(block):
            if e.id not in closing:
                continue
            if score > best_score or (score == best_score and best is not None and e.id < best):
                best, best_score = e.id, score
    return best


# --------------------------------------------------------------------------
# reports


def sweep_table(
    feeder: Feeder, mg: MicrogridState, block: str, angles: list[float]
) -> list[dict]:
    """Rows of per-phase block totals for each angle (A)."""
    grid = np.asarray(angles, dtype=float)
    specs, peaks = block_sweep(feeder, mg, block, grid)
    tot = phase_totals(specs, peaks) if specs else np.zeros((3, grid.size))
    rows = []
    for j, th in enumerate(grid):
        col = tot[:, j]
        rows.append(
            {
                "theta_deg": float(th),
                "iA": float(col[0]),
                "iB": float(col[1]),
                "iC": float(col[2]),
                "max": float(col.max()),
                "phase": PHASES[int(np.argmax(col))] if col.max() > 0 else "",
            }
        )
    return rows


def write_inrush_csv(path: str | Path, records: list[dict], fields: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in records:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
