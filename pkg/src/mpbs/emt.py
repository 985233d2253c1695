"""Time-domain energization of no-load single-phase transformers.

Each phase is an independent series circuit: a Thevenin source
R_th + jX_th, the winding resistance R_w and a piecewise-linear magnetizing
branch.  The state is the flux linkage; integration is fixed-step
trapezoidal, solved exactly on the active linear segment.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .feeder import PHASES, TransformerSpec
from .inrush import PHASE_OFFSET_DEG


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnergizationCase:
    specs: dict[str, TransformerSpec]  # phase -> DT (absent phases are open)
    v_rms: float  # line-to-neutral source voltage, V
    r_th: float = 0.0
    x_th: float = 0.0
    theta_deg: float = 0.0
    cycles: float = 2.0
    dt: float = 1e-4
    f_nom: float = 60.0

    def __post_init__(self):
        if self.cycles < 2.0:
            raise ValueError("duration must cover at least two cycles")
        if not (0 < self.dt <= 1.0 / (100.0 * self.f_nom)):
            raise ValueError(f"time step must lie in (0, {1.0 / (100.0 * self.f_nom):.3g}] s")


@dataclass
class Waveform:
    t: np.ndarray
    i: dict[str, np.ndarray]
    peak: dict[str, float] = field(default_factory=dict)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "iA", "iB", "iC"])
            zeros = np.zeros_like(self.t)
            cols = [self.i.get(p, zeros) for p in PHASES]
            for k in range(self.t.size):
                w.writerow([f"{self.t[k]:.6g}"] + [f"{c[k]:.6g}" for c in cols])


class MagnetizingCurve:
    """Odd piecewise-linear i(psi) with knee at the saturation flux."""

    def __init__(self, psi_s: float, l_m: float, l_s: float):
        self.psi_s = psi_s
        self.l_m = l_m
        self.l_s = l_s

    def current(self, psi):
        psi = np.asarray(psi, dtype=float)
        a = np.abs(psi)
        return np.where(a <= self.psi_s, psi / self.l_m, np.sign(psi) * (self.psi_s / self.l_m + (a - self.psi_s) / self.l_s))

    def segments(self):
        """(slope, offset, lo, hi) with i = slope*psi + offset on [lo, hi]."""
        ps, lm, ls = self.psi_s, self.l_m, self.l_s
        off = ps / lm - ps / ls
        return (
            (1.0 / lm, 0.0, -ps, ps),
            (1.0 / ls, off, ps, math.inf),
            (1.0 / ls, -off, -math.inf, -ps),
        )


def _simulate_phase(spec: TransformerSpec, case: EnergizationCase, t: np.ndarray) -> np.ndarray:
    omega = 2 * math.pi * case.f_nom
    v_pk = math.sqrt(2.0) * case.v_rms
    psi_n = spec.lambda_n * v_pk / omega
    curve = MagnetizingCurve(spec.lambda_s / spec.lambda_n * psi_n, spec.l_m, spec.l_s)
    segs = curve.segments()
    r = case.r_th + spec.r_w
    l_th = case.x_th / omega
    h = case.dt
    phi = math.radians(case.theta_deg + PHASE_OFFSET_DEG[spec.phase])
    v = v_pk * np.sin(omega * t + phi)
    k = l_th + 0.5 * h * r  # G(psi) = psi + k*i(psi) is strictly increasing

    psi = spec.lambda_0 / spec.lambda_n * psi_n
    i_prev = float(curve.current(psi))
    out = np.empty_like(t)
    out[0] = i_prev
    for n in range(1, t.size):
        # (psi + l_th i)_{n+1} - (psi + l_th i)_n = h/2 (v_n + v_{n+1} - r (i_n + i_{n+1}))
        rhs = psi + l_th * i_prev + 0.5 * h * (v[n - 1] + v[n] - r * i_prev)
        for a, b, lo, hi in segs:
            cand = (rhs - k * b) / (1.0 + k * a)
            if lo - 1e-12 * psi_n <= cand <= hi + 1e-12 * psi_n:
                psi = cand
                break
        else:  # pragma: no cover - monotone G always has a root on some segment
            raise OracleError(f"no consistent magnetizing segment at step {n}; reduce the time step")
        i_prev = float(curve.current(psi))
        if not math.isfinite(i_prev):
            raise OracleError(f"non-finite current at step {n}")
        out[n] = i_prev
    return out


def simulate_energization(case: EnergizationCase) -> Waveform:
    period = 1.0 / case.f_nom
    n = int(round(case.cycles * period / case.dt)) + 1
    t = np.arange(n) * case.dt
    currents = {}
    peaks = {}
    for ph in PHASES:
        spec = case.specs.get(ph)
        if spec is None:
            continue
        i = _simulate_phase(spec, case, t)
        currents[ph] = i
        window = t <= 2.0 * period + 1e-12
        peaks[ph] = float(np.max(np.abs(i[window])))
    return Waveform(t, currents, peaks)


def cycle_envelope(wf: Waveform, phase: str, f_nom: float = 60.0) -> np.ndarray:
    """Per-cycle peak |i|."""
    period = 1.0 / f_nom
    idx = np.floor(wf.t / period + 1e-9).astype(int)
    i = np.abs(wf.i[phase])
    n = idx.max()
    return np.array([i[idx == c].max() for c in range(n) if np.any(idx == c)])
