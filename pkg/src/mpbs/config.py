"""Tunable parameters, grouped per concern."""
from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class MilpConfig:
    v_floor: float = 0.95**2
    v_ceil: float = 1.05**2
    v_red: float = 0.8**2
    v_relaxed_floor: float = 0.75**2  # floor on reduced phases of the affected MG
    f_bounds: tuple[float, float] = (59.5, 60.5)
    f_qss_bounds: tuple[float, float] = (59.5, 60.5)
    f_roc_bounds: tuple[float, float] = (-4.0, 4.0)
    f_nadir_bounds: tuple[float, float] = (57.8, 61.8)
    f_var_max: float = 65.0
    eps_sync: float = 0.05
    polygon_sides: int = 12
    sync_reward: float = 1.0
    pv_q_ratio: float = 0.352
    per_lateral_mask: bool = False

    def __post_init__(self):
        if not (0 < self.v_floor < self.v_ceil):
            raise ValueError("need 0 < v_floor < v_ceil")
        if not (0 < self.v_relaxed_floor <= self.v_red <= self.v_ceil):
            raise ValueError("need v_relaxed_floor <= v_red <= v_ceil")
        if self.polygon_sides < 4:
            raise ValueError("polygon needs at least 4 sides")


@dataclass(frozen=True)
class SolverOptions:
    time_limit: float = 600.0
    gap: float = 1e-6
    node_limit: int = 1_000_000
    int_tol: float = 1e-6
    feas_tol: float = 1e-7
    backend: str = "embedded"  # or external:<path>


@dataclass(frozen=True)
class RunConfig:
    tc: int = 4
    iter_cap: int = 3
    mitigation: bool = True
    noise: float = 0.0
    seed: int = 0
    angle_step: float = 1.0
    reduction_persist: str = "clpu"  # clpu | step
    blocking_persist: str = "step"  # step | run
    milp: MilpConfig = field(default_factory=MilpConfig)
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.tc < 1:
            raise ValueError("tc must be >= 1")
        if self.iter_cap < 1:
            raise ValueError("iteration cap must be >= 1")
        if self.reduction_persist not in ("clpu", "step"):
            raise ValueError("reduction_persist must be clpu or step")
        if self.blocking_persist not in ("step", "run"):
            raise ValueError("blocking_persist must be step or run")
