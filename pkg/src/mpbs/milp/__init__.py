from .build import FAMILIES, build, clpu_weights, effective_rx, zip_coefficients
from .instance import InstanceBuilder, MilpInstance, var_name
from .plan import Actions, PlanError, RestorationPlan, StepPlan, extract_plan, schedule_key

__all__ = [
    "FAMILIES",
    "Actions",
    "InstanceBuilder",
    "MilpInstance",
    "PlanError",
    "RestorationPlan",
    "StepPlan",
    "build",
    "clpu_weights",
    "effective_rx",
    "extract_plan",
    "schedule_key",
    "var_name",
    "zip_coefficients",
]
