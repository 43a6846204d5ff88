"""Mobility-parameter (CIO/HOM) KPI modelling and optimisation toolkit."""

from .scenario import (
    KpiEvaluator,
    KpiReport,
    MobilityConfig,
    NetworkScenario,
    RadioConstants,
    associate,
    evaluate_kpi,
    generate_scenario,
)

__all__ = [
    "KpiEvaluator",
    "KpiReport",
    "MobilityConfig",
    "NetworkScenario",
    "RadioConstants",
    "associate",
    "evaluate_kpi",
    "generate_scenario",
]

__version__ = "0.1.0"
