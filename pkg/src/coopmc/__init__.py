"""Cooperative multi-receiver molecular communication: analytic error model and particle simulator."""

from coopmc.scenario import (
    DetectorConfig,
    FusionRule,
    PhysicalParams,
    Scenario,
    ScenarioError,
    SystemTopology,
    TimingConfig,
    validate_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "DetectorConfig",
    "FusionRule",
    "PhysicalParams",
    "Scenario",
    "ScenarioError",
    "SystemTopology",
    "TimingConfig",
    "validate_scenario",
    "__version__",
]
