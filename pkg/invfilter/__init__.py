__version__ = "0.1.0"

from .config import ExperimentConfig, FilterParams, ScenarioConfig, load_scenario_config
from .harness import Harness, MonteCarloReport, simulate_batch
from .lie import SE3_GROUP, SO3_GROUP, GroupDescriptor, translation_group
from .models import DiscreteModel, NoiseSpec, OutputMap, Scenario

__all__ = [
    "GroupDescriptor",
    "SO3_GROUP",
    "SE3_GROUP",
    "translation_group",
    "NoiseSpec",
    "OutputMap",
    "DiscreteModel",
    "Scenario",
    "ScenarioConfig",
    "FilterParams",
    "ExperimentConfig",
    "load_scenario_config",
    "Harness",
    "MonteCarloReport",
    "simulate_batch",
]
