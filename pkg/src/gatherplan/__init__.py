"""Multi-agent periodic data gathering: segmentation, collector planning, sweep and simulation."""
from .collector_plan import DeploymentPlan, PlanError, assemble_plan, dumps_plan, loads_plan
from .executor import MissionMetrics, SimulationError, generate_goals, run_mission
from .fmm import distance_field, extract_path, fmm_solve
from .planner import ConfigEvaluation, SweepResult, estimate_config, sweep
from .scenario import Cell, GridMap, Scenario, ScenarioError, bundled_scenario_path, read_scenario
from .segmentation import METHODS, Segmentation, segment

__all__ = [
    "METHODS", "Cell", "ConfigEvaluation", "DeploymentPlan", "GridMap", "MissionMetrics", "PlanError",
    "Scenario", "ScenarioError", "Segmentation", "SimulationError", "SweepResult", "assemble_plan",
    "bundled_scenario_path", "distance_field", "dumps_plan", "estimate_config", "extract_path",
    "fmm_solve", "generate_goals", "loads_plan", "read_scenario", "run_mission", "segment", "sweep",
]
__version__ = "0.1.0"
