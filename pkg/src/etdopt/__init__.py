"""Event-triggered distributed primal-dual optimization with uncertain agents."""
from .engine import RunConfig, RunMetrics, RunResult, compare_communication, run
from .errors import (ConfigError, DivergenceError, EtdoptError, IncompatibleGraphError,
                     InfeasibleError, InvalidProblemError, OracleUnsupportedError, ScenarioError)
from .graph import Graph, build_augmented, check_compatibility, flood_bounds
from .problem import (ConstraintSystem, ProblemInstance, ScalarObjective, kkt_solve,
                      validate_assumptions)
from .scenarios import build_case1, build_case2, random_instance

__version__ = "0.1.0"
