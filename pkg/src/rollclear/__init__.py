"""Rolling-window stochastic co-optimization of energy and reserve with ramping-aware pricing."""

from .cooptimizer import (DETERMINISTIC, STOCHASTIC, PriorBinding, WindowProblem, WindowSolution,
                          build_window_lp, solve_problem, solve_window)
from .errors import (AssumptionViolated, BuildError, ConditionNotMet, DataError,
                     DegeneracyWarning, GenerationError, InfeasibleError, IslandingError,
                     MissingDualError, ParseError, RollClearError, SheddingPriceWarning,
                     SolverError, UnboundedError)
from .grid import (GridCase, Generator, Line, LoadPoint, ShiftFactors, ValidatedCase,
                   apply_contingency, compute_ptdf, is_connected, validate_case)
from .io import load_case, load_run_config, load_scenarios, load_solution, save_case, save_solution
from .lp import SolveTolerances
from .pricing import (NO_RAMPING, PROPOSED, SCHEMES, PriceSchedule, benchmark_no_ramping_prices,
                      deterministic_prices, kkt_residuals, proposed_prices,
                      verify_price_sensitivity)
from .rolling import (HorizonResult, RollingConfig, run_rolling_horizon, simulate_realization,
                      total_system_cost)
from .scenario import (GeneratedScenarios, ScenarioSet, ScriptedScenarios, TruthConfig,
                       UncertaintyConfig, build_scenario_set, make_manual_scenarios, realize_day)
from .settlement import SettlementReport, bid_perturbation_experiment, iso_surplus, settle

__version__ = "0.1.0"
