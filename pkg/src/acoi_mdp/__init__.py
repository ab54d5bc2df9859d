"""Average-cost optimality for finite MDPs through the vanishing discount limit."""

from .conditions import (egoroff_extract, epi_compactness_condition, gus_test, lower_epilimit,
                         minimal_majorizer, select_K_eps, uniform_integrability_tail,
                         verify_egoroff)
from .demand import DemandFamily
from .discounted import (DcoeSolution, dcoe_residual, eps_optimal_policy,
                         estimate_contraction_modulus, evaluate_policy, solve_dcoe)
from .errors import *  # noqa: F401,F403
from .mdp import (FiniteMdp, StationaryPolicy, ValueFn, bellman_apply, check_uc_model,
                  greedy_policy, load_mdp, save_mdp, weighted_norm)
from .models import (Grid, HoldingCost, InvariantModelSpec, OrderCost, PcInventorySpec,
                     UcProductionSpec, build_circle_mdp, build_invariant, build_pc_inventory,
                     build_uc_production, verify_example_assumptions)
from .simulation import (BaseStockPolicy, CounterStreams, GridPolicy, HBound, StoppingTimeReport,
                         ZeroOrderPolicy, compute_H, expected_hitting_time_grid, hitting_time,
                         simulate_trajectory, smallest_tail_level, verify_comparison_drift,
                         verify_h_bound)
from .vanishing import (AcoiCertificate, DiscountSchedule, VanishingDiscountRun, acoi_residual,
                        acoi_to_policy, average_cost_eval, average_cost_exact, certify_run,
                        check_condition_B, run_schedule)

__version__ = "0.1.0"
