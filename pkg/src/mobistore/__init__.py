"""Economic dispatch with mobile energy storage: LMPs, marginal values and relocation."""
from .qp import QpSolution, QuadraticProgram, Status, Tolerances, solve_lp, solve_qp
from .network import Line, NetworkError, PowerNetwork, build_shift_factors, validate
from .storage import Fleet, MobileStorageUnit, StorageError, TransportModel
from .dispatch import (DispatchError, DispatchInfeasible, DispatchSolution, lmps, operation_cost, solve_dispatch,
                       solve_mped_s, solve_rapid_mped_s)
from .marginal import (BindingPattern, MarginalValue, marginal_value_report, mv_general, mv_rapid, mv_stationary,
                       mv_wire, radial_decomposition_check, solve_price_arbitrage)
from .relocation import (RelocationError, RelocationResult, RelocationWarning, brute_force_relocation, relocate,
                         relocate_approx, relocate_exact, relocate_fleet, relocate_rapid)
from .kernels import BACKEND

__version__ = "0.1.0"
