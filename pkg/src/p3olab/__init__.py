"""Tabular-POMDP laboratory for pessimistic policy optimization from
confounded offline data via proxy variables."""

__version__ = "0.1.0"

from .errors import (BridgeResidualError, DegenerateDual, DegeneratePrimal,
                     EmptyRegion, FormatError, HistoryExplosion, P3OError,
                     RankDeficient, UnknownHistoryAtom, ValidationError,
                     ZeroBehaviorProb)
from .pomdp import RankDiagnostics, TabularPOMDP, rank_diagnostics, validate
from .policies import (BehaviorPolicy, HistoryClass, LinearSoftmax, PolicySet,
                       TablePolicy, TargetPolicy, finite_history,
                       full_history, negative_controls, reactive,
                       sample_policy_set, uniform_policy)
from .occupancy import occupancy, step_laws
from .simulate import OfflineDataset, Trajectory, empirical_mean, generate
from .oracle import (CoverageReport, IdentificationCheck, ValueBridgeExact,
                     WeightBridgeExact, concentrability, identification_check,
                     solve_value_bridge, solve_weight_bridge, true_value)
from .minimax import (FeatureMap, LinearBridge, MinimaxFit, ResidualBatch,
                      fit_chain, fit_step, inner_max, one_hot_features,
                      population_rmse, residuals)
from .pessimism import (CandidateGrid, ConfidenceRegion, P3OConfig,
                        PessimismReport, build_region, make_grid, p3o,
                        pessimistic_value, xi_schedule)
