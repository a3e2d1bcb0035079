"""Simulation and verification of arbitrage-free defaultable term structures
with risky dates."""

from .core import (BondSurface, ConstantVol, ExpDecayVol, FlatCurve, ForwardFieldSpec, FunctionCurve,
                   FunctionVol, LinearCurve, PathState, TabulatedCurve, TimeGrid, ValidationReport,
                   build_time_grid, validate_spec, zero_vol)
from .drift import (ConditionReport, DefaultModel, NoArbitrageDrift, check_conditions, compute_drift,
                    jump_probability, pin_short_rate, psi_eval)
from .errors import ModelError, PathFailure
from .measure import (JAtom, MeasureRealization, RiskyDateModel, TruncatedExpKernel, UniformKernel,
                      WindowKernel, compensator_density, mu_bar, simulate_announcements)
from .recovery import LossLaw, RecoveryModel, compute_recovery_drift, price_with_recovery, recovery_path
from .simulator import (Ensemble, ScenarioSpec, bond_surface, run_scenario, simulate_default,
                        simulate_forward_fields, simulate_path, validate_scenario)
from .scenario import BUNDLED, ScenarioParseError, load_bundled, load_scenario, parse_scenario, serialize_scenario
from .verifier import (JumpFrequencyReport, MartingaleReport, Verification, compensating_measure_link,
                       jump_frequency_test, logG_oracle, martingale_test, refine, stoch_exp_oracle,
                       verify_scenario)

__version__ = "0.1.0"
