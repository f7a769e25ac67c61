"""Weak adiabatic output coupling from a trapped finite-temperature Bose gas.

The package is organized around a converged trap state (``hfb``), the
quasi-steady output observables built on it (``outcoupling``, ``coherence``),
the trapped-gas population dynamics (``dynamics``), and a brute-force
coupled-mode verification engine (``oracle``).  ``cli`` reproduces the
reference scenarios as deterministic CSV pipelines.
"""

__version__ = "0.1.0"

from .config import (ConfigError, OutputModeGrid, PhysicalParams, SimSetup,
                     SpatialGrid, build_setup)
from .hfb import (AnomalousModeError, CondensateState, ConvergenceError,
                  ExcitationMode, HfbSolution, default_e_cut, load_solution,
                  noncondensate_density, save_solution, self_consistent_solve,
                  solve_bdg, solve_gpe, thermal_occupation)
from .outcoupling import (Channel, CouplingSpec, CoverageError,
                          GoldenRuleRates, MatrixElementTable, OutputFieldSet,
                          SpectrumResult, bound_component, build_channels,
                          d2_kernel, d_kernel, d_kernel_sq, golden_rule_rates,
                          matrix_elements, output_field, output_spectrum,
                          raman_effective_coupling, select_field_channels,
                          spectral_width_estimates)
from .coherence import (CoherenceResult, coherence_result, g1, g1_profile, g2,
                        g2_profile)
from .dynamics import (DecayRates, PerturbativeResult, PopulationTrajectory,
                       bookkeeping_deltas, decay_rates, energy_rate,
                       evolve_adiabatic, evolve_perturbative)
from .oracle import (OracleTrajectory, TruncatedSystem, bath_comb,
                     compare_to_quasi_steady, fit_decay_rate,
                     integrate_coupled_modes, truncated_system_from_table)
