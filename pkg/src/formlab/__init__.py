"""Finite-state Dirichlet form solvers for semilinear equations with measure data."""

from .forms import (DirichletForm, FormError, GreenOperatorUndefined, Problem,
                    SignedMeasure, StateSpace, TransienceCertificate,
                    build_form, energy, equilibrium_potential, is_transient,
                    perturb, potential)
from .drivers import Driver, DriverError, make_driver, truncate_data, yosida_regularize
from .catalog import (CATALOG, DescriptorError, build_catalog_problem,
                      catalog_ids, load_problem)
from .markov import (AdditiveFunctional, Chain, ChainPath, RevuzReport,
                     SimulationError, additive_functional, build_chain,
                     default_horizon_cap, mc_expectation, revuz_check,
                     sample_path)
from .bsde import (BsdeSolution, ComparisonReport, LadderTrace,
                   MartingaleReport, SolverError, bsde_comparison_check,
                   extract_martingale, martingale_residual_check,
                   solve_finite_horizon, solve_random_horizon_ladder)
from .elliptic import (DualityReport, EllipticSolution, GreenBoundReport,
                       L1Report, TruncationReport, TvReport,
                       UnboundedSolutionError, duality_check,
                       green_bound_check, l1_bound_check,
                       solve_elliptic_gauss_seidel, solve_elliptic_ladder,
                       solve_elliptic_mc, truncation_energy_check,
                       truncation_report, tv_comparison_check,
                       vanishing_energy_check, weak_form_check)
from .convergence import StudyReport, boundary_exponent_fit, convergence_study, green_profile_1d

__version__ = "0.1.0"
