"""Vector autoregression with leading indicators shared within clusters of series."""

from .errors import (ClvarError, DegenerateSeriesError, GenerationError, InsufficientDataError,
                     InvalidInputError, NumericalFailure, ParseError, SchemaError,
                     SingularSystemError, StationarityViolation)
from .optim import (FistaConfig, RidgeProblem, SimplexSpec, fista_projected, project_simplex,
                    ridge_solve, spectral_radius)
from .data import (LagDesign, StandardizationStats, TimeSeriesPanel, apply_recipe,
                   apply_transform, build_lag_design, clean_outliers, load_csv, save_csv,
                   standardize)
from .model import (ForecastResult, GrangerGraph, VarModel, deserialize_model, edge_density,
                    extract_granger_graph, load_model, mse, random_walk_reference, relative_mse,
                    rolling_holdout_forecast, save_model, selection_error, serialize_model)
from .baselines import ConvergenceError, PenaltyConfig, fit_ar, fit_varl1, fit_varl2, fit_varlg
from .learner import ClvarFactors, ClvarHyperparams, FitTrace, fit_clvar
from .synth import generate_system, make_design, oracle_forecaster, simulate
from .harness import (ExperimentPlan, ExperimentReport, HyperGrid, grid_search, make_cv_folds,
                      run_experiment, run_resample)

__version__ = "0.1.0"
