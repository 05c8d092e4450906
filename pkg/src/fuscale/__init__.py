"""Psychometric validation toolkit for feature-understandability questionnaires."""

__version__ = "0.1.0"

from .exceptions import (AnalysisError, ConfigError, DataQualityError, FusError, NotPositiveDefiniteError,
                         SchemaError)
from .instruments import (BUILTIN_INSTRUMENTS, FEATURES, FUS_CATEGORICAL, FUS_NUMERICAL, InstrumentDefinition,
                          get_instrument)
from .corrstats import CorrelationMatrix, bartlett_test, factorability, kmo, load_correlation_csv
from .efa import EfaConfig, fit_efa, reduce_items
from .cfa import build_cfa, estimate_gamma, fit_ml, satorra_bentler, scaled_chisq_diff, standardize
from .reliability import ave, cronbach_alpha, mcdonald_omega, rank_features, score_features
from .simgen import PopulationModel, discretize_likert, generate_factor_data, generate_rating_fixture

__all__ = [
    "AnalysisError", "ConfigError", "DataQualityError", "FusError", "NotPositiveDefiniteError", "SchemaError",
    "BUILTIN_INSTRUMENTS", "FEATURES", "FUS_CATEGORICAL", "FUS_NUMERICAL", "InstrumentDefinition", "get_instrument",
    "CorrelationMatrix", "bartlett_test", "factorability", "kmo", "load_correlation_csv",
    "EfaConfig", "fit_efa", "reduce_items",
    "build_cfa", "estimate_gamma", "fit_ml", "satorra_bentler", "scaled_chisq_diff", "standardize",
    "ave", "cronbach_alpha", "mcdonald_omega", "rank_features", "score_features",
    "PopulationModel", "discretize_likert", "generate_factor_data", "generate_rating_fixture",
]
