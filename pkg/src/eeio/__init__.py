"""Sectoral energy accounts from energy balances and MRIO energy footprints."""
from .allocation import (
    ConcordanceMatrix,
    EnergyAccount,
    MappingMatrix,
    ProductAggregationMap,
    SplittingKey,
    aggregate_products,
    allocate,
    build_mapping,
    expand_mapping,
    residual_region,
)
from .balance import BalanceSchema, EnergyBalanceTable, UseTable, extract_use_table, parse_balance
from .calibration import (
    CalibrationFactors,
    RelativeErrorReport,
    apply_calibration,
    calibration_factors,
    extrapolate_factors,
    relative_error,
)
from .fixture import generate_fixture
from .mrio_footprint import (
    FootprintResult,
    IntensityVector,
    MrioSystem,
    assemble_system,
    compute_intensity,
    footprint,
    leontief_inverse,
)
from .pipeline import RunConfig, RunManifest, load_config, run_pipeline
from .reporting import report

__version__ = "0.1.0"

__all__ = [
    "BalanceSchema", "EnergyBalanceTable", "UseTable", "parse_balance", "extract_use_table",
    "ConcordanceMatrix", "SplittingKey", "MappingMatrix", "EnergyAccount", "ProductAggregationMap",
    "build_mapping", "expand_mapping", "allocate", "residual_region", "aggregate_products",
    "RelativeErrorReport", "CalibrationFactors", "relative_error", "calibration_factors",
    "apply_calibration", "extrapolate_factors",
    "MrioSystem", "IntensityVector", "FootprintResult", "assemble_system", "leontief_inverse",
    "compute_intensity", "footprint",
    "RunConfig", "RunManifest", "load_config", "run_pipeline", "report", "generate_fixture",
]
