"""
Constants used throughout the ets_effects package.
"""

import enum
from typing import Dict, List, Tuple

# Canonical panel columns, in CSV order.
PANEL_COLUMNS: List[str] = [
    "firm_id",
    "year",
    "industry",
    "treated",
    "output",
    "exports",
    "employees",
    "avg_wage",
    "capital",
    "energy_total",
    "electricity",
    "gas",
    "oil",
    "other_primary",
    "co2",
]

MANDATORY_COLUMNS: List[str] = ["firm_id", "year", "treated"]

# Nonnegative numeric measures (kEUR, counts, EUR/year, MWh, t CO2).
NUMERIC_COLUMNS: List[str] = [
    "output",
    "exports",
    "employees",
    "avg_wage",
    "capital",
    "energy_total",
    "electricity",
    "gas",
    "oil",
    "other_primary",
    "co2",
]

ENERGY_COMPONENTS: List[str] = ["electricity", "gas", "oil", "other_primary"]

# Absolute slack (MWh) allowed when energy components exceed the total.
ENERGY_SUM_TOLERANCE = 1e-6

# Columns built by derive_variables.
DERIVED_COLUMNS: List[str] = ["co2_intensity", "export_share"]

# Variables that get ln_<var> and dln_<var> columns.
LOG_VARIABLES: List[str] = NUMERIC_COLUMNS + DERIVED_COLUMNS

UNITS: Dict[str, str] = {
    "output": "kEUR",
    "exports": "kEUR",
    "employees": "count",
    "avg_wage": "EUR/year",
    "capital": "kEUR",
    "energy_total": "MWh",
    "electricity": "MWh",
    "gas": "MWh",
    "oil": "MWh",
    "other_primary": "MWh",
    "co2": "t CO2",
    "co2_intensity": "g CO2 per kEUR",
    "export_share": "share",
}

# Tonnes to grams.
GRAMS_PER_TONNE = 1e6

DEFAULT_PANEL_YEARS: Tuple[int, int] = (2002, 2012)
DEFAULT_COVARIATE_YEAR = 2003
DEFAULT_TREND_YEARS: Tuple[int, int] = (2002, 2003)
DEFAULT_PRE_YEAR = 2004
DEFAULT_FRONTIER_BASE_YEAR = 2003
FRONTIER_YEARS: Tuple[int, int] = (2003, 2012)
FRONTIER_MIN_OBS = 50
FRONTIER_MAX_ITER = 500
FRONTIER_GTOL = 1e-6
# Newton steps tried when BFGS stops above the gradient tolerance.
NEWTON_POLISH_STEPS = 5
BOUNDARY_SIGMA = 1e-8

PROBIT_MAX_ITER = 100
PROBIT_GTOL = 1e-8
PROBIT_SEPARATION_BOUND = 1e3
RIDGE = 1e-8

BOOTSTRAP_REPS = 499

NN_PRESETS: List[int] = [1, 5, 20]
ATT_NEIGHBORS: List[int] = [1, 20]
SATT_NEIGHBORS: List[int] = [1, 5, 20]


class PhaseLabel(str, enum.Enum):
    """Enumeration of trading-phase window labels."""

    PRETREATMENT = "Pretreatment"
    PHASE_I = "PhaseI"
    PHASE_II = "PhaseII"


class MatchScheme(str, enum.Enum):
    """Enumeration of counterfactual weighting schemes."""

    NN = "nn"
    REWEIGHT = "reweight"


class SupportRule(str, enum.Enum):
    """Enumeration of common-support rules."""

    MINMAX = "minmax"
    CALIPER = "caliper"
    NONE = "none"


class DistanceScale(str, enum.Enum):
    """Scale on which propensity distances are measured."""

    PROBABILITY = "probability"
    INDEX = "index"


class SeMethod(str, enum.Enum):
    """Standard-error methods for matching estimators."""

    SANDWICH = "sandwich"
    BOOTSTRAP = "bootstrap"


class Pooling(str, enum.Enum):
    """How post-period years enter a window estimate."""

    PHASE_MEAN = "phase_mean"
    STACKED = "stacked"


class Inefficiency(str, enum.Enum):
    """One-sided inefficiency laws for the production frontier."""

    HALF_NORMAL = "half_normal"
    TRUNCATED_NORMAL = "truncated_normal"


class SummaryGroup(str, enum.Enum):
    """Groups reported by summary tables."""

    FULL = "full"
    TREATED = "treated"
    CONTROL = "control"
    MATCHED_CONTROL = "matched-control"


class ExitCode(enum.IntEnum):
    """Stable process exit codes."""

    OK = 0
    FAILURE = 1
    CONFIG = 2
    DATA = 3
    ESTIMATION = 4


# Significance legends: (p-value threshold, marker), strictest first.
ATT_STARS: List[Tuple[float, str]] = [(0.01, "***"), (0.05, "**"), (0.1, "*")]
SATT_STARS: List[Tuple[float, str]] = [(0.05, "*")]

INDUSTRY_NAMES: Dict[int, str] = {
    10: "Food products",
    11: "Beverages",
    12: "Tobacco products",
    13: "Textiles",
    14: "Wearing apparel",
    15: "Leather and related products",
    16: "Wood and products of wood and cork",
    17: "Paper and paper products",
    18: "Printing and reproduction of recorded media",
    20: "Chemicals and chemical products",
    21: "Pharmaceutical products",
    22: "Rubber and plastic products",
    23: "Other non-metallic mineral products",
    24: "Basic metals",
    25: "Fabricated metal products",
    26: "Computer, electronic and optical products",
    27: "Electrical equipment",
    28: "Machinery and equipment n.e.c.",
    29: "Motor vehicles, trailers, and semi-trailers",
    30: "Other transport equipment",
    31: "Furniture",
    32: "Other manufacturing",
    33: "Repair and installation of machinery and equipment",
}

EXCLUDED_INDUSTRIES: List[int] = [12, 14, 21, 26, 30, 32, 33]

# Published per-industry Cobb-Douglas frontiers:
# industry -> (firms, capital, labor, energy, constant, sigma_u).
PUBLISHED_FRONTIERS: Dict[int, Tuple[int, float, float, float, float, float]] = {
    10: (6935, 0.265, 0.323, 0.481, 2.047, 0.609),
    11: (703, 0.223, 0.725, 0.257, 2.252, 0.549),
    13: (1103, 0.199, 0.738, 0.117, 3.652, 0.507),
    15: (231, 0.203, 0.742, 0.177, 3.308, 0.514),
    16: (1587, 0.186, 0.794, 0.146, 3.507, 0.498),
    17: (1104, 0.178, 0.677, 0.183, 3.720, 0.389),
    18: (2255, 0.115, 0.689, 0.250, 3.580, 0.367),
    20: (1722, 0.205, 0.596, 0.173, 4.372, 0.522),
    22: (3935, 0.155, 0.726, 0.178, 3.645, 0.416),
    23: (2446, 0.206, 0.612, 0.111, 4.229, 0.501),
    24: (1274, 0.241, 0.637, 0.163, 3.617, 0.610),
    25: (9676, 0.103, 0.896, 0.112, 3.791, 0.458),
    27: (3077, 0.170, 0.834, 0.071, 4.088, 0.449),
    28: (8620, 0.071, 1.066, 0.027, 4.092, 0.453),
    29: (1681, 0.167, 0.893, 0.067, 3.840, 0.589),
    31: (1532, 0.133, 1.034, 0.036, 3.599, 0.433),
}

FRONTIER_INPUTS: List[str] = ["capital", "employees", "energy_total"]
# Report names for the frontier inputs.
INPUT_LABELS: Dict[str, str] = {
    "capital": "capital",
    "employees": "labor",
    "energy_total": "energy",
}

# Direct emission factors, t CO2 per MWh.
EMISSION_FACTORS: Dict[str, float] = {
    "electricity": 0.0,
    "gas": 0.202,
    "oil": 0.266,
    "other_primary": 0.341,
}

DEFAULT_OUTCOMES: List[str] = [
    "co2",
    "co2_intensity",
    "employees",
    "output",
    "exports",
    "electricity",
    "other_primary",
    "gas",
    "oil",
]

DEFAULT_COVARIATES: List[str] = [
    "level:output",
    "level:employees",
    "level:co2",
    "level:capital",
    "level:avg_wage",
    "raw:export_share",
    "trend:output",
    "trend:co2",
    "industry",
]

DEFAULT_SATT_COVARIATES: List[str] = [
    "level:output",
    "level:capital",
    "level:employees",
    "level:energy_total",
    "industry",
]

DESCRIBE_VARIABLES: List[str] = [
    "co2",
    "co2_intensity",
    "employees",
    "output",
    "exports",
    "export_share",
    "avg_wage",
]

INDEX_VARIABLES: List[str] = ["co2", "energy_total", "employees", "output", "capital"]

BUNDLE_FILES: List[str] = [
    "table1.csv",
    "table2.csv",
    "att_grid.csv",
    "frontier_coeffs.csv",
    "distance_series.csv",
    "indexed_medians.csv",
    "satt_table.csv",
    "run_manifest.json",
]

FAILED_MARKER = "FAILED"

PHASE_LABEL_LIST: List[str] = [label.value for label in PhaseLabel]
MATCH_SCHEME_LIST: List[str] = [scheme.value for scheme in MatchScheme]
SUPPORT_RULE_LIST: List[str] = [rule.value for rule in SupportRule]
INEFFICIENCY_LIST: List[str] = [law.value for law in Inefficiency]
