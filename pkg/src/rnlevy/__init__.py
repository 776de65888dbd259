"""rnlevy: model-free extraction of a risk-neutral law from price paths.

Pipeline: ingest or simulate a price panel, form mean-relative densities,
sum tilted square-root fluctuations over nested partitions, read off the
unit-time drift / variance / jump measure, check the neutrality residual,
assemble the measure bundle, and price European calls under it.
"""

from ._backend import HAS_NUMBA, backend_name
from .errors import (
    ConfigError,
    CoverageGap,
    DegenerateFit,
    GridMismatch,
    IdentityViolation,
    InsufficientGrid,
    MalformedInput,
    MeshTooCoarse,
    NegativeVarianceWarning,
    PositivityViolation,
    RnLevyError,
    SinglePathTiltWarning,
)
from .fluctuations import (
    CalmVerdict,
    Cluster,
    ClusterSet,
    FluctuationArray,
    LevelStats,
    calm_diagnostic,
    cluster_detect,
    compute_fluctuations,
)
from .levy_inference import (
    HorizonParams,
    LevyTripleEstimate,
    NeutralityReport,
    estimate_triple,
    neutrality_check,
)
from .market_data import (
    DensityPanel,
    MeanFunction,
    PartitionLadder,
    PricePanel,
    PricePath,
    RateCurve,
    build_ladder,
    discount_factor,
    estimate_mean_function,
    ingest_panel,
    prices_densities,
    write_panel_csv,
)
from .pricing import (
    CallQuote,
    CallSpec,
    buyer_price_and_premium,
    mixture_price,
    price_call,
    price_call_calm,
)
from .rn_measure import (
    IDLaw,
    QBundle,
    build_bundle,
    law_cdf,
    law_log_mgf,
    pstar_cdf,
    pstar_mean,
    stieltjes_exp_moment,
    verify_identities,
)
from .sim_lab import (
    GbmCheckReport,
    KsReport,
    QmdReport,
    SimSpec,
    gbm_theory_check,
    gen_panel,
    ks_critical_value,
    ks_statistic,
    lambda_distribution_check,
    qmd_diagnostic,
    realized_lambda,
    trader_lambda_check,
    trader_lambda_samples,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "HAS_NUMBA",
    "backend_name",
    # errors
    "RnLevyError",
    "MalformedInput",
    "PositivityViolation",
    "GridMismatch",
    "DegenerateFit",
    "InsufficientGrid",
    "CoverageGap",
    "MeshTooCoarse",
    "IdentityViolation",
    "ConfigError",
    "SinglePathTiltWarning",
    "NegativeVarianceWarning",
    # market data
    "PricePath",
    "PricePanel",
    "MeanFunction",
    "DensityPanel",
    "PartitionLadder",
    "RateCurve",
    "ingest_panel",
    "write_panel_csv",
    "estimate_mean_function",
    "prices_densities",
    "build_ladder",
    "discount_factor",
    # fluctuations
    "FluctuationArray",
    "LevelStats",
    "CalmVerdict",
    "Cluster",
    "ClusterSet",
    "compute_fluctuations",
    "calm_diagnostic",
    "cluster_detect",
    # inference
    "LevyTripleEstimate",
    "HorizonParams",
    "NeutralityReport",
    "estimate_triple",
    "neutrality_check",
    # measures
    "IDLaw",
    "QBundle",
    "build_bundle",
    "law_cdf",
    "law_log_mgf",
    "pstar_cdf",
    "pstar_mean",
    "stieltjes_exp_moment",
    "verify_identities",
    # pricing
    "CallSpec",
    "CallQuote",
    "price_call",
    "price_call_calm",
    "buyer_price_and_premium",
    "mixture_price",
    # simulation lab
    "SimSpec",
    "gen_panel",
    "gbm_theory_check",
    "GbmCheckReport",
    "qmd_diagnostic",
    "QmdReport",
    "lambda_distribution_check",
    "trader_lambda_check",
    "trader_lambda_samples",
    "realized_lambda",
    "ks_statistic",
    "ks_critical_value",
    "KsReport",
]
