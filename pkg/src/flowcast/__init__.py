"""Migration-stream forecasting and causal what-if inference.

The package couples two halves: toy-scale transformer-family forecasters
(full, sparse, and decomposition attention) trained on monthly
per-province migration series, and an exact conditional-Gaussian network
over Sponsor/Refugee/Economic/Total streams for probabilistic what-if
queries under hard or soft evidence.
"""

from .autodiff import (
    Adam,
    Tensor,
    backward,
    load_checkpoint,
    load_params,
    save_params,
)
from .causal import (
    CGNetwork,
    CrisisSpec,
    Evidence,
    GaussianMixture,
    GaussianParams,
    HardProvince,
    SoftGaussian,
    TotalMode,
    apply_crisis,
    decompose_total,
    fit_parameters,
    load_network,
    paper_snapshot_path,
    posterior_node,
    posterior_province,
    province_conditional,
    save_network,
    soft_evidence_likelihood,
)
from .data import (
    GeneratorConfig,
    MonthlySeries,
    Province,
    Stream,
    WindowSpec,
    YearMonth,
    bundled_dataset_path,
    default_generator_config,
    destandardize,
    gen_synthetic,
    load_csv,
    split_window,
    standardize,
    write_csv,
)
from .errors import (
    ConfigError,
    DegenerateDenominatorError,
    FitError,
    FlowcastError,
    GapError,
    InconsistentEvidenceError,
    ModeError,
    ParseError,
    RangeError,
    ShapeError,
)
from .forecasters import (
    AutoformerForecaster,
    InformerForecaster,
    ModelConfig,
    NaiveForecaster,
    TransformerForecaster,
    make_forecaster,
)
from .metrics import EvalRecord, eval_grid, mase, smape

__version__ = "0.1.0"
