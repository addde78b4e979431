"""Supervised vs self-supervised features under class imbalance, at desk scale.

Exact max-margin and spectral feature learners on a three-class toy model,
numerical checks of their geometry, and a reweighted sharpness-aware training
pipeline with linear-probe and generalization-gap evaluation.
"""

__version__ = "0.1.0"

from .datagen import (  # noqa: E402
    Dataset,
    ImbalanceProfile,
    SemiSynthConfig,
    ToyConfig,
    gen_longtail_counts,
    gen_longtail_gaussian,
    gen_semisynthetic,
    gen_toy,
    load_dataset,
    persist_dataset,
)
from .density import KdeConfig, WeightVector, compute_weights, estimate_density  # noqa: E402
from .errors import ConfigError, ConvergenceError, DatasetFormatError, InfeasibleError, NonFiniteError  # noqa: E402
from .evaluation import (  # noqa: E402
    GapReport,
    GenGapReport,
    ProbeConfig,
    ProbeResult,
    generalization_gap,
    rare_class_probe,
    relative_gap,
    train_probe,
)
from .features import FeatureMap, load_feature_map, save_feature_map  # noqa: E402
from .maxmargin import QpSolution, brute_force_maxmargin, check_margins, solve_maxmargin_qp  # noqa: E402
from .sam import SamConfig, TrainTrace, compute_epsilon, run_rwsam_pipeline, train  # noqa: E402
from .spectral import (  # noqa: E402
    SecondMoment,
    SpectralReport,
    SslObjective,
    empirical_second_moment,
    solve_spectral,
    ssl_loss_and_grad,
)
from .theory import (  # noqa: E402
    GeometryReport,
    LemmaCheck,
    constructed_classifier_check,
    data_matrix_check,
    feature_geometry,
    scaling_sweep,
    verify_gaussian_properties,
)
