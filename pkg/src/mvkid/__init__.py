"""mvkid: multi-view keystroke and motion biometrics for user identification.

The library identifies which of K known users produced a phone-usage session
from three unaligned behavioral time series (alphabet keystrokes, symbol
keystrokes, accelerometer), using per-view bidirectional GRU encoders fused
into one softmax classifier, next to classical baselines and a synthetic data
generator for benchmarking.
"""

from .baselines import (
    BaselineModel,
    DecisionTree,
    ForestHyper,
    LinearHyper,
    LinearModel,
    RandomForest,
    TreeHyper,
    featurize,
    train_baseline,
    train_decision_tree,
    train_linear_svm,
    train_logreg,
    train_random_forest,
)
from .evaluation import (
    ConfusionMatrix,
    EvalReport,
    compute_metrics,
    confusion_from_model,
    incremental_experiment,
    latency_bench,
    pairwise_heatmap,
    pattern_summary,
)
from .model import (
    EpochStats,
    ModelConfig,
    MvmcModel,
    load_model,
    save_model,
    train,
)
from .nn import (
    DenseLayer,
    GruCell,
    MvmcNet,
    bigru_encode,
    cross_entropy,
    dense_softmax_forward,
    grad_check,
    grad_check_suite,
    gru_forward,
    gru_step,
)
from .optim import NadamHyper, NadamState, clip_global_norm, nadam_step, sgd_step
from .preprocess import (
    EncodedView,
    Normalizer,
    apply_normalizer,
    fit_normalizer,
    impute_missing,
)
from .sessions import (
    AccelSample,
    AlphabetEvent,
    Dataset,
    DatasetFormatError,
    Session,
    SymbolCategory,
    SymbolEvent,
    ViewKind,
    filter_users,
    load_dataset,
    save_dataset,
    stratified_split,
)
from .synthgen import (
    GenConfig,
    UserProfile,
    dataset_from_profiles,
    generate_dataset,
    generate_session,
    make_profiles,
    profile_vector,
)

__version__ = "0.1.0"
