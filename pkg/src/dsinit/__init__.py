"""Data-driven weight initialization for small CNNs, with a training harness."""

from .errors import (
    ConfigError,
    DegenerateDataError,
    DsinitError,
    FormatError,
    InvalidArgumentError,
    NumericalFailureError,
    UnsupportedVersionError,
)
from .numerics import (
    GaussianModel,
    cholesky,
    covariance_matrix,
    gaussian_fit,
    mean_vector,
    sample_multivariate_gaussian,
    scale_to_variance,
    sym_eigendecomposition,
    zca_whiten,
)
from .network import (
    GradientSet,
    LayerSpec,
    Network,
    NetworkSpec,
    backward,
    evaluate,
    forward,
    forward_prefix,
    sgd_step,
    softmax_cross_entropy,
)
from .initializers import (
    FilterBank,
    InitConfig,
    data_stats_init_layer,
    data_stats_init_network,
    extract_blocks,
    extract_random_crops,
    init_he,
    init_network,
    init_xavier,
    pca_init,
)
from .datasets import (
    Dataset,
    SyntheticSpec,
    load_cifar10,
    load_mnist_idx,
    load_pgm_directory,
    minibatches,
    split,
    synthetic_dataset,
)
from .config import RunConfig, load_config, parse_architecture
from .experiment import RunMetrics, compare_initializers, run_experiment
from .model_io import load_model, save_model
from .saliency import saliency_map

__version__ = "0.1.0"
