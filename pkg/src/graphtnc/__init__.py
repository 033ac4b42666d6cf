"""Joint representation learning for multivariate time series that co-evolve
with a dynamic graph, trained by temporal-neighborhood contrast."""

from .data import (
    DatasetMeta,
    DynamicGraphSequence,
    LabeledDataset,
    MultivariateSeries,
    WindowPair,
    extract_window,
    load_dataset,
    save_dataset,
    tiled_windows,
    window_label,
)
from .encoder import (
    EncoderConfig,
    component_sizes,
    encode,
    encode_window,
    init_encoder,
    load_checkpoint,
    param_count,
    save_checkpoint,
)
from .evaluation import (
    EvalResult,
    ProbeConfig,
    ProbeParams,
    average_precision,
    bootstrap_ci,
    evaluate,
    export_embeddings,
    train_probe,
    wilcoxon_signed_rank,
)
from .experiment import ExperimentSpec, run_experiment
from .neighborhood import (
    NeighborhoodSpec,
    adf_test,
    neighborhood_halfwidth,
    sample_pairs,
)
from .synth import SynthConfig, default_config, generate_dataset
from .training import (
    AdamState,
    TrainConfig,
    TrainReport,
    adam_step,
    compute_gradients,
    discriminate,
    finite_diff_check,
    tnc_loss,
    train_graphtnc,
)
from .baselines import (
    ByolParams,
    SimSiamParams,
    byol_step,
    simsiam_step,
    train_byol,
    train_simsiam,
    train_supervised,
    train_tnc_nograph,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
