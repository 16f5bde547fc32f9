"""Latent-space confidence scores for VAE regressors on tabular observations."""

from latentconf.confidence import (
    ConfidenceReport,
    LatentSet,
    ReliablePartition,
    knn_oracle,
    mean_knn_distance,
    partition_reliable,
    project,
    score,
)
from latentconf.dataset import (
    Dataset,
    DatasetError,
    Observation,
    Scaler,
    apply_scaler,
    fit_scaler,
    load_csv,
    split_by_date,
    write_csv,
)
from latentconf.evaluation import EvalReport, build_report, mae, pearson, tail_mae
from latentconf.synthgen import SynthConfig, generate
from latentconf.vae import (
    TrainHistory,
    VaeConfig,
    VaeModel,
    decode,
    encode,
    fit,
    grad_check,
    init_model,
    kl_divergence,
    load_model,
    loss,
    predict,
    sample_latent,
    save_model,
)

__version__ = "0.1.0"

__all__ = [
    "ConfidenceReport",
    "Dataset",
    "DatasetError",
    "EvalReport",
    "LatentSet",
    "Observation",
    "ReliablePartition",
    "Scaler",
    "SynthConfig",
    "TrainHistory",
    "VaeConfig",
    "VaeModel",
    "apply_scaler",
    "build_report",
    "decode",
    "encode",
    "fit",
    "fit_scaler",
    "generate",
    "grad_check",
    "init_model",
    "kl_divergence",
    "knn_oracle",
    "load_csv",
    "load_model",
    "loss",
    "mae",
    "mean_knn_distance",
    "partition_reliable",
    "pearson",
    "predict",
    "project",
    "sample_latent",
    "save_model",
    "score",
    "split_by_date",
    "tail_mae",
    "write_csv",
]
