"""Hybrid-transfer representation learning for cross-modal retrieval.

Trains three fully-connected pathways (source image, target image,
target text) jointly: a kernel two-sample distribution term aligns the
image pathways, a pairwise squared-distance term pulls paired
image/text activations together, and a layer-sharing classifier stack
supervises both modalities with one set of weights. Softmax probability
vectors serve as the common representation; retrieval ranks them by
cosine similarity and scores with mean average precision.
"""

from .data import (Dataset, PairedDataset, SynthConfig, TestSplit,
                   generate_synthetic, load_features, load_labels,
                   load_matrix, read_kv_file, save_features, save_labels,
                   save_matrix, split, synth_config_from_file)
from .errors import (DegenerateInputError, DivergenceError,
                     FeatureFormatError, InvalidStateError,
                     UndefinedQueryError)
from .gradcheck import (GradCheckReport, check_instance, numeric_gradient,
                        rel_error, run_suite)
from .losses import (LossBreakdown, LossWeights, combine, correlation_loss,
                     cross_pair_loss, single_modal_loss,
                     softmax_supervision_loss)
from .mmd import (DEFAULT_MULTIPLIERS, KernelSpec, median_heuristic,
                  mmd2_biased, mmd2_gradient, pairwise_sqdist)
from .network import (Ablation, NetworkConfig, Params,
                      common_representation, forward_source, forward_target,
                      init, load_checkpoint, save_checkpoint)
from .retrieval import (RetrievalReport, average_precision, evaluate,
                        format_report_table, rank_gallery, write_report_csv)
from .tensor import make_rng
from .trainer import (Batch, TrainConfig, TrainLog, evaluate_full_losses,
                      joint_loss_and_grads, sample_batches, train,
                      train_config_from_file, write_history_csv)

__all__ = [
    "Ablation", "Batch", "DEFAULT_MULTIPLIERS", "Dataset",
    "DegenerateInputError", "DivergenceError", "FeatureFormatError",
    "GradCheckReport", "InvalidStateError", "KernelSpec", "LossBreakdown",
    "LossWeights", "NetworkConfig", "PairedDataset", "Params",
    "RetrievalReport", "SynthConfig", "TestSplit", "TrainConfig", "TrainLog",
    "UndefinedQueryError", "average_precision", "check_instance", "combine",
    "common_representation", "correlation_loss", "cross_pair_loss",
    "evaluate", "evaluate_full_losses", "format_report_table",
    "forward_source", "forward_target", "generate_synthetic", "init",
    "joint_loss_and_grads", "load_checkpoint", "load_features",
    "load_labels", "load_matrix", "make_rng", "median_heuristic",
    "mmd2_biased", "mmd2_gradient", "numeric_gradient", "pairwise_sqdist",
    "rank_gallery", "read_kv_file", "rel_error", "run_suite",
    "sample_batches", "save_checkpoint", "save_features", "save_labels",
    "save_matrix", "single_modal_loss", "softmax_supervision_loss", "split",
    "synth_config_from_file", "train", "train_config_from_file",
    "write_history_csv", "write_report_csv",
]

__version__ = "0.1.0"
