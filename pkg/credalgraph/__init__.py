from .graph import (
    GraphDataset, ClassPartition, SplitMasks, CsbmParams, DatasetSplitSpec, load_dataset, save_dataset,
    gcn_normalize, row_normalize, leave_out_class_split, remap_id_labels, generate_csbm, edge_homophily
)
from .tape import Tape, Tensor
from .backbone import BackboneConfig
from .credal import CredalPrediction, IntervalLogits, UncertaintyScores, interval_softmax, interval_uncertainty
from .training import TrainConfig, TrainedModel, TrainHistory, train_model, save_checkpoint, load_checkpoint
from .metrics import auroc, macro_f1
from .config import RunConfig
from .harness import ExperimentResult, OodExperiment, run_ood_experiment, emit_results
from .enums import ModelKind, BackboneKind, StopMetric, UncertaintyKind, Bound
from .errors import CredalGraphError, ConfigError, DatasetError, TrainingError
from .constants import Constants
from .methods import Methods
from .app import App
