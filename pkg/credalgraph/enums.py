from enum import Enum


class ConfigKey(str, Enum):
    """
    Top-level sections of a run config
    """

    DATASET = "dataset"
    PARTITION = "partition"
    SPLIT = "split"
    MODEL = "model"
    METHODS = "methods"
    GRID = "grid"
    OUTPUT = "output"


class DatasetKey(str, Enum):
    PATH = "path"
    CSBM = "csbm"


class CsbmKey(str, Enum):
    NODES_PER_CLASS = "nodes_per_class"
    NUM_CLASSES = "num_classes"
    P_IN = "p_in"
    P_OUT = "p_out"
    FEATURE_DIM = "feature_dim"
    MEAN_SEPARATION = "mean_separation"
    NOISE_SIGMA = "noise_sigma"
    SEED = "seed"


class PartitionKey(str, Enum):
    OOD_CLASSES = "ood_classes"


class SplitKey(str, Enum):
    TRAIN_FRAC = "train_frac"
    VAL_FRAC = "val_frac"
    SEED = "seed"
    SEEDS = "seeds"


class ModelKey(str, Enum):
    KIND = "kind"
    BACKBONE = "backbone"
    LR = "lr"
    WEIGHT_DECAY = "weight_decay"
    MAX_EPOCHS = "max_epochs"
    PATIENCE = "patience"
    DELTA = "delta"
    EARLY_STOP_METRIC = "early_stop_metric"


class BackboneKey(str, Enum):
    KIND = "kind"
    NUM_LAYERS = "num_layers"
    HIDDEN_DIM = "hidden_dim"
    DROPOUT = "dropout"


class MethodKey(str, Enum):
    """
    Keys that have a common usage in all method entries
    """

    TYPE = "type"
    NAME = "name"  # Defaults to the type; must be unique within a config


class GridKey(str, Enum):
    """
    Hyperparameters a grid section may list candidate values for
    """

    LR = "lr"
    WEIGHT_DECAY = "weight_decay"
    DELTA = "delta"
    HIDDEN_DIM = "hidden_dim"
    NUM_LAYERS = "num_layers"


class OutputKey(str, Enum):
    DIR = "dir"
    RECORD_TIMING = "record_timing"
    EXPORT_PREDICTIONS = "export_predictions"
    DO_LOG_ALL = "do_log_all"


class ModelKind(str, Enum):
    VANILLA = "vanilla"
    CREDAL_FINAL = "credal_final"
    CREDAL_LJ = "credal_lj"


class BackboneKind(str, Enum):
    GCN = "gcn"
    SAGE = "sage"


class StopMetric(str, Enum):
    VAL_EPISTEMIC_AUROC = "val_epistemic_auroc"
    VAL_MACRO_F1 = "val_macro_f1"


class UncertaintyKind(str, Enum):
    AU = "AU"
    EU = "EU"
    SINGLE = "single"


class Bound(str, Enum):
    LOWER = "lower"
    UPPER = "upper"


class Primitive(str, Enum):
    """
    Keys of the operations a Tape can record
    """

    MATMUL = "matmul"
    SPMM = "spmm"
    ADD = "add"
    BIAS_ADD = "bias_add"
    RELU = "relu"
    SOFTPLUS = "softplus"
    CONCAT_COLS = "concat_cols"
    GATHER_ROWS = "gather_rows"
    WEIGHTED_SUM = "weighted_sum"
    TOTAL = "total"
    DROPOUT = "dropout"

    # Composite losses and the credal output activation
    INTERVAL_SOFTMAX_LOWER = "interval_softmax_lower"
    INTERVAL_SOFTMAX_UPPER = "interval_softmax_upper"
    SOFTMAX_CROSS_ENTROPY = "softmax_cross_entropy"
    DRO_LOSS = "dro_loss"
