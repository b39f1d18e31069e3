from dataclasses import dataclass, field, replace
from datetime import datetime
from itertools import product
from pathlib import Path
from typing import Optional, Union
import logging

import numpy as np
from scipy.special import log_softmax, softmax

from .backbone import BackboneConfig, LayerTrace, backbone_forward, init_backbone_params, joint_concat
from .constants import Constants
from .credal import CredalPrediction, credal_layer_forward, interval_softmax_tensors, interval_uncertainty, point_prediction
from .enums import Bound, ModelKind, Primitive, StopMetric
from .errors import CheckpointError, NonFiniteError, TrainingError
from .extensions import LossPrimitives, PresetPrimitives
from .graph import ClassPartition, GraphDataset, SplitMasks, remap_id_labels
from .losses import cross_entropy_rows, select_hard_set
from .methods import Methods
from .metrics import auroc, macro_f1
from .tape import AdamState, Tape, Tensor, adam_step, glorot_init, read_parameters, write_parameters
from .types import ParamDict

GraphTape = Tape.with_extensions(PresetPrimitives, LossPrimitives)


@dataclass(frozen=True)
class TrainConfig:
    backbone: BackboneConfig
    model_kind: ModelKind = ModelKind.CREDAL_LJ
    lr: float = Constants.DEFAULT_LR
    weight_decay: float = Constants.DEFAULT_WEIGHT_DECAY
    max_epochs: int = Constants.DEFAULT_MAX_EPOCHS
    patience: int = Constants.DEFAULT_PATIENCE
    delta: float = Constants.DEFAULT_DELTA
    seed: int = 0
    early_stop_metric: Optional[StopMetric] = None  # None selects the default for the model kind

    def __post_init__(self):
        object.__setattr__(self, "model_kind", ModelKind(self.model_kind))
        if self.early_stop_metric is not None:
            object.__setattr__(self, "early_stop_metric", StopMetric(self.early_stop_metric))

        if not 0.0 < self.delta <= 1.0:
            raise ValueError(f"delta must lie in (0, 1]: {self.delta}")
        if self.patience < 1:
            raise ValueError(f"patience must be at least 1: {self.patience}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be at least 1: {self.max_epochs}")
        if self.lr <= 0.0 or self.weight_decay < 0.0:
            raise ValueError(f"invalid optimiser settings (lr={self.lr}, weight_decay={self.weight_decay})")

    @property
    def is_credal(self) -> bool:
        return self.model_kind is not ModelKind.VANILLA

    @property
    def stop_metric(self) -> StopMetric:
        if self.early_stop_metric is not None:
            return self.early_stop_metric
        return StopMetric.VAL_EPISTEMIC_AUROC if self.is_credal else StopMetric.VAL_MACRO_F1

    @property
    def head_input_dim(self) -> int:
        if self.model_kind is ModelKind.CREDAL_LJ:
            return self.backbone.joint_dim
        return self.backbone.hidden_dim

    def parameter_shapes(self, num_classes: int) -> dict[str, tuple[int, int]]:
        shapes = self.backbone.parameter_shapes()
        if self.is_credal:
            for part in ("mid", "half"):
                shapes[f"head.{part}.weight"] = (self.head_input_dim, num_classes)
                shapes[f"head.{part}.bias"] = (1, num_classes)
        else:
            shapes["head.weight"] = (self.head_input_dim, num_classes)
            shapes["head.bias"] = (1, num_classes)

        return shapes

    def to_json(self) -> dict:
        return {
            "model_kind": self.model_kind.value,
            "backbone": self.backbone.to_json(),
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "delta": self.delta,
            "seed": self.seed,
            "early_stop_metric": None if self.early_stop_metric is None else self.early_stop_metric.value
        }

    @classmethod
    def from_json(cls, data: dict) -> "TrainConfig":
        return cls(**{**data, "backbone": BackboneConfig(**data["backbone"])})


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_metric: float
    seconds: float

    def to_json(self) -> dict:
        return {"epoch": self.epoch, "loss": self.loss, "val_metric": self.val_metric, "seconds": self.seconds}


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = -np.inf
    stop_metric: StopMetric = StopMetric.VAL_MACRO_F1

    def to_csv(self, path: Union[str, Path], record_timing: bool = False) -> None:
        """
        Wall-clock seconds are left empty unless `record_timing` is set, so that reruns produce identical files
        """

        Methods.write_csv(path, Constants.HISTORY_CSV_COLUMNS, (
            (record.epoch, repr(record.loss), repr(record.val_metric), record.seconds if record_timing else None)
            for record in self.records
        ))


@dataclass(frozen=True)
class ModelOutputs:
    trace: LayerTrace
    logits: Optional[Tensor] = None
    q_lower: Optional[Tensor] = None
    q_upper: Optional[Tensor] = None


@dataclass(frozen=True, eq=False)
class ModelEvaluation:
    """
    Detached numpy values of one deterministic forward pass over every node
    """

    trace: list[np.ndarray]
    joint: np.ndarray
    logits: Optional[np.ndarray] = None
    prediction: Optional[CredalPrediction] = None

    @property
    def final_embedding(self) -> np.ndarray:
        return self.trace[-1]

    @property
    def probabilities(self) -> np.ndarray:
        return softmax(self.logits, axis=1)


@dataclass(frozen=True, eq=False)
class TrainedModel:
    config: TrainConfig
    params: ParamDict
    num_classes: int

    def __post_init__(self):
        Methods.check_parameters(self.config.parameter_shapes(self.num_classes), self.params)

    def forward(
            self, tape: Tape, dataset: GraphDataset,
            features: Optional[Tensor] = None, dropout_rng: Optional[np.random.Generator] = None
    ) -> ModelOutputs:
        return model_forward(tape, dataset, self.config, self.params, features=features, dropout_rng=dropout_rng)

    def evaluate(self, dataset: GraphDataset) -> ModelEvaluation:
        tape = GraphTape()
        outputs = self.forward(tape, dataset)
        trace = [tensor.value for tensor in outputs.trace]

        if self.config.is_credal:
            return ModelEvaluation(
                trace=trace, joint=np.concatenate(trace, axis=1),
                prediction=CredalPrediction(q_lower=outputs.q_lower.value, q_upper=outputs.q_upper.value)
            )
        return ModelEvaluation(trace=trace, joint=np.concatenate(trace, axis=1), logits=outputs.logits.value)


def init_params(config: TrainConfig, num_classes: int) -> ParamDict:
    rng = Methods.rng(config.seed, Constants.SEED_SALT_INIT)
    params = init_backbone_params(config.backbone, rng)
    for name, shape in sorted(config.parameter_shapes(num_classes).items()):
        if name.startswith("head."):
            params[name] = np.zeros(shape) if name.endswith(".bias") else glorot_init(*shape, rng)

    return params


def model_forward(
        tape: Tape, dataset: GraphDataset, config: TrainConfig, params: ParamDict,
        features: Optional[Tensor] = None, dropout_rng: Optional[np.random.Generator] = None
) -> ModelOutputs:
    trace = backbone_forward(tape, dataset, config.backbone, params, features=features, dropout_rng=dropout_rng)
    head_input = joint_concat(tape, trace) if config.model_kind is ModelKind.CREDAL_LJ else trace[-1]

    def parameter(name: str) -> Tensor:
        return tape.parameter(name, params[name])

    if not config.is_credal:
        logits = tape.apply(
            Primitive.BIAS_ADD,
            tape.apply(Primitive.MATMUL, head_input, parameter("head.weight")),
            parameter("head.bias")
        )
        return ModelOutputs(trace=trace, logits=logits)

    a_lower, a_upper = credal_layer_forward(
        tape, head_input,
        parameter("head.mid.weight"), parameter("head.mid.bias"),
        parameter("head.half.weight"), parameter("head.half.bias")
    )
    q_lower, q_upper = interval_softmax_tensors(tape, a_lower, a_upper)
    return ModelOutputs(trace=trace, q_lower=q_lower, q_upper=q_upper)


def dro_loss(prediction: CredalPrediction, labels: np.ndarray, train_mask: np.ndarray, delta: float) -> float:
    """
    Mean CE on the upper bounds over the training nodes, plus (1 / (delta * N)) times the summed CE on the lower
    bounds of the ceil(delta * N) hardest training nodes. `labels` are the remapped ID labels for every node
    """

    index = np.flatnonzero(train_mask) if train_mask.dtype == bool else np.asarray(train_mask)
    if index.size == 0:
        raise ValueError("DRO loss requires at least one training node")
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must lie in (0, 1]: {delta}")

    upper_ce = cross_entropy_rows(prediction.q_upper, labels, index)
    lower_ce = cross_entropy_rows(prediction.q_lower, labels, index)
    hard_set = select_hard_set(lower_ce, delta)

    return float(upper_ce.mean() + lower_ce[hard_set].sum() / (delta * index.size))


def training_loss(
        tape: Tape, outputs: ModelOutputs, config: TrainConfig, labels: np.ndarray, train_index: np.ndarray,
        hard_set: Optional[np.ndarray] = None
) -> Tensor:
    if config.is_credal:
        return tape.apply(
            Primitive.DRO_LOSS, outputs.q_lower, outputs.q_upper,
            labels=labels[train_index], index=train_index, delta=config.delta, hard_set=hard_set
        )
    return tape.apply(Primitive.SOFTMAX_CROSS_ENTROPY, outputs.logits, labels=labels[train_index], index=train_index)


@dataclass(frozen=True, eq=False)
class ValidationNodes:
    id_index: np.ndarray
    ood_index: np.ndarray
    id_labels: np.ndarray

    @classmethod
    def of(cls, split: SplitMasks, labels: np.ndarray) -> "ValidationNodes":
        id_index = np.flatnonzero(split.val & (labels >= 0))
        return cls(id_index=id_index, ood_index=np.flatnonzero(split.val & (labels < 0)), id_labels=labels[id_index])


def validation_metric(
        metric: StopMetric, num_classes: int, nodes: ValidationNodes,
        logits: Optional[np.ndarray] = None, prediction: Optional[CredalPrediction] = None, logger=None
) -> float:
    if metric is StopMetric.VAL_EPISTEMIC_AUROC:
        scores = interval_uncertainty(prediction, logger=logger).eu
        return auroc(scores[nodes.id_index], scores[nodes.ood_index])

    if nodes.id_index.size == 0:
        return 0.0
    if prediction is not None:
        predicted = point_prediction(prediction, Bound.UPPER)
    else:
        predicted = np.argmax(logits, axis=1)
    return macro_f1(predicted[nodes.id_index], nodes.id_labels, range(num_classes))


def validation_cross_entropy(
        nodes: ValidationNodes, logits: Optional[np.ndarray] = None, prediction: Optional[CredalPrediction] = None
) -> float:
    if nodes.id_index.size == 0:
        return np.inf
    if prediction is not None:
        q = prediction.q_upper[nodes.id_index, nodes.id_labels]
        return float(-np.log(np.clip(q, Constants.CE_CLAMP_MIN, 1.0)).mean())

    log_q = log_softmax(logits[nodes.id_index], axis=1)
    return float(-log_q[np.arange(nodes.id_index.size), nodes.id_labels].mean())


def train_model(
        dataset: GraphDataset, split: SplitMasks, partition: ClassPartition, config: TrainConfig,
        logger: Optional[logging.Logger] = None, do_log_all: bool = False
) -> tuple[TrainedModel, TrainHistory]:
    """
    Full-batch Adam training. Stops after `patience` epochs without a strict improvement of the validation metric
    and returns the parameters of the best epoch. Under macro F1, an equal score with a lower validation
    cross-entropy also counts as an improvement
    """

    logger = logger or logging.getLogger(__name__)
    log_epoch = logger.info if do_log_all else logger.debug

    partition.check(dataset.num_classes)
    split.check_no_leak(dataset.labels, partition)
    labels = remap_id_labels(dataset.labels, partition)
    num_classes = partition.num_id_classes
    train_index = np.flatnonzero(split.train)
    if train_index.size == 0:
        raise TrainingError("training mask is empty")

    nodes = ValidationNodes.of(split, labels)
    metric = config.stop_metric
    if metric is StopMetric.VAL_EPISTEMIC_AUROC and (nodes.ood_index.size == 0 or nodes.id_index.size == 0):
        logger.warning("Validation split lacks ID or OOD nodes; early stopping on validation macro F1 instead.")
        metric = StopMetric.VAL_MACRO_F1

    params = init_params(config, num_classes)
    state = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    dropout_rng = Methods.rng(config.seed, Constants.SEED_SALT_DROPOUT) if config.backbone.dropout > 0.0 else None

    history = TrainHistory(stop_metric=metric)
    best_params = params
    best_val_loss = np.inf
    # Under macro F1, equal scores go to the epoch with the lower validation cross-entropy
    break_ties = metric is StopMetric.VAL_MACRO_F1
    epochs_without_improvement = 0

    logger.info(
        f"Training {config.model_kind.value} ({config.backbone.kind.value}, {config.backbone.num_layers} layers)"
        f" on {dataset.name} with seed {config.seed}..."
    )
    training_start = datetime.now()
    for epoch in range(1, config.max_epochs + 1):
        epoch_start = datetime.now()
        try:
            tape = GraphTape(logger=logger)
            outputs = model_forward(tape, dataset, config, params, dropout_rng=dropout_rng)
            loss = training_loss(tape, outputs, config, labels, train_index)
            loss_value = float(loss.value[0, 0])
            grads = tape.backward(loss)

            if dropout_rng is not None:
                tape = GraphTape(logger=logger)
                outputs = model_forward(tape, dataset, config, params)

            if config.is_credal:
                prediction = CredalPrediction(q_lower=outputs.q_lower.value, q_upper=outputs.q_upper.value)
                val_metric = validation_metric(metric, num_classes, nodes, prediction=prediction, logger=logger)
                val_loss = validation_cross_entropy(nodes, prediction=prediction) if break_ties else np.inf
            else:
                val_metric = validation_metric(metric, num_classes, nodes, logits=outputs.logits.value)
                val_loss = validation_cross_entropy(nodes, logits=outputs.logits.value) if break_ties else np.inf

            new_params, state = adam_step(params, grads, state)
        except NonFiniteError as ex:
            raise TrainingError(
                f"non-finite values during epoch {epoch}: {ex}",
                epoch_dump=[record.to_json() for record in history.records]
            ) from ex

        seconds = (datetime.now() - epoch_start).total_seconds()
        history.records.append(EpochRecord(epoch=epoch, loss=loss_value, val_metric=val_metric, seconds=seconds))
        log_epoch(f"Epoch {epoch}: loss={loss_value:.6f}, {metric.value}={val_metric:.6f}")

        # The metric describes the parameters that produced this epoch's forward pass
        if val_metric > history.best_metric or (val_metric == history.best_metric and val_loss < best_val_loss):
            history.best_metric = val_metric
            best_val_loss = val_loss
            history.best_epoch = epoch
            best_params = params
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1

        params = new_params
        if epochs_without_improvement >= config.patience:
            log_epoch(f"Early stopping at epoch {epoch} (best epoch {history.best_epoch}).")
            break

    logger.info(
        f"Training completed in {round((datetime.now() - training_start).total_seconds(), 2)}s"
        f" (best epoch {history.best_epoch}, {metric.value}={history.best_metric:.4f})."
    )

    return TrainedModel(config=config, params=best_params, num_classes=num_classes), history


def save_checkpoint(model: TrainedModel, directory: Union[str, Path]) -> None:
    write_parameters(directory, model.params, {"model": model.config.to_json(), "num_classes": model.num_classes})


def load_checkpoint(directory: Union[str, Path], expected_kind: Optional[ModelKind] = None) -> TrainedModel:
    params, metadata = read_parameters(directory)
    try:
        config = TrainConfig.from_json(metadata["model"])
        num_classes = int(metadata["num_classes"])
    except (KeyError, TypeError, ValueError) as ex:
        raise CheckpointError(f"checkpoint manifest has no valid model config: {directory}") from ex

    if expected_kind is not None and config.model_kind is not ModelKind(expected_kind):
        raise CheckpointError(
            f"checkpoint holds a different model kind (expected {ModelKind(expected_kind).value}):"
            f" {config.model_kind.value}"
        )

    try:
        return TrainedModel(config=config, params=params, num_classes=num_classes)
    except ValueError as ex:
        raise CheckpointError(f"checkpoint parameters do not match its model config: {ex}") from ex


def grid_search(
        dataset: GraphDataset, split: SplitMasks, partition: ClassPartition, config: TrainConfig, grid: dict,
        logger: Optional[logging.Logger] = None
) -> tuple[TrainedModel, TrainHistory, TrainConfig]:
    """
    Trains one model per combination of the grid's values and keeps the one with the best validation metric
    (the first such combination on ties). Grid keys: lr, weight_decay, delta, hidden_dim, num_layers
    """

    logger = logger or logging.getLogger(__name__)
    backbone_keys = {"hidden_dim", "num_layers"}
    keys = sorted(grid)

    best: Optional[tuple[TrainedModel, TrainHistory, TrainConfig]] = None
    for values in product(*(grid[key] for key in keys)):
        overrides = dict(zip(keys, values))
        candidate = replace(
            config,
            backbone=replace(config.backbone, **{key: overrides[key] for key in keys if key in backbone_keys}),
            **{key: overrides[key] for key in keys if key not in backbone_keys}
        )

        model, history = train_model(dataset, split, partition, candidate, logger=logger)
        logger.info(f"Grid point {overrides}: {history.stop_metric.value}={history.best_metric:.4f}")
        if best is None or history.best_metric > best[1].best_metric:
            best = (model, history, candidate)

    if best is None:
        raise ValueError("grid search over an empty grid")

    return best


def train_ensemble(
        dataset: GraphDataset, split: SplitMasks, partition: ClassPartition, config: TrainConfig,
        size: int, pool_size: Optional[int] = None, logger: Optional[logging.Logger] = None
) -> list[TrainedModel]:
    """
    Trains `pool_size` vanilla models that differ only by seed and keeps the `size` with the best validation
    macro F1 (pool order on ties)
    """

    logger = logger or logging.getLogger(__name__)
    pool_size = size if pool_size is None else pool_size
    if pool_size < size:
        raise ValueError(f"ensemble pool is smaller than the ensemble ({pool_size} < {size})")

    base = replace(config, model_kind=ModelKind.VANILLA, early_stop_metric=StopMetric.VAL_MACRO_F1)
    pool = []
    for member in range(pool_size):
        member_config = replace(base, seed=Methods.derive_seed(config.seed, Constants.SEED_SALT_ENSEMBLE, member))
        pool.append(train_model(dataset, split, partition, member_config, logger=logger))

    ranking = sorted(range(pool_size), key=lambda member: -pool[member][1].best_metric)
    kept = sorted(ranking[:size])
    logger.info(f"Ensemble kept {size} of {pool_size} pool members: {kept}")

    return [pool[member][0] for member in kept]
