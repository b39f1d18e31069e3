from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Type, Union

import numpy as np

from .backbone import BackboneConfig
from .constants import Constants
from .enums import (
    BackboneKey, BackboneKind, ConfigKey, CsbmKey, DatasetKey, GridKey, MethodKey, ModelKey, ModelKind, OutputKey,
    PartitionKey, SplitKey, StopMetric
)
from .errors import ConfigError, DatasetError
from .extensions import Scorer, ScorerKey
from .graph import CsbmParams, DatasetSplitSpec, load_split_spec
from .methods import Methods
from .training import TrainConfig
from .types import MethodEntry


@dataclass(frozen=True)
class ModelSection:
    kind: ModelKind = ModelKind.CREDAL_LJ
    backbone_kind: BackboneKind = BackboneKind.GCN
    num_layers: int = Constants.DEFAULT_NUM_LAYERS
    hidden_dim: int = Constants.DEFAULT_HIDDEN_DIM
    dropout: float = 0.0
    lr: float = Constants.DEFAULT_LR
    weight_decay: float = Constants.DEFAULT_WEIGHT_DECAY
    max_epochs: int = Constants.DEFAULT_MAX_EPOCHS
    patience: int = Constants.DEFAULT_PATIENCE
    delta: float = Constants.DEFAULT_DELTA
    early_stop_metric: Optional[StopMetric] = None

    def train_config(self, input_dim: int, seed: int, kind: Optional[ModelKind] = None) -> TrainConfig:
        return TrainConfig(
            backbone=BackboneConfig(
                input_dim=input_dim, kind=self.backbone_kind, num_layers=self.num_layers,
                hidden_dim=self.hidden_dim, dropout=self.dropout
            ),
            model_kind=self.kind if kind is None else kind,
            lr=self.lr,
            weight_decay=self.weight_decay,
            max_epochs=self.max_epochs,
            patience=self.patience,
            delta=self.delta,
            seed=seed,
            # An explicit metric only applies to the configured model kind
            early_stop_metric=self.early_stop_metric if kind in (None, self.kind) else None
        )


@dataclass(frozen=True)
class OutputSection:
    dir: Path = Path("out")
    record_timing: bool = False
    export_predictions: bool = False
    do_log_all: bool = False


@dataclass(frozen=True)
class RunConfig:
    dataset_path: Optional[Path] = None
    csbm: Optional[CsbmParams] = None
    ood_classes: Optional[tuple[int, ...]] = None  # None defers to the dataset's split.json
    train_frac: float = Constants.DEFAULT_TRAIN_FRAC
    val_frac: float = Constants.DEFAULT_VAL_FRAC
    seeds: tuple[int, ...] = (0,)
    model: ModelSection = field(default_factory=ModelSection)
    methods: tuple[MethodEntry, ...] = ()
    grid: Optional[dict[str, tuple]] = None
    output: OutputSection = field(default_factory=OutputSection)

    @classmethod
    def from_file(cls, path: Union[str, Path], out_dir: Optional[Union[str, Path]] = None, seed: Optional[int] = None):
        try:
            data = Methods.read_json(path)
        except FileNotFoundError as ex:
            raise ConfigError(f"config file not found: {path}") from ex
        except ValueError as ex:
            raise ConfigError(f"config file is not valid JSON ({path}): {ex}") from ex

        config = cls.from_json(data)
        if out_dir is not None:
            config = replace(config, output=replace(config.output, dir=Path(out_dir)))
        if seed is not None:
            config = replace(config, seeds=(int(seed),))

        return config

    @classmethod
    def from_json(cls, data: Any) -> "RunConfig":
        sections = _section(data, ConfigKey, "config")

        dataset = _section(sections.get(ConfigKey.DATASET), DatasetKey, ConfigKey.DATASET.value)
        if (DatasetKey.PATH in dataset) == (DatasetKey.CSBM in dataset):
            raise ConfigError("dataset section requires exactly one of 'path' and 'csbm'")
        dataset_path = Path(_typed(dataset, DatasetKey.PATH, str)) if DatasetKey.PATH in dataset else None
        if dataset_path is not None and not dataset_path.is_dir():
            raise ConfigError(f"dataset directory not found: {dataset_path}")
        csbm = _parse_csbm(dataset[DatasetKey.CSBM]) if DatasetKey.CSBM in dataset else None

        split_spec = None
        if dataset_path is not None:
            try:
                split_spec = load_split_spec(dataset_path)
            except (ValueError, TypeError) as ex:
                raise ConfigError(f"unreadable split file in {dataset_path}: {ex}") from ex

        partition = _section(sections.get(ConfigKey.PARTITION, {}), PartitionKey, ConfigKey.PARTITION.value)
        ood_classes = None
        if PartitionKey.OOD_CLASSES in partition:
            ood_classes = tuple(_int_list(partition[PartitionKey.OOD_CLASSES], PartitionKey.OOD_CLASSES.value))
        elif split_spec is not None and split_spec.ood_classes:
            ood_classes = split_spec.ood_classes

        split = _section(sections.get(ConfigKey.SPLIT, {}), SplitKey, ConfigKey.SPLIT.value)
        # Values the config leaves out come from the dataset's split file, then from the defaults
        fallback = split_spec if split_spec is not None else DatasetSplitSpec()
        train_frac = _typed(split, SplitKey.TRAIN_FRAC, float, fallback.train_frac)
        val_frac = _typed(split, SplitKey.VAL_FRAC, float, fallback.val_frac)
        if not (0 < train_frac < 1 and 0 < val_frac < 1 and train_frac + val_frac < 1):
            raise ConfigError(f"invalid split fractions (train_frac={train_frac}, val_frac={val_frac})")
        if SplitKey.SEED in split and SplitKey.SEEDS in split:
            raise ConfigError("split section accepts 'seed' or 'seeds', not both")
        if SplitKey.SEEDS in split:
            seeds = tuple(_int_list(split[SplitKey.SEEDS], SplitKey.SEEDS.value))
            if not seeds or len(set(seeds)) != len(seeds):
                raise ConfigError(f"seeds must be a non-empty list of distinct integers: {list(seeds)}")
        else:
            seeds = (_typed(split, SplitKey.SEED, int, fallback.seed),)

        output = _section(sections.get(ConfigKey.OUTPUT, {}), OutputKey, ConfigKey.OUTPUT.value)

        return cls(
            dataset_path=dataset_path,
            csbm=csbm,
            ood_classes=ood_classes,
            train_frac=train_frac,
            val_frac=val_frac,
            seeds=seeds,
            model=_parse_model(sections.get(ConfigKey.MODEL, {})),
            methods=_parse_methods(sections.get(ConfigKey.METHODS, [])),
            grid=_parse_grid(sections[ConfigKey.GRID]) if ConfigKey.GRID in sections else None,
            output=OutputSection(
                dir=Path(_typed(output, OutputKey.DIR, str, "out")),
                record_timing=_typed(output, OutputKey.RECORD_TIMING, bool, False),
                export_predictions=_typed(output, OutputKey.EXPORT_PREDICTIONS, bool, False),
                do_log_all=_typed(output, OutputKey.DO_LOG_ALL, bool, False)
            )
        )


def _section(data: Any, key_enum: Type[Enum], name: str) -> dict:
    """
    Validates that `data` is an object whose keys all belong to `key_enum`, and returns it keyed by enum member
    """

    if not isinstance(data, dict):
        raise ConfigError(f"section must be a JSON object ({name}): {data!r}")

    allowed = {member.value: member for member in key_enum}
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unrecognised keys in section '{name}': {unknown}")

    return {allowed[key]: value for key, value in data.items()}


def _typed(section: dict, key: Enum, expected: type, default: Any = None) -> Any:
    if key not in section:
        if default is None and expected is not bool:
            raise ConfigError(f"missing required key: {key.value}")
        return default

    value = section[key]
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if type(value) is not expected:
        raise ConfigError(f"expected {expected.__name__} for '{key.value}': {value!r}")

    return value


def _int_list(value: Any, name: str) -> list[int]:
    if not isinstance(value, list) or any(type(item) is not int for item in value):
        raise ConfigError(f"expected a list of integers for '{name}': {value!r}")

    return value


def _check_range(name: str, value: float, low: float, high: float, low_inclusive: bool = True) -> None:
    above_low = value >= low if low_inclusive else value > low
    if not (above_low and value <= high):
        bracket = "[" if low_inclusive else "("
        raise ConfigError(f"{name} outside {bracket}{low}, {high}]: {value}")


def _parse_csbm(data: Any) -> CsbmParams:
    section = _section(data, CsbmKey, DatasetKey.CSBM.value)
    try:
        return CsbmParams(
            nodes_per_class=_typed(section, CsbmKey.NODES_PER_CLASS, int),
            num_classes=_typed(section, CsbmKey.NUM_CLASSES, int),
            p_in=_typed(section, CsbmKey.P_IN, float),
            p_out=_typed(section, CsbmKey.P_OUT, float),
            feature_dim=_typed(section, CsbmKey.FEATURE_DIM, int),
            mean_separation=_typed(section, CsbmKey.MEAN_SEPARATION, float, 1.5),
            noise_sigma=_typed(section, CsbmKey.NOISE_SIGMA, float, 1.0),
            seed=_typed(section, CsbmKey.SEED, int, 0)
        )
    except DatasetError as ex:
        raise ConfigError(f"invalid csbm parameters: {ex}") from ex


def _parse_model(data: Any) -> ModelSection:
    section = _section(data, ModelKey, ConfigKey.MODEL.value)
    backbone = _section(section.get(ModelKey.BACKBONE, {}), BackboneKey, ModelKey.BACKBONE.value)

    try:
        kind = ModelKind(_typed(section, ModelKey.KIND, str, ModelKind.CREDAL_LJ.value))
        backbone_kind = BackboneKind(_typed(backbone, BackboneKey.KIND, str, BackboneKind.GCN.value))
        early_stop_metric = None
        if ModelKey.EARLY_STOP_METRIC in section:
            early_stop_metric = StopMetric(_typed(section, ModelKey.EARLY_STOP_METRIC, str))
    except ValueError as ex:
        raise ConfigError(f"unrecognised value in model section: {ex}") from ex

    model = ModelSection(
        kind=kind,
        backbone_kind=backbone_kind,
        num_layers=_typed(backbone, BackboneKey.NUM_LAYERS, int, Constants.DEFAULT_NUM_LAYERS),
        hidden_dim=_typed(backbone, BackboneKey.HIDDEN_DIM, int, Constants.DEFAULT_HIDDEN_DIM),
        dropout=_typed(backbone, BackboneKey.DROPOUT, float, 0.0),
        lr=_typed(section, ModelKey.LR, float, Constants.DEFAULT_LR),
        weight_decay=_typed(section, ModelKey.WEIGHT_DECAY, float, Constants.DEFAULT_WEIGHT_DECAY),
        max_epochs=_typed(section, ModelKey.MAX_EPOCHS, int, Constants.DEFAULT_MAX_EPOCHS),
        patience=_typed(section, ModelKey.PATIENCE, int, Constants.DEFAULT_PATIENCE),
        delta=_typed(section, ModelKey.DELTA, float, Constants.DEFAULT_DELTA),
        early_stop_metric=early_stop_metric
    )

    _check_range(ModelKey.LR.value, model.lr, *Constants.LR_BOUNDS)
    _check_range(ModelKey.WEIGHT_DECAY.value, model.weight_decay, *Constants.WEIGHT_DECAY_BOUNDS)
    _check_range(ModelKey.DELTA.value, model.delta, *Constants.DELTA_BOUNDS, low_inclusive=False)
    if model.num_layers < 1 or model.hidden_dim < 1:
        raise ConfigError(f"invalid backbone size (num_layers={model.num_layers}, hidden_dim={model.hidden_dim})")
    if not 0.0 <= model.dropout < 1.0:
        raise ConfigError(f"dropout outside [0, 1): {model.dropout}")
    if model.max_epochs < 1 or model.patience < 1:
        raise ConfigError(f"max_epochs and patience must be at least 1 ({model.max_epochs}, {model.patience})")

    return model


# Parameters each method type accepts
METHOD_PARAMETERS: dict[Scorer, tuple[ScorerKey, ...]] = {
    Scorer.VANILLA: (),
    Scorer.MSP: (ScorerKey.TEMPERATURE,),
    Scorer.ENERGY: (ScorerKey.TEMPERATURE,),
    Scorer.ODIN: (ScorerKey.TEMPERATURE, ScorerKey.EPSILON, ScorerKey.EPSILONS),
    Scorer.MAHALANOBIS: (),
    Scorer.KNN: (ScorerKey.K,),
    Scorer.KNNLJ: (ScorerKey.K,),
    Scorer.GNNSAFE: (ScorerKey.TEMPERATURE, ScorerKey.ALPHA, ScorerKey.PROPAGATION_STEPS),
    Scorer.CLASSICAL_ENSEMBLE: (ScorerKey.SIZE, ScorerKey.POOL_SIZE),
    Scorer.CREDAL_ENSEMBLE: (ScorerKey.SIZE, ScorerKey.POOL_SIZE, ScorerKey.MEMBERS_ONLY),
    Scorer.CREDAL_FINAL: (),
    Scorer.CREDAL_LJ: ()
}


def _parse_methods(data: Any) -> tuple[MethodEntry, ...]:
    if not isinstance(data, list):
        raise ConfigError(f"methods must be a list: {data!r}")

    names = set()
    methods = []
    for entry in data:
        if not isinstance(entry, dict) or MethodKey.TYPE.value not in entry:
            raise ConfigError(f"each method entry must be an object with a 'type': {entry!r}")
        try:
            scorer = Scorer(entry[MethodKey.TYPE.value])
        except ValueError as ex:
            raise ConfigError(f"unrecognised method type: {entry[MethodKey.TYPE.value]!r}") from ex

        allowed_keys = {member.value for member in MethodKey} | {key.value for key in METHOD_PARAMETERS[scorer]}
        unknown = sorted(set(entry) - allowed_keys)
        if unknown:
            raise ConfigError(f"unrecognised keys in method entry '{scorer.value}': {unknown}")

        name = entry.get(MethodKey.NAME.value, scorer.value)
        if not isinstance(name, str) or not name:
            raise ConfigError(f"method name must be a non-empty string: {name!r}")
        if name in names:
            raise ConfigError(f"duplicate method name (set 'name' to tell entries apart): {name}")
        names.add(name)

        _check_method_parameters(scorer, entry)
        methods.append(dict(entry))

    return tuple(methods)


def _check_method_parameters(scorer: Scorer, entry: dict) -> None:
    parameters = _section(
        {key: value for key, value in entry.items() if key not in {member.value for member in MethodKey}},
        ScorerKey, scorer.value
    )
    label = f"method '{scorer.value}'"

    if ScorerKey.TEMPERATURE in parameters:
        _check_range(f"{label} temperature", _typed(parameters, ScorerKey.TEMPERATURE, float), 0.0, np.inf, False)
    if ScorerKey.EPSILON in parameters and ScorerKey.EPSILONS in parameters:
        raise ConfigError(f"{label} accepts 'epsilon' or 'epsilons', not both")
    if ScorerKey.EPSILON in parameters:
        _check_range(f"{label} epsilon", _typed(parameters, ScorerKey.EPSILON, float), 0.0, np.inf)
    if ScorerKey.EPSILONS in parameters:
        epsilons = parameters[ScorerKey.EPSILONS]
        if (
                not isinstance(epsilons, list) or not epsilons
                or any(isinstance(value, bool) or not isinstance(value, (int, float)) for value in epsilons)
        ):
            raise ConfigError(f"{label} epsilons must be a non-empty list of numbers: {epsilons!r}")
        for value in epsilons:
            _check_range(f"{label} epsilon", float(value), 0.0, np.inf)
    if ScorerKey.K in parameters:
        _check_range(f"{label} k", _typed(parameters, ScorerKey.K, int), 1, np.inf)
    if ScorerKey.ALPHA in parameters:
        _check_range(f"{label} alpha", _typed(parameters, ScorerKey.ALPHA, float), 0.0, 1.0)
    if ScorerKey.PROPAGATION_STEPS in parameters:
        _check_range(f"{label} propagation_steps", _typed(parameters, ScorerKey.PROPAGATION_STEPS, int), 0, np.inf)
    if ScorerKey.MEMBERS_ONLY in parameters:
        _typed(parameters, ScorerKey.MEMBERS_ONLY, bool)

    if scorer in (Scorer.CLASSICAL_ENSEMBLE, Scorer.CREDAL_ENSEMBLE):
        size = _typed(parameters, ScorerKey.SIZE, int, Constants.ENSEMBLE_SIZE)
        _check_range(f"{label} size", size, *Constants.ENSEMBLE_SIZE_BOUNDS)
        pool_size = _typed(parameters, ScorerKey.POOL_SIZE, int, size)
        if pool_size < size:
            raise ConfigError(f"{label} pool_size must be at least the ensemble size ({pool_size} < {size})")


def _parse_grid(data: Any) -> dict[str, tuple]:
    section = _section(data, GridKey, ConfigKey.GRID.value)
    grid = {}
    for key, values in section.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid values must be a non-empty list ({key.value}): {values!r}")
        grid[key.value] = tuple(values)

    return grid
