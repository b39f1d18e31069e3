from objectextensions import Extendable

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Callable, Optional, Union
import logging

import numpy as np

from .config import RunConfig
from .constants import Constants
from .credal import CredalPrediction, UncertaintyScores, write_predictions_csv
from .enums import MethodKey, ModelKind, UncertaintyKind
from .errors import ConfigError
from .graph import (
    ClassPartition, GraphDataset, SplitMasks, generate_csbm, leave_out_class_split, load_dataset, remap_id_labels
)
from .methods import Methods
from .metrics import auroc, macro_f1, roc_points
from .training import ModelEvaluation, TrainedModel, grid_search, train_ensemble, train_model
from .types import MethodEntry


@dataclass
class ExperimentResult:
    dataset: str
    method: str
    kind: str  # An UncertaintyKind value, or Constants.ERROR_KIND
    seed: int
    auroc: Optional[float] = None
    f1_lower: Optional[float] = None
    f1_upper: Optional[float] = None
    seconds: Optional[float] = None
    error: Optional[str] = None
    roc: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]] = None  # (thresholds, fpr, tpr)

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "method": self.method,
            "kind": self.kind,
            "seed": self.seed,
            "auroc": self.auroc,
            "f1_lower": self.f1_lower,
            "f1_upper": self.f1_upper,
            "seconds": self.seconds
        }


@dataclass(frozen=True, eq=False)
class MethodScores:
    """
    One scorer output over every node; higher means more likely OOD
    """

    kind: UncertaintyKind
    scores: np.ndarray
    f1_lower: Optional[float] = None
    f1_upper: Optional[float] = None
    prediction: Optional[CredalPrediction] = None
    uncertainty: Optional[UncertaintyScores] = None


class SeedRun:
    """
    The split and every model trained for one seed. Models are trained on first use and shared by all methods
    """

    def __init__(self, config: RunConfig, dataset: GraphDataset, partition: ClassPartition, seed: int, logger=None):
        self.config = config
        self.dataset = dataset
        self.partition = partition
        self.seed = seed
        self.logger = logger or logging.getLogger(__name__)

        self.labels = remap_id_labels(dataset.labels, partition)
        self.split: SplitMasks = leave_out_class_split(dataset, partition, config.train_frac, config.val_frac, seed)
        self.train_index = np.flatnonzero(self.split.train)
        self.val_id_index = np.flatnonzero(self.split.val & (self.labels >= 0))
        self.val_ood_index = np.flatnonzero(self.split.val & (self.labels < 0))
        self.test_id_index = np.flatnonzero(self.split.test & (self.labels >= 0))
        self.test_ood_index = np.flatnonzero(self.split.test & (self.labels < 0))

        self.__models: dict[ModelKind, TrainedModel] = {}
        self.__evaluations: dict[ModelKind, ModelEvaluation] = {}
        self.__ensembles: dict[tuple[int, int], list[TrainedModel]] = {}

    def model(self, kind: ModelKind) -> TrainedModel:
        if kind not in self.__models:
            self.split.check_no_leak(self.dataset.labels, self.partition)
            train_config = self.config.model.train_config(self.dataset.feature_dim, self.seed, kind=kind)

            if self.config.grid:
                model, _, _ = grid_search(
                    self.dataset, self.split, self.partition, train_config, self.config.grid, logger=self.logger
                )
            else:
                model, _ = train_model(
                    self.dataset, self.split, self.partition, train_config,
                    logger=self.logger, do_log_all=self.config.output.do_log_all
                )
            self.__models[kind] = model

        return self.__models[kind]

    def evaluation(self, kind: ModelKind) -> ModelEvaluation:
        if kind not in self.__evaluations:
            self.__evaluations[kind] = self.model(kind).evaluate(self.dataset)

        return self.__evaluations[kind]

    def ensemble(self, size: int, pool_size: int) -> list[TrainedModel]:
        if (size, pool_size) not in self.__ensembles:
            self.split.check_no_leak(self.dataset.labels, self.partition)
            train_config = self.config.model.train_config(self.dataset.feature_dim, self.seed, kind=ModelKind.VANILLA)
            self.__ensembles[(size, pool_size)] = train_ensemble(
                self.dataset, self.split, self.partition, train_config, size, pool_size, logger=self.logger
            )

        return self.__ensembles[(size, pool_size)]

    def test_f1(self, predicted: np.ndarray) -> float:
        return macro_f1(
            predicted[self.test_id_index], self.labels[self.test_id_index], range(self.partition.num_id_classes)
        )

    def val_auroc(self, scores: np.ndarray) -> float:
        return auroc(scores[self.val_id_index], scores[self.val_ood_index])


class OodExperiment(Extendable):
    SCORERS: dict[str, Callable[[SeedRun, MethodEntry], list[MethodScores]]] = {}

    def __init__(self, config: RunConfig, logger=None):
        super().__init__()

        self.config = config
        self.logger = logger or logging.getLogger(__name__)

        self.dataset = build_dataset(config, logger=self.logger)
        self.partition = build_partition(config, self.dataset)
        self.__runs: dict[int, SeedRun] = {}

    def seed_run(self, seed: int) -> SeedRun:
        if seed not in self.__runs:
            self.__runs[seed] = SeedRun(self.config, self.dataset, self.partition, seed, logger=self.logger)

        return self.__runs[seed]

    def run_cell(self, method_index: int, seed: int) -> list[ExperimentResult]:
        """
        Scores one method for one seed. Failures are returned as a single error row rather than raised
        """

        entry = self.config.methods[method_index]
        method_type = entry[MethodKey.TYPE.value]
        method_name = entry.get(MethodKey.NAME.value, method_type)

        self.logger.info(f"Running method '{method_name}' (seed={seed})...")
        cell_start = datetime.now()
        try:
            run = self.seed_run(seed)
            outputs = self.SCORERS[method_type](run, entry)

            results = []
            for output in outputs:
                scores_id = output.scores[run.test_id_index]
                scores_ood = output.scores[run.test_ood_index]
                results.append(ExperimentResult(
                    dataset=self.dataset.name,
                    method=method_name,
                    kind=output.kind.value,
                    seed=seed,
                    auroc=auroc(scores_id, scores_ood),
                    f1_lower=Methods.optional_float(output.f1_lower),
                    f1_upper=Methods.optional_float(output.f1_upper),
                    roc=roc_points(scores_id, scores_ood)
                ))
                if self.config.output.export_predictions:
                    self.__export(run, method_name, output)
        except Exception as ex:
            self.logger.error(f"Method '{method_name}' failed (seed={seed}): {ex}", exc_info=True)
            results = [ExperimentResult(
                dataset=self.dataset.name, method=method_name, kind=Constants.ERROR_KIND, seed=seed,
                error=f"{type(ex).__name__}: {ex}"
            )]

        seconds = (datetime.now() - cell_start).total_seconds()
        self.logger.info(f"Method '{method_name}' (seed={seed}) completed in {round(seconds, 2)}s.")
        if self.config.output.record_timing:
            for result in results:
                result.seconds = seconds

        return results

    def __export(self, run: SeedRun, method_name: str, output: MethodScores) -> None:
        out_dir = self.config.output.dir
        out_dir.mkdir(parents=True, exist_ok=True)

        is_ood = run.labels < 0
        Methods.write_csv(
            out_dir / f"scores_{method_name}_{output.kind.value}_seed{run.seed}.csv",
            Constants.SCORES_CSV_COLUMNS,
            (
                (node, repr(float(output.scores[node])), int(is_ood[node]), run.split.name_of(node))
                for node in range(self.dataset.num_nodes)
            )
        )
        if output.prediction is not None and output.uncertainty is not None:
            write_predictions_csv(
                out_dir / f"predictions_{method_name}_seed{run.seed}.csv", output.prediction, output.uncertainty
            )


# Per-process experiment, so that worker processes reuse models across the cells they are handed
_worker_experiment: Optional[OodExperiment] = None


def _init_worker(config: RunConfig, log_level: int) -> None:
    global _worker_experiment

    from .extensions.presetscorers import PresetScorers

    logger = logging.getLogger(__name__)
    logger.setLevel(log_level)
    _worker_experiment = OodExperiment.with_extensions(PresetScorers)(config, logger=logger)


def _run_worker_cell(method_index: int, seed: int) -> list[ExperimentResult]:
    return _worker_experiment.run_cell(method_index, seed)


def build_dataset(config: RunConfig, logger=None) -> GraphDataset:
    if config.csbm is not None:
        return generate_csbm(config.csbm)

    return load_dataset(config.dataset_path, logger=logger)


def build_partition(config: RunConfig, dataset: GraphDataset) -> ClassPartition:
    if config.ood_classes is None:
        raise ConfigError("no OOD classes given in the config or in the dataset's split file")

    return ClassPartition.leave_out(tuple(config.ood_classes), dataset.num_classes)


def run_ood_experiment(config: RunConfig, jobs: int = 1, logger=None) -> list[ExperimentResult]:
    """
    Runs every (method, seed) cell, in parallel processes when `jobs` > 1.
    Results come back in config order (methods, then seeds), independent of `jobs`
    """

    from .extensions.presetscorers import PresetScorers

    logger = logger or logging.getLogger(__name__)
    cells = [(method_index, seed) for method_index in range(len(config.methods)) for seed in config.seeds]
    if not cells:
        logger.warning("No methods configured; nothing to evaluate.")
        return []

    if jobs <= 1:
        experiment = OodExperiment.with_extensions(PresetScorers)(config, logger=logger)
        results = [experiment.run_cell(method_index, seed) for method_index, seed in cells]
    else:
        logger.info(f"Running {len(cells)} cells on {jobs} worker processes...")
        with ProcessPoolExecutor(
                max_workers=jobs, initializer=_init_worker, initargs=(config, logger.getEffectiveLevel())
        ) as executor:
            results = list(executor.map(_run_worker_cell, *zip(*cells)))

    return [result for cell_results in results for result in cell_results]


def summarise(values: list[float]) -> dict:
    """
    Mean and sample standard deviation (ddof=1; None below two values)
    """

    values = [value for value in values if value is not None]
    if not values:
        return {"mean": None, "std": None, "n": 0}

    return {
        "mean": float(np.mean(values)),
        "std": float(np.std(values, ddof=1)) if len(values) > 1 else None,
        "n": len(values)
    }


def emit_results(results: list[ExperimentResult], out_dir: Union[str, Path]) -> dict:
    """
    Writes results.csv, results.json (grouped by method, with per-kind summaries across seeds)
    and one roc_<method>_<kind>.csv per (method, kind). Returns the JSON document
    """

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    Methods.write_csv(out_dir / Constants.RESULTS_CSV_FILE_NAME, Constants.RESULTS_CSV_COLUMNS, (
        (
            result.dataset, result.method, result.kind, result.seed,
            result.auroc, result.f1_lower, result.f1_upper, result.seconds
        )
        for result in results
    ))

    methods: dict[str, dict] = {}
    errors = []
    roc_rows: dict[tuple[str, str], list] = {}
    for result in results:
        if result.kind == Constants.ERROR_KIND:
            errors.append({**result.to_json(), "error": result.error})
            continue

        method = methods.setdefault(result.method, {"results": [], "summary": {}})
        method["results"].append(result.to_json())
        if result.roc is not None:
            rows = roc_rows.setdefault((result.method, result.kind), [])
            rows.extend((result.seed, *point) for point in zip(*(values.tolist() for values in result.roc)))

    for method in methods.values():
        for kind in dict.fromkeys(row["kind"] for row in method["results"]):
            rows = [row for row in method["results"] if row["kind"] == kind]
            method["summary"][kind] = {
                "auroc": summarise([row["auroc"] for row in rows]),
                "f1_lower": summarise([row["f1_lower"] for row in rows]),
                "f1_upper": summarise([row["f1_upper"] for row in rows])
            }

    for (method_name, kind), rows in roc_rows.items():
        Methods.write_csv(out_dir / f"roc_{method_name}_{kind}.csv", ("seed", "threshold", "fpr", "tpr"), rows)

    document = {
        "dataset": results[0].dataset if results else None,
        "methods": methods,
        "errors": errors
    }
    Methods.write_json(out_dir / Constants.RESULTS_JSON_FILE_NAME, document)

    return document
