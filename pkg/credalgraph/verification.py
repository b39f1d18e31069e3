from dataclasses import dataclass
from typing import Callable
import logging

import numpy as np
from scipy.special import softmax

from .backbone import BackboneConfig
from .constants import Constants
from .credal import (
    IntervalLogits, ensemble_entropy_decompose, entropy_bits, entropy_bounds_oracle, hull_entropy_oracle,
    hull_uncertainty, interval_softmax, interval_uncertainty, max_entropy_interval, min_entropy_interval
)
from .enums import ModelKind
from .graph import ClassPartition, CsbmParams, generate_csbm, leave_out_class_split, remap_id_labels
from .losses import cross_entropy_rows, select_hard_set
from .methods import Methods
from .metrics import auroc
from .tape import grad_check
from .training import GraphTape, TrainConfig, dro_loss, init_params, model_forward, training_loss


@dataclass(frozen=True)
class CheckResult:
    name: str
    measured: float
    tolerance: float
    passed: bool

    def describe(self) -> str:
        return (
            f"{self.name:<28} measured={self.measured:.3e} tolerance={self.tolerance:.1e}"
            f" {'PASS' if self.passed else 'FAIL'}"
        )


def _within(name: str, measured: float, tolerance: float) -> CheckResult:
    return CheckResult(name=name, measured=float(measured), tolerance=tolerance, passed=bool(measured <= tolerance))


def random_credal_sets(rng: np.random.Generator, count: int, num_classes: int, max_half_length: float = 1.5):
    midpoint = rng.normal(0.0, 2.0, size=(count, num_classes))
    half_length = rng.uniform(0.0, max_half_length, size=(count, num_classes))

    return interval_softmax(IntervalLogits(a_lower=midpoint - half_length, a_upper=midpoint + half_length))


def check_interval_softmax_validity(rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    for num_classes in range(2, 11):
        prediction = random_credal_sets(rng, 10_000 // 9 + 1, num_classes, max_half_length=5.0)
        worst = max(
            worst,
            np.max(prediction.q_lower - prediction.q_upper, initial=0.0),
            np.max(prediction.q_lower.sum(axis=1) - 1.0, initial=0.0),
            np.max(1.0 - prediction.q_upper.sum(axis=1), initial=0.0)
        )

    return _within("interval_softmax_validity", worst, Constants.CREDAL_TOLERANCE)


def check_degenerate_collapse(rng: np.random.Generator) -> list[CheckResult]:
    midpoint = rng.normal(0.0, 3.0, size=(1_000, 5))
    prediction = interval_softmax(IntervalLogits(a_lower=midpoint, a_upper=midpoint))
    expected = softmax(midpoint, axis=1)
    difference = max(np.abs(prediction.q_lower - expected).max(), np.abs(prediction.q_upper - expected).max())

    return [
        _within("degenerate_collapse", difference, 1e-12),
        _within("degenerate_epistemic", interval_uncertainty(prediction).eu.max(), Constants.CREDAL_TOLERANCE)
    ]


def check_entropy_oracle(rng: np.random.Generator, min_solver: Callable = min_entropy_interval) -> CheckResult:
    worst = 0.0
    for instance in range(100):
        num_classes = 2 + instance % 3
        # Narrower four-class sets keep the 1e-3 grid tractable
        prediction = random_credal_sets(rng, 1, num_classes, max_half_length=0.2 if num_classes == 4 else 1.5)
        q_lower, q_upper = prediction.q_lower[0], prediction.q_upper[0]

        oracle_max, oracle_min = entropy_bounds_oracle(q_lower, q_upper, Constants.ORACLE_MIN_RESOLUTION)
        worst = max(
            worst,
            abs(max_entropy_interval(q_lower, q_upper).entropy - oracle_max),
            abs(min_solver(q_lower, q_upper).entropy - oracle_min)
        )

    return _within("entropy_oracle_agreement", worst, 1e-3)


def reference_min_entropy(q_lower: np.ndarray, q_upper: np.ndarray) -> float:
    """
    Minimum entropy over every vertex of the box-simplex polytope: each subset of coordinates at its upper bound,
    the rest at their lower bounds, with one coordinate in turn absorbing the remaining mass
    """

    num_classes = q_lower.shape[0]
    at_upper = (np.arange(2 ** num_classes)[:, None] >> np.arange(num_classes)) & 1 == 1
    corners = np.where(at_upper, q_upper, q_lower)

    best = np.inf
    for free in range(num_classes):
        points = corners.copy()
        points[:, free] = 1.0 - (corners.sum(axis=1) - corners[:, free])
        inside = (points[:, free] >= q_lower[free] - 1e-9) & (points[:, free] <= q_upper[free] + 1e-9)
        if not np.any(inside):
            continue

        points = np.clip(points[inside], 0.0, 1.0)
        logs = np.log2(np.where(points > 0.0, points, 1.0))
        best = min(best, float((-(points * logs).sum(axis=1)).min()))

    return best


def check_min_entropy_vertices(rng: np.random.Generator, min_solver: Callable = min_entropy_interval) -> CheckResult:
    worst = 0.0
    for instance in range(100):
        num_classes = 2 + instance % (Constants.EXACT_MIN_ENTROPY_MAX_CLASSES - 1)
        prediction = random_credal_sets(rng, 1, num_classes)
        q_lower, q_upper = prediction.q_lower[0], prediction.q_upper[0]
        worst = max(worst, abs(min_solver(q_lower, q_upper).entropy - reference_min_entropy(q_lower, q_upper)))

    return _within("min_entropy_vertices", worst, Constants.CREDAL_TOLERANCE)


def check_hull_oracle(rng: np.random.Generator) -> list[CheckResult]:
    members = rng.dirichlet(np.ones(3), size=(50, 3))
    total, aleatoric, _ = hull_uncertainty(members)

    tu_error = max(abs(total[index] - hull_entropy_oracle(members[index])) for index in range(members.shape[0]))
    member_entropy = entropy_bits(members)

    return [
        _within("hull_tu_oracle", tu_error, 1e-3),
        _within("hull_au_exact", np.abs(aleatoric - member_entropy.min(axis=1)).max(), 1e-12)
    ]


def check_gradients(seed: int) -> CheckResult:
    """
    Credal joint-latent model with the DRO loss on a 20-node graph; the hard set is frozen at the evaluation point
    """

    dataset = generate_csbm(CsbmParams(
        nodes_per_class=5, num_classes=4, p_in=0.3, p_out=0.1, feature_dim=4, seed=seed
    ))
    partition = ClassPartition.leave_out((3,), dataset.num_classes)
    split = leave_out_class_split(dataset, partition, 0.6, 0.2, seed)
    labels = remap_id_labels(dataset.labels, partition)
    train_index = np.flatnonzero(split.train)

    config = TrainConfig(
        backbone=BackboneConfig(input_dim=dataset.feature_dim, num_layers=2, hidden_dim=8),
        model_kind=ModelKind.CREDAL_LJ, delta=0.7, seed=seed
    )
    params = init_params(config, partition.num_id_classes)

    tape = GraphTape()
    outputs = model_forward(tape, dataset, config, params)
    hard_set = select_hard_set(cross_entropy_rows(outputs.q_lower.value, labels, train_index), config.delta)

    def forward(shifted_params):
        shifted_tape = GraphTape()
        shifted_outputs = model_forward(shifted_tape, dataset, config, shifted_params)
        return shifted_tape, training_loss(shifted_tape, shifted_outputs, config, labels, train_index, hard_set=hard_set)

    error = grad_check(forward, params, coordinate_count=200, fd_step=1e-5, rng=Methods.rng(seed, Constants.SEED_SALT_VERIFY))
    return _within("gradient_check", error, 1e-4)


def check_dro_reduction(rng: np.random.Generator) -> CheckResult:
    prediction = random_credal_sets(rng, 50, 4)
    labels = rng.integers(0, 4, size=50)
    train_mask = np.ones(50, dtype=bool)

    expected = (
        cross_entropy_rows(prediction.q_upper, labels, train_mask).mean()
        + cross_entropy_rows(prediction.q_lower, labels, train_mask).mean()
    )
    return _within("dro_full_set_reduction", abs(dro_loss(prediction, labels, train_mask, 1.0) - expected), 1e-12)


def check_ensemble_decomposition(rng: np.random.Generator) -> CheckResult:
    random_members = rng.dirichlet(np.ones(4), size=(5, 1_000))
    worst = max(0.0, -float(ensemble_entropy_decompose(random_members).eu.min()))

    identical = np.repeat(rng.dirichlet(np.ones(4), size=(1, 100)), 5, axis=0)
    worst = max(worst, float(np.abs(ensemble_entropy_decompose(identical).eu).max()))

    pair = ensemble_entropy_decompose(np.array([[[1.0, 0.0]], [[0.0, 1.0]]]))
    worst = max(worst, abs(pair.tu[0] - 1.0), abs(pair.au[0]), abs(pair.eu[0] - 1.0))

    return _within("ensemble_decomposition", worst, 1e-12)


def check_auroc(rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    for _ in range(100):
        # Coarse integer scores, so that ties are common
        scores_id = rng.integers(0, 10, size=rng.integers(1, 40)).astype(np.float64)
        scores_ood = rng.integers(0, 10, size=rng.integers(1, 40)).astype(np.float64)

        difference = scores_ood[:, None] - scores_id[None, :]
        pairwise = (np.sum(difference > 0) + 0.5 * np.sum(difference == 0)) / difference.size
        worst = max(worst, abs(auroc(scores_id, scores_ood) - pairwise))

    return _within("auroc_pairwise_oracle", worst, 1e-12)


def run_verification(seed: int = 0, inject_fault: bool = False, logger=None) -> list[CheckResult]:
    """
    `inject_fault` replaces the minimum-entropy solver with the maximum-entropy solver, which must make the
    solver checks fail
    """

    logger = logger or logging.getLogger(__name__)
    min_solver = max_entropy_interval if inject_fault else min_entropy_interval
    if inject_fault:
        logger.warning("Fault injected: minimum-entropy solver replaced by the maximum-entropy solver.")

    def rng() -> np.random.Generator:
        return Methods.rng(seed, Constants.SEED_SALT_VERIFY)

    results = [
        check_interval_softmax_validity(rng()),
        *check_degenerate_collapse(rng()),
        check_entropy_oracle(rng(), min_solver=min_solver),
        check_min_entropy_vertices(rng(), min_solver=min_solver),
        *check_hull_oracle(rng()),
        check_gradients(seed),
        check_dro_reduction(rng()),
        check_ensemble_decomposition(rng()),
        check_auroc(rng())
    ]
    for result in results:
        (logger.info if result.passed else logger.error)(f"Check {result.name}: {'passed' if result.passed else 'FAILED'}.")

    return results
