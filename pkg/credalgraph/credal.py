from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from math import log
from pathlib import Path
from typing import Optional, Union
import logging

import numpy as np
from scipy.special import entr, logsumexp

from .constants import Constants
from .enums import Bound, Primitive
from .errors import InfeasibleCredalSetError
from .methods import Methods
from .tape import Tape, Tensor

LN2 = log(2.0)
PROBABILITY_FLOOR = np.finfo(np.float64).tiny
PROBABILITY_CEILING = np.nextafter(1.0, 0.0)


@dataclass(frozen=True, eq=False)
class IntervalLogits:
    a_lower: np.ndarray
    a_upper: np.ndarray


@dataclass(frozen=True, eq=False)
class CredalPrediction:
    q_lower: np.ndarray
    q_upper: np.ndarray

    def check(self, tolerance: float = Constants.CREDAL_TOLERANCE) -> None:
        if self.q_lower.shape != self.q_upper.shape:
            raise InfeasibleCredalSetError(f"bound shapes differ: {self.q_lower.shape} != {self.q_upper.shape}")
        if np.any(self.q_lower > self.q_upper + tolerance):
            raise InfeasibleCredalSetError("lower bound exceeds upper bound")
        if np.any(self.q_lower.sum(axis=-1) > 1.0 + tolerance) or np.any(self.q_upper.sum(axis=-1) < 1.0 - tolerance):
            raise InfeasibleCredalSetError("credal set is empty (sum of lower > 1 or sum of upper < 1)")

    @property
    def num_classes(self) -> int:
        return int(self.q_lower.shape[-1])


@dataclass(frozen=True, eq=False)
class UncertaintyScores:
    tu: np.ndarray
    au: np.ndarray
    eu: np.ndarray


@dataclass(frozen=True, eq=False)
class EntropyExtremum:
    distribution: np.ndarray
    entropy: np.ndarray
    is_approximate: bool = False


def entropy_bits(p: np.ndarray, axis: int = -1) -> np.ndarray:
    """
    Shannon entropy in bits, with 0 log 0 = 0
    """

    return entr(np.clip(p, 0.0, None)).sum(axis=axis) / LN2


def interval_softmax_side(own: np.ndarray, others: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    q_i = exp(own_i) / (exp(own_i) + sum_{k != i} exp(others_k)), with every denominator evaluated as a
    logsumexp over its own (C,) row. Also returns the competitor shares exp(others_k) / denominator_i (zero on the
    diagonal), which sum with q_i to 1 and carry the adjoint
    """

    if own.shape != others.shape:
        raise ValueError(f"interval logit shapes differ: {own.shape} != {others.shape}")

    diagonal = np.eye(own.shape[-1], dtype=bool)
    terms = np.where(diagonal, own[..., :, None], others[..., None, :])
    shares = np.exp(terms - logsumexp(terms, axis=-1, keepdims=True))

    q = np.diagonal(shares, axis1=-2, axis2=-1).copy()
    return q, np.where(diagonal, 0.0, shares)


def clamp_open_unit(q: np.ndarray) -> np.ndarray:
    """
    Credal bounds live in the open interval (0, 1); exact zeros and ones are rounding artefacts
    """

    return np.clip(q, PROBABILITY_FLOOR, PROBABILITY_CEILING)


def interval_softmax_bounds(a_lower: np.ndarray, a_upper: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    q_lower_i = exp(aL_i) / (exp(aL_i) + sum_{k != i} exp(aU_k))
    q_upper_i = exp(aU_i) / (exp(aU_i) + sum_{k != i} exp(aL_k))
    """

    q_lower, _ = interval_softmax_side(a_lower, a_upper)
    q_upper, _ = interval_softmax_side(a_upper, a_lower)
    return clamp_open_unit(q_lower), clamp_open_unit(q_upper)


def interval_softmax(logits: IntervalLogits) -> CredalPrediction:
    if not (np.all(np.isfinite(logits.a_lower)) and np.all(np.isfinite(logits.a_upper))):
        raise ValueError("non-finite interval logits")

    q_lower, q_upper = interval_softmax_bounds(logits.a_lower, logits.a_upper)
    return CredalPrediction(q_lower=q_lower, q_upper=q_upper)


def credal_layer_forward(
        tape: Tape, z: Tensor, weight: Tensor, bias: Tensor, half_weight: Tensor, half_bias: Tensor
) -> tuple[Tensor, Tensor]:
    """
    Interval logits [m - h, m + h] with midpoint m = zW + b and half-length h = softplus(zW2 + b2) >= 0
    """

    midpoint = tape.apply(Primitive.BIAS_ADD, tape.apply(Primitive.MATMUL, z, weight), bias)
    half_length = tape.apply(
        Primitive.SOFTPLUS, tape.apply(Primitive.BIAS_ADD, tape.apply(Primitive.MATMUL, z, half_weight), half_bias)
    )
    negated = tape.apply(Primitive.WEIGHTED_SUM, half_length, weights=(-1.0,))

    return tape.apply(Primitive.ADD, midpoint, negated), tape.apply(Primitive.ADD, midpoint, half_length)


def interval_softmax_tensors(tape: Tape, a_lower: Tensor, a_upper: Tensor) -> tuple[Tensor, Tensor]:
    return (
        tape.apply(Primitive.INTERVAL_SOFTMAX_LOWER, a_lower, a_upper),
        tape.apply(Primitive.INTERVAL_SOFTMAX_UPPER, a_lower, a_upper)
    )


def project_feasible(
        q_lower: np.ndarray, q_upper: np.ndarray,
        tolerance: float = Constants.CREDAL_TOLERANCE, logger: Optional[logging.Logger] = None
) -> tuple[np.ndarray, np.ndarray]:
    """
    Rows whose bounds miss feasibility by at most `tolerance` are repaired by uniform scaling
    (lower bounds down, upper bounds up); larger violations raise
    """

    q_lower = np.atleast_2d(np.asarray(q_lower, dtype=np.float64))
    q_upper = np.atleast_2d(np.asarray(q_upper, dtype=np.float64))
    if q_lower.shape != q_upper.shape:
        raise InfeasibleCredalSetError(f"bound shapes differ: {q_lower.shape} != {q_upper.shape}")
    if np.any(q_lower > q_upper + tolerance):
        raise InfeasibleCredalSetError("lower bound exceeds upper bound")

    lower_sum = q_lower.sum(axis=-1)
    upper_sum = q_upper.sum(axis=-1)
    if np.any(lower_sum > 1.0 + tolerance) or np.any(upper_sum < 1.0 - tolerance):
        raise InfeasibleCredalSetError(
            f"infeasible credal bounds (max lower sum {lower_sum.max():.12g}, min upper sum {upper_sum.min():.12g})"
        )

    needs_lower = lower_sum > 1.0
    needs_upper = upper_sum < 1.0
    if np.any(needs_lower) or np.any(needs_upper):
        violation = max(np.max(lower_sum - 1.0), np.max(1.0 - upper_sum))
        logger = logger or logging.getLogger(__name__)
        # Rounding noise on degenerate sets is routine
        log = logger.warning if violation > 1e-12 else logger.debug
        log(
            f"Projected {int(needs_lower.sum() + needs_upper.sum())} marginally infeasible credal bound rows"
            f" (largest violation {violation:.3e})."
        )
        q_lower = q_lower.copy()
        q_upper = q_upper.copy()
        q_lower[needs_lower] /= lower_sum[needs_lower, None]
        q_upper[needs_upper] = np.minimum(q_upper[needs_upper] / upper_sum[needs_upper, None], 1.0)

    return q_lower, np.maximum(q_upper, q_lower)


def max_entropy_interval(q_lower: np.ndarray, q_upper: np.ndarray, logger=None) -> EntropyExtremum:
    """
    Water-filling: the maximiser is clamp(level, q_lower, q_upper) for the level at which it sums to one.
    Accepts one bound vector or a matrix of rows
    """

    is_vector = np.ndim(q_lower) == 1
    q_lower, q_upper = project_feasible(q_lower, q_upper, logger=logger)

    low = q_lower.min(axis=-1)
    high = q_upper.max(axis=-1)
    for _ in range(Constants.WATER_FILLING_MAX_ITERATIONS):
        level = 0.5 * (low + high)
        too_high = np.clip(level[:, None], q_lower, q_upper).sum(axis=-1) > 1.0
        high = np.where(too_high, level, high)
        low = np.where(too_high, low, level)
        if np.max(high - low, initial=0.0) < Constants.WATER_FILLING_TOLERANCE:
            break

    distribution = np.clip(0.5 * (low + high)[:, None], q_lower, q_upper)
    entropy = entropy_bits(distribution)

    if is_vector:
        return EntropyExtremum(distribution=distribution[0], entropy=entropy[0])
    return EntropyExtremum(distribution=distribution, entropy=entropy)


@lru_cache(maxsize=None)
def _upper_subsets(num_classes: int) -> np.ndarray:
    """
    Every subset of classes as a boolean row (True = coordinate sits at its upper bound)
    """

    return np.array(list(product((False, True), repeat=num_classes)), dtype=bool)


def _min_entropy_vertices(q_lower: np.ndarray, q_upper: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Exact minimum by enumerating the polytope's vertices: a subset S at its upper bounds, one coordinate j outside S
    absorbing the remaining mass, and every other coordinate at its lower bound
    """

    num_rows, num_classes = q_lower.shape
    subsets = _upper_subsets(num_classes)  # (S, C)
    at_lower = ~subsets
    tolerance = Constants.CREDAL_TOLERANCE

    h_lower = entr(q_lower)
    h_upper = entr(q_upper)
    chunk = max(1, Constants.VERTEX_ENUMERATION_CHUNK_SIZE // (subsets.shape[0] * num_classes))

    best_entropy = np.empty(num_rows)
    best_distribution = np.empty_like(q_lower)
    for start in range(0, num_rows, chunk):
        lower = q_lower[start:start + chunk]
        upper = q_upper[start:start + chunk]

        mass_upper = upper @ subsets.T  # (n, S)
        mass_lower = lower @ at_lower.T
        entropy_base = h_upper[start:start + chunk] @ subsets.T + h_lower[start:start + chunk] @ at_lower.T

        # (n, S, C): value of the free coordinate j for each subset
        free_value = 1.0 - mass_upper[:, :, None] - mass_lower[:, :, None] + lower[:, None, :]
        valid = (
            at_lower[None, :, :]
            & (free_value >= lower[:, None, :] - tolerance)
            & (free_value <= upper[:, None, :] + tolerance)
        )
        free_value = np.clip(free_value, 0.0, 1.0)
        candidate = (
            entropy_base[:, :, None] - h_lower[start:start + chunk][:, None, :] + entr(free_value)
        )
        candidate = np.where(valid, candidate, np.inf)

        flat = candidate.reshape(candidate.shape[0], -1)
        best = np.argmin(flat, axis=1)
        rows = np.arange(flat.shape[0])
        if not np.all(np.isfinite(flat[rows, best])):
            raise InfeasibleCredalSetError("no feasible vertex found for credal bounds")

        subset_index, free_index = np.divmod(best, num_classes)
        distribution = np.where(subsets[subset_index], upper, lower)
        distribution[rows, free_index] = free_value[rows, subset_index, free_index]

        best_entropy[start:start + chunk] = flat[rows, best] / LN2
        best_distribution[start:start + chunk] = distribution

    return best_distribution, best_entropy


def _min_entropy_greedy(q_lower: np.ndarray, q_upper: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Starts at the lower bounds and pours the remaining mass into the largest coordinates that still have slack
    """

    distribution = q_lower.copy()
    for row in range(distribution.shape[0]):
        remaining = 1.0 - distribution[row].sum()
        for index in np.argsort(-distribution[row], kind="stable"):
            if remaining <= 0.0:
                break
            poured = min(remaining, q_upper[row, index] - distribution[row, index])
            distribution[row, index] += poured
            remaining -= poured

    return distribution, entropy_bits(distribution)


def min_entropy_interval(q_lower: np.ndarray, q_upper: np.ndarray, logger=None) -> EntropyExtremum:
    """
    Entropy is concave, so its minimum over the box-simplex polytope is attained at a vertex. Exact vertex
    enumeration is used up to 15 classes; beyond that a greedy fill is returned, flagged as approximate
    """

    is_vector = np.ndim(q_lower) == 1
    q_lower, q_upper = project_feasible(q_lower, q_upper, logger=logger)

    is_approximate = q_lower.shape[-1] > Constants.EXACT_MIN_ENTROPY_MAX_CLASSES
    if is_approximate:
        distribution, entropy = _min_entropy_greedy(q_lower, q_upper)
    else:
        distribution, entropy = _min_entropy_vertices(q_lower, q_upper)

    if is_vector:
        return EntropyExtremum(distribution=distribution[0], entropy=entropy[0], is_approximate=is_approximate)
    return EntropyExtremum(distribution=distribution, entropy=entropy, is_approximate=is_approximate)


def entropy_bounds_oracle(
        q_lower: np.ndarray, q_upper: np.ndarray, resolution: float = Constants.ORACLE_MIN_RESOLUTION
) -> tuple[float, float]:
    """
    Brute-force (max, min) entropy over a grid of the credal set, for testing the solvers on up to four classes.

    Each coordinate in turn is made dependent (one minus the others); the others range over a regular grid with
    their two bounds added, so every vertex of the polytope is visited exactly
    """

    q_lower = np.asarray(q_lower, dtype=np.float64)
    q_upper = np.asarray(q_upper, dtype=np.float64)
    num_classes = q_lower.shape[0]
    if not 2 <= num_classes <= Constants.ORACLE_MAX_CLASSES:
        raise ValueError(f"oracle supports two to {Constants.ORACLE_MAX_CLASSES} classes: {num_classes}")
    if resolution < Constants.ORACLE_MIN_RESOLUTION:
        raise ValueError(f"oracle resolution must be at least {Constants.ORACLE_MIN_RESOLUTION}: {resolution}")

    tolerance = Constants.CREDAL_TOLERANCE
    h_max, h_min = -np.inf, np.inf
    for dependent in range(num_classes):
        free = [index for index in range(num_classes) if index != dependent]
        grids = [
            np.unique(np.concatenate((
                np.arange(q_lower[index], q_upper[index], resolution), [q_lower[index], q_upper[index]]
            )))
            for index in free
        ]
        # The first free axis is walked in chunks so that the mesh stays bounded at fine resolutions
        rest_size = int(np.prod([grid.size for grid in grids[1:]]))
        chunk = max(1, Constants.ORACLE_MESH_CHUNK_SIZE // rest_size)
        for start in range(0, grids[0].size, chunk):
            axes = [grids[0][start:start + chunk], *grids[1:]]
            mesh = np.stack([axis.ravel() for axis in np.meshgrid(*axes, indexing="ij")], axis=1)
            dependent_value = 1.0 - mesh.sum(axis=1)
            feasible = (dependent_value >= q_lower[dependent] - tolerance) & (
                    dependent_value <= q_upper[dependent] + tolerance)
            if not np.any(feasible):
                continue

            points = np.empty((int(feasible.sum()), num_classes))
            points[:, free] = mesh[feasible]
            points[:, dependent] = np.clip(dependent_value[feasible], 0.0, 1.0)
            entropies = entropy_bits(points)
            h_max = max(h_max, float(entropies.max()))
            h_min = min(h_min, float(entropies.min()))

    if not np.isfinite(h_max):
        raise InfeasibleCredalSetError("oracle found no feasible grid point")

    return h_max, h_min


def hull_entropy_oracle(members: np.ndarray, resolution: float = Constants.ORACLE_MIN_RESOLUTION) -> float:
    """
    Brute-force maximum entropy over a grid of mixture weights of at most three members, for testing
    """

    members = np.asarray(members, dtype=np.float64)
    if not 1 <= members.shape[0] <= 3:
        raise ValueError(f"hull oracle supports one to three members: {members.shape[0]}")
    if resolution < Constants.ORACLE_MIN_RESOLUTION:
        raise ValueError(f"oracle resolution must be at least {Constants.ORACLE_MIN_RESOLUTION}: {resolution}")

    axis = np.unique(np.append(np.arange(0.0, 1.0, resolution), 1.0))
    if members.shape[0] == 1:
        weights = np.ones((1, 1))
    elif members.shape[0] == 2:
        weights = np.stack((axis, 1.0 - axis), axis=1)
    else:
        first, second = np.meshgrid(axis, axis, indexing="ij")
        keep = first + second <= 1.0 + 1e-12
        first, second = first[keep], second[keep]
        weights = np.stack((first, second, np.clip(1.0 - first - second, 0.0, 1.0)), axis=1)

    return float(entropy_bits(weights @ members).max())


def interval_uncertainty(prediction: CredalPrediction, logger=None) -> UncertaintyScores:
    total = max_entropy_interval(prediction.q_lower, prediction.q_upper, logger=logger).entropy
    aleatoric = min_entropy_interval(prediction.q_lower, prediction.q_upper, logger=logger).entropy
    # Both solvers are exact up to bisection tolerance; clamp so that eu = tu - au >= 0 holds exactly
    aleatoric = np.minimum(aleatoric, total)

    return UncertaintyScores(tu=total, au=aleatoric, eu=total - aleatoric)


def _hull_max_entropy(members: np.ndarray) -> np.ndarray:
    """
    Pairwise Frank-Wolfe over mixture weights, maximising H(sum_m w_m p_m), for a batch of hulls (n, M, C).
    Each step moves weight from the worst active member to the best member; the step length is found by
    bisection on the directional derivative, which is decreasing along the segment. Stops on a duality gap
    below FRANK_WOLFE_GAP_TOLERANCE
    """

    num_rows, num_members, _ = members.shape
    member_entropy = entropy_bits(members)
    weights = np.zeros((num_rows, num_members))
    weights[np.arange(num_rows), np.argmax(member_entropy, axis=1)] = 1.0

    active = np.ones(num_rows, dtype=bool)
    for _ in range(Constants.FRANK_WOLFE_MAX_ITERATIONS):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break

        mixture = np.einsum("nm,nmc->nc", weights[rows], members[rows])
        gradient = -(np.log2(np.maximum(mixture, Constants.LOG_FLOOR)) + 1.0 / LN2)
        member_scores = np.einsum("nmc,nc->nm", members[rows], gradient)
        vertex = np.argmax(member_scores, axis=1)
        gap = member_scores[np.arange(rows.size), vertex] - np.einsum("nm,nm->n", weights[rows], member_scores)

        converged = gap < Constants.FRANK_WOLFE_GAP_TOLERANCE
        active[rows[converged]] = False
        keep = ~converged
        rows, vertex, mixture = rows[keep], vertex[keep], mixture[keep]
        if rows.size == 0:
            break

        away = np.argmin(np.where(weights[rows] > 0.0, member_scores[keep], np.inf), axis=1)
        direction = members[rows, vertex] - members[rows, away]
        max_step = weights[rows, away]

        def slope(step: np.ndarray) -> np.ndarray:
            point = np.maximum(mixture + step[:, None] * direction, Constants.LOG_FLOOR)
            return -np.einsum("nc,nc->n", direction, np.log2(point))

        low = np.zeros(rows.size)
        high = max_step.copy()
        full_step = slope(high) >= 0.0
        for _ in range(Constants.LINE_SEARCH_ITERATIONS):
            middle = 0.5 * (low + high)
            rising = slope(middle) > 0.0
            low = np.where(rising, middle, low)
            high = np.where(rising, high, middle)
        step = np.where(full_step, max_step, 0.5 * (low + high))

        weights[rows, away] = np.maximum(weights[rows, away] - step, 0.0)
        weights[rows, vertex] += step

    mixture = np.einsum("nm,nmc->nc", weights, members)
    return np.maximum(entropy_bits(mixture), member_entropy.max(axis=1))


def hull_uncertainty(members: np.ndarray, members_only: bool = False) -> tuple:
    """
    (TU, AU, EU) over the convex hull of M member distributions. `members` is (M, C) for one hull, or
    (n, M, C) for a batch. AU is the smallest member entropy (hull vertices are members). TU is the hull's maximum
    entropy, or the largest member entropy when `members_only` is set
    """

    members = np.asarray(members, dtype=np.float64)
    if members.size == 0 or members.shape[-2] == 0:
        raise ValueError("hull_uncertainty requires at least one member")

    is_single = members.ndim == 2
    batch = members[None] if is_single else members

    member_entropy = entropy_bits(batch)
    aleatoric = member_entropy.min(axis=1)
    total = member_entropy.max(axis=1) if members_only else _hull_max_entropy(batch)
    epistemic = total - aleatoric

    if is_single:
        return float(total[0]), float(aleatoric[0]), float(epistemic[0])
    return total, aleatoric, epistemic


def ensemble_entropy_decompose(members: np.ndarray) -> UncertaintyScores:
    """
    `members` is (M, n, C). TU = H(mean prediction), AU = mean member entropy, EU = TU - AU
    """

    members = np.asarray(members, dtype=np.float64)
    total = entropy_bits(members.mean(axis=0))
    aleatoric = np.minimum(entropy_bits(members).mean(axis=0), total)

    return UncertaintyScores(tu=total, au=aleatoric, eu=total - aleatoric)


def point_prediction(prediction: CredalPrediction, which: Union[Bound, str]) -> np.ndarray:
    """
    Argmax of the chosen bound vector; ties resolve to the lowest class index
    """

    bound = prediction.q_lower if Bound(which) is Bound.LOWER else prediction.q_upper
    return np.argmax(bound, axis=-1)


def write_predictions_csv(path: Union[str, Path], prediction: CredalPrediction, scores: UncertaintyScores) -> None:
    num_classes = prediction.num_classes
    columns = (
        "node_id",
        *(f"q_lower_{c}" for c in range(num_classes)),
        *(f"q_upper_{c}" for c in range(num_classes)),
        "tu", "au", "eu"
    )
    rows = (
        (node, *prediction.q_lower[node].tolist(), *prediction.q_upper[node].tolist(),
         float(scores.tu[node]), float(scores.au[node]), float(scores.eu[node]))
        for node in range(prediction.q_lower.shape[0])
    )

    Methods.write_csv(path, columns, rows)
