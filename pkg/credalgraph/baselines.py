from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import cdist
from scipy.special import logsumexp, softmax
from sklearn.covariance import EmpiricalCovariance

from .constants import Constants
from .credal import UncertaintyScores, ensemble_entropy_decompose, hull_uncertainty
from .enums import Primitive
from .errors import ShapeError
from .graph import GraphDataset
from .training import GraphTape, TrainedModel


def energy_score(logits: np.ndarray, temperature: float = Constants.ENERGY_T) -> np.ndarray:
    """
    -T * logsumexp(logits / T)
    """

    if temperature <= 0:
        raise ValueError(f"temperature must be positive: {temperature}")

    return -temperature * logsumexp(logits / temperature, axis=1)


def msp_score(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    return -softmax(logits / temperature, axis=1).max(axis=1)


def odin_score(
        dataset: GraphDataset, model: TrainedModel,
        temperature: float = Constants.ODIN_T, epsilon: float = Constants.ODIN_EPSILON
) -> np.ndarray:
    """
    Temperature-scaled MSP after moving the input features a step of size `epsilon` against the gradient of
    the summed temperature-scaled cross-entropy towards each node's predicted class
    """

    if temperature <= 0:
        raise ValueError(f"temperature must be positive: {temperature}")
    if epsilon < 0:
        raise ValueError(f"epsilon must be non-negative: {epsilon}")
    if model.config.is_credal:
        raise ValueError(f"ODIN requires a vanilla model: {model.config.model_kind.value}")

    features = dataset.features
    if epsilon > 0:
        tape = GraphTape()
        inputs = tape.parameter("input.features", dataset.features)
        logits = model.forward(tape, dataset, features=inputs).logits
        predicted = np.argmax(logits.value, axis=1)
        loss = tape.apply(
            Primitive.SOFTMAX_CROSS_ENTROPY, logits,
            labels=predicted, index=np.arange(dataset.num_nodes), temperature=temperature, reduction="sum"
        )
        gradient = tape.backward(loss)["input.features"]
        features = dataset.features - epsilon * np.sign(gradient)

    tape = GraphTape()
    logits = model.forward(tape, dataset, features=tape.constant(features)).logits
    return msp_score(logits.value, temperature)


@dataclass(frozen=True, eq=False)
class GaussianClassModel:
    means: np.ndarray  # (classes, dim)
    covariance: np.ndarray

    def __post_init__(self):
        if self.covariance.shape != (self.means.shape[1], self.means.shape[1]):
            raise ShapeError(f"covariance shape does not match the embedding width: {self.covariance.shape}")
        if not np.allclose(self.covariance, self.covariance.T):
            raise ValueError("covariance is not symmetric")
        try:
            object.__setattr__(self, "_cholesky", cho_factor(self.covariance, lower=True))
        except LinAlgError as ex:
            raise ValueError(f"covariance is not positive definite: {ex}") from ex

    @classmethod
    def fit(cls, embeddings: np.ndarray, labels: np.ndarray, num_classes: int) -> "GaussianClassModel":
        """
        Class means from `embeddings` and a pooled within-class covariance, regularised by a small ridge
        """

        if embeddings.shape[0] == 0:
            raise ValueError("cannot fit class-conditional Gaussians without training embeddings")

        means = np.zeros((num_classes, embeddings.shape[1]))
        for class_index in range(num_classes):
            members = embeddings[labels == class_index]
            if members.shape[0]:
                means[class_index] = members.mean(axis=0)

        centred = embeddings - means[labels]
        covariance = EmpiricalCovariance(assume_centered=True).fit(centred).covariance_
        covariance = covariance + Constants.MAHALANOBIS_RIDGE * np.eye(embeddings.shape[1])

        return cls(means=means, covariance=covariance)

    def squared_distances(self, embeddings: np.ndarray) -> np.ndarray:
        """
        (nodes, classes) squared Mahalanobis distances
        """

        result = np.empty((embeddings.shape[0], self.means.shape[0]))
        for class_index, mean in enumerate(self.means):
            offset = embeddings - mean
            result[:, class_index] = np.einsum("nd,nd->n", offset, cho_solve(self._cholesky, offset.T).T)

        return result


def mahalanobis_score(embeddings: np.ndarray, model: GaussianClassModel) -> np.ndarray:
    return model.squared_distances(embeddings).min(axis=1)


def knn_score(query_embeddings: np.ndarray, train_embeddings: np.ndarray, k: int = Constants.KNN_K) -> np.ndarray:
    """
    Mean Euclidean distance to the k nearest training embeddings, by exhaustive search
    """

    if train_embeddings.shape[0] == 0:
        raise ValueError("knn_score requires at least one training embedding")
    if not 1 <= k <= train_embeddings.shape[0]:
        raise ValueError(f"k must lie in [1, {train_embeddings.shape[0]}]: {k}")

    distances = cdist(query_embeddings, train_embeddings)
    nearest = np.sort(distances, axis=1, kind="stable")[:, :k]

    return nearest.mean(axis=1)


def knnlj_score(dataset: GraphDataset, model: TrainedModel, train_index: np.ndarray, k: int = Constants.KNN_K):
    """
    knn_score in the joint latent space [Z0 | ... | ZL] of the model's backbone
    """

    joint = model.evaluate(dataset).joint
    return knn_score(joint, joint[train_index], k)


def gnnsafe_score(
        energy: np.ndarray, dataset: GraphDataset,
        alpha: float = Constants.GNNSAFE_ALPHA, propagation_steps: int = Constants.GNNSAFE_K
) -> np.ndarray:
    """
    Energy propagated over the graph: E <- alpha * E + (1 - alpha) * (row-normalised A) E, repeated K times
    """

    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1]: {alpha}")
    if propagation_steps < 0:
        raise ValueError(f"propagation_steps must be non-negative: {propagation_steps}")

    energy = np.array(energy, dtype=np.float64)
    if alpha == 1.0 or propagation_steps == 0:
        return energy

    operator = dataset.row_operator
    for _ in range(propagation_steps):
        energy = alpha * energy + (1.0 - alpha) * (operator @ energy)

    return energy


def member_probabilities(dataset: GraphDataset, members: list[TrainedModel]) -> np.ndarray:
    """
    (members, nodes, classes) softmax predictions of vanilla ensemble members
    """

    if len({member.num_classes for member in members}) > 1:
        raise ShapeError(f"ensemble members disagree on the class count: {[m.num_classes for m in members]}")

    return np.stack([member.evaluate(dataset).probabilities for member in members])


def classical_ensemble(probabilities: np.ndarray) -> UncertaintyScores:
    """
    TU = entropy of the averaged prediction, AU = average member entropy, EU = TU - AU
    """

    if probabilities.shape[0] < 2:
        raise ValueError(f"a classical ensemble needs at least two members: {probabilities.shape[0]}")

    return ensemble_entropy_decompose(probabilities)


def credal_ensemble(probabilities: np.ndarray, members_only: bool = False) -> UncertaintyScores:
    """
    Entropy bounds over the convex hull of the member predictions at every node
    """

    tu, au, eu = hull_uncertainty(np.transpose(probabilities, (1, 0, 2)), members_only=members_only)
    return UncertaintyScores(tu=tu, au=au, eu=eu)
