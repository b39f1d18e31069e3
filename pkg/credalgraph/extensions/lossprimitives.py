from objectextensions import Extension

import numpy as np
from scipy.special import log_softmax, softmax

from ..tape import Tape
from ..credal import clamp_open_unit, interval_softmax_side
from ..losses import cross_entropy_rows, select_hard_set
from ..constants import Constants
from ..enums import Primitive
from ..errors import ShapeError
from ..types import Attrs


class LossPrimitives(Extension):
    """
    The credal output activation and the scalar training losses
    """

    @staticmethod
    def can_extend(target_cls):
        return issubclass(target_cls, Tape)

    @staticmethod
    def extend(target_cls):
        primitives = {
            Primitive.INTERVAL_SOFTMAX_LOWER: (
                LossPrimitives.__interval_softmax_lower, LossPrimitives.__interval_softmax_lower_backward
            ),
            Primitive.INTERVAL_SOFTMAX_UPPER: (
                LossPrimitives.__interval_softmax_upper, LossPrimitives.__interval_softmax_upper_backward
            ),
            Primitive.SOFTMAX_CROSS_ENTROPY: (
                LossPrimitives.__softmax_cross_entropy, LossPrimitives.__softmax_cross_entropy_backward
            ),
            Primitive.DRO_LOSS: (LossPrimitives.__dro_loss, LossPrimitives.__dro_loss_backward)
        }

        # To prevent mutating the dict on the base class
        target_cls.PRIMITIVES = {**target_cls.PRIMITIVES}

        for key, rules in primitives.items():
            if key in target_cls.PRIMITIVES:
                raise ValueError(f"a primitive already exists under the provided key: {key}")
            target_cls.PRIMITIVES[key] = rules

    @staticmethod
    def __interval_softmax_lower(inputs: tuple[np.ndarray, ...], attrs: Attrs):
        a_lower, a_upper = inputs
        q_lower, competitors = interval_softmax_side(a_lower, a_upper)
        return clamp_open_unit(q_lower), (q_lower, competitors)

    @staticmethod
    def __interval_softmax_lower_backward(grad, inputs, output, saved, attrs):
        """
        q_lower_i depends on aL_i through its own numerator and on every aU_k (k != i) through its denominator
        """

        q_lower, competitors = saved
        return LossPrimitives.__interval_softmax_side_backward(grad, q_lower, competitors)

    @staticmethod
    def __interval_softmax_upper(inputs: tuple[np.ndarray, ...], attrs: Attrs):
        a_lower, a_upper = inputs
        q_upper, competitors = interval_softmax_side(a_upper, a_lower)
        return clamp_open_unit(q_upper), (q_upper, competitors)

    @staticmethod
    def __interval_softmax_upper_backward(grad, inputs, output, saved, attrs):
        q_upper, competitors = saved
        grad_upper, grad_lower = LossPrimitives.__interval_softmax_side_backward(grad, q_upper, competitors)
        return grad_lower, grad_upper

    @staticmethod
    def __interval_softmax_side_backward(grad, q, competitors):
        """
        Returns (grad wrt own logits, grad wrt the other bound's logits).
        1 - q_i is taken as the sum of the competitor shares, which stays exact when q_i is close to 1
        """

        weighted = grad * q
        grad_own = weighted * competitors.sum(axis=-1)
        grad_others = -np.einsum("...i,...ik->...k", weighted, competitors)

        return grad_own, grad_others

    @staticmethod
    def __softmax_cross_entropy(inputs: tuple[np.ndarray, ...], attrs: Attrs):
        """
        Cross-entropy of softmax(logits / temperature) on the rows in attrs['index'], against attrs['labels']
        (one label per indexed row). attrs['reduction'] is 'mean' (default) or 'sum'
        """

        (logits,) = inputs
        index = np.asarray(attrs["index"])
        labels = np.asarray(attrs["labels"])
        temperature = attrs.get("temperature", 1.0)
        if index.shape != labels.shape:
            raise ShapeError(f"expected one label per indexed row: {labels.shape} != {index.shape}")
        if index.size == 0:
            raise ValueError("cross-entropy over an empty set of rows")

        log_probs = log_softmax(logits[index] / temperature, axis=1)
        total = -log_probs[np.arange(index.size), labels].sum()
        scale = 1.0 / index.size if attrs.get("reduction", "mean") == "mean" else 1.0

        return np.array([[total * scale]]), scale

    @staticmethod
    def __softmax_cross_entropy_backward(grad, inputs, output, saved, attrs):
        (logits,) = inputs
        index = np.asarray(attrs["index"])
        labels = np.asarray(attrs["labels"])
        temperature = attrs.get("temperature", 1.0)

        rows_grad = softmax(logits[index] / temperature, axis=1)
        rows_grad[np.arange(index.size), labels] -= 1.0
        rows_grad *= grad[0, 0] * saved / temperature

        result = np.zeros_like(logits)
        np.add.at(result, index, rows_grad)
        return (result,)

    @staticmethod
    def __dro_loss(inputs: tuple[np.ndarray, ...], attrs: Attrs):
        """
        mean over training nodes of CE(q_upper) + (1 / (delta * N)) * sum over the hard set of CE(q_lower).

        The hard set (positions within attrs['index']) is taken from attrs['hard_set'] when given, and otherwise
        selected from the current lower-bound losses. Either way it is held constant in the backward pass
        """

        q_lower, q_upper = inputs
        index = np.asarray(attrs["index"])
        labels = np.asarray(attrs["labels"])
        delta = attrs["delta"]
        if index.size == 0:
            raise ValueError("DRO loss requires at least one training node")
        if not 0.0 < delta <= 1.0:
            raise ValueError(f"delta must lie in (0, 1]: {delta}")

        full_labels = np.zeros(q_lower.shape[0], dtype=np.int64)
        full_labels[index] = labels

        upper_ce = cross_entropy_rows(q_upper, full_labels, index)
        lower_ce = cross_entropy_rows(q_lower, full_labels, index)
        hard_set = attrs.get("hard_set")
        hard_set = select_hard_set(lower_ce, delta) if hard_set is None else np.asarray(hard_set)

        count = index.size
        value = upper_ce.mean() + lower_ce[hard_set].sum() / (delta * count)

        return np.array([[value]]), hard_set

    @staticmethod
    def __dro_loss_backward(grad, inputs, output, saved, attrs):
        q_lower, q_upper = inputs
        index = np.asarray(attrs["index"])
        labels = np.asarray(attrs["labels"])
        delta = attrs["delta"]
        count = index.size
        scale = grad[0, 0]

        # d/dq of -ln(clip(q)) vanishes where the clamp is active
        upper_at_label = q_upper[index, labels]
        upper_grad = np.where(
            upper_at_label > Constants.CE_CLAMP_MIN, -1.0 / np.maximum(upper_at_label, Constants.CE_CLAMP_MIN), 0.0
        )
        grad_upper = np.zeros_like(q_upper)
        np.add.at(grad_upper, (index, labels), scale * upper_grad / count)

        hard_rows = index[saved]
        hard_labels = labels[saved]
        lower_at_label = q_lower[hard_rows, hard_labels]
        lower_grad = np.where(
            lower_at_label > Constants.CE_CLAMP_MIN, -1.0 / np.maximum(lower_at_label, Constants.CE_CLAMP_MIN), 0.0
        )
        grad_lower = np.zeros_like(q_lower)
        np.add.at(grad_lower, (hard_rows, hard_labels), scale * lower_grad / (delta * count))

        return grad_lower, grad_upper
