from objectextensions import Extension

import numpy as np
from scipy.special import expit

from ..tape import Tape
from ..enums import Primitive
from ..errors import ShapeError
from ..types import Attrs


class PresetPrimitives(Extension):
    """
    Dense and sparse matrix operations with their exact adjoints
    """

    @staticmethod
    def can_extend(target_cls):
        return issubclass(target_cls, Tape)

    @staticmethod
    def extend(target_cls):
        primitives = {
            Primitive.MATMUL: (PresetPrimitives.__matmul, PresetPrimitives.__matmul_backward),
            Primitive.SPMM: (PresetPrimitives.__spmm, PresetPrimitives.__spmm_backward),
            Primitive.ADD: (PresetPrimitives.__add, PresetPrimitives.__add_backward),
            Primitive.BIAS_ADD: (PresetPrimitives.__bias_add, PresetPrimitives.__bias_add_backward),
            Primitive.RELU: (PresetPrimitives.__relu, PresetPrimitives.__relu_backward),
            Primitive.SOFTPLUS: (PresetPrimitives.__softplus, PresetPrimitives.__softplus_backward),
            Primitive.CONCAT_COLS: (PresetPrimitives.__concat_cols, PresetPrimitives.__concat_cols_backward),
            Primitive.GATHER_ROWS: (PresetPrimitives.__gather_rows, PresetPrimitives.__gather_rows_backward),
            Primitive.WEIGHTED_SUM: (PresetPrimitives.__weighted_sum, PresetPrimitives.__weighted_sum_backward),
            Primitive.TOTAL: (PresetPrimitives.__total, PresetPrimitives.__total_backward),
            Primitive.DROPOUT: (PresetPrimitives.__dropout, PresetPrimitives.__dropout_backward)
        }

        # To prevent mutating the dict on the base class
        target_cls.PRIMITIVES = {**target_cls.PRIMITIVES}

        for key, rules in primitives.items():
            if key in target_cls.PRIMITIVES:
                raise ValueError(f"a primitive already exists under the provided key: {key}")
            target_cls.PRIMITIVES[key] = rules

    @staticmethod
    def __matmul(inputs: tuple[np.ndarray, ...], attrs: Attrs):
        a, b = inputs
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

        return a @ b, None

    @staticmethod
    def __matmul_backward(grad, inputs, output, saved, attrs):
        a, b = inputs
        return grad @ b.T, a.T @ grad

    @staticmethod
    def __spmm(inputs: tuple[np.ndarray, ...], attrs: Attrs):
        """
        Fixed sparse operator (attrs['operator'], not differentiated) times a dense matrix
        """

        (dense,) = inputs
        operator = attrs["operator"]
        if operator.shape[1] != dense.shape[0]:
            raise ShapeError(f"spmm dimension mismatch: {operator.shape} @ {dense.shape}")

        return np.asarray(operator @ dense), None

    @staticmethod
    def __spmm_backward(grad, inputs, output, saved, attrs):
        return (np.asarray(attrs["operator"].T @ grad),)

    @staticmethod
    def __add(inputs: tuple[np.ndarray, ...], attrs: Attrs):
        a, b = inputs
        if a.shape != b.shape:
            raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}")

        return a + b, None

    @staticmethod
    def __add_backward(grad, inputs, output, saved, attrs):
        return grad, grad

    @staticmethod
    def __bias_add(inputs: tuple[np.ndarray, ...], attrs: Attrs):
        a, bias = inputs
        if bias.shape != (1, a.shape[1]):
            raise ShapeError(f"bias must be a single row matching the columns of its input: {bias.shape} vs {a.shape}")

        return a + bias, None

    @staticmethod
    def __bias_add_backward(grad, inputs, output, saved, attrs):
        return grad, grad.sum(axis=0, keepdims=True)

    @staticmethod
    def __relu(inputs: tuple[np.ndarray, ...], attrs: Attrs):
        (a,) = inputs
        return np.maximum(a, 0.0), None

    @staticmethod
    def __relu_backward(grad, inputs, output, saved, attrs):
        (a,) = inputs
        # Subgradient 0 at exactly 0
        return (grad * (a > 0.0),)

    @staticmethod
    def __softplus(inputs: tuple[np.ndarray, ...], attrs: Attrs):
        (a,) = inputs
        return np.logaddexp(0.0, a), None

    @staticmethod
    def __softplus_backward(grad, inputs, output, saved, attrs):
        (a,) = inputs
        return (grad * expit(a),)

    @staticmethod
    def __concat_cols(inputs: tuple[np.ndarray, ...], attrs: Attrs):
        if len({value.shape[0] for value in inputs}) > 1:
            raise ShapeError(f"concat_cols row counts differ: {[value.shape for value in inputs]}")

        widths = tuple(value.shape[1] for value in inputs)
        return np.concatenate(inputs, axis=1), widths

    @staticmethod
    def __concat_cols_backward(grad, inputs, output, saved, attrs):
        splits = np.cumsum(saved)[:-1]
        return tuple(np.split(grad, splits, axis=1))

    @staticmethod
    def __gather_rows(inputs: tuple[np.ndarray, ...], attrs: Attrs):
        (a,) = inputs
        return a[attrs["index"]], None

    @staticmethod
    def __gather_rows_backward(grad, inputs, output, saved, attrs):
        (a,) = inputs
        result = np.zeros_like(a)
        # Repeated indices accumulate
        np.add.at(result, attrs["index"], grad)
        return (result,)

    @staticmethod
    def __weighted_sum(inputs: tuple[np.ndarray, ...], attrs: Attrs):
        weights = attrs["weights"]
        if len(weights) != len(inputs):
            raise ShapeError(f"weighted_sum expects one weight per input: {len(weights)} != {len(inputs)}")
        if len({value.shape for value in inputs}) > 1:
            raise ShapeError(f"weighted_sum shapes differ: {[value.shape for value in inputs]}")

        return sum(weight * value for weight, value in zip(weights, inputs)), None

    @staticmethod
    def __weighted_sum_backward(grad, inputs, output, saved, attrs):
        return tuple(weight * grad for weight in attrs["weights"])

    @staticmethod
    def __total(inputs: tuple[np.ndarray, ...], attrs: Attrs):
        (a,) = inputs
        return np.array([[a.sum()]]), None

    @staticmethod
    def __total_backward(grad, inputs, output, saved, attrs):
        (a,) = inputs
        return (np.full_like(a, grad[0, 0]),)

    @staticmethod
    def __dropout(inputs: tuple[np.ndarray, ...], attrs: Attrs):
        """
        attrs['mask'] is already scaled by 1 / keep probability
        """

        (a,) = inputs
        return a * attrs["mask"], None

    @staticmethod
    def __dropout_backward(grad, inputs, output, saved, attrs):
        return (grad * attrs["mask"],)
