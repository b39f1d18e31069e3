from dataclasses import dataclass
from typing import Optional

import numpy as np

from .constants import Constants
from .enums import BackboneKind, Primitive
from .errors import ShapeError
from .graph import GraphDataset
from .methods import Methods
from .tape import Tape, Tensor, glorot_init
from .types import ParamDict, SparseOperator

# [Z0, Z1, ..., ZL]; Z0 is the input feature matrix
LayerTrace = list[Tensor]


@dataclass(frozen=True)
class BackboneConfig:
    input_dim: int
    kind: BackboneKind = BackboneKind.GCN
    num_layers: int = Constants.DEFAULT_NUM_LAYERS
    hidden_dim: int = Constants.DEFAULT_HIDDEN_DIM
    dropout: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", BackboneKind(self.kind))

        if self.num_layers < 1:
            raise ShapeError(f"num_layers must be at least 1: {self.num_layers}")
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ShapeError(f"dimensions must be positive (input_dim={self.input_dim}, hidden_dim={self.hidden_dim})")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1): {self.dropout}")

    @property
    def joint_dim(self) -> int:
        return self.input_dim + self.num_layers * self.hidden_dim

    def to_json(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "kind": self.kind.value,
            "num_layers": self.num_layers,
            "hidden_dim": self.hidden_dim,
            "dropout": self.dropout
        }

    def parameter_shapes(self) -> dict[str, tuple[int, int]]:
        shapes = {}
        for layer in range(self.num_layers):
            in_dim = self.input_dim if layer == 0 else self.hidden_dim
            prefix = f"backbone.{layer}"
            if self.kind is BackboneKind.GCN:
                shapes[f"{prefix}.weight"] = (in_dim, self.hidden_dim)
            else:
                shapes[f"{prefix}.weight_self"] = (in_dim, self.hidden_dim)
                shapes[f"{prefix}.weight_neigh"] = (in_dim, self.hidden_dim)
            shapes[f"{prefix}.bias"] = (1, self.hidden_dim)

        return shapes


def init_backbone_params(config: BackboneConfig, rng: np.random.Generator) -> ParamDict:
    """
    Glorot-uniform weights and zero biases, drawn in a fixed (sorted-name) order
    """

    params = {}
    for name, shape in sorted(config.parameter_shapes().items()):
        params[name] = np.zeros(shape) if name.endswith(".bias") else glorot_init(*shape, rng)

    return params


def gcn_layer(tape: Tape, h: Tensor, operator: SparseOperator, weight: Tensor, bias: Tensor) -> Tensor:
    """
    ReLU(op H W + b)
    """

    transformed = tape.apply(Primitive.MATMUL, h, weight)
    aggregated = tape.apply(Primitive.SPMM, transformed, operator=operator)

    return tape.apply(Primitive.RELU, tape.apply(Primitive.BIAS_ADD, aggregated, bias))


def sage_layer(
        tape: Tape, h: Tensor, row_operator: SparseOperator, weight_self: Tensor, weight_neigh: Tensor, bias: Tensor
) -> Tensor:
    """
    ReLU(H W_self + (row_op H) W_neigh + b), with mean aggregation over neighbours.
    Isolated nodes have an all-zero row in `row_operator`, so their neighbour term is zero
    """

    own = tape.apply(Primitive.MATMUL, h, weight_self)
    neighbourhood = tape.apply(Primitive.SPMM, h, operator=row_operator)
    neighbours = tape.apply(Primitive.MATMUL, neighbourhood, weight_neigh)

    return tape.apply(Primitive.RELU, tape.apply(Primitive.BIAS_ADD, tape.apply(Primitive.ADD, own, neighbours), bias))


def backbone_forward(
        tape: Tape, dataset: GraphDataset, config: BackboneConfig, params: ParamDict,
        features: Optional[Tensor] = None, dropout_rng: Optional[np.random.Generator] = None
) -> LayerTrace:
    """
    Records every backbone layer on `tape` and returns the trace [Z0, ..., ZL].

    `features` replaces the constant feature leaf when the caller needs gradients with respect to the input.
    Dropout masks are only drawn when `dropout_rng` is given (training); evaluation passes are deterministic
    """

    Methods.check_parameters(config.parameter_shapes(), params)
    if dataset.feature_dim != config.input_dim:
        raise ShapeError(f"feature width does not match the configured input_dim: {dataset.feature_dim} != {config.input_dim}")

    h = tape.constant(dataset.features) if features is None else features
    trace = [h]
    for layer in range(config.num_layers):
        prefix = f"backbone.{layer}"
        if dropout_rng is not None and config.dropout > 0.0:
            keep = 1.0 - config.dropout
            mask = (dropout_rng.random(h.shape) < keep) / keep
            h = tape.apply(Primitive.DROPOUT, h, mask=mask)

        bias = tape.parameter(f"{prefix}.bias", params[f"{prefix}.bias"])
        if config.kind is BackboneKind.GCN:
            weight = tape.parameter(f"{prefix}.weight", params[f"{prefix}.weight"])
            h = gcn_layer(tape, h, dataset.gcn_operator, weight, bias)
        else:
            weight_self = tape.parameter(f"{prefix}.weight_self", params[f"{prefix}.weight_self"])
            weight_neigh = tape.parameter(f"{prefix}.weight_neigh", params[f"{prefix}.weight_neigh"])
            h = sage_layer(tape, h, dataset.row_operator, weight_self, weight_neigh, bias)

        trace.append(h)

    return trace


def joint_concat(tape: Tape, trace: LayerTrace) -> Tensor:
    """
    [Z0 | Z1 | ... | ZL], column-wise
    """

    if not trace:
        raise ValueError("joint_concat requires a non-empty trace")
    if len(trace) == 1:
        return trace[0]

    return tape.apply(Primitive.CONCAT_COLS, *trace)
