from objectextensions import Extendable

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Union
import logging

import numpy as np

from .constants import Constants
from .errors import CheckpointError, NonFiniteError, ShapeError
from .methods import Methods
from .types import Attrs, BackwardRule, ForwardRule, ParamDict


class Tensor:
    """
    Handle to one node recorded on a Tape. All values are 2-D float64 matrices; scalars are 1x1
    """

    __slots__ = ("tape", "node_id")

    def __init__(self, tape: "Tape", node_id: int):
        self.tape = tape
        self.node_id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.node_id]

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self):
        return f"<{type(self).__name__} #{self.node_id} {self.shape}>"


@dataclass
class Record:
    primitive: Optional[str]  # None for leaves (constants and parameters)
    inputs: tuple[int, ...] = ()
    attrs: Attrs = field(default_factory=dict)
    saved: Any = None


class Tape(Extendable):
    PRIMITIVES: dict[str, tuple[ForwardRule, BackwardRule]] = {}

    def __init__(self, logger=None):
        super().__init__()

        self.values: list[np.ndarray] = []
        self.records: list[Record] = []
        # Parameter name -> node id
        self.parameters: dict[str, int] = {}
        self.logger = logger or logging.getLogger(__name__)

    def constant(self, value) -> Tensor:
        return self.__add_leaf(value)

    def parameter(self, name: str, value=None) -> Tensor:
        """
        Registers a named leaf that gradients are reported for.
        Registering an existing name returns the existing node, so shared parameters are recorded once
        """

        if name in self.parameters:
            return Tensor(self, self.parameters[name])
        if value is None:
            raise KeyError(f"parameter not registered on tape and no value provided: {name}")

        tensor = self.__add_leaf(value)
        self.parameters[name] = tensor.node_id
        return tensor

    def apply(self, primitive: str, *inputs: Tensor, **attrs) -> Tensor:
        for tensor in inputs:
            if tensor.tape is not self:
                raise ValueError(f"input recorded on a different tape: {tensor}")

        forward, _ = self.PRIMITIVES[primitive]
        input_ids = tuple(tensor.node_id for tensor in inputs)
        output, saved = forward(tuple(self.values[node_id] for node_id in input_ids), attrs)

        if output.ndim != 2:
            raise ShapeError(f"primitive produced a non-matrix output ({primitive}): {output.shape}")
        if not np.all(np.isfinite(output)):
            raise NonFiniteError(f"non-finite output from primitive: {primitive}")

        self.values.append(output)
        self.records.append(Record(primitive=primitive, inputs=input_ids, attrs=attrs, saved=saved))
        return Tensor(self, len(self.values) - 1)

    def backward(self, loss: Tensor) -> ParamDict:
        """
        Exact reverse-mode adjoints of `loss` with respect to every registered parameter.
        Parameters the loss does not depend on receive zero gradients
        """

        if loss.shape != (1, 1):
            raise ShapeError(f"loss must be a scalar (1x1), got: {loss.shape}")

        grads: list[Optional[np.ndarray]] = [None] * (loss.node_id + 1)
        grads[loss.node_id] = np.ones((1, 1))

        for node_id in range(loss.node_id, -1, -1):
            grad = grads[node_id]
            record = self.records[node_id]
            if grad is None or record.primitive is None:
                continue

            assert all(input_id < node_id for input_id in record.inputs), "tape is not topologically ordered"

            _, backward = self.PRIMITIVES[record.primitive]
            input_values = tuple(self.values[input_id] for input_id in record.inputs)
            input_grads = backward(grad, input_values, self.values[node_id], record.saved, record.attrs)

            for input_id, input_grad in zip(record.inputs, input_grads):
                if input_grad is None:
                    continue
                grads[input_id] = input_grad if grads[input_id] is None else grads[input_id] + input_grad

        result = {}
        for name, node_id in self.parameters.items():
            grad = grads[node_id] if node_id < len(grads) else None
            result[name] = np.zeros_like(self.values[node_id]) if grad is None else grad

        return result

    def replay(self) -> list[np.ndarray]:
        """
        Recomputes every recorded node from the leaves, in recording order
        """

        values = []
        for node_id, record in enumerate(self.records):
            if record.primitive is None:
                values.append(self.values[node_id])
                continue

            forward, _ = self.PRIMITIVES[record.primitive]
            output, _ = forward(tuple(values[input_id] for input_id in record.inputs), record.attrs)
            values.append(output)

        return values

    def __add_leaf(self, value) -> Tensor:
        value = np.array(value, dtype=np.float64)
        if value.ndim != 2:
            raise ShapeError(f"tape values must be matrices, got shape: {value.shape}")
        if not np.all(np.isfinite(value)):
            raise NonFiniteError("non-finite leaf value")

        self.values.append(value)
        self.records.append(Record(primitive=None))
        return Tensor(self, len(self.values) - 1)


def grad_check(
        model_forward: Callable[[ParamDict], tuple[Tape, Tensor]],
        params: ParamDict,
        coordinate_count: int,
        fd_step: float,
        rng: Optional[np.random.Generator] = None
) -> float:
    """
    Compares analytic gradients against central finite differences at `coordinate_count` randomly sampled
    parameter coordinates, and returns the worst relative error |a - b| / max(|a|, |b|, 1e-5).

    `model_forward` must build a fresh tape from the given parameters and return it with its scalar loss
    """

    if fd_step <= 0:
        raise ValueError(f"fd_step must be positive: {fd_step}")

    coordinates = [(name, index) for name, value in params.items() for index in np.ndindex(value.shape)]
    if not coordinates or coordinate_count <= 0:
        return 0.0

    rng = rng or np.random.default_rng(0)
    tape, loss = model_forward(params)
    analytic = tape.backward(loss)

    picks = rng.choice(len(coordinates), size=min(coordinate_count, len(coordinates)), replace=False)
    worst = 0.0
    for pick in picks:
        name, index = coordinates[pick]

        losses = []
        for direction in (1.0, -1.0):
            shifted = {key: value.copy() for key, value in params.items()}
            shifted[name][index] += direction * fd_step
            _, shifted_loss = model_forward(shifted)
            shifted_value = float(shifted_loss.value[0, 0])
            if not np.isfinite(shifted_value):
                raise NonFiniteError(f"non-finite loss while shifting parameter: {name}{index}")
            losses.append(shifted_value)

        numeric = (losses[0] - losses[1]) / (2.0 * fd_step)
        exact = float(analytic[name][index])
        denominator = max(abs(exact), abs(numeric), Constants.FD_DENOMINATOR_FLOOR)
        worst = max(worst, abs(exact - numeric) / denominator)

    return worst


def glorot_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise ShapeError(f"dimensions must be positive: ({rows}, {cols})")

    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


@dataclass
class AdamState:
    lr: float
    beta1: float = Constants.ADAM_BETA1
    beta2: float = Constants.ADAM_BETA2
    epsilon: float = Constants.ADAM_EPSILON
    weight_decay: float = 0.0
    step: int = 0
    first_moments: ParamDict = field(default_factory=dict)
    second_moments: ParamDict = field(default_factory=dict)


def adam_step(params: ParamDict, grads: ParamDict, state: AdamState) -> tuple[ParamDict, AdamState]:
    """
    Adam with bias correction and decoupled weight decay. Returns new parameter arrays; inputs are not mutated
    """

    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"non-finite gradient for parameter: {name}")

    state.step += 1
    bias_correction1 = 1.0 - state.beta1 ** state.step
    bias_correction2 = 1.0 - state.beta2 ** state.step

    updated = {}
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(value)
        if grad.shape != value.shape:
            raise ShapeError(f"gradient shape does not match parameter ({name}): {grad.shape} != {value.shape}")

        first = state.first_moments.get(name, np.zeros_like(value))
        second = state.second_moments.get(name, np.zeros_like(value))
        first = state.beta1 * first + (1.0 - state.beta1) * grad
        second = state.beta2 * second + (1.0 - state.beta2) * grad * grad
        state.first_moments[name] = first
        state.second_moments[name] = second

        step = (first / bias_correction1) / (np.sqrt(second / bias_correction2) + state.epsilon)
        updated[name] = value - state.lr * state.weight_decay * value - state.lr * step

    return updated, state


def write_parameters(directory: Union[str, Path], params: ParamDict, metadata: dict) -> None:
    """
    Writes a JSON manifest (names, shapes, dtype, blob file, plus `metadata`) and one little-endian float64
    blob per parameter, in manifest order
    """

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    entries = []
    for name in sorted(params):
        value = np.ascontiguousarray(params[name], dtype=Constants.CHECKPOINT_DTYPE)
        file_name = f"{name}{Constants.CHECKPOINT_BLOB_SUFFIX}"
        (directory / file_name).write_bytes(value.tobytes(order="C"))
        entries.append({"name": name, "shape": list(value.shape), "dtype": Constants.CHECKPOINT_DTYPE,
                        "file": file_name})

    Methods.write_json(directory / Constants.CHECKPOINT_MANIFEST_FILE_NAME, {
        "format": Constants.CHECKPOINT_FORMAT_VERSION,
        "parameters": entries,
        "metadata": metadata
    })


def read_parameters(directory: Union[str, Path]) -> tuple[ParamDict, dict]:
    directory = Path(directory)
    manifest_path = directory / Constants.CHECKPOINT_MANIFEST_FILE_NAME
    if not manifest_path.is_file():
        raise CheckpointError(f"checkpoint manifest not found in: {directory}")

    manifest: dict = Methods.read_json(manifest_path)
    if manifest.get("format") != Constants.CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format: {manifest.get('format')}")

    item_size = np.dtype(Constants.CHECKPOINT_DTYPE).itemsize
    params = {}
    for entry in manifest["parameters"]:
        if entry["dtype"] != Constants.CHECKPOINT_DTYPE:
            raise CheckpointError(f"unsupported parameter dtype ({entry['name']}): {entry['dtype']}")

        blob_path = directory / entry["file"]
        if not blob_path.is_file():
            raise CheckpointError(f"parameter blob not found ({entry['name']}): {blob_path}")

        blob = blob_path.read_bytes()
        count = int(np.prod(entry["shape"]))
        if len(blob) != count * item_size:
            raise CheckpointError(
                f"parameter blob is corrupt ({entry['name']}: expected {count * item_size} bytes, found {len(blob)})"
            )
        params[entry["name"]] = np.frombuffer(blob, dtype=Constants.CHECKPOINT_DTYPE).astype(np.float64).reshape(
            entry["shape"]
        )

    return params, manifest.get("metadata", {})
