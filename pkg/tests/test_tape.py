from math import log, sqrt

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import sparse

from credalgraph.enums import Primitive
from credalgraph.errors import CheckpointError, NonFiniteError, ShapeError
from credalgraph.tape import AdamState, Tape, adam_step, glorot_init, grad_check, read_parameters, write_parameters
from credalgraph.training import GraphTape


def cross_entropy_of(tape, output):
    """
    A scalar loss with non-trivial adjoints for any output with two or more columns
    """

    rows = output.shape[0]
    return tape.apply(
        Primitive.SOFTMAX_CROSS_ENTROPY, output, labels=np.arange(rows) % output.shape[1], index=np.arange(rows)
    )


def away_from_zero(rng, shape):
    return rng.choice((-1.0, 1.0), size=shape) * rng.uniform(0.5, 1.5, size=shape)


class TestForward:
    def test_relu(self):
        tape = GraphTape()
        assert_array_equal(tape.apply(Primitive.RELU, tape.constant([[-1.0, 2.0]])).value, [[0.0, 2.0]])

    def test_softplus_at_zero(self):
        tape = GraphTape()
        assert_allclose(tape.apply(Primitive.SOFTPLUS, tape.constant([[0.0]])).value, [[log(2.0)]])

    def test_softplus_is_stable_for_large_inputs(self):
        tape = GraphTape()
        assert_allclose(tape.apply(Primitive.SOFTPLUS, tape.constant([[800.0, -800.0]])).value, [[800.0, 0.0]])

    def test_concat_cols_shape(self):
        tape = GraphTape()
        output = tape.apply(Primitive.CONCAT_COLS, tape.constant(np.zeros((2, 3))), tape.constant(np.ones((2, 5))))
        assert output.shape == (2, 8)

    def test_matmul_shape_mismatch(self):
        tape = GraphTape()
        with pytest.raises(ShapeError):
            tape.apply(Primitive.MATMUL, tape.constant(np.zeros((2, 3))), tape.constant(np.zeros((2, 3))))

    def test_bias_must_be_a_row(self):
        tape = GraphTape()
        with pytest.raises(ShapeError):
            tape.apply(Primitive.BIAS_ADD, tape.constant(np.zeros((2, 3))), tape.constant(np.zeros((2, 3))))

    def test_non_finite_leaf(self):
        with pytest.raises(NonFiniteError):
            GraphTape().constant([[np.inf]])

    def test_non_matrix_leaf(self):
        with pytest.raises(ShapeError):
            GraphTape().constant([1.0, 2.0])

    def test_inputs_from_another_tape(self):
        other = GraphTape().constant([[1.0]])
        with pytest.raises(ValueError):
            GraphTape().apply(Primitive.RELU, other)

    def test_replay_is_bit_identical(self):
        rng = np.random.default_rng(0)
        tape = GraphTape()
        weight = tape.parameter("w", rng.normal(size=(3, 4)))
        hidden = tape.apply(Primitive.SOFTPLUS, tape.apply(Primitive.MATMUL, tape.constant(rng.normal(size=(5, 3))), weight))
        cross_entropy_of(tape, hidden)

        for replayed, recorded in zip(tape.replay(), tape.values):
            assert_array_equal(replayed, recorded)


class TestRegistry:
    def test_base_tape_has_no_primitives(self):
        assert Tape.PRIMITIVES == {}
        assert Primitive.MATMUL in GraphTape.PRIMITIVES
        assert Primitive.DRO_LOSS in GraphTape.PRIMITIVES

    def test_duplicate_registration(self):
        from credalgraph.extensions import PresetPrimitives

        with pytest.raises(ValueError):
            GraphTape.with_extensions(PresetPrimitives)


class TestBackward:
    def test_linear_case(self):
        x = np.array([[1.0, 2.0], [3.0, -1.0]])
        tape = GraphTape()
        weight = tape.parameter("w", np.zeros((2, 3)))
        loss = tape.apply(Primitive.TOTAL, tape.apply(Primitive.MATMUL, tape.constant(x), weight))

        # d/dW sum(xW) = x^T 1
        assert_allclose(tape.backward(loss)["w"], x.T @ np.ones((2, 3)))

    def test_unused_parameter_gets_zero(self):
        tape = GraphTape()
        used = tape.parameter("used", [[2.0]])
        tape.parameter("unused", np.ones((2, 2)))
        grads = tape.backward(tape.apply(Primitive.TOTAL, used))

        assert_array_equal(grads["unused"], np.zeros((2, 2)))
        assert_array_equal(grads["used"], [[1.0]])

    def test_loss_must_be_scalar(self):
        tape = GraphTape()
        with pytest.raises(ShapeError):
            tape.backward(tape.parameter("w", np.ones((2, 2))))

    def test_shared_parameter_accumulates(self):
        tape = GraphTape()
        weight = tape.parameter("w", [[3.0]])
        again = tape.parameter("w")
        loss = tape.apply(Primitive.TOTAL, tape.apply(Primitive.ADD, weight, again))

        assert again.node_id == weight.node_id
        assert_array_equal(tape.backward(loss)["w"], [[2.0]])

    def test_backward_is_deterministic(self):
        rng = np.random.default_rng(1)
        tape = GraphTape()
        weight = tape.parameter("w", rng.normal(size=(4, 3)))
        loss = cross_entropy_of(tape, tape.apply(Primitive.MATMUL, tape.constant(rng.normal(size=(6, 4))), weight))

        assert_array_equal(tape.backward(loss)["w"], tape.backward(loss)["w"])


def unary(primitive, **attrs):
    def build(tape, params):
        return tape.apply(primitive, tape.parameter("a", params["a"]), **attrs)

    return build


def binary(primitive, **attrs):
    def build(tape, params):
        return tape.apply(primitive, tape.parameter("a", params["a"]), tape.parameter("b", params["b"]), **attrs)

    return build


def interval_softmax(primitive):
    def build(tape, params):
        lower = tape.parameter("a", params["a"])
        upper = tape.apply(Primitive.ADD, lower, tape.apply(Primitive.SOFTPLUS, tape.parameter("b", params["b"])))
        return tape.apply(primitive, lower, upper)

    return build


OPERATOR = sparse.csr_matrix(np.array([[0.5, 0.5, 0.0, 0.0], [0.0, 0.2, 0.8, 0.0], [1.0, 0.0, 0.0, 1.0]]))
GATHER_INDEX = np.array([0, 2, 2, 3])
DROPOUT_MASK = np.array([[2.0, 0.0, 2.0], [0.0, 2.0, 2.0], [2.0, 2.0, 0.0], [2.0, 0.0, 0.0]])

PRIMITIVE_CASES = {
    "matmul": (binary(Primitive.MATMUL), {"a": (4, 3), "b": (3, 3)}),
    "spmm": (unary(Primitive.SPMM, operator=OPERATOR), {"a": (4, 3)}),
    "add": (binary(Primitive.ADD), {"a": (4, 3), "b": (4, 3)}),
    "bias_add": (binary(Primitive.BIAS_ADD), {"a": (4, 3), "b": (1, 3)}),
    "relu": (unary(Primitive.RELU), {"a": (4, 3)}),
    "softplus": (unary(Primitive.SOFTPLUS), {"a": (4, 3)}),
    "concat_cols": (binary(Primitive.CONCAT_COLS), {"a": (4, 2), "b": (4, 3)}),
    "gather_rows": (unary(Primitive.GATHER_ROWS, index=GATHER_INDEX), {"a": (5, 3)}),
    "weighted_sum": (binary(Primitive.WEIGHTED_SUM, weights=(0.7, -1.3)), {"a": (4, 3), "b": (4, 3)}),
    "dropout": (unary(Primitive.DROPOUT, mask=DROPOUT_MASK), {"a": (4, 3)}),
    "interval_softmax_lower": (interval_softmax(Primitive.INTERVAL_SOFTMAX_LOWER), {"a": (4, 3), "b": (4, 3)}),
    "interval_softmax_upper": (interval_softmax(Primitive.INTERVAL_SOFTMAX_UPPER), {"a": (4, 3), "b": (4, 3)}),
}


@pytest.mark.parametrize("case", sorted(PRIMITIVE_CASES))
def test_primitive_adjoint_matches_finite_differences(case):
    build, shapes = PRIMITIVE_CASES[case]
    rng = np.random.default_rng(5)
    params = {name: away_from_zero(rng, shape) for name, shape in shapes.items()}

    def forward(shifted_params):
        tape = GraphTape()
        return tape, cross_entropy_of(tape, build(tape, shifted_params))

    assert grad_check(forward, params, coordinate_count=100, fd_step=1e-5, rng=np.random.default_rng(0)) < 1e-6


@pytest.mark.parametrize("primitive", [Primitive.INTERVAL_SOFTMAX_LOWER, Primitive.INTERVAL_SOFTMAX_UPPER])
@pytest.mark.parametrize("spread", [40.0, 400.0])
def test_interval_softmax_adjoint_on_wide_logits(primitive, spread):
    rng = np.random.default_rng(8)
    params = {"a": rng.uniform(-spread, spread, size=(4, 3)), "b": rng.uniform(0.0, spread, size=(4, 3))}

    def forward(shifted_params):
        tape = GraphTape()
        return tape, cross_entropy_of(tape, interval_softmax(primitive)(tape, shifted_params))

    tape, loss = forward(params)
    grads = tape.backward(loss)

    assert all(np.all(np.isfinite(grad)) for grad in grads.values())
    assert grad_check(forward, params, coordinate_count=24, fd_step=1e-5, rng=np.random.default_rng(0)) < 1e-4


class TestGradCheck:
    def test_linear_toy(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(10, 3))

        def forward(params):
            tape = GraphTape()
            return tape, tape.apply(Primitive.TOTAL, tape.apply(Primitive.MATMUL, tape.constant(x), tape.parameter("w", params["w"])))

        assert grad_check(forward, {"w": rng.normal(size=(3, 1))}, coordinate_count=3, fd_step=1e-5) < 1e-7

    def test_two_layer_network(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(8, 4))
        params = {"w1": rng.normal(size=(4, 6)), "w2": rng.normal(size=(6, 3)), "b": rng.normal(size=(1, 3))}

        def forward(shifted_params):
            tape = GraphTape()
            hidden = tape.apply(
                Primitive.SOFTPLUS, tape.apply(Primitive.MATMUL, tape.constant(x), tape.parameter("w1", shifted_params["w1"]))
            )
            logits = tape.apply(
                Primitive.BIAS_ADD,
                tape.apply(Primitive.MATMUL, hidden, tape.parameter("w2", shifted_params["w2"])),
                tape.parameter("b", shifted_params["b"])
            )
            return tape, cross_entropy_of(tape, logits)

        assert grad_check(forward, params, coordinate_count=50, fd_step=1e-5) < 1e-4

    def test_no_parameters(self):
        def forward(params):
            tape = GraphTape()
            return tape, tape.apply(Primitive.TOTAL, tape.constant([[1.0]]))

        assert grad_check(forward, {}, coordinate_count=10, fd_step=1e-5) == 0.0

    def test_step_must_be_positive(self):
        with pytest.raises(ValueError):
            grad_check(lambda params: None, {"w": np.zeros((1, 1))}, coordinate_count=1, fd_step=0.0)


class TestGlorot:
    def test_same_seed(self):
        assert_array_equal(
            glorot_init(5, 7, np.random.default_rng(4)), glorot_init(5, 7, np.random.default_rng(4))
        )

    def test_bounds(self):
        values = glorot_init(100, 100, np.random.default_rng(0))
        assert np.max(np.abs(values)) <= sqrt(6.0 / 200.0)

    def test_single_value(self):
        assert abs(glorot_init(1, 1, np.random.default_rng(0))[0, 0]) <= sqrt(3.0)

    def test_invalid_dims(self):
        with pytest.raises(ShapeError):
            glorot_init(0, 3, np.random.default_rng(0))


class TestAdam:
    def test_zero_gradient_no_decay(self):
        params = {"w": np.array([[1.0, -2.0]])}
        updated, state = adam_step(params, {"w": np.zeros((1, 2))}, AdamState(lr=0.1))

        assert_array_equal(updated["w"], params["w"])
        assert state.step == 1

    def test_constant_gradient_moves_by_lr(self):
        params = {"w": np.zeros((1, 1))}
        state = AdamState(lr=0.01)
        for _ in range(200):
            previous = params["w"].copy()
            params, state = adam_step(params, {"w": np.full((1, 1), 0.3)}, state)

        assert_allclose(previous - params["w"], [[0.01]], rtol=1e-6)

    def test_decoupled_weight_decay(self):
        params = {"w": np.array([[2.0]])}
        state = AdamState(lr=0.01, weight_decay=0.1)
        params, state = adam_step(params, {"w": np.zeros((1, 1))}, state)
        params, state = adam_step(params, {"w": np.zeros((1, 1))}, state)

        assert_allclose(params["w"], [[2.0 * (1.0 - 0.001) ** 2]], rtol=1e-12)

    def test_inputs_not_mutated(self):
        params = {"w": np.ones((2, 2))}
        adam_step(params, {"w": np.ones((2, 2))}, AdamState(lr=0.1))
        assert_array_equal(params["w"], np.ones((2, 2)))

    def test_non_finite_gradient(self):
        with pytest.raises(NonFiniteError):
            adam_step({"w": np.ones((1, 1))}, {"w": np.full((1, 1), np.nan)}, AdamState(lr=0.1))


class TestParameterFiles:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        params = {"b": rng.normal(size=(1, 3)), "a": rng.normal(size=(4, 2))}
        write_parameters(tmp_path, params, {"note": "x"})
        loaded, metadata = read_parameters(tmp_path)

        assert metadata == {"note": "x"}
        for name in params:
            assert_array_equal(loaded[name], params[name])

    def test_truncated_blob(self, tmp_path):
        write_parameters(tmp_path, {"a": np.ones((3, 3))}, {})
        blob_path = next(tmp_path.glob("*.bin"))
        blob_path.write_bytes(blob_path.read_bytes()[:-8])

        with pytest.raises(CheckpointError):
            read_parameters(tmp_path)

    def test_one_blob_per_parameter(self, tmp_path):
        write_parameters(tmp_path, {"layer0.weight": np.ones((2, 3)), "layer0.bias": np.zeros((1, 3))}, {})

        assert sorted(path.name for path in tmp_path.glob("*.bin")) == ["layer0.bias.bin", "layer0.weight.bin"]
        assert (tmp_path / "layer0.weight.bin").stat().st_size == 6 * 8

    def test_missing_blob(self, tmp_path):
        write_parameters(tmp_path, {"a": np.ones((3, 3)), "b": np.ones((1, 3))}, {})
        (tmp_path / "b.bin").unlink()

        with pytest.raises(CheckpointError):
            read_parameters(tmp_path)

    def test_missing_files(self, tmp_path):
        with pytest.raises(CheckpointError):
            read_parameters(tmp_path)
