from math import log2

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from credalgraph.credal import (
    CredalPrediction, IntervalLogits, credal_layer_forward, ensemble_entropy_decompose, entropy_bits,
    entropy_bounds_oracle, hull_entropy_oracle, hull_uncertainty, interval_softmax, interval_uncertainty,
    max_entropy_interval, min_entropy_interval, point_prediction, project_feasible, write_predictions_csv
)
from credalgraph.enums import Bound
from credalgraph.errors import InfeasibleCredalSetError
from credalgraph.training import GraphTape


def random_prediction(rng, rows, num_classes, max_half_length=1.5):
    midpoint = rng.normal(scale=2.0, size=(rows, num_classes))
    half_length = rng.uniform(0.0, max_half_length, size=(rows, num_classes))
    return interval_softmax(IntervalLogits(a_lower=midpoint - half_length, a_upper=midpoint + half_length))


class TestCredalLayer:
    def test_zero_input_is_bias_only(self):
        tape = GraphTape()
        z = tape.constant(np.zeros((2, 3)))
        bias = np.array([[0.5, -1.0]])
        half_bias = np.array([[0.0, 2.0]])

        lower, upper = credal_layer_forward(
            tape, z, tape.constant(np.ones((3, 2))), tape.constant(bias),
            tape.constant(np.ones((3, 2))), tape.constant(half_bias)
        )
        half_length = np.log1p(np.exp(half_bias))
        assert_allclose(lower.value, np.repeat(bias - half_length, 2, axis=0))
        assert_allclose(upper.value, np.repeat(bias + half_length, 2, axis=0))

    def test_interval_is_ordered(self):
        rng = np.random.default_rng(0)
        tape = GraphTape()
        lower, upper = credal_layer_forward(
            tape, tape.constant(rng.normal(size=(10, 4))),
            tape.constant(rng.normal(size=(4, 3))), tape.constant(rng.normal(size=(1, 3))),
            tape.constant(rng.normal(size=(4, 3))), tape.constant(rng.normal(size=(1, 3)))
        )

        assert np.all(upper.value - lower.value >= 0.0)

    def test_collapsing_half_length(self):
        tape = GraphTape()
        lower, upper = credal_layer_forward(
            tape, tape.constant(np.ones((1, 2))), tape.constant(np.eye(2)), tape.constant(np.zeros((1, 2))),
            tape.constant(np.zeros((2, 2))), tape.constant(np.full((1, 2), -50.0))
        )

        assert_allclose(lower.value, [[1.0, 1.0]], atol=1e-20)
        assert_allclose(upper.value, [[1.0, 1.0]], atol=1e-20)


class TestIntervalSoftmax:
    def test_symmetric_point_logits(self):
        prediction = interval_softmax(IntervalLogits(a_lower=np.zeros((1, 3)), a_upper=np.zeros((1, 3))))

        assert_allclose(prediction.q_lower, np.full((1, 3), 1 / 3))
        assert_allclose(prediction.q_upper, np.full((1, 3), 1 / 3))

    def test_two_class_closed_form(self):
        prediction = interval_softmax(IntervalLogits(a_lower=np.zeros((1, 2)), a_upper=np.ones((1, 2))))
        e = np.e

        assert_allclose(prediction.q_lower, [[1 / (1 + e), 1 / (1 + e)]])
        assert_allclose(prediction.q_upper, [[e / (1 + e), e / (1 + e)]])
        assert_allclose(prediction.q_lower, [[0.2689, 0.2689]], atol=1e-4)

    def test_bounds_bracket_the_simplex(self):
        prediction = random_prediction(np.random.default_rng(1), 10_000, 5)

        assert np.all(prediction.q_lower <= prediction.q_upper)
        assert np.all(prediction.q_lower.sum(axis=1) <= 1.0 + 1e-12)
        assert np.all(prediction.q_upper.sum(axis=1) >= 1.0 - 1e-12)

    def test_extreme_logits_stay_finite(self):
        prediction = interval_softmax(IntervalLogits(
            a_lower=np.array([[-1000.0, 0.0]]), a_upper=np.array([[1000.0, 0.0]])
        ))

        assert np.all(np.isfinite(prediction.q_lower))
        assert np.all(np.isfinite(prediction.q_upper))

    def test_wide_interval_keeps_its_width(self):
        prediction = interval_softmax(IntervalLogits(a_lower=np.array([[-40.0, 0.0]]), a_upper=np.array([[40.0, 0.0]])))

        assert_allclose(prediction.q_lower, [[np.exp(-40.0) / (1 + np.exp(-40.0)), 1 / (1 + np.exp(40.0))]], rtol=1e-12)
        assert np.all(prediction.q_upper < 1.0)
        assert_allclose(prediction.q_upper, [[1.0, 1.0]], atol=1e-15)
        assert interval_uncertainty(prediction).eu[0] == pytest.approx(1.0, abs=1e-9)

    def test_very_wide_interval(self):
        prediction = interval_softmax(IntervalLogits(
            a_lower=np.array([[-400.0, 0.0, 0.0]]), a_upper=np.array([[400.0, 0.0, 0.0]])
        ))

        assert_allclose(prediction.q_lower[0, 0], np.exp(-400.0) / 2, rtol=1e-12)
        assert_allclose(prediction.q_lower[0, 1:], np.exp(-400.0), rtol=1e-12)
        assert_allclose(prediction.q_upper[0, 1:], 0.5, rtol=1e-12)
        assert 0.0 < prediction.q_upper[0, 0] < 1.0
        prediction.check()

    def test_saturated_bounds_stay_inside_the_open_interval(self):
        prediction = interval_softmax(IntervalLogits(a_lower=np.array([[800.0, 0.0]]), a_upper=np.array([[800.0, 0.0]])))

        for bound in (prediction.q_lower, prediction.q_upper):
            assert np.all(bound > 0.0)
            assert np.all(bound < 1.0)

    def test_non_finite_logits(self):
        with pytest.raises(ValueError):
            interval_softmax(IntervalLogits(a_lower=np.array([[np.nan, 0.0]]), a_upper=np.zeros((1, 2))))


class TestEntropyExtremes:
    def test_unconstrained_maximum_is_uniform(self):
        result = max_entropy_interval(np.zeros(3), np.ones(3))

        assert_allclose(result.distribution, np.full(3, 1 / 3), atol=1e-9)
        assert result.entropy == pytest.approx(log2(3))

    def test_water_filling_hand_case(self):
        result = max_entropy_interval(np.array([0.6, 0.0, 0.0]), np.array([0.8, 0.3, 0.3]))

        assert_allclose(result.distribution, [0.6, 0.2, 0.2], atol=1e-9)
        assert result.entropy == pytest.approx(1.3710, abs=1e-4)

    def test_unconstrained_minimum_is_a_vertex(self):
        result = min_entropy_interval(np.zeros(3), np.ones(3))

        assert result.entropy == pytest.approx(0.0, abs=1e-12)
        assert sorted(result.distribution.tolist()) == [0.0, 0.0, 1.0]
        assert not result.is_approximate

    def test_vertex_hand_case(self):
        result = min_entropy_interval(np.array([0.6, 0.0, 0.0]), np.array([0.8, 0.3, 0.3]))

        assert result.entropy == pytest.approx(0.7219, abs=1e-4)
        assert result.distribution[0] == pytest.approx(0.8)
        assert sorted(result.distribution[1:].tolist()) == pytest.approx([0.0, 0.2])

    def test_point_set(self):
        p = np.array([0.5, 0.3, 0.2])

        assert max_entropy_interval(p, p).entropy == pytest.approx(entropy_bits(p), abs=1e-12)
        assert min_entropy_interval(p, p).entropy == pytest.approx(entropy_bits(p), abs=1e-12)
        assert_allclose(max_entropy_interval(p, p).distribution, p)

    def test_many_classes_fall_back_to_greedy(self):
        result = min_entropy_interval(np.zeros(16), np.ones(16))

        assert result.is_approximate
        assert result.entropy == pytest.approx(0.0, abs=1e-12)

    def test_batches_match_single_rows(self):
        prediction = random_prediction(np.random.default_rng(2), 6, 4)
        batch = min_entropy_interval(prediction.q_lower, prediction.q_upper)

        for row in range(6):
            single = min_entropy_interval(prediction.q_lower[row], prediction.q_upper[row])
            assert batch.entropy[row] == pytest.approx(single.entropy, abs=1e-12)

    @pytest.mark.parametrize("lower, upper", [
        ([0.6, 0.5, 0.0], [0.7, 0.6, 0.1]),
        ([0.0, 0.0, 0.0], [0.3, 0.3, 0.3]),
        ([0.5, 0.0], [0.4, 1.0])
    ])
    def test_infeasible_bounds(self, lower, upper):
        with pytest.raises(InfeasibleCredalSetError):
            max_entropy_interval(np.array(lower), np.array(upper))
        with pytest.raises(InfeasibleCredalSetError):
            min_entropy_interval(np.array(lower), np.array(upper))

    def test_marginal_infeasibility_is_projected(self):
        lower, upper = project_feasible(np.array([0.5, 0.5 + 1e-11]), np.array([0.6, 0.6]))

        assert lower.sum() <= 1.0 + 1e-15
        assert np.all(lower <= upper)

    @pytest.mark.parametrize("num_classes", [2, 3, 4])
    def test_solvers_agree_with_grid_oracle(self, num_classes):
        rng = np.random.default_rng(num_classes)
        prediction = random_prediction(rng, 3, num_classes, max_half_length=0.8)
        # The grid grows as (1 / resolution)^(C-1)
        resolution = 1e-3 if num_classes < 4 else 1e-2

        for row in range(3):
            lower, upper = prediction.q_lower[row], prediction.q_upper[row]
            oracle_max, oracle_min = entropy_bounds_oracle(lower, upper, resolution=resolution)

            assert min_entropy_interval(lower, upper).entropy == pytest.approx(oracle_min, abs=1e-6)
            solved_max = max_entropy_interval(lower, upper).entropy
            assert oracle_max - 1e-7 <= solved_max <= oracle_max + 10 * resolution

    def test_oracle_on_point_set(self):
        p = np.array([0.25, 0.25, 0.5])
        assert entropy_bounds_oracle(p, p) == (pytest.approx(1.5), pytest.approx(1.5))

    def test_oracle_rejects_fine_resolution(self):
        with pytest.raises(ValueError):
            entropy_bounds_oracle(np.zeros(2), np.ones(2), resolution=1e-4)


class TestIntervalUncertainty:
    def test_degenerate_prediction_has_no_epistemic_uncertainty(self):
        p = np.array([[0.7, 0.2, 0.1], [0.4, 0.4, 0.2]])
        scores = interval_uncertainty(CredalPrediction(q_lower=p, q_upper=p))

        assert_allclose(scores.eu, 0.0, atol=1e-9)
        assert_allclose(scores.tu, entropy_bits(p), atol=1e-9)

    def test_full_box(self):
        prediction = interval_softmax(IntervalLogits(a_lower=np.full((1, 3), -20.0), a_upper=np.full((1, 3), 20.0)))
        scores = interval_uncertainty(prediction)

        assert scores.eu[0] == pytest.approx(log2(3), abs=1e-6)

    def test_epistemic_is_non_negative(self):
        scores = interval_uncertainty(random_prediction(np.random.default_rng(3), 500, 4))

        assert np.all(scores.eu >= 0.0)
        assert_allclose(scores.tu - scores.au, scores.eu)

    def test_wider_intervals_raise_epistemic_uncertainty(self):
        midpoint = np.random.default_rng(4).normal(size=(50, 3))
        narrow = interval_uncertainty(interval_softmax(IntervalLogits(a_lower=midpoint - 0.1, a_upper=midpoint + 0.1)))
        wide = interval_uncertainty(interval_softmax(IntervalLogits(a_lower=midpoint - 1.0, a_upper=midpoint + 1.0)))

        assert np.all(wide.eu >= narrow.eu - 1e-9)

    def test_invariant_to_logit_shift(self):
        rng = np.random.default_rng(5)
        midpoint = rng.normal(size=(20, 3))
        half_length = rng.uniform(0.0, 1.0, size=(20, 3))
        shift = rng.normal(size=(20, 1)) * 10.0

        original = interval_softmax(IntervalLogits(a_lower=midpoint - half_length, a_upper=midpoint + half_length))
        shifted = interval_softmax(IntervalLogits(
            a_lower=midpoint - half_length + shift, a_upper=midpoint + half_length + shift
        ))

        assert_allclose(shifted.q_lower, original.q_lower, rtol=1e-10)
        assert_allclose(shifted.q_upper, original.q_upper, rtol=1e-10)


class TestHullUncertainty:
    def test_single_member(self):
        p = np.array([[0.6, 0.3, 0.1]])
        total, aleatoric, epistemic = hull_uncertainty(p)

        assert total == pytest.approx(entropy_bits(p[0]))
        assert aleatoric == pytest.approx(entropy_bits(p[0]))
        assert epistemic == pytest.approx(0.0, abs=1e-12)

    def test_opposite_one_hots(self):
        total, aleatoric, epistemic = hull_uncertainty(np.array([[1.0, 0.0], [0.0, 1.0]]))

        assert total == pytest.approx(1.0, abs=1e-6)
        assert aleatoric == 0.0
        assert epistemic == pytest.approx(1.0, abs=1e-6)

    def test_members_only(self):
        total, aleatoric, epistemic = hull_uncertainty(np.array([[1.0, 0.0], [0.0, 1.0]]), members_only=True)

        assert (total, aleatoric, epistemic) == (0.0, 0.0, 0.0)

    def test_agrees_with_grid_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            members = rng.dirichlet(np.ones(3), size=3)
            total, _, _ = hull_uncertainty(members)
            oracle = hull_entropy_oracle(members)

            assert total == pytest.approx(oracle, abs=1e-3)
            # A duality gap below 1e-8 bounds the distance to the true maximum, which the grid cannot exceed
            assert total >= oracle - 1e-7

    def test_batch_shapes(self):
        members = np.random.default_rng(7).dirichlet(np.ones(4), size=(10, 3))
        total, aleatoric, epistemic = hull_uncertainty(members)

        assert total.shape == aleatoric.shape == epistemic.shape == (10,)
        assert np.all(epistemic >= 0.0)

    def test_no_members(self):
        with pytest.raises(ValueError):
            hull_uncertainty(np.zeros((0, 3)))


class TestEnsembleDecomposition:
    def test_identical_members(self):
        member = np.random.default_rng(8).dirichlet(np.ones(3), size=5)
        scores = ensemble_entropy_decompose(np.stack([member] * 4))

        assert_allclose(scores.eu, 0.0, atol=1e-12)

    def test_opposite_one_hots(self):
        scores = ensemble_entropy_decompose(np.array([[[1.0, 0.0]], [[0.0, 1.0]]]))

        assert_allclose(scores.tu, [1.0])
        assert_allclose(scores.au, [0.0])
        assert_allclose(scores.eu, [1.0])

    def test_epistemic_is_non_negative(self):
        members = np.random.default_rng(9).dirichlet(np.ones(4), size=(5, 200))
        assert np.all(ensemble_entropy_decompose(members).eu >= 0.0)


class TestPointPrediction:
    def test_argmax(self):
        prediction = CredalPrediction(q_lower=np.array([[0.1, 0.6, 0.1]]), q_upper=np.array([[0.7, 0.2, 0.1]]))

        assert_array_equal(point_prediction(prediction, Bound.UPPER), [0])
        assert_array_equal(point_prediction(prediction, "lower"), [1])

    def test_tie_goes_to_lowest_class(self):
        prediction = CredalPrediction(q_lower=np.array([[0.5, 0.5]]), q_upper=np.array([[0.5, 0.5]]))
        assert_array_equal(point_prediction(prediction, Bound.UPPER), [0])


def test_predictions_csv(tmp_path):
    prediction = random_prediction(np.random.default_rng(10), 4, 2)
    path = tmp_path / "predictions.csv"
    write_predictions_csv(path, prediction, interval_uncertainty(prediction))

    lines = path.read_text().splitlines()
    assert lines[0] == "node_id,q_lower_0,q_lower_1,q_upper_0,q_upper_1,tu,au,eu"
    assert len(lines) == 5
