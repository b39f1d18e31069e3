from math import sqrt

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from credalgraph.backbone import BackboneConfig, backbone_forward, gcn_layer, init_backbone_params, joint_concat, sage_layer
from credalgraph.enums import BackboneKind
from credalgraph.errors import ShapeError
from credalgraph.training import GraphTape


def run_gcn(dataset, h, weight, bias):
    tape = GraphTape()
    return gcn_layer(tape, tape.constant(h), dataset.gcn_operator, tape.constant(weight), tape.constant(bias)).value


def run_sage(dataset, h, weight_self, weight_neigh, bias):
    tape = GraphTape()
    return sage_layer(
        tape, tape.constant(h), dataset.row_operator,
        tape.constant(weight_self), tape.constant(weight_neigh), tape.constant(bias)
    ).value


class TestGcnLayer:
    def test_edgeless_identity_is_relu(self, make_graph):
        h = np.array([[1.0, -2.0], [-0.5, 3.0], [0.0, 4.0]])
        dataset = make_graph(3, features=h)

        assert_allclose(run_gcn(dataset, h, np.eye(2), np.zeros((1, 2))), np.maximum(h, 0.0))

    def test_symmetric_pair(self, make_graph):
        dataset = make_graph(2, edges=[(0, 1)])
        h = np.array([[1.0], [3.0]])

        output = run_gcn(dataset, h, np.eye(1), np.zeros((1, 1)))
        assert_allclose(output, [[2.0], [2.0]])

    def test_path_by_hand(self, make_graph):
        # Degrees with self-loops are 2, 3, 2
        dataset = make_graph(3, edges=[(0, 1), (1, 2)])
        h = np.array([[1.0], [2.0], [4.0]])

        expected = [
            [h[0, 0] / 2 + h[1, 0] / sqrt(6)],
            [h[0, 0] / sqrt(6) + h[1, 0] / 3 + h[2, 0] / sqrt(6)],
            [h[1, 0] / sqrt(6) + h[2, 0] / 2]
        ]
        assert_allclose(run_gcn(dataset, h, np.eye(1), np.zeros((1, 1))), expected, rtol=1e-12)

    def test_bias_applies_after_aggregation(self, make_graph):
        dataset = make_graph(2)
        h = np.zeros((2, 1))

        assert_allclose(run_gcn(dataset, h, np.eye(1), np.array([[0.5]])), [[0.5], [0.5]])


class TestSageLayer:
    def test_isolated_node_has_no_neighbour_term(self, make_graph):
        dataset = make_graph(1)
        h = np.array([[2.0]])

        assert_allclose(run_sage(dataset, h, np.array([[1.5]]), np.array([[100.0]]), np.zeros((1, 1))), [[3.0]])

    def test_zero_neighbour_weight(self, make_graph):
        dataset = make_graph(3, edges=[(0, 1), (1, 2)])
        h = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]])
        weight_self = np.array([[1.0, 0.0], [2.0, 1.0]])

        output = run_sage(dataset, h, weight_self, np.zeros((2, 2)), np.zeros((1, 2)))
        assert_allclose(output, np.maximum(h @ weight_self, 0.0))

    def test_star_mean_aggregation(self, make_graph):
        # Centre 0 with leaves 1, 2, 3
        dataset = make_graph(4, edges=[(0, 1), (0, 2), (0, 3)])
        h = np.array([[2.0], [3.0], [6.0], [9.0]])

        output = run_sage(dataset, h, np.eye(1), np.eye(1), np.zeros((1, 1)))
        # Centre: 2 + mean(3, 6, 9); each leaf: own value + 2
        assert_allclose(output, [[8.0], [5.0], [8.0], [11.0]])


class TestBackboneForward:
    @pytest.fixture
    def config(self, small_csbm):
        return BackboneConfig(input_dim=small_csbm.feature_dim, num_layers=2, hidden_dim=8)

    def test_trace_and_joint_shapes(self, small_csbm, config):
        params = init_backbone_params(config, np.random.default_rng(0))
        tape = GraphTape()
        trace = backbone_forward(tape, small_csbm, config, params)
        joint = joint_concat(tape, trace)

        assert len(trace) == 3
        assert joint.shape == (small_csbm.num_nodes, config.joint_dim)
        assert config.joint_dim == 20
        assert_array_equal(joint.value[:, :small_csbm.feature_dim], small_csbm.features)

    def test_sage_parameter_names(self, small_csbm):
        config = BackboneConfig(input_dim=small_csbm.feature_dim, kind=BackboneKind.SAGE, num_layers=1, hidden_dim=3)

        assert sorted(config.parameter_shapes()) == ["backbone.0.bias", "backbone.0.weight_neigh", "backbone.0.weight_self"]

    @pytest.mark.parametrize("kind", [BackboneKind.GCN, BackboneKind.SAGE])
    def test_permutation_equivariance(self, small_csbm, kind):
        config = BackboneConfig(input_dim=small_csbm.feature_dim, kind=kind, num_layers=2, hidden_dim=8)
        params = init_backbone_params(config, np.random.default_rng(1))
        permutation = np.random.default_rng(2).permutation(small_csbm.num_nodes)

        original = backbone_forward(GraphTape(), small_csbm, config, params)[-1].value
        permuted = backbone_forward(GraphTape(), small_csbm.permuted(permutation), config, params)[-1].value

        assert_allclose(permuted, original[permutation], atol=1e-12)

    def test_deterministic(self, small_csbm, config):
        params = init_backbone_params(config, np.random.default_rng(0))

        first = backbone_forward(GraphTape(), small_csbm, config, params)[-1].value
        second = backbone_forward(GraphTape(), small_csbm, config, params)[-1].value
        assert_array_equal(first, second)

    def test_wrong_parameter_shape(self, small_csbm, config):
        params = init_backbone_params(config, np.random.default_rng(0))
        params["backbone.0.weight"] = np.zeros((3, 8))

        with pytest.raises(ShapeError):
            backbone_forward(GraphTape(), small_csbm, config, params)

    def test_wrong_feature_width(self, small_csbm):
        config = BackboneConfig(input_dim=small_csbm.feature_dim + 1, num_layers=1, hidden_dim=4)
        params = init_backbone_params(config, np.random.default_rng(0))

        with pytest.raises(ShapeError):
            backbone_forward(GraphTape(), small_csbm, config, params)

    def test_invalid_layer_count(self):
        with pytest.raises(ShapeError):
            BackboneConfig(input_dim=4, num_layers=0)

    def test_dropout_only_when_training(self, small_csbm):
        config = BackboneConfig(input_dim=small_csbm.feature_dim, num_layers=1, hidden_dim=8, dropout=0.5)
        params = init_backbone_params(config, np.random.default_rng(0))

        evaluation = backbone_forward(GraphTape(), small_csbm, config, params)[-1].value
        again = backbone_forward(GraphTape(), small_csbm, config, params)[-1].value
        training = backbone_forward(GraphTape(), small_csbm, config, params, dropout_rng=np.random.default_rng(0))[-1].value

        assert_array_equal(evaluation, again)
        assert not np.array_equal(evaluation, training)
