import numpy as np
import pytest

from credalgraph.backbone import BackboneConfig
from credalgraph.enums import ModelKind
from credalgraph.graph import ClassPartition, CsbmParams, GraphDataset, build_adjacency, generate_csbm, leave_out_class_split
from credalgraph.training import TrainConfig


@pytest.fixture
def make_graph():
    """
    Builds a GraphDataset from an edge list; features default to a column of node ids
    """

    def build(num_nodes, edges=(), labels=None, features=None, num_classes=2, name="toy"):
        edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
        labels = np.zeros(num_nodes, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64)
        if features is None:
            features = np.arange(num_nodes, dtype=np.float64).reshape(-1, 1)

        return GraphDataset(
            name=name,
            features=np.asarray(features, dtype=np.float64),
            labels=labels,
            edges=build_adjacency(num_nodes, edges[:, 0], edges[:, 1]),
            num_classes=num_classes
        )

    return build


@pytest.fixture(scope="session")
def small_csbm():
    return generate_csbm(CsbmParams(
        nodes_per_class=20, num_classes=3, p_in=0.2, p_out=0.02, feature_dim=4, seed=0
    ))


@pytest.fixture(scope="session")
def small_partition(small_csbm):
    return ClassPartition.leave_out((2,), small_csbm.num_classes)


@pytest.fixture(scope="session")
def small_split(small_csbm, small_partition):
    return leave_out_class_split(small_csbm, small_partition, 0.6, 0.2, 0)


@pytest.fixture
def small_train_config(small_csbm):
    def build(kind=ModelKind.CREDAL_LJ, **overrides):
        settings = {"max_epochs": 15, "patience": 50, "seed": 0, **overrides}
        return TrainConfig(
            backbone=BackboneConfig(input_dim=small_csbm.feature_dim, num_layers=2, hidden_dim=8),
            model_kind=kind, **settings
        )

    return build


@pytest.fixture
def small_run_config(tmp_path):
    """
    A JSON-shaped run config on a 60-node cSBM trained for only a few epochs
    """

    def build(methods, **sections):
        return {
            "dataset": {"csbm": {
                "nodes_per_class": 20, "num_classes": 3, "p_in": 0.2, "p_out": 0.02, "feature_dim": 4, "seed": 0
            }},
            "partition": {"ood_classes": [2]},
            "split": {"train_frac": 0.6, "val_frac": 0.2, "seed": 0},
            "model": {"kind": "credal_lj", "backbone": {"num_layers": 2, "hidden_dim": 8}, "max_epochs": 10},
            "methods": methods,
            "output": {"dir": str(tmp_path / "out")},
            **sections
        }

    return build
