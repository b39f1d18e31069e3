"""
Writes the run configs for the synthetic end-to-end experiments into ../configs
"""

from pathlib import Path
import json

CONFIGS_DIR = Path(__file__).resolve().parent.parent / "configs"
SEEDS = [0, 1, 2, 3, 4]

# Both graphs share sizes and features; only the edge probabilities differ
CSBM_BASE = {
    "nodes_per_class": 300,
    "num_classes": 4,
    "feature_dim": 8,
    "mean_separation": 1.5,
    "noise_sigma": 1.0,
    "seed": 0
}
EDGE_PROBABILITIES = {
    "heterophilic": {"p_in": 0.01, "p_out": 0.05},
    "homophilic": {"p_in": 0.05, "p_out": 0.01}
}
MODEL = {
    "kind": "credal_lj",
    "backbone": {"kind": "gcn", "num_layers": 2, "hidden_dim": 64},
    "lr": 0.01,
    "weight_decay": 0.0005,
    "max_epochs": 200,
    "patience": 20,
    "delta": 0.8
}
METHODS = [
    {"type": "vanilla"},
    {"type": "msp"},
    {"type": "energy"},
    {"type": "odin", "epsilons": [0.0, 0.0005, 0.001]},
    {"type": "mahalanobis"},
    {"type": "knn", "k": 5},
    {"type": "knnlj", "k": 5},
    {"type": "gnnsafe"},
    {"type": "classical_ensemble", "size": 5},
    {"type": "credal_ensemble", "size": 5},
    {"type": "credal_final"},
    {"type": "credal_lj"}
]


def make_experiment_config(graph: str) -> dict:
    return {
        "dataset": {"csbm": {**CSBM_BASE, **EDGE_PROBABILITIES[graph]}},
        "partition": {"ood_classes": [3]},
        "split": {"train_frac": 0.6, "val_frac": 0.2, "seeds": SEEDS},
        "model": MODEL,
        "methods": METHODS,
        "output": {"dir": f"out/{graph}"}
    }


def make_train_config() -> dict:
    return {
        "dataset": {"csbm": {**CSBM_BASE, **EDGE_PROBABILITIES["heterophilic"]}},
        "partition": {"ood_classes": [3]},
        "split": {"seed": 0},
        "model": MODEL,
        "output": {"dir": "out/train", "record_timing": True}
    }


if __name__ == "__main__":
    CONFIGS_DIR.mkdir(exist_ok=True)

    documents = {f"{graph}.json": make_experiment_config(graph) for graph in EDGE_PROBABILITIES}
    documents["train.json"] = make_train_config()
    for file_name, document in documents.items():
        with open(CONFIGS_DIR / file_name, "w", encoding="utf-8", newline="\n") as config_file:
            config_file.write(json.dumps(document, indent=4) + "\n")
        print(f"Wrote {CONFIGS_DIR / file_name}")
