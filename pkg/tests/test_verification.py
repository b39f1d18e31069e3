import numpy as np
import pytest

from credalgraph.credal import min_entropy_interval
from credalgraph.verification import (
    check_auroc, check_dro_reduction, check_gradients, random_credal_sets, reference_min_entropy, run_verification
)


def test_battery_passes():
    results = run_verification(seed=0)

    assert len({result.name for result in results}) == len(results)
    assert [result.name for result in results if not result.passed] == []


def test_injected_fault_is_caught():
    failed = {result.name for result in run_verification(seed=0, inject_fault=True) if not result.passed}
    assert failed == {"entropy_oracle_agreement", "min_entropy_vertices"}


def test_gradient_check_on_other_seeds():
    for seed in (1, 2):
        assert check_gradients(seed).passed


@pytest.mark.parametrize("num_classes", [9, 12, 15])
def test_min_entropy_matches_vertex_enumeration_on_many_classes(num_classes):
    rng = np.random.default_rng(num_classes)
    for _ in range(5):
        prediction = random_credal_sets(rng, 1, num_classes)
        q_lower, q_upper = prediction.q_lower[0], prediction.q_upper[0]
        result = min_entropy_interval(q_lower, q_upper)

        assert not result.is_approximate
        assert result.entropy == pytest.approx(reference_min_entropy(q_lower, q_upper), abs=1e-9)


def test_reference_vertex_hand_case():
    assert reference_min_entropy(np.array([0.6, 0.0, 0.0]), np.array([0.8, 0.3, 0.3])) == pytest.approx(0.7219, abs=1e-4)


def test_describe():
    result = check_dro_reduction(np.random.default_rng(0))

    assert result.describe().startswith("dro_full_set_reduction")
    assert result.describe().endswith("PASS")
    assert check_auroc(np.random.default_rng(1)).measured <= 1e-12
