import numpy as np
from scipy.stats import rankdata
from sklearn.metrics import f1_score, roc_curve


def auroc(scores_id, scores_ood) -> float:
    """
    Probability that a random OOD node scores above a random ID node, ties counting one half.
    Computed from mid-ranks of the pooled scores (Mann-Whitney U); OOD is the positive class
    """

    scores_id = np.asarray(scores_id, dtype=np.float64).ravel()
    scores_ood = np.asarray(scores_ood, dtype=np.float64).ravel()
    if scores_id.size == 0 or scores_ood.size == 0:
        raise ValueError(f"auroc requires both classes (n_id={scores_id.size}, n_ood={scores_ood.size})")

    ranks = rankdata(np.concatenate((scores_id, scores_ood)), method="average")
    n_id, n_ood = scores_id.size, scores_ood.size
    u_statistic = ranks[n_id:].sum() - n_ood * (n_ood + 1) / 2.0

    return float(u_statistic / (n_id * n_ood))


def macro_f1(predicted, truth, classes) -> float:
    """
    Unweighted mean of per-class F1 over `classes`; a class absent from both prediction and truth scores 0
    """

    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if truth.size == 0:
        raise ValueError("macro_f1 requires at least one evaluated node")

    return float(f1_score(truth, predicted, labels=list(classes), average="macro", zero_division=0))


def roc_points(scores_id, scores_ood) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    (thresholds, fpr, tpr) over every distinct score. The sweep always starts at (0, 0) and ends at (1, 1)
    """

    scores_id = np.asarray(scores_id, dtype=np.float64).ravel()
    scores_ood = np.asarray(scores_ood, dtype=np.float64).ravel()
    truth = np.concatenate((np.zeros(scores_id.size, dtype=np.int64), np.ones(scores_ood.size, dtype=np.int64)))

    fpr, tpr, thresholds = roc_curve(truth, np.concatenate((scores_id, scores_ood)), drop_intermediate=False)
    return thresholds, fpr, tpr
