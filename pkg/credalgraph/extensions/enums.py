from enum import Enum


class Scorer(str, Enum):
    """
    Method names accepted in the `methods` section of a run config
    """

    VANILLA = "vanilla"
    MSP = "msp"
    ENERGY = "energy"
    ODIN = "odin"
    MAHALANOBIS = "mahalanobis"
    KNN = "knn"
    KNNLJ = "knnlj"
    GNNSAFE = "gnnsafe"
    CLASSICAL_ENSEMBLE = "classical_ensemble"
    CREDAL_ENSEMBLE = "credal_ensemble"
    CREDAL_FINAL = "credal_final"
    CREDAL_LJ = "credal_lj"


class ScorerKey(str, Enum):
    """
    Optional method parameters
    """

    TEMPERATURE = "temperature"
    EPSILON = "epsilon"
    EPSILONS = "epsilons"
    K = "k"
    ALPHA = "alpha"
    PROPAGATION_STEPS = "propagation_steps"
    SIZE = "size"
    POOL_SIZE = "pool_size"
    MEMBERS_ONLY = "members_only"
