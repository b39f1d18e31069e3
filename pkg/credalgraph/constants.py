class Constants:
    # Dataset directory layout
    META_FILE_NAME = "meta.json"
    EDGES_FILE_NAME = "edges.tsv"
    FEATURES_FILE_NAME = "features.csv"
    LABELS_FILE_NAME = "labels.txt"
    SPLIT_FILE_NAME = "split.json"

    # Checkpoint layout
    CHECKPOINT_MANIFEST_FILE_NAME = "manifest.json"
    CHECKPOINT_BLOB_SUFFIX = ".bin"
    CHECKPOINT_DTYPE = "<f8"
    CHECKPOINT_FORMAT_VERSION = 2

    # Output layout
    RESULTS_CSV_FILE_NAME = "results.csv"
    RESULTS_JSON_FILE_NAME = "results.json"
    HISTORY_CSV_FILE_NAME = "history.csv"
    CHECKPOINT_DIR_NAME = "checkpoint"
    RESULTS_CSV_COLUMNS = ("dataset", "method", "kind", "seed", "auroc", "f1_lower", "f1_upper", "seconds")
    HISTORY_CSV_COLUMNS = ("epoch", "loss", "val_metric", "seconds")
    SCORES_CSV_COLUMNS = ("node_id", "score", "is_ood", "split")
    ERROR_KIND = "error"

    # Split defaults
    DEFAULT_TRAIN_FRAC = 0.6
    DEFAULT_VAL_FRAC = 0.2
    OOD_LABEL = -1

    # Training defaults
    DEFAULT_LR = 1e-2
    DEFAULT_WEIGHT_DECAY = 5e-4
    DEFAULT_MAX_EPOCHS = 200
    DEFAULT_PATIENCE = 20
    DEFAULT_DELTA = 0.8
    DEFAULT_NUM_LAYERS = 2
    DEFAULT_HIDDEN_DIM = 64
    LR_BOUNDS = (1e-5, 1e-1)
    WEIGHT_DECAY_BOUNDS = (0.0, 1e-1)
    DELTA_BOUNDS = (0.0, 1.0)  # Lower bound exclusive

    # Adam
    ADAM_BETA1 = 0.9
    ADAM_BETA2 = 0.999
    ADAM_EPSILON = 1e-8

    # Numerics
    CE_CLAMP_MIN = 1e-12
    CREDAL_TOLERANCE = 1e-9
    WATER_FILLING_TOLERANCE = 1e-12
    WATER_FILLING_MAX_ITERATIONS = 200
    EXACT_MIN_ENTROPY_MAX_CLASSES = 15
    VERTEX_ENUMERATION_CHUNK_SIZE = 2_000_000
    ORACLE_MAX_CLASSES = 4
    ORACLE_MIN_RESOLUTION = 1e-3
    ORACLE_MESH_CHUNK_SIZE = 1_000_000
    FRANK_WOLFE_GAP_TOLERANCE = 1e-8
    FRANK_WOLFE_MAX_ITERATIONS = 10_000
    LINE_SEARCH_ITERATIONS = 50
    LOG_FLOOR = 1e-300
    MAHALANOBIS_RIDGE = 1e-6
    FD_DENOMINATOR_FLOOR = 1e-5

    # Baseline defaults
    ENERGY_T = 1.0
    ODIN_T = 1000.0
    ODIN_EPSILON = 0.0
    KNN_K = 5
    GNNSAFE_ALPHA = 0.5
    GNNSAFE_K = 2
    ENSEMBLE_SIZE = 5
    ENSEMBLE_SIZE_BOUNDS = (2, 15)

    # Seed salts, so that derived generators never collide between concerns
    SEED_SALT_INIT = 1
    SEED_SALT_DROPOUT = 2
    SEED_SALT_ENSEMBLE = 3
    SEED_SALT_VERIFY = 4

    JOBS_ENV_VAR = "CREDAL_JOBS"
