"""
Defaults for the fairrec pipeline.

Every value here can be overridden from the YAML run configuration or from
command line flags; see README.md for the documented keys.
"""

# Environment variable names
ENV_THREADS = "FAIRREC_THREADS"
ENV_LOG_LEVEL = "FAIRREC_LOG_LEVEL"
ENV_ML1M_DIR = "FAIRREC_ML1M_DIR"

# Dataset
MAX_RATING = 5
RATINGS_FILE = "ratings.dat"
USERS_FILE = "users.dat"
INPUT_ENCODING = "latin-1"
SPLIT_FRACTIONS = (0.7, 0.1, 0.2)
PMF_SPLIT_FRACTIONS = (0.8, 0.0, 0.2)
MOVIELENS_AGE_CODES = (1, 18, 25, 35, 45, 50, 56)
SENIOR_AGE_CODE = 45

# Minority indexes
LIKE_THRESHOLD = 4
DISLIKE_THRESHOLD = 2
MIN_SIDE_VOTES = 5
IM_MODE = "pooled"
UM_MODE = "per_formula"
HISTOGRAM_BINS = 20

# PMF
FACTORS = 30
PMF_LEARNING_RATE = 0.005
PMF_REGULARIZATION = 0.05
PMF_EPOCHS = 50
PMF_INIT_SCALE = 0.1

# MLN
MLN_HIDDEN_LAYERS = (80, 10)
MLN_DROPOUT = 0.2
MLN_EPOCHS = 20
MLN_BATCH_SIZE = 256
MLN_LEARNING_RATE = 0.001
MLN_DECAY = 0.9
MLN_EPSILON = 1e-8
MLN_MAX_RATINGS = 100000
ACCURACY_SCALE = "normalized"

# Recommendation and evaluation
BETA_GRID = tuple(round(0.1 * step, 1) for step in range(11))
ALPHA_GRID = (0.0, 0.025, 0.05, 0.1, 0.2)
DEFAULT_BETA = 0.5
DEFAULT_ALPHA = 0.0
TOP_N = 10
SEED = 42

# Artifact names inside the output directory
ARTIFACTS = {
    "ratings": "ratings.npz",
    "users": "users.csv",
    "im": "im.csv",
    "um": "um.csv",
    "table3": "table3.csv",
    "histograms": "histograms.csv",
    "factors": "factors.pmf",
    "pmf_history": "pmf_history.csv",
    "mln": "mln.bin",
    "mln_history": "mln_history.csv",
    "recommendations_dl": "recommendations_dl.csv",
    "recommendations_heuristic": "recommendations_heuristic.csv",
    "table4": "table4.csv",
    "fig5": "fig5_curves.csv",
    "fig6": "fig6_curves.csv",
    "fig7": "fig7_curves.csv",
    "manifest": "manifest.json",
    "report": "report.md",
    "log": "run.log",
}

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        # Console stays plain
        "default": {
            "format": "{levelname} {asctime} {message}",
            "style": "{",
        },
        "verbose": {
            "format": "{levelname} {asctime} {module} {process:d} {thread:d} {message}",
            "style": "{",
        },
        # Report flushes are markdown already
        "report_md": {
            "format": "\n{message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "default",
        },
        "report_console": {
            "class": "logging.StreamHandler",
            "formatter": "report_md",
            "level": "DEBUG",
        },
    },
    "loggers": {
        "fairrec": {
            "handlers": ["console"],
            "level": "INFO",
            "propagate": False,
        },
        "fairrec.report": {
            "handlers": ["report_console"],
            "level": "DEBUG",
            "propagate": False,
        },
    },
}
