"""
Various shared constants
"""

# clamp applied to posteriors before any logarithm
PROB_EPS = 1e-12

MODES = (
    "initial_only",
    "self_training",
    "positive_only",
    "all_feedback",
    "full_supervision",
)
BEHAVIORS = (
    "low_noise",
    "adversarial",
    "always_positive",
    "always_negative",
    "empirical",
)
SCHEDULER_P_GRID = (0.5, 0.7, 0.8, 0.9)
DEFAULT_LR = {"linear": 0.1, "mlp": 0.05}

RESOLVED_CONFIG_FILE = "resolved-config.json"
SEED_MODEL_FILE = "seed-model.json"
ROUND_LOG_FILE = "round-log.jsonl"
REPORT_FILE = "report.json"
FEEDBACK_LOG_FILE = "feedback-log.csv"
SWEEP_FILE_TEMPLATE = "sweep-{axis}.csv"

SEED_ENV_VAR = "FEDFEED_SEED"

# flat experiment schema: key -> default. None means "derived" or "unset".
DEFAULT_CONFIG = {
    # data source: a CSV path, or the synthetic generator below
    "dataset_path": None,
    "n": 20000,
    "dim": 16,
    "classes": 4,
    "class_sep": 8.0,
    "data_seed": None,
    # splits
    "test_fraction": 0.2,
    "k": 0.01,
    "v": 0.2,
    "stratified": True,
    # clients
    "clients": 15,
    "partition": "uniform_class",
    "dirichlet_beta": 100.0,
    # user behavior
    "behavior": "fixed",
    "gamma": 1.0,
    "delta": 1.0,
    "beta_high": 10.0,
    "beta_low": 1.0,
    "empirical_profiles": None,
    "empirical_gamma": 0.79,
    "empirical_delta": 0.55,
    # training mode and losses
    "mode": "all_feedback",
    "robust": False,
    "scheduler_p": 0.8,
    "schedule_unit": "round",
    "rce_A": -4.0,
    "nce_weight": 1.0,
    "rce_weight": 2.0,
    # model
    "architecture": "linear",
    "hidden": 32,
    "init": "gaussian",
    "init_sigma": 0.01,
    # optimisation
    "lr": None,
    "batch_size": 8,
    "local_epochs": 5,
    "max_rounds": 50,
    "patience": 5,
    "min_delta": 0.001,
    "seed_epochs": 200,
    "seed_patience": 10,
    "seed_tol": 1e-4,
    # federation
    "aggregation": "mean",
    "participation": 1.0,
    "refresh_pseudo_labels": False,
    "workers": 1,
    # reproducibility
    "seed": None,
    "repeats": 5,
    "repeat_seeds": None,
    # outputs
    "output_dir": None,
}
