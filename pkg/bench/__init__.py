METRICS_SCHEMA = "softreset-metrics-v1"

DEFAULT_DATA_DIR = "./data/mnist"
DEFAULT_OUT_DIR = "./runs"
DEFAULT_LOG_LEVEL = "INFO"
DEFAULT_MAX_WORKERS = 4

# synthetic fallback used when IDX files are absent
SYNTHETIC_CLASSES = 10
SYNTHETIC_FEATURES = 64

METRICS_FILE = "metrics.csv"
SUMMARY_FILE = "summary.json"
SWEEP_FILE = "sweep.csv"


class ConfigError(ValueError):
    pass
