"""Speech activity detection toolkit for HF single-sideband radio audio."""

__version__ = "0.1.0"
CONFIG_SCHEMA_VERSION = 1
PIPELINE_RATE_HZ = 8000
