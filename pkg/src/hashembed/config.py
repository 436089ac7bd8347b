# src/hashembed/config.py
import os

# Environment defaults, read once at import.
DEFAULT_SEED = int(os.getenv("HASHEMB_SEED", "0"))
DATA_ROOT = os.getenv("HASHEMB_DATA_ROOT", "data")
DEBUG = os.getenv("HASHEMB_DEBUG", "").lower() in {"1", "true", "yes", "on"}
LOG_LEVEL = os.getenv("HASHEMB_LOG_LEVEL", "INFO").upper()
