"""Process-wide settings read from the environment (and an optional .env file)."""

import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# Configuration constants
GEOCODE_CUTOFF_ENV = "STTCUBE_GEOCODE_CUTOFF_KM"
DEFAULT_GEOCODE_CUTOFF_KM = 50.0

TOP_K = int(os.getenv("STTCUBE_TOP_K", "31"))
BUDGET_RATIO = float(os.getenv("STTCUBE_BUDGET_RATIO", "0.15"))
LOG_LEVEL = os.getenv("STTCUBE_LOG_LEVEL", "INFO")
DATA_DIR = os.getenv("STTCUBE_DATA_DIR", "cubes")
STOPWORDS_PATH = os.getenv("STTCUBE_STOPWORDS")

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

PACKAGE_DATA_DIR = Path(__file__).resolve().parent / "data"
DEFAULT_GEO_TAXONOMY = PACKAGE_DATA_DIR / "geo_taxonomy.tsv"
DEFAULT_TEXT_TAXONOMY = PACKAGE_DATA_DIR / "text_taxonomy.tsv"
DEFAULT_IMPORTANCE = PACKAGE_DATA_DIR / "importance.tsv"
DEFAULT_STOPWORDS = PACKAGE_DATA_DIR / "stopwords.txt"


def geocode_cutoff_km() -> float:
    """Reverse-geocoding cutoff radius; re-read on every call so overrides apply without re-import."""
    return float(os.getenv(GEOCODE_CUTOFF_ENV, str(DEFAULT_GEOCODE_CUTOFF_KM)))
