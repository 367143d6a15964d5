import logging
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, Field

from .cube_service import Taxonomies, load_taxonomies
from .ingest_service import to_jsonl

logger = logging.getLogger(__name__)

KM_PER_DEGREE = 111.32
CONSONANTS = "bdfgklmnprtvz"
VOWELS = "aeiou"


class SynthConfig(BaseModel):
    """Shape of a synthetic tweet-like dataset."""

    objects: int = Field(100_000, ge=0)
    seed: int = 7
    start: datetime = datetime(2019, 10, 1, tzinfo=timezone.utc)
    span_days: int = Field(31, ge=1)
    filler_words: int = Field(2_000, ge=0)
    zipf_exponent: float = Field(1.1, gt=0)
    mean_terms: float = Field(3.0, ge=0)
    hashtag_fraction: float = Field(0.1, ge=0, le=1)
    far_fraction: float = Field(0.01, ge=0, le=1)
    jitter_fraction: float = Field(0.3, gt=0)


def filler_vocabulary(count: int, rng: np.random.Generator) -> List[str]:
    """Distinct three-syllable consonant-vowel words; they end in a vowel so normalization keeps them."""
    words: Dict[str, None] = {}
    limit = (len(CONSONANTS) * len(VOWELS)) ** 3
    count = min(count, limit)
    while len(words) < count:
        letters = rng.integers(0, [len(CONSONANTS), len(VOWELS)] * 3, size=(count, 6))
        for row in letters:
            word = "".join(CONSONANTS[c] + VOWELS[v] for c, v in zip(row[0::2], row[1::2]))
            words.setdefault(word)
            if len(words) == count:
                break
    return list(words)


def vocabulary(taxonomies: Taxonomies, filler: int, rng: np.random.Generator) -> List[str]:
    """Taxonomy terms first (the most frequent ranks), then filler words."""
    text = taxonomies.text
    mapping = text.level_parents.get("term", {}) if text.level_parents else text.parents
    terms = sorted(term for term in mapping if not term.startswith("#"))
    extra = [word for word in filler_vocabulary(filler, rng) if word not in mapping]
    return terms + extra


def zipf_probabilities(size: int, exponent: float) -> np.ndarray:
    weights = 1.0 / np.arange(1, size + 1, dtype=float) ** exponent
    return weights / weights.sum()


def generate_records(cfg: SynthConfig, taxonomies: Optional[Taxonomies] = None) -> List[dict]:
    """
    Generate raw records (lat, lon, text, ts) around the cities of the spatial taxonomy

    Args:
        cfg: dataset shape and seed
        taxonomies: taxonomies providing cities and taxonomy terms (packaged defaults when omitted)

    Returns:
        Records in the JSON-lines ingest format; the same seed gives the same records
    """
    taxonomies = taxonomies or load_taxonomies()
    rng = np.random.default_rng(cfg.seed)
    geo = taxonomies.geo
    n = cfg.objects

    city_index = rng.integers(0, len(geo.city_ids), size=n)
    radius_deg = np.sqrt([geo.area_of(city) for city in geo.city_ids]) * cfg.jitter_fraction / KM_PER_DEGREE
    lat = geo.city_lat[city_index] + rng.normal(0.0, 1.0, size=n) * radius_deg[city_index]
    lon = geo.city_lon[city_index] + rng.normal(0.0, 1.0, size=n) * radius_deg[city_index]
    far = rng.random(size=n) < cfg.far_fraction
    lat[far] = rng.uniform(-60.0, -40.0, size=int(far.sum()))
    lon[far] = rng.uniform(-150.0, -100.0, size=int(far.sum()))

    words = vocabulary(taxonomies, cfg.filler_words, rng)
    probabilities = zipf_probabilities(len(words), cfg.zipf_exponent)
    counts = 1 + rng.poisson(cfg.mean_terms, size=n)
    picks = rng.choice(len(words), size=int(counts.sum()), p=probabilities)
    hashtags = rng.random(size=len(picks)) < cfg.hashtag_fraction
    seconds = rng.integers(0, cfg.span_days * 86_400, size=n)

    records: List[dict] = []
    offset = 0
    for i in range(n):
        tokens = [("#" if hashtags[j] else "") + words[picks[j]] for j in range(offset, offset + counts[i])]
        offset += counts[i]
        ts = cfg.start + timedelta(seconds=int(seconds[i]))
        records.append(
            {
                "lat": round(float(lat[i]), 6),
                "lon": round(float(lon[i]), 6),
                "text": " ".join(tokens),
                "ts": ts.strftime("%Y-%m-%dT%H:%M:%SZ"),
            }
        )
    logger.info(f"Generated {n} synthetic records ({int(far.sum())} far from any city, {len(words)} words)")
    return records


def write_records(cfg: SynthConfig, out: Union[str, Path], taxonomies: Optional[Taxonomies] = None) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(to_jsonl(generate_records(cfg, taxonomies)))
    logger.info(f"Wrote synthetic records to {out}")
    return out
