import csv
import io
import json
import logging
import re
from functools import lru_cache
from pathlib import Path
from typing import BinaryIO, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from nltk.tokenize import TweetTokenizer

from .. import config
from ..errors import ConfigurationError, IngestError
from ..hierarchies.spatial_hierarchy import SpatialTaxonomy
from ..models import (
    UNKNOWN_MEMBER,
    GeoPoint,
    GridConfig,
    RecordFormat,
    Rejection,
    RejectReason,
    SttObject,
    StopwordList,
    validate,
)

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0088
RECORD_FIELDS = ("lat", "lon", "text", "ts")

# Normalizer configuration
_tokenizer = TweetTokenizer(preserve_case=False, strip_handles=True)
_WORD = re.compile(r"^[\w'\-]*[^\W\d_][\w'\-]*$")
_VOWEL = re.compile(r"[aeiouy]")
# RFC 3339 date-time; the offset may be omitted (UTC)
_TIMESTAMP = re.compile(r"^\d{4}-\d{2}-\d{2}[Tt ]\d{2}:\d{2}:\d{2}(\.\d+)?([Zz]|[+-]\d{2}:\d{2})?$")
NORMALIZER_EXCEPTIONS = frozenset(
    {
        "anything", "bus", "ceiling", "during", "evening", "everything", "gas", "has", "his",
        "indeed", "is", "king", "morning", "news", "nothing", "series", "shoes", "something",
        "species", "speed", "spring", "string", "thing", "this", "was", "wedding", "yes",
    }
)


@lru_cache(maxsize=8)
def load_stopwords(path: Optional[Union[str, Path]] = None) -> StopwordList:
    """Stopwords from ``path``, STTCUBE_STOPWORDS, or the packaged list, in that order."""
    source = Path(path or config.STOPWORDS_PATH or config.DEFAULT_STOPWORDS)
    try:
        lines = source.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigurationError(f"cannot read stopword file {source}: {e}") from e
    words = frozenset(line.strip().lower() for line in lines if line.strip() and not line.startswith("#"))
    return StopwordList(words=words, source="built-in" if source == config.DEFAULT_STOPWORDS else str(source))


def _has_vowel(stem: str) -> bool:
    return bool(_VOWEL.search(stem))


def _strip_verb_suffix(word: str, suffix: str) -> str:
    stem = word[: -len(suffix)]
    if len(stem) < 3 or not _has_vowel(stem):
        return word
    if len(stem) >= 2 and stem[-1] == stem[-2] and stem[-1] not in "aeiouylsz":
        stem = stem[:-1]
    return stem


def _normalize_once(word: str) -> str:
    if word in NORMALIZER_EXCEPTIONS:
        return word
    if word.endswith("ies") and len(word) > 4:
        candidate = word[:-3] + "y"
    elif word.endswith("sses"):
        candidate = word[:-2]
    elif word.endswith(("xes", "ches", "shes")):
        candidate = word[:-2]
    elif word.endswith("oes") and len(word) > 5:
        candidate = word[:-2]
    elif word.endswith("ied") and len(word) > 4:
        candidate = word[:-3] + "y"
    elif word.endswith("ing"):
        candidate = _strip_verb_suffix(word, "ing")
    elif word.endswith("ed"):
        candidate = _strip_verb_suffix(word, "ed")
    elif word.endswith("s") and len(word) > 3 and not word.endswith(("ss", "us", "is")):
        candidate = word[:-1]
    else:
        return word
    # a rule never leaves a stem ending in punctuation
    return candidate if candidate[-1:].isalpha() else word


def normalize_term(word: str) -> str:
    """Suffix-stripping normalizer applied until nothing changes."""
    while True:
        normalized = _normalize_once(word)
        if normalized == word:
            return word
        word = normalized


def preprocess_text(raw: str, stops: StopwordList) -> List[str]:
    """Tokenize, lowercase, drop stopwords and letterless tokens, normalize the rest."""
    terms: List[str] = []
    for token in _tokenizer.tokenize(raw or ""):
        if token.startswith("#"):
            if len(token) > 1:
                terms.append(token)
            continue
        if not _WORD.match(token) or token in stops.words:
            continue
        term = normalize_term(token)
        if term and term not in stops.words:
            terms.append(term)
    return terms


def _parse_timestamp(value) -> Optional[pd.Timestamp]:
    if not isinstance(value, str) or not _TIMESTAMP.match(value.strip()):
        return None
    try:
        ts = pd.Timestamp(value.strip())
    except (ValueError, TypeError):
        return None
    if pd.isna(ts):
        return None
    return ts


def _record_to_object(
    fields: dict, stops: StopwordList
) -> Union[SttObject, Tuple[RejectReason, str]]:
    missing = [name for name in RECORD_FIELDS if name not in fields or fields[name] is None]
    if missing:
        return RejectReason.MALFORMED, f"missing fields {missing}"
    try:
        lat, lon = float(fields["lat"]), float(fields["lon"])
    except (TypeError, ValueError):
        return RejectReason.BAD_COORDINATE, f"non-numeric coordinate ({fields['lat']!r}, {fields['lon']!r})"
    ts = _parse_timestamp(fields["ts"])
    if ts is None:
        return RejectReason.UNPARSEABLE_TIMESTAMP, f"cannot parse {fields['ts']!r}"
    record = SttObject(
        location=GeoPoint(lat=lat, lon=lon),
        terms=tuple(preprocess_text(str(fields["text"]), stops)),
        timestamp=ts.to_pydatetime(),
    )
    result = validate(record)
    if not result.accepted:
        return result.reason, result.detail
    return record


def _decode(line: Union[bytes, str]) -> Optional[str]:
    if isinstance(line, str):
        return line
    try:
        return line.decode("utf-8")
    except UnicodeDecodeError:
        return None


def _read_lines(stream: Union[bytes, str, BinaryIO, Iterable]) -> List[Optional[str]]:
    """Input lines; a line that is not valid UTF-8 comes back as None."""
    try:
        if hasattr(stream, "read"):
            stream = stream.read()
        if isinstance(stream, (bytes, bytearray, str)):
            raw = stream.splitlines()
        else:
            raw = [line for chunk in stream for line in (chunk.splitlines() or [chunk[:0]])]
    except OSError as e:
        raise IngestError(f"cannot read record stream: {e}") from e
    return [_decode(bytes(line) if isinstance(line, bytearray) else line) for line in raw]


def parse_records(
    stream: Union[bytes, str, BinaryIO, Iterable],
    fmt: RecordFormat = RecordFormat.JSONL,
    stops: Optional[StopwordList] = None,
) -> List[Union[SttObject, Rejection]]:
    """
    Parse a JSON-lines or CSV record stream into STT objects

    Args:
        stream: bytes, text, a binary/text file object or an iterable of lines
        fmt: record format; CSV input starts with a header row naming lat, lon, text, ts
        stops: stopword list used by text preprocessing (packaged list when omitted)

    Returns:
        One SttObject or Rejection per input record, in input order
    """
    stops = stops or load_stopwords()
    lines = _read_lines(stream)
    results: List[Union[SttObject, Rejection]] = []

    records: List[Tuple[int, Optional[dict]]] = []
    if fmt == RecordFormat.CSV:
        if not lines:
            return results
        if lines[0] is None:
            raise IngestError("CSV header is not valid UTF-8")
        header = [column.strip() for column in next(csv.reader([lines[0]]), [])]
        for index, line in enumerate(lines[1:], start=2):
            row = next(csv.reader([line]), []) if line is not None else None
            records.append((index, dict(zip(header, row)) if row is not None and len(row) == len(header) else None))
    else:
        for index, line in enumerate(lines, start=1):
            try:
                fields = json.loads(line) if line is not None else None
            except json.JSONDecodeError:
                fields = None
            records.append((index, fields if isinstance(fields, dict) else None))

    for index, fields in records:
        if fields is None:
            results.append(Rejection(line=index, reason=RejectReason.MALFORMED, detail="not a record"))
            continue
        outcome = _record_to_object(fields, stops)
        if isinstance(outcome, SttObject):
            results.append(outcome)
        else:
            results.append(Rejection(line=index, reason=outcome[0], detail=outcome[1]))

    rejected = sum(isinstance(result, Rejection) for result in results)
    if rejected:
        logger.warning(f"Rejected {rejected} of {len(results)} records")
    logger.info(f"Parsed {len(results) - rejected} records ({fmt.value})")
    return results


def read_records(path: Union[str, Path], stops: Optional[StopwordList] = None) -> List[Union[SttObject, Rejection]]:
    """Parse a record file, picking the format from its suffix."""
    path = Path(path)
    fmt = RecordFormat.CSV if path.suffix.lower() == ".csv" else RecordFormat.JSONL
    try:
        with path.open("rb") as handle:
            return parse_records(handle, fmt, stops)
    except OSError as e:
        raise IngestError(f"cannot open {path}: {e}") from e


def project(lat: np.ndarray, lon: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Equirectangular projection to kilometres."""
    return EARTH_RADIUS_KM * np.radians(lon), EARTH_RADIUS_KM * np.radians(lat)


def grid_indices(lat, lon, cfg: GridConfig, level: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    x, y = project(np.asarray(lat, dtype=float), np.asarray(lon, dtype=float))
    ix = np.floor(x / cfg.base_cell_size_km).astype(np.int64)
    iy = np.floor(y / cfg.base_cell_size_km).astype(np.int64)
    # coarser cells derive from level 0 so parents always contain their children
    scale = cfg.coarsening_factor**level
    return ix // scale, iy // scale


def grid_cell_of(point: GeoPoint, cfg: GridConfig, level: int = 0) -> str:
    if not 0 <= level < cfg.level_count:
        raise ValueError(f"grid level {level} outside [0, {cfg.level_count})")
    ix, iy = grid_indices([point.lat], [point.lon], cfg, level)
    return f"g{level}:{int(ix[0])}:{int(iy[0])}"


def grid_cells(lat: Sequence[float], lon: Sequence[float], cfg: GridConfig, level: int = 0) -> List[str]:
    ix, iy = grid_indices(lat, lon, cfg, level)
    return [f"g{level}:{x}:{y}" for x, y in zip(ix.tolist(), iy.tolist())]


def haversine_km(lat1, lon1, lat2, lon2) -> np.ndarray:
    lat1, lon1, lat2, lon2 = map(np.radians, (lat1, lon1, lat2, lon2))
    a = np.sin((lat2 - lat1) / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def reverse_geocode_many(
    lat: Sequence[float], lon: Sequence[float], geo: SpatialTaxonomy, cutoff_km: Optional[float] = None
) -> List[str]:
    """Nearest city per point within the cutoff radius, else UNKNOWN; ties go to the smaller city id."""
    if not len(geo.city_ids):
        raise ConfigurationError("reverse geocoding needs a spatial taxonomy with at least one city")
    cutoff = config.geocode_cutoff_km() if cutoff_km is None else cutoff_km
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    result: List[str] = []
    chunk = 20_000
    for start in range(0, len(lat), chunk):
        distances = haversine_km(
            lat[start : start + chunk, None], lon[start : start + chunk, None], geo.city_lat[None, :], geo.city_lon[None, :]
        )
        nearest = np.argmin(distances, axis=1)
        within = distances[np.arange(len(nearest)), nearest] <= cutoff
        result.extend(np.where(within, geo.city_ids[nearest], UNKNOWN_MEMBER).tolist())
    unknown = result.count(UNKNOWN_MEMBER)
    if unknown:
        logger.debug(f"{unknown} of {len(result)} points beyond {cutoff} km of every city")
    return result


@lru_cache(maxsize=65536)
def _reverse_geocode_cached(lat: float, lon: float, geo: SpatialTaxonomy, cutoff_km: float) -> str:
    return reverse_geocode_many([lat], [lon], geo, cutoff_km)[0]


def reverse_geocode(point: GeoPoint, geo: SpatialTaxonomy, cutoff_km: Optional[float] = None) -> str:
    cutoff = config.geocode_cutoff_km() if cutoff_km is None else cutoff_km
    return _reverse_geocode_cached(point.lat, point.lon, geo, cutoff)


def to_jsonl(objects: Iterable[dict]) -> bytes:
    """Encode raw records (lat, lon, text, ts) as JSON lines."""
    buffer = io.StringIO()
    for record in objects:
        buffer.write(json.dumps(record, ensure_ascii=False))
        buffer.write("\n")
    return buffer.getvalue().encode("utf-8")
