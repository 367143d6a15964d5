import hashlib
import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple, Union

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import config

# Level and member constants
ALL_LEVEL = "all"
ALL_MEMBER = "All"
UNKNOWN_MEMBER = "UNKNOWN"
ALL_K = "ALL"
EARTH_SURFACE_KM2 = 510_072_000.0

DATE_LEVELS = ("day", "month", "quarter", "year", ALL_LEVEL)
TIME_OF_DAY_LEVELS = ("second", "minute", "hour", ALL_LEVEL)
SEMANTIC_LEVELS = ("location", "city", "region", "country", ALL_LEVEL)
TEXTUAL_LEVELS = ("term", "theme", "topic", "concept", ALL_LEVEL)

# Hierarchy names, in lattice coordinate order
DATE = "date"
TIME_OF_DAY = "time_of_day"
SPATIAL = "spatial"
TEXTUAL = "textual"
HIERARCHY_ORDER = (DATE, TIME_OF_DAY, SPATIAL, TEXTUAL)

# Columns of the columnar cuboid representation
GROUP_COLUMNS = (DATE, TIME_OF_DAY, SPATIAL)
KEYWORD = "keyword"
FREQ = "freq"
FACT_COUNT = "fact_count"
SURFACE_AREA = "surface_area"
BOUNDARY = "boundary"


def grid_levels(level_count: int) -> Tuple[str, ...]:
    return tuple(f"cell{i}" for i in range(level_count)) + (ALL_LEVEL,)


class SpatialScheme(str, Enum):
    GRID = "grid"
    SEMANTIC = "semantic"


class TextualScheme(str, Enum):
    REPLICATION = "replication"
    MAJORITY = "majority"
    CUSTOM = "custom"


class Cardinality(str, Enum):
    ONE_ONE = "1-1"
    ONE_N = "1-n"
    N_ONE = "n-1"
    N_N = "n-n"


class Strategy(str, Enum):
    NM = "nm"
    PEM = "pem"
    PAM = "pam"
    FM = "fm"
    GREEDY = "greedy"


class Measure(str, Enum):
    FACT_COUNT = "fact_count"
    KEYWORD_FREQUENCY = "keyword_frequency"
    DENSITY = "density"
    VOLATILITY = "volatility"
    TOPK_DENSE = "topk_dense"
    TOPK_VOLATILE = "topk_volatile"
    TOPK_FREQUENT = "topk_frequent"

    @property
    def is_topk(self) -> bool:
        return self in (Measure.TOPK_DENSE, Measure.TOPK_VOLATILE, Measure.TOPK_FREQUENT)

    @property
    def is_volatile(self) -> bool:
        return self in (Measure.VOLATILITY, Measure.TOPK_VOLATILE)


class RejectReason(str, Enum):
    BAD_COORDINATE = "bad_coordinate"
    EMPTY_TEXT = "empty_text"
    UNPARSEABLE_TIMESTAMP = "unparseable_timestamp"
    MALFORMED = "malformed_record"


class RecordFormat(str, Enum):
    JSONL = "jsonl"
    CSV = "csv"


# Fact Models
class GeoPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    lat: float
    lon: float

    def member_id(self) -> str:
        """Location member id: the coordinate pair at micro-degree precision."""
        return f"{self.lat:.6f},{self.lon:.6f}"

    @classmethod
    def from_member_id(cls, member_id: str) -> "GeoPoint":
        lat, lon = member_id.split(",")
        return cls(lat=float(lat), lon=float(lon))


def to_utc(value: datetime) -> datetime:
    """Attach UTC to naive instants, convert aware ones, and drop sub-second parts."""
    if value.tzinfo is None:
        value = value.replace(tzinfo=timezone.utc)
    return value.astimezone(timezone.utc).replace(microsecond=0)


class SttObject(BaseModel):
    model_config = ConfigDict(frozen=True)

    location: GeoPoint
    terms: Tuple[str, ...]
    timestamp: datetime

    @field_validator("timestamp")
    @classmethod
    def _utc(cls, value: datetime) -> datetime:
        return to_utc(value)


class ValidationResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    accepted: bool
    reason: Optional[RejectReason] = None
    detail: str = ""

    @classmethod
    def accept(cls) -> "ValidationResult":
        return cls(accepted=True)

    @classmethod
    def reject(cls, reason: RejectReason, detail: str = "") -> "ValidationResult":
        return cls(accepted=False, reason=reason, detail=detail)


class Rejection(BaseModel):
    model_config = ConfigDict(frozen=True)

    line: int
    reason: RejectReason
    detail: str = ""


def validate(record: SttObject) -> ValidationResult:
    """Check a parsed record against the fact invariants; rejection is a value, not an error."""
    lat, lon = record.location.lat, record.location.lon
    if not (math.isfinite(lat) and math.isfinite(lon)) or not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
        return ValidationResult.reject(RejectReason.BAD_COORDINATE, f"({lat}, {lon}) out of range")
    if not record.terms or any(not term for term in record.terms):
        return ValidationResult.reject(RejectReason.EMPTY_TEXT, "no terms after preprocessing")
    return ValidationResult.accept()


class KeywordSet(BaseModel):
    """Which terms count as keywords: every term, or only hashtags."""

    model_config = ConfigDict(frozen=True)

    hashtags_only: bool = False

    def __call__(self, term: str) -> bool:
        return term.startswith("#") if self.hashtags_only else True

    @property
    def is_default(self) -> bool:
        return not self.hashtags_only


class StopwordList(BaseModel):
    model_config = ConfigDict(frozen=True)

    words: frozenset
    source: str = "built-in"

    @field_validator("words")
    @classmethod
    def _lowercase(cls, words: frozenset) -> frozenset:
        for word in words:
            if word != word.lower():
                raise ValueError(f"stopword {word!r} is not lowercase")
        return frozenset(words)


class GridConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    base_cell_size_km: float = Field(1.0, gt=0)
    coarsening_factor: int = Field(3, ge=2)
    level_count: int = Field(4, ge=2)

    def cell_size_km(self, level: int) -> float:
        return self.base_cell_size_km * self.coarsening_factor**level

    def cell_area_km2(self, level: int) -> float:
        return self.cell_size_km(level) ** 2

    @property
    def levels(self) -> Tuple[str, ...]:
        return grid_levels(self.level_count)


@dataclass(frozen=True, slots=True)
class FactRow:
    """One base fact linked to the lowest level members of every hierarchy."""

    day: str
    second: str
    location: str
    cell0: str
    city: str
    terms: Tuple[str, ...]
    theme: Optional[str] = None
    epoch: int = 0


# Schema Models
class HierarchyStep(BaseModel):
    model_config = ConfigDict(frozen=True)

    child: str
    parent: str
    cardinality: Cardinality
    fact_linked: bool = False


class Hierarchy(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    levels: Tuple[str, ...]
    steps: Tuple[HierarchyStep, ...]

    @model_validator(mode="after")
    def _check_levels(self) -> "Hierarchy":
        if len(self.levels) < 2:
            raise ValueError(f"hierarchy {self.name} needs at least two levels")
        if self.levels[-1] != ALL_LEVEL:
            raise ValueError(f"hierarchy {self.name} must end at the All level")
        if len(self.steps) != len(self.levels) - 1:
            raise ValueError(f"hierarchy {self.name} needs one step per adjacent level pair")
        for index, step in enumerate(self.steps):
            if (step.child, step.parent) != (self.levels[index], self.levels[index + 1]):
                raise ValueError(f"step {step.child}->{step.parent} does not join adjacent levels of {self.name}")
        return self

    def level_index(self, level: str) -> int:
        return self.levels.index(level)


class Dimension(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    kind: Literal["temporal", "spatial", "textual", "generic"]
    hierarchies: Tuple[Hierarchy, ...]


class CubeSchema(BaseModel):
    model_config = ConfigDict(frozen=True)

    dimensions: Tuple[Dimension, ...]
    spatial_scheme: SpatialScheme = SpatialScheme.SEMANTIC
    textual_scheme: TextualScheme = TextualScheme.REPLICATION
    grid: GridConfig = GridConfig()

    def hierarchies(self) -> List[Hierarchy]:
        return [hierarchy for dimension in self.dimensions for hierarchy in dimension.hierarchies]

    def hierarchy(self, name: str) -> Hierarchy:
        for hierarchy in self.hierarchies():
            if hierarchy.name == name:
                return hierarchy
        raise KeyError(name)

    def level_counts(self) -> Dict[str, int]:
        return {hierarchy.name: len(hierarchy.levels) for hierarchy in self.hierarchies()}


def _chain(name: str, levels: Tuple[str, ...], cardinalities: List[Cardinality], fact_linked: Tuple[int, ...] = ()) -> Hierarchy:
    steps = tuple(
        HierarchyStep(child=levels[i], parent=levels[i + 1], cardinality=cardinalities[i], fact_linked=i in fact_linked)
        for i in range(len(levels) - 1)
    )
    return Hierarchy(name=name, levels=levels, steps=steps)


def build_schema(
    spatial_scheme: SpatialScheme = SpatialScheme.SEMANTIC,
    textual_scheme: TextualScheme = TextualScheme.REPLICATION,
    grid: Optional[GridConfig] = None,
) -> CubeSchema:
    """Time/Location/Text schema with the level structure of the chosen schemes."""
    grid = grid or GridConfig()
    n_one = Cardinality.N_ONE

    date = _chain(DATE, DATE_LEVELS, [n_one] * 4)
    time_of_day = _chain(TIME_OF_DAY, TIME_OF_DAY_LEVELS, [n_one] * 3)
    if spatial_scheme == SpatialScheme.SEMANTIC:
        spatial = _chain(SPATIAL, SEMANTIC_LEVELS, [n_one] * 4)
    else:
        spatial = _chain(SPATIAL, grid.levels, [n_one] * grid.level_count)
    if textual_scheme == TextualScheme.REPLICATION:
        textual = _chain(TEXTUAL, TEXTUAL_LEVELS, [Cardinality.N_N, n_one, n_one, n_one])
    else:
        # the fact links straight to its single Theme
        textual = _chain(TEXTUAL, TEXTUAL_LEVELS, [n_one] * 4, fact_linked=(0,))

    return CubeSchema(
        dimensions=(
            Dimension(name="Time", kind="temporal", hierarchies=(date, time_of_day)),
            Dimension(name="Location", kind="spatial", hierarchies=(spatial,)),
            Dimension(name="Text", kind="textual", hierarchies=(textual,)),
        ),
        spatial_scheme=spatial_scheme,
        textual_scheme=textual_scheme,
        grid=grid,
    )


class Member(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    level: str
    name: str
    parent: Optional[str] = None
    surface_area: Optional[float] = Field(None, ge=0)


class MemberStore:
    """Deduplicated members per hierarchy and level, kept in first-seen order."""

    def __init__(self):
        self._members: Dict[str, Dict[str, Dict[str, Member]]] = {}

    def add(self, hierarchy: str, member: Member) -> bool:
        level = self._members.setdefault(hierarchy, {}).setdefault(member.level, {})
        if member.id in level:
            return False
        level[member.id] = member
        return True

    def contains(self, hierarchy: str, level: str, member_id: str) -> bool:
        return member_id in self._members.get(hierarchy, {}).get(level, {})

    def get(self, hierarchy: str, level: str, member_id: str) -> Optional[Member]:
        return self._members.get(hierarchy, {}).get(level, {}).get(member_id)

    def ids(self, hierarchy: str, level: str) -> List[str]:
        return list(self._members.get(hierarchy, {}).get(level, {}))

    def hierarchies(self) -> List[str]:
        return list(self._members)

    def members(self, hierarchy: str) -> List[Member]:
        return [member for level in self._members.get(hierarchy, {}).values() for member in level.values()]

    def count(self, hierarchy: str, level: str) -> int:
        return len(self._members.get(hierarchy, {}).get(level, {}))

    def to_frame(self, hierarchy: str) -> pd.DataFrame:
        rows = [member.model_dump() for member in self.members(hierarchy)]
        return pd.DataFrame(rows, columns=["level", "id", "name", "parent", "surface_area"])

    @classmethod
    def from_frames(cls, frames: Dict[str, pd.DataFrame]) -> "MemberStore":
        store = cls()
        for hierarchy, frame in frames.items():
            for row in frame.itertuples(index=False):
                store.add(
                    hierarchy,
                    Member(
                        id=str(row.id),
                        level=str(row.level),
                        name=str(row.name),
                        parent=None if pd.isna(row.parent) else str(row.parent),
                        surface_area=None if pd.isna(row.surface_area) else float(row.surface_area),
                    ),
                )
        return store

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MemberStore):
            return NotImplemented
        return self._members == other._members


# Cube Models
@dataclass
class MeasureCell:
    fact_count: int
    keyword_freqs: Dict[str, int]
    surface_area: float


@dataclass(frozen=True, order=True)
class CuboidCoord:
    """One level per hierarchy, in lattice order; identity of a lattice node."""

    levels: Tuple[Tuple[str, str], ...]

    @classmethod
    def of(cls, **levels: str) -> "CuboidCoord":
        ordered = [name for name in HIERARCHY_ORDER if name in levels]
        ordered += [name for name in levels if name not in HIERARCHY_ORDER]
        return cls(tuple((name, levels[name]) for name in ordered))

    def __getitem__(self, hierarchy: str) -> str:
        for name, level in self.levels:
            if name == hierarchy:
                return level
        raise KeyError(hierarchy)

    def get(self, hierarchy: str, default: str = ALL_LEVEL) -> str:
        try:
            return self[hierarchy]
        except KeyError:
            return default

    def replace(self, hierarchy: str, level: str) -> "CuboidCoord":
        self[hierarchy]
        return CuboidCoord(tuple((name, level if name == hierarchy else current) for name, current in self.levels))

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(name for name, _ in self.levels)

    @property
    def label(self) -> str:
        return "|".join(level for _, level in self.levels)

    @property
    def file_stem(self) -> str:
        return "-".join(level for _, level in self.levels)

    def __str__(self) -> str:
        return self.label


@dataclass(eq=False)
class Cuboid:
    """Aggregated rows of one lattice node in columnar form.

    ``groups`` holds one row per (date, time_of_day, spatial) group with its fact
    count, surface area and, for truncated cuboids, the boundary frequency of
    the first keyword that was not stored. ``cells`` holds one row per
    (group, keyword) with its frequency; its length is the cuboid's row count.
    """

    coord: CuboidCoord
    groups: pd.DataFrame
    cells: pd.DataFrame
    top_k: Optional[int] = None

    @property
    def truncated(self) -> bool:
        return self.top_k is not None

    @property
    def row_count(self) -> int:
        return len(self.cells)

    def measure_cells(self) -> Dict[Tuple[str, ...], MeasureCell]:
        result = {}
        for row in self.groups.itertuples(index=False):
            key = tuple(getattr(row, column) for column in GROUP_COLUMNS)
            result[key] = MeasureCell(int(getattr(row, FACT_COUNT)), {}, float(getattr(row, SURFACE_AREA)))
        for row in self.cells.itertuples(index=False):
            key = tuple(getattr(row, column) for column in GROUP_COLUMNS)
            result[key].keyword_freqs[getattr(row, KEYWORD)] = int(getattr(row, FREQ))
        return result

    def same_contents(self, other: "Cuboid") -> bool:
        return (
            self.coord == other.coord
            and self.top_k == other.top_k
            and self.groups.reset_index(drop=True).equals(other.groups.reset_index(drop=True))
            and self.cells.reset_index(drop=True).equals(other.cells.reset_index(drop=True))
        )


# Query Models
class QuerySpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    measure: Measure
    spatial_level: str = ALL_LEVEL
    members: Optional[Tuple[str, ...]] = None
    group_by_level: Optional[str] = None
    textual_level: str = "term"
    keywords: Optional[Tuple[str, ...]] = None
    start: Optional[datetime] = None
    end: Optional[datetime] = None
    intervals: int = Field(1, ge=1)
    k: Union[int, Literal["ALL"]] = 10
    group_by_time: bool = False
    group_by_text: bool = False
    spatial_scheme: Optional[SpatialScheme] = None
    textual_scheme: Optional[TextualScheme] = None
    keyword_set: KeywordSet = KeywordSet()

    @field_validator("start", "end")
    @classmethod
    def _utc(cls, value: Optional[datetime]) -> Optional[datetime]:
        return None if value is None else to_utc(value)

    @field_validator("k")
    @classmethod
    def _positive_k(cls, value):
        if value != ALL_K and value < 1:
            raise ValueError("k must be a positive integer or ALL")
        return value

    @model_validator(mode="after")
    def _check_range(self) -> "QuerySpec":
        if (self.start is None) != (self.end is None):
            raise ValueError("temporal range needs both start and end")
        if self.start is not None:
            if self.start >= self.end:
                raise ValueError("temporal range must be non-empty")
            span = int((self.end - self.start).total_seconds())
            if span % self.intervals:
                raise ValueError(f"a {span}s range does not split into {self.intervals} equal intervals")
        elif self.measure.is_volatile:
            raise ValueError("volatility queries need a temporal range")
        return self

    @property
    def top_k(self) -> Optional[int]:
        """k as an integer, None for ALL."""
        return None if self.k == ALL_K else int(self.k)

    def interval_bounds(self) -> List[datetime]:
        if self.start is None:
            return []
        step = (self.end - self.start) / self.intervals
        return [self.start + step * i for i in range(self.intervals + 1)]


class RankedKeyword(BaseModel):
    keyword: str
    score: float
    frequency: float
    guaranteed: bool = True


class ApproxTopK(BaseModel):
    """A ranking for one (merged) area with its error bound and guaranteed prefix."""

    area: str
    members: Tuple[str, ...] = ()
    surface_area: float
    ranking: List[RankedKeyword]
    epsilon: float = 0.0
    delta: int = 0
    threshold_delta: int = 0
    intervals: int = 1
    approximate: bool = False


class ResultRow(BaseModel):
    area: str
    keyword: Optional[str] = None
    interval: Optional[int] = None
    value: float
    frequency: Optional[int] = None


class QueryPlan(BaseModel):
    target: CuboidCoord
    source: CuboidCoord
    source_rows: int
    approximate: bool = False
    source_top_k: Optional[int] = None
    residual_group_by: Dict[str, str] = {}
    residual_filters: List[str] = []
    top_k: Optional[Union[int, Literal["ALL"]]] = None
    from_base: bool = False
    guarantee: str = "exact"


class QueryResult(BaseModel):
    plan: QueryPlan
    rows: List[ResultRow] = []
    rankings: List[ApproxTopK] = []

    def result_hash(self) -> str:
        """Digest of the answer (plan excluded), used for cross-strategy exactness checks."""
        payload = {
            "rows": [row.model_dump() for row in self.rows],
            "rankings": [
                [(item.keyword, repr(item.score), repr(item.frequency)) for item in ranking.ranking]
                for ranking in self.rankings
            ],
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True, default=repr).encode("utf-8")).hexdigest()


# Configuration Models
class MaterializationConfig(BaseModel):
    strategy: Strategy = Strategy.PEM
    budget_rows: Optional[int] = Field(None, ge=0)
    budget_cuboids: Optional[int] = Field(None, ge=0)
    budget_bytes: Optional[int] = Field(None, ge=0)
    budget_ratio: float = Field(config.BUDGET_RATIO, ge=0)
    top_k: Optional[int] = Field(None, ge=1)
    strict_budget: bool = False

    @model_validator(mode="after")
    def _check_strategy(self) -> "MaterializationConfig":
        given = [b for b in (self.budget_rows, self.budget_cuboids, self.budget_bytes) if b is not None]
        if len(given) > 1:
            raise ValueError("give the budget in one unit only")
        if self.strategy == Strategy.PEM and self.top_k is not None:
            raise ValueError("PEM stores full keyword distributions; top_k must be unset")
        if self.strategy == Strategy.PAM and self.top_k is None:
            self.top_k = config.TOP_K
        if self.strategy in (Strategy.NM, Strategy.FM):
            self.top_k = None
        return self


class CubeConfig(BaseModel):
    spatial_scheme: SpatialScheme = SpatialScheme.SEMANTIC
    textual_scheme: TextualScheme = TextualScheme.REPLICATION
    grid: GridConfig = GridConfig()
    materialization: MaterializationConfig = MaterializationConfig(strategy=Strategy.NM)
    geocode_cutoff_km: Optional[float] = Field(None, gt=0)
    size_estimator: Literal["exact", "sample"] = "exact"
    sample_fraction: float = Field(0.1, gt=0, le=1)

    def schema_(self) -> CubeSchema:
        return build_schema(self.spatial_scheme, self.textual_scheme, self.grid)


class BenchConfig(BaseModel):
    data_path: Optional[str] = None
    objects: int = Field(100_000, ge=1)
    seed: int = 7
    strategies: List[Strategy] = [Strategy.NM, Strategy.PEM, Strategy.PAM, Strategy.FM]
    repetitions: int = Field(10, ge=1)
    k: int = Field(10, ge=1)
    top_k: int = Field(config.TOP_K, ge=1)
    # synthetic records: one week over a small vocabulary
    data_days: int = Field(7, ge=1)
    filler_words: int = Field(40, ge=0)
    # hard cap; extra rows stay within budget_ratio of the base rows
    budget_ratio: float = Field(0.2, ge=0)
    strict_budget: bool = True
    k_sweep: List[int] = [10, 20, 50, 100, 200, 500, 1000]
    k_samples: int = Field(100, ge=1)
    span_days: int = Field(7, ge=1)
    benefit_curve_points: int = Field(10, ge=1)
    microbench_sizes: List[int] = []
    spatial_scheme: SpatialScheme = SpatialScheme.SEMANTIC
    textual_scheme: TextualScheme = TextualScheme.REPLICATION

    @field_validator("strategies")
    @classmethod
    def _non_empty(cls, strategies: List[Strategy]) -> List[Strategy]:
        if not strategies:
            raise ValueError("at least one strategy is required")
        return strategies


# Bench Report Models
class LatencyRow(BaseModel):
    query_id: str
    strategy: Strategy
    n: int
    mean_ms: float
    stddev_ms: float
    median_ms: float
    approximate: bool = False
    result_hash: str = ""


class StorageRow(BaseModel):
    strategy: Strategy
    cuboids: int
    base_rows: int
    extra_rows: int
    total_rows: int


class AccuracyRow(BaseModel):
    query_id: str
    k: int
    accuracy: float = Field(ge=0, le=1)
    min_delta: int
    within_delta: bool
    boundary: bool = False


class BenefitPoint(BaseModel):
    cuboids: int
    coord: str
    benefit: float
    cumulative_benefit: float
    rows: int


class KSweepRow(BaseModel):
    top_k: int
    queries: int
    approximate_fraction: float
    min_ms: float
    p25_ms: float
    median_ms: float
    p75_ms: float
    max_ms: float
    storage_rows: int


class LinearFit(BaseModel):
    rows: List[int]
    latencies_ms: List[float]
    slope: float
    intercept: float
    r_squared: float
    degenerate: bool = False


class BenchReport(BaseModel):
    latency: List[LatencyRow] = []
    storage: List[StorageRow] = []
    accuracy: List[AccuracyRow] = []
    benefit_curve: List[BenefitPoint] = []
    k_sweep: List[KSweepRow] = []
    linearity: Optional[LinearFit] = None


# API Request Models
class RecordIn(BaseModel):
    lat: float
    lon: float
    text: str
    ts: str


class BuildCubeRequest(BaseModel):
    name: str
    records: Optional[List[RecordIn]] = None
    data_path: Optional[str] = None
    geo_taxonomy_path: Optional[str] = None
    text_taxonomy_path: Optional[str] = None
    importance_path: Optional[str] = None
    config: CubeConfig = CubeConfig()
    persist: bool = False


class UpdateCubeRequest(BaseModel):
    records: Optional[List[RecordIn]] = None
    data_path: Optional[str] = None
    persist: bool = False


class MaterializeRequest(BaseModel):
    materialization: MaterializationConfig
    persist: bool = False
