import csv
import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, Generic, List, Optional, Tuple, TypeVar, Union

import pandas as pd

from ..errors import TaxonomyError
from ..models import ALL_LEVEL, ALL_MEMBER

# Configure logging
logger = logging.getLogger(__name__)

# Generic type for the taxonomy a hierarchy is built on
T = TypeVar("T")


class BaseHierarchy(ABC, Generic[T]):
    """Base class for level hierarchies whose step functions map a member to one parent."""

    def __init__(self, name: str, levels: Tuple[str, ...], source: T = None):
        self.name = name
        self.levels = tuple(levels)
        self.source = source

    @abstractmethod
    def parent(self, member: str, level: str) -> str:
        """Parent of ``member`` (at ``level``) one level up. Must be implemented by subclasses."""
        pass

    def surface_area(self, member: str, level: str) -> Optional[float]:
        """Level attribute used by density; only spatial hierarchies define it."""
        return None

    def level_index(self, level: str) -> int:
        try:
            return self.levels.index(level)
        except ValueError:
            raise ValueError(f"{level!r} is not a level of the {self.name} hierarchy") from None

    def roll(self, member: str, from_level: str, to_level: str) -> str:
        """Apply step functions from ``from_level`` up to ``to_level``."""
        start, end = self.level_index(from_level), self.level_index(to_level)
        if end < start:
            raise ValueError(f"cannot roll {self.name} down from {from_level} to {to_level}")
        if to_level == ALL_LEVEL:
            return ALL_MEMBER
        for index in range(start, end):
            member = self.parent(member, self.levels[index])
        return member

    def roll_series(self, members: pd.Series, from_level: str, to_level: str) -> pd.Series:
        """Vectorised roll: every distinct member is rolled once and mapped back."""
        if from_level == to_level:
            return members
        if to_level == ALL_LEVEL:
            return pd.Series(ALL_MEMBER, index=members.index, dtype=object)
        mapping: Dict[str, str] = {
            member: self.roll(member, from_level, to_level) for member in pd.unique(members)
        }
        return members.map(mapping)

    def chain(self, member: str, from_level: str) -> List[str]:
        """The member followed by its ancestors up to All."""
        start = self.level_index(from_level)
        result = [member]
        for index in range(start, len(self.levels) - 1):
            if self.levels[index + 1] == ALL_LEVEL:
                member = ALL_MEMBER
            else:
                member = self.parent(member, self.levels[index])
            result.append(member)
        return result


def float_or_none(value: str) -> Optional[float]:
    value = (value or "").strip()
    return float(value) if value else None


def read_tsv(path: Union[str, Path], columns: List[str], required: Optional[int] = None) -> pd.DataFrame:
    """Tab-separated file as strings; the first row is dropped when it repeats the column names."""
    try:
        frame = pd.read_csv(path, sep="\t", header=None, dtype=str, keep_default_na=False, quoting=csv.QUOTE_NONE)
    except pd.errors.EmptyDataError:
        return pd.DataFrame({column: pd.Series(dtype=str) for column in columns})
    except (OSError, pd.errors.ParserError) as e:
        raise TaxonomyError(f"cannot read taxonomy {path}: {e}") from e
    required = len(columns) if required is None else required
    if not required <= frame.shape[1] <= len(columns):
        raise TaxonomyError(f"{path}: expected {required}-{len(columns)} tab-separated columns, found {frame.shape[1]}")
    frame.columns = columns[: frame.shape[1]]
    for column in columns[frame.shape[1] :]:
        frame[column] = ""
    if len(frame) and frame.iloc[0, 0].strip().lower() == columns[0]:
        frame = frame.iloc[1:]
    return frame.reset_index(drop=True)
