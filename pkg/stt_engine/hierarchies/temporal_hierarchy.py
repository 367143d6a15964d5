from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Dict, Tuple

import pandas as pd

from ..models import ALL_LEVEL, ALL_MEMBER, DATE, DATE_LEVELS, TIME_OF_DAY, TIME_OF_DAY_LEVELS, to_utc
from .base_hierarchy import BaseHierarchy

SECONDS_PER_DAY = 86_400
# Earliest and latest instants a date member can cover
MIN_INSTANT = datetime(1, 1, 1, tzinfo=timezone.utc)
MAX_INSTANT = datetime(9999, 12, 31, 23, 59, 59, tzinfo=timezone.utc)


@dataclass(frozen=True)
class TemporalMembers:
    date: Dict[str, str]
    time_of_day: Dict[str, str]


def quarter_of(month: int) -> int:
    return (month - 1) // 3 + 1


def build_temporal(timestamp: datetime) -> TemporalMembers:
    """Member ids of an instant at every level of both temporal hierarchies."""
    ts = to_utc(timestamp)
    date = {
        "day": ts.strftime("%Y-%m-%d"),
        "month": ts.strftime("%Y-%m"),
        "quarter": f"{ts.year:04d}-Q{quarter_of(ts.month)}",
        "year": f"{ts.year:04d}",
        ALL_LEVEL: ALL_MEMBER,
    }
    time_of_day = {
        "second": ts.strftime("%H:%M:%S"),
        "minute": ts.strftime("%H:%M"),
        "hour": ts.strftime("%H"),
        ALL_LEVEL: ALL_MEMBER,
    }
    return TemporalMembers(date=date, time_of_day=time_of_day)


class DateHierarchy(BaseHierarchy[None]):
    """Day -> Month -> Quarter -> Year -> All with ISO-like member ids."""

    def __init__(self):
        super().__init__(DATE, DATE_LEVELS)

    def parent(self, member: str, level: str) -> str:
        if level == "day":
            return member[:7]
        if level == "month":
            return f"{member[:4]}-Q{quarter_of(int(member[5:7]))}"
        if level == "quarter":
            return member[:4]
        if level == "year":
            return ALL_MEMBER
        raise ValueError(f"{level} has no parent in the {self.name} hierarchy")

    def roll_series(self, members: pd.Series, from_level: str, to_level: str) -> pd.Series:
        if from_level == to_level or to_level == ALL_LEVEL or from_level != "day":
            return super().roll_series(members, from_level, to_level)
        if to_level == "month":
            return members.str.slice(0, 7)
        if to_level == "year":
            return members.str.slice(0, 4)
        months = members.str.slice(5, 7).astype(int)
        return members.str.slice(0, 4) + "-Q" + ((months - 1) // 3 + 1).astype(str)

    def span(self, member: str, level: str) -> Tuple[datetime, datetime]:
        """Half-open instant range [start, end) covered by a date member."""
        if level == ALL_LEVEL:
            return MIN_INSTANT, MAX_INSTANT
        if level == "day":
            start = datetime.strptime(member, "%Y-%m-%d").replace(tzinfo=timezone.utc)
            return start, start + timedelta(days=1)
        year = int(member[:4])
        if level == "year":
            first_month, months = 1, 12
        elif level == "quarter":
            first_month, months = (int(member[-1]) - 1) * 3 + 1, 3
        else:
            first_month, months = int(member[5:7]), 1
        start = datetime(year, first_month, 1, tzinfo=timezone.utc)
        end_month = first_month + months
        end = datetime(year + (end_month - 1) // 12, (end_month - 1) % 12 + 1, 1, tzinfo=timezone.utc)
        return start, end


class TimeOfDayHierarchy(BaseHierarchy[None]):
    """Second -> Minute -> Hour -> All with HH:MM:SS member ids."""

    def __init__(self):
        super().__init__(TIME_OF_DAY, TIME_OF_DAY_LEVELS)

    def parent(self, member: str, level: str) -> str:
        if level == "second":
            return member[:5]
        if level == "minute":
            return member[:2]
        if level == "hour":
            return ALL_MEMBER
        raise ValueError(f"{level} has no parent in the {self.name} hierarchy")

    def roll_series(self, members: pd.Series, from_level: str, to_level: str) -> pd.Series:
        if from_level == to_level or to_level == ALL_LEVEL:
            return super().roll_series(members, from_level, to_level)
        width = {"minute": 5, "hour": 2}[to_level]
        return members.str.slice(0, width)

    def span(self, member: str, level: str) -> Tuple[int, int]:
        """Half-open range of seconds after midnight covered by a time-of-day member."""
        if level == ALL_LEVEL:
            return 0, SECONDS_PER_DAY
        parts = [int(part) for part in member.split(":")]
        start = parts[0] * 3600 + (parts[1] * 60 if len(parts) > 1 else 0) + (parts[2] if len(parts) > 2 else 0)
        width = {"hour": 3600, "minute": 60, "second": 1}[level]
        return start, start + width
