"""
Keyword measures over areas and time intervals, plus the bounded-error merge
of truncated per-group rankings.

The exact helpers take plain frequencies. The merge takes one truncated list
per (group, interval), each with the frequency of the first keyword it did
not store, and returns a ranking whose leading ``delta`` positions are
guaranteed to match the exact ranking.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..models import FREQ, KEYWORD, ApproxTopK, Measure, RankedKeyword

logger = logging.getLogger(__name__)

LIST_ID = "list_id"
INTERVAL = "interval"


def density(freq: float, surface_area: float) -> float:
    """Frequency per unit of surface area."""
    if surface_area <= 0:
        raise ValueError(f"surface area must be positive, got {surface_area}")
    return freq / surface_area


def volatility(densities: Sequence[float]) -> float:
    """Mean absolute change of per-interval density; the interval before the first counts as zero."""
    if not len(densities):
        return 0.0
    values = np.asarray(densities, dtype=float)
    return float(np.abs(np.diff(values, prepend=0.0)).sum() / len(values))


def volatility_matrix(freqs: np.ndarray, surface_area: float) -> np.ndarray:
    """Row-wise volatility of a (keywords x intervals) frequency matrix."""
    intervals = freqs.shape[1]
    if not intervals:
        return np.zeros(freqs.shape[0])
    changes = np.abs(np.diff(freqs, axis=1, prepend=0.0)).sum(axis=1)
    return changes / (surface_area * intervals)


def rank(scores: Mapping[str, float], k: Optional[int] = None) -> List[Tuple[str, float]]:
    """Keywords by score descending, ties by keyword; the first k of them (all when k is None)."""
    ordered = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return ordered if k is None else ordered[:k]


def score_of(measure: Measure, freqs: np.ndarray, surface_area: float) -> np.ndarray:
    """Ranking score of each keyword row of a (keywords x intervals) frequency matrix."""
    if measure == Measure.TOPK_VOLATILE:
        return volatility_matrix(freqs, surface_area)
    totals = freqs.sum(axis=1)
    if measure == Measure.TOPK_DENSE:
        return totals / surface_area
    return totals.astype(float)


def exact_ranking(
    area: str,
    members: Sequence[str],
    surface_area: float,
    keywords: Sequence[str],
    freqs: np.ndarray,
    k: Optional[int],
    measure: Measure,
) -> ApproxTopK:
    """Ranking from complete frequencies; every position is guaranteed."""
    freqs = np.asarray(freqs, dtype=float)
    if freqs.ndim == 1:
        # one total per keyword
        freqs = freqs.reshape(len(keywords), 1)
    scores = score_of(measure, freqs, surface_area)
    totals = freqs.sum(axis=1)
    order = sorted(range(len(keywords)), key=lambda i: (-scores[i], keywords[i]))
    if k is not None:
        order = order[:k]
    ranking = [RankedKeyword(keyword=keywords[i], score=float(scores[i]), frequency=float(totals[i])) for i in order]
    return ApproxTopK(
        area=area,
        members=tuple(members),
        surface_area=surface_area,
        ranking=ranking,
        delta=len(ranking),
        threshold_delta=len(ranking),
        intervals=freqs.shape[1],
    )


@dataclass
class TruncatedList:
    """Top entries of one group's keyword distribution in one interval."""

    entries: Dict[str, int]
    boundary: int = 0
    interval: int = 0
    members: Tuple[str, ...] = field(default_factory=tuple)


def _bounds(
    entries: pd.DataFrame, lists: pd.DataFrame, intervals: int
) -> Tuple[List[str], np.ndarray, np.ndarray, np.ndarray]:
    """Keywords with lower and upper frequency bounds per interval, and the unseen-keyword upper bound."""
    boundary_total = lists.groupby(INTERVAL)["boundary"].sum().reindex(range(intervals), fill_value=0).to_numpy(float)
    if entries.empty:
        empty = np.zeros((0, intervals))
        return [], empty, empty, boundary_total

    with_boundary = entries.merge(lists[[LIST_ID, "boundary"]], on=LIST_ID, how="left")
    lower = with_boundary.pivot_table(index=KEYWORD, columns=INTERVAL, values=FREQ, aggfunc="sum", fill_value=0)
    covered = with_boundary.pivot_table(index=KEYWORD, columns=INTERVAL, values="boundary", aggfunc="sum", fill_value=0)
    lower = lower.reindex(columns=range(intervals), fill_value=0)
    covered = covered.reindex(index=lower.index, columns=range(intervals), fill_value=0)

    lower_values = lower.to_numpy(float)
    upper_values = lower_values + boundary_total[None, :] - covered.to_numpy(float)
    return [str(keyword) for keyword in lower.index], lower_values, upper_values, boundary_total


def _score_bounds(
    measure: Measure, lower: np.ndarray, upper: np.ndarray, surface_area: float
) -> Tuple[np.ndarray, np.ndarray]:
    if measure != Measure.TOPK_VOLATILE:
        scale = surface_area if measure == Measure.TOPK_DENSE else 1.0
        return lower.sum(axis=1) / scale, upper.sum(axis=1) / scale
    zeros = np.zeros((lower.shape[0], 1))
    prev_lower = np.hstack([zeros, lower[:, :-1]])
    prev_upper = np.hstack([zeros, upper[:, :-1]])
    most = np.maximum(upper - prev_lower, prev_upper - lower)
    least = np.maximum.reduce([np.zeros_like(lower), lower - prev_upper, prev_lower - upper])
    scale = surface_area * lower.shape[1]
    return least.sum(axis=1) / scale, most.sum(axis=1) / scale


def merge_truncated(
    entries: pd.DataFrame,
    lists: pd.DataFrame,
    area: str,
    members: Sequence[str],
    surface_area: float,
    k: int,
    intervals: int = 1,
    measure: Measure = Measure.TOPK_VOLATILE,
) -> ApproxTopK:
    """
    Merge truncated rankings of the groups making up one area

    Args:
        entries: stored (list_id, interval, keyword, freq) rows
        lists: one (list_id, interval, boundary) row per truncated list
        area: label of the merged area
        members: spatial members forming the area
        surface_area: summed surface area of the members
        k: ranking length
        intervals: number of equal time intervals
        measure: TOPK_DENSE, TOPK_FREQUENT or TOPK_VOLATILE

    Returns:
        Ranking by estimated score with epsilon (sum of boundaries), the
        threshold count of leading keywords whose merged frequency reaches
        epsilon, and delta, the longest such prefix whose order against every
        other keyword (stored or not) is certain from the frequency bounds
    """
    keywords, lower, upper, unseen_upper = _bounds(entries, lists, intervals)
    epsilon = float(lists["boundary"].sum()) if len(lists) else 0.0
    estimate = score_of(measure, lower, surface_area)
    least, most = _score_bounds(measure, lower, upper, surface_area)
    totals = lower.sum(axis=1)

    order = sorted(range(len(keywords)), key=lambda i: (-estimate[i], keywords[i]))
    ranked = order[:k]

    threshold_delta = 0
    for i in ranked:
        if totals[i] < epsilon:
            break
        threshold_delta += 1

    if epsilon == 0:
        ordered = len(ranked)
    else:
        unseen = _score_bounds(measure, np.zeros((1, intervals)), unseen_upper[None, :], surface_area)[1][0]
        tail = np.append(np.array([most[i] for i in order], dtype=float), unseen)
        suffix_max = np.maximum.accumulate(tail[::-1])[::-1]
        ordered = 0
        for position, i in enumerate(ranked):
            if least[i] <= suffix_max[position + 1]:
                break
            ordered += 1
    delta = min(threshold_delta, ordered)

    ranking = [
        RankedKeyword(keyword=keywords[i], score=float(estimate[i]), frequency=float(totals[i]), guaranteed=position < delta)
        for position, i in enumerate(ranked)
    ]
    logger.debug(f"Merged {len(lists)} truncated lists for {area}: epsilon={epsilon}, delta={delta}/{len(ranking)}")
    return ApproxTopK(
        area=area,
        members=tuple(members),
        surface_area=surface_area,
        ranking=ranking,
        epsilon=epsilon,
        delta=delta,
        threshold_delta=threshold_delta,
        intervals=intervals,
        approximate=True,
    )


def lists_to_frames(lists: Sequence[TruncatedList]) -> Tuple[pd.DataFrame, pd.DataFrame]:
    entries = [
        {LIST_ID: list_id, INTERVAL: item.interval, KEYWORD: keyword, FREQ: freq}
        for list_id, item in enumerate(lists)
        for keyword, freq in item.entries.items()
    ]
    heads = [{LIST_ID: list_id, INTERVAL: item.interval, "boundary": item.boundary} for list_id, item in enumerate(lists)]
    return (
        pd.DataFrame(entries, columns=[LIST_ID, INTERVAL, KEYWORD, FREQ]),
        pd.DataFrame(heads, columns=[LIST_ID, INTERVAL, "boundary"]),
    )


def topk_volatile_merge(
    lists: Sequence[TruncatedList],
    surface_area: float,
    k: int,
    intervals: int = 1,
    area: str = "merged",
) -> ApproxTopK:
    """Approximate top-k volatile keywords of the union of the lists' areas."""
    entries, heads = lists_to_frames(lists)
    members = sorted({member for item in lists for member in item.members})
    return merge_truncated(entries, heads, area, members, surface_area, k, intervals, Measure.TOPK_VOLATILE)


def topk_dense_merge(lists: Sequence[TruncatedList], surface_area: float, k: int, area: str = "merged") -> ApproxTopK:
    """Approximate top-k dense keywords of the union of the lists' areas."""
    entries, heads = lists_to_frames(lists)
    members = sorted({member for item in lists for member in item.members})
    return merge_truncated(entries, heads, area, members, surface_area, k, 1, Measure.TOPK_DENSE)
