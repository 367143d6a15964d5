import logging
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Sequence, Set, Union

from pydantic import BaseModel, ConfigDict, model_validator

from ..errors import TaxonomyError
from ..models import ALL_LEVEL, ALL_MEMBER, TEXTUAL, TEXTUAL_LEVELS, TextualScheme
from .base_hierarchy import BaseHierarchy, float_or_none, read_tsv

logger = logging.getLogger(__name__)

TEXT_COLUMNS = ["child", "parent", "level"]
IMPORTANCE_COLUMNS = ["member_id", "score"]
# Levels that may appear in the optional level column
STEP_LEVELS = TEXTUAL_LEVELS[:-2]


class TextTaxonomy:
    """Hypernym map applied transitively Term -> Theme -> Topic -> Concept.

    With a level column each level has its own map; without one a single
    level-agnostic map is used. Absent members are their own parent.
    """

    def __init__(
        self,
        parents: Optional[Dict[str, str]] = None,
        level_parents: Optional[Dict[str, Dict[str, str]]] = None,
        source: str = "memory",
    ):
        self.parents = dict(parents or {})
        self.level_parents = {level: dict(mapping) for level, mapping in (level_parents or {}).items()}
        self.source = source
        if not self.level_parents:
            self._check_cycles()

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TextTaxonomy":
        frame = read_tsv(path, TEXT_COLUMNS, required=2)
        parents: Dict[str, str] = {}
        level_parents: Dict[str, Dict[str, str]] = {}
        with_levels = bool((frame["level"].str.strip() != "").any()) if len(frame) else False
        for line, row in enumerate(frame.to_dict("records"), start=1):
            child, parent = row["child"].strip().lower(), row["parent"].strip().lower()
            if not child or not parent:
                raise TaxonomyError(f"{path}: row {line} needs a child and a parent")
            if with_levels:
                level = row["level"].strip().lower()
                if level not in STEP_LEVELS:
                    raise TaxonomyError(f"{path}: row {line} has level {level!r}, expected one of {STEP_LEVELS}")
                target = level_parents.setdefault(level, {})
            else:
                target = parents
            if target.get(child, parent) != parent:
                raise TaxonomyError(f"{path}: {child!r} has conflicting parents {target[child]!r} and {parent!r}")
            target[child] = parent
        taxonomy = cls(parents, level_parents, source=str(path))
        logger.info(f"Loaded text taxonomy from {path}: {len(taxonomy)} links")
        return taxonomy

    def __len__(self) -> int:
        return len(self.parents) + sum(len(mapping) for mapping in self.level_parents.values())

    def _check_cycles(self) -> None:
        for start in self.parents:
            seen = {start}
            member = self.parents[start]
            while member in self.parents and self.parents[member] != member:
                if member in seen:
                    raise TaxonomyError(f"hypernym cycle through {member!r}")
                seen.add(member)
                member = self.parents[member]

    def parent(self, member: str, level: str) -> str:
        """One hypernym step from ``level``; the own-parent rule covers absent members."""
        mapping = self.level_parents.get(level) if self.level_parents else self.parents
        return (mapping or {}).get(member, member)

    def ancestor(self, term: str, level: str) -> str:
        """The term's member at ``level`` reached from the Term level."""
        if level == ALL_LEVEL:
            return ALL_MEMBER
        member = term
        for step in TEXTUAL_LEVELS[: TEXTUAL_LEVELS.index(level)]:
            member = self.parent(member, step)
        return member


def load_importance(path: Union[str, Path]) -> Dict[str, float]:
    """Importance scores for the custom scheme; absent members score 0."""
    frame = read_tsv(path, IMPORTANCE_COLUMNS)
    scores: Dict[str, float] = {}
    for line, row in enumerate(frame.to_dict("records"), start=1):
        member = row["member_id"].strip().lower()
        try:
            score = float_or_none(row["score"])
        except ValueError:
            raise TaxonomyError(f"{path}: row {line} has a non-numeric score {row['score']!r}") from None
        if not member or score is None:
            raise TaxonomyError(f"{path}: row {line} needs a member and a score")
        scores[member] = score
    logger.info(f"Loaded {len(scores)} importance scores from {path}")
    return scores


class ParentAssignment(BaseModel):
    """Fact (or child member) to parent links under one textual scheme."""

    model_config = ConfigDict(frozen=True)

    scheme: TextualScheme
    mapping: Dict[str, Union[str, frozenset]]

    @model_validator(mode="after")
    def _check_shape(self) -> "ParentAssignment":
        for key, parents in self.mapping.items():
            if self.scheme == TextualScheme.REPLICATION:
                if not isinstance(parents, frozenset) or not parents:
                    raise ValueError(f"replication links of {key!r} must be a non-empty set")
            elif not isinstance(parents, str):
                raise ValueError(f"{self.scheme.value} links of {key!r} must be a single parent")
        return self


def _check_level(level: str) -> None:
    if level not in TEXTUAL_LEVELS[1:]:
        raise ValueError(f"textual parents are defined for levels {TEXTUAL_LEVELS[1:]}, got {level!r}")


def textual_parents_replication(terms: Iterable[str], tax: TextTaxonomy, level: str) -> Set[str]:
    """Every parent any of the terms maps to at ``level``."""
    _check_level(level)
    return {tax.ancestor(term, level) for term in terms}


def _argmax(support: Mapping[str, float]) -> str:
    # highest value first, then the lexicographically smaller id
    return min(support, key=lambda member: (-support[member], member))


def _theme_support(terms: Sequence[str], tax: TextTaxonomy) -> Counter:
    if not terms:
        raise ValueError("a majority or custom parent needs at least one term")
    return Counter(tax.ancestor(term, "theme") for term in terms)


def textual_parent_majority(terms: Sequence[str], tax: TextTaxonomy, level: str = "theme") -> str:
    """Theme with the most supporting terms; coarser levels roll that Theme up the taxonomy."""
    _check_level(level)
    theme = _argmax(_theme_support(terms, tax))
    return roll_theme(theme, tax, level)


def textual_parent_custom(terms: Sequence[str], tax: TextTaxonomy, scores: Mapping[str, float], level: str = "theme") -> str:
    """Candidate Theme with the highest importance score (absent = 0)."""
    _check_level(level)
    support = _theme_support(terms, tax)
    theme = _argmax({candidate: scores.get(candidate, 0.0) for candidate in support})
    return roll_theme(theme, tax, level)


def roll_theme(theme: str, tax: TextTaxonomy, level: str) -> str:
    if level == ALL_LEVEL:
        return ALL_MEMBER
    member = theme
    for step in TEXTUAL_LEVELS[1 : TEXTUAL_LEVELS.index(level)]:
        member = tax.parent(member, step)
    return member


def assign_parents(
    facts: Mapping[str, Sequence[str]],
    tax: TextTaxonomy,
    scheme: TextualScheme,
    level: str = "theme",
    scores: Optional[Mapping[str, float]] = None,
) -> ParentAssignment:
    """Parent links of many facts at once under the given scheme."""
    mapping: Dict[str, Union[str, frozenset]] = {}
    for fact, terms in facts.items():
        if scheme == TextualScheme.REPLICATION:
            mapping[fact] = frozenset(textual_parents_replication(terms, tax, level))
        elif scheme == TextualScheme.MAJORITY:
            mapping[fact] = textual_parent_majority(terms, tax, level)
        else:
            mapping[fact] = textual_parent_custom(terms, tax, scores or {}, level)
    return ParentAssignment(scheme=scheme, mapping=mapping)


class TextualHierarchy(BaseHierarchy[TextTaxonomy]):
    """Term -> Theme -> Topic -> Concept -> All over a text taxonomy."""

    def __init__(self, taxonomy: TextTaxonomy):
        super().__init__(TEXTUAL, TEXTUAL_LEVELS, taxonomy)

    def parent(self, member: str, level: str) -> str:
        if level == ALL_LEVEL:
            raise ValueError(f"{level} has no parent in the {self.name} hierarchy")
        return self.source.parent(member, level)
