"""
Tagger Module

Second pass over the corpus: re-parses every report with the finalized
vocabulary and alias maps, collapses correlated AV engines into single
votes, and emits per-category tag rankings filtered by vote thresholds.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Set, Tuple, Union

from core.alias_resolver import AliasMap
from core.errors import CorrelationFileError, EmptyTokenError, ValidationError
from core.label_parser import TAG_CATEGORIES, LabelParser, LexicalCategory, RuleSet
from core.scan_ingest import ScanReport, batched, normalize_engine
from core.vocabulary import Vocabulary
from utils.helpers import ordered_pool_map, read_jsonl

log = logging.getLogger(__name__)

GroupKey = Tuple[int, Union[int, str]]
Scores = Dict[Tuple[LexicalCategory, str], int]


@dataclass
class CorrelationGroups:
    """Disjoint sets of AV engines whose agreeing outputs count as one vote."""

    groups: List[FrozenSet[str]] = field(default_factory=list)
    membership: Dict[str, int] = field(default_factory=dict)

    def group_of(self, engine: str) -> GroupKey:
        """Group id of an engine; engines outside every group are singletons."""
        group_id = self.membership.get(engine)
        if group_id is None:
            return (1, engine)
        return (0, group_id)

    @classmethod
    def from_groups(cls, groups: Iterable[Iterable[str]]) -> "CorrelationGroups":
        result = cls()
        for members in groups:
            members = frozenset(normalize_engine(engine) for engine in members if engine.strip())
            if not members:
                continue
            overlap = members & result.membership.keys()
            if overlap:
                raise CorrelationFileError(f"engine(s) {', '.join(sorted(overlap))} listed in two groups")
            group_id = len(result.groups)
            result.groups.append(members)
            for engine in members:
                result.membership[engine] = group_id
        return result


@dataclass(frozen=True)
class Thresholds:
    """Minimum vote count per tag category."""

    beh: int = 5
    plat: int = 5
    vuln: int = 1
    pack: int = 1

    def __post_init__(self):
        for category in TAG_CATEGORIES:
            if self.get(category) < 1:
                raise ValueError(f"threshold for {category.value} must be >= 1")

    def get(self, category: LexicalCategory) -> int:
        return getattr(self, category.value.lower())

    @classmethod
    def uniform(cls, value: int) -> "Thresholds":
        return cls(beh=value, plat=value, vuln=value, pack=value)


@dataclass
class TagRanking:
    """Per-file ranked tags for BEH, PLAT, VULN and PACK."""

    file_id: str
    tags: Dict[LexicalCategory, List[Tuple[str, int]]] = field(
        default_factory=lambda: {category: [] for category in TAG_CATEGORIES}
    )
    source_chunk: Optional[int] = None

    def tag_set(self, category: LexicalCategory) -> Set[str]:
        return {token for token, _ in self.tags.get(category, [])}

    def is_empty(self) -> bool:
        return not any(self.tags.get(category) for category in TAG_CATEGORIES)

    def to_record(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {"sha256": self.file_id}
        for category in TAG_CATEGORIES:
            record[category.value.lower()] = [
                {"tag": token, "score": score} for token, score in self.tags.get(category, [])
            ]
        if self.source_chunk is not None:
            record["chunk"] = self.source_chunk
        return record

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> "TagRanking":
        """
        Build a ranking from a Tag Output record. Entries may be
        ``{"tag": ..., "score": n}`` objects or bare tag strings (score 1).
        """
        tags = {}
        for category in TAG_CATEGORIES:
            entries = []
            for entry in record.get(category.value.lower()) or []:
                if isinstance(entry, str):
                    entries.append((entry.lower(), 1))
                else:
                    entries.append((str(entry["tag"]).lower(), int(entry.get("score", 1))))
            tags[category] = entries
        return cls(file_id=str(record["sha256"]).lower(), tags=tags, source_chunk=record.get("chunk"))


@dataclass
class TaggingContext:
    """Everything the second pass needs, immutable once tagging starts."""

    rules: RuleSet
    vocabulary: Vocabulary
    aliases: Mapping[LexicalCategory, AliasMap]
    groups: CorrelationGroups
    thresholds: Thresholds = field(default_factory=Thresholds)

    def __post_init__(self):
        self.parser = LabelParser(self.rules, self.vocabulary)


def load_correlation_groups(path: Union[str, Path]) -> CorrelationGroups:
    """
    Read a Correlation File: one group per line, comma-separated engine names.

    Raises:
        CorrelationFileError: unreadable file, malformed line, or an engine in two groups
    """
    path = str(path)
    groups: List[List[str]] = []
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise CorrelationFileError(f"cannot read correlation file: {exc.strerror}", path=path) from exc

    seen: Dict[str, int] = {}
    with handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            members = [normalize_engine(name) for name in line.split(",")]
            if not all(members):
                raise CorrelationFileError("empty engine name", path=path, line_number=line_number)
            for engine in members:
                if seen.get(engine, line_number) != line_number:
                    raise CorrelationFileError(
                        f"engine {engine!r} already listed on line {seen[engine]}",
                        path=path, line_number=line_number,
                    )
                seen[engine] = line_number
            groups.append(members)
    return CorrelationGroups.from_groups(groups)


def score_tokens(
    report: ScanReport,
    rules: RuleSet,
    vocabulary: Vocabulary,
    aliases: Mapping[LexicalCategory, AliasMap],
    groups: CorrelationGroups,
    parser: Optional[LabelParser] = None,
) -> Scores:
    """
    Count votes per (category, canonical token) for one report.

    PRE, SUF, UNK, FAM and generic tokens are discarded. A vote is one
    correlation group: several engines of a group, or one engine repeating a
    token, still count once.

    Returns:
        (category, token) -> number of distinct correlation groups
    """
    parse = parser.parse if parser is not None else LabelParser(rules, vocabulary).parse
    voters: Dict[Tuple[LexicalCategory, str], Set[GroupKey]] = defaultdict(set)
    for engine, label in report.detections:
        try:
            parsed = parse(engine, label)
        except EmptyTokenError:
            log.debug("%s: no tokens in %s label %r", report.file_id, engine, label)
            continue
        group = groups.group_of(parsed.engine)
        for token, category in zip(parsed.tokens, vocabulary.refine(parsed)):
            if category not in TAG_CATEGORIES:
                continue
            alias_map = aliases.get(category)
            canonical = alias_map.apply(token) if alias_map is not None else token
            if vocabulary.is_generic(canonical):
                continue
            voters[(category, canonical)].add(group)
    return {key: len(members) for key, members in voters.items()}


def rank_tags(
    scores: Scores,
    thresholds: Thresholds,
    file_id: str = "",
    source_chunk: Optional[int] = None,
) -> TagRanking:
    """Keep tokens with at least T votes, sorted by score descending then token."""
    ranking = TagRanking(file_id=file_id, source_chunk=source_chunk)
    for (category, token), score in scores.items():
        if category in ranking.tags and score >= thresholds.get(category):
            ranking.tags[category].append((token, score))
    for entries in ranking.tags.values():
        entries.sort(key=lambda item: (-item[1], item[0]))
    return ranking


def tag_report(report: ScanReport, context: TaggingContext) -> TagRanking:
    scores = score_tokens(
        report, context.rules, context.vocabulary, context.aliases, context.groups, parser=context.parser,
    )
    return rank_tags(scores, context.thresholds, file_id=report.file_id, source_chunk=report.source_chunk)


_WORKER_CONTEXT: Optional[TaggingContext] = None


def _init_worker(context: TaggingContext) -> None:
    global _WORKER_CONTEXT
    _WORKER_CONTEXT = context


def _tag_batch(batch: List[ScanReport]) -> List[TagRanking]:
    return [tag_report(report, _WORKER_CONTEXT) for report in batch]


def tag_corpus(
    reports: Iterable[ScanReport],
    context: TaggingContext,
    workers: int = 1,
    batch_size: int = 512,
) -> Iterator[TagRanking]:
    """
    Tag a report stream, one ranking per report in input order.

    Args:
        reports: ScanReport stream
        context: Rules, vocabulary, aliases, groups and thresholds
        workers: Worker processes; 1 tags inline
        batch_size: Reports per work unit

    Yields:
        TagRanking per report
    """
    if workers <= 1:
        for report in reports:
            yield tag_report(report, context)
        return

    results = ordered_pool_map(
        _tag_batch,
        batched(reports, batch_size),
        workers=workers,
        initializer=_init_worker,
        initargs=(context,),
    )
    for batch in results:
        yield from batch


def read_tag_file(path: Union[str, Path]) -> Iterator[TagRanking]:
    """
    Stream TagRankings from a Tag Output (or Reference Tag) File.

    Raises:
        ValidationError: unreadable file, invalid JSON or a record without sha256
    """
    try:
        for line_number, record in enumerate(read_jsonl(path), start=1):
            if not isinstance(record, dict) or "sha256" not in record:
                raise ValidationError("tag record without sha256", path=str(path), line_number=line_number)
            try:
                ranking = TagRanking.from_record(record)
            except (KeyError, TypeError) as exc:
                raise ValidationError(f"malformed tag entry: {exc}", path=str(path), line_number=line_number) from exc
            yield ranking
    except OSError as exc:
        raise ValidationError(f"cannot read tag file: {exc.strerror}", path=str(path)) from exc
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
