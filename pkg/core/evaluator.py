"""
Evaluator Module

Scores tag outputs two ways: multi-label precision/recall/F1 against a set of
reference tags, and family-consistency precision/recall against a malware
family partition (a tag is expected on every member of a family once at least
half of the family carries it).
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Set, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.metrics import precision_recall_fscore_support

from core.errors import ValidationError
from core.label_parser import TAG_CATEGORIES, LexicalCategory
from core.tagger import TagRanking

log = logging.getLogger(__name__)

FAMILY_RATIO = 0.5


@dataclass
class TagAssignment:
    """For each tag, the set of files carrying it, over a file universe."""

    files_by_tag: Dict[str, Set[str]] = field(default_factory=dict)
    universe: Set[str] = field(default_factory=set)

    def add(self, file_id: str, tags: Iterable[str]) -> None:
        self.universe.add(file_id)
        for tag in tags:
            self.files_by_tag.setdefault(tag, set()).add(file_id)

    def files(self, tag: str) -> Set[str]:
        return self.files_by_tag.get(tag, set())

    def tags(self) -> List[str]:
        return sorted(self.files_by_tag)

    def restrict(self, universe: Iterable[str]) -> "TagAssignment":
        """Copy limited to ``universe``; tags left without files are dropped."""
        universe = set(universe)
        restricted = TagAssignment(universe=self.universe & universe)
        for tag, files in self.files_by_tag.items():
            kept = files & universe
            if kept:
                restricted.files_by_tag[tag] = kept
        return restricted

    def remap(self, tag_map: Mapping[str, Optional[str]]) -> "TagAssignment":
        """
        Rename tags; a tag mapped to None is dropped. Tags absent from the map
        keep their name. Tags renamed onto the same name are merged.
        """
        remapped = TagAssignment(universe=set(self.universe))
        for tag, files in self.files_by_tag.items():
            target = tag_map.get(tag, tag)
            if target is None:
                continue
            remapped.files_by_tag.setdefault(target, set()).update(files)
        return remapped

    @classmethod
    def from_rankings(
        cls, rankings: Iterable[TagRanking], categories: Iterable[LexicalCategory] = TAG_CATEGORIES,
    ) -> "TagAssignment":
        categories = tuple(categories)
        assignment = cls()
        for ranking in rankings:
            tags = set()
            for category in categories:
                tags |= ranking.tag_set(category)
            assignment.add(ranking.file_id, tags)
        return assignment


@dataclass
class FamilyPartition:
    """Disjoint, nonempty family -> file sets."""

    families: Dict[str, FrozenSet[str]] = field(default_factory=dict)

    def __post_init__(self):
        seen: Dict[str, str] = {}
        for family, files in self.families.items():
            if not files:
                raise ValidationError(f"family {family!r} has no files")
            for file_id in files:
                if file_id in seen:
                    raise ValidationError(f"file {file_id} in families {seen[file_id]!r} and {family!r}")
                seen[file_id] = family

    @property
    def universe(self) -> Set[str]:
        return set().union(*self.families.values()) if self.families else set()

    def __len__(self) -> int:
        return len(self.families)


@dataclass
class TagMetrics:
    tag: str
    precision: float
    recall: float
    f1: float
    support: int
    predicted: int
    flags: Tuple[str, ...] = ()

    def to_record(self) -> Dict[str, Any]:
        return {
            "tag": self.tag,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "support": self.support,
            "predicted": self.predicted,
            "flags": list(self.flags),
        }


@dataclass
class MetricReport:
    """Per-tag metrics plus micro and weighted averages."""

    per_tag: List[TagMetrics]
    micro: Tuple[float, float, float]
    weighted: Tuple[float, float, float]
    mode: str = "multilabel"

    def to_frame(self) -> pd.DataFrame:
        rows = [metrics.to_record() for metrics in self.per_tag]
        frame = pd.DataFrame(rows, columns=["tag", "precision", "recall", "f1", "support", "predicted", "flags"])
        frame["flags"] = frame["flags"].map(lambda flags: ",".join(flags))
        summary = pd.DataFrame(
            [
                {"tag": "(micro)", "precision": self.micro[0], "recall": self.micro[1], "f1": self.micro[2]},
                {"tag": "(weighted)", "precision": self.weighted[0], "recall": self.weighted[1], "f1": self.weighted[2]},
            ]
        )
        return pd.concat([frame, summary], ignore_index=True)

    def to_records(self) -> List[Dict[str, Any]]:
        records = [dict(metrics.to_record(), mode=self.mode) for metrics in self.per_tag]
        for name, (precision, recall, f1) in (("micro", self.micro), ("weighted", self.weighted)):
            records.append(
                {"average": name, "mode": self.mode, "precision": precision, "recall": recall, "f1": f1}
            )
        return records


def harmonic_mean(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _ratio(numerator: int, denominator: int) -> Tuple[float, bool]:
    """Value and whether the denominator was zero."""
    if denominator == 0:
        return 0.0, True
    return numerator / denominator, False


def _weighted(per_tag: List[TagMetrics], weights: List[int]) -> Tuple[float, float, float]:
    """Weighted mean of each per-tag precision, recall and F1."""
    if sum(weights) == 0:
        return 0.0, 0.0, 0.0
    values = np.array([(m.precision, m.recall, m.f1) for m in per_tag], dtype=float)
    precision, recall, f1 = np.average(values, axis=0, weights=weights)
    return float(precision), float(recall), float(f1)


def multilabel_metrics(predicted: TagAssignment, reference: TagAssignment) -> MetricReport:
    """
    Per-tag, micro and weighted precision/recall/F1.

    The file universe is the reference's. Predicted files outside it are
    ignored; predicted tags never seen in the reference still count their
    false positives. Tags with no predicted positives get precision 0 and a
    ``no_predictions`` flag; tags with no reference support get recall 0 and a
    ``no_support`` flag. Weighted averages are the support-weighted means of
    the per-tag values, so the weighted F1 is not the harmonic mean of the
    weighted precision and recall.

    Args:
        predicted: Tool output, tags already aligned to the reference vocabulary
        reference: Ground truth

    Returns:
        MetricReport
    """
    files = sorted(reference.universe)
    predicted = predicted.restrict(files)
    tags = sorted(set(reference.files_by_tag) | set(predicted.files_by_tag))
    if not files or not tags:
        log.warning("Nothing to evaluate: %d files, %d tags", len(files), len(tags))
        return MetricReport(per_tag=[], micro=(0.0, 0.0, 0.0), weighted=(0.0, 0.0, 0.0))

    index = {file_id: row for row, file_id in enumerate(files)}
    # a single column would be read as a binary target; an all-zero pad column changes no count
    columns = max(len(tags), 2)
    y_true = np.zeros((len(files), columns), dtype=np.int8)
    y_pred = np.zeros((len(files), columns), dtype=np.int8)
    for column, tag in enumerate(tags):
        for file_id in reference.files(tag):
            y_true[index[file_id], column] = 1
        for file_id in predicted.files(tag):
            y_pred[index[file_id], column] = 1

    precision, recall, f1, support = precision_recall_fscore_support(
        y_true, y_pred, average=None, zero_division=0,
    )
    predicted_counts = y_pred.sum(axis=0)

    per_tag = []
    for column, tag in enumerate(tags):
        flags = []
        if predicted_counts[column] == 0:
            flags.append("no_predictions")
        if support[column] == 0:
            flags.append("no_support")
        per_tag.append(
            TagMetrics(
                tag=tag,
                precision=float(precision[column]),
                recall=float(recall[column]),
                f1=float(f1[column]),
                support=int(support[column]),
                predicted=int(predicted_counts[column]),
                flags=tuple(flags),
            )
        )

    micro_p, micro_r, micro_f, _ = precision_recall_fscore_support(
        y_true, y_pred, average="micro", zero_division=0,
    )
    # (0, 0, 0) when no tag has reference support
    weighted = _weighted(per_tag, [metrics.support for metrics in per_tag])
    return MetricReport(
        per_tag=per_tag,
        micro=(float(micro_p), float(micro_r), float(micro_f)),
        weighted=weighted,
    )


def family_consistency_sets(tagged: Set[str], families: FamilyPartition) -> Set[str]:
    """
    Union of every family in which at least half of the files carry the tag.

    Args:
        tagged: C_i, the files a tool assigned the tag to
        families: Partition of the evaluated files

    Returns:
        D_i
    """
    expected: Set[str] = set()
    if not tagged:
        return expected
    for files in families.families.values():
        # integer form of |C ∩ F| / |F| >= 0.5
        if 2 * len(tagged & files) >= len(files):
            expected |= files
    return expected


def family_consistency_counts(tagged: Set[str], expected: Set[str]) -> Tuple[int, int, int]:
    """(|C∩D|, |C∖D|, |D∖C|)."""
    hits = len(tagged & expected)
    return hits, len(tagged) - hits, len(expected) - hits


def family_consistency_metrics(tagged: Set[str], expected: Set[str]) -> Tuple[float, float]:
    """
    Precision and recall of C_i against D_i; 0 on an empty denominator.

    Returns:
        (precision, recall)
    """
    hits, false_pos, false_neg = family_consistency_counts(tagged, expected)
    precision, _ = _ratio(hits, hits + false_pos)
    recall, _ = _ratio(hits, hits + false_neg)
    return precision, recall


def family_consistency_report(predicted: TagAssignment, families: FamilyPartition) -> MetricReport:
    """
    Family-consistency metrics for every predicted tag.

    Files outside the partition are ignored. Micro averages pool the counts
    over tags; weighted averages are means of the per-tag values weighted by
    |D_i|.
    """
    predicted = predicted.restrict(families.universe)
    per_tag: List[TagMetrics] = []
    weights: List[int] = []
    pooled = [0, 0, 0]
    for tag in predicted.tags():
        tagged = predicted.files(tag)
        expected = family_consistency_sets(tagged, families)
        hits, false_pos, false_neg = family_consistency_counts(tagged, expected)
        precision, no_predictions = _ratio(hits, hits + false_pos)
        recall, no_support = _ratio(hits, hits + false_neg)
        flags = tuple(
            name for name, raised in (("no_predictions", no_predictions), ("no_support", no_support)) if raised
        )
        per_tag.append(
            TagMetrics(
                tag=tag,
                precision=precision,
                recall=recall,
                f1=harmonic_mean(precision, recall),
                support=len(expected),
                predicted=len(tagged),
                flags=flags,
            )
        )
        weights.append(len(expected))
        pooled[0] += hits
        pooled[1] += false_pos
        pooled[2] += false_neg

    micro_p, _ = _ratio(pooled[0], pooled[0] + pooled[1])
    micro_r, _ = _ratio(pooled[0], pooled[0] + pooled[2])
    return MetricReport(
        per_tag=per_tag,
        micro=(micro_p, micro_r, harmonic_mean(micro_p, micro_r)),
        weighted=_weighted(per_tag, weights),
        mode="families",
    )


def load_families(path: Union[str, Path]) -> FamilyPartition:
    """
    Read a Family File: ``sha256<TAB>family`` per line.

    Raises:
        ValidationError: malformed line or a file listed twice with different families
    """
    path = str(path)
    family_of: Dict[str, str] = {}
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read family file: {exc.strerror}", path=path) from exc

    with handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = [part.strip() for part in line.split("\t")]
            if len(fields) != 2 or not all(fields):
                raise ValidationError("expected sha256<TAB>family", path=path, line_number=line_number)
            file_id, family = fields[0].lower(), fields[1]
            if family_of.get(file_id, family) != family:
                raise ValidationError(
                    f"{file_id} assigned to {family_of[file_id]!r} and {family!r}",
                    path=path, line_number=line_number,
                )
            family_of[file_id] = family

    members: Dict[str, Set[str]] = defaultdict(set)
    for file_id, family in family_of.items():
        members[family].add(file_id)
    return FamilyPartition(families={family: frozenset(files) for family, files in members.items()})


def load_tag_map(path: Union[str, Path]) -> Dict[str, Optional[str]]:
    """
    Read a Tag Map File: ``predicted_tag<TAB>reference_tag``. A line with an
    empty reference tag drops the predicted tag.
    """
    path = str(path)
    tag_map: Dict[str, Optional[str]] = {}
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read tag map: {exc.strerror}", path=path) from exc

    with handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) > 2 or not fields[0].strip():
                raise ValidationError("expected predicted_tag<TAB>reference_tag", path=path, line_number=line_number)
            target = fields[1].strip().lower() if len(fields) == 2 else ""
            tag_map[fields[0].strip().lower()] = target or None
    return tag_map
