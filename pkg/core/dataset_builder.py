"""
Dataset Builder Module

Turns per-file tag rankings into benchmark datasets for one tag category:
drops tags rarer than a per-category floor, caps over-represented tags by
seeded random down-sampling, and splits files into train and test sets either
by corpus chunk (temporal) or by per-tag stratification.
"""

import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Set, Tuple, Union

import numpy as np
import pandas as pd

from core.errors import DatasetError
from core.label_parser import TAG_CATEGORIES, LexicalCategory
from core.tagger import TagRanking
from utils.helpers import atomic_output, read_jsonl, write_jsonl

log = logging.getLogger(__name__)

SPLIT_MODES = ("temporal", "stratified")

DEFAULT_FLOORS = {
    LexicalCategory.BEH: 1000,
    LexicalCategory.PLAT: 500,
    LexicalCategory.VULN: 100,
    LexicalCategory.PACK: 50,
}

TRAIN, TEST = "train", "test"


@dataclass(frozen=True)
class SplitConfig:
    """Floors, caps and split parameters for dataset construction."""

    mode: str = "temporal"
    train_chunk_max: int = 315
    floors: Mapping[LexicalCategory, int] = field(default_factory=lambda: dict(DEFAULT_FLOORS))
    train_cap_multiplier: int = 100
    test_cap_multiplier: int = 25
    test_fraction: float = 0.2
    rng_seed: int = 0

    def __post_init__(self):
        if self.mode not in SPLIT_MODES:
            raise ValueError(f"split mode must be one of {', '.join(SPLIT_MODES)}")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must be strictly between 0 and 1")
        for category in TAG_CATEGORIES:
            if self.floor(category) < 1:
                raise ValueError(f"floor for {category.value} must be >= 1")
        if self.train_cap_multiplier < 1 or self.test_cap_multiplier < 1:
            raise ValueError("cap multipliers must be >= 1")

    def floor(self, category: LexicalCategory) -> int:
        return int(self.floors.get(category, DEFAULT_FLOORS[category]))

    def cap(self, category: LexicalCategory, split: str) -> int:
        multiplier = self.train_cap_multiplier if split == TRAIN else self.test_cap_multiplier
        return multiplier * self.floor(category)

    def to_dict(self) -> Dict[str, Any]:
        echo = asdict(self)
        echo["floors"] = {category.value: self.floor(category) for category in TAG_CATEGORIES}
        return echo


@dataclass
class FilteredTags:
    """Tags of one category that reached the floor, and the files carrying them."""

    category: LexicalCategory
    vocabulary: List[str]
    files: Dict[str, FrozenSet[str]]
    chunks: Dict[str, Optional[int]]
    dropped: Dict[str, int] = field(default_factory=dict)

    @property
    def files_by_tag(self) -> Dict[str, List[str]]:
        by_tag: Dict[str, List[str]] = {tag: [] for tag in self.vocabulary}
        for file_id in sorted(self.files):
            for tag in self.files[file_id]:
                by_tag[tag].append(file_id)
        return by_tag


@dataclass
class DatasetManifest:
    """Train/test file lists for one category plus provenance."""

    category: LexicalCategory
    train: List[Tuple[str, Tuple[str, ...]]]
    test: List[Tuple[str, Tuple[str, ...]]]
    vocabulary: List[str]
    provenance: Dict[str, Any] = field(default_factory=dict)
    chunks: Dict[str, Optional[int]] = field(default_factory=dict)

    def tag_counts(self, split: str) -> Counter:
        rows = self.train if split == TRAIN else self.test
        counts: Counter = Counter()
        for _, tags in rows:
            counts.update(tags)
        return counts

    def counts_frame(self) -> pd.DataFrame:
        """Per-tag file counts of both splits, one row per tag."""
        train, test = self.tag_counts(TRAIN), self.tag_counts(TEST)
        frame = pd.DataFrame(
            [{"tag": tag, "train": train.get(tag, 0), "test": test.get(tag, 0)} for tag in self.vocabulary],
            columns=["tag", "train", "test"],
        )
        frame["total"] = frame["train"] + frame["test"]
        return frame

    def temporal_purity(self) -> Tuple[Optional[int], Optional[int]]:
        """(max train chunk, min test chunk); None for a split without chunk data."""
        train_chunks = [self.chunks[f] for f, _ in self.train if self.chunks.get(f) is not None]
        test_chunks = [self.chunks[f] for f, _ in self.test if self.chunks.get(f) is not None]
        return (max(train_chunks) if train_chunks else None, min(test_chunks) if test_chunks else None)

    def header(self) -> Dict[str, Any]:
        train, test = self.tag_counts(TRAIN), self.tag_counts(TEST)
        return {
            "header": True,
            "category": self.category.value,
            "vocabulary": list(self.vocabulary),
            "counts": {tag: {TRAIN: train.get(tag, 0), TEST: test.get(tag, 0)} for tag in self.vocabulary},
            "files": {TRAIN: len(self.train), TEST: len(self.test)},
            **self.provenance,
        }

    def to_records(self) -> Iterable[Dict[str, Any]]:
        yield self.header()
        for split, rows in ((TRAIN, self.train), (TEST, self.test)):
            for file_id, tags in rows:
                record: Dict[str, Any] = {"sha256": file_id, "split": split, "tags": list(tags)}
                if self.chunks.get(file_id) is not None:
                    record["chunk"] = self.chunks[file_id]
                yield record


def filter_tags(
    rankings: Iterable[TagRanking],
    category: LexicalCategory,
    floors: Mapping[LexicalCategory, int],
) -> FilteredTags:
    """
    Keep tags whose file count reaches the category floor (inclusive).

    Files left without a surviving tag are dropped.
    """
    floor = int(floors.get(category, DEFAULT_FLOORS[category]))
    tagged: Dict[str, FrozenSet[str]] = {}
    chunks: Dict[str, Optional[int]] = {}
    counts: Counter = Counter()
    for ranking in rankings:
        tags = frozenset(ranking.tag_set(category))
        if not tags:
            continue
        if ranking.file_id in tagged:
            log.warning("Duplicate file %s in rankings; keeping the first", ranking.file_id)
            continue
        tagged[ranking.file_id] = tags
        chunks[ranking.file_id] = ranking.source_chunk
        counts.update(tags)

    surviving = {tag for tag, count in counts.items() if count >= floor}
    dropped = {tag: count for tag, count in counts.items() if count < floor}
    if dropped:
        log.info("%s: dropped %d tag(s) below floor %d", category.value, len(dropped), floor)

    files = {}
    for file_id, tags in tagged.items():
        kept = tags & surviving
        if kept:
            files[file_id] = kept
    return FilteredTags(
        category=category,
        vocabulary=sorted(surviving),
        files=files,
        chunks={file_id: chunks[file_id] for file_id in files},
        dropped=dropped,
    )


def _shuffled(items: List[str], rng: np.random.Generator) -> List[str]:
    order = rng.permutation(len(items))
    return [items[i] for i in order]


def apply_caps(files: Dict[str, Set[str]], cap: int, rng: np.random.Generator, label: str = "") -> Dict[str, Set[str]]:
    """
    Down-sample so no tag is carried by more than ``cap`` files.

    Tags are handled from most to least common. Files are removed uniformly at
    random, preferring files whose every tag is over the cap. A file that is
    the last carrier of some other tag only loses the capped tag.

    Args:
        files: file -> tags for one split (not modified)
        cap: Maximum files per tag
        rng: Seeded generator
        label: Split name for log messages

    Returns:
        New file -> tags mapping with empty files removed
    """
    files = {file_id: set(tags) for file_id, tags in files.items()}
    counts: Counter = Counter()
    for tags in files.values():
        counts.update(tags)

    for tag in sorted(counts, key=lambda t: (-counts[t], t)):
        excess = counts[tag] - cap
        if excess <= 0:
            continue
        carriers = _shuffled(sorted(f for f, tags in files.items() if tag in tags), rng)
        carriers.sort(key=lambda f: 0 if all(counts[t] > cap for t in files[f]) else 1)
        for file_id in carriers[:excess]:
            tags = files[file_id]
            if any(counts[other] <= 1 for other in tags if other != tag):
                tags.discard(tag)
                counts[tag] -= 1
            else:
                for other in tags:
                    counts[other] -= 1
                del files[file_id]
        log.info("%s: down-sampled %r to %d files", label or "split", tag, cap)

    return {file_id: tags for file_id, tags in files.items() if tags}


def _manifest(
    filtered: FilteredTags,
    assignment: Dict[str, Dict[str, Set[str]]],
    config: SplitConfig,
    require_both: bool,
) -> DatasetManifest:
    train_counts: Counter = Counter()
    test_counts: Counter = Counter()
    for tags in assignment[TRAIN].values():
        train_counts.update(tags)
    for tags in assignment[TEST].values():
        test_counts.update(tags)
    if require_both:
        vocabulary = sorted(set(train_counts) & set(test_counts))
    else:
        vocabulary = sorted(set(train_counts) | set(test_counts))

    keep = set(vocabulary)
    rows = {}
    for split in (TRAIN, TEST):
        rows[split] = sorted(
            (file_id, tuple(sorted(tags & keep)))
            for file_id, tags in assignment[split].items()
            if tags & keep
        )
    used = {file_id for split in rows.values() for file_id, _ in split}
    return DatasetManifest(
        category=filtered.category,
        train=rows[TRAIN],
        test=rows[TEST],
        vocabulary=vocabulary,
        provenance={"mode": config.mode, "seed": config.rng_seed, "config": config.to_dict()},
        chunks={file_id: filtered.chunks.get(file_id) for file_id in sorted(used)},
    )


def temporal_split(filtered: FilteredTags, config: SplitConfig) -> DatasetManifest:
    """
    Split by source chunk: chunks up to ``train_chunk_max`` train, later ones test.

    Raises:
        DatasetError: a file has no source chunk
    """
    rng = np.random.default_rng(config.rng_seed)
    splits: Dict[str, Dict[str, Set[str]]] = {TRAIN: {}, TEST: {}}
    for file_id in sorted(filtered.files):
        chunk = filtered.chunks.get(file_id)
        if chunk is None:
            raise DatasetError(f"file {file_id} has no source chunk; temporal split needs one")
        split = TRAIN if chunk <= config.train_chunk_max else TEST
        splits[split][file_id] = set(filtered.files[file_id])

    for split in (TRAIN, TEST):
        splits[split] = apply_caps(splits[split], config.cap(filtered.category, split), rng, label=split)
    return _manifest(filtered, splits, config, require_both=False)


def stratified_test_target(n: int, test_fraction: float) -> int:
    """Files of a tag that go to test: floor(n * f), at least 1 once n >= 2."""
    target = math.floor(n * test_fraction + 1e-9)
    if n >= 2:
        target = max(target, 1)
    return target


def stratified_split(filtered: FilteredTags, config: SplitConfig) -> DatasetManifest:
    """
    Greedy iterative stratification, rarest tag first.

    Each tag sends floor(n * test_fraction) of its files to test (at least one
    once it has two files); files already placed by a rarer tag count toward
    that target. Tags with fewer than two files, or that end up missing from
    either split, are dropped.
    """
    rng = np.random.default_rng(config.rng_seed)
    by_tag = filtered.files_by_tag
    files = {file_id: set(tags) for file_id, tags in filtered.files.items()}

    too_small = [tag for tag, carriers in by_tag.items() if len(carriers) < 2]
    for tag in too_small:
        log.info("%s: dropping %r, fewer than 2 files", filtered.category.value, tag)
        for file_id in by_tag.pop(tag):
            files[file_id].discard(tag)

    placed: Dict[str, str] = {}
    for tag in sorted(by_tag, key=lambda t: (len(by_tag[t]), t)):
        carriers = by_tag[tag]
        target = stratified_test_target(len(carriers), config.test_fraction)
        have_test = sum(1 for f in carriers if placed.get(f) == TEST)
        free = _shuffled([f for f in carriers if f not in placed], rng)
        need = max(target - have_test, 0)
        for index, file_id in enumerate(free):
            placed[file_id] = TEST if index < need else TRAIN

    splits: Dict[str, Dict[str, Set[str]]] = {TRAIN: {}, TEST: {}}
    for file_id in sorted(files):
        if files[file_id] and file_id in placed:
            splits[placed[file_id]][file_id] = files[file_id]

    for split in (TRAIN, TEST):
        splits[split] = apply_caps(splits[split], config.cap(filtered.category, split), rng, label=split)

    manifest = _manifest(filtered, splits, config, require_both=True)
    lost = sorted(set(by_tag) - set(manifest.vocabulary))
    if lost:
        log.warning("%s: dropped %d tag(s) absent from one split: %s", filtered.category.value, len(lost), ", ".join(lost))
    return manifest


def build_dataset(rankings: Iterable[TagRanking], category: LexicalCategory, config: SplitConfig) -> DatasetManifest:
    """Filter, split and cap one category's tags into a manifest."""
    filtered = filter_tags(rankings, category, config.floors)
    if not filtered.files:
        log.warning("%s: no tag reached its floor; manifest is empty", category.value)
    if config.mode == "temporal":
        return temporal_split(filtered, config)
    return stratified_split(filtered, config)


def write_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> None:
    with atomic_output(path) as handle:
        write_jsonl(manifest.to_records(), handle)


def read_manifest(path: Union[str, Path]) -> DatasetManifest:
    """
    Load a Manifest File written by ``write_manifest``.

    Raises:
        DatasetError: missing header or unknown split name
    """
    try:
        records = list(read_jsonl(path))
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read manifest: {exc}", path=str(path)) from exc
    if not records or not records[0].get("header"):
        raise DatasetError("manifest has no header record", path=str(path))

    header = records[0]
    rows: Dict[str, List[Tuple[str, Tuple[str, ...]]]] = {TRAIN: [], TEST: []}
    chunks: Dict[str, Optional[int]] = {}
    for line_number, record in enumerate(records[1:], start=2):
        split = record.get("split")
        if split not in rows:
            raise DatasetError(f"unknown split {split!r}", path=str(path), line_number=line_number)
        rows[split].append((record["sha256"], tuple(record.get("tags", ()))))
        chunks[record["sha256"]] = record.get("chunk")

    provenance = {key: header[key] for key in ("mode", "seed", "config") if key in header}
    return DatasetManifest(
        category=LexicalCategory.parse(header["category"]),
        train=rows[TRAIN],
        test=rows[TEST],
        vocabulary=list(header.get("vocabulary", [])),
        provenance=provenance,
        chunks=chunks,
    )
