"""
Scan Ingest Module

Streams scan-report corpora from line-delimited JSON files, validates and
deduplicates each record, and hands immutable ScanReport values to the rest
of the pipeline.
"""

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, Iterable, Iterator, List, Optional, Tuple

from core.errors import IngestError

log = logging.getLogger(__name__)

SHA256_PATTERN = re.compile(r"^[0-9a-f]{64}$")


class MalformedRecord(ValueError):
    """Raised internally for a record that cannot become a ScanReport."""


@dataclass(frozen=True)
class ScanReport:
    """One file's AV detections, keyed by its SHA-256 digest."""

    file_id: str
    detections: Tuple[Tuple[str, str], ...]
    scan_time: Optional[datetime] = None
    source_chunk: Optional[int] = None

    @property
    def engines(self) -> List[str]:
        return [engine for engine, _ in self.detections]


@dataclass
class CorpusStats:
    """Report, detection and per-engine counts over a corpus."""

    report_count: int = 0
    engine_counts: Dict[str, int] = field(default_factory=dict)
    label_count: int = 0

    def add(self, report: ScanReport) -> None:
        """Count one report."""
        self.report_count += 1
        for engine, _ in report.detections:
            self.engine_counts[engine] = self.engine_counts.get(engine, 0) + 1
        self.label_count += len(report.detections)

    def merge(self, other: "CorpusStats") -> "CorpusStats":
        """Add another shard's counts into this one."""
        self.report_count += other.report_count
        merged = Counter(self.engine_counts)
        merged.update(other.engine_counts)
        self.engine_counts = dict(merged)
        self.label_count += other.label_count
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            "report_count": self.report_count,
            "engine_counts": dict(sorted(self.engine_counts.items())),
            "label_count": self.label_count,
        }


def normalize_engine(name: str) -> str:
    """Engine names are case-insensitive keys."""
    return name.strip().lower()


def _first_wins(pairs: List[Tuple[str, Any]]) -> List[Tuple[str, Any]]:
    # Keeps JSON objects as ordered pair lists so repeated keys stay visible.
    return pairs


def _is_object(value: Any) -> bool:
    # The pairs hook hands over tuples; JSON arrays decode to lists of lists.
    return isinstance(value, list) and all(isinstance(item, tuple) for item in value)


def _label_from_value(value: Any) -> Optional[str]:
    """
    Extract the label from a scans value.

    Args:
        value: Either a label string or a verdict object with
            ``detected``/``result`` keys (as pair list)

    Returns:
        Trimmed label, or None if the engine did not detect the file
    """
    if value is None:
        return None
    if isinstance(value, str):
        label = value.strip()
        return label or None
    if _is_object(value):
        verdict = dict(value)
        if verdict.get("detected") is False:
            return None
        result = verdict.get("result")
        if isinstance(result, str):
            return result.strip() or None
        return None
    raise MalformedRecord(f"unsupported scan value of type {type(value).__name__}")


def _parse_scan_time(value: Any) -> Optional[datetime]:
    if value is None:
        return None
    if not isinstance(value, str):
        raise MalformedRecord("scan_time must be an ISO-8601 string")
    try:
        parsed = datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError as exc:
        raise MalformedRecord(f"bad scan_time {value!r}") from exc
    if parsed.tzinfo is None:
        return parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc)


def parse_record(line: str) -> ScanReport:
    """
    Turn one line of a report file into a ScanReport.

    Args:
        line: A single JSON object in the Scan Report File format

    Returns:
        Validated, deduplicated ScanReport

    Raises:
        MalformedRecord: if the record violates the file format
    """
    try:
        pairs = json.loads(line, object_pairs_hook=_first_wins)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"invalid JSON: {exc.msg}") from exc
    if not _is_object(pairs):
        raise MalformedRecord("record is not a JSON object")

    record: Dict[str, Any] = {}
    for key, value in pairs:
        record.setdefault(key, value)

    sha256 = record.get("sha256")
    if not isinstance(sha256, str):
        raise MalformedRecord("missing sha256")
    file_id = sha256.strip().lower()
    if not SHA256_PATTERN.match(file_id):
        raise MalformedRecord(f"sha256 {sha256!r} is not a 64-digit hex digest")

    scans = record.get("scans")
    if not _is_object(scans):
        raise MalformedRecord("missing scans object")

    detections: List[Tuple[str, str]] = []
    seen = set()
    for raw_engine, value in scans:
        engine = normalize_engine(raw_engine)
        if not engine or engine in seen:
            continue
        seen.add(engine)
        label = _label_from_value(value)
        if label is None:
            continue
        detections.append((engine, label))

    chunk = record.get("chunk")
    if chunk is not None and (isinstance(chunk, bool) or not isinstance(chunk, int) or chunk < 0):
        raise MalformedRecord("chunk must be a nonnegative integer")

    return ScanReport(
        file_id=file_id,
        detections=tuple(detections),
        scan_time=_parse_scan_time(record.get("scan_time")),
        source_chunk=chunk,
    )


def read_reports(path: str, strict: bool = False) -> Iterator[ScanReport]:
    """
    Stream ScanReports from a line-delimited report file in file order.

    Args:
        path: Report file path
        strict: Abort on the first malformed record instead of skipping it

    Yields:
        One ScanReport per valid line

    Raises:
        IngestError: unreadable path, or malformed record when strict
    """
    try:
        handle = open(path, "rb")
    except OSError as exc:
        raise IngestError(f"cannot read report file: {exc.strerror}", path=str(path)) from exc

    skipped = 0
    with handle:
        for line_number, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            try:
                report = parse_record(raw.decode("utf-8"))
            except (MalformedRecord, UnicodeDecodeError) as exc:
                reason = "not valid UTF-8" if isinstance(exc, UnicodeDecodeError) else str(exc)
                if strict:
                    raise IngestError(reason, path=str(path), line_number=line_number) from exc
                skipped += 1
                log.warning("%s:%d: skipping malformed record: %s", path, line_number, reason)
                continue
            yield report

    if skipped:
        log.warning("Skipped %d malformed record(s) in %s", skipped, path)


def corpus_stats(reports: Iterable[ScanReport]) -> CorpusStats:
    """Count reports, labels and per-engine detections in a single pass."""
    stats = CorpusStats()
    for report in reports:
        stats.add(report)
    return stats


def batched(reports: Iterable[ScanReport], size: int) -> Iterator[List[ScanReport]]:
    """Group a report stream into lists of at most ``size`` reports."""
    batch: List[ScanReport] = []
    for report in reports:
        batch.append(report)
        if len(batch) >= size:
            yield batch
            batch = []
    if batch:
        yield batch
