"""Tests for scan report ingestion."""

import pytest

from core.errors import IngestError
from core.scan_ingest import MalformedRecord, ScanReport, batched, corpus_stats, parse_record, read_reports
from tests.synthetic import sha

ZERO = "0" * 64


def test_minimal_record():
    report = parse_record('{"sha256":"%s","scans":{"EngA":"Trojan:Win32.Androm.abc"}}' % ZERO)
    assert report.file_id == ZERO
    assert report.detections == (("enga", "Trojan:Win32.Androm.abc"),)


def test_duplicate_engine_keeps_first():
    report = parse_record('{"sha256":"%s","scans":{"EngA":"First","enga":"Second"}}' % ZERO)
    assert report.detections == (("enga", "First"),)


def test_duplicate_engine_with_empty_first_label_is_not_replaced():
    report = parse_record('{"sha256":"%s","scans":{"EngA":"","EngA":"Second","EngB":"Other"}}' % ZERO)
    assert report.detections == (("engb", "Other"),)


def test_empty_label_dropped():
    report = parse_record('{"sha256":"%s","scans":{"EngA":"  ","EngB":"Worm.X"}}' % ZERO)
    assert report.engines == ["engb"]


def test_verdict_objects():
    line = (
        '{"sha256":"%s","scans":{"a":{"detected":true,"result":"Worm.X"},'
        '"b":{"detected":false,"result":null},"c":{"detected":true,"result":null}}}' % ZERO
    )
    assert parse_record(line).detections == (("a", "Worm.X"),)


def test_uppercase_digest_is_lowered():
    report = parse_record('{"sha256":"%s","scans":{}}' % ("AB" * 32))
    assert report.file_id == "ab" * 32


def test_optional_fields():
    line = '{"sha256":"%s","scans":{},"scan_time":"2020-01-02T03:04:05Z","chunk":12,"extra":1}' % ZERO
    report = parse_record(line)
    assert report.source_chunk == 12
    assert report.scan_time.year == 2020
    assert report.scan_time.utcoffset().total_seconds() == 0


@pytest.mark.parametrize(
    "line",
    [
        "not json",
        "[1, 2]",
        '{"scans":{}}',
        '{"sha256":"abc","scans":{}}',
        '{"sha256":"%s"}' % ZERO,
        '{"sha256":"%s","scans":["a"]}' % ZERO,
        '{"sha256":"%s","scans":{},"chunk":-1}' % ZERO,
        '{"sha256":"%s","scans":{},"chunk":true}' % ZERO,
        '{"sha256":"%s","scans":{},"scan_time":"yesterday"}' % ZERO,
        '{"sha256":"%s","scans":{"a":5}}' % ZERO,
    ],
)
def test_malformed_records(line):
    with pytest.raises(MalformedRecord):
        parse_record(line)


def test_read_reports_skips_bad_lines(write_file, caplog):
    path = write_file(
        "reports.jsonl",
        '{"sha256":"%s","scans":{"a":"X.Y"}}\n' % sha(1)
        + "garbage\n"
        + "\n"
        + '{"sha256":"%s","scans":{"b":"Z"}}\n' % sha(2),
    )
    reports = list(read_reports(path))
    assert [report.file_id for report in reports] == [sha(1), sha(2)]
    assert "skipping malformed record" in caplog.text


def test_read_reports_strict_reports_line_number(write_file):
    path = write_file("reports.jsonl", '{"sha256":"%s","scans":{}}\ngarbage\n' % sha(1))
    with pytest.raises(IngestError) as excinfo:
        list(read_reports(path, strict=True))
    assert excinfo.value.line_number == 2
    assert excinfo.value.exit_code == 3


def invalid_utf8_file(tmp_path):
    good = ['{"sha256":"%s","scans":{"a":"Worm.%s"}}\n' % (sha(i), "x" * 5000) for i in range(3)]
    path = tmp_path / "mixed.jsonl"
    path.write_bytes(
        good[0].encode() + good[1].encode() + b'{"sha256":"\xff\xfe"}\n' + good[2].encode()
    )
    return str(path)


def test_read_reports_skips_invalid_utf8_line(tmp_path, caplog):
    path = invalid_utf8_file(tmp_path)
    reports = list(read_reports(path))
    assert [report.file_id for report in reports] == [sha(0), sha(1), sha(2)]
    assert ":3: skipping malformed record: not valid UTF-8" in caplog.text


def test_read_reports_strict_invalid_utf8_line_number(tmp_path):
    with pytest.raises(IngestError) as excinfo:
        list(read_reports(invalid_utf8_file(tmp_path), strict=True))
    assert excinfo.value.line_number == 3


def test_read_reports_missing_file(tmp_path):
    with pytest.raises(IngestError):
        list(read_reports(str(tmp_path / "missing.jsonl")))


def test_read_reports_is_deterministic(write_file):
    text = "".join('{"sha256":"%s","scans":{"a":"W.%d","b":"V"}}\n' % (sha(i), i) for i in range(20))
    path = write_file("reports.jsonl", text)
    assert list(read_reports(path)) == list(read_reports(path))


def test_corpus_stats_examples():
    empty = corpus_stats([])
    assert empty.to_dict() == {"report_count": 0, "engine_counts": {}, "label_count": 0}

    one = ScanReport(file_id=ZERO, detections=(("enga", "X"),))
    stats = corpus_stats([one, one])
    assert stats.engine_counts == {"enga": 2}
    assert stats.label_count == 2

    both = ScanReport(file_id=ZERO, detections=(("enga", "X"), ("engb", "Y")))
    assert corpus_stats([both]).label_count == 2


def test_corpus_stats_merge_matches_single_pass():
    reports = [ScanReport(file_id=sha(i), detections=(("a", "X"),) * (i % 2) + (("b", "Y"),)) for i in range(7)]
    merged = corpus_stats(reports[:3]).merge(corpus_stats(reports[3:]))
    assert merged.to_dict() == corpus_stats(reports).to_dict()
    assert merged.label_count == sum(merged.engine_counts.values())


def test_batched():
    reports = [ScanReport(file_id=sha(i), detections=()) for i in range(5)]
    assert [len(batch) for batch in batched(reports, 2)] == [2, 2, 1]
