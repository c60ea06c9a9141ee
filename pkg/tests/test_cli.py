"""Command-line entry point: subcommands, output and exit codes."""

import json
from pathlib import Path

import pytest

import app
from tests import synthetic


@pytest.fixture
def corpus(synthetic_inputs, tmp_path):
    records, _ = synthetic.generate(200, seed=3)
    reports = synthetic.write_reports(str(tmp_path / "reports.jsonl"), records)
    args = [
        "--reports", reports,
        "--rules", synthetic_inputs["rules"],
        "--wordlist", synthetic_inputs["wordlist"],
        "--correlations", synthetic_inputs["correlations"],
        "--output-dir", synthetic_inputs["output_dir"],
        "--no-progress",
    ]
    return {"args": args, "records": records, "out": Path(synthetic_inputs["output_dir"])}


def run(command, *extra):
    return app.main([command, *extra])


def test_full_run(corpus, capsys, tmp_path):
    args = corpus["args"]
    assert run("pass1", *args) == 0
    assert "reports: 200" in capsys.readouterr().out

    assert run("alias", *args) == 0
    assert "BEH:" in capsys.readouterr().out

    assert run("tag", *args, "--threshold-beh", "3") == 0
    assert "of 200 reports" in capsys.readouterr().out
    tags = corpus["out"] / "tags.jsonl"
    assert sum(1 for _ in tags.open()) == 200

    metrics = tmp_path / "metrics.jsonl"
    assert run("eval", str(tags), "--reference", str(tags), "--output", str(metrics), *args) == 0
    assert "micro_f1: 1.000" in capsys.readouterr().out
    averages = [json.loads(line) for line in metrics.read_text().splitlines()]
    assert {"average": "micro", "mode": "multilabel", "precision": 1.0, "recall": 1.0, "f1": 1.0} in averages

    assert run("build", str(tags), "--category", "BEH", "--mode", "stratified", *args) == 0
    assert "BEH:" in capsys.readouterr().out
    assert (corpus["out"] / "manifest.beh.jsonl").exists()

    chart = tmp_path / "stats.html"
    manifest = str(corpus["out"] / "manifest.beh.jsonl")
    assert run("stats", "--tags", str(tags), "--manifest", manifest, "--top", "3", "--html", str(chart), *args) == 0
    out = capsys.readouterr().out
    assert "reports: 200" in out
    assert "unused_rules" in out
    assert "BEH manifest:" in out
    assert "token statistics:" in out
    assert "observations" in out
    assert chart.exists()


def test_missing_rules_is_config_error(corpus, tmp_path, capsys):
    args = list(corpus["args"])
    args[args.index("--rules") + 1] = str(tmp_path / "nope.rules")
    assert run("pass1", *args) == 2
    assert "rules not found" in capsys.readouterr().err
    assert not corpus["out"].exists()


def test_invalid_threads_is_config_error(corpus):
    assert run("pass1", *corpus["args"], "--threads", "0") == 2


def test_strict_malformed_record_is_ingest_error(corpus, tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"sha256": "%s", "scans": {}}\nnot json\n' % synthetic.sha(1))
    args = list(corpus["args"])
    args[args.index("--reports") + 1] = str(bad)
    assert run("pass1", *args, "--strict") == 3
    assert ":2:" in capsys.readouterr().err


def test_bad_wordlist_is_validation_error(corpus, tmp_path):
    wordlist = tmp_path / "bad.wordlist"
    wordlist.write_text("token\tNOTACATEGORY\n")
    args = list(corpus["args"])
    args[args.index("--wordlist") + 1] = str(wordlist)
    assert run("pass1", *args) == 4


def test_alias_before_pass1_is_validation_error(corpus, capsys):
    assert run("alias", *corpus["args"]) == 4
    assert "run the earlier stage first" in capsys.readouterr().err


def test_eval_needs_a_truth_source(corpus):
    with pytest.raises(SystemExit) as excinfo:
        run("eval", "tags.jsonl", *corpus["args"])
    assert excinfo.value.code == 2


def test_unknown_category_rejected(corpus):
    with pytest.raises(SystemExit):
        run("build", "tags.jsonl", "--category", "FAM", *corpus["args"])


def test_stats_without_inputs(tmp_path):
    assert run("stats", "--output-dir", str(tmp_path / "empty"), "--no-progress") == 2


def test_stats_bad_manifest_is_validation_error(tmp_path):
    manifest = tmp_path / "m.jsonl"
    manifest.write_text('{"sha256":"x","split":"train","tags":[]}\n')
    assert run("stats", "--manifest", str(manifest), "--output-dir", str(tmp_path / "out"), "--no-progress") == 4
