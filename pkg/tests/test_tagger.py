"""Tests for vote counting and tag ranking."""

import pytest
from hypothesis import given, settings, strategies as st

from core.alias_resolver import AliasMap
from core.errors import CorrelationFileError, ValidationError
from core.label_parser import Fixed, LexicalCategory as C, ParseRule, RuleSet, load_rules
from core.scan_ingest import ScanReport
from core.tagger import (
    CorrelationGroups,
    TaggingContext,
    TagRanking,
    Thresholds,
    load_correlation_groups,
    rank_tags,
    read_tag_file,
    score_tokens,
    tag_corpus,
)
from core.vocabulary import Vocabulary
from tests import synthetic
from tests.synthetic import sha
from utils.config import DATA_DIR


def beh_rules(engines):
    return RuleSet(ParseRule(engine, "TOK.TOK", (Fixed(C.BEH), Fixed(C.SUF))) for engine in engines)


def test_correlated_engines_vote_once():
    groups = CorrelationGroups.from_groups([["mcafee", "mcafee-gw-edition"]])
    report = ScanReport(sha(1), (("mcafee", "Ransomware.a"), ("mcafee-gw-edition", "Ransomware.b")))
    scores = score_tokens(report, beh_rules(["mcafee", "mcafee-gw-edition"]), Vocabulary(), {}, groups)
    assert scores == {(C.BEH, "ransomware"): 1}


def test_independent_engines_add_up():
    engines = [f"e{index}" for index in range(6)]
    report = ScanReport(sha(1), tuple((engine, "Worm.x") for engine in engines))
    scores = score_tokens(report, beh_rules(engines), Vocabulary(), {}, CorrelationGroups())
    assert scores == {(C.BEH, "worm"): 6}


def test_repeated_token_in_one_label_counts_once():
    rules = RuleSet([ParseRule("e", "TOK.TOK.TOK", (Fixed(C.PACK), Fixed(C.PACK), Fixed(C.SUF)))])
    report = ScanReport(sha(1), (("e", "Upx.upx.a"),))
    assert score_tokens(report, rules, Vocabulary(), {}, CorrelationGroups()) == {(C.PACK, "upx"): 1}


@given(k=st.integers(min_value=1, max_value=30), m=st.integers(min_value=0, max_value=29))
@settings(max_examples=200)
def test_vote_collapse(k, m):
    if k + m > 30:
        return
    grouped = [f"g{index}" for index in range(k)]
    singles = [f"s{index}" for index in range(m)]
    groups = CorrelationGroups.from_groups([grouped])
    report = ScanReport(sha(k * 100 + m), tuple((engine, "Worm.abc") for engine in grouped + singles))
    scores = score_tokens(report, beh_rules(grouped + singles), Vocabulary(), {}, groups)
    assert scores[(C.BEH, "worm")] == m + 1


def test_generic_aliased_and_non_tag_tokens():
    rules = RuleSet([
        ParseRule(engine, "TOK:TOK/TOK.TOK", (Fixed(C.BEH), Fixed(C.PLAT), Fixed(C.FAM), Fixed(C.SUF)))
        for engine in ("a", "b")
    ])
    vocabulary = Vocabulary()
    vocabulary.generic.add("trojan")
    aliases = {C.PLAT: AliasMap(C.PLAT, {"w32": "win32"})}
    report = ScanReport(sha(1), (("a", "Trojan:W32/Zbot.a"), ("b", "Worm:Win32/Zbot.b")))
    scores = score_tokens(report, rules, vocabulary, aliases, CorrelationGroups())
    assert scores == {(C.PLAT, "win32"): 2, (C.BEH, "worm"): 1}


def test_rank_tags_examples():
    scores = {
        (C.BEH, "worm"): 4,
        (C.VULN, "cve_2017_0144"): 1,
        (C.BEH, "ransomware"): 7,
        (C.BEH, "spyware"): 9,
    }
    ranking = rank_tags(scores, Thresholds(), file_id=sha(1))
    assert ranking.tags[C.BEH] == [("spyware", 9), ("ransomware", 7)]
    assert ranking.tags[C.VULN] == [("cve_2017_0144", 1)]

    tie = rank_tags({(C.BEH, "worm"): 7, (C.BEH, "ransomware"): 7}, Thresholds())
    assert [token for token, _ in tie.tags[C.BEH]] == ["ransomware", "worm"]


def test_thresholds_validation():
    with pytest.raises(ValueError):
        Thresholds(beh=0)
    assert Thresholds.uniform(3).get(C.PACK) == 3
    assert Thresholds().get(C.BEH) == 5 and Thresholds().get(C.VULN) == 1


def test_load_correlation_groups(write_file):
    groups = load_correlation_groups(write_file("c.txt", "# groups\nMcAfee, mcafee-gw-edition\n"))
    assert groups.groups == [frozenset({"mcafee", "mcafee-gw-edition"})]
    assert groups.group_of("mcafee") == groups.group_of("mcafee-gw-edition")
    assert groups.group_of("eset") != groups.group_of("avast")

    empty = load_correlation_groups(write_file("empty.txt", ""))
    assert empty.groups == []

    with pytest.raises(CorrelationFileError):
        load_correlation_groups(write_file("dup.txt", "a,b\nc,a\n"))
    with pytest.raises(CorrelationFileError):
        load_correlation_groups(write_file("blank.txt", "a,,b\n"))


def test_bundled_correlations_are_disjoint():
    groups = load_correlation_groups(DATA_DIR / "default.correlations")
    assert groups.group_of("mcafee") == groups.group_of("mcafee-gw-edition")


def test_tag_corpus_empty_and_order(exploit_rules):
    context = TaggingContext(exploit_rules, Vocabulary(), {}, CorrelationGroups(), Thresholds.uniform(1))
    reports = [
        ScanReport(sha(1), ()),
        ScanReport(sha(2), (("enga", "Exploit:Win32/MS08067.xyz"),), source_chunk=3),
    ]
    rankings = list(tag_corpus(reports, context))
    assert [ranking.file_id for ranking in rankings] == [sha(1), sha(2)]
    assert rankings[0].is_empty()
    assert rankings[1].tags[C.VULN] == [("ms08_067", 1)]
    assert rankings[1].to_record()["chunk"] == 3


def test_ransomware_report_votes():
    rules = load_rules(DATA_DIR / "default.rules")
    report = ScanReport(sha(5), (
        ("microsoft", "Ransom:Win32/WannaCrypt.A!rsm"),
        ("kaspersky", "Trojan-Ransom.Win32.Wanna.m"),
        ("eset-nod32", "Win32/Exploit.CVE-2017-0147.A"),
        ("sophos", "Troj/Ransom-EMG"),
        ("drweb", "Trojan.Encoder.11432"),
        ("fortinet", "W32/WannaCryptor.H!tr.ransom"),
    ))
    aliases = {C.BEH: AliasMap(C.BEH, {"ransom": "ransomware", "encoder": "ransomware"})}
    context = TaggingContext(rules, Vocabulary(), aliases, CorrelationGroups(), Thresholds.uniform(1))
    ranking = list(tag_corpus([report], context))[0]
    assert ranking.tags[C.BEH][0] == ("ransomware", 4)
    assert ranking.tags[C.VULN] == [("cve_2017_0147", 1)]


def test_threshold_monotonicity(synthetic_inputs):
    records, _ = synthetic.generate(1000, seed=3)
    reports = synthetic.scan_reports(records)
    rules = load_rules(synthetic_inputs["rules"])
    groups = load_correlation_groups(synthetic_inputs["correlations"])

    previous = None
    for threshold in range(1, 6):
        context = TaggingContext(rules, Vocabulary(), {}, groups, Thresholds.uniform(threshold))
        current = [
            {(category, token) for category in (C.BEH, C.PLAT) for token in ranking.tag_set(category)}
            for ranking in tag_corpus(reports, context)
        ]
        if previous is not None:
            assert all(now <= before for now, before in zip(current, previous))
        previous = current


def test_tag_corpus_workers_match_inline(synthetic_inputs):
    records, _ = synthetic.generate(60, seed=4)
    reports = synthetic.scan_reports(records)
    context = TaggingContext(
        load_rules(synthetic_inputs["rules"]), Vocabulary(), {},
        load_correlation_groups(synthetic_inputs["correlations"]), Thresholds.uniform(2),
    )
    inline = [ranking.to_record() for ranking in tag_corpus(reports, context)]
    pooled = [ranking.to_record() for ranking in tag_corpus(reports, context, workers=2, batch_size=7)]
    assert pooled == inline


def test_ranking_record_round_trip_and_reader(write_file):
    ranking = TagRanking(sha(1), source_chunk=2)
    ranking.tags[C.BEH] = [("worm", 6)]
    record = ranking.to_record()
    assert record == {"sha256": sha(1), "beh": [{"tag": "worm", "score": 6}], "plat": [], "vuln": [], "pack": [], "chunk": 2}
    assert TagRanking.from_record(record) == ranking
    assert TagRanking.from_record({"sha256": sha(2), "beh": ["Worm"]}).tags[C.BEH] == [("worm", 1)]

    path = write_file("tags.jsonl", '{"sha256":"%s","beh":["worm"]}\n{"beh":[]}\n' % sha(1))
    with pytest.raises(ValidationError) as excinfo:
        list(read_tag_file(path))
    assert excinfo.value.line_number == 2


@pytest.mark.parametrize(
    "engine, label",
    [
        ("microsoft", "Exploit:Win32/CVE-2017-0144"),
        ("eset-nod32", "Win32/Exploit.CVE-2017-0144.A"),
        ("symantec", "Exploit.CVE20170144"),
        ("microsoft", "Exploit:Win32/CVE_2017_0144.xyz"),
    ],
)
def test_default_rules_tag_vulnerability_ids(engine, label):
    context = TaggingContext(
        load_rules(DATA_DIR / "default.rules"), Vocabulary(), {}, CorrelationGroups(), Thresholds(),
    )
    ranking = list(tag_corpus([ScanReport(sha(9), ((engine, label),))], context))[0]
    assert ranking.tags[C.VULN] == [("cve_2017_0144", 1)]
