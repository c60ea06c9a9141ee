"""Tests for the sqlite token statistics store."""

import sqlite3

import pytest

from core.alias_resolver import TokenStats
from core.errors import ValidationError
from core.label_parser import LexicalCategory as C
from core.vocabulary import Vocabulary
from utils.stats_store import TokenStatsStore


@pytest.fixture
def store(tmp_path):
    return TokenStatsStore(str(tmp_path / TokenStatsStore.FILENAME), create=True)


def test_vocabulary_round_trip(store):
    vocabulary = Vocabulary()
    vocabulary.counts["worm"][C.BEH] = 3
    vocabulary.counts["worm"][C.PRE] = 9
    vocabulary.counts["upx"][C.PACK] = 1
    assert store.save_vocabulary(vocabulary) == 3

    loaded = store.load_vocabulary()
    assert loaded.counts["worm"][C.PRE] == 9
    assert loaded.resolved == {"worm": C.BEH, "upx": C.PACK}


def test_token_stats_round_trip(store):
    beh = TokenStats(C.BEH)
    beh.add_report(["worm", "spyware"])
    beh.add_report(["worm"])
    plat = TokenStats(C.PLAT)
    plat.add_report(["android"])
    store.save_token_stats([beh, plat])

    assert store.load_token_stats(C.BEH) == beh
    assert store.load_token_stats(C.PLAT).token_report_counts == {"android": 1}
    assert store.categories() == [C.BEH, C.PLAT]
    assert store.summary(C.BEH) == {"tokens": 2, "pairs": 1}
    assert store.summary()["tokens"] == 3


def test_trivial_aliases_and_meta(store):
    store.save_trivial_aliases({C.BEH: {"worms": "worm"}, C.PACK: {}})
    assert store.load_trivial_aliases(C.BEH) == {"worms": "worm"}
    assert store.load_trivial_aliases(C.PACK) == {}

    store.set_meta("corpus", {"report_count": 3})
    assert store.get_meta("corpus") == {"report_count": 3}
    assert store.get_meta("absent", 7) == 7


def test_reopen_existing(store):
    assert TokenStatsStore(store.db_path).get_meta("schema_version") == "1"


def test_missing_database(tmp_path):
    with pytest.raises(ValidationError):
        TokenStatsStore(str(tmp_path / "missing.db"))


def test_foreign_database_is_rejected(tmp_path):
    path = tmp_path / "other.db"
    with sqlite3.connect(path) as conn:
        conn.execute("CREATE TABLE t (x)")
    with pytest.raises(ValidationError):
        TokenStatsStore(str(path))
