"""
Stats Store Module

Persists first-pass corpus statistics (vocabulary observation counts,
per-category token and pair report counts, trivial alias maps) in a sqlite
database so the alias and tag stages can run as separate commands.
"""

import logging
import os
import sqlite3
from contextlib import closing
from typing import Dict, Iterable, Mapping, Optional

import orjson

from core.alias_resolver import TokenStats
from core.errors import ValidationError
from core.label_parser import LexicalCategory
from core.vocabulary import Vocabulary

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1"

_SCHEMA = (
    """
    CREATE TABLE IF NOT EXISTS vocab_counts (
        token TEXT NOT NULL,
        category TEXT NOT NULL,
        count INTEGER NOT NULL,
        PRIMARY KEY (token, category)
    )
    """,
    """
    CREATE TABLE IF NOT EXISTS token_counts (
        category TEXT NOT NULL,
        token TEXT NOT NULL,
        reports INTEGER NOT NULL,
        PRIMARY KEY (category, token)
    )
    """,
    """
    CREATE TABLE IF NOT EXISTS pair_counts (
        category TEXT NOT NULL,
        first TEXT NOT NULL,
        second TEXT NOT NULL,
        reports INTEGER NOT NULL,
        PRIMARY KEY (category, first, second)
    )
    """,
    """
    CREATE TABLE IF NOT EXISTS trivial_aliases (
        category TEXT NOT NULL,
        token TEXT NOT NULL,
        canonical TEXT NOT NULL,
        PRIMARY KEY (category, token)
    )
    """,
    """
    CREATE TABLE IF NOT EXISTS meta (
        key TEXT PRIMARY KEY,
        value TEXT NOT NULL
    )
    """,
)


class TokenStatsStore:
    """sqlite-backed store for first-pass statistics."""

    FILENAME = "token_stats.db"

    def __init__(self, db_path: str, create: bool = False):
        """
        Open a statistics database.

        Args:
            db_path: Database file
            create: Create the schema; otherwise the file must already exist

        Raises:
            ValidationError: missing or unreadable database
        """
        self.db_path = str(db_path)
        if not create and not os.path.exists(self.db_path):
            raise ValidationError("token statistics not found; run pass1 first", path=self.db_path)
        if create:
            self._init_db()
        elif self.get_meta("schema_version") != SCHEMA_VERSION:
            raise ValidationError("unsupported token statistics schema", path=self.db_path)

    def _connect(self) -> sqlite3.Connection:
        try:
            return sqlite3.connect(self.db_path)
        except sqlite3.Error as exc:
            raise ValidationError(f"cannot open token statistics: {exc}", path=self.db_path) from exc

    def _init_db(self) -> None:
        """Initialize the schema."""
        with closing(self._connect()) as conn:
            with conn:
                for statement in _SCHEMA:
                    conn.execute(statement)
                conn.execute(
                    "INSERT OR REPLACE INTO meta (key, value) VALUES (?, ?)", ("schema_version", SCHEMA_VERSION),
                )

    def _query(self, sql: str, params: tuple = ()) -> list:
        try:
            with closing(self._connect()) as conn:
                return conn.execute(sql, params).fetchall()
        except sqlite3.Error as exc:
            raise ValidationError(f"token statistics read failed: {exc}", path=self.db_path) from exc

    def set_meta(self, key: str, value) -> None:
        with closing(self._connect()) as conn:
            with conn:
                conn.execute(
                    "INSERT OR REPLACE INTO meta (key, value) VALUES (?, ?)",
                    (key, orjson.dumps(value).decode()),
                )

    def get_meta(self, key: str, default=None):
        try:
            rows = self._query("SELECT value FROM meta WHERE key = ?", (key,))
        except ValidationError:
            return default
        if not rows:
            return default
        if key == "schema_version":
            return rows[0][0]
        return orjson.loads(rows[0][0])

    def save_vocabulary(self, vocabulary: Vocabulary) -> int:
        """
        Store observation counts of a vocabulary.

        Returns:
            Number of (token, category) rows written
        """
        rows = [
            (token, category.value, count)
            for token, counter in vocabulary.counts.items()
            for category, count in counter.items()
        ]
        with closing(self._connect()) as conn:
            with conn:
                conn.execute("DELETE FROM vocab_counts")
                conn.executemany("INSERT INTO vocab_counts (token, category, count) VALUES (?, ?, ?)", rows)
        log.debug("Stored %d vocabulary rows", len(rows))
        return len(rows)

    def load_vocabulary(self) -> Vocabulary:
        """Rebuild a vocabulary from stored counts and promote it."""
        vocabulary = Vocabulary()
        for token, category, count in self._query("SELECT token, category, count FROM vocab_counts"):
            vocabulary.counts[token][LexicalCategory(category)] += count
        return vocabulary.promote()

    def save_token_stats(self, stats: Iterable[TokenStats]) -> None:
        with closing(self._connect()) as conn:
            with conn:
                conn.execute("DELETE FROM token_counts")
                conn.execute("DELETE FROM pair_counts")
                for category_stats in stats:
                    category = category_stats.category.value
                    conn.executemany(
                        "INSERT INTO token_counts (category, token, reports) VALUES (?, ?, ?)",
                        [(category, token, count) for token, count in category_stats.token_report_counts.items()],
                    )
                    conn.executemany(
                        "INSERT INTO pair_counts (category, first, second, reports) VALUES (?, ?, ?, ?)",
                        [(category, a, b, count) for (a, b), count in category_stats.pair_report_counts.items()],
                    )

    def load_token_stats(self, category: LexicalCategory) -> TokenStats:
        stats = TokenStats(category=category)
        for token, count in self._query(
            "SELECT token, reports FROM token_counts WHERE category = ?", (category.value,)
        ):
            stats.token_report_counts[token] = count
        for first, second, count in self._query(
            "SELECT first, second, reports FROM pair_counts WHERE category = ?", (category.value,)
        ):
            stats.pair_report_counts[(first, second)] = count
        return stats

    def save_trivial_aliases(self, trivial: Mapping[LexicalCategory, Mapping[str, str]]) -> None:
        with closing(self._connect()) as conn:
            with conn:
                conn.execute("DELETE FROM trivial_aliases")
                for category, mapping in trivial.items():
                    conn.executemany(
                        "INSERT INTO trivial_aliases (category, token, canonical) VALUES (?, ?, ?)",
                        [(category.value, token, target) for token, target in mapping.items()],
                    )

    def load_trivial_aliases(self, category: LexicalCategory) -> Dict[str, str]:
        rows = self._query(
            "SELECT token, canonical FROM trivial_aliases WHERE category = ?", (category.value,)
        )
        return dict(rows)

    def categories(self) -> list:
        """Categories that have token statistics, in enum order."""
        present = {row[0] for row in self._query("SELECT DISTINCT category FROM token_counts")}
        return [category for category in LexicalCategory if category.value in present]

    def summary(self, category: Optional[LexicalCategory] = None) -> Dict[str, int]:
        """
        Distinct tokens and co-occurring pairs with report counts, for one
        category or over all of them; the all-category form adds the number of
        observed vocabulary tokens.
        """
        if category is None:
            tokens = self._query("SELECT COUNT(*) FROM token_counts")[0][0]
            pairs = self._query("SELECT COUNT(*) FROM pair_counts")[0][0]
            vocab = self._query("SELECT COUNT(DISTINCT token) FROM vocab_counts")[0][0]
            return {"vocabulary_tokens": vocab, "tokens": tokens, "pairs": pairs}
        tokens = self._query("SELECT COUNT(*) FROM token_counts WHERE category = ?", (category.value,))[0][0]
        pairs = self._query("SELECT COUNT(*) FROM pair_counts WHERE category = ?", (category.value,))[0][0]
        return {"tokens": tokens, "pairs": pairs}
