"""
Vocabulary Module

Aggregates per-token lexical-category observations across a corpus, promotes
ambiguous tokens whose unambiguous observations are unanimous, and reads and
writes the user-editable wordlist.
"""

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple, Union

from core.errors import WordlistError
from core.label_parser import AMBIGUOUS_CATEGORIES, LexicalCategory, ParsedLabel
from utils.helpers import atomic_output

log = logging.getLogger(__name__)

GENERIC = "GEN"

# Category names accepted in a wordlist file
WORDLIST_CATEGORIES = ("BEH", "PLAT", "VULN", "PACK", "FAM", "SUF", GENERIC)


@dataclass
class WordlistOverlay:
    """User-editable token assignments: explicit categories plus generic tokens."""

    entries: Dict[str, LexicalCategory] = field(default_factory=dict)
    generic: Set[str] = field(default_factory=set)

    def set(self, token: str, category: str) -> None:
        if category == GENERIC:
            self.entries.pop(token, None)
            self.generic.add(token)
        else:
            self.generic.discard(token)
            self.entries[token] = LexicalCategory.parse(category)


class Vocabulary:
    """Global token -> lexical category map with per-category observation counts."""

    def __init__(self):
        self.counts: Dict[str, Counter] = defaultdict(Counter)
        self.promoted: Dict[str, LexicalCategory] = {}
        self.overrides: Dict[str, LexicalCategory] = {}
        self.generic: Set[str] = set()

    @property
    def resolved(self) -> Dict[str, LexicalCategory]:
        """Promoted assignments with wordlist overrides on top, generic tokens removed."""
        merged = dict(self.promoted)
        merged.update(self.overrides)
        for token in self.generic:
            merged.pop(token, None)
        return merged

    def lookup(self, token: str) -> Optional[LexicalCategory]:
        if token in self.generic:
            return None
        category = self.overrides.get(token)
        if category is None:
            category = self.promoted.get(token)
        return category

    def is_generic(self, token: str) -> bool:
        return token in self.generic

    def observe(self, parsed: ParsedLabel) -> "Vocabulary":
        """Add one observation per (token, category) of a parsed label."""
        for token, category in zip(parsed.tokens, parsed.categories):
            self.counts[token][category] += 1
        return self

    def merge(self, other: "Vocabulary") -> "Vocabulary":
        """Pointwise addition of another shard's observation counts."""
        for token, counter in other.counts.items():
            self.counts[token].update(counter)
        return self

    def promote(self) -> "Vocabulary":
        """
        Resolve every token whose non-ambiguous observations agree on one category.

        Tokens with no non-ambiguous observation, or with conflicting ones,
        stay unresolved. Recomputed from counts, so repeated calls agree.
        """
        promoted = {}
        for token, counter in self.counts.items():
            candidates = {
                category for category, count in counter.items()
                if count > 0 and category not in AMBIGUOUS_CATEGORIES
            }
            if len(candidates) == 1:
                promoted[token] = candidates.pop()
        self.promoted = promoted
        log.debug("Promoted %d of %d tokens", len(promoted), len(self.counts))
        return self

    def apply(self, overlay: WordlistOverlay) -> "Vocabulary":
        """Layer wordlist entries over promoted assignments."""
        for token, category in overlay.entries.items():
            self.generic.discard(token)
            self.overrides[token] = category
        for token in overlay.generic:
            self.overrides.pop(token, None)
            self.generic.add(token)
        return self

    def overlay(self) -> WordlistOverlay:
        return WordlistOverlay(entries=self.resolved, generic=set(self.generic))

    def refine(self, parsed: ParsedLabel) -> Tuple[Optional[LexicalCategory], ...]:
        """
        Second-pass categories for a parsed label.

        Generic tokens map to None. Tokens parsed as PRE or UNK take their
        resolved category when the vocabulary knows one.
        """
        refined: List[Optional[LexicalCategory]] = []
        for token, category in zip(parsed.tokens, parsed.categories):
            if token in self.generic:
                refined.append(None)
            elif category in AMBIGUOUS_CATEGORIES:
                refined.append(self.lookup(token) or category)
            else:
                refined.append(category)
        return tuple(refined)

    def top_tokens(self, category: LexicalCategory, n: int = 10) -> List[Tuple[str, int]]:
        """Most frequently observed tokens resolved to ``category``."""
        resolved = self.resolved
        ranked = [
            (token, sum(self.counts[token].values()))
            for token, token_category in resolved.items()
            if token_category is category
        ]
        ranked.sort(key=lambda item: (-item[1], item[0]))
        return ranked[:n]

    def __len__(self) -> int:
        return len(self.counts)


def load_wordlist(path: Union[str, Path]) -> WordlistOverlay:
    """
    Read a Wordlist File (``token<TAB>CATEGORY`` per line, ``#`` comments).

    Args:
        path: Wordlist file path

    Returns:
        WordlistOverlay

    Raises:
        WordlistError: malformed line or unknown category name
    """
    path = str(path)
    overlay = WordlistOverlay()
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise WordlistError(f"cannot read wordlist: {exc.strerror}", path=path) from exc

    with handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2 or not fields[0].strip():
                raise WordlistError("expected token<TAB>CATEGORY", path=path, line_number=line_number)
            token, category = fields[0].strip().lower(), fields[1].strip().upper()
            if category not in WORDLIST_CATEGORIES:
                raise WordlistError(f"unknown category {fields[1].strip()!r}", path=path, line_number=line_number)
            overlay.set(token, category)
    return overlay


def write_wordlist(overlay: WordlistOverlay, path: Union[str, Path]) -> None:
    """Write entries and generic tokens sorted by token."""
    rows = [(token, category.value) for token, category in overlay.entries.items()]
    rows.extend((token, GENERIC) for token in overlay.generic)
    rows.sort()
    with atomic_output(path, "w") as handle:
        for token, category in rows:
            handle.write(f"{token}\t{category}\n")


def save_wordlist(vocabulary: Vocabulary, path: Union[str, Path]) -> None:
    """Persist the resolved and generic tokens of a vocabulary."""
    write_wordlist(vocabulary.overlay(), path)
