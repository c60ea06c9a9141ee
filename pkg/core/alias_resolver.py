"""
Alias Resolver Module

Discovers tokens with identical meaning inside one lexical category and maps
them to a canonical spelling:

- trivial aliases: one trailing character, or one common affix, apart
- parent-child aliases: a less common token that co-occurs with a more
  common one in most reports and is spelled similarly
- user overrides from an alias file, which always take precedence
"""

import logging
from collections import defaultdict, deque
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import Levenshtein

from core.errors import AliasFileError
from core.label_parser import LexicalCategory
from utils.helpers import atomic_output

log = logging.getLogger(__name__)

SUBSTRING_ANAGRAM_FLOOR = 0.75

DEFAULT_AFFIXES = ("win", "w", "mal", "trojan", "er", "agent")


@dataclass
class TokenStats:
    """Distinct-report counts for tokens and token pairs of one category."""

    category: LexicalCategory
    token_report_counts: Dict[str, int] = field(default_factory=dict)
    pair_report_counts: Dict[Tuple[str, str], int] = field(default_factory=dict)

    def add_report(self, tokens: Iterable[str]) -> None:
        """Count one report's distinct tokens and every unordered pair of them."""
        distinct = sorted(set(tokens))
        for token in distinct:
            self.token_report_counts[token] = self.token_report_counts.get(token, 0) + 1
        for pair in combinations(distinct, 2):
            self.pair_report_counts[pair] = self.pair_report_counts.get(pair, 0) + 1

    def merge(self, other: "TokenStats") -> "TokenStats":
        for token, count in other.token_report_counts.items():
            self.token_report_counts[token] = self.token_report_counts.get(token, 0) + count
        for pair, count in other.pair_report_counts.items():
            self.pair_report_counts[pair] = self.pair_report_counts.get(pair, 0) + count
        return self

    def count(self, token: str) -> int:
        return self.token_report_counts.get(token, 0)

    def pair(self, first: str, second: str) -> int:
        if first == second:
            return self.count(first)
        key = (first, second) if first < second else (second, first)
        return self.pair_report_counts.get(key, 0)

    def tokens_by_frequency(self) -> List[str]:
        """Tokens by report count descending, ties lexicographically ascending."""
        return sorted(self.token_report_counts, key=lambda token: (-self.token_report_counts[token], token))


@dataclass
class AliasMap:
    """Token -> canonical token map for one lexical category (None: any category)."""

    category: Optional[LexicalCategory] = None
    canonical: Dict[str, str] = field(default_factory=dict)

    def apply(self, token: str) -> str:
        return self.canonical.get(token, token)

    def __len__(self) -> int:
        return len(self.canonical)

    def __contains__(self, token: str) -> bool:
        return token in self.canonical


@dataclass(frozen=True)
class AliasParams:
    """Thresholds for parent-child aliasing and the trivial-alias affix list."""

    E: float = 0.6
    C: float = 0.5
    substring_anagram_floor: float = SUBSTRING_ANAGRAM_FLOOR
    affix_list: Tuple[str, ...] = DEFAULT_AFFIXES

    def __post_init__(self):
        for name in ("E", "C"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {value}")
        if not 0 <= self.substring_anagram_floor <= 1:
            raise ValueError(f"substring_anagram_floor must be in [0, 1], got {self.substring_anagram_floor}")

    @property
    def exact_E(self) -> Fraction:
        return Fraction(repr(self.E))

    @property
    def exact_C(self) -> Fraction:
        return Fraction(repr(self.C))

    @property
    def exact_floor(self) -> Fraction:
        return Fraction(repr(self.substring_anagram_floor))


def edit_distance(first: str, second: str) -> int:
    """Levenshtein distance with unit insert, delete and substitute costs."""
    return Levenshtein.distance(first, second)


def _substring_or_anagram(first: str, second: str) -> bool:
    return first in second or second in first or sorted(first) == sorted(second)


def escore(first: str, second: str, params: AliasParams = AliasParams()) -> float:
    """
    Edit score: 1 - edist / shorter length, floored at
    ``params.substring_anagram_floor`` (0.75) for substrings and anagrams.
    Negative when the distance exceeds the shorter length.
    """
    if not first or not second:
        raise ValueError("escore needs two non-empty tokens")
    base = 1 - edit_distance(first, second) / min(len(first), len(second))
    if _substring_or_anagram(first, second):
        return max(base, params.substring_anagram_floor)
    return base


def _escore_exact(first: str, second: str, params: AliasParams) -> Fraction:
    base = 1 - Fraction(edit_distance(first, second), min(len(first), len(second)))
    if _substring_or_anagram(first, second):
        return max(base, params.exact_floor)
    return base


def coocur(child: str, parent: str, stats: TokenStats) -> float:
    """Share of the child's reports that also contain the parent."""
    child_count = stats.count(child)
    if child_count == 0:
        raise ValueError(f"token {child!r} does not occur in any report")
    if child == parent:
        return 1.0
    return stats.pair(child, parent) / child_count


def is_trivial_alias(first: str, second: str, params: AliasParams = AliasParams()) -> bool:
    """
    True if one token is the other plus one trailing character, or if they
    become equal after stripping one affix off either token's start or end.
    """
    if first == second:
        return False
    shorter, longer = sorted((first, second), key=len)
    if len(longer) == len(shorter) + 1 and longer.startswith(shorter):
        return True
    for affix in params.affix_list:
        for stripped, other in ((first, second), (second, first)):
            if stripped.startswith(affix) and stripped[len(affix):] == other:
                return True
            if stripped.endswith(affix) and stripped[:-len(affix)] == other:
                return True
    return False


def is_parent_child(child: str, parent: str, stats: TokenStats, params: AliasParams = AliasParams()) -> bool:
    """
    escore >= E and coocur * escore >= C, compared in exact arithmetic so
    boundary values are accepted.
    """
    score = _escore_exact(child, parent, params)
    if score < params.exact_E:
        return False
    child_count = stats.count(child)
    if child_count == 0:
        return False
    share = Fraction(stats.pair(child, parent), child_count) if child != parent else Fraction(1)
    return share * score >= params.exact_C


def _trivial_variants(token: str, affixes: Sequence[str]) -> Iterable[str]:
    if len(token) > 1:
        yield token[:-1]
    for affix in affixes:
        if len(token) > len(affix):
            if token.startswith(affix):
                yield token[len(affix):]
            if token.endswith(affix):
                yield token[:-len(affix)]


def find_trivial_aliases(frequencies: Mapping[str, int], params: AliasParams = AliasParams()) -> Dict[str, str]:
    """
    Map each trivially-aliased token to the most frequent spelling it is a
    trivial alias of (ties lexicographically ascending).

    Tokens are visited by frequency descending. A token becomes an alias only
    of a canonical spelling it pairs with directly, so ``abc`` and ``abcde``
    stay apart even when ``abcd`` pairs with both.

    Args:
        frequencies: token -> frequency for one lexical category
        params: alias parameters (affix list)

    Returns:
        token -> canonical token, for non-canonical tokens only
    """
    rank = {token: (-count, token) for token, count in frequencies.items()}
    canonical_by_variant: Dict[str, List[str]] = defaultdict(list)
    canonical = set()
    aliases = {}
    for token in sorted(frequencies, key=rank.__getitem__):
        variants = set(_trivial_variants(token, params.affix_list))
        candidates = [variant for variant in variants if variant in canonical]
        candidates.extend(canonical_by_variant.get(token, ()))
        if candidates:
            aliases[token] = min(candidates, key=rank.__getitem__)
            continue
        canonical.add(token)
        for variant in variants:
            canonical_by_variant[variant].append(token)
    return aliases


def parent_child_edges(stats: TokenStats, params: AliasParams = AliasParams()) -> Dict[str, List[str]]:
    """
    Parent -> children edges among co-occurring tokens.

    The parent of a pair is the token that comes first by report count
    descending, then lexicographically; the other token is the child.
    """
    rank = {token: index for index, token in enumerate(stats.tokens_by_frequency())}
    children: Dict[str, List[str]] = {}
    for (first, second), count in stats.pair_report_counts.items():
        if count <= 0:
            continue
        parent, child = (first, second) if rank[first] < rank[second] else (second, first)
        if is_parent_child(child, parent, stats, params):
            children.setdefault(parent, []).append(child)
    for parent in children:
        children[parent].sort(key=rank.__getitem__)
    return children


def _reaches(mapping: Mapping[str, str], start: str, goal: str) -> bool:
    seen = set()
    current = start
    while current not in seen:
        if current == goal:
            return True
        seen.add(current)
        if current not in mapping:
            return False
        current = mapping[current]
    return False


def close_mapping(mapping: Mapping[str, str]) -> Dict[str, str]:
    """
    Follow every chain to its end so the result is idempotent.

    Raises:
        AliasFileError: if the mapping has a cycle
    """
    closed = {}
    for token in mapping:
        path = [token]
        current = mapping[token]
        while current in mapping and current != path[-1]:
            if current in path:
                raise AliasFileError(f"alias cycle through {' -> '.join(path + [current])}")
            path.append(current)
            current = mapping[current]
        if current != token:
            closed[token] = current
    return closed


def apply_overrides(computed: Mapping[str, str], overrides: Optional[AliasMap]) -> Dict[str, str]:
    """
    Combine computed aliases with user overrides.

    Override entries replace computed ones; a computed entry that would close
    a cycle with the overrides is dropped.
    """
    merged = dict(overrides.canonical) if overrides is not None else {}
    for token in sorted(computed):
        if token in merged:
            continue
        target = computed[token]
        if _reaches(merged, target, token):
            continue
        merged[token] = target
    return close_mapping(merged)


def resolve_aliases(
    tokens_by_freq: Sequence[str],
    children: Mapping[str, Sequence[str]],
    overrides: Optional[AliasMap] = None,
    category: Optional[LexicalCategory] = None,
) -> AliasMap:
    """
    Parent-child alias resolution.

    Each token, in order, collects every descendant reachable through child
    edges that no earlier token has claimed, and becomes their canonical name.

    Args:
        tokens_by_freq: Tokens by frequency descending, ties lexicographic
        children: parent -> child tokens
        overrides: User alias map with priority over computed names
        category: Category recorded on the result

    Returns:
        Closed AliasMap
    """
    used = set()
    computed: Dict[str, str] = {}
    for root in tokens_by_freq:
        collected: List[str] = []
        collected_set = set()
        queue = deque([root])
        while queue:
            token = queue.popleft()
            if token not in used and token not in collected_set:
                collected.append(token)
                collected_set.add(token)
                queue.extend(children.get(token, ()))
        for token in collected:
            used.add(token)
            if token != root:
                computed[token] = root
    return AliasMap(category=category, canonical=apply_overrides(computed, overrides))


class AliasResolver:
    """Builds the complete alias map of one lexical category."""

    def __init__(self, params: Optional[AliasParams] = None):
        """
        Initialize resolver.

        Args:
            params: Alias thresholds and affix list
        """
        self.params = params or AliasParams()

    def trivial(self, frequencies: Mapping[str, int]) -> Dict[str, str]:
        return find_trivial_aliases(frequencies, self.params)

    def build(
        self,
        category: LexicalCategory,
        stats: TokenStats,
        trivial: Optional[Mapping[str, str]] = None,
        overrides: Optional[AliasMap] = None,
    ) -> AliasMap:
        """
        Compose trivial aliases, parent-child aliases and overrides.

        Args:
            category: Lexical category of the tokens
            stats: Report statistics over post-trivial-alias tokens
            trivial: raw token -> trivial canonical token
            overrides: User alias map

        Returns:
            Closed AliasMap from raw tokens to final canonical names
        """
        edges = parent_child_edges(stats, self.params)
        parent_child = resolve_aliases(stats.tokens_by_frequency(), edges, category=category)
        log.info(
            "%s: %d trivial aliases, %d parent-child edges, %d parent-child aliases",
            category.value, len(trivial or {}), sum(len(c) for c in edges.values()), len(parent_child),
        )

        composed = {token: parent_child.apply(target) for token, target in (trivial or {}).items()}
        composed.update(parent_child.canonical)
        return AliasMap(category=category, canonical=apply_overrides(composed, overrides))


def load_alias_file(path: Union[str, Path], category: Optional[LexicalCategory] = None) -> AliasMap:
    """
    Read an Alias File (``token<TAB>canonical`` per line, ``#`` comments).

    Raises:
        AliasFileError: malformed line, conflicting entries, or a cycle
    """
    path = str(path)
    canonical: Dict[str, str] = {}
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise AliasFileError(f"cannot read alias file: {exc.strerror}", path=path) from exc

    with handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = [part.strip().lower() for part in line.split("\t")]
            if len(fields) != 2 or not all(fields):
                raise AliasFileError("expected token<TAB>canonical", path=path, line_number=line_number)
            token, target = fields
            if token == target:
                continue
            if canonical.get(token, target) != target:
                raise AliasFileError(
                    f"{token!r} mapped to both {canonical[token]!r} and {target!r}",
                    path=path, line_number=line_number,
                )
            canonical[token] = target

    try:
        closed = close_mapping(canonical)
    except AliasFileError as exc:
        raise AliasFileError(str(exc), path=path) from None
    return AliasMap(category=category, canonical=closed)


def save_alias_file(alias_map: AliasMap, path: Union[str, Path]) -> None:
    with atomic_output(path, "w") as handle:
        if alias_map.category is not None:
            handle.write(f"# {alias_map.category.value}\n")
        for token, target in sorted(alias_map.canonical.items()):
            handle.write(f"{token}\t{target}\n")


def load_affixes(path: Union[str, Path]) -> Tuple[str, ...]:
    """Read an Affix File: one affix per line, ``#`` comments."""
    affixes = []
    try:
        with open(path, "r", encoding="utf-8") as handle:
            for raw in handle:
                line = raw.strip().lower()
                if line and not line.startswith("#") and line not in affixes:
                    affixes.append(line)
    except OSError as exc:
        raise AliasFileError(f"cannot read affix file: {exc.strerror}", path=str(path)) from exc
    return tuple(affixes)
