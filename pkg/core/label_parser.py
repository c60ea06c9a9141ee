"""
Label Parser Module

Tokenizes AV labels, computes their delimiter formats, and assigns a lexical
category to every token using declarative per-(engine, delimiter format)
parsing rules, with a vocabulary-assisted fallback for unknown formats.
"""

import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import TYPE_CHECKING, Dict, Iterable, List, Optional, Pattern, Tuple, Union

from core.errors import EmptyTokenError, RuleFileError

if TYPE_CHECKING:
    from core.scan_ingest import ScanReport
    from core.vocabulary import Vocabulary

log = logging.getLogger(__name__)


class LexicalCategory(str, Enum):
    """Semantic role of a token inside an AV label."""

    BEH = "BEH"
    PLAT = "PLAT"
    VULN = "VULN"
    PACK = "PACK"
    FAM = "FAM"
    SUF = "SUF"
    PRE = "PRE"
    UNK = "UNK"

    @classmethod
    def parse(cls, name: str) -> "LexicalCategory":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown lexical category {name!r}") from None


# Categories that can appear in a tag ranking
TAG_CATEGORIES = (
    LexicalCategory.BEH,
    LexicalCategory.PLAT,
    LexicalCategory.VULN,
    LexicalCategory.PACK,
)

# Categories that never carry a tag
AMBIGUOUS_CATEGORIES = frozenset({LexicalCategory.PRE, LexicalCategory.UNK})

DelimiterFormat = str

TOK = "TOK"

_TOKEN_SPLIT = re.compile(r"([0-9A-Za-z]+)")
_DELIMITER_RUN = re.compile(r"^[^0-9A-Za-z]*$")

# Matches the canonical identifiers produced by merge_vulnerability_ids
VULN_REGEX = r"^(cve_\d{4}_\d{3,7}|ms\d{2}_\d{3})$"
_VULN_ID = re.compile(r"cve[-_]?(\d{4})[-_]?(\d{3,7})|ms[-_]?(\d{2})[-_]?(\d{3})")
_ID_JOINERS = ("-", "_")
_SUFFIX_SHAPE = re.compile(r"^[a-z]{1,3}\d*$")

# Named regexes usable inside CHOICE slots
PACKER_REGEX = (
    r"^(upx|aspack|asprotect|nspack|themida|vmprotect|mpress|pecompact|armadillo|petite|fsg|mew|upack"
    r"|enigma|molebox|obsidium|execryptor|pespin|yoda|expressor|nsanti|telock)$"
)

REGEX_MACROS = {"@vuln": VULN_REGEX, "@packer": PACKER_REGEX}


@dataclass(frozen=True)
class ParsedLabel:
    """Tokens of one AV label with their lexical categories."""

    engine: str
    tokens: Tuple[str, ...]
    categories: Tuple[LexicalCategory, ...]
    format: DelimiterFormat


@dataclass(frozen=True)
class Fixed:
    """Slot whose token always has one category."""

    category: LexicalCategory

    def resolve(self, token: str) -> LexicalCategory:
        return self.category

    def categories(self) -> List[LexicalCategory]:
        return [self.category]


@dataclass(frozen=True)
class Choice:
    """Slot decided by the first matching regex, else the fallback category."""

    options: Tuple[Tuple[Pattern, LexicalCategory], ...]
    fallback: LexicalCategory

    def resolve(self, token: str) -> LexicalCategory:
        for pattern, category in self.options:
            if pattern.search(token):
                return category
        return self.fallback

    def categories(self) -> List[LexicalCategory]:
        return [category for _, category in self.options] + [self.fallback]


SlotSpec = Union[Fixed, Choice]


@dataclass(frozen=True)
class ParseRule:
    """Parsing rule for one (engine, delimiter format) pair."""

    engine: str
    format: DelimiterFormat
    slots: Tuple[SlotSpec, ...]

    def apply(self, tokens: Iterable[str]) -> Tuple[LexicalCategory, ...]:
        return tuple(slot.resolve(token) for slot, token in zip(self.slots, tokens))


class RuleSet:
    """Parsing rules keyed by (engine, delimiter format)."""

    def __init__(self, rules: Optional[Iterable[ParseRule]] = None):
        self._rules: Dict[Tuple[str, DelimiterFormat], ParseRule] = {}
        for rule in rules or []:
            self.add(rule)

    def add(self, rule: ParseRule) -> None:
        key = (rule.engine, rule.format)
        if key in self._rules:
            raise RuleFileError(f"duplicate rule for engine {rule.engine!r} and format {rule.format!r}")
        self._rules[key] = rule

    def get(self, engine: str, fmt: DelimiterFormat) -> Optional[ParseRule]:
        return self._rules.get((engine, fmt))

    def engines(self) -> List[str]:
        return sorted({engine for engine, _ in self._rules})

    def formats(self, engine: str) -> List[DelimiterFormat]:
        return sorted(fmt for rule_engine, fmt in self._rules if rule_engine == engine)

    def __len__(self) -> int:
        return len(self._rules)

    def __contains__(self, key: Tuple[str, DelimiterFormat]) -> bool:
        return key in self._rules


def tokenize(label: str) -> Tuple[List[str], DelimiterFormat]:
    """
    Split an AV label into lowercase alphanumeric tokens and its delimiter format.

    Args:
        label: Raw AV label

    Returns:
        (tokens, format) where format interleaves ``TOK`` slots with the
        delimiter runs verbatim, e.g. ``TOK:TOK.TOK.TOK``

    Raises:
        EmptyTokenError: if the label has no alphanumeric character
    """
    parts = _TOKEN_SPLIT.split(label)
    tokens = [part.lower() for part in parts[1::2]]
    if not tokens:
        raise EmptyTokenError(f"label {label!r} contains no alphanumeric token")
    fmt = "".join(TOK if index % 2 else part for index, part in enumerate(parts))
    return tokens, fmt


def delimiter_runs(fmt: DelimiterFormat) -> List[str]:
    """Delimiter runs around the TOK slots; one more run than slots."""
    return fmt.split(TOK)


def reconstruct(tokens: List[str], fmt: DelimiterFormat) -> str:
    """Interleave delimiter runs with tokens (inverse of tokenize, lowercased)."""
    runs = delimiter_runs(fmt)
    if len(runs) != len(tokens) + 1:
        raise ValueError("token count does not match delimiter format")
    pieces = [runs[0]]
    for token, run in zip(tokens, runs[1:]):
        pieces.append(token)
        pieces.append(run)
    return "".join(pieces)


def _vulnerability_id(tokens: List[str], runs: List[str], start: int) -> Tuple[int, Optional[str]]:
    for width in (3, 2, 1):
        end = start + width
        if end > len(tokens) or any(runs[index] not in _ID_JOINERS for index in range(start + 1, end)):
            continue
        text = tokens[start] + "".join(runs[index] + tokens[index] for index in range(start + 1, end))
        match = _VULN_ID.fullmatch(text)
        if match is None:
            continue
        if match.group(1):
            return width, f"cve_{match.group(1)}_{match.group(2)}"
        return width, f"ms{match.group(3)}_{match.group(4)}"
    return 1, None


def merge_vulnerability_ids(tokens: List[str], fmt: DelimiterFormat) -> Tuple[List[str], DelimiterFormat]:
    """
    Collapse vulnerability identifiers into one canonical token.

    ``CVE-2017-0144``, ``CVE2017-0144`` and ``cve20170144`` all become
    ``cve_2017_0144``; ``MS08-067`` and ``ms08067`` become ``ms08_067``.
    Only ``-`` and ``_`` may join the pieces. The format loses the inner
    TOK slots, so ``Exploit:Win32/CVE-2017-0144`` has format ``TOK:TOK/TOK``.

    Args:
        tokens: Tokens from tokenize
        fmt: Delimiter format from tokenize

    Returns:
        (tokens, format) with identifiers merged
    """
    runs = delimiter_runs(fmt)
    merged: List[str] = []
    merged_runs = [runs[0]]
    index = 0
    while index < len(tokens):
        width, canonical = _vulnerability_id(tokens, runs, index)
        merged.append(canonical or tokens[index])
        merged_runs.append(runs[index + width])
        index += width
    return merged, merged_runs[0] + "".join(TOK + run for run in merged_runs[1:])


def split_label(label: str) -> Tuple[List[str], DelimiterFormat]:
    """tokenize followed by merge_vulnerability_ids; what rules are keyed on."""
    return merge_vulnerability_ids(*tokenize(label))



def is_generic_suffix(token: str) -> bool:
    """Short trailing variant such as ``abc``, ``xyz`` or ``a12``."""
    return len(token) <= 4 or bool(_SUFFIX_SHAPE.match(token)) or token.isdigit()


def _fallback_categories(tokens: List[str], vocabulary: Optional["Vocabulary"]) -> Tuple[LexicalCategory, ...]:
    categories = []
    last = len(tokens) - 1
    for index, token in enumerate(tokens):
        # A suffix needs at least a category and a name in front of it.
        if index == last and len(tokens) >= 3 and is_generic_suffix(token):
            categories.append(LexicalCategory.SUF)
            continue
        known = vocabulary.lookup(token) if vocabulary is not None else None
        if known is not None and known is not LexicalCategory.SUF:
            categories.append(known)
        elif token.isalpha() and len(token) >= 3:
            categories.append(LexicalCategory.PRE)
        else:
            categories.append(LexicalCategory.UNK)
    return tuple(categories)


def parse_label(
    engine: str,
    label: str,
    rules: RuleSet,
    vocabulary: Optional["Vocabulary"] = None,
) -> ParsedLabel:
    """
    Assign a lexical category to each token of an AV label.

    The (engine, format) rule wins when one exists; otherwise the final token
    of a label with three or more tokens becomes SUF when it looks like a
    generic suffix, tokens known to the vocabulary take its category, and the
    rest become PRE (alphabetic, length >= 3) or UNK.

    Args:
        engine: AV product name
        label: Raw AV label
        rules: Loaded rule set
        vocabulary: Resolved vocabulary, may be None or empty on the first pass

    Returns:
        ParsedLabel
    """
    engine = engine.strip().lower()
    tokens, fmt = split_label(label)
    rule = rules.get(engine, fmt)
    if rule is not None:
        categories = rule.apply(tokens)
    else:
        categories = _fallback_categories(tokens, vocabulary)
    return ParsedLabel(engine=engine, tokens=tuple(tokens), categories=categories, format=fmt)


class LabelParser:
    """parse_label bound to one rule set and vocabulary, memoized per (engine, label)."""

    def __init__(self, rules: RuleSet, vocabulary: Optional["Vocabulary"] = None, cache_size: int = 1 << 16):
        self.rules = rules
        self.vocabulary = vocabulary
        self.cache_size = cache_size
        self._build_cache()

    def _build_cache(self) -> None:
        self.parse = lru_cache(maxsize=self.cache_size)(self._parse)

    def _parse(self, engine: str, label: str) -> ParsedLabel:
        return parse_label(engine, label, self.rules, self.vocabulary)

    # lru_cache wrappers do not pickle; workers rebuild an empty cache.
    def __getstate__(self):
        state = self.__dict__.copy()
        state.pop("parse", None)
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._build_cache()


def _parse_category(name: str, path: str, line_number: int) -> LexicalCategory:
    try:
        return LexicalCategory.parse(name)
    except ValueError as exc:
        raise RuleFileError(str(exc), path=path, line_number=line_number) from None


def _compile(regex: str, path: str, line_number: int) -> Pattern:
    regex = REGEX_MACROS.get(regex, regex)
    try:
        return re.compile(regex)
    except re.error as exc:
        raise RuleFileError(f"bad regex {regex!r}: {exc}", path=path, line_number=line_number) from None


_CHOICE_DEFAULT = re.compile(r"^(?P<body>.*)\|DEFAULT:(?P<cat>[A-Za-z]+)$")
_CHOICE_OPTION = re.compile(r"(?P<regex>.+?)->(?P<cat>[A-Za-z]+)(?:\||$)")


def parse_slot(text: str, path: str = "<rules>", line_number: int = 0) -> SlotSpec:
    """
    Parse one slot spec: ``FIXED:<CAT>`` or
    ``CHOICE:<regex>-><CAT>|...|DEFAULT:<CAT>``.
    """
    text = text.strip()
    if text.startswith("FIXED:"):
        return Fixed(_parse_category(text[len("FIXED:"):], path, line_number))
    if not text.startswith("CHOICE:"):
        raise RuleFileError(f"unknown slot spec {text!r}", path=path, line_number=line_number)

    match = _CHOICE_DEFAULT.match(text[len("CHOICE:"):])
    if match is None:
        raise RuleFileError(f"CHOICE slot without DEFAULT: {text!r}", path=path, line_number=line_number)
    body = match.group("body")
    fallback = _parse_category(match.group("cat"), path, line_number)

    options = []
    position = 0
    for option in _CHOICE_OPTION.finditer(body):
        if option.start() != position:
            break
        options.append((
            _compile(option.group("regex"), path, line_number),
            _parse_category(option.group("cat"), path, line_number),
        ))
        position = option.end()
    if not options or position != len(body):
        raise RuleFileError(f"malformed CHOICE options in {text!r}", path=path, line_number=line_number)
    return Choice(options=tuple(options), fallback=fallback)


def _validate_format(fmt: str, path: str, line_number: int) -> int:
    runs = delimiter_runs(fmt)
    slots = len(runs) - 1
    if slots < 1:
        raise RuleFileError(f"format {fmt!r} has no TOK slot", path=path, line_number=line_number)
    for index, run in enumerate(runs):
        if not _DELIMITER_RUN.match(run):
            raise RuleFileError(f"format {fmt!r} has alphanumerics outside TOK slots", path=path, line_number=line_number)
        if 0 < index < slots and not run:
            raise RuleFileError(f"format {fmt!r} has adjacent TOK slots", path=path, line_number=line_number)
    return slots


def load_rules(path: Union[str, Path]) -> RuleSet:
    """
    Load a Rule File.

    Each record is ``engine<TAB>format<TAB>slot(;slot)*``; lines starting
    with ``#`` are comments.

    Args:
        path: Rule file path

    Returns:
        RuleSet keyed by (engine, format)

    Raises:
        RuleFileError: syntax error, duplicate (engine, format) or bad regex
    """
    path = str(path)
    rules = RuleSet()
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise RuleFileError(f"cannot read rule file: {exc.strerror}", path=path) from exc

    with handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise RuleFileError("expected engine<TAB>format<TAB>slots", path=path, line_number=line_number)
            engine, fmt, slot_text = fields[0].strip().lower(), fields[1], fields[2]
            if not engine:
                raise RuleFileError("empty engine name", path=path, line_number=line_number)

            slot_count = _validate_format(fmt, path, line_number)
            slots = tuple(
                parse_slot(part, path, line_number)
                for part in re.split(r";(?=\s*(?:FIXED|CHOICE):)", slot_text)
            )
            if len(slots) != slot_count:
                raise RuleFileError(
                    f"format {fmt!r} has {slot_count} TOK slots but {len(slots)} slot specs",
                    path=path, line_number=line_number,
                )
            for slot in slots[:-1]:
                if LexicalCategory.SUF in slot.categories():
                    raise RuleFileError("SUF is only allowed in the final slot", path=path, line_number=line_number)

            try:
                rules.add(ParseRule(engine=engine, format=fmt, slots=slots))
            except RuleFileError as exc:
                raise RuleFileError(str(exc), path=path, line_number=line_number) from None

    log.debug("Loaded %d parsing rules for %d engines from %s", len(rules), len(rules.engines()), path)
    return rules


def format_coverage(reports: Iterable["ScanReport"], rules: RuleSet) -> Dict[str, Dict[str, int]]:
    """
    Count, per engine, labels handled by a parsing rule versus the fallback.

    Returns:
        engine -> {"rule": n, "fallback": n, "formats": distinct formats seen,
        "unused_rules": rule formats of the engine that no label matched}
    """
    hits: Dict[str, Counter] = defaultdict(Counter)
    seen_formats: Dict[str, set] = defaultdict(set)
    for report in reports:
        for engine, label in report.detections:
            try:
                _, fmt = split_label(label)
            except EmptyTokenError:
                hits[engine]["fallback"] += 1
                continue
            seen_formats[engine].add(fmt)
            hits[engine]["rule" if (engine, fmt) in rules else "fallback"] += 1
    return {
        engine: {
            "rule": counts["rule"],
            "fallback": counts["fallback"],
            "formats": len(seen_formats[engine]),
            "unused_rules": len(set(rules.formats(engine)) - seen_formats[engine]),
        }
        for engine, counts in sorted(hits.items())
    }
