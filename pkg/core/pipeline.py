"""
Pipeline Module

Orchestrates the two-pass tagging workflow: the first pass builds the
vocabulary and token statistics, the alias stage resolves canonical token
names, the tag stage ranks tags per file, and the evaluation and dataset
stages consume tag files.
"""

import logging
import os
import tempfile
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import pandas as pd

from core.alias_resolver import AliasMap, AliasResolver, TokenStats, load_affixes, load_alias_file, save_alias_file
from core.dataset_builder import DatasetManifest, build_dataset, write_manifest
from core.errors import EmptyTokenError, ValidationError
from core.evaluator import (
    MetricReport,
    TagAssignment,
    family_consistency_report,
    load_families,
    load_tag_map,
    multilabel_metrics,
)
from core.label_parser import TAG_CATEGORIES, LabelParser, LexicalCategory, RuleSet, format_coverage, load_rules
from core.scan_ingest import CorpusStats, ScanReport, batched, read_reports
from core.tagger import TagRanking, TaggingContext, load_correlation_groups, read_tag_file, tag_corpus
from core.vocabulary import Vocabulary, WordlistOverlay, load_wordlist, save_wordlist
from utils.config import PipelineConfig
from utils.helpers import atomic_output, dumps_record, ordered_pool_map, progress
from utils.stats_store import TokenStatsStore

log = logging.getLogger(__name__)

WORDLIST_FILE = "wordlist.tsv"
TAGS_FILE = "tags.jsonl"


def alias_filename(category: LexicalCategory) -> str:
    return f"aliases.{category.value.lower()}.tsv"


def manifest_filename(category: LexicalCategory) -> str:
    return f"manifest.{category.value.lower()}.jsonl"


@dataclass
class Pass1Result:
    corpus: CorpusStats
    vocabulary: Vocabulary
    token_stats: Dict[LexicalCategory, TokenStats]
    trivial: Dict[LexicalCategory, Dict[str, str]]
    skipped_labels: int = 0


@dataclass
class TagRunSummary:
    reports: int = 0
    tagged: int = 0
    per_category: Dict[str, int] = field(default_factory=dict)


# Worker-side state for the first pass, installed by the pool initializer.
_SWEEP: Dict[str, object] = {}


def _init_sweep(rules: RuleSet, vocabulary: Vocabulary, trivial: Dict[LexicalCategory, Dict[str, str]]) -> None:
    _SWEEP["parser"] = LabelParser(rules, vocabulary)
    _SWEEP["vocabulary"] = vocabulary
    _SWEEP["trivial"] = trivial


def _observe_batch(batch: List[ScanReport]) -> Tuple[Vocabulary, CorpusStats, int]:
    """Sweep A: first-pass parse, counting token/category observations."""
    parser: LabelParser = _SWEEP["parser"]
    vocabulary = Vocabulary()
    stats = CorpusStats()
    skipped = 0
    for report in batch:
        stats.add(report)
        for engine, label in report.detections:
            try:
                vocabulary.observe(parser.parse(engine, label))
            except EmptyTokenError:
                skipped += 1
    return vocabulary, stats, skipped


def _count_batch(batch: List[ScanReport]) -> Dict[LexicalCategory, TokenStats]:
    """Sweep B: per-category distinct-report token and pair counts."""
    parser: LabelParser = _SWEEP["parser"]
    vocabulary: Vocabulary = _SWEEP["vocabulary"]
    trivial: Dict[LexicalCategory, Dict[str, str]] = _SWEEP["trivial"]
    stats = {category: TokenStats(category=category) for category in TAG_CATEGORIES}
    for report in batch:
        tokens: Dict[LexicalCategory, set] = {category: set() for category in TAG_CATEGORIES}
        for engine, label in report.detections:
            try:
                parsed = parser.parse(engine, label)
            except EmptyTokenError:
                continue
            for token, category in zip(parsed.tokens, vocabulary.refine(parsed)):
                if category not in tokens:
                    continue
                canonical = trivial.get(category, {}).get(token, token)
                if not vocabulary.is_generic(canonical):
                    tokens[category].add(canonical)
        for category, found in tokens.items():
            if found:
                stats[category].add_report(found)
    return stats


class TaggingPipeline:
    """Runs the pipeline stages against one PipelineConfig."""

    def __init__(self, config: PipelineConfig):
        """
        Initialize pipeline.

        Args:
            config: Effective configuration
        """
        self.config = config
        self.output_dir = config.output_path

    # ---- shared loading ----------------------------------------------------

    def _alias_params(self):
        params = self.config.alias_params
        if self.config.affixes:
            params = replace(params, affix_list=load_affixes(self.config.affixes))
        return params

    def _overlay(self) -> Optional[WordlistOverlay]:
        return load_wordlist(self.config.wordlist) if self.config.wordlist else None

    def _reports(self, desc: str) -> Iterator[ScanReport]:
        reports = read_reports(self.config.reports, strict=self.config.strict)
        return progress(reports, desc=desc, enabled=self.config.progress, unit="report")

    def _map_batches(self, func, initargs, desc: str) -> Iterator:
        """Run ``func`` over report batches, inline or in the worker pool."""
        batches = batched(self._reports(desc), self.config.batch_size)
        if self.config.threads <= 1:
            _init_sweep(*initargs)
            return (func(batch) for batch in batches)
        return ordered_pool_map(func, batches, workers=self.config.threads, initializer=_init_sweep, initargs=initargs)

    def _require_output(self, *names: str) -> None:
        for name in names:
            if not (self.output_dir / name).exists():
                raise ValidationError(f"{name} not found in {self.output_dir}; run the earlier stage first")

    # ---- pass1 ---------------------------------------------------------------

    def run_pass1(self) -> Pass1Result:
        """
        First pass: observe lexical categories, promote, and gather the
        per-category token statistics the alias stage needs.

        Writes ``wordlist.tsv`` and ``token_stats.db`` to the output directory.
        """
        self.config.require("reports", "rules")
        rules = load_rules(self.config.rules)
        overlay = self._overlay()
        params = self._alias_params()

        seed_vocabulary = Vocabulary()
        if overlay is not None:
            seed_vocabulary.apply(overlay)

        vocabulary = Vocabulary()
        corpus = CorpusStats()
        skipped = 0
        for partial, stats, bad in self._map_batches(_observe_batch, (rules, seed_vocabulary, {}), "pass1 observe"):
            vocabulary.merge(partial)
            corpus.merge(stats)
            skipped += bad
        if skipped:
            log.warning("Skipped %d label(s) without alphanumeric tokens", skipped)
        if corpus.report_count == 0:
            log.warning("No scan reports in %s; the vocabulary is empty", self.config.reports)

        vocabulary.promote()
        if overlay is not None:
            vocabulary.apply(overlay)

        resolver = AliasResolver(params)
        resolved = vocabulary.resolved
        trivial: Dict[LexicalCategory, Dict[str, str]] = {}
        for category in TAG_CATEGORIES:
            frequencies = {
                token: sum(vocabulary.counts[token].values())
                for token, token_category in resolved.items()
                if token_category is category and token in vocabulary.counts
            }
            trivial[category] = resolver.trivial(frequencies)

        token_stats = {category: TokenStats(category=category) for category in TAG_CATEGORIES}
        for partial in self._map_batches(_count_batch, (rules, vocabulary, trivial), "pass1 count"):
            for category, stats in partial.items():
                token_stats[category].merge(stats)

        self._write_pass1(vocabulary, token_stats, trivial, corpus)
        log.info(
            "pass1: %d reports, %d labels, %d tokens (%d resolved)",
            corpus.report_count, corpus.label_count, len(vocabulary), len(resolved),
        )
        return Pass1Result(corpus, vocabulary, token_stats, trivial, skipped)

    def _write_pass1(self, vocabulary, token_stats, trivial, corpus) -> None:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        fd, tmp_db = tempfile.mkstemp(prefix=".token_stats.", suffix=".db", dir=self.output_dir)
        os.close(fd)
        os.unlink(tmp_db)
        try:
            store = TokenStatsStore(tmp_db, create=True)
            store.save_vocabulary(vocabulary)
            store.save_token_stats(token_stats.values())
            store.save_trivial_aliases(trivial)
            store.set_meta("corpus", corpus.to_dict())
            save_wordlist(vocabulary, self.output_dir / WORDLIST_FILE)
            os.replace(tmp_db, self.output_dir / TokenStatsStore.FILENAME)
        finally:
            if os.path.exists(tmp_db):
                os.unlink(tmp_db)

    # ---- alias -----------------------------------------------------------------

    def run_alias(self) -> Dict[LexicalCategory, AliasMap]:
        """Resolve alias maps per category and write ``aliases.<cat>.tsv``."""
        self._require_output(TokenStatsStore.FILENAME)
        if self.config.aliases:
            self.config.require("aliases")
        store = TokenStatsStore(str(self.output_dir / TokenStatsStore.FILENAME))
        overrides = load_alias_file(self.config.aliases) if self.config.aliases else None
        resolver = AliasResolver(self._alias_params())

        maps = {}
        for category in TAG_CATEGORIES:
            maps[category] = resolver.build(
                category,
                store.load_token_stats(category),
                trivial=store.load_trivial_aliases(category),
                overrides=overrides,
            )
        for category, alias_map in maps.items():
            save_alias_file(alias_map, self.output_dir / alias_filename(category))
        return maps

    # ---- tag -------------------------------------------------------------------

    def tagging_context(self) -> TaggingContext:
        """Load the finalized vocabulary, alias maps and correlation groups."""
        self.config.require("rules", "correlations")
        self._require_output(WORDLIST_FILE, *(alias_filename(c) for c in TAG_CATEGORIES))
        vocabulary = Vocabulary().apply(load_wordlist(self.output_dir / WORDLIST_FILE))
        aliases = {
            category: load_alias_file(self.output_dir / alias_filename(category), category)
            for category in TAG_CATEGORIES
        }
        return TaggingContext(
            rules=load_rules(self.config.rules),
            vocabulary=vocabulary,
            aliases=aliases,
            groups=load_correlation_groups(self.config.correlations),
            thresholds=self.config.thresholds,
        )

    def run_tag(self, output: Optional[str] = None) -> TagRunSummary:
        """Tag every report and write one Tag Output record per report."""
        self.config.require("reports")
        context = self.tagging_context()
        target = Path(output) if output else self.output_dir / TAGS_FILE

        summary = TagRunSummary()
        per_category: Counter = Counter()
        rankings = tag_corpus(
            self._reports("tag"), context, workers=self.config.threads, batch_size=self.config.batch_size,
        )
        with atomic_output(target) as handle:
            for ranking in rankings:
                handle.write(dumps_record(ranking.to_record()))
                summary.reports += 1
                if not ranking.is_empty():
                    summary.tagged += 1
                for category in TAG_CATEGORIES:
                    if ranking.tags[category]:
                        per_category[category.value] += 1
        summary.per_category = dict(per_category)
        log.info("tag: %d of %d reports received at least one tag", summary.tagged, summary.reports)
        return summary

    # ---- eval ------------------------------------------------------------------

    def run_eval(
        self,
        predicted: str,
        reference: Optional[str] = None,
        families: Optional[str] = None,
        tag_map: Optional[str] = None,
        category: Optional[LexicalCategory] = None,
    ) -> MetricReport:
        """
        Score a tag file against reference tags or a family partition.

        Raises:
            ValidationError: neither or both of ``reference`` and ``families`` given
        """
        if (reference is None) == (families is None):
            raise ValidationError("give exactly one of a reference tag file or a family file")
        categories = (category,) if category is not None else TAG_CATEGORIES
        assignment = TagAssignment.from_rankings(read_tag_file(predicted), categories)
        if tag_map:
            assignment = assignment.remap(load_tag_map(tag_map))

        if families is not None:
            return family_consistency_report(assignment, load_families(families))
        truth = TagAssignment.from_rankings(read_tag_file(reference), categories)
        return multilabel_metrics(assignment, truth)

    # ---- build -----------------------------------------------------------------

    def run_build(self, tag_file: str, category: Optional[LexicalCategory] = None) -> List[DatasetManifest]:
        """Build and write one manifest per requested category."""
        categories = (category,) if category is not None else TAG_CATEGORIES
        rankings = list(read_tag_file(tag_file))
        manifests = []
        for current in categories:
            manifest = build_dataset(rankings, current, self.config.split)
            write_manifest(manifest, self.output_dir / manifest_filename(current))
            manifests.append(manifest)
        return manifests

    # ---- stats -----------------------------------------------------------------

    def corpus_summary(self) -> Tuple[CorpusStats, pd.DataFrame]:
        """CorpusStats plus per-engine rule coverage for the report file."""
        self.config.require("reports", "rules")
        rules = load_rules(self.config.rules)
        stats = CorpusStats()

        def counted(reports: Iterable[ScanReport]) -> Iterator[ScanReport]:
            for report in reports:
                stats.add(report)
                yield report

        coverage = format_coverage(counted(self._reports("stats")), rules)
        frame = pd.DataFrame(
            [{"engine": engine, **row} for engine, row in coverage.items()],
            columns=["engine", "rule", "fallback", "formats", "unused_rules"],
        )
        return stats, frame


def top_tags(rankings: Iterable[TagRanking], n: int = 10) -> pd.DataFrame:
    """The ``n`` most common tags per category, by number of files carrying them."""
    counts: Dict[LexicalCategory, Counter] = {category: Counter() for category in TAG_CATEGORIES}
    for ranking in rankings:
        for category in TAG_CATEGORIES:
            counts[category].update(ranking.tag_set(category))
    rows = []
    for category in TAG_CATEGORIES:
        ranked = sorted(counts[category].items(), key=lambda item: (-item[1], item[0]))[:n]
        rows.extend(
            {"category": category.value, "rank": rank, "tag": tag, "files": files}
            for rank, (tag, files) in enumerate(ranked, start=1)
        )
    return pd.DataFrame(rows, columns=["category", "rank", "tag", "files"])


def vocabulary_summary(db_path: str, n: int = 10) -> pd.DataFrame:
    """Most observed tokens per tag category from a pass1 statistics database."""
    vocabulary = TokenStatsStore(db_path).load_vocabulary()
    rows = []
    for category in TAG_CATEGORIES:
        rows.extend(
            {"category": category.value, "rank": rank, "token": token, "observations": count}
            for rank, (token, count) in enumerate(vocabulary.top_tokens(category, n), start=1)
        )
    return pd.DataFrame(rows, columns=["category", "rank", "token", "observations"])


def token_stats_summary(db_path: str) -> pd.DataFrame:
    """Distinct tokens and co-occurring pairs per category from a pass1 statistics database."""
    store = TokenStatsStore(db_path)
    rows = [{"category": category.value, **store.summary(category)} for category in store.categories()]
    return pd.DataFrame(rows, columns=["category", "tokens", "pairs"])
