"""
AV Label Tagger

Command-line entry point. Runs the two-pass tagging pipeline over AV scan
reports (pass1 -> alias -> tag), evaluates tag files, builds train/test
datasets from them, and prints corpus statistics.
"""

import argparse
import logging
import sys
from typing import List, Optional

from core.errors import ConfigError, TaggerError
from core.label_parser import TAG_CATEGORIES, LexicalCategory
from core.dataset_builder import read_manifest
from core.pipeline import TaggingPipeline, token_stats_summary, top_tags, vocabulary_summary
from core.tagger import read_tag_file
from utils.charts import create_engine_chart, create_metric_chart, create_split_chart, create_tag_chart, write_figure
from utils.config import load_config
from utils.helpers import atomic_output, format_large_number, format_metrics, setup_logger, write_jsonl
from utils.stats_store import TokenStatsStore

log = logging.getLogger("app")

LOGGER_NAMES = ("app", "core", "utils")


def _category(value: str) -> LexicalCategory:
    category = LexicalCategory.parse(value)
    if category not in TAG_CATEGORIES:
        raise argparse.ArgumentTypeError(f"category must be one of {', '.join(c.value for c in TAG_CATEGORIES)}")
    return category


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="KEY=VALUE configuration file")
    common.add_argument("--reports", help="line-delimited scan report file")
    common.add_argument("--rules", help="rule file")
    common.add_argument("--wordlist", help="wordlist file")
    common.add_argument("--affixes", help="affix file")
    common.add_argument("--aliases", help="user alias override file")
    common.add_argument("--correlations", help="correlation group file")
    common.add_argument("--output-dir", help="directory for pipeline outputs")
    common.add_argument("--seed", type=int, help="random seed for dataset construction")
    common.add_argument("--threads", type=int, help="worker processes for report processing")
    common.add_argument("--batch-size", type=int, help="reports per work unit")
    common.add_argument("--strict", action="store_true", default=None, help="abort on the first malformed record")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common.add_argument("--log-file", help="also append log messages to this file")
    common.add_argument("--no-progress", action="store_true", help="hide progress bars")

    parser = argparse.ArgumentParser(
        prog="av-tagger",
        description="Tag malware files with behaviors, platforms, vulnerabilities and packers from AV labels.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("pass1", parents=[common], help="build the vocabulary and token statistics")
    commands.add_parser("alias", parents=[common], help="resolve token aliases per category")

    tag = commands.add_parser("tag", parents=[common], help="rank tags for every report")
    tag.add_argument("--output", help="tag output file (default: <output-dir>/tags.jsonl)")
    for category in TAG_CATEGORIES:
        name = category.value.lower()
        tag.add_argument(f"--threshold-{name}", type=int, help=f"minimum votes for {category.value} tags")

    evaluate = commands.add_parser("eval", parents=[common], help="score a tag file")
    evaluate.add_argument("predicted", help="tag output file to score")
    truth = evaluate.add_mutually_exclusive_group(required=True)
    truth.add_argument("--reference", help="reference tag file (multi-label metrics)")
    truth.add_argument("--families", help="sha256<TAB>family file (family-consistency metrics)")
    evaluate.add_argument("--tag-map", help="predicted_tag<TAB>reference_tag renaming file")
    evaluate.add_argument("--category", type=_category, help="only score tags of this category")
    evaluate.add_argument("--output", help="write per-tag metric records as JSONL")
    evaluate.add_argument("--html", help="write a per-tag metric chart")

    build = commands.add_parser("build", parents=[common], help="build train/test dataset manifests")
    build.add_argument("tags", help="tag output file")
    build.add_argument("--category", type=_category, help="only build this category")
    build.add_argument("--mode", choices=("temporal", "stratified"), help="split mode")
    build.add_argument("--test-fraction", type=float, help="test share in stratified mode")
    build.add_argument("--html", help="write a split chart (first category)")

    stats = commands.add_parser("stats", parents=[common], help="corpus statistics and top tokens")
    stats.add_argument("--tags", help="tag output file for the top-tag table")
    stats.add_argument("--manifest", help="dataset manifest file to summarize")
    stats.add_argument("--top", type=int, default=10, help="rows per category")
    stats.add_argument("--html", help="write a chart of the first table shown")

    return parser


def _overrides(args: argparse.Namespace) -> dict:
    overrides = {
        "reports": args.reports,
        "rules": args.rules,
        "wordlist": args.wordlist,
        "affixes": args.affixes,
        "aliases": args.aliases,
        "correlations": args.correlations,
        "output_dir": args.output_dir,
        "seed": args.seed,
        "threads": args.threads,
        "batch_size": args.batch_size,
        "strict": args.strict,
    }
    for category in TAG_CATEGORIES:
        key = f"threshold_{category.value.lower()}"
        overrides[key] = getattr(args, key, None)
    overrides["split_mode"] = getattr(args, "mode", None)
    overrides["test_fraction"] = getattr(args, "test_fraction", None)
    return overrides


def cmd_pass1(pipeline: TaggingPipeline, args: argparse.Namespace) -> None:
    result = pipeline.run_pass1()
    corpus = result.corpus
    print(f"reports: {format_large_number(corpus.report_count)}")
    print(f"labels:  {format_large_number(corpus.label_count)}")
    print(f"engines: {len(corpus.engine_counts)}")
    print(f"tokens:  {len(result.vocabulary)} observed, {len(result.vocabulary.resolved)} resolved")
    print(f"wrote {pipeline.output_dir}")


def cmd_alias(pipeline: TaggingPipeline, args: argparse.Namespace) -> None:
    maps = pipeline.run_alias()
    for category, alias_map in maps.items():
        print(f"{category.value}: {len(alias_map)} aliases")


def cmd_tag(pipeline: TaggingPipeline, args: argparse.Namespace) -> None:
    summary = pipeline.run_tag(output=args.output)
    print(f"tagged {summary.tagged} of {summary.reports} reports")
    for category in TAG_CATEGORIES:
        print(f"  {category.value}: {summary.per_category.get(category.value, 0)} files")


def cmd_eval(pipeline: TaggingPipeline, args: argparse.Namespace) -> None:
    report = pipeline.run_eval(
        args.predicted,
        reference=args.reference,
        families=args.families,
        tag_map=args.tag_map,
        category=args.category,
    )
    frame = report.to_frame()
    print(frame.to_string(index=False, float_format=lambda value: f"{value:.3f}"))
    print(format_metrics({"micro_p": report.micro[0], "micro_r": report.micro[1], "micro_f1": report.micro[2]}, 3))
    if args.output:
        with atomic_output(args.output) as handle:
            write_jsonl(report.to_records(), handle)
    if args.html:
        write_figure(create_metric_chart(frame), args.html)


def cmd_build(pipeline: TaggingPipeline, args: argparse.Namespace) -> None:
    manifests = pipeline.run_build(args.tags, category=args.category)
    for manifest in manifests:
        low, high = manifest.temporal_purity()
        print(f"{manifest.category.value}: {len(manifest.vocabulary)} tags, "
              f"{len(manifest.train)} train / {len(manifest.test)} test files")
        if manifest.provenance.get("mode") == "temporal":
            print(f"  max train chunk {low}, min test chunk {high}")
        if manifest.vocabulary:
            print(manifest.counts_frame().to_string(index=False))
    if args.html and manifests:
        write_figure(create_split_chart(manifests[0].counts_frame(), manifests[0].category.value), args.html)


def cmd_stats(pipeline: TaggingPipeline, args: argparse.Namespace) -> None:
    config = pipeline.config
    db_path = pipeline.output_dir / TokenStatsStore.FILENAME
    if not config.reports and not args.tags and not args.manifest and not db_path.exists():
        raise ConfigError("stats needs --reports, --tags, --manifest, or pass1 output in --output-dir")

    figure = None
    if config.reports:
        corpus, coverage = pipeline.corpus_summary()
        print(f"reports: {corpus.report_count}  labels: {corpus.label_count}  engines: {len(corpus.engine_counts)}")
        if not coverage.empty:
            print(coverage.to_string(index=False))
        figure = create_engine_chart(corpus.engine_counts)
    if args.tags:
        table = top_tags(read_tag_file(args.tags), n=args.top)
        print(table.to_string(index=False))
        if figure is None:
            figure = create_tag_chart(table)
    if args.manifest:
        manifest = read_manifest(args.manifest)
        print(f"{manifest.category.value} manifest: {len(manifest.train)} train / {len(manifest.test)} test files")
        low, high = manifest.temporal_purity()
        if low is not None and high is not None:
            print(f"  max train chunk {low}, min test chunk {high}")
        counts = manifest.counts_frame()
        print(counts.to_string(index=False))
        if figure is None:
            figure = create_split_chart(counts, manifest.category.value)
    if db_path.exists():
        totals = TokenStatsStore(str(db_path)).summary()
        print(
            f"vocabulary: {totals['vocabulary_tokens']} tokens  "
            f"token statistics: {totals['tokens']} tokens, {totals['pairs']} pairs"
        )
        print(token_stats_summary(str(db_path)).to_string(index=False))
        print(vocabulary_summary(str(db_path), n=args.top).to_string(index=False))

    if args.html and figure is not None:
        write_figure(figure, args.html)


COMMANDS = {
    "pass1": cmd_pass1,
    "alias": cmd_alias,
    "tag": cmd_tag,
    "eval": cmd_eval,
    "build": cmd_build,
    "stats": cmd_stats,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main application function."""
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.INFO
    for name in LOGGER_NAMES:
        setup_logger(name, log_file=args.log_file, level=level)

    try:
        config = load_config(args.config, overrides=_overrides(args))
        if args.no_progress:
            config.progress = False
        COMMANDS[args.command](TaggingPipeline(config), args)
    except TaggerError as exc:
        log.debug("%s failed", args.command, exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130
    except Exception:
        log.exception("Unexpected failure in %s", args.command)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
