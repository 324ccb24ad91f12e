"""
Main execution script for the news trustworthiness report pipeline.

Subcommands mirror the pipeline stages so partial re-runs are cheap:

  index      - Build the BM25 index from a JSONL corpus
  search     - Ad-hoc ranked search against an index
  questions  - Generate, filter and select critical questions
  retrieve   - Retrieve, re-rank, judge and filter evidence per question
  report     - Write cited answers and per-article reports
  check      - Verify report citations against the evidence dumps
  evaluate   - Rubric-based scoring of the selected questions
  dashboard  - Question-quality tables and correlations
  figures    - Before/after re-ranking figures from the metrics table
  full       - Run every stage end to end

Exit codes: 0 success, 1 data/validation error, 2 usage/IO error.
"""
import argparse
import logging
import sys
from pathlib import Path

import pandas as pd

# Add project root to path
sys.path.insert(0, str(Path(__file__).resolve().parent))

from config.run_config import RunConfig, load_run_config
from config.settings import EXPANSION_STRATEGIES, SAMPLE_DIR
from src.evaluation.dashboard import format_dashboard, quality_dashboard, write_dashboard
from src.evaluation.scoring import (
    ALL_TOPICS,
    llm_judgments,
    load_rubrics,
    match_questions,
    parse_judgments,
    qgen_score,
)
from src.evidence.pipeline import (
    EvidenceItem,
    EvidencePipeline,
    RelevanceJudge,
    strategy_summary,
    trec_run_lines,
)
from src.evidence.reranker import make_scorer
from src.evidence.trust import load_trust_table
from src.expansion.planners import make_plan, plan_from_text
from src.indexing.index import InvertedIndex, compute_stats, ingest, read_corpus
from src.llm.gateway import LLMGateway
from src.questions.generation import process_article
from src.reports.report_gen import (
    answer_question,
    check_citations,
    evidence_doc_ids,
    synthesize_report,
)
from src.utils.errors import (
    DataError,
    GatewayConfigError,
    IndexFormatError,
    PipelineError,
    QueryPlanError,
    TransportError,
)
from src.utils.helpers import (
    atomic_write_text,
    iter_jsonl,
    parallel_map,
    read_json,
    setup_directories,
    write_json,
    write_jsonl,
)
from src.visualization.figures import create_figures

logger = logging.getLogger("main")

METRIC_COLUMNS = [
    "strategy", "stage", "questions", "relevance_at_10", "relevance_at_10_std",
    "mean_trust_at_10", "mean_trust_at_10_std", "fallback_rate",
    "delta_relevance_at_10", "delta_mean_trust_at_10",
]


# --- configuration ---------------------------------------------------------

def build_config(args) -> RunConfig:
    """Settings defaults < --config file < explicit CLI flags."""
    overrides = {
        "corpus_path": getattr(args, "corpus", None),
        "index_path": getattr(args, "index", None),
        "trust_csv_path": getattr(args, "trust", None),
        "articles_path": getattr(args, "articles", None),
        "output_dir": args.output_dir,
        "questions_per_article": getattr(args, "k", None),
        "candidates_per_article": getattr(args, "candidates", None),
        "expansion_strategy": getattr(args, "strategy", None),
        "k_retrieve": getattr(args, "k_retrieve", None),
        "trust_threshold": getattr(args, "threshold", None),
        "max_report_words": getattr(args, "max_words", None),
        "match_top_m": getattr(args, "top_m", None),
        "seed": args.seed,
        "jobs": args.jobs,
        "gateway": {"backend": args.backend} if args.backend else None,
    }
    if overrides["k_retrieve"] is not None:
        # re-rank everything retrieved
        overrides["rerank_window"] = overrides["k_retrieve"]
    if getattr(args, "llm_filter", False):
        overrides["llm_filter"] = True
    if getattr(args, "lenient", False):
        overrides["strict"] = False
    return load_run_config(args.config, overrides)


def make_gateway(config: RunConfig) -> LLMGateway:
    return LLMGateway.from_config(config.gateway, seed=config.seed)


def strategies_for(args, config: RunConfig):
    if getattr(args, "all_strategies", False):
        return list(EXPANSION_STRATEGIES)
    return [config.expansion_strategy]


# --- commands --------------------------------------------------------------

def cmd_index(args) -> int:
    config = build_config(args)
    print(f"📚 Indexing corpus {config.corpus_path}...")
    stats = ingest(config.corpus_path, config.index_path, strict=config.strict)
    print(f"✅ Index written to {config.index_path}")
    print(f"  • docs: {stats.doc_count}")
    print(f"  • terms: {len(stats.doc_freq)}")
    print(f"  • skipped: {stats.skipped_count}")
    for name, value in stats.avg_field_length.items():
        print(f"  • avg {name} length: {value:.2f}")
    return 0


def cmd_search(args) -> int:
    config = build_config(args)
    plan = plan_from_text(args.query)
    print(f"🔎 {plan.query_string}")
    with InvertedIndex.open(config.index_path) as index:
        results = index.search(plan, args.top)
        for rank, (doc_id, score) in enumerate(results, start=1):
            print(f"{rank:4d}  {score:10.4f}  {doc_id}  {index.document(doc_id).title}")
    if not results:
        print("No matching documents.")
    return 0


def run_questions(config: RunConfig, gateway: LLMGateway) -> Path:
    articles, _ = read_corpus(config.articles_path)
    stats = compute_stats(articles)
    usable = []
    for article in articles:
        if article.body.strip():
            usable.append(article)
        else:
            logger.warning("article %s has an empty body, skipped", article.doc_id)
            print(f"⚠️  Skipping article {article.doc_id}: empty body")

    def _one(article):
        return process_article(article, gateway, stats, k=config.questions_per_article,
                               n_candidates=config.candidates_per_article,
                               max_words=config.max_question_words, seed=config.seed,
                               use_llm_filter=config.llm_filter)

    topics = parallel_map(_one, usable, config.jobs)
    path = Path(config.output_dir) / "questions.json"
    write_json(path, [topic.to_json() for topic in topics])
    for topic in topics:
        print(f"  • {topic.topic_id}: {len(topic.questions)} candidates, {len(topic.selected)} selected")
    return path


def cmd_questions(args) -> int:
    config = build_config(args)
    print("❓ Generating critical questions...")
    path = run_questions(config, make_gateway(config))
    print(f"✅ Questions written to {path}")
    return 0


def selected_questions(run):
    """(topic_id, question_index, text) for every selected question in a questions run."""
    rows = []
    for topic in run:
        selected = [q["text"] for q in topic["questions"] if q["status"] == "selected"]
        rows.extend((topic["topic_id"], i, text) for i, text in enumerate(selected))
    return rows


def run_retrieve(config: RunConfig, gateway: LLMGateway, questions_path: Path, strategies) -> Path:
    output_dir = Path(config.output_dir)
    rows = selected_questions(read_json(questions_path))
    table = load_trust_table(config.trust_csv_path, strict=config.strict)
    judge = RelevanceJudge(gateway)
    scorer = make_scorer(config.reranker_backend, config.reranker_url)

    metric_rows = []
    with InvertedIndex.open(config.index_path) as index:
        pipeline = EvidencePipeline(index, table, judge, scorer, k_retrieve=config.k_retrieve,
                                    rerank_window=config.rerank_window, filter_window=config.filter_window,
                                    trust_threshold=config.trust_threshold, jobs=1)
        for strategy in strategies:
            print(f"\n🔍 Strategy: {strategy}")

            def _one(row):
                topic_id, index_in_topic, text = row
                try:
                    plan = make_plan(text, strategy, gateway, config.boolean_combinator)
                except QueryPlanError as e:
                    logger.warning("no plan for %r: %s", text, e)
                    return None
                return pipeline.run(topic_id, index_in_topic, text, plan)

            results = [r for r in parallel_map(_one, rows, config.jobs) if r is not None]
            write_jsonl(output_dir / f"evidence_{strategy}.jsonl", [r.to_json() for r in results])
            write_json(output_dir / f"plans_{strategy}.json",
                       [{"topic_id": r.topic_id, "question_index": r.question_index, **r.plan.to_json()}
                        for r in results])
            atomic_write_text(output_dir / f"run_{strategy}.trec",
                              "".join(line + "\n" for line in trec_run_lines(results, f"ntr_{strategy}")))
            for summary in strategy_summary(results):
                metric_rows.append({"strategy": strategy, **summary})
                print(f"  • {summary['stage']}: relevance@10={summary['relevance_at_10']:.3f} "
                      f"trust@10={summary['mean_trust_at_10']:.3f} "
                      f"fallback={summary['fallback_rate']:.2f}")

    path = output_dir / "retrieval_metrics.csv"
    df = pd.DataFrame(metric_rows, columns=METRIC_COLUMNS)
    atomic_write_text(path, df.to_csv(index=False, float_format="%.6f"))
    return path


def cmd_retrieve(args) -> int:
    config = build_config(args)
    questions_path = Path(args.questions or Path(config.output_dir) / "questions.json")
    print("📥 Retrieving and filtering evidence...")
    path = run_retrieve(config, make_gateway(config), questions_path, strategies_for(args, config))
    print(f"\n✅ Metrics written to {path}")
    return 0


def _evidence_items(record, doc_ids, index):
    by_id = {item["doc_id"]: item for item in record["post_rerank"]}
    items = []
    for doc_id in doc_ids:
        item = EvidenceItem.from_json(by_id[doc_id])
        doc = index.document(doc_id)
        item.title, item.body = doc.title, doc.body
        items.append(item)
    return items


def run_report(config: RunConfig, gateway: LLMGateway, strategy: str) -> Path:
    output_dir = Path(config.output_dir)
    records = list(iter_jsonl(output_dir / f"evidence_{strategy}.jsonl"))
    topics = list(dict.fromkeys(r["topic_id"] for r in records))

    with InvertedIndex.open(config.index_path) as index:
        def _answer(record):
            doc_ids = record["top3_trusted"] or record["top10_relevant"]
            return answer_question(record["question"], _evidence_items(record, doc_ids, index), gateway)

        answers = parallel_map(_answer, records, config.jobs)

    reports = []
    for topic_id in topics:
        topic_answers = [a for r, a in zip(records, answers) if r["topic_id"] == topic_id]
        report = synthesize_report(topic_id, topic_answers, gateway, config.max_report_words)
        reports.append(report.to_json())
        print(f"  • {topic_id}: {report.word_count} words, {len(report.report_citations)} citations"
              + (f" [{', '.join(report.flags)}]" if report.flags else ""))

    path = output_dir / f"reports_{strategy}.json"
    write_json(path, reports)
    return path


def run_check(reports_path: Path, evidence_path: Path) -> int:
    checked = check_citations(read_json(reports_path), evidence_doc_ids(iter_jsonl(evidence_path)))
    print(f"✅ {checked} citations resolve to dumped evidence")
    return 0


def cmd_report(args) -> int:
    config = build_config(args)
    strategy = config.expansion_strategy
    print(f"📝 Writing reports from {strategy} evidence...")
    path = run_report(config, make_gateway(config), strategy)
    run_check(path, Path(config.output_dir) / f"evidence_{strategy}.jsonl")
    print(f"✅ Reports written to {path}")
    return 0


def cmd_check(args) -> int:
    return run_check(Path(args.reports), Path(args.evidence))


def run_evaluate(config: RunConfig, gateway: LLMGateway, questions_path: Path, rubric_path: Path,
                 judgments_path=None, judge: str = "human") -> Path:
    run = read_json(questions_path)
    rubrics = load_rubrics(read_json(rubric_path))
    judgments_data = read_json(judgments_path) if judgments_path else None

    results = []
    for topic in run:
        topic_id = topic["topic_id"]
        rubric = rubrics.get(topic_id, rubrics.get(ALL_TOPICS))
        if not rubric:
            logger.warning("no rubric for topic %s", topic_id)
            continue
        system = [q["text"] for q in topic["questions"] if q["status"] == "selected"]
        if judge == "llm":
            matches = match_questions(rubric, system, gateway, config.match_top_m)
            judgments = llm_judgments(rubric, system, matches, gateway)
        else:
            entries = judgments_data
            if isinstance(judgments_data, dict):
                entries = judgments_data.get(topic_id, judgments_data.get(ALL_TOPICS))
            if entries is None:
                logger.warning("no judgments for topic %s", topic_id)
                continue
            judgments = parse_judgments(entries, rubric, system)
        results.append({
            "topic_id": topic_id,
            "qgen_score": qgen_score(rubric, judgments, normalize=True),
            "qgen_score_raw": qgen_score(rubric, judgments, normalize=False),
        })
        print(f"  • {topic_id}: normalized={results[-1]['qgen_score']:.4f} "
              f"raw={results[-1]['qgen_score_raw']:.4f}")

    mean = sum(r["qgen_score"] for r in results) / len(results) if results else 0.0
    mean_raw = sum(r["qgen_score_raw"] for r in results) / len(results) if results else 0.0
    print(f"  • mean: normalized={mean:.4f} raw={mean_raw:.4f}")
    path = Path(config.output_dir) / "evaluation.json"
    write_json(path, {"judge": judge, "unofficial": judge == "llm", "topics": results,
                      "mean_qgen_score": mean, "mean_qgen_score_raw": mean_raw})
    return path


def cmd_evaluate(args) -> int:
    config = build_config(args)
    if args.judge == "human" and not args.judgments:
        raise DataError("--judgments is required unless --judge llm is used")
    questions_path = Path(args.questions or Path(config.output_dir) / "questions.json")
    print("📊 Scoring questions against the rubric...")
    path = run_evaluate(config, make_gateway(config), questions_path, Path(args.rubric),
                        args.judgments, args.judge)
    print(f"✅ Evaluation written to {path}")
    return 0


def run_dashboard(config: RunConfig, questions_path: Path) -> Path:
    articles = None
    if Path(config.articles_path).exists():
        articles = {doc.doc_id: doc for doc in read_corpus(config.articles_path)[0]}
    per_topic, correlation = quality_dashboard(read_json(questions_path), articles)
    paths = write_dashboard(per_topic, correlation, config.output_dir)
    print(format_dashboard(per_topic, correlation))
    return paths["text"]


def cmd_dashboard(args) -> int:
    config = build_config(args)
    questions_path = Path(args.questions or Path(config.output_dir) / "questions.json")
    path = run_dashboard(config, questions_path)
    print(f"✅ Dashboard written to {path}")
    return 0


def cmd_figures(args) -> int:
    config = build_config(args)
    metrics = Path(args.metrics or Path(config.output_dir) / "retrieval_metrics.csv")
    print("📈 Rendering figures...")
    for name, path in create_figures(metrics, args.figures_dir).items():
        print(f"  • {name}: {path}")
    print("✅ Figures generated")
    return 0


def cmd_full(args) -> int:
    """Run the complete pipeline."""
    config = build_config(args)
    output_dir = Path(config.output_dir)
    setup_directories(output_dir, config.index_path)
    gateway = make_gateway(config)
    strategies = strategies_for(args, config)

    print("🚀 Starting trust-report pipeline")
    print("=" * 60)

    print("\n📚 Step 1: Indexing corpus...")
    stats = ingest(config.corpus_path, config.index_path, strict=config.strict)
    print(f"✅ {stats.doc_count} documents indexed")

    print("\n❓ Step 2: Generating questions...")
    questions_path = run_questions(config, gateway)
    print(f"✅ Questions written to {questions_path}")

    print("\n🔍 Step 3: Retrieving evidence...")
    metrics_path = run_retrieve(config, gateway, questions_path, strategies)
    print(f"✅ Metrics written to {metrics_path}")

    print("\n📝 Step 4: Writing reports...")
    for strategy in strategies:
        reports_path = run_report(config, gateway, strategy)
        run_check(reports_path, output_dir / f"evidence_{strategy}.jsonl")

    rubric = Path(args.rubric) if args.rubric else None
    if rubric and rubric.exists():
        print("\n📊 Step 5: Evaluating questions...")
        run_evaluate(config, gateway, questions_path, rubric, args.judgments,
                     "human" if args.judgments else "llm")
    else:
        print("\n⚠️  Step 5 skipped: no rubric file")

    print("\n📋 Step 6: Question quality dashboard...")
    run_dashboard(config, questions_path)

    print("\n🎉 Pipeline completed successfully!")
    print(f"\n📋 Generated outputs in {output_dir}/")
    return 0


# --- argument parsing ------------------------------------------------------

def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid int value: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _common_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="JSON run configuration file")
    parent.add_argument("--seed", type=int, help="Random seed (stub backend, k-means)")
    parent.add_argument("--jobs", type=positive_int, help="Worker threads across topics/questions")
    parent.add_argument("--backend", choices=["stub", "live"], help="LLM gateway backend")
    parent.add_argument("--output-dir", dest="output_dir", help="Directory for run artifacts")
    parent.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    return parent


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        description="News trustworthiness report pipeline",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__.split("\n\n", 1)[1],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", parents=[common], help="Build the BM25 index")
    p.add_argument("--corpus", help="Corpus JSONL file")
    p.add_argument("--index", help="Index directory")
    p.add_argument("--lenient", action="store_true", help="Skip malformed lines instead of failing")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("search", parents=[common], help="Ad-hoc search")
    p.add_argument("--index", help="Index directory")
    p.add_argument("--query", "-q", required=True, help="Question or query string")
    p.add_argument("--top", "-k", type=positive_int, default=10, help="Number of results")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("questions", parents=[common], help="Generate critical questions")
    p.add_argument("--articles", help="Articles JSONL file")
    p.add_argument("--k", type=positive_int, help="Questions selected per article")
    p.add_argument("--candidates", type=positive_int, help="Candidates requested per article")
    p.add_argument("--llm-filter", dest="llm_filter", action="store_true", help="Add the LLM KEEP/REJECT filter")
    p.set_defaults(func=cmd_questions)

    p = sub.add_parser("retrieve", parents=[common], help="Retrieve and filter evidence")
    p.add_argument("--questions", help="Questions run file")
    p.add_argument("--index", help="Index directory")
    p.add_argument("--trust", help="Domain trust CSV")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--strategy", choices=EXPANSION_STRATEGIES, help="Query expansion strategy")
    group.add_argument("--all-strategies", dest="all_strategies", action="store_true")
    p.add_argument("--k-retrieve", dest="k_retrieve", type=positive_int, help="BM25 candidates per question")
    p.add_argument("--threshold", type=float, help="Domain trust threshold")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("report", parents=[common], help="Write cited reports")
    p.add_argument("--index", help="Index directory")
    p.add_argument("--strategy", choices=EXPANSION_STRATEGIES, help="Evidence dump to report from")
    p.add_argument("--max-words", dest="max_words", type=positive_int, help="Report word limit")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("check", parents=[common], help="Check report citations")
    p.add_argument("--reports", required=True, help="Reports run file")
    p.add_argument("--evidence", required=True, help="Evidence dump JSONL")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("evaluate", parents=[common], help="Rubric-based question scoring")
    p.add_argument("--questions", help="Questions run file")
    p.add_argument("--rubric", required=True, help="Rubric JSON")
    p.add_argument("--judgments", help="Similarity judgments JSON")
    p.add_argument("--judge", choices=["human", "llm"], default="human",
                   help="'llm' labels matches with the model (unofficial)")
    p.add_argument("--top-m", dest="top_m", type=positive_int, help="System questions matched per rubric question")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("dashboard", parents=[common], help="Question quality dashboard")
    p.add_argument("--questions", help="Questions run file")
    p.add_argument("--articles", help="Articles JSONL file")
    p.set_defaults(func=cmd_dashboard)

    p = sub.add_parser("figures", parents=[common], help="Before/after re-ranking figures")
    p.add_argument("--metrics", help="Retrieval metrics CSV")
    p.add_argument("--figures-dir", dest="figures_dir", help="Directory for the PNGs")
    p.set_defaults(func=cmd_figures)

    p = sub.add_parser("full", parents=[common], help="Run every stage")
    p.add_argument("--corpus", help="Corpus JSONL file")
    p.add_argument("--index", help="Index directory")
    p.add_argument("--articles", help="Articles JSONL file")
    p.add_argument("--trust", help="Domain trust CSV")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--strategy", choices=EXPANSION_STRATEGIES, help="Query expansion strategy")
    group.add_argument("--all-strategies", dest="all_strategies", action="store_true")
    p.add_argument("--rubric", default=str(SAMPLE_DIR / "rubric.json"), help="Rubric JSON")
    p.add_argument("--judgments", default=str(SAMPLE_DIR / "judgments.json"), help="Similarity judgments JSON")
    p.set_defaults(func=cmd_full)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except DataError as e:
        print(f"❌ Error: {e}", file=sys.stderr)
        return 1
    except (OSError, GatewayConfigError, IndexFormatError, TransportError) as e:
        print(f"❌ Error: {e}", file=sys.stderr)
        return 2
    except (PipelineError, ValueError) as e:
        print(f"❌ Error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
