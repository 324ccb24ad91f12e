"""
Question-quality dashboard: per-topic aggregates of the quality metrics and
their Pearson correlation matrix, as CSV and as plain text.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Mapping, Optional, Sequence, Tuple

import pandas as pd

from src.questions.quality import CRAAP_COMPONENTS
from src.utils.helpers import atomic_write_text

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["tfidf_cosine", "jaccard", "embed_cosine"] + [f"craap_{c}" for c in CRAAP_COMPONENTS]


def metrics_frame(run: Sequence[Mapping]) -> pd.DataFrame:
    """One row per selected question; missing metrics become NaN."""
    rows = []
    for topic in run:
        for question in topic.get("questions", []):
            if question.get("status") != "selected":
                continue
            quality = question.get("quality") or {}
            craap = quality.get("craap") or {}
            row = {"topic_id": topic["topic_id"], "question": question["text"]}
            for name in ("tfidf_cosine", "jaccard", "embed_cosine"):
                row[name] = quality.get(name)
            for name in CRAAP_COMPONENTS:
                row[f"craap_{name}"] = craap.get(name)
            rows.append(row)
    df = pd.DataFrame(rows, columns=["topic_id", "question"] + METRIC_COLUMNS)
    df[METRIC_COLUMNS] = df[METRIC_COLUMNS].apply(pd.to_numeric, errors="coerce")
    return df


def quality_dashboard(run: Sequence[Mapping], articles: Optional[Mapping[str, object]] = None
                      ) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """(per-topic mean table, Pearson correlation matrix)."""
    df = metrics_frame(run)
    per_topic = df.groupby("topic_id", sort=True)[METRIC_COLUMNS].mean()
    per_topic.insert(0, "selected", df.groupby("topic_id", sort=True).size())
    # topics without any selected question keep a row
    for topic in run:
        if topic["topic_id"] not in per_topic.index:
            per_topic.loc[topic["topic_id"], "selected"] = 0
    per_topic = per_topic.sort_index()
    if articles:
        per_topic.insert(0, "title", [getattr(articles.get(t), "title", "") for t in per_topic.index])
    correlation = df[METRIC_COLUMNS].corr(method="pearson")
    return per_topic, correlation


def format_dashboard(per_topic: pd.DataFrame, correlation: pd.DataFrame) -> str:
    lines = ["QUESTION QUALITY BY TOPIC", "=" * 60,
             per_topic.to_string(na_rep="", float_format=lambda v: f"{v:.4f}"), "",
             "PEARSON CORRELATION", "=" * 60,
             correlation.to_string(na_rep="", float_format=lambda v: f"{v:.4f}")]
    return "\n".join(lines) + "\n"


def write_dashboard(per_topic: pd.DataFrame, correlation: pd.DataFrame, output_dir) -> dict:
    output_dir = Path(output_dir)
    paths = {
        "per_topic": output_dir / "quality_per_topic.csv",
        "correlation": output_dir / "quality_correlation.csv",
        "text": output_dir / "quality_dashboard.txt",
    }
    atomic_write_text(paths["per_topic"], per_topic.to_csv(na_rep="", float_format="%.6f"))
    atomic_write_text(paths["correlation"], correlation.to_csv(na_rep="", float_format="%.6f"))
    atomic_write_text(paths["text"], format_dashboard(per_topic, correlation))
    logger.info("quality dashboard written to %s", output_dir)
    return paths
