#!/usr/bin/env python3
"""Render before/after re-ranking figures from a retrieval metrics CSV.

Writes four PNGs next to each other:
    relevance_before_after.png   relevance@10 per strategy, pre vs post re-rank
    trust_before_after.png       mean trust@10 per strategy, pre vs post re-rank
    relevance_delta.png          change in relevance@10 per strategy
    trust_delta.png              change in mean trust@10 per strategy

Usage:
    python -m src.visualization.figures --input results/retrieval_metrics.csv
"""
from __future__ import annotations

import argparse
import logging
from pathlib import Path
from typing import Dict, Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import pandas as pd
import seaborn as sns

from src.utils.errors import DataError

logger = logging.getLogger(__name__)

STAGE_LABELS = {"pre_rerank": "Before re-ranking", "post_rerank": "After re-ranking"}
REQUIRED_COLUMNS = {"strategy", "stage", "relevance_at_10", "mean_trust_at_10",
                    "delta_relevance_at_10", "delta_mean_trust_at_10"}


def _load_metrics(input_path) -> pd.DataFrame:
    try:
        df = pd.read_csv(input_path)
    except pd.errors.EmptyDataError as e:
        raise DataError(f"{input_path}: empty metrics CSV") from e
    except pd.errors.ParserError as e:
        raise DataError(f"{input_path}: {e}") from e
    missing = REQUIRED_COLUMNS - set(df.columns)
    if missing:
        raise DataError(f"metrics CSV is missing columns: {sorted(missing)}")
    df["stage_label"] = df["stage"].map(STAGE_LABELS).fillna(df["stage"])
    return df


def _before_after(df: pd.DataFrame, column: str, ylabel: str, path: Path) -> None:
    plt.figure(figsize=(7, 4.5))
    ax = sns.barplot(data=df, x="strategy", y=column, hue="stage_label",
                     hue_order=list(STAGE_LABELS.values()), palette="YlOrRd", errorbar=None)
    std_column = f"{column}_std"
    if std_column in df.columns:
        # bar containers follow hue order, bars inside follow the x order
        strategies = [t.get_text() for t in ax.get_xticklabels()]
        for container, stage in zip(ax.containers, STAGE_LABELS):
            stage_rows = df[df["stage"] == stage].set_index("strategy")
            errors = [stage_rows[std_column].get(s, 0.0) for s in strategies]
            centers = [bar.get_x() + bar.get_width() / 2 for bar in container]
            heights = [bar.get_height() for bar in container]
            ax.errorbar(centers, heights, yerr=errors, fmt="none", ecolor="gray", capsize=3)
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("")
    ax.set_ylabel(ylabel)
    ax.legend(title="")
    plt.tight_layout()
    plt.savefig(path, dpi=200)
    plt.close()


def _delta(df: pd.DataFrame, column: str, ylabel: str, path: Path) -> None:
    data = df[df["stage"] == "post_rerank"][["strategy", column]]
    plt.figure(figsize=(7, 4.5))
    ax = sns.barplot(data=data, x="strategy", y=column, color="#d95f0e", errorbar=None)
    ax.axhline(0.0, color="gray", linewidth=0.8)
    ax.set_xlabel("")
    ax.set_ylabel(ylabel)
    plt.tight_layout()
    plt.savefig(path, dpi=200)
    plt.close()


def create_figures(input_path, output_dir: Optional[str] = None) -> Dict[str, Path]:
    df = _load_metrics(input_path)
    output_dir = Path(output_dir) if output_dir else Path(input_path).parent
    output_dir.mkdir(parents=True, exist_ok=True)
    sns.set_theme(style="whitegrid")

    paths = {
        "relevance": output_dir / "relevance_before_after.png",
        "trust": output_dir / "trust_before_after.png",
        "relevance_delta": output_dir / "relevance_delta.png",
        "trust_delta": output_dir / "trust_delta.png",
    }
    _before_after(df, "relevance_at_10", "Relevance@10", paths["relevance"])
    _before_after(df, "mean_trust_at_10", "Mean domain trust@10", paths["trust"])
    _delta(df, "delta_relevance_at_10", "Change in relevance@10", paths["relevance_delta"])
    _delta(df, "delta_mean_trust_at_10", "Change in mean trust@10", paths["trust_delta"])
    logger.info("figures written to %s", output_dir)
    return paths


def main():
    parser = argparse.ArgumentParser(description="Create before/after re-ranking figures from a metrics CSV")
    parser.add_argument("--input", "-i", required=True, help="Retrieval metrics CSV path")
    parser.add_argument("--output", "-o", default=None, help="Output directory for the PNGs")
    args = parser.parse_args()

    for name, path in create_figures(args.input, args.output).items():
        print(f"Wrote {name} figure: {path}")


if __name__ == "__main__":
    main()
