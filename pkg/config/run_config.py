"""
Run configuration: settings defaults < JSON config file < CLI flags.

The config file is a JSON object with the RunConfig field names; the nested
"gateway" object uses the GatewayConfig field names. Unknown keys are rejected.

    {
      "corpus_path": "data/sample/corpus.jsonl",
      "index_path": "index/sample",
      "trust_csv_path": "data/sample/trust.csv",
      "expansion_strategy": "cot",
      "gateway": {"backend": "live", "model_chat": "gpt-4o-nano"}
    }
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from config.settings import (
    BOOLEAN_COMBINATOR,
    CANDIDATES_PER_ARTICLE,
    DEFAULT_JOBS,
    FILTER_WINDOW,
    INDEX_DIR,
    K_RETRIEVE,
    MAX_QUESTION_WORDS,
    MAX_REPORT_WORDS,
    MATCH_TOP_M,
    MAX_MATCH_TOP_M,
    QUESTIONS_PER_ARTICLE,
    RANDOM_SEED,
    RERANK_WINDOW,
    RERANKER_BACKEND,
    RERANKER_URL,
    RESULTS_DIR,
    SAMPLE_DIR,
    TRUST_THRESHOLD,
)
from src.llm.gateway import GatewayConfig
from src.utils.errors import DataError

Strategy = Literal["baseline", "boolean", "cot", "structured"]


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    corpus_path: Path = SAMPLE_DIR / "corpus.jsonl"
    index_path: Path = INDEX_DIR / "sample"
    trust_csv_path: Path = SAMPLE_DIR / "trust.csv"
    articles_path: Path = SAMPLE_DIR / "articles.jsonl"
    output_dir: Path = RESULTS_DIR
    gateway: GatewayConfig = Field(default_factory=GatewayConfig)
    questions_per_article: int = Field(QUESTIONS_PER_ARTICLE, ge=1)
    candidates_per_article: int = Field(CANDIDATES_PER_ARTICLE, ge=1)
    max_question_words: int = Field(MAX_QUESTION_WORDS, ge=1)
    llm_filter: bool = False
    expansion_strategy: Strategy = "baseline"
    boolean_combinator: Literal["or", "and"] = BOOLEAN_COMBINATOR
    k_retrieve: int = Field(K_RETRIEVE, ge=1)
    rerank_window: int = Field(RERANK_WINDOW, ge=1)
    filter_window: int = Field(FILTER_WINDOW, ge=1)
    trust_threshold: float = Field(TRUST_THRESHOLD, ge=0.0, le=1.0)
    reranker_backend: Literal["stub", "http"] = RERANKER_BACKEND
    reranker_url: str = RERANKER_URL
    max_report_words: int = Field(MAX_REPORT_WORDS, ge=1)
    match_top_m: int = Field(MATCH_TOP_M, ge=1, le=MAX_MATCH_TOP_M)
    strict: bool = True
    seed: int = RANDOM_SEED
    jobs: int = Field(DEFAULT_JOBS, ge=1)

    @model_validator(mode="after")
    def _check_windows(self):
        if not self.filter_window <= self.rerank_window <= self.k_retrieve:
            raise ValueError("need filter_window <= rerank_window <= k_retrieve")
        if self.candidates_per_article < self.questions_per_article:
            raise ValueError("candidates_per_article must be >= questions_per_article")
        return self


def _merge(base: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_run_config(path: Optional[str] = None, overrides: Mapping[str, Any] = None) -> RunConfig:
    """Defaults, then the JSON file at `path`, then non-None `overrides`."""
    data: Dict[str, Any] = {}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as e:
                raise DataError(f"config file {path}: {e}") from e
        if not isinstance(data, dict):
            raise DataError(f"config file {path} must hold a JSON object")
    data = _merge(data, overrides or {})
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise DataError(f"invalid configuration: {e}") from e
