"""Shared fixtures: stub gateway, toy corpora and a built sample index."""
import json
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from config.settings import SAMPLE_DIR
from src.indexing.index import InvertedIndex, ingest
from src.llm.gateway import LLMGateway, StubBackend


def write_corpus(path, records):
    """Write corpus records as JSONL; dicts are dumped, strings written as-is."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record if isinstance(record, str) else json.dumps(record))
            fh.write("\n")
    return path


def make_doc(doc_id, body="", title="", headings="", url=""):
    return {"docid": doc_id, "url": url, "title": title, "headings": headings, "segment": body}


@pytest.fixture
def stub_gateway():
    return LLMGateway(StubBackend(seed=42), seed=42)


@pytest.fixture
def build_index(tmp_path):
    """Factory: build_index(records) -> opened InvertedIndex over those records."""
    opened = []

    def _build(records, name="idx"):
        corpus = write_corpus(tmp_path / f"{name}.jsonl", records)
        ingest(corpus, tmp_path / name)
        index = InvertedIndex.open(tmp_path / name)
        opened.append(index)
        return index

    yield _build
    for index in opened:
        index.close()


@pytest.fixture
def sample_index(tmp_path):
    ingest(SAMPLE_DIR / "corpus.jsonl", tmp_path / "sample_index")
    index = InvertedIndex.open(tmp_path / "sample_index")
    yield index
    index.close()
