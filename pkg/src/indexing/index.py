"""
Corpus ingestion, persistent inverted index and BM25 ranking.

Index directory layout (version 1):

    MANIFEST      b"NTRIDX" + version byte + b"\\n" + JSON stats (sorted keys)
    terms.tsv     term<TAB>doc_freq<TAB>offset<TAB>count, sorted by term
    postings.bin  b"NTRIDX" + version byte, then little-endian int32 triples
                  (doc_ordinal, field_id, term_frequency) grouped per term in
                  terms.tsv order, each group sorted by (doc_ordinal, field_id)
    docs.jsonl    one document per ordinal with its per-field token lengths

Ordinals follow corpus line order, so the same input always yields the same
bytes.
"""
from __future__ import annotations

import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from config.settings import (
    BM25_B,
    BM25_K1,
    FIELD_WEIGHTS,
    INDEX_FIELDS,
    INDEX_MAGIC,
    INDEX_VERSION,
    POSTINGS_CACHE_SIZE,
)
from src.expansion.query_ast import And, Or, QueryNode, Term
from src.indexing.analyzer import analyze
from src.utils.errors import (
    CorpusFormatError,
    DuplicateDocumentError,
    IndexFormatError,
    IndexNotOpenError,
)
from src.utils.helpers import atomic_write_bytes, atomic_write_text

logger = logging.getLogger(__name__)

FIELD_IDS = {name: i for i, name in enumerate(INDEX_FIELDS)}
MANIFEST_FILE = "MANIFEST"
TERMS_FILE = "terms.tsv"
POSTINGS_FILE = "postings.bin"
DOCS_FILE = "docs.jsonl"


@dataclass(frozen=True)
class Document:
    """One corpus segment, the retrieval unit."""
    doc_id: str
    url: str = ""
    title: str = ""
    headings: str = ""
    body: str = ""

    def field_text(self, name: str) -> str:
        return getattr(self, name)

    @classmethod
    def from_json(cls, obj: Mapping) -> "Document":
        """Build from a corpus record (keys docid, url, title, headings, segment)."""
        if not isinstance(obj, Mapping):
            raise CorpusFormatError("record is not a JSON object")
        doc_id = obj.get("docid", obj.get("doc_id"))
        if not isinstance(doc_id, str) or not doc_id:
            raise CorpusFormatError("missing or empty 'docid'")
        body = obj.get("segment", obj.get("body", ""))
        values = {"url": obj.get("url", ""), "title": obj.get("title", ""),
                  "headings": obj.get("headings", ""), "body": body}
        for key, value in values.items():
            if value is None:
                values[key] = ""
            elif not isinstance(value, str):
                raise CorpusFormatError(f"field '{key}' of {doc_id} is not a string")
        return cls(doc_id=doc_id, **values)

    def to_json(self) -> Dict[str, str]:
        return {"docid": self.doc_id, "url": self.url, "title": self.title,
                "headings": self.headings, "segment": self.body}


@dataclass
class PostingList:
    term: str
    postings: List[Tuple[int, str, int]] = field(default_factory=list)


@dataclass
class IndexStats:
    doc_count: int
    avg_field_length: Dict[str, float]
    doc_freq: Dict[str, int]
    skipped_count: int = 0

    def idf(self, term: str) -> float:
        df = self.doc_freq.get(term, 0)
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))


def bm25_term_score(tf: int, idf: float, field_length: int, avg_length: float,
                    k1: float = BM25_K1, b: float = BM25_B) -> float:
    """IDF · tf·(k1+1) / (tf + k1·(1−b+b·len/avglen)); 0 for tf == 0."""
    if tf <= 0:
        return 0.0
    norm = k1 * (1.0 - b + b * field_length / avg_length)
    return idf * tf * (k1 + 1.0) / (tf + norm)


def _average_lengths(lengths: Sequence[Sequence[int]]) -> Dict[str, float]:
    averages = {}
    for field_id, name in enumerate(INDEX_FIELDS):
        total = sum(row[field_id] for row in lengths)
        # all-empty field: any positive average leaves scores unchanged (tf is 0)
        averages[name] = total / len(lengths) if total > 0 else 1.0
    return averages


def _analyze_document(doc: Document) -> List[List[str]]:
    return [analyze(doc.field_text(name)) for name in INDEX_FIELDS]


def compute_stats(documents: Iterable[Document]) -> IndexStats:
    """In-memory statistics for a document set (no index written)."""
    lengths = []
    doc_freq: Counter = Counter()
    for doc in documents:
        fields = _analyze_document(doc)
        lengths.append([len(tokens) for tokens in fields])
        doc_freq.update({t for tokens in fields for t in tokens})
    avg = _average_lengths(lengths) if lengths else {name: 0.0 for name in INDEX_FIELDS}
    return IndexStats(doc_count=len(lengths), avg_field_length=avg, doc_freq=dict(doc_freq))


def read_corpus(corpus_path, strict: bool = True) -> Tuple[List[Document], int]:
    """Parse a JSONL corpus; returns (documents, skipped line count)."""
    documents: List[Document] = []
    seen = set()
    skipped = 0
    with open(corpus_path, "rb") as fh:
        for line_number, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                doc = Document.from_json(json.loads(raw.decode("utf-8")))
            except (UnicodeDecodeError, json.JSONDecodeError, CorpusFormatError) as e:
                if strict:
                    if isinstance(e, UnicodeDecodeError):
                        message = f"invalid UTF-8 at byte {e.start}"
                    elif isinstance(e, json.JSONDecodeError):
                        message = e.msg
                    else:
                        message = str(e)
                    raise CorpusFormatError(f"malformed record: {message}", line_number) from e
                skipped += 1
                logger.warning("skipping malformed corpus line %d", line_number)
                continue
            if doc.doc_id in seen:
                raise DuplicateDocumentError(doc.doc_id)
            seen.add(doc.doc_id)
            documents.append(doc)
    return documents, skipped


def ingest(corpus_path, index_path, strict: bool = True) -> IndexStats:
    """Build a persistent index from a JSONL corpus and return its statistics."""
    documents, skipped = read_corpus(corpus_path, strict=strict)

    postings: Dict[str, Dict[Tuple[int, int], int]] = defaultdict(dict)
    lengths: List[List[int]] = []
    for ordinal, doc in enumerate(documents):
        fields = _analyze_document(doc)
        lengths.append([len(tokens) for tokens in fields])
        for field_id, tokens in enumerate(fields):
            for term, tf in Counter(tokens).items():
                postings[term][(ordinal, field_id)] = tf

    avg = _average_lengths(lengths) if lengths else {name: 0.0 for name in INDEX_FIELDS}
    doc_freq = {term: len({ordinal for ordinal, _ in entries}) for term, entries in postings.items()}
    stats = IndexStats(doc_count=len(documents), avg_field_length=avg,
                       doc_freq=doc_freq, skipped_count=skipped)

    term_lines = []
    triples: List[int] = []
    for term in sorted(postings):
        entries = sorted(postings[term].items())
        offset = len(triples) // 3
        for (ordinal, field_id), tf in entries:
            triples.extend((ordinal, field_id, tf))
        term_lines.append(f"{term}\t{doc_freq[term]}\t{offset}\t{len(entries)}\n")

    header = INDEX_MAGIC + bytes([INDEX_VERSION])
    manifest = {
        "doc_count": stats.doc_count,
        "avg_field_length": stats.avg_field_length,
        "fields": list(INDEX_FIELDS),
        "term_count": len(term_lines),
        "posting_count": len(triples) // 3,
        "skipped_count": skipped,
    }
    index_path = Path(index_path)
    index_path.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(index_path / MANIFEST_FILE,
                       header + b"\n" + json.dumps(manifest, sort_keys=True).encode("utf-8") + b"\n")
    atomic_write_text(index_path / TERMS_FILE, "".join(term_lines))
    atomic_write_bytes(index_path / POSTINGS_FILE,
                       header + np.asarray(triples, dtype="<i4").tobytes())
    doc_lines = []
    for doc, row in zip(documents, lengths):
        record = {"doc_id": doc.doc_id, "url": doc.url, "title": doc.title,
                  "headings": doc.headings, "body": doc.body, "lengths": row}
        doc_lines.append(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
    atomic_write_text(index_path / DOCS_FILE, "".join(doc_lines))

    logger.info("indexed %d documents, %d terms", stats.doc_count, len(term_lines))
    return stats


def _check_header(data: bytes, name: str) -> None:
    header = INDEX_MAGIC + bytes([INDEX_VERSION])
    if not data.startswith(INDEX_MAGIC):
        raise IndexFormatError(f"{name}: not an index file (bad magic)")
    if data[: len(header)] != header:
        raise IndexFormatError(f"{name}: unsupported index version {data[len(INDEX_MAGIC)]}")


class InvertedIndex:
    """Read-only view over a persisted index; safe to share between threads."""

    def __init__(self, path, cache_size: int = POSTINGS_CACHE_SIZE):
        self.path = Path(path)
        self._open = False
        self._stats: Optional[IndexStats] = None
        self._documents: List[Document] = []
        self._lengths: List[Tuple[int, ...]] = []
        self._ordinal_of: Dict[str, int] = {}
        self._term_slices: Dict[str, Tuple[int, int]] = {}
        self._triples: Optional[np.ndarray] = None
        self._cached_postings = lru_cache(maxsize=cache_size)(self._read_postings)

    @classmethod
    def open(cls, path) -> "InvertedIndex":
        index = cls(path)
        index.load()
        return index

    def load(self) -> None:
        self.close()
        self._documents, self._lengths = [], []
        self._ordinal_of, self._term_slices = {}, {}
        manifest_bytes = (self.path / MANIFEST_FILE).read_bytes()
        _check_header(manifest_bytes, MANIFEST_FILE)
        manifest = json.loads(manifest_bytes.split(b"\n", 1)[1].decode("utf-8"))
        if manifest.get("fields") != list(INDEX_FIELDS):
            raise IndexFormatError(f"index fields {manifest.get('fields')} do not match {list(INDEX_FIELDS)}")

        postings_bytes = (self.path / POSTINGS_FILE).read_bytes()
        _check_header(postings_bytes, POSTINGS_FILE)
        body = postings_bytes[len(INDEX_MAGIC) + 1:]
        self._triples = np.frombuffer(body, dtype="<i4").reshape(-1, 3)

        doc_freq = {}
        with open(self.path / TERMS_FILE, "r", encoding="utf-8") as fh:
            for line in fh:
                term, df, offset, count = line.rstrip("\n").split("\t")
                doc_freq[term] = int(df)
                self._term_slices[term] = (int(offset), int(count))

        with open(self.path / DOCS_FILE, "r", encoding="utf-8") as fh:
            for ordinal, line in enumerate(fh):
                record = json.loads(line)
                doc = Document(record["doc_id"], record["url"], record["title"],
                               record["headings"], record["body"])
                self._documents.append(doc)
                self._lengths.append(tuple(record["lengths"]))
                self._ordinal_of[doc.doc_id] = ordinal

        self._stats = IndexStats(
            doc_count=manifest["doc_count"],
            avg_field_length=manifest["avg_field_length"],
            doc_freq=doc_freq,
            skipped_count=manifest.get("skipped_count", 0),
        )
        self._open = True

    def close(self) -> None:
        self._open = False
        self._triples = None
        self._cached_postings.cache_clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _require_open(self) -> None:
        if not self._open:
            raise IndexNotOpenError(f"index at {self.path} is not open")

    @property
    def stats(self) -> IndexStats:
        self._require_open()
        return self._stats

    def __len__(self) -> int:
        return len(self._documents)

    def document(self, doc_id: str) -> Document:
        self._require_open()
        return self._documents[self._ordinal_of[doc_id]]

    def document_at(self, ordinal: int) -> Document:
        self._require_open()
        return self._documents[ordinal]

    def postings(self, term: str) -> Dict[int, Tuple[int, ...]]:
        """doc_ordinal -> per-field term frequencies (INDEX_FIELDS order)."""
        self._require_open()
        return self._cached_postings(term)

    def _read_postings(self, term: str) -> Dict[int, Tuple[int, ...]]:
        result: Dict[int, List[int]] = {}
        if term in self._term_slices:
            offset, count = self._term_slices[term]
            for ordinal, field_id, tf in self._triples[offset: offset + count].tolist():
                result.setdefault(ordinal, [0] * len(INDEX_FIELDS))[field_id] = tf
        return {ordinal: tuple(tfs) for ordinal, tfs in result.items()}

    def posting_list(self, term: str) -> PostingList:
        plist = PostingList(term)
        for ordinal, tfs in sorted(self.postings(term).items()):
            for field_id, tf in enumerate(tfs):
                if tf:
                    plist.postings.append((ordinal, INDEX_FIELDS[field_id], tf))
        return plist

    def _field_score(self, term: str, tfs: Tuple[int, ...], ordinal: int, fields: Sequence[str],
                     k1: float, b: float, weights: Mapping[str, float]) -> float:
        stats = self._stats
        idf = stats.idf(term)
        score = 0.0
        for name in fields:
            field_id = FIELD_IDS[name]
            tf = tfs[field_id]
            if tf:
                score += weights.get(name, 1.0) * bm25_term_score(
                    tf, idf, self._lengths[ordinal][field_id], stats.avg_field_length[name], k1, b)
        return score

    def bm25_score(self, query_terms: Sequence[str], doc_ordinal: int, k1: float = BM25_K1,
                   b: float = BM25_B, field_weights: Mapping[str, float] = None) -> float:
        """Sum of per-field BM25 over all fields for each query term; unknown terms add 0."""
        self._require_open()
        weights = field_weights or FIELD_WEIGHTS
        score = 0.0
        for term in query_terms:
            tfs = self.postings(term).get(doc_ordinal)
            if tfs is not None:
                score += self._field_score(term, tfs, doc_ordinal, INDEX_FIELDS, k1, b, weights)
        return score

    def _evaluate(self, node: QueryNode, k1: float, b: float,
                  weights: Mapping[str, float]) -> Dict[int, float]:
        """Matching doc ordinals mapped to their score for this subtree."""
        if isinstance(node, Term):
            fields = INDEX_FIELDS if node.field == "all" else (node.field,)
            matches = {}
            for ordinal, tfs in self.postings(node.text).items():
                if any(tfs[FIELD_IDS[name]] for name in fields):
                    matches[ordinal] = node.boost * self._field_score(
                        node.text, tfs, ordinal, fields, k1, b, weights)
            return matches
        child_results = [self._evaluate(child, k1, b, weights) for child in node.children]
        if isinstance(node, And):
            common = set(child_results[0])
            for result in child_results[1:]:
                common &= set(result)
            scores = {}
            for ordinal in sorted(common):
                total = 0.0
                for result in child_results:
                    total += result[ordinal]
                scores[ordinal] = total
            return scores
        if isinstance(node, Or):
            scores: Dict[int, float] = {}
            for result in child_results:
                for ordinal, value in result.items():
                    scores[ordinal] = scores.get(ordinal, 0.0) + value
            return scores
        raise TypeError(f"unsupported query node {node!r}")

    def search(self, plan, k: int, k1: float = BM25_K1, b: float = BM25_B,
               field_weights: Mapping[str, float] = None) -> List[Tuple[str, float]]:
        """Top-k (doc_id, score) for a QueryPlan or bare AST; ties by ascending doc_id."""
        self._require_open()
        if k < 1:
            raise ValueError("k must be >= 1")
        ast = getattr(plan, "ast", plan)
        scores = self._evaluate(ast, k1, b, field_weights or FIELD_WEIGHTS)
        ranked = sorted(((self._documents[o].doc_id, s) for o, s in scores.items()),
                        key=lambda item: (-item[1], item[0]))
        return ranked[:k]
