"""
Domain trust table: continuous [0, 1] quality scores per web domain.

CSV with header `domain,score` (the published domain-quality file names its
score column `pc1`; that column is accepted as well). Unknown domains score
DEFAULT_TRUST.
"""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple
from urllib.parse import urlsplit

import pandas as pd

from config.settings import DEFAULT_TRUST
from src.utils.errors import TrustTableError

logger = logging.getLogger(__name__)

SCORE_ALIASES = ("score", "pc1")


def normalize_domain(domain: str) -> str:
    domain = domain.strip().lower().rstrip(".")
    if domain.startswith("www."):
        domain = domain[4:]
    return domain


def host_of(url: str) -> Optional[str]:
    """Lowercased host without a leading 'www.', or None when there is none."""
    url = (url or "").strip()
    if not url:
        return None
    try:
        parts = urlsplit(url if "//" in url else "//" + url)
        host = parts.hostname
    except ValueError:
        return None
    if not host:
        return None
    return normalize_domain(host)


@dataclass(frozen=True)
class TrustTable:
    scores: Dict[str, float] = field(default_factory=dict)
    skipped_count: int = 0

    @property
    def default(self) -> float:
        return DEFAULT_TRUST

    def __len__(self) -> int:
        return len(self.scores)

    def lookup(self, url: str) -> Tuple[float, Optional[str]]:
        """(score, flag); flag is set when the url has no usable host."""
        host = host_of(url)
        if host is None:
            return self.default, "unparseable_url"
        labels = host.split(".")
        while True:
            candidate = ".".join(labels)
            if candidate in self.scores:
                return self.scores[candidate], None
            if len(labels) <= 2:
                return self.default, None
            labels = labels[1:]


def trust_of(table: TrustTable, url: str) -> float:
    return table.lookup(url)[0]


LINE_COLUMN = "__line__"


def _numbered_lines(path, strict: bool) -> Tuple[str, int]:
    """CSV text with each row prefixed by its file line number; blank lines dropped.

    Returns (text, undecodable line count). Lines that are not UTF-8 are an
    error in strict mode and skipped otherwise.
    """
    with open(path, "rb") as fh:
        raw_lines = fh.read().splitlines()
    out = []
    skipped = 0
    for line_number, raw in enumerate(raw_lines, start=1):
        try:
            text = raw.decode("utf-8-sig" if line_number == 1 else "utf-8")
        except UnicodeDecodeError as e:
            if strict:
                raise TrustTableError(f"line {line_number}: invalid UTF-8 at byte {e.start}") from e
            skipped += 1
            logger.warning("skipping trust table line %d: invalid UTF-8", line_number)
            continue
        if not text.strip():
            continue
        prefix = LINE_COLUMN if not out else str(line_number)
        out.append(f"{prefix},{text}")
    return "\n".join(out) + "\n", skipped


def load_trust_table(path, strict: bool = True, score_column: str = "score") -> TrustTable:
    text, skipped = _numbered_lines(path, strict)
    if not text.strip():
        raise TrustTableError(f"{path}: empty trust table")
    bad_lines = []

    def _record_bad_line(fields):
        bad_lines.append(fields)
        return None

    try:
        df = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False, engine="python",
                         on_bad_lines=_record_bad_line)
    except pd.errors.EmptyDataError as e:
        raise TrustTableError(f"{path}: empty trust table") from e
    except pd.errors.ParserError as e:
        raise TrustTableError(f"{path}: {e}") from e

    for fields in bad_lines:
        message = f"line {fields[0]}: expected {len(df.columns) - 1} fields, saw {len(fields) - 1}"
        if strict:
            raise TrustTableError(message)
        logger.warning("skipping trust table %s", message)
    skipped += len(bad_lines)

    df.columns = [str(c).strip().lower() for c in df.columns]
    column = score_column
    if column not in df.columns and score_column in SCORE_ALIASES:
        column = next((c for c in SCORE_ALIASES if c in df.columns), score_column)
    if "domain" not in df.columns or column not in df.columns:
        raise TrustTableError(f"{path}: header must contain 'domain' and '{score_column}'")

    scores: Dict[str, float] = {}
    for line_number, domain, raw in zip(df[LINE_COLUMN].astype(int), df["domain"], df[column]):
        try:
            domain = normalize_domain(domain)
            if not domain:
                raise ValueError("empty domain")
            score = float(raw)
            if not 0.0 <= score <= 1.0:
                raise ValueError(f"score {raw} outside [0, 1]")
        except ValueError as e:
            if strict:
                raise TrustTableError(f"line {line_number}: {e}") from e
            skipped += 1
            logger.warning("skipping trust table line %d: %s", line_number, e)
            continue
        if domain in scores:
            logger.debug("duplicate domain %s on line %d, keeping the first score", domain, line_number)
            continue
        scores[domain] = score

    logger.info("loaded %d domain trust scores (%d skipped)", len(scores), skipped)
    return TrustTable(scores, skipped)
