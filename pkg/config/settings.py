"""
Default settings for the trust-report pipeline.

Every tunable the CLI exposes starts here; a JSON config file or CLI flags
override these values (see config/run_config.py).
"""
from pathlib import Path

PROJECT_ROOT = Path(__file__).resolve().parent.parent

# Reproducibility
RANDOM_SEED = 42

# Paths
DATA_DIR = PROJECT_ROOT / "data"
SAMPLE_DIR = DATA_DIR / "sample"
RESULTS_DIR = PROJECT_ROOT / "results"
INDEX_DIR = PROJECT_ROOT / "index"
PROMPT_DIR = PROJECT_ROOT / "src" / "llm" / "prompts"
STOPWORDS_PATH = PROJECT_ROOT / "src" / "indexing" / "stopwords_en.txt"

# Index / BM25
BM25_K1 = 1.2
BM25_B = 0.75
INDEX_FIELDS = ("title", "headings", "body")
FIELD_WEIGHTS = {"title": 1.0, "headings": 1.0, "body": 1.0}
INDEX_MAGIC = b"NTRIDX"
INDEX_VERSION = 1
POSTINGS_CACHE_SIZE = 4096

# Question generation
CANDIDATES_PER_ARTICLE = 15
CANDIDATE_SLACK = 5
QUESTIONS_PER_ARTICLE = 10
MAX_QUESTION_WORDS = 30
ARTICLE_PROMPT_CHARS = 6000

# K-means
KMEANS_MAX_ITER = 100
KMEANS_TOLERANCE = 1e-4
KMEANS_N_INIT = 10

# Query expansion
EXPANSION_STRATEGIES = ("baseline", "boolean", "cot", "structured")
MIN_KEYPHRASES = 3
MAX_KEYPHRASES = 8
MAX_QUERY_DEPTH = 8
BOOLEAN_COMBINATOR = "or"

# Retrieval, re-ranking, filtering
K_RETRIEVE = 1000
RERANK_WINDOW = 1000
FILTER_WINDOW = 100
TOP_RELEVANT = 10
TOP_TRUSTED = 3
TRUST_THRESHOLD = 0.7
DEFAULT_TRUST = 0.0
METRICS_DEPTH = 10
JUDGE_BATCH_SIZE = 10
RERANK_BATCH_SIZE = 32
JUDGE_SNIPPET_CHARS = 1500

# Reports
MAX_REPORT_WORDS = 250
ANSWER_SNIPPET_CHARS = 800
VERBATIM_TOKEN_LIMIT = 25
INSUFFICIENT_EVIDENCE_TEXT = "There is insufficient evidence in the retrieved documents to answer this question."

# Evaluation
MATCH_TOP_M = 1
MAX_MATCH_TOP_M = 3

# LLM gateway
GATEWAY_BACKEND = "stub"
GATEWAY_BASE_URL = "https://api.openai.com/v1"
GATEWAY_API_KEY_ENV = "OPENAI_API_KEY"
GATEWAY_CHAT_MODEL = "gpt-4o-nano"
GATEWAY_EMBED_MODEL = "text-embedding-3-small"
GATEWAY_MAX_RETRIES = 4
GATEWAY_REQUESTS_PER_SECOND = 5.0
GATEWAY_TIMEOUT_SECONDS = 60
GATEWAY_BACKOFF_BASE = 1.0
GATEWAY_BACKOFF_FACTOR = 2.0
EMBEDDING_DIMENSION = 384
CHAT_TEMPERATURE = 0.0
CHAT_MAX_TOKENS = 1024

# Re-ranker service
RERANKER_BACKEND = "stub"
RERANKER_URL = "http://localhost:8080"

# Parallelism
DEFAULT_JOBS = 1
