"""permurank: listwise LLM passage re-ranking, evaluation, and distillation.

Subpackages and modules:
    types      core immutable domain types
    textio     TREC run/qrels and JSONL ingestion and persistence
    sparse     in-memory inverted index with BM25 scoring
    prompting  instruction templates and prompt rendering
    gateway    OpenAI-compatible wire client, retries, mock oracle
    rerank     permutation parsing and sliding-window re-ranking
    metrics    nDCG, rank-biased overlap, behavior counters
    distill    ranking losses, gradient checks, linear student trainer
    service    FastAPI application and request/response schemas
    client     service client used by the CLI (embedded or remote)
    cli        command-line entry point
"""

__version__ = "0.1.0"
