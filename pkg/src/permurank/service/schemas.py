"""Pydantic request/response models for the service.

The service is stateless: every request carries all the data it needs
(corpus passages, serialized index payloads, qrels triples), and every
response is plain JSON the CLI can write back to disk. Run payloads are
`{query_id: [[docid, score], ...]}` with entries in rank order.
"""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

Run = dict[str, list[tuple[str, float]]]


class HealthResponse(BaseModel):
    status: str
    version: str


class PassageModel(BaseModel):
    docid: str
    text: str
    title: Optional[str] = None


class QueryModel(BaseModel):
    id: str
    text: str


class QrelEntry(BaseModel):
    qid: str
    docid: str
    rel: int


class BuildIndexRequest(BaseModel):
    corpus: list[PassageModel]


class BuildIndexResponse(BaseModel):
    index: dict
    doc_count: int
    avg_doclen: float


class RetrieveRequest(BaseModel):
    index: dict
    queries: list[QueryModel]
    k: int = 100
    k1: float = 0.9
    b: float = 0.4


class RetrieveResponse(BaseModel):
    run: Run


class GatewayConfigModel(BaseModel):
    endpoint_url: str
    model_name: str
    temperature: float = 0.0
    max_output_tokens: int = 1024
    request_timeout: float = 30.0
    max_retries: int = 3
    max_in_flight: int = 4


class MockOracleModel(BaseModel):
    qrels: list[QrelEntry]
    duplicate_rate: float = 0.0
    drop_rate: float = 0.0
    reject_rate: float = 0.0
    seed: int = 0


class StudentModel(BaseModel):
    weights: list[float]
    feature_names: list[str]


class RerankRequest(BaseModel):
    queries: list[QueryModel]
    candidates: Run
    corpus: list[PassageModel]
    method: str = "pg-chat"
    window: int = 20
    step: Optional[int] = None
    passes: int = 1
    initial_order: str = "as-retrieved"
    seed: int = 0
    top_k_only: Optional[int] = None
    max_words: int = 120
    rbo_p: float = 0.9
    jobs: int = 1
    gateway: Optional[GatewayConfigModel] = None
    mock: Optional[MockOracleModel] = None
    student: Optional[StudentModel] = None


class TraceRecordModel(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    query_id: str
    pass_index: int = Field(alias="pass")
    start: int
    end: int
    prompt_sha256: str
    raw_text: str
    order: list[int]
    repetition: int
    missing: int
    rejected: bool
    rbo: Optional[float] = None


class BehaviorModel(BaseModel):
    repetition: int
    missing: int
    rejection: int
    rbo_mean: Optional[float] = None
    windows: int
    rbo_samples: int


class RerankResponse(BaseModel):
    run: Run
    trace: list[TraceRecordModel]
    behavior: BehaviorModel
    usage: dict[str, dict[str, int]]
    neutral: int = 0


class EvaluateRequest(BaseModel):
    run: Run
    qrels: list[QrelEntry]
    ks: list[int] = [1, 5, 10]


class EvaluateResponse(BaseModel):
    per_query: dict[str, dict[str, float]]
    averages: dict[str, float]
    evaluated: int
    skipped: int


class StabilityRequest(BaseModel):
    windows: list[TraceRecordModel]


class ParseRequest(BaseModel):
    text: str
    m: int


class ParseResponse(BaseModel):
    order: list[int]
    repaired: bool
    repetition: int
    missing: int
    rejected: bool


class MessageModel(BaseModel):
    role: str
    content: str


class RenderRequest(BaseModel):
    kind: str
    query: QueryModel
    passages: list[PassageModel]
    max_words: int = 120


class RenderResponse(BaseModel):
    text: Optional[str] = None
    messages: Optional[list[MessageModel]] = None
    identifier_map: Optional[list[str]] = None
    echo_suffix: Optional[str] = None


class RboRequest(BaseModel):
    a: list[str]
    b: list[str]
    p: float = 0.9


class RboResponse(BaseModel):
    value: float


class TeacherRecordModel(BaseModel):
    query_id: str
    query_text: str
    docids: list[str]
    permutation: list[int]


class TrainRequest(BaseModel):
    teacher: list[TeacherRecordModel]
    corpus: list[PassageModel]
    loss: str = "ranknet"
    learning_rate: float = 0.1
    epochs: int = 20
    seed: int = 0
    l2: float = 1e-4


class TrainResponse(BaseModel):
    weights: list[float]
    feature_names: list[str]
    epoch_losses: list[float]


class GradCheckRequest(BaseModel):
    losses: list[str] = ["ranknet", "listwise-ce", "lambda", "bce"]
    trials: int = 100
    sizes: list[int] = [2, 5, 20]
    epsilon: float = 1e-5
    seed: int = 0


class GradCheckResponse(BaseModel):
    max_errors: dict[str, float]
