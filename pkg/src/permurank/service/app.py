"""FastAPI application wrapping the re-ranking pipeline.

Every endpoint is stateless: requests carry their own corpus, index
payload, or judgments, and responses are plain JSON. Library ValueErrors
map to HTTP 400; gateway failures (transport, HTTP status, capability)
map to HTTP 502.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Sequence, TypeVar

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, distill
from ..gateway import GatewayConfig, GatewayError, MockOracleGateway, OpenAiGateway
from ..metrics import collect_behavior, evaluate, rbo
from ..prompting import InstructionKind, render
from ..rerank import (
    RerankResult,
    hybrid_topk_rerank,
    parse_permutation,
    ranking_from_scores,
    rerank_many,
    score_query_gen,
    score_relevance_gen,
)
from ..sparse import Bm25Params, build_index, index_from_payload, index_to_payload, search
from ..types import CandidateList, InitialOrder, Judgments, Passage, Query, Ranking, WindowConfig
from . import schemas

app = FastAPI(title="permurank", version=__version__)

T = TypeVar("T")
R = TypeVar("R")


@app.exception_handler(ValueError)
async def _value_error(request: Request, exc: ValueError) -> JSONResponse:
    return JSONResponse(status_code=400, content={"detail": str(exc)})


@app.exception_handler(GatewayError)
async def _gateway_error(request: Request, exc: GatewayError) -> JSONResponse:
    return JSONResponse(status_code=502, content={"detail": str(exc)})


def _passage(model: schemas.PassageModel) -> Passage:
    return Passage(docid=model.docid, text=model.text, title=model.title)


def _corpus(models: Sequence[schemas.PassageModel]) -> dict[str, Passage]:
    corpus: dict[str, Passage] = {}
    for model in models:
        if model.docid in corpus:
            raise ValueError(f"duplicate docid in corpus: {model.docid}")
        corpus[model.docid] = _passage(model)
    return corpus


def _judgments(entries: Sequence[schemas.QrelEntry]) -> Judgments:
    return Judgments.merge((e.qid, e.docid, e.rel) for e in entries)


def _map_jobs(jobs: int, fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
    if jobs < 1:
        raise ValueError(f"jobs must be >= 1, got {jobs}")
    if jobs == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _zero_behavior() -> schemas.BehaviorModel:
    return schemas.BehaviorModel(
        repetition=0, missing=0, rejection=0, rbo_mean=None, windows=0, rbo_samples=0
    )


@app.get("/health", response_model=schemas.HealthResponse)
def health() -> schemas.HealthResponse:
    return schemas.HealthResponse(status="ok", version=__version__)


@app.post("/index/build", response_model=schemas.BuildIndexResponse)
def index_build(request: schemas.BuildIndexRequest) -> schemas.BuildIndexResponse:
    index = build_index(_corpus(request.corpus))
    return schemas.BuildIndexResponse(
        index=index_to_payload(index),
        doc_count=index.doc_count,
        avg_doclen=index.avg_doclen,
    )


@app.post("/retrieve", response_model=schemas.RetrieveResponse)
def retrieve(request: schemas.RetrieveRequest) -> schemas.RetrieveResponse:
    index = index_from_payload(request.index)
    params = Bm25Params(k1=request.k1, b=request.b)
    run: schemas.Run = {}
    for model in request.queries:
        candidates = search(index, params, Query(id=model.id, text=model.text), request.k)
        run[model.id] = [(c.docid, c.initial_score) for c in candidates.candidates]
    return schemas.RetrieveResponse(run=run)


def _candidate_list(
    query: Query, entries: Sequence[tuple[str, float]], corpus: dict[str, Passage]
) -> CandidateList:
    passages = []
    for docid, _ in entries:
        if docid not in corpus:
            raise ValueError(f"docid {docid!r} for query {query.id} is missing from the corpus")
        passages.append(corpus[docid])
    return CandidateList.from_passages(query, passages, scores=[s for _, s in entries])


def _rerank_gateway(request: schemas.RerankRequest):
    if request.mock is not None and request.gateway is not None:
        raise ValueError("choose either a live gateway or the mock oracle, not both")
    if request.mock is not None:
        return (
            MockOracleGateway(
                _judgments(request.mock.qrels),
                duplicate_rate=request.mock.duplicate_rate,
                drop_rate=request.mock.drop_rate,
                reject_rate=request.mock.reject_rate,
                seed=request.mock.seed,
            ),
            None,
        )
    if request.gateway is None:
        raise ValueError(f"method {request.method} needs a gateway endpoint or the mock oracle")
    live = OpenAiGateway(GatewayConfig(**request.gateway.model_dump()))
    return live, live


@app.post("/rerank", response_model=schemas.RerankResponse)
def rerank(request: schemas.RerankRequest) -> schemas.RerankResponse:
    corpus = _corpus(request.corpus)
    queries = [Query(id=m.id, text=m.text) for m in request.queries]
    run: schemas.Run = {}

    if request.method == "student":
        if request.student is None:
            raise ValueError("method student requires a trained student payload")
        student = distill.student_from_dict(request.student.model_dump())
        index = build_index(corpus)
        for query in queries:
            entries = request.candidates.get(query.id, [])
            if not entries:
                run[query.id] = []
                continue
            ranking = distill.rank_with_student(
                student, query, _candidate_list(query, entries, corpus), index
            )
            run[query.id] = list(ranking.entries)
        return schemas.RerankResponse(
            run=run, trace=[], behavior=_zero_behavior(), usage={}, neutral=0
        )

    kind = InstructionKind.from_key(request.method)
    step = request.step if request.step is not None else max(1, request.window // 2)
    window_config = WindowConfig(
        window=request.window,
        step=step,
        passes=request.passes,
        initial_order=InitialOrder(request.initial_order),
        seed=request.seed,
    )
    gateway, to_close = _rerank_gateway(request)
    try:
        if kind.is_permutation:
            populated = [q for q in queries if request.candidates.get(q.id)]
            for query in queries:
                if not request.candidates.get(query.id):
                    run[query.id] = []

            if request.top_k_only is not None:
                def one(query: Query) -> RerankResult:
                    base = Ranking(query.id, tuple(request.candidates[query.id]))
                    return hybrid_topk_rerank(
                        query, base, corpus, window_config, kind, gateway,
                        k=request.top_k_only, max_words=request.max_words, rbo_p=request.rbo_p,
                    )

                results = _map_jobs(request.jobs, one, populated)
            else:
                lists = [
                    _candidate_list(q, request.candidates[q.id], corpus) for q in populated
                ]
                results = rerank_many(
                    lists, window_config, kind, gateway,
                    jobs=request.jobs, max_words=request.max_words, rbo_p=request.rbo_p,
                )

            traces = []
            for result in results:
                run[result.query_id] = list(result.ranking.entries)
                traces.extend(result.windows)
            stats = collect_behavior(
                [t.parsed for t in traces],
                [s for r in results for s in r.rbo_samples],
            )
            return schemas.RerankResponse(
                run=run,
                trace=[schemas.TraceRecordModel(**t.to_record()) for t in traces],
                behavior=schemas.BehaviorModel(**stats.as_dict()),
                usage=gateway.ledger.totals(),
                neutral=0,
            )

        # Score-based methods: one score per candidate, no windows.
        neutral = 0
        for query in queries:
            entries = request.candidates.get(query.id, [])
            if not entries:
                run[query.id] = []
                continue
            candidate_list = _candidate_list(query, entries, corpus)
            if kind is InstructionKind.QUERY_GEN:
                scores = score_query_gen(
                    gateway, query, candidate_list, max_words=request.max_words
                )
            else:
                result = score_relevance_gen(
                    gateway, query, candidate_list,
                    few_shot=kind is InstructionKind.RELEVANCE_GEN_FEW_SHOT,
                    max_words=request.max_words,
                )
                scores = result.scores
                neutral += result.neutral_count
            run[query.id] = list(ranking_from_scores(candidate_list, scores).entries)
        return schemas.RerankResponse(
            run=run,
            trace=[],
            behavior=_zero_behavior(),
            usage=gateway.ledger.totals(),
            neutral=neutral,
        )
    finally:
        if to_close is not None:
            to_close.close()


@app.post("/evaluate", response_model=schemas.EvaluateResponse)
def evaluate_run(request: schemas.EvaluateRequest) -> schemas.EvaluateResponse:
    rankings = [Ranking(qid, tuple(entries)) for qid, entries in request.run.items()]
    report = evaluate(rankings, _judgments(request.qrels), request.ks)
    return schemas.EvaluateResponse(
        per_query=report.per_query,
        averages=report.averages,
        evaluated=report.evaluated,
        skipped=report.skipped,
    )


@app.post("/stability", response_model=schemas.BehaviorModel)
def stability(request: schemas.StabilityRequest) -> schemas.BehaviorModel:
    stats = collect_behavior(
        [w.model_dump(by_alias=True) for w in request.windows],
        [w.rbo for w in request.windows if w.rbo is not None],
    )
    return schemas.BehaviorModel(**stats.as_dict())


@app.post("/parse", response_model=schemas.ParseResponse)
def parse(request: schemas.ParseRequest) -> schemas.ParseResponse:
    parsed = parse_permutation(request.text, request.m)
    return schemas.ParseResponse(
        order=list(parsed.order),
        repaired=parsed.repaired,
        repetition=parsed.repetition,
        missing=parsed.missing,
        rejected=parsed.rejected,
    )


@app.post("/prompts/render", response_model=schemas.RenderResponse)
def prompts_render(request: schemas.RenderRequest) -> schemas.RenderResponse:
    kind = InstructionKind.from_key(request.kind)
    query = Query(id=request.query.id, text=request.query.text)
    passages = [_passage(p) for p in request.passages]
    if kind.is_permutation:
        prompt = render(kind, query, passages, request.max_words)
    else:
        if len(passages) != 1:
            raise ValueError(f"{kind.key} takes exactly one passage, got {len(passages)}")
        prompt = render(kind, query, passages[0], request.max_words)
    return schemas.RenderResponse(
        text=prompt.text,
        messages=(
            [schemas.MessageModel(role=m.role, content=m.content) for m in prompt.messages]
            if prompt.messages is not None
            else None
        ),
        identifier_map=list(prompt.identifier_map) if prompt.identifier_map else None,
        echo_suffix=prompt.echo_suffix,
    )


@app.post("/metrics/rbo", response_model=schemas.RboResponse)
def metrics_rbo(request: schemas.RboRequest) -> schemas.RboResponse:
    return schemas.RboResponse(value=rbo(request.a, request.b, request.p))


@app.post("/distill/train", response_model=schemas.TrainResponse)
def distill_train(request: schemas.TrainRequest) -> schemas.TrainResponse:
    from ..textio import TeacherRecord

    corpus = _corpus(request.corpus)
    records = [
        TeacherRecord(
            query_id=r.query_id,
            query_text=r.query_text,
            docids=tuple(r.docids),
            permutation=tuple(r.permutation),
        )
        for r in request.teacher
    ]
    result = distill.train(
        records,
        corpus,
        distill.LossKind.from_key(request.loss),
        distill.TrainConfig(
            learning_rate=request.learning_rate,
            epochs=request.epochs,
            seed=request.seed,
            l2=request.l2,
        ),
    )
    return schemas.TrainResponse(
        weights=list(result.student.weights),
        feature_names=list(distill.FEATURE_NAMES),
        epoch_losses=list(result.epoch_losses),
    )


@app.post("/distill/gradcheck", response_model=schemas.GradCheckResponse)
def distill_gradcheck(request: schemas.GradCheckRequest) -> schemas.GradCheckResponse:
    kinds = [distill.LossKind.from_key(key) for key in request.losses]
    results = distill.gradcheck_suite(
        kinds,
        trials=request.trials,
        sizes=request.sizes,
        epsilon=request.epsilon,
        seed=request.seed,
    )
    return schemas.GradCheckResponse(max_errors=results)
