"""Command-line surface for the re-ranking pipeline.

Every command is a thin client of the HTTP service: by default the
service runs in-process, `--server URL` targets a running instance
instead. File handling (TREC runs, qrels, JSONL corpora, trace files)
stays on the client side so the service can remain stateless.

Exit codes: 0 success, 1 usage error, 2 data error, 3 gateway error.
"""

from __future__ import annotations

import json
from typing import Optional, Sequence

import click

from . import textio
from .client import DataError, ServiceClient
from .gateway import GatewayError
from .metrics import BehaviorStats, EvalReport, format_behavior, format_report
from .types import Passage, Query, Ranking

_METHODS = ("pg-chat", "pg-text", "qg", "rg-few", "rg-zero", "student")
_LOSSES = ("ranknet", "listwise-ce", "lambda", "bce")

_in_path = click.Path(exists=True, dir_okay=False)


def _client(ctx: click.Context) -> ServiceClient:
    return ServiceClient(ctx.obj.get("server"))


def _corpus_payload(corpus: dict[str, Passage]) -> list[dict]:
    return [{"docid": p.docid, "text": p.text, "title": p.title} for p in corpus.values()]


def _query_payload(queries: Sequence[Query]) -> list[dict]:
    return [{"id": q.id, "text": q.text} for q in queries]


def _parse_int_list(value: str, flag: str) -> list[int]:
    try:
        items = [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}", param_hint=flag)
    if not items:
        raise click.BadParameter("expected at least one integer", param_hint=flag)
    return items


def _run_payload(rankings: Sequence[Ranking]) -> dict:
    return {r.query_id: [[docid, score] for docid, score in r.entries] for r in rankings}


def _qrels_payload(path: str) -> list[dict]:
    judgments = textio.read_qrels(path)
    return [
        {"qid": qid, "docid": docid, "rel": rel}
        for (qid, docid), rel in judgments.grades.items()
    ]


@click.group()
@click.option(
    "--server",
    default=None,
    metavar="URL",
    help="Base URL of a running service; by default the service runs in-process.",
)
@click.pass_context
def cli(ctx: click.Context, server: Optional[str]) -> None:
    """Index, retrieve, re-rank with an LLM, evaluate, and distill."""
    ctx.obj = {"server": server}


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True, help="Bind address.")
@click.option("--port", default=8000, show_default=True, help="Bind port.")
def serve(host: str, port: int) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


@cli.command()
@click.option("--corpus", "corpus_path", required=True, type=_in_path, help="Corpus JSONL file.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Index file to write.")
@click.pass_context
def index(ctx: click.Context, corpus_path: str, out_path: str) -> None:
    """Build an inverted index from a JSONL corpus."""
    corpus = textio.load_jsonl_corpus(corpus_path)
    with _client(ctx) as client:
        response = client.build_index(_corpus_payload(corpus))
    textio.atomic_write_text(out_path, json.dumps(response["index"], ensure_ascii=False))
    click.echo(
        f"indexed {response['doc_count']} passages "
        f"(average length {response['avg_doclen']:.2f}) -> {out_path}"
    )


@cli.command()
@click.option("--index", "index_path", required=True, type=_in_path, help="Index file from `index`.")
@click.option("--queries", "queries_path", required=True, type=_in_path, help="Queries file (TSV or JSONL).")
@click.option("--k", default=100, show_default=True, help="Candidates per query.")
@click.option("--k1", default=0.9, show_default=True, help="BM25 k1.")
@click.option("--b", default=0.4, show_default=True, help="BM25 b.")
@click.option("--tag", default="bm25", show_default=True, help="Run tag for the output file.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="TREC run file to write.")
@click.pass_context
def retrieve(
    ctx: click.Context,
    index_path: str,
    queries_path: str,
    k: int,
    k1: float,
    b: float,
    tag: str,
    out_path: str,
) -> None:
    """Retrieve BM25 candidates and write a TREC run."""
    with open(index_path, "r", encoding="utf-8-sig") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{index_path}: invalid index file: {exc}") from None
    queries = textio.load_queries(queries_path)
    with _client(ctx) as client:
        response = client.retrieve(payload, _query_payload(queries), k=k, k1=k1, b=b)
    rankings = [
        Ranking(q.id, tuple((d, s) for d, s in response["run"][q.id]))
        for q in queries
        if response["run"].get(q.id)
    ]
    textio.write_run(rankings, tag, out_path)
    empty = len(queries) - len(rankings)
    note = f" ({empty} queries matched nothing)" if empty else ""
    click.echo(f"wrote {len(rankings)} queries to {out_path}{note}")


@cli.command()
@click.option("--run", "run_path", required=True, type=_in_path, help="First-stage TREC run.")
@click.option("--corpus", "corpus_path", required=True, type=_in_path, help="Corpus JSONL file.")
@click.option("--queries", "queries_path", required=True, type=_in_path, help="Queries file (TSV or JSONL).")
@click.option("--method", type=click.Choice(_METHODS), default="pg-chat", show_default=True, help="Re-ranking method.")
@click.option("--window", default=20, show_default=True, help="Sliding window size.")
@click.option("--step", default=None, type=int, help="Window step size.  [default: half the window]")
@click.option("--passes", default=1, show_default=True, help="Sliding passes over the list.")
@click.option(
    "--initial-order",
    type=click.Choice(["as-retrieved", "random", "reversed"]),
    default="as-retrieved",
    show_default=True,
    help="Candidate order fed to the first pass.",
)
@click.option("--seed", default=0, show_default=True, help="Seed for --initial-order random.")
@click.option("--top-k-only", default=None, type=int, metavar="N", help="Re-rank only the top N; the tail keeps its order.")
@click.option("--endpoint", default=None, metavar="URL", help="OpenAI-compatible API base URL.")
@click.option("--model", default=None, metavar="NAME", help="Model name at the endpoint.")
@click.option("--temperature", default=0.0, show_default=True, help="Sampling temperature.")
@click.option("--max-tokens", default=1024, show_default=True, help="Completion token budget per request.")
@click.option("--timeout", default=30.0, show_default=True, help="Per-request timeout in seconds.")
@click.option("--retries", default=3, show_default=True, help="Retries after a retryable failure.")
@click.option("--max-in-flight", default=4, show_default=True, help="Concurrent request cap.")
@click.option("--jobs", default=1, show_default=True, help="Queries re-ranked concurrently.")
@click.option("--max-words", default=120, show_default=True, help="Passage truncation length in words.")
@click.option("--rbo-p", default=0.9, show_default=True, help="Persistence for window-consistency RBO.")
@click.option("--mock-oracle", "mock_path", default=None, type=_in_path, metavar="QRELS", help="Swap the gateway for the testing oracle driven by this qrels file.")
@click.option("--mock-duplicate-rate", default=0.0, show_default=True, help="Oracle fault: duplicated identifiers.")
@click.option("--mock-drop-rate", default=0.0, show_default=True, help="Oracle fault: dropped identifiers.")
@click.option("--mock-reject-rate", default=0.0, show_default=True, help="Oracle fault: refusal replies.")
@click.option("--mock-seed", default=0, show_default=True, help="Oracle fault seed.")
@click.option("--student", "student_path", default=None, type=_in_path, help="Student file for --method student.")
@click.option("--trace", "trace_path", default=None, type=click.Path(dir_okay=False), help="Write per-window trace JSONL here.")
@click.option("--tag", default=None, help="Run tag for the output file.  [default: the method name]")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="TREC run file to write.")
@click.pass_context
def rerank(
    ctx: click.Context,
    run_path: str,
    corpus_path: str,
    queries_path: str,
    method: str,
    window: int,
    step: Optional[int],
    passes: int,
    initial_order: str,
    seed: int,
    top_k_only: Optional[int],
    endpoint: Optional[str],
    model: Optional[str],
    temperature: float,
    max_tokens: int,
    timeout: float,
    retries: int,
    max_in_flight: int,
    jobs: int,
    max_words: int,
    rbo_p: float,
    mock_path: Optional[str],
    mock_duplicate_rate: float,
    mock_drop_rate: float,
    mock_reject_rate: float,
    mock_seed: int,
    student_path: Optional[str],
    trace_path: Optional[str],
    tag: Optional[str],
    out_path: str,
) -> None:
    """Re-rank a first-stage run with an LLM, the mock oracle, or a student."""
    if method == "student":
        if student_path is None:
            raise click.UsageError("--method student requires --student")
        if endpoint is not None or mock_path is not None:
            raise click.UsageError("--method student takes no gateway; drop --endpoint/--mock-oracle")
    else:
        if student_path is not None:
            raise click.UsageError("--student only applies to --method student")
        if mock_path is not None and endpoint is not None:
            raise click.UsageError("--mock-oracle and --endpoint conflict; pick one")
        if mock_path is None and endpoint is None:
            raise click.UsageError(f"--method {method} needs --endpoint URL or --mock-oracle QRELS")
        if endpoint is not None and model is None:
            raise click.UsageError("--endpoint requires --model")

    first_stage = textio.read_run(run_path)
    corpus = textio.load_jsonl_corpus(corpus_path)
    queries = textio.load_queries(queries_path)
    known = {q.id for q in queries}
    for ranking in first_stage:
        if ranking.query_id not in known:
            raise ValueError(f"run query {ranking.query_id} is missing from {queries_path}")
    with_candidates = {r.query_id for r in first_stage}
    sent = [q for q in queries if q.id in with_candidates]

    payload: dict = {
        "queries": _query_payload(sent),
        "candidates": _run_payload(first_stage),
        "corpus": _corpus_payload(corpus),
        "method": method,
        "window": window,
        "step": step,
        "passes": passes,
        "initial_order": initial_order,
        "seed": seed,
        "top_k_only": top_k_only,
        "max_words": max_words,
        "rbo_p": rbo_p,
        "jobs": jobs,
    }
    if method == "student":
        with open(student_path, "r", encoding="utf-8-sig") as handle:
            try:
                payload["student"] = json.load(handle)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{student_path}: invalid student file: {exc}") from None
    elif mock_path is not None:
        payload["mock"] = {
            "qrels": _qrels_payload(mock_path),
            "duplicate_rate": mock_duplicate_rate,
            "drop_rate": mock_drop_rate,
            "reject_rate": mock_reject_rate,
            "seed": mock_seed,
        }
    else:
        payload["gateway"] = {
            "endpoint_url": endpoint,
            "model_name": model,
            "temperature": temperature,
            "max_output_tokens": max_tokens,
            "request_timeout": timeout,
            "max_retries": retries,
            "max_in_flight": max_in_flight,
        }

    with _client(ctx) as client:
        response = client.rerank(payload)

    rankings = [
        Ranking(q.id, tuple((d, s) for d, s in response["run"][q.id]))
        for q in sent
        if response["run"].get(q.id)
    ]
    textio.write_run(rankings, tag if tag is not None else method, out_path)
    if trace_path is not None:
        lines = [json.dumps(record, ensure_ascii=False) for record in response["trace"]]
        textio.atomic_write_text(trace_path, "".join(line + "\n" for line in lines))

    skipped = len(queries) - len(sent)
    note = f" ({skipped} queries had no candidates)" if skipped else ""
    click.echo(f"wrote {len(rankings)} queries to {out_path}{note}")
    if response["trace"]:
        click.echo(format_behavior(BehaviorStats(**response["behavior"])))
    if response["neutral"]:
        click.echo(f"neutral judgments: {response['neutral']}")
    usage = response.get("usage", {})
    if usage:
        requests = sum(u["requests"] for u in usage.values())
        tokens = sum(u["tokens"] for u in usage.values())
        click.echo(f"usage: {requests} requests, {tokens} tokens")


@cli.command("eval")
@click.option("--run", "run_path", required=True, type=_in_path, help="TREC run file to score.")
@click.option("--qrels", "qrels_path", required=True, type=_in_path, help="TREC qrels file.")
@click.option("--k", "k_spec", default="1,5,10", show_default=True, help="Comma-separated nDCG cutoffs.")
@click.option("--json", "as_json", is_flag=True, help="Print the report as JSON.")
@click.pass_context
def eval_cmd(ctx: click.Context, run_path: str, qrels_path: str, k_spec: str, as_json: bool) -> None:
    """Score a run against qrels and print an nDCG table."""
    ks = _parse_int_list(k_spec, "--k")
    rankings = textio.read_run(run_path)
    with _client(ctx) as client:
        report = client.evaluate(_run_payload(rankings), _qrels_payload(qrels_path), ks)
    if as_json:
        click.echo(json.dumps(report, ensure_ascii=False, indent=2))
        return
    click.echo(format_report(EvalReport(**report)))
    if report["skipped"]:
        click.echo(f"skipped {report['skipped']} queries without judgments")


@cli.command()
@click.option("--trace", "trace_path", required=True, type=_in_path, help="Trace JSONL from `rerank`.")
@click.option("--json", "as_json", is_flag=True, help="Print the counters as JSON.")
@click.pass_context
def stability(ctx: click.Context, trace_path: str, as_json: bool) -> None:
    """Summarize re-ranking behavior counters from a trace file."""
    records = []
    with open(trace_path, "r", encoding="utf-8-sig") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{trace_path}:{line_no}: invalid JSON: {exc}") from None
    with _client(ctx) as client:
        stats = client.stability(records)
    if as_json:
        click.echo(json.dumps(stats, ensure_ascii=False, indent=2))
        return
    click.echo(format_behavior(BehaviorStats(**stats)))


@cli.command()
@click.option("--teacher", "teacher_path", required=True, type=_in_path, help="Teacher permutations JSONL.")
@click.option("--corpus", "corpus_path", required=True, type=_in_path, help="Corpus JSONL file.")
@click.option("--loss", type=click.Choice(_LOSSES), default="ranknet", show_default=True, help="Training objective.")
@click.option("--learning-rate", default=0.1, show_default=True, help="Gradient step size.")
@click.option("--epochs", default=20, show_default=True, help="Training epochs.")
@click.option("--seed", default=0, show_default=True, help="Shuffle seed.")
@click.option("--l2", default=1e-4, show_default=True, help="L2 regularization strength.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Student JSON file to write.")
@click.pass_context
def distill(
    ctx: click.Context,
    teacher_path: str,
    corpus_path: str,
    loss: str,
    learning_rate: float,
    epochs: int,
    seed: int,
    l2: float,
    out_path: str,
) -> None:
    """Train a linear student from teacher permutations."""
    records = textio.read_teacher_records(teacher_path)
    corpus = textio.load_jsonl_corpus(corpus_path)
    payload = {
        "teacher": [
            {
                "query_id": r.query_id,
                "query_text": r.query_text,
                "docids": list(r.docids),
                "permutation": list(r.permutation),
            }
            for r in records
        ],
        "corpus": _corpus_payload(corpus),
        "loss": loss,
        "learning_rate": learning_rate,
        "epochs": epochs,
        "seed": seed,
        "l2": l2,
    }
    with _client(ctx) as client:
        result = client.train(payload)
    student = {"weights": result["weights"], "feature_names": result["feature_names"]}
    textio.atomic_write_text(out_path, json.dumps(student, indent=2) + "\n")
    losses = result["epoch_losses"]
    click.echo(f"trained on {len(records)} queries for {epochs} epochs -> {out_path}")
    if losses:
        click.echo(f"mean loss: {losses[0]:.6f} (first epoch) -> {losses[-1]:.6f} (last)")


@cli.command()
@click.option("--loss", type=click.Choice(_LOSSES + ("all",)), default="all", show_default=True, help="Loss to check, or all.")
@click.option("--trials", default=100, show_default=True, help="Random instances per loss.")
@click.option("--sizes", "sizes_spec", default="2,5,20", show_default=True, help="Comma-separated list sizes to cycle through.")
@click.option("--epsilon", default=1e-5, show_default=True, help="Central-difference step.")
@click.option("--seed", default=0, show_default=True, help="Instance seed.")
@click.pass_context
def gradcheck(
    ctx: click.Context, loss: str, trials: int, sizes_spec: str, epsilon: float, seed: int
) -> None:
    """Check analytic loss gradients against finite differences."""
    losses = list(_LOSSES) if loss == "all" else [loss]
    payload = {
        "losses": losses,
        "trials": trials,
        "sizes": _parse_int_list(sizes_spec, "--sizes"),
        "epsilon": epsilon,
        "seed": seed,
    }
    with _client(ctx) as client:
        result = client.gradcheck(payload)
    for key in losses:
        click.echo(f"{key:<12} max relative error {result['max_errors'][key]:.3e}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except DataError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except GatewayError as exc:
        click.echo(f"gateway error: {exc}", err=True)
        return 3
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
