"""Thin client for the permurank service.

With no base URL the client drives the FastAPI app in-process, so the
CLI works without a running server. With a base URL it speaks plain
HTTP to a remote instance. Either way the caller sees dicts decoded
from the service's JSON responses.

HTTP 502 (upstream LLM trouble) raises GatewayError; any other 4xx/5xx
raises DataError with the service's detail message.
"""

from __future__ import annotations

from typing import Any, Optional

import httpx

from .gateway import GatewayError


class DataError(Exception):
    """The service rejected the request as malformed or inconsistent."""


class ServiceClient:
    def __init__(self, base_url: Optional[str] = None, timeout: float = 600.0):
        if base_url is None:
            import warnings

            with warnings.catch_warnings():
                # starlette warns about its httpx-based TestClient on import
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service import app

            self._http = TestClient(app)
        else:
            self._http = httpx.Client(base_url=base_url, timeout=timeout)

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "ServiceClient":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    def _request(self, method: str, path: str, payload: Optional[dict] = None) -> Any:
        try:
            response = self._http.request(method, path, json=payload)
        except httpx.HTTPError as exc:
            raise DataError(f"service request failed: {exc}") from None
        if response.status_code == 502:
            raise GatewayError(self._detail(response))
        if response.status_code >= 400:
            raise DataError(self._detail(response))
        return response.json()

    @staticmethod
    def _detail(response: httpx.Response) -> str:
        try:
            return str(response.json()["detail"])
        except Exception:
            return response.text

    def _post(self, path: str, payload: dict) -> Any:
        return self._request("POST", path, payload)

    def health(self) -> dict:
        return self._request("GET", "/health")

    def build_index(self, corpus: list[dict]) -> dict:
        return self._post("/index/build", {"corpus": corpus})

    def retrieve(
        self, index: dict, queries: list[dict], k: int = 100, k1: float = 0.9, b: float = 0.4
    ) -> dict:
        return self._post(
            "/retrieve", {"index": index, "queries": queries, "k": k, "k1": k1, "b": b}
        )

    def rerank(self, payload: dict) -> dict:
        return self._post("/rerank", payload)

    def evaluate(self, run: dict, qrels: list[dict], ks: list[int]) -> dict:
        return self._post("/evaluate", {"run": run, "qrels": qrels, "ks": ks})

    def stability(self, windows: list[dict]) -> dict:
        return self._post("/stability", {"windows": windows})

    def parse(self, text: str, m: int) -> dict:
        return self._post("/parse", {"text": text, "m": m})

    def render_prompt(self, payload: dict) -> dict:
        return self._post("/prompts/render", payload)

    def rbo(self, a: list[str], b: list[str], p: float = 0.9) -> float:
        return self._post("/metrics/rbo", {"a": a, "b": b, "p": p})["value"]

    def train(self, payload: dict) -> dict:
        return self._post("/distill/train", payload)

    def gradcheck(self, payload: dict) -> dict:
        return self._post("/distill/gradcheck", payload)
