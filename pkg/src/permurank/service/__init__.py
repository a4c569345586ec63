"""FastAPI service exposing the re-ranking pipeline over HTTP."""

from .app import app

__all__ = ["app"]
