"""HTTP service exposing experiment submission, status, and summaries."""

from .app import create_app

__all__ = ["create_app"]
