"""HTTP service wrapping the core package; the CLI is its default client."""

from .app import app, create_app

__all__ = ["app", "create_app"]
