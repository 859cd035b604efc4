"""Stateless HTTP scoring service for the line-delimited scorer protocol."""

from .service import ServiceConfig, create_app

__version__ = "0.1.0"

__all__ = ["ServiceConfig", "create_app", "__version__"]
