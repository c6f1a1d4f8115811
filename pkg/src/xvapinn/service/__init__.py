"""HTTP service layer: pydantic schemas and the FastAPI application."""

from .schemas import ExperimentConfig  # noqa: F401
