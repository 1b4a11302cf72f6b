"""Configuration-driven staged RAG engine with deterministic citations."""

from .config import PipelineConfig, load_config
from .pipeline import PipelineEngine
from .runtime import build_engine

__version__ = "0.1.0"

__all__ = ["PipelineConfig", "PipelineEngine", "build_engine", "load_config"]
