"""Command-line pipeline: config loading, frame discovery, outputs."""
from .config import PipelineConfig, load_config

__all__ = ["PipelineConfig", "load_config"]
