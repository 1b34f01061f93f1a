"""Log management dataflow for DevOps toolchains: generation, collection,
filtering, alerting, aggregation, delivery, preprocessing, storage and analytics."""

from .config import PipelineConfig, Step, load_config, parse_config
from .model import CATALOG, LogRecord, Severity, StageId, VProfile, vprofile_for_stage
from .pipeline import PipelineReport, operate_loop, run
from .workload import GenConfig, emit_multiplexed, generate_stream

__all__ = [
    "CATALOG",
    "GenConfig",
    "LogRecord",
    "PipelineConfig",
    "PipelineReport",
    "Severity",
    "StageId",
    "Step",
    "VProfile",
    "emit_multiplexed",
    "generate_stream",
    "load_config",
    "operate_loop",
    "parse_config",
    "run",
    "vprofile_for_stage",
]

__version__ = "0.1.0"
