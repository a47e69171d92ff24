"""Trial manifests, orchestration, reports and synthetic fixtures."""

from .fixtures import FixtureSpec, generate_trial
from .manifest import Manifest, PipelineConfig, load_manifest
from .report import emit_csv, emit_svg_plots
from .run import MetricSeries, ReportBundle, run_pipeline

__all__ = [
    "FixtureSpec",
    "generate_trial",
    "Manifest",
    "PipelineConfig",
    "load_manifest",
    "emit_csv",
    "emit_svg_plots",
    "MetricSeries",
    "ReportBundle",
    "run_pipeline",
]
