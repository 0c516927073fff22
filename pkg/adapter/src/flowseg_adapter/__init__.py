"""flowseg-adapter: exports predictor outputs in the flowseg interchange formats."""

from .export import ExportManifest, export_candidates, export_flows
from .models import (
    FlowEstimator,
    ModelLoadError,
    Segmenter,
    StubFlowEstimator,
    StubSegmenter,
    load_flow_estimator,
    load_segmenter,
)

__version__ = "0.1.0"
