"""flowseg: sequence-level moving-object segmentation tooling.

Turns per-frame moving-object mask predictions into identity-consistent
sequence-level segmentations using optical flow, and evaluates them under
frame-level and sequence-level Hungarian protocols.
"""

from .association import (
    AssocConfig,
    ConsistencyRecord,
    SequenceTracks,
    associate_sequence,
    neighbor_align,
    temporal_consistency_step,
    threeway_hungarian,
)
from .core import (
    Assignment,
    BBox,
    FrameMasks,
    ScoredMask,
    bbox_iou,
    iou,
    iou_matrix,
    solve_assignment,
    tight_bbox,
)
from .errors import (
    EmptyMaskError,
    FlowsegError,
    FormatError,
    LengthError,
    MissingInputError,
    ParameterError,
    ShapeError,
)
from .evaluation import (
    EvalReport,
    LossWeights,
    SuccessRates,
    evaluate_sequence,
    f_measure,
    hungarian_protocol_match,
    j_measure,
    loss_flowi,
    loss_flowp,
    moca_sr,
)
from .flowio import (
    DEFAULT_GAPS,
    SLOW_MOTION_GAPS,
    FlowField,
    FlowGapSet,
    flow_to_rgb,
    load_gap_flows,
    read_flo,
    warp_mask,
    write_flo,
)
from .selection import (
    CandidateSet,
    SelectionConfig,
    combine_predictions,
    fiou_target,
    grid_prompts,
    mos_target,
    nms,
    select_frame,
)
from .synth import CorruptionSpec, ObjectSpec, SceneSpec, corrupt, render

__version__ = "0.1.0"
