"""coeforge: machine-checkable chain-of-evidence trajectories.

Parse structured model responses with inline visual evidence, score them
with the four-part reward suite (accuracy, stepwise attribution, grounding,
format), normalize rewards into group-relative advantages, and evaluate
prediction sets with EM / IoU / stepwise-attribution metrics.
"""

from .core import (
    NO_ANSWER_SENTINEL,
    BoundingBox,
    CoETrajectory,
    EvidenceRef,
    GroundTruthRecord,
    PageRef,
    ReasoningStep,
    RewardBreakdown,
    RewardConfig,
    page_index_for_pos,
    validate_box,
)
from .embedding import (
    EmbeddingVector,
    EncoderProvider,
    MockEncoder,
    RemoteEncoder,
    cosine,
    mock_encode_text,
    mock_encode_weighted,
    normalize_vector,
)
from .errors import (
    CoeError,
    DecodeError,
    DegenerateBox,
    DimensionMismatch,
    EmptyAfterClamp,
    EmptyGroundTruth,
    GroupTooSmall,
    InsufficientCandidates,
    NegativeCoordinate,
    PageOutOfRange,
    ProviderUnavailable,
    SchemaError,
    UnresolvedQueryId,
    UnserializableTrajectory,
    ZeroVector,
)
from .evalset import (
    EvalReport,
    PredictionRecord,
    build_candidate_set,
    cold_start_filter,
    evaluate,
    metric_em,
    metric_iou_at,
    metric_sa,
    no_answer_accuracy,
)
from .geometry import CropRegion, clamp_to_page, iou, max_pairwise_iou
from .grpo import (
    GroupAdvantage,
    GroupSample,
    SimulationTrace,
    SyntheticWorld,
    TemplatePolicy,
    default_world,
    group_advantage,
    run_simulation,
)
from .parser import (
    Diagnostic,
    ParseOutcome,
    Severity,
    extract_pairs,
    parse_response,
    serialize_trajectory,
)
from .rewards import (
    accuracy_reward,
    format_reward,
    grounding_reward,
    step_alignment,
    stepwise_reward,
    total_reward,
)
from .textmatch import NormalizedAnswer, is_no_answer, normalize, recall, soft_em

__version__ = "0.1.0"
