"""Training-free open-vocabulary 3D semantic mapping and retrieval.

The pipeline lifts per-frame 2D instance masks and their vision-language
embeddings into a coherent 3D object map (progressive mask selection,
context-aware embedding aggregation, overlap-based multi-view merging) and
answers natural-language object queries over that map through pluggable
LLM/VLM gateways.
"""

from .config import PipelineConfig
from .embedding import (
    ContextEmbedding,
    CropSpec,
    EmbeddingAggregator,
    EmbeddingWeights,
    aggregate_embedding,
    crop_rects,
)
from .fusion import (
    FusionParams,
    Object3D,
    SceneFuser,
    fuse_scene,
    lift_mask,
    merge_objects,
    split_3d,
    try_merge,
)
from .gateway import (
    GatewayConfig,
    HttpGateway,
    Message,
    MockGateway,
    RecordingGateway,
    ReplayGateway,
)
from .geometry import (
    Box3,
    Frame,
    Intrinsics,
    Pose,
    VoxelSet,
    back_project,
    box_iou3d,
    project,
    voxel_iov,
    voxelize,
)
from .gtmock import GtSceneGateway
from .labeling import (
    LabeledObject,
    OpenVocabLabeler,
    SegMetrics,
    TextPromptSet,
    assign_labels,
    compute_metrics,
    transfer_labels,
)
from .masks import (
    GranularitySchedule,
    Mask2D,
    MaskRefiner,
    filter_small,
    overlap_ratio,
    progressive_select,
    split_fragments_2d,
)
from .retrieval import (
    Candidate,
    GroundingResult,
    ObjectRetriever,
    Orientation,
    StructuredQuery,
    final_decision,
    ground_orientation,
    grounding_accuracy,
    mine_candidates,
    run_query,
    select_view,
    structure_query,
    verify_candidate,
)

__version__ = "0.1.0"
