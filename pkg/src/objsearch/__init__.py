"""Object-level image retrieval: class-gated cosine search over object crops.

Images are decomposed into isolated, squared object crops via panoptic
masks; each crop is embedded into a text-image latent space and stored in
a class-partitioned index. A query (object class, free text) scores only
objects of its class, aggregates per image by the best object, and returns
images ranked by that score.
"""

from .core import (
    DEFAULT_DIM,
    EmbeddingVector,
    ImageRecord,
    ObjectRecord,
    Query,
    RankedResult,
    ScoredObject,
    aggregate_image,
    cosine_similarity,
    rank,
    score_object,
)
from .encoder import (
    EmbeddingFileReader,
    EncoderDescriptor,
    RemoteEncoder,
    SyntheticTokenImage,
    ToyEncoder,
    encoder_from_spec,
    tokenize,
    write_embedding_file,
)
from .errors import (
    CapabilityError,
    ConfigurationError,
    CorruptionError,
    EmptyMaskError,
    FormatError,
    InputError,
    InvariantError,
    ObjSearchError,
    QueryError,
    TransportError,
)
from .evaluation import (
    Judgment,
    JudgmentJournal,
    PromptTemplate,
    compare_methods,
    cumulative_tp_curve,
    export_curve_csv,
    zero_shot_classify,
)
from .index import Index, IndexStats, IngestReport
from .pipeline import PipelineReport, ingest_dataset, load_image_rgb
from .preprocess import (
    BoundingBox,
    InstanceInfo,
    PanopticAnnotation,
    PixelBuffer,
    apply_mask,
    crop,
    extract_objects,
    load_annotation_file,
    pad_to_square,
    tight_bbox,
    write_annotation_file,
)
from .retrieval import SearchOutcome, query_fingerprint, run_query

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_DIM",
    "EmbeddingVector",
    "ImageRecord",
    "ObjectRecord",
    "Query",
    "RankedResult",
    "ScoredObject",
    "aggregate_image",
    "cosine_similarity",
    "rank",
    "score_object",
    "EmbeddingFileReader",
    "EncoderDescriptor",
    "RemoteEncoder",
    "SyntheticTokenImage",
    "ToyEncoder",
    "encoder_from_spec",
    "tokenize",
    "write_embedding_file",
    "CapabilityError",
    "ConfigurationError",
    "CorruptionError",
    "EmptyMaskError",
    "FormatError",
    "InputError",
    "InvariantError",
    "ObjSearchError",
    "QueryError",
    "TransportError",
    "Judgment",
    "JudgmentJournal",
    "PromptTemplate",
    "compare_methods",
    "cumulative_tp_curve",
    "export_curve_csv",
    "zero_shot_classify",
    "Index",
    "IndexStats",
    "IngestReport",
    "PipelineReport",
    "ingest_dataset",
    "load_image_rgb",
    "BoundingBox",
    "InstanceInfo",
    "PanopticAnnotation",
    "PixelBuffer",
    "apply_mask",
    "crop",
    "extract_objects",
    "load_annotation_file",
    "pad_to_square",
    "tight_bbox",
    "write_annotation_file",
    "SearchOutcome",
    "query_fingerprint",
    "run_query",
    "__version__",
]
