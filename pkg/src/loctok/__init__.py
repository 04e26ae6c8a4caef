"""Location-token codec and annotation-pipeline toolkit.

The top level re-exports the working vocabulary: geometry primitives and
quantization, the prompt/response codec, dependency-parse utilities, the
filter/refine engine with its record (de)serialization, corpus statistics,
and candidate scoring. Submodules keep the finer-grained helpers.
"""

from loctok.codec import (
    GroundedPhrase,
    GroundedTextResponse,
    LabeledRegion,
    LabeledRegionsResponse,
    LocToken,
    MaskResponse,
    RegionsResponse,
    Task,
    TaskPrompt,
    TextResponse,
    TextSpan,
    TokenStream,
    decode_to_pixels,
    lex,
    parse_prompt,
    parse_response,
    quantize_response,
    render_prompt,
    serialize_response,
)
from loctok.engine import (
    AnnotatedImage,
    CandidateRole,
    FilterConfig,
    FilterCounts,
    Granularity,
    PhraseRegionTriplet,
    PhraseSpan,
    RegionCandidate,
    RegionTextPair,
    TextAnnotation,
    TextSource,
    TripletRegion,
    annotated_image_from_record,
    annotated_image_to_record,
    dumps_record,
    filter_record,
    generate_region_text_candidates,
    load_sidecar,
    merge_annotations,
    validate_annotated_image,
)
from loctok.errors import LoctokError
from loctok.geometry import (
    BBox,
    ImageSize,
    Polygon,
    QuadBox,
    QuantizedRegion,
    RegionKind,
    ScoredBox,
    dequantize_coord,
    dequantize_region,
    iou,
    nms,
    nms_indices,
    quantize_coord,
    quantize_region,
)
from loctok.linguistics import (
    ParsedSentence,
    ParsedToken,
    noun_chunks,
    parse_conllu,
    render_conllu,
    sentence_complexity,
    token_complexity,
)
from loctok.scoring import StepDistribution, select_best, sequence_nll, text_similarity
from loctok.stats import (
    CorpusStats,
    annotation_stats,
    heatmap_csv,
    histogram_csv,
    semantic_stats,
    spatial_stats,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotatedImage",
    "BBox",
    "CandidateRole",
    "CorpusStats",
    "FilterConfig",
    "FilterCounts",
    "Granularity",
    "GroundedPhrase",
    "GroundedTextResponse",
    "ImageSize",
    "LabeledRegion",
    "LabeledRegionsResponse",
    "LocToken",
    "LoctokError",
    "MaskResponse",
    "ParsedSentence",
    "ParsedToken",
    "PhraseRegionTriplet",
    "PhraseSpan",
    "Polygon",
    "QuadBox",
    "QuantizedRegion",
    "RegionCandidate",
    "RegionKind",
    "RegionTextPair",
    "RegionsResponse",
    "ScoredBox",
    "StepDistribution",
    "Task",
    "TaskPrompt",
    "TextAnnotation",
    "TextResponse",
    "TextSource",
    "TextSpan",
    "TokenStream",
    "TripletRegion",
    "annotated_image_from_record",
    "annotated_image_to_record",
    "annotation_stats",
    "decode_to_pixels",
    "dequantize_coord",
    "dequantize_region",
    "dumps_record",
    "filter_record",
    "generate_region_text_candidates",
    "heatmap_csv",
    "histogram_csv",
    "iou",
    "lex",
    "load_sidecar",
    "merge_annotations",
    "nms",
    "nms_indices",
    "noun_chunks",
    "parse_conllu",
    "parse_prompt",
    "parse_response",
    "quantize_coord",
    "quantize_region",
    "quantize_response",
    "render_conllu",
    "render_prompt",
    "select_best",
    "semantic_stats",
    "sentence_complexity",
    "sequence_nll",
    "serialize_response",
    "spatial_stats",
    "text_similarity",
    "token_complexity",
    "validate_annotated_image",
    "__version__",
]
