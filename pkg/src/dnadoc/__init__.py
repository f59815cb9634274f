"""dnadoc: DNA sequences as multi-page annotated documents.

Renders DNA into fixed-geometry page images with per-nucleotide pixel
boxes, builds the six prompted task families (transcription, grounded
transcription, ROI reading, masked completion, subsequence localization,
chromosome classification), serializes them as conversation datasets, and
scores model responses under strict ordered grounding metrics.
"""

from .genome_io import (
    ALPHABET,
    DnaSequence,
    EmptyInputError,
    FastaError,
    GenomeWindow,
    IllegalCharacterError,
    WINDOW_PRESETS,
    extract_windows,
    parse_fasta,
    read_fasta,
)
from .render import (
    ConfigTooSmallError,
    DnaDocument,
    EmptyRegionError,
    IndexOutOfRangeError,
    NonContiguousSelectionError,
    NucleotideAnnotation,
    Page,
    PixelBox,
    RegionRef,
    RenderConfig,
    RowSpan,
    interval_to_regions,
    mask_regions,
    page_capacity,
    regions_to_interval,
    render_document,
)
from .rng import substream
from .tasks import (
    AllItemsTruncatedError,
    CURRICULUM_PRESETS,
    CurriculumSchedule,
    EmptyDocumentError,
    PromptVariant,
    SAMPLER_PRESETS,
    SamplerConfig,
    SupervisionItem,
    TaskInstance,
    anneal_prompt_length,
    apply_tail_truncation,
    build_instance,
    find_occurrences,
    sample_line_spans,
    sample_prompt_variant,
    sample_task,
)
from .wire import (
    CHROMOSOME_LABELS,
    GroundedItem,
    MalformedLineError,
    ResponseDoc,
    ShardWriter,
    TaskId,
    UnknownLabelError,
    parse_grounded_response,
    parse_plain_response,
    parse_response_lenient,
    serialize_instance,
    validate_assistant,
)
from .metrics import (
    MatchCriteria,
    OrderedEvalReport,
    PrefixReport,
    TokenBudget,
    DegenerateBoxError,
    EmptyGroundTruthError,
    LengthMismatchError,
    UnsupportedResolutionError,
    edit_distance,
    evaluate_ordered,
    evaluate_prefix_transcription,
    evaluate_t5,
    evaluate_t6,
    iou,
    mean_reports,
    text_cer,
    token_budget,
)

__version__ = "0.1.0"
