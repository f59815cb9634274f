"""Task instance construction: samplers, tail truncation, prompt templates.

Each instance is a two-turn conversation over a rendered document. The user
turn is one of three instruction variants (SHORT/MEDIUM/LONG) for the task
family, prefixed by a single ``<image>`` placeholder and a ``NUM_IMAGES=P.``
meta line; the assistant turn follows the task's response contract and is
validated against the wire grammar before the instance is returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

from . import wire
from .render import (
    DnaDocument,
    PixelBox,
    RegionRef,
    interval_to_regions,
    mask_regions,
    regions_to_interval,
    reindex_pages,
)
from .wire import TaskId


class TaskError(ValueError):
    """Problem while building a task instance."""


class EmptyDocumentError(TaskError):
    """The document has no rendered rows to sample from."""


class AllItemsTruncatedError(TaskError):
    """Tail truncation would delete every supervision item; resample."""


class PromptVariant(str, Enum):
    LONG = "LONG"
    MEDIUM = "MEDIUM"
    SHORT = "SHORT"


# order matches the curriculum distributions: (LONG, MEDIUM, SHORT)
VARIANT_ORDER = (PromptVariant.LONG, PromptVariant.MEDIUM, PromptVariant.SHORT)


@dataclass(frozen=True)
class SamplerConfig:
    """All randomization knobs for instance construction."""

    task_weights: tuple[float, float, float, float, float, float] = (
        0.25,
        0.20,
        0.15,
        0.15,
        0.15,
        0.10,
    )
    trunc_base: float = 0.0
    trunc_max: float = 0.5
    span_base_min: int = 1
    span_base_max: int = 8
    span_count_min: int = 1
    span_count_max: int = 3
    unique_lines: bool = True
    query_len_min: int = 6
    query_len_max: int = 64
    allow_overlap: bool = True
    t5_negative_rate: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.task_weights) != 6 or any(w < 0 for w in self.task_weights):
            raise ValueError("task_weights must be 6 non-negative reals")
        if sum(self.task_weights) <= 0:
            raise ValueError("task_weights must have positive sum")
        if not 0 <= self.trunc_base <= self.trunc_max <= 1:
            raise ValueError("need 0 <= trunc_base <= trunc_max <= 1")
        for lo, hi, name in (
            (self.span_base_min, self.span_base_max, "span_base"),
            (self.span_count_min, self.span_count_max, "span_count"),
            (self.query_len_min, self.query_len_max, "query_len"),
        ):
            if not 1 <= lo <= hi:
                raise ValueError(f"{name} range must satisfy 1 <= min <= max")
        if not 0 <= self.t5_negative_rate <= 1:
            raise ValueError("t5_negative_rate must be in [0, 1]")


@dataclass(frozen=True)
class CurriculumSchedule:
    """Linear annealing of the (LONG, MEDIUM, SHORT) variant distribution."""

    start_dist: tuple[float, float, float] = (0.2, 0.2, 0.6)
    end_dist: tuple[float, float, float] = (0.1, 0.1, 0.8)
    total_steps: int = 112_500

    def __post_init__(self) -> None:
        for dist in (self.start_dist, self.end_dist):
            if len(dist) != 3 or any(v < 0 for v in dist) or sum(dist) <= 0:
                raise ValueError("distributions must be 3 non-negative reals, positive sum")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")


@dataclass(frozen=True)
class SupervisionItem:
    """One (sequence, regions) supervision unit."""

    sequence: str
    regions: tuple[RegionRef, ...]


@dataclass
class TaskInstance:
    """A two-turn conversation plus the (possibly masked/truncated) document."""

    task: TaskId
    prompt_variant: PromptVariant
    user_content: str
    assistant_content: str
    document: DnaDocument
    label: str | None = None


SAMPLER_PRESETS: dict[str, SamplerConfig] = {
    "hg38-stage1": SamplerConfig(
        task_weights=(0.25, 0.20, 0.15, 0.15, 0.15, 0.10),
        trunc_base=0.0,
        trunc_max=0.5,
        query_len_min=6,
        query_len_max=64,
    ),
    "hg38-stage2": SamplerConfig(
        task_weights=(0.17, 0.17, 0.17, 0.17, 0.17, 0.15),
        trunc_base=0.0,
        trunc_max=0.98,
        query_len_min=6,
        query_len_max=32,
    ),
    "rice": SamplerConfig(
        task_weights=(0.17, 0.17, 0.17, 0.17, 0.17, 0.15),
        trunc_base=0.0,
        trunc_max=0.98,
        query_len_min=6,
        query_len_max=32,
    ),
}

CURRICULUM_PRESETS: dict[str, CurriculumSchedule] = {
    "hg38-stage1": CurriculumSchedule((0.2, 0.2, 0.6), (0.1, 0.1, 0.8), 112_500),
    "hg38-stage2": CurriculumSchedule((0.2, 0.2, 0.6), (0.1, 0.1, 0.8), 1),
    "rice": CurriculumSchedule((0.2, 0.2, 0.6), (0.1, 0.1, 0.8), 112_500),
}


TEMPLATES: dict[TaskId, dict[PromptVariant, str]] = {
    TaskId.T1: {
        PromptVariant.SHORT: "Free OCR.",
        PromptVariant.MEDIUM: "Free OCR.\nReturn only DNA sequence.",
        PromptVariant.LONG: (
            "Free OCR.\n"
            "Return only the DNA sequence (A/C/G/T/N).\n"
            "Keep line breaks if present. No extra words."
        ),
    },
    TaskId.T2: {
        PromptVariant.SHORT: "<|grounding|>Read all DNA text and locate each line.",
        PromptVariant.MEDIUM: (
            "<|grounding|>Read all DNA text and locate each line.\n"
            "Output per line: <|ref|>SEQ<|/ref|><|det|>[[img_id,x1,y1,x2,y2]]<|/det|>."
        ),
        PromptVariant.LONG: (
            "<|grounding|>Read all DNA text and locate each text line or block.\n"
            "Output one line per region in reading order (top-to-bottom, left-to-right).\n"
            "For each region, output EXACTLY:\n"
            "<|ref|>SEQUENCE<|/ref|><|det|>[[img_id,x1,y1,x2,y2]]<|/det|>\n"
            "Rules:\n"
            "- det MUST be a list-of-boxes. Even one box must be written as [[...]].\n"
            "- img_id is 0-based index into the images list. If NUM_IMAGES==1, img_id MUST be 0.\n"
            "Only output these lines. No extra text."
        ),
    },
    TaskId.T3: {
        PromptVariant.SHORT: "<|grounding|>OCR DNA for boxes (in order): {boxes}",
        PromptVariant.MEDIUM: (
            "<|grounding|>OCR DNA text for each box in the SAME order.\n"
            "Boxes:\n"
            "{boxes}\n"
            "Output one line per box: <|ref|>SEQ<|/ref|><|det|>[[img_id,x1,y1,x2,y2]]<|/det|>"
        ),
        PromptVariant.LONG: (
            "<|grounding|>OCR DNA text for each bounding box below, in the SAME order.\n"
            "Boxes:\n"
            "{boxes}\n"
            "Output one line per box using EXACTLY:\n"
            "<|ref|>SEQUENCE<|/ref|><|det|>[[img_id,x1,y1,x2,y2]]<|/det|>\n"
            "Rules:\n"
            "- det MUST be list-of-boxes: [[...]] for a single box.\n"
            "- img_id is 0-based index into the images list. If NUM_IMAGES==1, img_id MUST be 0.\n"
            "No extra text."
        ),
    },
    TaskId.T4: {
        PromptVariant.SHORT: "<|grounding|>Predict masked DNA for boxes (in order): {boxes}",
        PromptVariant.MEDIUM: (
            "<|grounding|>Predict ORIGINAL DNA for masked boxes in the SAME order.\n"
            "Boxes:\n"
            "{boxes}\n"
            "Output: <|ref|>SEQ<|/ref|><|det|>[[img_id,x1,y1,x2,y2]]<|/det|>"
        ),
        PromptVariant.LONG: (
            "<|grounding|>The DNA text inside each box is masked/occluded.\n"
            "Predict the ORIGINAL DNA sequence for each masked region.\n"
            "Masked boxes:\n"
            "{boxes}\n"
            "Output in the SAME order as the boxes.\n"
            "Use only A/C/G/T/N (use N if uncertain).\n"
            "For each box, output EXACTLY one line:\n"
            "<|ref|>PREDICTED_SEQUENCE<|/ref|><|det|>[[img_id,x1,y1,x2,y2]]<|/det|>\n"
            "Rules:\n"
            "- det MUST be list-of-boxes: [[...]] for a single box.\n"
            "- img_id is 0-based index into the images list. If NUM_IMAGES==1, img_id MUST be 0.\n"
            "No extra text."
        ),
    },
    TaskId.T5: {
        PromptVariant.SHORT: "<|grounding|>Locate <|ref|>{query}<|/ref|>.",
        PromptVariant.MEDIUM: (
            "<|grounding|>Locate <|ref|>{query}<|/ref|>.\n"
            "Output exactly one line: <|ref|>QUERY<|/ref|><|det|>[...]<|/det|> (or [] if not found)."
        ),
        PromptVariant.LONG: (
            "<|grounding|>Locate the DNA subsequence <|ref|>{query}<|/ref|>.\n"
            "Return ALL bounding boxes where it appears.\n"
            "Output EXACTLY one line:\n"
            "<|ref|>{query}<|/ref|><|det|>[[img_id,x1,y1,x2,y2],[img_id,x1,y1,x2,y2]]<|/det|>\n"
            "If not found, output:\n"
            "<|ref|>{query}<|/ref|><|det|>[]<|/det|>\n"
            "Rules:\n"
            "- Each box MUST be [img_id,x1,y1,x2,y2].\n"
            "- img_id is 0-based index into the images list. If NUM_IMAGES==1, img_id MUST be 0.\n"
            "No extra text."
        ),
    },
    TaskId.T6: {
        PromptVariant.SHORT: "Which chromosome?",
        PromptVariant.MEDIUM: "Predict chromosome label (chr1-22, chrX, chrY, or unknown).",
        PromptVariant.LONG: (
            "Classify this DNA sequence: which human chromosome does it belong to?\n"
            "Answer with one label only: chr1-chr22, chrX, chrY, or unknown."
        ),
    },
}


# ---------------------------------------------------------------------------
# samplers


def sample_task(cfg: SamplerConfig, rng: np.random.Generator) -> TaskId:
    """Draw a task index from the categorical task distribution."""
    total = sum(cfg.task_weights)
    r = float(rng.random()) * total
    acc = 0.0
    for task, w in zip(TaskId, cfg.task_weights):
        acc += w
        if r < acc:
            return task
    return TaskId.T6  # float round-off guard


def anneal_prompt_length(
    sched: CurriculumSchedule, step: int
) -> tuple[float, float, float]:
    """Clamped linear interpolation of the variant distribution at `step`."""
    t = min(max(step, 0), sched.total_steps) / sched.total_steps
    mix = tuple(
        (1.0 - t) * a + t * b for a, b in zip(sched.start_dist, sched.end_dist)
    )
    total = sum(mix)
    return tuple(v / total for v in mix)  # type: ignore[return-value]


def sample_prompt_variant(
    sched: CurriculumSchedule, step: int, rng: np.random.Generator
) -> PromptVariant:
    dist = anneal_prompt_length(sched, step)
    r = float(rng.random())
    acc = 0.0
    for variant, p in zip(VARIANT_ORDER, dist):
        acc += p
        if r < acc:
            return variant
    return VARIANT_ORDER[-1]


def sample_line_spans(
    doc: DnaDocument, cfg: SamplerConfig, rng: np.random.Generator
) -> list[SupervisionItem]:
    """Sample contiguous character spans, each confined to one rendered row.

    Draws the span count, then per span a source row (without replacement
    when `unique_lines` and enough rows exist), a length clipped to the row,
    and a uniform start inside the row.
    """
    rows = doc.rows()
    if not rows:
        raise EmptyDocumentError("document has no rendered rows")
    n = int(rng.integers(cfg.span_count_min, cfg.span_count_max + 1))
    if cfg.unique_lines and len(rows) >= n:
        row_ids = rng.choice(len(rows), size=n, replace=False)
    else:
        row_ids = rng.integers(0, len(rows), size=n)
    items: list[SupervisionItem] = []
    for rid in row_ids:
        row = rows[int(rid)]
        length = len(row.glyphs)
        span = min(int(rng.integers(cfg.span_base_min, cfg.span_base_max + 1)), length)
        start = int(rng.integers(0, length - span + 1))
        items.append(
            SupervisionItem(
                sequence=row.text[start : start + span],
                regions=(RegionRef(row.page_index, row.sub_box(start, start + span)),),
            )
        )
    return items


def find_occurrences(
    doc: DnaDocument, query: str, allow_overlap: bool = True
) -> list[tuple[int, tuple[RegionRef, ...]]]:
    """All query matches in reading order, each with its row-segment regions.

    After a match at position m the scan resumes at m+1 when overlaps are
    allowed, else at m+len(query).
    """
    if not query:
        raise ValueError("query must be nonempty")
    if not frozenset(query) <= frozenset("ACGTN"):
        raise ValueError("query must be over A/C/G/T/N")
    text = doc.text
    step = 1 if allow_overlap else len(query)
    out: list[tuple[int, tuple[RegionRef, ...]]] = []
    pos = 0
    while True:
        m = text.find(query, pos)
        if m < 0:
            break
        out.append((m, tuple(interval_to_regions(doc, m, m + len(query)))))
        pos = m + step
    return out


def apply_tail_truncation(
    doc: DnaDocument,
    items: Sequence[SupervisionItem],
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> tuple[DnaDocument, list[SupervisionItem]]:
    """Delete a suffix of supervision items and white out their regions.

    The ratio is rho = min(trunc_base + u*(trunc_max - trunc_base), trunc_max)
    with u ~ U[0,1]; exactly floor(rho*M) trailing items are deleted. Pages
    left with no visible supervision glyph are dropped, the survivors are
    re-numbered contiguously from 0, and img_id is rewritten in every
    surviving region.
    """
    if not items:
        raise ValueError("items must be nonempty")
    u = float(rng.random())
    rho = min(cfg.trunc_base + u * (cfg.trunc_max - cfg.trunc_base), cfg.trunc_max)
    n_del = math.floor(rho * len(items))
    if n_del >= len(items):
        raise AllItemsTruncatedError(f"rho={rho} deletes all {len(items)} items")
    if n_del == 0:
        return doc, list(items)

    kept = list(items[: len(items) - n_del])
    dropped = items[len(items) - n_del :]
    dropped_regions = [r for item in dropped for r in item.regions]

    # glyphs whited out, per page (region -> interval on the original doc)
    whited: dict[int, set[int]] = {}
    for region in dropped_regions:
        lo, hi = regions_to_interval(doc, region)
        whited.setdefault(region.img_id, set()).update(range(lo, hi))

    masked = mask_regions(doc, dropped_regions)

    referenced = {r.img_id for item in kept for r in item.regions}
    keep_pages = [
        idx
        for idx, page in enumerate(masked.pages)
        if idx in referenced
        or not all(a.char_index in whited.get(idx, ()) for a in page.annotations)
    ]
    if len(keep_pages) == len(masked.pages):
        return masked, kept

    remap = {old: new for new, old in enumerate(keep_pages)}
    new_doc = reindex_pages(masked, keep_pages)
    new_items = [
        replace(
            item,
            regions=tuple(RegionRef(remap[r.img_id], r.box) for r in item.regions),
        )
        for item in kept
    ]
    return new_doc, new_items


# ---------------------------------------------------------------------------
# instance construction


def _maybe_truncate(
    doc: DnaDocument,
    items: list[SupervisionItem],
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> tuple[DnaDocument, list[SupervisionItem]]:
    if cfg.trunc_base > 0 or cfg.trunc_max > 0:
        return apply_tail_truncation(doc, items, cfg, rng)
    return doc, items


def _sample_t5_query(
    doc: DnaDocument, cfg: SamplerConfig, rng: np.random.Generator
) -> tuple[str, list[SupervisionItem]]:
    text = doc.text
    lmax = min(cfg.query_len_max, len(text))
    lmin = min(cfg.query_len_min, lmax)
    length = int(rng.integers(lmin, lmax + 1))
    if cfg.t5_negative_rate > 0 and float(rng.random()) < cfg.t5_negative_rate:
        query = _absent_query(text, length, rng)
        return query, []
    start = int(rng.integers(0, len(text) - length + 1))
    query = text[start : start + length]
    matches = find_occurrences(doc, query, cfg.allow_overlap)
    return query, [SupervisionItem(query, regions) for _, regions in matches]


_QUERY_LETTERS = np.array(list("ACGT"))


def _absent_query(text: str, length: int, rng: np.random.Generator) -> str:
    for _ in range(1000):
        query = "".join(rng.choice(_QUERY_LETTERS, size=length))
        if text.find(query) < 0:
            return query
    raise TaskError(f"could not sample an absent query of length {length}")


def _grounded_lines(items: Sequence[SupervisionItem]) -> str:
    return "\n".join(
        wire.grounded_line(
            item.sequence, [wire.region_to_box(r) for r in item.regions]
        )
        for item in items
    )


def build_instance(
    task: TaskId,
    doc: DnaDocument,
    variant: PromptVariant,
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> TaskInstance:
    """Build one validated task instance over `doc`.

    T2/T3/T5 apply tail truncation when the config enables it; T4 masks the
    sampled regions but keeps the original bases as supervision.
    """
    if not doc.pages or doc.total_bases == 0:
        raise EmptyDocumentError("cannot build an instance over an empty document")

    out_doc = doc
    label: str | None = None
    boxes_text: str | None = None
    query: str | None = None

    if task is TaskId.T1:
        assistant = "\n".join(row.text for row in doc.rows())
    elif task is TaskId.T2:
        items = [
            SupervisionItem(row.text, (RegionRef(row.page_index, row.box),))
            for row in doc.rows()
        ]
        out_doc, items = _maybe_truncate(doc, items, cfg, rng)
        assistant = _grounded_lines(items)
    elif task in (TaskId.T3, TaskId.T4):
        items = sample_line_spans(doc, cfg, rng)
        if task is TaskId.T3:
            out_doc, items = _maybe_truncate(doc, items, cfg, rng)
        else:
            out_doc = mask_regions(doc, [r for item in items for r in item.regions])
        boxes = [wire.region_to_box(r) for item in items for r in item.regions]
        boxes_text = wire.prompt_boxes(boxes)
        assistant = _grounded_lines(items)
    elif task is TaskId.T5:
        query, items = _sample_t5_query(doc, cfg, rng)
        if items:
            out_doc, items = _maybe_truncate(doc, items, cfg, rng)
        boxes = [wire.region_to_box(r) for item in items for r in item.regions]
        assistant = wire.grounded_line(query, boxes)
    elif task is TaskId.T6:
        label = (
            doc.source_label if doc.source_label in wire.CHROMOSOME_LABELS else "unknown"
        )
        assistant = label
    else:  # pragma: no cover
        raise ValueError(f"unknown task {task}")

    instruction = TEMPLATES[task][variant]
    if boxes_text is not None:
        instruction = instruction.replace("{boxes}", boxes_text)
    if query is not None:
        instruction = instruction.replace("{query}", query)
    user = f"{wire.IMAGE_PLACEHOLDER}\nNUM_IMAGES={len(out_doc.pages)}.\n{instruction}"

    wire.validate_assistant(task, assistant)
    wire.validate_user_content(user, len(out_doc.pages))
    return TaskInstance(
        task=task,
        prompt_variant=variant,
        user_content=user,
        assistant_content=assistant,
        document=out_doc,
        label=label,
    )
