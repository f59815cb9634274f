"""On-disk dataset format and the grounded-response grammar.

The role and grounding marker strings below are bit-exact contract
constants. The line grammar for grounded responses is::

    line    := "<|ref|>" SEQ "<|/ref|>" "<|det|>" boxlist "<|/det|>"
    boxlist := "[]" | "[" box ("," box)* "]"
    box     := "[" i "," i "," i "," i "," i "]"

with SEQ over {A,C,G,T,N}, whitespace tolerated around separators, and an
empty boxlist legal only for subsequence localization (T5). This module is
the single source of truth for both producing and parsing that grammar.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np
from PIL import Image

from .render import DnaDocument, NucleotideAnnotation, Page, PixelBox, RegionRef

if TYPE_CHECKING:  # pragma: no cover
    from .tasks import TaskInstance

ROLE_USER = "<|User|>"
ROLE_ASSISTANT = "<|Assistant|>"
REF_OPEN = "<|ref|>"
REF_CLOSE = "<|/ref|>"
DET_OPEN = "<|det|>"
DET_CLOSE = "<|/det|>"
GROUNDING = "<|grounding|>"
IMAGE_PLACEHOLDER = "<image>"

_SEQ_ALPHABET = frozenset("ACGTN")

CHROMOSOME_LABELS: tuple[str, ...] = tuple(f"chr{i}" for i in range(1, 23)) + (
    "chrX",
    "chrY",
    "unknown",
)


class TaskId(str, Enum):
    T1 = "T1"  # free-form transcription
    T2 = "T2"  # transcription with per-line grounding
    T3 = "T3"  # ROI transcription, boxes given
    T4 = "T4"  # masked completion, boxes given
    T5 = "T5"  # subsequence localization
    T6 = "T6"  # chromosome classification


GROUNDED_TASKS = frozenset({TaskId.T2, TaskId.T3, TaskId.T4, TaskId.T5})
PLAIN_TASKS = frozenset({TaskId.T1, TaskId.T6})

Box5 = tuple[int, int, int, int, int]


class WireError(ValueError):
    """Response or record violates the wire format."""


class MalformedLineError(WireError):
    def __init__(self, line_no: int, reason: str) -> None:
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class IllegalSequenceCharError(WireError):
    """A sequence payload contained characters outside {A,C,G,T,N}."""


class EmptyBoxListError(WireError):
    """An empty <|det|> list appeared outside T5."""


class UnknownLabelError(WireError):
    """A classification answer was not one of the 25 chromosome labels."""


@dataclass(frozen=True)
class GroundedItem:
    """A (sequence, box-list) supervision or prediction pair."""

    sequence: str
    boxes: tuple[Box5, ...] = ()


@dataclass(frozen=True)
class ResponseDoc:
    """Parsed assistant payload; exactly one field matching the task is set."""

    task: TaskId
    items: tuple[GroundedItem, ...] | None = None
    raw_text: str | None = None
    label: str | None = None


# ---------------------------------------------------------------------------
# formatting


def region_to_box(region: RegionRef) -> Box5:
    b = region.box
    return (int(region.img_id), int(b.x1), int(b.y1), int(b.x2), int(b.y2))


def format_box(box: Box5) -> str:
    return "[" + ",".join(str(int(v)) for v in box) + "]"


def format_boxlist(boxes: Sequence[Box5]) -> str:
    return "[" + ",".join(format_box(b) for b in boxes) + "]"


def grounded_line(sequence: str, boxes: Sequence[Box5]) -> str:
    return (
        f"{REF_OPEN}{sequence}{REF_CLOSE}{DET_OPEN}{format_boxlist(boxes)}{DET_CLOSE}"
    )


def prompt_boxes(boxes: Sequence[Box5]) -> str:
    """Nested int list as placed in T3/T4 prompts, e.g. [[0, 30, 915, 960, 945]]."""
    return repr([[int(v) for v in b] for b in boxes])


# ---------------------------------------------------------------------------
# parsing


def _expect(text: str, token: str, line_no: int) -> str:
    stripped = text.lstrip()
    if not stripped.startswith(token):
        raise MalformedLineError(line_no, f"expected {token}")
    return stripped[len(token) :]


def _parse_boxlist(payload: str, line_no: int) -> tuple[Box5, ...]:
    try:
        data = json.loads(payload)
    except (json.JSONDecodeError, RecursionError, ValueError):
        # RecursionError: pathological nesting must stay a structured error
        raise MalformedLineError(line_no, "det payload is not a bracketed box list") from None
    if not isinstance(data, list):
        raise MalformedLineError(line_no, "det payload must be a list of boxes")
    boxes: list[Box5] = []
    for entry in data:
        if not isinstance(entry, list) or len(entry) != 5:
            raise MalformedLineError(line_no, "each box must be [img_id,x1,y1,x2,y2]")
        values: list[int] = []
        for v in entry:
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise MalformedLineError(line_no, "box fields must be non-negative integers")
            values.append(v)
        boxes.append(tuple(values))  # type: ignore[arg-type]
    return tuple(boxes)


def parse_grounded_line(line: str, line_no: int = 1) -> GroundedItem:
    """Parse one ``<|ref|>SEQ<|/ref|><|det|>[...]<|/det|>`` line."""
    rest = _expect(line, REF_OPEN, line_no)
    cut = rest.find(REF_CLOSE)
    if cut < 0:
        raise MalformedLineError(line_no, f"missing {REF_CLOSE}")
    sequence = rest[:cut].strip()
    if not frozenset(sequence) <= _SEQ_ALPHABET:
        bad = sorted(frozenset(sequence) - _SEQ_ALPHABET)
        raise IllegalSequenceCharError(f"line {line_no}: characters {bad} outside A/C/G/T/N")
    rest = _expect(rest[cut + len(REF_CLOSE) :], DET_OPEN, line_no)
    cut = rest.find(DET_CLOSE)
    if cut < 0:
        raise MalformedLineError(line_no, f"missing {DET_CLOSE}")
    boxes = _parse_boxlist(rest[:cut].strip(), line_no)
    if rest[cut + len(DET_CLOSE) :].strip():
        raise MalformedLineError(line_no, "trailing text after <|/det|>")
    return GroundedItem(sequence=sequence, boxes=boxes)


def parse_grounded_response(text: str, task: TaskId) -> ResponseDoc:
    """Strictly parse a grounded (T2-T5) response into ordered items."""
    if task not in GROUNDED_TASKS:
        raise ValueError(f"{task.value} is not a grounded task")
    items: list[GroundedItem] = []
    for line_no, line in enumerate(text.strip().split("\n"), start=1):
        if not line.strip():
            continue
        items.append(parse_grounded_line(line, line_no))
    if not items:
        raise MalformedLineError(1, "no grounded lines in response")
    if task is not TaskId.T5:
        for line_no, item in enumerate(items, start=1):
            if not item.boxes:
                raise EmptyBoxListError(
                    f"line {line_no}: empty box list is only legal for {TaskId.T5.value}"
                )
    return ResponseDoc(task=task, items=tuple(items))


def parse_plain_response(text: str, task: TaskId) -> ResponseDoc:
    """Parse a T1 transcription or T6 label answer."""
    if task not in PLAIN_TASKS:
        raise ValueError(f"{task.value} is not a plain-text task")
    if task is TaskId.T1:
        lines = [line.strip() for line in text.strip().split("\n")]
        for line_no, line in enumerate(lines, start=1):
            if not frozenset(line) <= _SEQ_ALPHABET:
                bad = sorted(frozenset(line) - _SEQ_ALPHABET)
                raise IllegalSequenceCharError(
                    f"line {line_no}: characters {bad} outside A/C/G/T/N"
                )
        return ResponseDoc(task=task, raw_text="\n".join(lines))
    token = text.strip()
    if token not in CHROMOSOME_LABELS:
        raise UnknownLabelError(f"{token!r} is not a chromosome label")
    return ResponseDoc(task=task, label=token)


def validate_assistant(task: TaskId, text: str) -> ResponseDoc:
    """Generator-side contract check, stricter than the bare grammar.

    T2-T4 require exactly one box per line; T5 requires exactly one line.
    """
    if task in PLAIN_TASKS:
        return parse_plain_response(text, task)
    doc = parse_grounded_response(text, task)
    assert doc.items is not None
    if task is TaskId.T5:
        if len(doc.items) != 1:
            raise MalformedLineError(2, "T5 responses are a single line")
    else:
        for line_no, item in enumerate(doc.items, start=1):
            if len(item.boxes) != 1:
                raise MalformedLineError(
                    line_no, f"{task.value} lines carry exactly one box"
                )
    return doc


def validate_user_content(content: str, n_pages: int) -> None:
    """Check the single <image> placeholder and its NUM_IMAGES meta line."""
    if content.count(IMAGE_PLACEHOLDER) != 1:
        raise WireError("user content must contain exactly one <image> placeholder")
    prefix = f"{IMAGE_PLACEHOLDER}\nNUM_IMAGES={n_pages}."
    if not content.startswith(prefix):
        raise WireError(f"user content must start with {prefix!r}")


def parse_response_lenient(text: str, task: TaskId) -> ResponseDoc:
    """Best-effort parse for evaluation; never raises on model output.

    Grounded lines that fail the grammar are retained as present-but-wrong
    placeholder items so they still count against the ordered metrics.
    Unparseable T6 answers yield label=None.
    """
    if task is TaskId.T6:
        token = text.strip()
        return ResponseDoc(
            task=task, label=token if token in CHROMOSOME_LABELS else None
        )
    if task is TaskId.T1:
        lines = [line.strip() for line in text.strip().split("\n") if line.strip()]
        return ResponseDoc(task=task, raw_text="\n".join(lines))
    items: list[GroundedItem] = []
    for line_no, line in enumerate(text.strip().split("\n"), start=1):
        if not line.strip():
            continue
        try:
            items.append(parse_grounded_line(line, line_no))
        except WireError:
            items.append(GroundedItem(sequence="", boxes=()))
    return ResponseDoc(task=task, items=tuple(items))


# ---------------------------------------------------------------------------
# dataset records


def page_png_bytes(page: Page) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(page.image).save(buf, format="PNG")
    return buf.getvalue()


def annotation_payload(doc: DnaDocument) -> list[dict]:
    """Annotation sidecar entries in document order."""
    return [
        {
            "char": a.char,
            "char_index": a.char_index,
            "page_index": a.page_index,
            "page_char_index": a.page_char_index,
            "page_bbox": list(a.page_bbox.as_tuple()),
        }
        for a in doc.iter_annotations()
    ]


def render_record(inst: "TaskInstance", sample_id: str) -> tuple[dict, dict[str, bytes]]:
    """Build the JSONL record plus the files it references.

    Returns (record, {relative_path: bytes}); pure, so workers can prepare
    records in parallel while a single writer appends them in order.
    """
    image_paths = [
        f"images/{sample_id}_p{k}.png" for k in range(len(inst.document.pages))
    ]
    files: dict[str, bytes] = {
        path: page_png_bytes(page)
        for path, page in zip(image_paths, inst.document.pages)
    }
    files[f"annotations/{sample_id}.json"] = json.dumps(
        annotation_payload(inst.document), separators=(",", ":")
    ).encode()
    record = {
        "id": sample_id,
        "task": inst.task.value,
        "prompt_variant": inst.prompt_variant.value,
        "conversation": [
            {"role": ROLE_USER, "content": inst.user_content, "images": image_paths},
            {"role": ROLE_ASSISTANT, "content": inst.assistant_content},
        ],
    }
    if inst.label is not None:
        record["label"] = inst.label
    return record, files


class ShardWriter:
    """Single-writer, append-only dataset shard: jsonl + images/ + annotations/."""

    def __init__(self, out_dir: str | Path, shard_index: int = 0, mode: str = "w") -> None:
        self.out_dir = Path(out_dir)
        (self.out_dir / "images").mkdir(parents=True, exist_ok=True)
        (self.out_dir / "annotations").mkdir(parents=True, exist_ok=True)
        self.shard_path = self.out_dir / f"shard-{shard_index}.jsonl"
        self._fh = open(self.shard_path, mode, encoding="utf-8")
        self.n_records = 0

    def write(self, record: dict, files: dict[str, bytes]) -> None:
        self.write_line(json.dumps(record, separators=(",", ":")), files)

    def write_line(self, line: str, files: dict[str, bytes]) -> None:
        for rel, data in files.items():
            (self.out_dir / rel).write_bytes(data)
        self._fh.write(line + "\n")
        self.n_records += 1

    def append(self, inst: "TaskInstance", sample_id: str) -> dict:
        record, files = render_record(inst, sample_id)
        self.write(record, files)
        return record

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "ShardWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def serialize_instance(
    inst: "TaskInstance", out_dir: str | Path, sample_id: str, shard_index: int = 0
) -> dict:
    """Append one instance to a shard, writing its pages and sidecar."""
    with ShardWriter(out_dir, shard_index, mode="a") as writer:
        return writer.append(inst, sample_id)


def load_records(shard_path: str | Path) -> list[dict]:
    records: list[dict] = []
    with open(shard_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def load_document(record: dict, root: str | Path) -> DnaDocument:
    """Rebuild pages and annotations for one record from disk."""
    from .render import RenderConfig  # config is not serialized; use defaults

    root = Path(root)
    sidecar = root / "annotations" / f"{record['id']}.json"
    entries = json.loads(sidecar.read_text(encoding="utf-8"))
    by_page: dict[int, list[NucleotideAnnotation]] = {}
    for e in entries:
        ann = NucleotideAnnotation(
            char=e["char"],
            char_index=e["char_index"],
            page_index=e["page_index"],
            page_char_index=e["page_char_index"],
            page_bbox=PixelBox(*e["page_bbox"]),
        )
        by_page.setdefault(ann.page_index, []).append(ann)
    pages: list[Page] = []
    for k, rel in enumerate(record["conversation"][0]["images"]):
        img = np.asarray(Image.open(root / rel).convert("RGB"), dtype=np.uint8)
        img.setflags(write=False)
        pages.append(Page(image=img, annotations=tuple(by_page.get(k, ()))))
    return DnaDocument(
        pages=tuple(pages),
        total_bases=len(entries),
        config=RenderConfig(),
        source_label=record.get("label", ""),
    )
