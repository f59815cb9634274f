"""Deterministic rasterization of DNA onto fixed-resolution pages.

Glyphs come from an embedded bitmap font with fixed integer metrics, so the
same (sequence, config) pair produces bit-identical pages on every platform.
Each rendered base carries its pixel box plus global / page / page-local
indices; those annotations back the interval-to-region mapping and its
inverse, which everything downstream (task builders, evaluation) relies on.

Layout model: glyphs advance left to right from (margin_x, margin_y); a new
row starts when the next glyph would cross ``page_width - margin_x``; a new
page starts when the next row's glyph bottom would cross
``page_height - margin_y``. A glyph placed with its cursor at ``cursor_x`` on
the row at ``row_y`` occupies the half-open box::

    (cursor_x, row_y + top_offset, cursor_x + advance, row_y + top_offset + height)

and the cursor then moves to the box's right edge, so neighbouring boxes are
adjacent but never overlap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .genome_io import DnaSequence

BASE_FONT_SIZE = 14


class RenderError(ValueError):
    """Problem while rendering or querying a document."""


class ConfigTooSmallError(RenderError):
    """The page cannot fit a single glyph."""


class IndexOutOfRangeError(RenderError):
    """A base index or region fell outside the document."""


class EmptyRegionError(RenderError):
    """A region covered no glyph centers."""


class NonContiguousSelectionError(RenderError):
    """A region covered glyphs that are not contiguous in reading order."""


# Base glyph cells, 9 px wide x 10 px tall, drawn at font_size=14.
# '#' marks ink; the last row and outer columns stay clear so adjacent
# glyphs do not touch.
_GLYPH_ROWS: dict[str, tuple[str, ...]] = {
    "A": (
        "....#....",
        "...#.#...",
        "..#...#..",
        ".#.....#.",
        ".#.....#.",
        ".#######.",
        ".#.....#.",
        ".#.....#.",
        ".#.....#.",
        ".........",
    ),
    "C": (
        "..#####..",
        ".#.....#.",
        ".#.......",
        ".#.......",
        ".#.......",
        ".#.......",
        ".#.......",
        ".#.....#.",
        "..#####..",
        ".........",
    ),
    "G": (
        "..#####..",
        ".#.....#.",
        ".#.......",
        ".#.......",
        ".#..####.",
        ".#.....#.",
        ".#.....#.",
        ".#.....#.",
        "..#####..",
        ".........",
    ),
    "T": (
        ".#######.",
        "....#....",
        "....#....",
        "....#....",
        "....#....",
        "....#....",
        "....#....",
        "....#....",
        "....#....",
        ".........",
    ),
    "N": (
        ".#.....#.",
        ".##....#.",
        ".#.#...#.",
        ".#.#...#.",
        ".#..#..#.",
        ".#...#.#.",
        ".#...#.#.",
        ".#....##.",
        ".#.....#.",
        ".........",
    ),
}

_GLYPH_ORDER = "ACGTN"
_CHAR_SLOT = {c: i for i, c in enumerate(_GLYPH_ORDER)}
_BASE_MASKS = np.stack(
    [
        np.array([[c == "#" for c in row] for row in _GLYPH_ROWS[ch]], dtype=bool)
        for ch in _GLYPH_ORDER
    ]
)  # shape (5, 10, 9)


@lru_cache(maxsize=64)
def _scaled_masks(width: int, height: int) -> np.ndarray:
    """Nearest-neighbour rescale of the base glyph cells to width x height."""
    if (height, width) == _BASE_MASKS.shape[1:]:
        return _BASE_MASKS
    ys = (np.arange(height) * _BASE_MASKS.shape[1]) // height
    xs = (np.arange(width) * _BASE_MASKS.shape[2]) // width
    return np.ascontiguousarray(_BASE_MASKS[:, ys[:, None], xs[None, :]])


def _round_px(value: float) -> int:
    # round-half-up; Python's round() would round .5 to even
    return int(math.floor(value + 0.5))


@dataclass(frozen=True)
class RenderConfig:
    """Page geometry and typography.

    Glyph metrics (`glyph_advance`, `glyph_top_offset`, `glyph_height`) are
    defined at font_size=14 and scale linearly, rounded to whole pixels, for
    other sizes. The row pitch is ``round(font_size * line_spacing)``.
    """

    page_width: int = 640
    page_height: int = 640
    font_size: float = 14
    line_spacing: float = 1.6
    margin_x: int = 20
    margin_y: int = 20
    glyph_advance: int = 9
    glyph_top_offset: int = 3
    glyph_height: int = 10

    @property
    def _scale(self) -> float:
        return self.font_size / BASE_FONT_SIZE

    @property
    def advance_px(self) -> int:
        return _round_px(self.glyph_advance * self._scale)

    @property
    def top_offset_px(self) -> int:
        return _round_px(self.glyph_top_offset * self._scale)

    @property
    def height_px(self) -> int:
        return _round_px(self.glyph_height * self._scale)

    @property
    def row_pitch_px(self) -> int:
        return _round_px(self.font_size * self.line_spacing)

    @property
    def glyphs_per_row(self) -> int:
        if self.advance_px < 1:
            return 0
        return (self.page_width - 2 * self.margin_x) // self.advance_px

    @property
    def rows_per_page(self) -> int:
        usable = (
            self.page_height - 2 * self.margin_y - self.top_offset_px - self.height_px
        )
        if usable < 0 or self.row_pitch_px < 1 or self.height_px < 1:
            return 0
        return usable // self.row_pitch_px + 1


@dataclass(frozen=True, slots=True)
class PixelBox:
    """Half-open pixel rectangle [x1, x2) x [y1, y2)."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self) -> None:
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box ({self.x1},{self.y1},{self.x2},{self.y2})")

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    @property
    def area(self) -> int:
        return self.width * self.height

    def union(self, other: "PixelBox") -> "PixelBox":
        return PixelBox(
            min(self.x1, other.x1),
            min(self.y1, other.y1),
            max(self.x2, other.x2),
            max(self.y2, other.y2),
        )

    def contains_point(self, x: float, y: float) -> bool:
        return self.x1 <= x < self.x2 and self.y1 <= y < self.y2

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True, slots=True)
class NucleotideAnnotation:
    """One rendered base: its character, indices, and pixel box."""

    char: str
    char_index: int
    page_index: int
    page_char_index: int
    page_bbox: PixelBox


@dataclass(frozen=True, slots=True)
class RegionRef:
    """A bounding box on one page: (img_id, x1, y1, x2, y2)."""

    img_id: int
    box: PixelBox


@dataclass(frozen=True, eq=False)
class Page:
    """One rendered page: RGB pixels plus its ordered glyph annotations."""

    image: np.ndarray
    annotations: tuple[NucleotideAnnotation, ...]


@dataclass(frozen=True, slots=True)
class RowSpan:
    """One rendered text row: consecutive glyphs sharing a page and baseline."""

    page_index: int
    glyphs: tuple[NucleotideAnnotation, ...]

    @property
    def text(self) -> str:
        return "".join(g.char for g in self.glyphs)

    @property
    def box(self) -> PixelBox:
        first, last = self.glyphs[0].page_bbox, self.glyphs[-1].page_bbox
        return PixelBox(first.x1, first.y1, last.x2, last.y2)

    def sub_box(self, start: int, stop: int) -> PixelBox:
        """Union box of glyphs[start:stop] within this row."""
        first, last = self.glyphs[start].page_bbox, self.glyphs[stop - 1].page_bbox
        return PixelBox(first.x1, first.y1, last.x2, last.y2)


@dataclass(eq=False)
class DnaDocument:
    """A rendered multi-page document with per-base annotations."""

    pages: tuple[Page, ...]
    total_bases: int
    config: RenderConfig
    source_label: str = ""
    _text: str | None = field(default=None, init=False, repr=False)
    _index: dict[int, NucleotideAnnotation] | None = field(
        default=None, init=False, repr=False
    )
    _rows: tuple[RowSpan, ...] | None = field(default=None, init=False, repr=False)

    def iter_annotations(self) -> Iterable[NucleotideAnnotation]:
        for page in self.pages:
            yield from page.annotations

    @property
    def text(self) -> str:
        if self._text is None:
            self._text = "".join(a.char for a in self.iter_annotations())
        return self._text

    def annotation_at(self, char_index: int) -> NucleotideAnnotation:
        if self._index is None:
            self._index = {a.char_index: a for a in self.iter_annotations()}
        try:
            return self._index[char_index]
        except KeyError:
            raise IndexOutOfRangeError(f"no base with global index {char_index}") from None

    def rows(self) -> tuple[RowSpan, ...]:
        if self._rows is None:
            rows: list[RowSpan] = []
            run: list[NucleotideAnnotation] = []
            key: tuple[int, int] | None = None
            for ann in self.iter_annotations():
                k = (ann.page_index, ann.page_bbox.y1)
                if k != key and run:
                    rows.append(RowSpan(run[0].page_index, tuple(run)))
                    run = []
                key = k
                run.append(ann)
            if run:
                rows.append(RowSpan(run[0].page_index, tuple(run)))
            self._rows = tuple(rows)
        return self._rows


def page_capacity(config: RenderConfig | None = None) -> int:
    """Glyphs per fully packed page under `config`."""
    cfg = config or RenderConfig()
    cols, rows = cfg.glyphs_per_row, cfg.rows_per_page
    if cols < 1 or rows < 1:
        raise ConfigTooSmallError(
            f"page {cfg.page_width}x{cfg.page_height} cannot fit one "
            f"{cfg.advance_px}x{cfg.height_px} glyph inside its margins"
        )
    return cols * rows


def _render_page(
    chunk: str, global_start: int, page_index: int, cfg: RenderConfig, masks: np.ndarray
) -> Page:
    img = np.full((cfg.page_height, cfg.page_width, 3), 255, dtype=np.uint8)
    cols = cfg.glyphs_per_row
    adv, top, gh, pitch = cfg.advance_px, cfg.top_offset_px, cfg.height_px, cfg.row_pitch_px
    annotations: list[NucleotideAnnotation] = []

    slots = np.fromiter((_CHAR_SLOT[c] for c in chunk), dtype=np.intp, count=len(chunk))
    for r in range(-(-len(chunk) // cols)):
        row_slots = slots[r * cols : (r + 1) * cols]
        n = len(row_slots)
        y1 = cfg.margin_y + r * pitch + top
        # blit the whole row at once: (n, gh, adv) -> (gh, n*adv)
        row_mask = masks[row_slots].transpose(1, 0, 2).reshape(gh, n * adv)
        window = img[y1 : y1 + gh, cfg.margin_x : cfg.margin_x + n * adv]
        window[row_mask] = 0
        for c in range(n):
            x1 = cfg.margin_x + c * adv
            k = r * cols + c
            annotations.append(
                NucleotideAnnotation(
                    char=chunk[k],
                    char_index=global_start + k,
                    page_index=page_index,
                    page_char_index=k,
                    page_bbox=PixelBox(x1, y1, x1 + adv, y1 + gh),
                )
            )
    img.setflags(write=False)
    return Page(image=img, annotations=tuple(annotations))


def render_document(seq: DnaSequence, config: RenderConfig | None = None) -> DnaDocument:
    """Rasterize `seq` into pages with per-base boxes and indices."""
    cfg = config or RenderConfig()
    if seq.length == 0:
        raise ValueError("cannot render an empty sequence")
    capacity = page_capacity(cfg)
    masks = _scaled_masks(cfg.advance_px, cfg.height_px)

    pages: list[Page] = []
    pos = 0
    while pos < seq.length:
        chunk = seq.bases[pos : pos + capacity]
        pages.append(_render_page(chunk, pos, len(pages), cfg, masks))
        pos += len(chunk)
    return DnaDocument(
        pages=tuple(pages),
        total_bases=seq.length,
        config=cfg,
        source_label=seq.source_label,
    )


def _run_region(run: Sequence[NucleotideAnnotation]) -> RegionRef:
    box = PixelBox(
        min(a.page_bbox.x1 for a in run),
        min(a.page_bbox.y1 for a in run),
        max(a.page_bbox.x2 for a in run),
        max(a.page_bbox.y2 for a in run),
    )
    return RegionRef(img_id=run[0].page_index, box=box)


def interval_to_regions(doc: DnaDocument, i: int, j: int) -> list[RegionRef]:
    """Map the base interval [i, j) to one region per rendered row.

    Each region is the union box of a maximal run of interval bases sharing
    a row, in reading order; an interval within a single row yields exactly
    one region.
    """
    if not 0 <= i < j:
        raise IndexOutOfRangeError(f"invalid interval [{i}, {j})")
    regions: list[RegionRef] = []
    run: list[NucleotideAnnotation] = []
    for g in range(i, j):
        ann = doc.annotation_at(g)
        if run and (
            ann.page_index != run[0].page_index
            or ann.page_bbox.y1 != run[0].page_bbox.y1
        ):
            regions.append(_run_region(run))
            run = []
        run.append(ann)
    regions.append(_run_region(run))
    return regions


def _check_region(doc: DnaDocument, region: RegionRef) -> None:
    if not 0 <= region.img_id < len(doc.pages):
        raise IndexOutOfRangeError(f"img_id {region.img_id} out of range")
    cfg = doc.config
    b = region.box
    if b.x1 < 0 or b.y1 < 0 or b.x2 > cfg.page_width or b.y2 > cfg.page_height:
        raise IndexOutOfRangeError(f"region {b.as_tuple()} outside page bounds")


def regions_to_interval(doc: DnaDocument, region: RegionRef) -> tuple[int, int]:
    """Inverse mapping: the half-open global-index interval of all glyphs
    whose box center lies inside `region`."""
    _check_region(doc, region)
    page = doc.pages[region.img_id]
    hits = [
        a
        for a in page.annotations
        if region.box.contains_point(
            (a.page_bbox.x1 + a.page_bbox.x2) / 2,
            (a.page_bbox.y1 + a.page_bbox.y2) / 2,
        )
    ]
    if not hits:
        raise EmptyRegionError(f"region {region.box.as_tuple()} covers no glyphs")
    indices = [a.char_index for a in hits]
    for prev, cur in zip(indices, indices[1:]):
        if cur != prev + 1:
            raise NonContiguousSelectionError(
                f"region covers non-contiguous indices {indices}"
            )
    return indices[0], indices[-1] + 1


def mask_regions(doc: DnaDocument, regions: Sequence[RegionRef]) -> DnaDocument:
    """New document whose pixels inside each region are white.

    Annotations are kept unchanged (supervision retains the original
    content); the input document is not modified.
    """
    by_page: dict[int, list[RegionRef]] = {}
    for region in regions:
        _check_region(doc, region)
        by_page.setdefault(region.img_id, []).append(region)

    new_pages: list[Page] = []
    for idx, page in enumerate(doc.pages):
        if idx not in by_page:
            new_pages.append(page)
            continue
        img = page.image.copy()
        for region in by_page[idx]:
            b = region.box
            img[b.y1 : b.y2, b.x1 : b.x2] = 255
        img.setflags(write=False)
        new_pages.append(Page(image=img, annotations=page.annotations))
    return DnaDocument(
        pages=tuple(new_pages),
        total_bases=doc.total_bases,
        config=doc.config,
        source_label=doc.source_label,
    )


def reindex_pages(doc: DnaDocument, keep: Sequence[int]) -> DnaDocument:
    """Document holding only `keep` pages, re-numbered contiguously from 0.

    Annotation `page_index` fields are rewritten to the new positions;
    global and page-local indices keep their original values.
    """
    new_pages: list[Page] = []
    for new_idx, old_idx in enumerate(keep):
        page = doc.pages[old_idx]
        if new_idx == old_idx:
            new_pages.append(page)
        else:
            anns = tuple(replace(a, page_index=new_idx) for a in page.annotations)
            new_pages.append(Page(image=page.image, annotations=anns))
    return DnaDocument(
        pages=tuple(new_pages),
        total_bases=sum(len(p.annotations) for p in new_pages),
        config=doc.config,
        source_label=doc.source_label,
    )
