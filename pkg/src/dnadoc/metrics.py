"""Strict ordered grounding metrics, transcription scoring, token arithmetic.

All grounded tasks are scored under ordered alignment: the i-th predicted
item is compared with the i-th ground-truth item. Per sample, over the N
ground-truth items:

    LCM      = [n_pred == N]
    Text_i   = [pred_seq_i == gt_seq_i]            (missing prediction -> 0)
    Det_i    = [every box pair has IoU >= tau]     (missing/miscounted -> 0)
    Joint_i  = Text_i * Det_i
    Strict   = LCM * prod_i Joint_i
    CER_i    = EditDistance(gt_i, pred_i) / |gt_i|
    linf     = mean over pairs where both sides carry a box of the max
               absolute coordinate deviation of the first boxes

Rates are means over N; corpus results are means of per-sample values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .render import PixelBox
from .wire import Box5, GroundedItem


class MetricError(ValueError):
    """Problem while computing a metric."""


class DegenerateBoxError(MetricError):
    """A box had zero or negative area."""


class EmptyGroundTruthError(MetricError):
    """Ground truth was empty where content is required."""


class LengthMismatchError(MetricError):
    """Paired lists differ in length."""


class UnsupportedResolutionError(MetricError):
    """Resolution does not divide into whole visual tokens."""


@dataclass(frozen=True)
class MatchCriteria:
    """Detection match criteria; the strict default is IoU >= 0.99."""

    iou_threshold: float = 0.99

    def __post_init__(self) -> None:
        if not 0 < self.iou_threshold <= 1:
            raise ValueError("iou_threshold must be in (0, 1]")


@dataclass
class OrderedEvalReport:
    """Mean metric vector for one sample or an aggregated corpus."""

    lcm: float
    text_em: float
    text_cer: float
    det_acc: float
    det_iou_avg: float
    joint: float
    strict: float
    linf_err: float
    n_samples: int = 1

    def as_dict(self) -> dict:
        return {
            "lcm": self.lcm,
            "text_em": self.text_em,
            "text_cer": self.text_cer,
            "det_acc": self.det_acc,
            "det_iou_avg": self.det_iou_avg,
            "joint": self.joint,
            "strict": self.strict,
            "linf_err": self.linf_err,
            "n_samples": self.n_samples,
        }


@dataclass
class PrefixReport:
    """Prefix transcription protocol: EM and CS per ground-truth prefix ratio.

    CS is a toolkit definition, 100*(1 - normalized edit distance); it is
    not pinned by the evaluation protocol this report mirrors.
    """

    ratios: tuple[float, ...]
    em_rates: tuple[float, ...]
    cs_rates: tuple[float, ...]
    n_samples: int = 1

    def as_dict(self) -> dict:
        return {
            "ratios": list(self.ratios),
            "em_rates": list(self.em_rates),
            "cs_rates": list(self.cs_rates),
            "n_samples": self.n_samples,
            "cs_definition": "toolkit: 100*(1 - edit_distance/prefix_len)",
        }


PREFIX_STEPS = tuple(range(1, 11))  # tenths: 10% .. 100%


@dataclass(frozen=True)
class TokenBudget:
    """Visual token arithmetic for one rendering resolution."""

    resolution: int
    pages: int
    bases: int
    tokens_per_page: int
    compression: float
    patch: int = 16
    conv_ratio: int = 16


# ---------------------------------------------------------------------------
# edit distance


def _strip_common(a: str, b: str) -> tuple[str, str]:
    lo = 0
    hi_a, hi_b = len(a), len(b)
    while lo < hi_a and lo < hi_b and a[lo] == b[lo]:
        lo += 1
    while hi_a > lo and hi_b > lo and a[hi_a - 1] == b[hi_b - 1]:
        hi_a -= 1
        hi_b -= 1
    return a[lo:hi_a], b[lo:hi_b]


def _edit_distance_rows(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    cur = [0] * (len(b) + 1)
    for i, ca in enumerate(a, start=1):
        cur[0] = i
        for j, cb in enumerate(b, start=1):
            cur[j] = min(
                prev[j] + 1,
                cur[j - 1] + 1,
                prev[j - 1] + (ca != cb),
            )
        prev, cur = cur, prev
    return prev[len(b)]


def _edit_distance_vectorized(a: str, b: str) -> int:
    # row-wise DP; insertion chains resolved with a prefix-min over t[k]-k
    b_arr = np.frombuffer(b.encode("utf-32-le"), dtype=np.uint32)
    n = len(b)
    idx = np.arange(n + 1, dtype=np.int64)
    prev = idx.copy()
    t = np.empty(n + 1, dtype=np.int64)
    for i, ca in enumerate(a, start=1):
        code = ord(ca)
        t[0] = i
        np.minimum(prev[1:] + 1, prev[:-1] + (b_arr != code), out=t[1:])
        prev = np.minimum.accumulate(t - idx) + idx
        t = np.empty(n + 1, dtype=np.int64)
    return int(prev[n])


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance (insertions, deletions, substitutions)."""
    if a == b:
        return 0
    a, b = _strip_common(a, b)
    if not a:
        return len(b)
    if not b:
        return len(a)
    if len(a) * len(b) >= 4096:
        return _edit_distance_vectorized(a, b)
    return _edit_distance_rows(a, b)


def text_cer(gt: str, pred: str) -> float:
    """Character error rate: edit distance normalized by ground-truth length."""
    if not gt:
        raise EmptyGroundTruthError("ground-truth string is empty")
    return edit_distance(gt, pred) / len(gt)


# ---------------------------------------------------------------------------
# boxes


def _area(x1: int, y1: int, x2: int, y2: int) -> int:
    return (x2 - x1) * (y2 - y1)


def iou(a: PixelBox | Sequence[int], b: PixelBox | Sequence[int]) -> float:
    """Intersection over union of two half-open pixel boxes."""
    ax1, ay1, ax2, ay2 = a.as_tuple() if isinstance(a, PixelBox) else tuple(a)
    bx1, by1, bx2, by2 = b.as_tuple() if isinstance(b, PixelBox) else tuple(b)
    area_a = _area(ax1, ay1, ax2, ay2)
    area_b = _area(bx1, by1, bx2, by2)
    if area_a <= 0 or area_b <= 0:
        raise DegenerateBoxError("boxes must have positive area")
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    inter = max(iw, 0) * max(ih, 0)
    return inter / (area_a + area_b - inter)


def region_iou(a: Box5, b: Box5) -> float:
    """IoU of two (img_id, x1, y1, x2, y2) boxes; 0 across pages."""
    if a[0] != b[0]:
        return 0.0
    return iou(a[1:], b[1:])


def _pred_box_iou(gt_box: Box5, pred_box: Box5) -> float:
    # predictions may be arbitrary model output: absorb degenerate boxes as 0
    if _area(*pred_box[1:]) <= 0:
        return 0.0
    return region_iou(gt_box, pred_box)


def _item_det(gt: GroundedItem, pred: GroundedItem | None, tau: float) -> float:
    """Indicator: every declared box matches its positional partner at tau."""
    if pred is None:
        return 0.0
    if len(gt.boxes) != len(pred.boxes):
        return 0.0
    return float(all(_pred_box_iou(g, p) >= tau for g, p in zip(gt.boxes, pred.boxes)))


def _item_iou(gt: GroundedItem, pred: GroundedItem | None) -> float:
    """Continuous overlap: positional IoUs averaged over max(box counts)."""
    if pred is None:
        return 0.0
    if not gt.boxes and not pred.boxes:
        return 1.0
    denom = max(len(gt.boxes), len(pred.boxes))
    if denom == 0:
        return 1.0
    total = sum(_pred_box_iou(g, p) for g, p in zip(gt.boxes, pred.boxes))
    return total / denom


# ---------------------------------------------------------------------------
# ordered evaluation


def evaluate_ordered(
    gt: Sequence[GroundedItem],
    pred: Sequence[GroundedItem],
    crit: MatchCriteria = MatchCriteria(),
) -> OrderedEvalReport:
    """Score one sample under strict ordered alignment (see module docs)."""
    if not gt:
        raise EmptyGroundTruthError("ground truth has no items")
    n = len(gt)
    lcm = 1.0 if len(pred) == n else 0.0

    text_terms: list[float] = []
    cer_terms: list[float] = []
    det_terms: list[float] = []
    iou_terms: list[float] = []
    joint_terms: list[float] = []
    linf_terms: list[float] = []

    for i, gt_item in enumerate(gt):
        pred_item = pred[i] if i < len(pred) else None
        text_i = 1.0 if pred_item is not None and pred_item.sequence == gt_item.sequence else 0.0
        cer_i = 1.0 if pred_item is None else text_cer(gt_item.sequence, pred_item.sequence)
        det_i = _item_det(gt_item, pred_item, crit.iou_threshold)
        text_terms.append(text_i)
        cer_terms.append(cer_i)
        det_terms.append(det_i)
        iou_terms.append(_item_iou(gt_item, pred_item))
        joint_terms.append(text_i * det_i)
        if pred_item is not None and gt_item.boxes and pred_item.boxes:
            g, p = gt_item.boxes[0], pred_item.boxes[0]
            linf_terms.append(float(max(abs(a - b) for a, b in zip(g[1:], p[1:]))))

    strict = lcm
    for j in joint_terms:
        strict *= j
    return OrderedEvalReport(
        lcm=lcm,
        text_em=sum(text_terms) / n,
        text_cer=sum(cer_terms) / n,
        det_acc=sum(det_terms) / n,
        det_iou_avg=sum(iou_terms) / n,
        joint=sum(joint_terms) / n,
        strict=strict,
        linf_err=sum(linf_terms) / len(linf_terms) if linf_terms else 0.0,
        n_samples=1,
    )


def mean_reports(reports: Sequence[OrderedEvalReport]) -> OrderedEvalReport:
    """Fixed-order mean of per-sample reports."""
    if not reports:
        raise EmptyGroundTruthError("no reports to aggregate")
    n = sum(r.n_samples for r in reports)

    def mean(attr: str) -> float:
        return sum(getattr(r, attr) * r.n_samples for r in reports) / n

    return OrderedEvalReport(
        lcm=mean("lcm"),
        text_em=mean("text_em"),
        text_cer=mean("text_cer"),
        det_acc=mean("det_acc"),
        det_iou_avg=mean("det_iou_avg"),
        joint=mean("joint"),
        strict=mean("strict"),
        linf_err=mean("linf_err"),
        n_samples=n,
    )


DEFAULT_T5_THRESHOLDS = (0.50, 0.90, 0.95, 0.99)


def evaluate_t5(
    gt: Sequence[GroundedItem],
    pred: Sequence[GroundedItem],
    thresholds: Sequence[float] = DEFAULT_T5_THRESHOLDS,
) -> dict[float, OrderedEvalReport]:
    """Ordered evaluation swept over IoU thresholds; text metrics are
    threshold-invariant by construction."""
    return {
        tau: evaluate_ordered(gt, pred, MatchCriteria(iou_threshold=tau))
        for tau in thresholds
    }


# ---------------------------------------------------------------------------
# prefix transcription protocol


def evaluate_prefix_transcription(gt: str, pred: str) -> PrefixReport:
    """EM and CS against ground-truth prefixes at ratios 10%..100%.

    For ratio k/10 the prefix length is ceil(k*|gt|/10); EM is exact prefix
    match (as a 0/100 rate) and CS = 100*(1 - ED(gt_prefix, pred_prefix)/L).
    """
    if not gt:
        raise EmptyGroundTruthError("ground-truth string is empty")
    em_rates: list[float] = []
    cs_rates: list[float] = []
    for k in PREFIX_STEPS:
        length = -(-k * len(gt) // 10)  # ceil without float error
        g = gt[:length]
        p = pred[:length]
        em_rates.append(100.0 if p == g else 0.0)
        denom = max(length, len(p))
        cs_rates.append(100.0 * (1.0 - edit_distance(g, p) / denom))
    return PrefixReport(
        ratios=tuple(k / 10 for k in PREFIX_STEPS),
        em_rates=tuple(em_rates),
        cs_rates=tuple(cs_rates),
        n_samples=1,
    )


def mean_prefix_reports(reports: Sequence[PrefixReport]) -> PrefixReport:
    if not reports:
        raise EmptyGroundTruthError("no reports to aggregate")
    n = sum(r.n_samples for r in reports)
    em = tuple(
        sum(r.em_rates[i] * r.n_samples for r in reports) / n
        for i in range(len(PREFIX_STEPS))
    )
    cs = tuple(
        sum(r.cs_rates[i] * r.n_samples for r in reports) / n
        for i in range(len(PREFIX_STEPS))
    )
    return PrefixReport(
        ratios=tuple(k / 10 for k in PREFIX_STEPS), em_rates=em, cs_rates=cs, n_samples=n
    )


# ---------------------------------------------------------------------------
# classification and token budget


def evaluate_t6(gt_labels: Sequence[str], pred_labels: Sequence[str | None]) -> float:
    """Exact-label accuracy; unparseable predictions (None) count as wrong."""
    if len(gt_labels) != len(pred_labels):
        raise LengthMismatchError(
            f"{len(gt_labels)} ground-truth labels vs {len(pred_labels)} predictions"
        )
    if not gt_labels:
        raise EmptyGroundTruthError("no labels to evaluate")
    hits = sum(
        1
        for g, p in zip(gt_labels, pred_labels)
        if p is not None and p.strip() == g
    )
    return hits / len(gt_labels)


def token_budget(resolution: int, pages: int, bases: int) -> TokenBudget:
    """Visual token count and compression at a rendering resolution.

    A page of `resolution` px splits into 16x16 patches ((res/16)^2 tokens)
    and the convolutional stage downsamples by 16, so tokens per page is
    (res/16)^2 / 16; compression is bases per effective token, N/(P*T).
    """
    if resolution < 16 or resolution % 16 != 0:
        raise UnsupportedResolutionError(f"resolution {resolution} is not a multiple of 16")
    t0 = (resolution // 16) ** 2
    if t0 % 16 != 0:
        raise UnsupportedResolutionError(
            f"resolution {resolution}: {t0} patch tokens do not downsample by 16"
        )
    if pages < 1 or bases < 0:
        raise ValueError("pages must be >= 1 and bases >= 0")
    tokens = t0 // 16
    return TokenBudget(
        resolution=resolution,
        pages=pages,
        bases=bases,
        tokens_per_page=tokens,
        compression=bases / (pages * tokens),
    )
