"""Shared fixtures and independent oracles used across the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from dnadoc.genome_io import DnaSequence
from dnadoc.render import RenderConfig, render_document

_LETTERS = {alpha: np.array(list(alpha)) for alpha in ("ACGTN", "ACGT", "ACG", "AC")}


def random_dna(rng: np.random.Generator, n: int, alphabet: str = "ACGTN") -> str:
    letters = _LETTERS.get(alphabet, np.array(list(alphabet)))
    return "".join(rng.choice(letters, size=n))


def geometry_oracle(cfg: RenderConfig) -> tuple[int, int]:
    """Count columns and rows by stepping a cursor, typewriter style.

    Independent of the arithmetic in the renderer: a glyph fits while its
    right edge stays inside page_width - margin_x, a row fits while its
    glyph bottom stays inside page_height - margin_y.
    """
    cols = 0
    x = cfg.margin_x
    while x + cfg.advance_px <= cfg.page_width - cfg.margin_x:
        cols += 1
        x += cfg.advance_px
    rows = 0
    y = cfg.margin_y
    while y + cfg.top_offset_px + cfg.height_px <= cfg.page_height - cfg.margin_y:
        rows += 1
        y += cfg.row_pitch_px
    return cols, rows


def oracle_edit_distance(a: str, b: str) -> int:
    """Full-matrix Levenshtein DP, textbook transcription."""
    m, n = len(a), len(b)
    d = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m + 1):
        d[i][0] = i
    for j in range(n + 1):
        d[0][j] = j
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + cost)
    return d[m][n]


def naive_occurrences(text: str, query: str, allow_overlap: bool) -> list[int]:
    """Sliding-window scan with the stride rule applied literally."""
    positions: list[int] = []
    i = 0
    while i <= len(text) - len(query):
        if text[i : i + len(query)] == query:
            positions.append(i)
            i += 1 if allow_overlap else len(query)
        else:
            i += 1
    return positions


@pytest.fixture(scope="session")
def small_doc():
    """Two-page document, 2048 bases, default config."""
    rng = np.random.default_rng(1234)
    return render_document(DnaSequence(random_dna(rng, 2048), "chr1"))


@pytest.fixture(scope="session")
def one_row_doc():
    return render_document(DnaSequence("ACGT", "chr2"))
