"""FASTA ingestion and fixed-length window extraction."""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable

ALPHABET = "ACGTN"

# Ambiguity codes collapse to N: the rendered alphabet is fixed to A/C/G/T/N
# and N already denotes uncertainty.
AMBIGUITY_CODES = "RYSWKMBDHV"
_ALPHABET_SET = frozenset(ALPHABET)
_LEGAL_SET = frozenset(ALPHABET + AMBIGUITY_CODES)
_TO_N = str.maketrans(dict.fromkeys(AMBIGUITY_CODES, "N"))

# Named window profiles: (window, stride). "rice" keeps a 1920 bp overlap
# between consecutive 2048 bp windows; "hg38" tiles without overlap.
WINDOW_PRESETS: dict[str, tuple[int, int]] = {
    "hg38": (2048, 2048),
    "rice": (2048, 128),
}


class FastaError(ValueError):
    """Problem with FASTA input."""


class EmptyInputError(FastaError):
    """Input contained no FASTA records."""


class IllegalCharacterError(FastaError):
    """A sequence line contained a non-IUPAC, non-whitespace character."""

    def __init__(self, record: str, offset: int, char: str) -> None:
        super().__init__(
            f"illegal character {char!r} in record {record!r} at base offset {offset}"
        )
        self.record = record
        self.offset = offset
        self.char = char


@dataclass(frozen=True, slots=True)
class DnaSequence:
    """A validated DNA string over {A,C,G,T,N} plus its record label."""

    bases: str
    source_label: str = ""

    def __post_init__(self) -> None:
        extra = frozenset(self.bases) - _ALPHABET_SET
        if extra:
            raise ValueError(f"bases outside {{A,C,G,T,N}}: {sorted(extra)}")

    @property
    def length(self) -> int:
        return len(self.bases)


@dataclass(frozen=True, slots=True)
class GenomeWindow:
    """A fixed-length slice of a source record."""

    sequence: DnaSequence
    start_offset: int
    window_length: int
    source_label: str

    def __post_init__(self) -> None:
        if self.window_length != self.sequence.length:
            raise ValueError("window_length must equal sequence length")
        if self.start_offset < 0:
            raise ValueError("start_offset must be >= 0")


def _as_lines(source: str | bytes | IO | Iterable[str]) -> Iterable[str]:
    if isinstance(source, bytes):
        return source.decode("latin-1").splitlines()
    if isinstance(source, str):
        return source.splitlines()
    if hasattr(source, "read"):
        data = source.read()
        if isinstance(data, bytes):
            data = data.decode("latin-1")
        return data.splitlines()
    return source


def parse_fasta(source: str | bytes | IO | Iterable[str]) -> list[DnaSequence]:
    """Parse FASTA text into validated records.

    Lowercase letters are uppercased, IUPAC ambiguity codes other than
    A/C/G/T/N collapse to N, and whitespace inside sequence lines is
    dropped. The record id is the header token up to the first whitespace.
    """
    records: list[DnaSequence] = []
    label: str | None = None
    parts: list[str] = []
    offset = 0

    def flush() -> None:
        if label is not None:
            records.append(DnaSequence("".join(parts), label))

    for raw in _as_lines(source):
        line = raw.strip()
        if not line:
            continue
        if line.startswith(">"):
            flush()
            header = line[1:].strip()
            label = header.split()[0] if header else ""
            parts = []
            offset = 0
            continue
        if label is None:
            raise FastaError("sequence data before the first '>' header")
        chunk = "".join(line.split()).upper()
        bad = frozenset(chunk) - _LEGAL_SET
        if bad:
            pos = next(i for i, c in enumerate(chunk) if c in bad)
            raise IllegalCharacterError(label, offset + pos, chunk[pos])
        offset += len(chunk)
        parts.append(chunk.translate(_TO_N))

    flush()
    if not records:
        raise EmptyInputError("no FASTA records found")
    return records


def read_fasta(path: str | Path) -> list[DnaSequence]:
    """Parse a FASTA file; '-' reads standard input."""
    if str(path) == "-":
        return parse_fasta(sys.stdin.read())
    with open(path, "rb") as fh:
        return parse_fasta(fh.read())


def extract_windows(
    seq: DnaSequence, window: int = 2048, stride: int = 2048
) -> list[GenomeWindow]:
    """Fixed-length windows at offsets 0, stride, 2*stride, ...

    A trailing partial window is dropped; a sequence shorter than `window`
    yields an empty list.
    """
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    out: list[GenomeWindow] = []
    for start in range(0, seq.length - window + 1, stride):
        out.append(
            GenomeWindow(
                sequence=DnaSequence(seq.bases[start : start + window], seq.source_label),
                start_offset=start,
                window_length=window,
                source_label=seq.source_label,
            )
        )
    return out
