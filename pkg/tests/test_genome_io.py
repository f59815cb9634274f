from __future__ import annotations

import numpy as np
import pytest

from dnadoc.genome_io import (
    ALPHABET,
    AMBIGUITY_CODES,
    DnaSequence,
    EmptyInputError,
    FastaError,
    GenomeWindow,
    IllegalCharacterError,
    extract_windows,
    parse_fasta,
)

from conftest import random_dna


class TestParseFasta:
    def test_uppercases_single_record(self):
        records = parse_fasta(">x\nacgt\n")
        assert len(records) == 1
        assert records[0].bases == "ACGT"
        assert records[0].source_label == "x"

    def test_multi_record(self):
        records = parse_fasta(">x\nACGTN\n>y\ntttt\n")
        assert [r.bases for r in records] == ["ACGTN", "TTTT"]
        assert [r.source_label for r in records] == ["x", "y"]

    def test_iupac_codes_collapse_to_n(self):
        # oracle: apply the declared mapping table character by character
        mapping = dict.fromkeys(AMBIGUITY_CODES, "N")
        expected = "".join(mapping.get(c, c) for c in "acgRYn".upper())
        assert expected == "ACGNNN"
        assert parse_fasta(">x\nacgRYn\n")[0].bases == expected

    def test_all_ambiguity_codes_map(self):
        bases = parse_fasta(f">x\n{AMBIGUITY_CODES}\n")[0].bases
        assert bases == "N" * len(AMBIGUITY_CODES)

    def test_whitespace_and_blank_lines_dropped(self):
        records = parse_fasta(">x\nAC GT\n\n  ttaa  \n")
        assert records[0].bases == "ACGTTTAA"

    def test_label_is_header_token_up_to_whitespace(self):
        records = parse_fasta(">chr1 Homo sapiens chromosome 1\nACGT\n")
        assert records[0].source_label == "chr1"

    def test_multiline_record_concatenated(self):
        records = parse_fasta(">x\nACGT\nTTTT\nGGGG\n")
        assert records[0].bases == "ACGTTTTTGGGG"

    def test_empty_input(self):
        with pytest.raises(EmptyInputError):
            parse_fasta("")
        with pytest.raises(EmptyInputError):
            parse_fasta("\n\n  \n")

    def test_illegal_character_reports_record_and_offset(self):
        with pytest.raises(IllegalCharacterError) as excinfo:
            parse_fasta(">q\nACGT\nAC!T\n")
        assert excinfo.value.record == "q"
        assert excinfo.value.offset == 6
        assert excinfo.value.char == "!"

    def test_sequence_before_header_rejected(self):
        with pytest.raises(FastaError):
            parse_fasta("ACGT\n>x\nACGT\n")

    def test_accepts_bytes_and_file_objects(self, tmp_path):
        assert parse_fasta(b">x\nacgt\n")[0].bases == "ACGT"
        path = tmp_path / "a.fa"
        path.write_text(">x\nacgt\n")
        with open(path) as fh:
            assert parse_fasta(fh)[0].bases == "ACGT"

    def test_output_alphabet_property(self):
        # any legal input, however scrambled, parses to {A,C,G,T,N} only
        rng = np.random.default_rng(7)
        legal = ALPHABET + AMBIGUITY_CODES + (ALPHABET + AMBIGUITY_CODES).lower()
        for _ in range(50):
            body = "".join(rng.choice(list(legal), size=200))
            lines = [body[i : i + 60] for i in range(0, len(body), 60)]
            records = parse_fasta(">r\n" + "\n".join(lines) + "\n")
            assert set(records[0].bases) <= set(ALPHABET)
            assert records[0].length == 200


class TestDnaSequence:
    def test_rejects_lowercase_and_junk(self):
        with pytest.raises(ValueError):
            DnaSequence("acgt")
        with pytest.raises(ValueError):
            DnaSequence("ACGX")

    def test_length(self):
        assert DnaSequence("ACGTN").length == 5


def brute_force_offsets(length: int, window: int, stride: int) -> list[int]:
    offsets = []
    o = 0
    while o + window <= length:
        offsets.append(o)
        o += stride
    return offsets


class TestExtractWindows:
    def test_exact_tiling(self):
        seq = DnaSequence("A" * 4096, "chr1")
        wins = extract_windows(seq, 2048, 2048)
        assert [w.start_offset for w in wins] == [0, 2048]

    def test_rice_overlap_window_count(self):
        # oracle: enumerate offsets directly
        seq = DnaSequence("A" * 4096, "chr1")
        wins = extract_windows(seq, 2048, 128)
        expected = brute_force_offsets(4096, 2048, 128)
        assert len(expected) == 17
        assert expected[-1] == 2048
        assert [w.start_offset for w in wins] == expected

    def test_too_short_returns_empty(self):
        seq = DnaSequence("A" * 1000)
        assert extract_windows(seq, 2048, 1) == []
        assert extract_windows(seq, 2048, 9999) == []

    def test_window_content_matches_slice(self):
        seq = DnaSequence("ACGTN" * 100, "rec")
        for win in extract_windows(seq, 128, 64):
            assert win.sequence.bases == seq.bases[win.start_offset : win.start_offset + 128]
            assert win.source_label == "rec"
            assert win.window_length == win.sequence.length == 128

    def test_invalid_parameters(self):
        seq = DnaSequence("ACGT")
        with pytest.raises(ValueError):
            extract_windows(seq, 0, 1)
        with pytest.raises(ValueError):
            extract_windows(seq, 1, 0)

    def test_count_and_progression_fuzz(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            length = int(rng.integers(0, 5000))
            window = int(rng.integers(1, 3000))
            stride = int(rng.integers(1, 500))
            seq = DnaSequence(random_dna(rng, length))
            wins = extract_windows(seq, window, stride)
            offsets = [w.start_offset for w in wins]
            assert offsets == brute_force_offsets(length, window, stride)
            if length >= window:
                assert len(wins) == (length - window) // stride + 1
            else:
                assert wins == []
            for a, b in zip(offsets, offsets[1:]):
                assert b - a == stride

    def test_window_invariants(self):
        with pytest.raises(ValueError):
            GenomeWindow(DnaSequence("ACGT"), 0, 5, "x")
        with pytest.raises(ValueError):
            GenomeWindow(DnaSequence("ACGT"), -1, 4, "x")
