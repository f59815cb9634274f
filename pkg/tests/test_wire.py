from __future__ import annotations

import json

import numpy as np
import pytest

from dnadoc.genome_io import DnaSequence
from dnadoc.render import render_document
from dnadoc.rng import substream
from dnadoc.tasks import PromptVariant, SAMPLER_PRESETS, build_instance
from dnadoc.wire import (
    CHROMOSOME_LABELS,
    EmptyBoxListError,
    GroundedItem,
    IllegalSequenceCharError,
    MalformedLineError,
    ShardWriter,
    TaskId,
    UnknownLabelError,
    grounded_line,
    load_document,
    load_records,
    parse_grounded_line,
    parse_grounded_response,
    parse_plain_response,
    parse_response_lenient,
    prompt_boxes,
    serialize_instance,
    validate_assistant,
    validate_user_content,
)

from conftest import random_dna


class TestGroundedGrammar:
    def test_single_box_line(self):
        doc = parse_grounded_response(
            "<|ref|>ACGT<|/ref|><|det|>[[0,20,23,56,33]]<|/det|>", TaskId.T3
        )
        assert doc.items == (GroundedItem("ACGT", ((0, 20, 23, 56, 33),)),)

    def test_t5_empty_boxlist(self):
        doc = parse_grounded_response("<|ref|>ACGT<|/ref|><|det|>[]<|/det|>", TaskId.T5)
        assert doc.items == (GroundedItem("ACGT", ()),)

    def test_empty_boxlist_outside_t5(self):
        with pytest.raises(EmptyBoxListError):
            parse_grounded_response("<|ref|>ACGT<|/ref|><|det|>[]<|/det|>", TaskId.T2)

    def test_missing_det_is_malformed(self):
        with pytest.raises(MalformedLineError):
            parse_grounded_response("<|ref|>ACGT<|/ref|>", TaskId.T2)

    @pytest.mark.parametrize(
        "payload",
        [
            "[[0,20,23,56]]",            # 4 fields
            "[[0,20,23,56,33,1]]",       # 6 fields
            "[[0,20,23,56,-1]]",         # negative
            "[[0,20,23,56,3.5]]",        # float
            "[0,20,23,56,33]",           # box not nested
            "[[0,20,23,56,33],]",        # trailing comma
            "boxes",
        ],
    )
    def test_bad_boxlists(self, payload):
        with pytest.raises(MalformedLineError):
            parse_grounded_line(f"<|ref|>ACGT<|/ref|><|det|>{payload}<|/det|>")

    def test_illegal_sequence_char(self):
        with pytest.raises(IllegalSequenceCharError):
            parse_grounded_line("<|ref|>ACGU<|/ref|><|det|>[[0,1,2,3,4]]<|/det|>")

    def test_whitespace_tolerated_around_separators(self):
        line = "  <|ref|> ACGT <|/ref|>  <|det|> [ [0, 20, 23, 56, 33] ] <|/det|>  "
        item = parse_grounded_line(line)
        assert item == GroundedItem("ACGT", ((0, 20, 23, 56, 33),))

    def test_trailing_text_rejected(self):
        with pytest.raises(MalformedLineError):
            parse_grounded_line("<|ref|>A<|/ref|><|det|>[[0,1,2,3,4]]<|/det|> extra")

    def test_multiple_boxes_parse_but_fail_validator_outside_t5(self):
        line = "<|ref|>ACGT<|/ref|><|det|>[[0,1,2,3,4],[0,5,6,7,8]]<|/det|>"
        doc = parse_grounded_response(line, TaskId.T2)
        assert len(doc.items[0].boxes) == 2
        with pytest.raises(MalformedLineError):
            validate_assistant(TaskId.T2, line)
        validate_assistant(TaskId.T5, line)  # legal for T5

    def test_t5_must_be_single_line(self):
        two = "<|ref|>A<|/ref|><|det|>[]<|/det|>\n<|ref|>C<|/ref|><|det|>[]<|/det|>"
        with pytest.raises(MalformedLineError):
            validate_assistant(TaskId.T5, two)

    def test_line_numbers_in_errors(self):
        text = "<|ref|>A<|/ref|><|det|>[[0,1,2,3,4]]<|/det|>\nnot a line"
        with pytest.raises(MalformedLineError) as excinfo:
            parse_grounded_response(text, TaskId.T2)
        assert excinfo.value.line_no == 2

    def test_round_trip_identity_fuzz(self):
        rng = np.random.default_rng(21)
        for _ in range(300):
            items = []
            for _ in range(int(rng.integers(1, 6))):
                seq = random_dna(rng, int(rng.integers(1, 30)))
                boxes = tuple(
                    (
                        int(rng.integers(0, 3)),
                        int(rng.integers(0, 600)),
                        int(rng.integers(0, 600)),
                        int(rng.integers(600, 641)),
                        int(rng.integers(600, 641)),
                    )
                    for _ in range(int(rng.integers(0, 3)))
                )
                items.append(GroundedItem(seq, boxes))
            text = "\n".join(grounded_line(i.sequence, i.boxes) for i in items)
            parsed = parse_grounded_response(text, TaskId.T5)
            assert parsed.items == tuple(items)


class TestPlainResponses:
    def test_t1_preserves_line_breaks(self):
        doc = parse_plain_response("ACGT\nTTTA", TaskId.T1)
        assert doc.raw_text == "ACGT\nTTTA"
        assert len(doc.raw_text.split("\n")) == 2

    def test_t1_illegal_char(self):
        with pytest.raises(IllegalSequenceCharError):
            parse_plain_response("ACGT\nAXGT", TaskId.T1)

    def test_t6_label(self):
        assert parse_plain_response("chrX", TaskId.T6).label == "chrX"
        assert parse_plain_response("  chr22\n", TaskId.T6).label == "chr22"

    def test_t6_unknown_label(self):
        with pytest.raises(UnknownLabelError):
            parse_plain_response("chromosome 7", TaskId.T6)

    def test_label_set_has_25_entries(self):
        assert len(CHROMOSOME_LABELS) == 25
        assert CHROMOSOME_LABELS[0] == "chr1"
        assert CHROMOSOME_LABELS[-1] == "unknown"


class TestLenientParsing:
    def test_bad_lines_become_present_but_wrong(self):
        text = "<|ref|>ACGT<|/ref|><|det|>[[0,1,2,3,4]]<|/det|>\njunk line"
        doc = parse_response_lenient(text, TaskId.T2)
        assert len(doc.items) == 2
        assert doc.items[1] == GroundedItem("", ())

    def test_t6_unparseable_is_none(self):
        assert parse_response_lenient("whatever", TaskId.T6).label is None
        assert parse_response_lenient("chr3", TaskId.T6).label == "chr3"

    def test_never_raises_on_junk(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            junk = bytes(rng.integers(0, 256, size=int(rng.integers(0, 80)), dtype=np.uint8))
            text = junk.decode("latin-1")
            for task in TaskId:
                parse_response_lenient(text, task)

    def test_lenient_survives_adversarial_payloads(self):
        adversarial = [
            "<|ref|>A<|/ref|><|det|>" + "[" * 50_000 + "<|/det|>",
            "<|ref|>" * 1000,
            "<|ref|>A<|/ref|><|det|>[[NaN,1,2,3,4]]<|/det|>",
            "<|ref|>A<|/ref|><|det|>[[1e309,1,2,3,4]]<|/det|>",
            "\x00\x01\x02",
        ]
        for text in adversarial:
            for task in TaskId:
                parse_response_lenient(text, task)

    def test_strict_parser_raises_only_structured_errors(self):
        from dnadoc.wire import WireError

        rng = np.random.default_rng(10)
        cases = ["<|ref|>A<|/ref|><|det|>" + "[" * 50_000 + "<|/det|>"]
        for _ in range(100):
            junk = bytes(rng.integers(0, 256, size=60, dtype=np.uint8))
            cases.append(junk.decode("latin-1"))
        for text in cases:
            try:
                parse_grounded_response(text, TaskId.T2)
            except WireError:
                pass


class TestUserContent:
    def test_meta_line_checked(self):
        validate_user_content("<image>\nNUM_IMAGES=3.\nFree OCR.", 3)
        with pytest.raises(Exception):
            validate_user_content("<image>\nNUM_IMAGES=2.\nFree OCR.", 3)
        with pytest.raises(Exception):
            validate_user_content("Free OCR.", 1)
        with pytest.raises(Exception):
            validate_user_content("<image><image>\nNUM_IMAGES=2.\n", 2)


class TestPromptBoxes:
    def test_python_style_nested_list(self):
        assert (
            prompt_boxes([(0, 30, 915, 960, 945), (0, 32, 960, 880, 990)])
            == "[[0, 30, 915, 960, 945], [0, 32, 960, 880, 990]]"
        )


def _build(task, doc, seed=0):
    cfg = SAMPLER_PRESETS["hg38-stage1"]
    return build_instance(task, doc, PromptVariant.MEDIUM, cfg, substream(seed, 0))


class TestSerialization:
    def test_record_shape_and_meta(self, tmp_path):
        doc = render_document(DnaSequence("ACGT" * 1200, "chr7"))  # 3 pages
        inst = _build(TaskId.T1, doc)
        record = serialize_instance(inst, tmp_path, "000001")
        assert record["id"] == "000001"
        assert record["task"] == "T1"
        assert record["prompt_variant"] == "MEDIUM"
        user, assistant = record["conversation"]
        assert user["role"] == "<|User|>"
        assert assistant["role"] == "<|Assistant|>"
        assert len(user["images"]) == 3
        assert "NUM_IMAGES=3." in user["content"]
        assert "images" not in assistant
        for rel in user["images"]:
            assert (tmp_path / rel).is_file()
        assert (tmp_path / "annotations" / "000001.json").is_file()

    def test_t6_record_has_label_and_no_ref_tokens(self, tmp_path, one_row_doc):
        inst = _build(TaskId.T6, one_row_doc)
        record = serialize_instance(inst, tmp_path, "x")
        assert record["label"] == "chr2"
        assert "<|ref|>" not in record["conversation"][1]["content"]

    def test_round_trip_reproduces_instance(self, tmp_path, small_doc):
        inst = _build(TaskId.T2, small_doc, seed=4)
        with ShardWriter(tmp_path) as writer:
            writer.append(inst, "000000")
        (record,) = load_records(tmp_path / "shard-0.jsonl")
        assert record["conversation"][0]["content"] == inst.user_content
        assert record["conversation"][1]["content"] == inst.assistant_content
        loaded = load_document(record, tmp_path)
        assert len(loaded.pages) == len(inst.document.pages)
        for got, expected in zip(loaded.pages, inst.document.pages):
            assert got.image.tobytes() == expected.image.tobytes()
            assert got.annotations == expected.annotations
        assert loaded.total_bases == inst.document.total_bases

    def test_generator_outputs_validate_for_all_tasks(self, small_doc):
        for task in TaskId:
            inst = _build(task, small_doc, seed=11)
            validate_assistant(task, inst.assistant_content)
            validate_user_content(inst.user_content, len(inst.document.pages))

    def test_shard_lines_are_valid_json(self, tmp_path, one_row_doc):
        with ShardWriter(tmp_path) as writer:
            for k, task in enumerate(TaskId):
                writer.append(_build(task, one_row_doc, seed=k), f"{k:06d}")
        with open(tmp_path / "shard-0.jsonl") as fh:
            lines = [json.loads(line) for line in fh]
        assert [r["task"] for r in lines] == [t.value for t in TaskId]
