"""Command-line front door: render, gen-dataset, eval, stats, verify."""

from __future__ import annotations

import argparse
import json
import os
import sys
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__, genome_io, metrics, wire
from .genome_io import FastaError, WINDOW_PRESETS, extract_windows, read_fasta
from .render import ConfigTooSmallError, RenderConfig, render_document
from .rng import substream
from .tasks import (
    AllItemsTruncatedError,
    CURRICULUM_PRESETS,
    CurriculumSchedule,
    SAMPLER_PRESETS,
    SamplerConfig,
    build_instance,
    sample_prompt_variant,
    sample_task,
)
from .wire import ShardWriter, TaskId

EXIT_PARSE = 1
EXIT_CONFIG = 2
EXIT_IO = 3


# ---------------------------------------------------------------------------
# render


def _render_config_from_args(args: argparse.Namespace) -> RenderConfig:
    return RenderConfig(
        page_width=args.page_width,
        page_height=args.page_height,
        font_size=args.font_size,
        line_spacing=args.line_spacing,
    )


def cmd_render(args: argparse.Namespace) -> int:
    try:
        records = read_fasta(args.fasta)
    except FastaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    window, stride = WINDOW_PRESETS[args.preset]
    if args.window:
        window = args.window
    if args.stride:
        stride = args.stride
    cfg = _render_config_from_args(args)

    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        total_pages = 0
        n_windows = 0
        for record in records:
            for win in extract_windows(record, window, stride):
                doc = render_document(win.sequence, cfg)
                sample_id = f"{win.source_label}_{win.start_offset}"
                for k, page in enumerate(doc.pages):
                    path = out_dir / f"{sample_id}_p{k}.png"
                    path.write_bytes(wire.page_png_bytes(page))
                sidecar = out_dir / f"{sample_id}.json"
                sidecar.write_text(
                    json.dumps(wire.annotation_payload(doc), separators=(",", ":")),
                    encoding="utf-8",
                )
                print(f"{sample_id}: {len(doc.pages)} pages, {doc.total_bases} bases")
                total_pages += len(doc.pages)
                n_windows += 1
    except ConfigTooSmallError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"done: {n_windows} windows, {total_pages} pages -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# gen-dataset

_GEN_STATE: dict = {}


def _sampler_from_file(path: str) -> SamplerConfig:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if "task_weights" in data:
        data["task_weights"] = tuple(data["task_weights"])
    return SamplerConfig(**data)


def _apply_sampler_overrides(cfg: SamplerConfig, args: argparse.Namespace) -> SamplerConfig:
    overrides = {}
    for name in (
        "trunc_base",
        "trunc_max",
        "span_base_min",
        "span_base_max",
        "span_count_min",
        "span_count_max",
        "query_len_min",
        "query_len_max",
        "t5_negative_rate",
    ):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.task_weights is not None:
        weights = tuple(float(v) for v in args.task_weights.split(","))
        overrides["task_weights"] = weights
    if not overrides:
        return cfg
    from dataclasses import replace

    return replace(cfg, **overrides)


def _gen_init(
    fasta_path: str,
    window: int,
    stride: int,
    sampler: SamplerConfig,
    curriculum: CurriculumSchedule,
    seed: int,
) -> None:
    records = read_fasta(fasta_path)
    windows = [w for rec in records for w in extract_windows(rec, window, stride)]
    _GEN_STATE.update(
        windows=windows,
        sampler=sampler,
        curriculum=curriculum,
        seed=seed,
        docs=OrderedDict(),
    )


def _cached_document(window_idx: int):
    docs: OrderedDict = _GEN_STATE["docs"]
    if window_idx in docs:
        docs.move_to_end(window_idx)
        return docs[window_idx]
    doc = render_document(_GEN_STATE["windows"][window_idx].sequence)
    docs[window_idx] = doc
    if len(docs) > 32:
        docs.popitem(last=False)
    return doc


def _gen_one(index: int) -> tuple[int, str, str, dict[str, bytes]]:
    windows = _GEN_STATE["windows"]
    sampler: SamplerConfig = _GEN_STATE["sampler"]
    curriculum: CurriculumSchedule = _GEN_STATE["curriculum"]
    seed: int = _GEN_STATE["seed"]

    pick = substream(seed, index, 0)
    window_idx = int(pick.integers(0, len(windows)))
    task = sample_task(sampler, pick)
    variant = sample_prompt_variant(curriculum, index, pick)
    doc = _cached_document(window_idx)

    inst = None
    for attempt in range(8):
        build_rng = substream(seed, index, 1, attempt)
        try:
            inst = build_instance(task, doc, variant, sampler, build_rng)
            break
        except AllItemsTruncatedError:
            continue
    if inst is None:
        raise RuntimeError(f"sample {index}: truncation kept deleting every item")

    sample_id = f"{index:06d}"
    record, files = wire.render_record(inst, sample_id)
    line = json.dumps(record, separators=(",", ":"))
    return index, task.value, line, files


def cmd_gen_dataset(args: argparse.Namespace) -> int:
    if args.preset not in SAMPLER_PRESETS:
        print(
            f"error: unknown preset {args.preset!r}; choose from "
            f"{sorted(SAMPLER_PRESETS)}",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    sampler = SAMPLER_PRESETS[args.preset]
    if args.sampler_config:
        try:
            sampler = _sampler_from_file(args.sampler_config)
        except (OSError, ValueError, TypeError) as exc:
            print(f"error: bad sampler config: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        sampler = _apply_sampler_overrides(sampler, args)
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    seed = sampler.seed if args.seed is None else args.seed
    curriculum = CURRICULUM_PRESETS[args.preset]

    window_preset = "rice" if args.preset == "rice" else "hg38"
    window, stride = WINDOW_PRESETS[window_preset]
    if args.window:
        window = args.window
    if args.stride:
        stride = args.stride

    try:
        records = read_fasta(args.fasta)
    except FastaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    n_windows = sum(len(extract_windows(r, window, stride)) for r in records)
    if args.count > 0 and n_windows == 0:
        print("error: no windows extractable from input", file=sys.stderr)
        return EXIT_PARSE

    out_dir = Path(args.out)
    per_task = OrderedDict((t.value, 0) for t in TaskId)
    workers = args.workers or os.cpu_count() or 1
    try:
        with ShardWriter(out_dir, shard_index=0) as writer:
            init_args = (args.fasta, window, stride, sampler, curriculum, seed)
            if args.count == 0:
                pass
            elif workers <= 1:
                _gen_init(*init_args)
                for index in range(args.count):
                    _, task_value, line, files = _gen_one(index)
                    per_task[task_value] += 1
                    writer.write_line(line, files)
            else:
                with ProcessPoolExecutor(
                    max_workers=workers, initializer=_gen_init, initargs=init_args
                ) as pool:
                    chunk = max(1, args.count // (workers * 4))
                    for _, task_value, line, files in pool.map(
                        _gen_one, range(args.count), chunksize=chunk
                    ):
                        per_task[task_value] += 1
                        writer.write_line(line, files)
        manifest = {
            "tool_version": __version__,
            "preset": args.preset,
            "seed": seed,
            "count": args.count,
            "window": window,
            "stride": stride,
            "per_task_counts": per_task,
            "shards": ["shard-0.jsonl"],
        }
        (out_dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(
        f"wrote {args.count} instances -> {out_dir} "
        f"({', '.join(f'{k}={v}' for k, v in per_task.items())})"
    )
    return 0


# ---------------------------------------------------------------------------
# eval


def _collect_gt_records(paths: list[str]) -> list[dict]:
    records: list[dict] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            for shard in sorted(p.glob("shard-*.jsonl")):
                records.extend(wire.load_records(shard))
        else:
            records.extend(wire.load_records(p))
    return records


def _load_predictions(path: str) -> dict[str, str]:
    preds: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            response = obj["response"]
            if isinstance(response, dict):
                response = response.get("text", "")
            preds[str(obj["id"])] = response
    return preds


def _gt_items(record: dict, task: TaskId) -> list[wire.GroundedItem]:
    answer = record["conversation"][1]["content"]
    if task is TaskId.T1:
        doc = wire.parse_plain_response(answer, task)
        assert doc.raw_text is not None
        return [wire.GroundedItem(line, ()) for line in doc.raw_text.split("\n")]
    doc = wire.parse_grounded_response(answer, task)
    assert doc.items is not None
    return list(doc.items)


def _pred_items(text: str, task: TaskId) -> list[wire.GroundedItem]:
    doc = wire.parse_response_lenient(text, task)
    if task is TaskId.T1:
        raw = doc.raw_text or ""
        return [wire.GroundedItem(line, ()) for line in raw.split("\n") if line]
    assert doc.items is not None
    return list(doc.items)


def _format_report_table(per_task: dict) -> str:
    header = (
        f"{'task':<5} {'tau':>5} {'LCM':>7} {'Text-EM':>8} {'Text-CER':>9} "
        f"{'Det-Acc':>8} {'Det-IoU':>8} {'Joint':>7} {'Strict':>7} {'Linf':>8} {'n':>5}"
    )
    lines = [header, "-" * len(header)]
    for task_value, rows in per_task.items():
        if task_value == TaskId.T6.value:
            lines.append(
                f"{task_value:<5} {'-':>5} accuracy={rows['accuracy']:.4f} "
                f"(n={rows['n_samples']})"
            )
            continue
        for tau, rep in rows.items():
            lines.append(
                f"{task_value:<5} {float(tau):>5.2f} {rep['lcm']:>7.4f} "
                f"{rep['text_em']:>8.4f} {rep['text_cer']:>9.4f} {rep['det_acc']:>8.4f} "
                f"{rep['det_iou_avg']:>8.4f} {rep['joint']:>7.4f} {rep['strict']:>7.4f} "
                f"{rep['linf_err']:>8.4f} {rep['n_samples']:>5d}"
            )
    return "\n".join(lines)


def cmd_eval(args: argparse.Namespace) -> int:
    records = _collect_gt_records(args.gt)
    if not records:
        print("error: no ground-truth records found", file=sys.stderr)
        return EXIT_PARSE
    try:
        predictions = _load_predictions(args.pred)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: cannot read predictions: {exc}", file=sys.stderr)
        return EXIT_PARSE

    if args.task:
        records = [r for r in records if r["task"] == args.task]

    missing = [r["id"] for r in records if r["id"] not in predictions]
    if missing:
        print(
            f"error: {len(missing)} sample(s) lack predictions: "
            + ", ".join(missing[:20])
            + ("..." if len(missing) > 20 else ""),
            file=sys.stderr,
        )
        return EXIT_PARSE

    thresholds = None
    if args.thresholds:
        thresholds = tuple(float(v) for v in args.thresholds.split(","))

    by_task: dict[str, list[dict]] = {}
    for record in records:
        by_task.setdefault(record["task"], []).append(record)

    per_task: dict = {}
    for task_value in sorted(by_task):
        task = TaskId(task_value)
        group = by_task[task_value]
        if task is TaskId.T6:
            gt_labels = [r["label"] for r in group]
            pred_labels = [
                wire.parse_response_lenient(predictions[r["id"]], task).label
                for r in group
            ]
            per_task[task_value] = {
                "accuracy": metrics.evaluate_t6(gt_labels, pred_labels),
                "n_samples": len(group),
            }
            continue
        taus = thresholds or (
            metrics.DEFAULT_T5_THRESHOLDS if task is TaskId.T5 else (0.99,)
        )
        rows: dict[str, dict] = {}
        for tau in taus:
            crit = metrics.MatchCriteria(iou_threshold=tau)
            reports = []
            for record in group:
                gt_items = _gt_items(record, task)
                pred_items = _pred_items(predictions[record["id"]], task)
                reports.append(metrics.evaluate_ordered(gt_items, pred_items, crit))
            rows[f"{tau}"] = metrics.mean_reports(reports).as_dict()
        per_task[task_value] = rows

    report = {"per_task": per_task, "n_samples": len(records)}
    print(_format_report_table(per_task))
    if args.out:
        try:
            Path(args.out).write_text(
                json.dumps(report, indent=2) + "\n", encoding="utf-8"
            )
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"report -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# stats


def cmd_stats(args: argparse.Namespace) -> int:
    try:
        budget = metrics.token_budget(args.resolution, args.pages, args.bases)
    except (metrics.UnsupportedResolutionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{'resolution':>12} {'tokens/page':>12} {'pages':>8} {'bases':>10} {'compression':>12}")
    print(
        f"{budget.resolution:>12} {budget.tokens_per_page:>12} {budget.pages:>8} "
        f"{budget.bases:>10} {budget.compression:>12.1f}"
    )
    return 0


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args: argparse.Namespace) -> int:
    path = Path(args.shard)
    root = path if path.is_dir() else path.parent
    shards = sorted(root.glob("shard-*.jsonl")) if path.is_dir() else [path]
    if not shards:
        print("error: no shards found", file=sys.stderr)
        return EXIT_PARSE

    failures: list[str] = []
    n_records = 0
    for shard in shards:
        for record in wire.load_records(shard):
            n_records += 1
            rid = record.get("id", "<missing id>")
            try:
                _verify_record(record, root)
            except Exception as exc:  # noqa: BLE001 - report every defect
                failures.append(f"{shard.name}:{rid}: {exc}")
    if failures:
        for failure in failures:
            print(f"FAIL {failure}", file=sys.stderr)
        print(f"verify: {len(failures)}/{n_records} records failed", file=sys.stderr)
        return EXIT_PARSE
    print(f"verify: {n_records} records ok")
    return 0


def _verify_record(record: dict, root: Path) -> None:
    task = TaskId(record["task"])
    convo = record["conversation"]
    if len(convo) != 2:
        raise ValueError("conversation must hold exactly two messages")
    user, assistant = convo
    if user["role"] != wire.ROLE_USER or assistant["role"] != wire.ROLE_ASSISTANT:
        raise ValueError("roles must be <|User|> then <|Assistant|>")
    images = user.get("images") or []
    if not images:
        raise ValueError("user message must carry images")
    if "images" in assistant:
        raise ValueError("assistant message must not carry images")
    wire.validate_user_content(user["content"], len(images))
    wire.validate_assistant(task, assistant["content"])
    if task is TaskId.T6 and record.get("label") != assistant["content"]:
        raise ValueError("T6 label field must equal the assistant content")
    for rel in images:
        if not (root / rel).is_file():
            raise ValueError(f"missing image file {rel}")
    sidecar = root / "annotations" / f"{record['id']}.json"
    if not sidecar.is_file():
        raise ValueError("missing annotation sidecar")
    entries = json.loads(sidecar.read_text(encoding="utf-8"))
    seen_pages: dict[int, int] = {}
    for entry in entries:
        if set(entry) != {"char", "char_index", "page_index", "page_char_index", "page_bbox"}:
            raise ValueError("sidecar entry keys are wrong")
        if entry["char"] not in genome_io.ALPHABET:
            raise ValueError(f"sidecar char {entry['char']!r} outside alphabet")
        if len(entry["page_bbox"]) != 4:
            raise ValueError("page_bbox must be a 4-int array")
        page = entry["page_index"]
        if not 0 <= page < len(images):
            raise ValueError("sidecar page_index out of range")
        expect = seen_pages.get(page, 0)
        if entry["page_char_index"] != expect:
            raise ValueError("page_char_index not contiguous within page")
        seen_pages[page] = expect + 1


# ---------------------------------------------------------------------------
# argument plumbing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dnadoc",
        description="Render DNA documents, generate prompted task datasets, "
        "and evaluate grounded responses.",
    )
    parser.add_argument("--version", action="version", version=f"dnadoc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    default_out = os.environ.get("DNADOC_OUT", ".")

    p = sub.add_parser("render", help="render FASTA windows to annotated pages")
    p.add_argument("fasta", help="FASTA file path, or - for stdin")
    p.add_argument("--preset", choices=sorted(WINDOW_PRESETS), default="hg38")
    p.add_argument("--window", type=int, default=0, help="override window length")
    p.add_argument("--stride", type=int, default=0, help="override stride")
    p.add_argument("--page-width", type=int, default=640)
    p.add_argument("--page-height", type=int, default=640)
    p.add_argument("--font-size", type=float, default=14)
    p.add_argument("--line-spacing", type=float, default=1.6)
    p.add_argument("-o", "--out", default=default_out)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("gen-dataset", help="generate a prompted task dataset shard")
    p.add_argument("fasta")
    p.add_argument("--preset", default="hg38-stage1")
    p.add_argument("--sampler-config", help="JSON file overriding the preset sampler")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=None, help="defaults to the sampler config seed")
    p.add_argument("--window", type=int, default=0)
    p.add_argument("--stride", type=int, default=0)
    p.add_argument("--workers", type=int, default=0, help="0 = logical core count")
    p.add_argument("--task-weights", help="comma list of 6 weights")
    for flag in (
        "--trunc-base",
        "--trunc-max",
        "--t5-negative-rate",
    ):
        p.add_argument(flag, type=float, default=None)
    for flag in (
        "--span-base-min",
        "--span-base-max",
        "--span-count-min",
        "--span-count-max",
        "--query-len-min",
        "--query-len-max",
    ):
        p.add_argument(flag, type=int, default=None)
    p.add_argument("-o", "--out", default=default_out)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("eval", help="score predictions against a dataset shard")
    p.add_argument("--gt", nargs="+", required=True, help="shard files or directories")
    p.add_argument("--pred", required=True, help="JSONL of {id, response}")
    p.add_argument("--task", choices=[t.value for t in TaskId])
    p.add_argument("--thresholds", help="comma list of IoU thresholds")
    p.add_argument("-o", "--out", help="write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="token budget arithmetic for a resolution")
    p.add_argument("resolution", type=int)
    p.add_argument("pages", type=int)
    p.add_argument("bases", type=int)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("verify", help="structural checks over a shard")
    p.add_argument("shard", help="shard file or dataset directory")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
