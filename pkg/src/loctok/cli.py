"""Command line front end over the codec and the data-engine pipeline.

Six subcommands, one job each: ``encode`` and ``decode`` move records across
the token-text boundary, ``filter`` and ``refine`` run the cleaning pipeline,
``stats`` aggregates a corpus, ``validate`` only checks. Shared conventions:

* JSONL in, JSONL out, UTF-8 everywhere; ``-`` means the standard streams.
* Exit codes: 0 success, 1 bad input, 2 bad configuration. Flags override the
  TOML config file, which overrides built-in defaults.
* ``encode`` and ``decode`` default to strict (a codec must not guess);
  the pipeline commands default to lenient, where malformed lines are
  skipped, reported on standard error, and counted in the summary.
* Output order equals input order at any ``--jobs`` value. Workers process
  contiguous slices of the input and the parent folds the results back in
  slice order, so parallelism cannot reorder or change the output bytes.

The structured side of encode/decode is one JSON object per line::

    {"id": str, "task": str, "size": {"width": W, "height": H},
     "prompt": {"text": ...} | {"region_bins": [4 ints]},
     "response": payload}

``prompt`` is omitted for tasks with a fixed prompt string. The response
payload is shaped by the task's answer family: ``{"text"}``,
``{"regions": [[x0, y0, x1, y1], ...]}``, ``{"items": [{"label", "region"},
...]}`` with a flat region of 4 (box) or 8 (quad) numbers, ``{"items":
[{"phrase", "regions"}, ...]}``, or ``{"polygon": [x, y, ...]}``. Response
coordinates are pixels; prompt regions are already location bins. The token
side carries the same id/task/size plus the rendered prompt string and the
serialized token text, which is everything ``decode`` needs to invert
``encode`` without a side channel.
"""

from __future__ import annotations

import argparse
import functools
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Union

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .codec import (
    RESPONSE_FAMILY,
    GroundedPhrase,
    GroundedTextResponse,
    LabeledRegion,
    LabeledRegionsResponse,
    MaskResponse,
    RegionsResponse,
    Task,
    TaskPrompt,
    TextResponse,
    decode_to_pixels,
    lex,
    parse_prompt,
    parse_response,
    quantize_response,
    render_prompt,
    serialize_response,
)
from .engine import (
    SCHEMA_VERSION,
    AnnotatedImage,
    FilterConfig,
    FilterCounts,
    annotated_image_from_record,
    annotated_image_to_record,
    dumps_record,
    filter_record,
    load_sidecar,
    merge_annotations,
)
from .errors import LoctokError, MergeError, SchemaError
from .geometry import BBox, ImageSize, Polygon, QuadBox, QuantizedRegion, RegionKind
from .stats import (
    DEFAULT_HEATMAP_RESOLUTION,
    SPATIAL_SOURCES,
    CorpusStats,
    heatmap_csv,
    histogram_csv,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CONFIG = 2


class CliError(Exception):
    """Operator-facing failure; ``code`` selects the exit status."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# I/O


def _read_lines(path: str) -> list[str]:
    if path == "-":
        return sys.stdin.read().splitlines()
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot read {path}: {exc}") from exc


def _write_text(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot write {path}: {exc}") from exc


def _write_lines(path: str, lines: list[str]) -> None:
    _write_text(path, "".join(line + "\n" for line in lines))


def _emit_summary(summary: dict, path: Union[str, None]) -> None:
    text = json.dumps(summary, sort_keys=True, indent=2) + "\n"
    if path is None:
        sys.stderr.write(text)
    else:
        _write_text(path, text)


# ---------------------------------------------------------------------------
# Record marshalling for encode/decode


def _record_object(line: str) -> dict:
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise SchemaError(f"expected a JSON object, got {type(obj).__name__}")
    return obj


def _field_str(obj: dict, key: str) -> str:
    value = obj.get(key)
    if not isinstance(value, str):
        raise SchemaError(f"{key}: expected a string, got {value!r}")
    return value


def _number(value, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{what}: expected a number, got {value!r}")
    return float(value)


def _number_list(value, what: str) -> list[float]:
    if not isinstance(value, list):
        raise SchemaError(f"{what}: expected an array")
    return [_number(v, f"{what}[{i}]") for i, v in enumerate(value)]


def _record_size(obj: dict) -> ImageSize:
    size = obj.get("size")
    if not isinstance(size, dict):
        raise SchemaError("size: expected an object with width and height")
    return ImageSize(
        _number(size.get("width"), "size.width"),
        _number(size.get("height"), "size.height"),
    )


def _record_task(obj: dict, override: Union[str, None]) -> Task:
    raw = obj.get("task", override)
    if raw is None:
        raise SchemaError("record carries no task and no --task was given")
    if override is not None and raw != override:
        raise SchemaError(f"record task {raw!r} conflicts with --task {override}")
    try:
        return Task(raw)
    except ValueError:
        raise SchemaError(f"unknown task {raw!r}") from None


def _box(flat: list[float], what: str) -> BBox:
    if len(flat) != 4:
        raise SchemaError(f"{what}: a box is 4 numbers, got {len(flat)}")
    return BBox(*flat)


def _pairs(flat: list[float], what: str) -> tuple:
    if len(flat) % 2:
        raise SchemaError(f"{what}: odd coordinate count {len(flat)}")
    return tuple(zip(flat[0::2], flat[1::2]))


def _items_of(payload: dict) -> list:
    items = payload.get("items")
    if not isinstance(items, list):
        raise SchemaError("response.items: expected an array")
    return items


def _response_from_payload(task: Task, payload):
    if not isinstance(payload, dict):
        raise SchemaError("response: expected an object")
    family = RESPONSE_FAMILY[task].value
    if family == "text":
        return TextResponse(_field_str(payload, "text"))
    if family == "regions":
        regions = payload.get("regions")
        if not isinstance(regions, list):
            raise SchemaError("response.regions: expected an array")
        return RegionsResponse(
            tuple(
                _box(_number_list(r, f"regions[{i}]"), f"regions[{i}]")
                for i, r in enumerate(regions)
            )
        )
    if family in ("labeled_box", "labeled_quad"):
        items = []
        for i, item in enumerate(_items_of(payload)):
            what = f"items[{i}]"
            if not isinstance(item, dict):
                raise SchemaError(f"{what}: expected an object")
            flat = _number_list(item.get("region"), f"{what}.region")
            if family == "labeled_box":
                region = _box(flat, f"{what}.region")
            else:
                if len(flat) != 8:
                    raise SchemaError(f"{what}.region: a quad is 8 numbers, got {len(flat)}")
                region = QuadBox(_pairs(flat, f"{what}.region"))
            items.append(LabeledRegion(_field_str(item, "label"), region))
        return LabeledRegionsResponse(tuple(items))
    if family == "grounded":
        items = []
        for i, item in enumerate(_items_of(payload)):
            what = f"items[{i}]"
            if not isinstance(item, dict):
                raise SchemaError(f"{what}: expected an object")
            regions = item.get("regions")
            if not isinstance(regions, list):
                raise SchemaError(f"{what}.regions: expected an array")
            boxes = tuple(
                _box(_number_list(r, f"{what}.regions[{j}]"), f"{what}.regions[{j}]")
                for j, r in enumerate(regions)
            )
            items.append(GroundedPhrase(_field_str(item, "phrase"), boxes))
        return GroundedTextResponse(tuple(items))
    flat = _number_list(payload.get("polygon"), "response.polygon")
    return MaskResponse(Polygon(_pairs(flat, "response.polygon")))


def _flat(region) -> list[float]:
    if isinstance(region, BBox):
        return [region.x0, region.y0, region.x1, region.y1]
    return [c for vertex in region.vertices for c in vertex]


def _response_payload(response) -> dict:
    if isinstance(response, TextResponse):
        return {"text": response.text}
    if isinstance(response, RegionsResponse):
        return {"regions": [_flat(r) for r in response.regions]}
    if isinstance(response, LabeledRegionsResponse):
        return {
            "items": [
                {"label": item.label, "region": _flat(item.region)}
                for item in response.items
            ]
        }
    if isinstance(response, GroundedTextResponse):
        return {
            "items": [
                {"phrase": p.phrase, "regions": [_flat(r) for r in p.regions]}
                for p in response.items
            ]
        }
    return {"polygon": _flat(response.polygon)}


def _prompt_from_payload(task: Task, payload) -> TaskPrompt:
    if payload is None:
        return TaskPrompt(task)
    if not isinstance(payload, dict):
        raise SchemaError("prompt: expected an object")
    keys = set(payload)
    if keys == {"text"}:
        return TaskPrompt(task, text=_field_str(payload, "text"))
    if keys == {"region_bins"}:
        bins = payload["region_bins"]
        if (
            not isinstance(bins, list)
            or len(bins) != 4
            or any(isinstance(b, bool) or not isinstance(b, int) for b in bins)
        ):
            raise SchemaError("prompt.region_bins: expected 4 integer bins")
        return TaskPrompt(task, region=QuantizedRegion(RegionKind.BOX, tuple(bins)))
    raise SchemaError('prompt: expected exactly one of "text" or "region_bins"')


def _prompt_payload(prompt: TaskPrompt) -> Union[dict, None]:
    if prompt.text is not None:
        return {"text": prompt.text}
    if prompt.region is not None:
        return {"region_bins": list(prompt.region.bins)}
    return None


def _encode_line(line: str, task_override: Union[str, None]) -> str:
    obj = _record_object(line)
    task = _record_task(obj, task_override)
    size = _record_size(obj)
    prompt = _prompt_from_payload(task, obj.get("prompt"))
    response = _response_from_payload(task, obj.get("response"))
    stream = serialize_response(quantize_response(response, size), task)
    return dumps_record(
        {
            "id": _field_str(obj, "id"),
            "task": task.value,
            "size": {"width": size.width, "height": size.height},
            "prompt": render_prompt(prompt),
            "response": stream.render(),
        }
    )


def _decode_line(line: str, task_override: Union[str, None]) -> str:
    obj = _record_object(line)
    task = _record_task(obj, task_override)
    size = _record_size(obj)
    prompt = parse_prompt(_field_str(obj, "prompt"), task)
    response = parse_response(lex(_field_str(obj, "response")), task)
    record = {
        "id": _field_str(obj, "id"),
        "task": task.value,
        "size": {"width": size.width, "height": size.height},
        "response": _response_payload(decode_to_pixels(response, size)),
    }
    payload = _prompt_payload(prompt)
    if payload is not None:
        record["prompt"] = payload
    return dumps_record(record)


# ---------------------------------------------------------------------------
# Chunked execution

# One worker per contiguous slice of the input. Results fold back in slice
# order, so any --jobs value yields the bytes a single pass would have.


def _split_chunks(lines: list[str], jobs: int) -> list[tuple[int, list[str]]]:
    if not lines:
        return []
    k = max(1, min(jobs, len(lines)))
    base, extra = divmod(len(lines), k)
    chunks = []
    start = 0
    for i in range(k):
        stop = start + base + (1 if i < extra else 0)
        chunks.append((start + 1, lines[start:stop]))
        start = stop
    return chunks


def _chunk_worker(mode: str, static: dict, chunk: tuple[int, list[str]]) -> dict:
    """Process one slice. Top-level so process pools can pickle it."""
    start, lines = chunk
    result: dict = {"out": [], "errors": [], "skipped": 0, "ok": 0}
    if mode == "filter":
        result["counts"] = FilterCounts()
    elif mode == "stats":
        result["stats"] = CorpusStats(heatmap_resolution=static["resolution"])
    for offset, line in enumerate(lines):
        try:
            if mode == "encode":
                result["out"].append(_encode_line(line, static["task"]))
            elif mode == "decode":
                result["out"].append(_decode_line(line, static["task"]))
            elif mode == "filter":
                img = annotated_image_from_record(json.loads(line), static["sidecar"])
                kept, counts = filter_record(img, static["config"])
                result["counts"].update(counts)
                result["out"].append(dumps_record(annotated_image_to_record(kept)))
            elif mode == "stats":
                img = annotated_image_from_record(json.loads(line), static["sidecar"])
                result["stats"].add_record(img)
            else:  # validate
                annotated_image_from_record(json.loads(line), static["sidecar"])
                result["ok"] += 1
        except (LoctokError, ValueError) as exc:
            result["errors"].append((start + offset, str(exc)))
            result["skipped"] += 1
    return result


def _run_chunks(mode: str, static: dict, lines: list[str], jobs: int) -> list[dict]:
    chunks = _split_chunks(lines, jobs)
    worker = functools.partial(_chunk_worker, mode, static)
    if len(chunks) <= 1:
        return [worker(chunk) for chunk in chunks]
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        return list(pool.map(worker, chunks))


def _fold(results: list[dict], strict: bool, note: str = "skipped") -> dict:
    total: dict = {"out": [], "errors": [], "skipped": 0, "ok": 0}
    for r in results:
        total["out"].extend(r["out"])
        total["errors"].extend(r["errors"])
        total["skipped"] += r["skipped"]
        total["ok"] += r["ok"]
    if total["errors"] and strict:
        lineno, message = total["errors"][0]
        raise CliError(EXIT_INPUT, f"line {lineno}: {message}")
    for lineno, message in total["errors"]:
        print(f"line {lineno}: {note}: {message}", file=sys.stderr)
    return total


# ---------------------------------------------------------------------------
# Configuration

_FILTER_KEYS = frozenset(
    {
        "max_objects",
        "min_object_complexity",
        "min_action_complexity",
        "box_confidence_threshold",
        "nms_iou_threshold",
        "nms_class_aware",
        "phrase_confidence_threshold",
        "blacklist",
    }
)
_STATS_KEYS = frozenset({"heatmap_resolution"})
_RUN_KEYS = frozenset({"jobs", "strict"})
_TABLES = {"filter": _FILTER_KEYS, "stats": _STATS_KEYS, "run": _RUN_KEYS}

_UNSET = object()


def _load_config(path: Union[str, None]) -> dict:
    tables: dict = {name: {} for name in _TABLES}
    if path is None:
        return tables
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"cannot read config {path}: {exc}") from exc
    try:
        data = tomllib.loads(raw)
    except tomllib.TOMLDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"config {path}: {exc}") from exc
    for name, table in data.items():
        known = _TABLES.get(name)
        if known is None:
            raise CliError(EXIT_CONFIG, f"config {path}: unknown table [{name}]")
        if not isinstance(table, dict):
            raise CliError(EXIT_CONFIG, f"config {path}: [{name}] must be a table")
        unknown = sorted(set(table) - known)
        if unknown:
            raise CliError(EXIT_CONFIG, f"config {path}: unknown key {name}.{unknown[0]}")
        tables[name] = dict(table)
    return tables


def _pick(flag, table: dict, key: str, default):
    if flag is not None:
        return flag
    return table.get(key, default)


def _int_setting(value, what: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise CliError(EXIT_CONFIG, f"{what} must be an integer, got {value!r}")
    if value < minimum:
        raise CliError(EXIT_CONFIG, f"{what} must be >= {minimum}, got {value}")
    return value


def _resolve_jobs(args, config) -> int:
    return _int_setting(_pick(args.jobs, config["run"], "jobs", 1), "jobs", 1)


def _resolve_strict(args, config, default: bool) -> bool:
    value = _pick(args.strictness, config["run"], "strict", default)
    if not isinstance(value, bool):
        raise CliError(EXIT_CONFIG, f"run.strict must be a boolean, got {value!r}")
    return value


def _check_schema_version(args) -> None:
    if args.schema_version is not None and args.schema_version != SCHEMA_VERSION:
        raise CliError(
            EXIT_CONFIG,
            f"unsupported schema version {args.schema_version}; "
            f"this build reads {SCHEMA_VERSION}",
        )


def _parse_max_objects(value):
    if isinstance(value, str):
        if value.lower() == "none":
            return None
        raise CliError(EXIT_CONFIG, f'max_objects must be an integer or "none", got {value!r}')
    if isinstance(value, bool) or not isinstance(value, int):
        raise CliError(EXIT_CONFIG, f'max_objects must be an integer or "none", got {value!r}')
    return value


def _parse_blacklist(value):
    if isinstance(value, str):
        words = value.split(",")
    elif isinstance(value, list) and all(isinstance(w, str) for w in value):
        words = value
    else:
        raise CliError(EXIT_CONFIG, f"blacklist must be a list of strings, got {value!r}")
    return frozenset(w for w in (w.strip() for w in words) if w)


def _build_filter_config(args, config) -> FilterConfig:
    table = config["filter"]
    kwargs = {}
    for name in sorted(_FILTER_KEYS):
        value = getattr(args, name, None)
        if value is None:
            value = table.get(name, _UNSET)
        if value is _UNSET:
            continue
        if name == "max_objects":
            value = _parse_max_objects(value)
        elif name == "blacklist":
            value = _parse_blacklist(value)
        kwargs[name] = value
    try:
        return FilterConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"filter config: {exc}") from exc


def _load_sidecar_arg(path: Union[str, None]):
    if path is None:
        return None
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot read sidecar {path}: {exc}") from exc
    try:
        return load_sidecar(text)
    except LoctokError as exc:
        raise CliError(EXIT_INPUT, f"sidecar {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Commands


def _cmd_encode(args) -> int:
    return _run_codec_command(args, "encode")


def _cmd_decode(args) -> int:
    return _run_codec_command(args, "decode")


def _run_codec_command(args, mode: str) -> int:
    config = _load_config(args.config)
    _check_schema_version(args)
    strict = _resolve_strict(args, config, default=True)
    jobs = _resolve_jobs(args, config)
    lines = _read_lines(args.input)
    results = _run_chunks(mode, {"task": args.task}, lines, jobs)
    total = _fold(results, strict)
    _write_lines(args.output, total["out"])
    _emit_summary(
        {"records": len(total["out"]), "skipped_records": total["skipped"]},
        args.summary,
    )
    return EXIT_OK


def _cmd_filter(args) -> int:
    config = _load_config(args.config)
    _check_schema_version(args)
    strict = _resolve_strict(args, config, default=False)
    jobs = _resolve_jobs(args, config)
    filter_config = _build_filter_config(args, config)
    sidecar = _load_sidecar_arg(args.sidecar)
    lines = _read_lines(args.input)
    results = _run_chunks("filter", {"config": filter_config, "sidecar": sidecar}, lines, jobs)
    total = _fold(results, strict)
    counts = FilterCounts()
    for r in results:
        counts.update(r["counts"])
    _write_lines(args.output, total["out"])
    _emit_summary(
        {"counts": counts.as_dict(), "skipped_records": total["skipped"]},
        args.summary,
    )
    return EXIT_OK


def _load_corpus_table(
    lines: list[str], sidecar, strict: bool, label: str
) -> tuple[dict[str, AnnotatedImage], int]:
    table: dict[str, AnnotatedImage] = {}
    skipped = 0
    for lineno, line in enumerate(lines, start=1):
        try:
            img = annotated_image_from_record(json.loads(line), sidecar)
        except (LoctokError, ValueError) as exc:
            if strict:
                raise CliError(EXIT_INPUT, f"{label} line {lineno}: {exc}") from exc
            print(f"{label} line {lineno}: skipped: {exc}", file=sys.stderr)
            skipped += 1
            continue
        if img.id in table:
            raise CliError(EXIT_INPUT, f"{label}: duplicate record id {img.id!r}")
        table[img.id] = img
    return table, skipped


def _cmd_refine(args) -> int:
    config = _load_config(args.config)
    _check_schema_version(args)
    strict = _resolve_strict(args, config, default=False)
    filter_config = _build_filter_config(args, config)
    sidecar = _load_sidecar_arg(args.sidecar)

    originals, skipped_in = _load_corpus_table(
        _read_lines(args.input), sidecar, strict, args.input
    )
    refined, skipped_ref = _load_corpus_table(
        _read_lines(args.refined), sidecar, strict, args.refined
    )

    unmatched = [rid for rid in refined if rid not in originals]
    for rid in unmatched:
        print(f"refined record {rid!r} has no original; ignored", file=sys.stderr)

    out_lines: list[str] = []
    counts = FilterCounts()
    merge_failures = 0
    for rid, original in originals.items():
        partner = refined.get(rid)
        try:
            merged = (
                merge_annotations(original, partner, filter_config)
                if partner is not None
                else original
            )
        except MergeError as exc:
            if strict:
                raise CliError(EXIT_INPUT, f"record {rid!r}: {exc}") from exc
            print(f"record {rid!r}: merge failed: {exc}", file=sys.stderr)
            merge_failures += 1
            continue
        kept, record_counts = filter_record(merged, filter_config)
        counts.update(record_counts)
        out_lines.append(dumps_record(annotated_image_to_record(kept)))
    _write_lines(args.output, out_lines)
    _emit_summary(
        {
            "counts": counts.as_dict(),
            "skipped_records": skipped_in,
            "skipped_refined": skipped_ref,
            "merge_failures": merge_failures,
            "unmatched_refined": len(unmatched),
        },
        args.summary,
    )
    return EXIT_OK


def _write_stats_csvs(stats: CorpusStats, csv_dir: str) -> None:
    out = Path(csv_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for source in SPATIAL_SOURCES:
            spatial = stats.spatial[source]
            (out / f"{source}_area.csv").write_text(
                histogram_csv(spatial.area), encoding="utf-8"
            )
            (out / f"{source}_aspect.csv").write_text(
                histogram_csv(spatial.aspect), encoding="utf-8"
            )
            (out / f"{source}_heatmap.csv").write_text(
                heatmap_csv(spatial.heatmap), encoding="utf-8"
            )
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot write CSVs to {csv_dir}: {exc}") from exc


def _cmd_stats(args) -> int:
    config = _load_config(args.config)
    _check_schema_version(args)
    strict = _resolve_strict(args, config, default=False)
    jobs = _resolve_jobs(args, config)
    resolution = _int_setting(
        _pick(
            args.heatmap_resolution,
            config["stats"],
            "heatmap_resolution",
            DEFAULT_HEATMAP_RESOLUTION,
        ),
        "heatmap_resolution",
        1,
    )
    sidecar = _load_sidecar_arg(args.sidecar)
    lines = _read_lines(args.input)
    results = _run_chunks("stats", {"sidecar": sidecar, "resolution": resolution}, lines, jobs)
    total = _fold(results, strict)
    stats = CorpusStats(heatmap_resolution=resolution)
    for r in results:
        stats.merge(r["stats"])
    doc = stats.as_dict()
    doc["skipped_records"] = total["skipped"]
    _write_text(args.output, json.dumps(doc, sort_keys=True, indent=2) + "\n")
    if args.csv_dir is not None:
        _write_stats_csvs(stats, args.csv_dir)
    _emit_summary(
        {"records": stats.records, "skipped_records": total["skipped"]},
        args.summary,
    )
    return EXIT_OK


def _cmd_validate(args) -> int:
    config = _load_config(args.config)
    _check_schema_version(args)
    strict = _resolve_strict(args, config, default=False)
    jobs = _resolve_jobs(args, config)
    sidecar = _load_sidecar_arg(args.sidecar)
    lines = _read_lines(args.input)
    results = _run_chunks("validate", {"sidecar": sidecar}, lines, jobs)
    total = _fold(results, strict, note="invalid")
    _emit_summary(
        {"records": total["ok"], "invalid_records": total["skipped"]},
        args.summary,
    )
    return EXIT_OK if total["skipped"] == 0 else EXIT_INPUT


# ---------------------------------------------------------------------------
# Argument parsing


def _max_objects_flag(text: str):
    if text.lower() == "none":
        return "none"
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or 'none', got {text!r}")


def _add_io_flags(sp, with_output: bool = True) -> None:
    sp.add_argument(
        "--input", default="-", metavar="PATH",
        help="input JSONL; '-' reads standard input (default)",
    )
    if with_output:
        sp.add_argument(
            "--output", default="-", metavar="PATH",
            help="output path; '-' writes standard output (default)",
        )
    sp.add_argument("--config", metavar="PATH", help="TOML config file; flags override it")
    sp.add_argument("--jobs", type=int, metavar="N", help="worker processes (default 1)")
    mode = sp.add_mutually_exclusive_group()
    mode.add_argument(
        "--strict", dest="strictness", action="store_const", const=True,
        help="stop at the first bad line",
    )
    mode.add_argument(
        "--lenient", dest="strictness", action="store_const", const=False,
        help="skip bad lines, report and count them",
    )
    sp.add_argument(
        "--schema-version", type=int, metavar="N",
        help=f"expected corpus schema version (default {SCHEMA_VERSION})",
    )
    sp.add_argument(
        "--summary", metavar="PATH",
        help="write the run summary JSON here instead of standard error",
    )
    sp.set_defaults(strictness=None)


def _add_sidecar_flag(sp) -> None:
    sp.add_argument(
        "--sidecar", metavar="PATH",
        help=".conllu parses for records that reference them",
    )


def _add_filter_flags(sp) -> None:
    _add_sidecar_flag(sp)
    sp.add_argument(
        "--max-objects", type=_max_objects_flag, metavar="N",
        help="drop texts naming more than N objects; 'none' disables the gate",
    )
    sp.add_argument(
        "--min-object-complexity", type=float, metavar="X",
        help="minimum mean dependency degree over a text's objects",
    )
    sp.add_argument(
        "--min-action-complexity", type=float, metavar="X",
        help="minimum mean dependency degree over a text's actions",
    )
    sp.add_argument(
        "--box-confidence-threshold", type=float, metavar="X",
        help="drop region-text pairs scoring below X",
    )
    sp.add_argument(
        "--nms-iou-threshold", type=float, metavar="X",
        help="suppression overlap for the region gate",
    )
    aware = sp.add_mutually_exclusive_group()
    aware.add_argument(
        "--nms-class-aware", dest="nms_class_aware", action="store_const", const=True,
        help="suppress only within a class (default)",
    )
    aware.add_argument(
        "--nms-class-unaware", dest="nms_class_aware", action="store_const", const=False,
        help="suppress across classes",
    )
    sp.add_argument(
        "--phrase-confidence-threshold", type=float, metavar="X",
        help="drop phrase-region triplets scoring below X",
    )
    sp.add_argument(
        "--blacklist", metavar="WORDS",
        help="comma-separated phrase blacklist; replaces the default list",
    )
    sp.set_defaults(nms_class_aware=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loctok",
        description="Location-token codec and annotation pipeline over JSONL corpora.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    task_values = sorted(t.value for t in Task)

    sp = sub.add_parser("encode", help="structured records to prompt and token text")
    _add_io_flags(sp)
    sp.add_argument(
        "--task", choices=task_values, metavar="TASK",
        help="task for records that do not carry one; must match records that do",
    )
    sp.set_defaults(func=_cmd_encode)

    sp = sub.add_parser("decode", help="prompt and token text back to structured records")
    _add_io_flags(sp)
    sp.add_argument(
        "--task", choices=task_values, metavar="TASK",
        help="task for records that do not carry one; must match records that do",
    )
    sp.set_defaults(func=_cmd_decode)

    sp = sub.add_parser("filter", help="apply the cleaning gates to a corpus")
    _add_io_flags(sp)
    _add_filter_flags(sp)
    sp.set_defaults(func=_cmd_filter)

    sp = sub.add_parser("refine", help="fold refined records into originals, then filter")
    _add_io_flags(sp)
    _add_filter_flags(sp)
    sp.add_argument("--refined", required=True, metavar="PATH", help="refined records JSONL")
    sp.set_defaults(func=_cmd_refine)

    sp = sub.add_parser("stats", help="corpus statistics as JSON, with optional CSVs")
    _add_io_flags(sp)
    _add_sidecar_flag(sp)
    sp.add_argument(
        "--heatmap-resolution", type=int, metavar="G",
        help=f"center heatmap grid size (default {DEFAULT_HEATMAP_RESOLUTION})",
    )
    sp.add_argument(
        "--csv-dir", metavar="DIR",
        help="also write per-source histogram and heatmap CSVs here",
    )
    sp.set_defaults(func=_cmd_stats)

    sp = sub.add_parser("validate", help="check records against the corpus schema")
    _add_io_flags(sp, with_output=False)
    _add_sidecar_flag(sp)
    sp.set_defaults(func=_cmd_validate)

    return parser


def main(argv: Union[list, None] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse has already written its message
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"loctok {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except BrokenPipeError:
        return EXIT_INPUT
