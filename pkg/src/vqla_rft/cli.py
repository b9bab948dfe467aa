"""``vqla`` command-line entry point.

Exit codes: 0 success, 1 validation failure, 2 IO or endpoint failure,
64 unknown command or bad usage.  Failures are reported on stderr as one JSON
object.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .config import RunConfig, resolve
from .dataset import (
    ExportStage,
    RecordKind,
    dataset_stats,
    export_training_file,
    iter_jsonl,
    load_records,
    sequence_of,
    split_dataset,
    validate_record,
)
from .errors import ConfigError, IdMismatch, InvalidField, IoFailure, MissingField, UnknownCommand, VqlaError
from .geometry import ImageDims

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_USAGE = 0, 1, 2, 64


class UsageError(VqlaError):
    exit_code = EXIT_USAGE


class ValidationFailed(VqlaError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message, usage=self.format_usage().strip())


# --- output helpers ----------------------------------------------------------

def _dump(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _write_text(path: str | Path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror or exc}", path=str(path)) from exc


def meta_path(out: str | Path) -> Path:
    return Path(f"{out}.meta.json")


def write_meta(out: str | Path, command: str, rc: RunConfig, **extra: Any) -> None:
    """Echo the resolved configuration next to a JSONL artifact."""
    _write_text(meta_path(out), _dump({"command": command, "version": __version__,
                                       "config": rc.to_json(), **extra}))


def _dims(rc: RunConfig, section: str) -> ImageDims | None:
    w, h = rc.get(section, "width"), rc.get(section, "height")
    if w is None and h is None:
        return None
    if w is None or h is None:
        raise ConfigError("give both width and height or neither")
    return ImageDims(w, h)


def _overrides(pairs: Sequence[str] | None) -> dict[str, str]:
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _config(args, flags: dict[str, Any], **paths) -> RunConfig:
    merged = {**_overrides(args.set), **{k: v for k, v in flags.items() if v is not None}}
    if args.seed is not None:
        merged["run.seed"] = args.seed
    return resolve(args.config, merged, paths)


# --- commands ----------------------------------------------------------------

def cmd_validate(args) -> int:
    rc = _config(args, {"dataset.width": args.width, "dataset.height": args.height}, input=args.input)
    dims = _dims(rc, "dataset")
    failures, n = [], 0
    try:
        for _, raw in iter_jsonl(args.input):
            n += 1
            try:
                validate_record(raw, dims, require_cot=not args.allow_stripped_cot)
            except VqlaError as exc:
                failures.append(exc.to_dict())
    except InvalidField as exc:  # unparseable line
        failures.append(exc.to_dict())
    if failures:
        raise ValidationFailed(f"{len(failures)} of {n} records failed validation",
                               failures=failures)
    print(_dump({"n_records": n, "n_invalid": 0}), end="")
    return EXIT_OK


def cmd_stats(args) -> int:
    rc = _config(args, {}, input=args.input, out=args.out)
    stats = dataset_stats(load_records(args.input, require_cot=not args.allow_stripped_cot))
    text = _dump({**stats.to_json(), "config": rc.to_json()})
    if args.out:
        _write_text(args.out, text)
    print(text, end="")
    return EXIT_OK


def cmd_split(args) -> int:
    rc = _config(args, {"dataset.sft_fraction": args.sft_fraction, "dataset.split_by": args.split_by,
                        "dataset.width": args.width, "dataset.height": args.height},
                 input=args.input, out_sft=args.out_sft, out_rft=args.out_rft)
    split_by = rc.get("dataset", "split_by")
    if split_by not in ("record", "sequence"):
        raise ConfigError(f"split_by must be 'record' or 'sequence', got {split_by!r}")
    records = load_records(args.input, _dims(rc, "dataset"))
    group_key = (lambda r: sequence_of(r.image_id)) if split_by == "sequence" else None
    sft, rft = split_dataset(records, rc.get("dataset", "sft_fraction"), rc.get("run", "seed"), group_key)
    export_training_file(sft, ExportStage.SFT, args.out_sft)
    export_training_file(rft, ExportStage.RFT, args.out_rft)
    summary = {
        "n_sft": len(sft),
        "n_sft_cot": sum(r.kind is RecordKind.COT for r in sft),
        "n_rft": len(rft),
    }
    write_meta(args.out_sft, "split", rc, stage="SFT", summary=summary)
    write_meta(args.out_rft, "split", rc, stage="RFT", summary=summary)
    print(_dump(summary), end="")
    return EXIT_OK


def cmd_forge(args) -> int:
    from .forge import FrameAnnotation, GenerationEndpointConfig, forge_records

    rc = _config(args, {"forge.endpoint": args.endpoint, "forge.model": args.model,
                        "forge.max_inflight": args.max_inflight},
                 annotations=args.annotations, out=args.out, audit=args.audit)
    f = rc.values["forge"]
    if not f["endpoint"] or not f["model"]:
        raise ConfigError("forge needs an endpoint and a model (flags or [forge] section)")
    endpoint = GenerationEndpointConfig(f["endpoint"], f["model"], f["api_key_env"], f["temperature"],
                                        f["timeout"], f["max_attempts"], f["backoff_base"])
    annotations = [FrameAnnotation.from_json(raw) for _, raw in iter_jsonl(args.annotations)]
    records = forge_records(annotations, endpoint, args.audit, f["max_inflight"])
    export_training_file(records, ExportStage.SFT, args.out)
    stats = dataset_stats(records)
    write_meta(args.out, "forge", rc, stats=stats.to_json())
    print(_dump({"n_annotations": len(annotations), **stats.to_json()}), end="")
    return EXIT_OK


def _join(pred_ids: list[str], truth_ids: list[str]) -> None:
    missing = sorted(set(truth_ids) - set(pred_ids))
    unknown = sorted(set(pred_ids) - set(truth_ids))
    if missing or unknown:
        raise IdMismatch(missing, unknown)


def cmd_score(args) -> int:
    from .dataset import write_jsonl
    from .parsing import parse_trace
    from .rewards import composite_reward

    rc = _config(args, {"reward.tau": args.tau, "reward.w_vg": args.w_vg, "reward.w_la": args.w_la,
                        "reward.w_mc": args.w_mc, "env.width": args.width, "env.height": args.height},
                 pred=args.pred, gt=args.gt, out=args.out)
    cfg, dims = rc.reward(), rc.env().dims
    truths = load_records(args.gt, require_cot=False)
    traces = {}
    for lineno, raw in iter_jsonl(args.pred):
        if not isinstance(raw, dict) or not isinstance(raw.get("id"), str):
            raise MissingField(f"{args.pred}:{lineno}: prediction needs a string 'id'", None, "id")
        if not isinstance(raw.get("trace_text"), str):
            raise MissingField("prediction needs a string 'trace_text'", raw["id"], "trace_text")
        traces[raw["id"]] = raw["trace_text"]
    _join(list(traces), [t.id for t in truths])

    rows = []
    for t in truths:
        b = composite_reward(parse_trace(traces[t.id]), t, cfg, dims)
        rows.append({"id": t.id, **b.to_json()})
    write_jsonl(rows, args.out)

    def mean_where(key, flag):
        vals = [r[key] for r in rows if r[flag]]
        return math.fsum(vals) / len(vals) if vals else None

    aggregate = {
        "n": len(rows),
        "mean_composite": math.fsum(r["composite"] for r in rows) / len(rows) if rows else None,
        "mean_r_vg": mean_where("r_vg", "applies_vg"),
        "mean_r_la": mean_where("r_la", "applies_la"),
        "mean_r_mc": mean_where("r_mc", "applies_mc"),
    }
    write_meta(args.out, "score", rc, aggregate=aggregate)
    print(_dump(aggregate), end="")
    return EXIT_OK


def cmd_train_toy(args) -> int:
    from .sim import build_policy, params_to_json, run_rft

    # output paths stay out of the echo so reruns to other files are byte-identical
    rc = _config(args, {"grpo.iterations": args.iterations, "reward.w_mc": args.w_mc})
    env, grpo, reward = rc.env(), rc.grpo(), rc.reward()
    report = run_rft(env, grpo, reward)
    report.header["config"] = rc.to_json()
    _write_text(args.out_report, report.to_jsonl())
    if args.out_params:
        _write_text(args.out_params, _dump({**params_to_json(build_policy(env), report.final_params),
                                            "config": rc.to_json()}))
    n = min(200, len(report.rows))
    summary = {
        "iterations": len(report.rows),
        "max_composite": report.header["max_composite"],
        "iter0_mean_reward": report.rows[0]["mean_reward"] if report.rows else None,
        f"final{n}_mean_reward": report.tail_mean("mean_reward", n) if n else None,
        f"final{n}_mismatch_rate": report.tail_mean("mismatch_rate", n) if n else None,
    }
    print(_dump(summary), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import eval_report

    rc = _config(args, {}, pred=args.pred, gt=args.gt, out=args.out)
    report = eval_report(args.pred, args.gt).to_json()
    text = _dump({**report, "config": rc.to_json()})
    if args.out:
        _write_text(args.out, text)
    print(_dump({k: report[k] for k in ("acc", "f_score", "miou", "n")}), end="")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "stats": cmd_stats,
    "split": cmd_split,
    "forge": cmd_forge,
    "score": cmd_score,
    "train-toy": cmd_train_toy,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help="run seed ([run] seed)")
    common.add_argument("--config", help="INI config file")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override any config key (repeatable)")

    parser = _Parser(prog="vqla", description="Surgical VQLA dataset, reward and RFT tooling.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", parents=[common], help="check every record of a JSONL file")
    p.add_argument("--input", required=True)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--allow-stripped-cot", action="store_true",
                   help="accept CoT records with cot=null (RFT exports)")

    p = sub.add_parser("stats", parents=[common], help="count records by kind and question type")
    p.add_argument("--input", required=True)
    p.add_argument("--out")
    p.add_argument("--allow-stripped-cot", action="store_true")

    p = sub.add_parser("split", parents=[common], help="partition into SFT and RFT exports")
    p.add_argument("--input", required=True)
    p.add_argument("--sft-fraction", type=float)
    p.add_argument("--split-by", choices=("record", "sequence"))
    p.add_argument("--out-sft", required=True)
    p.add_argument("--out-rft", required=True)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)

    p = sub.add_parser("forge", parents=[common], help="generate CoT and sub-QA records from annotations")
    p.add_argument("--annotations", required=True)
    p.add_argument("--endpoint")
    p.add_argument("--model")
    p.add_argument("--out", required=True)
    p.add_argument("--audit", required=True)
    p.add_argument("--max-inflight", type=int)

    p = sub.add_parser("score", parents=[common], help="reward rollout traces against ground truth")
    p.add_argument("--pred", required=True, help="JSONL with id, trace_text")
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float)
    p.add_argument("--w-vg", type=float)
    p.add_argument("--w-la", type=float)
    p.add_argument("--w-mc", type=float)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)

    p = sub.add_parser("train-toy", parents=[common], help="run GRPO on the synthetic scene environment")
    p.add_argument("--out-report", required=True)
    p.add_argument("--out-params")
    p.add_argument("--iterations", type=int)
    p.add_argument("--w-mc", type=float)

    p = sub.add_parser("eval", parents=[common], help="accuracy, macro F-score and mIoU")
    p.add_argument("--pred", required=True, help="JSONL with id, answer, bbox")
    p.add_argument("--gt", required=True)
    p.add_argument("--out")
    return parser


def dispatch(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        first = next((a for a in argv if not a.startswith("-")), None)
        if first is not None and first not in COMMANDS and argv[0] == first:
            raise UnknownCommand(f"unknown command {first!r}", known=sorted(COMMANDS))
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except VqlaError as exc:
        print(json.dumps(exc.to_dict(), ensure_ascii=False, default=str), file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:  # config values rejected by a dataclass
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(dispatch())
