"""Command-line pipeline: infer-schema, materialize, train, evaluate, export-embeddings.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 IO or
network error.  All paths are deterministic given the inputs and the seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .cache import cache_load, cache_save, content_key
from .embedders import EmbedderRegistry, EmbedderSpec, make_embedder
from .errors import (
    BadMagicError,
    CorruptError,
    EmbedTimeoutError,
    HttpError,
    KeyMismatchError,
    TabframeError,
    VersionMismatchError,
)
from .materialize import DEFAULT_LIST_SEPARATOR, infer_schema, materialize, read_csv
from .model import ModelConfig, TabularModel, model_from_checkpoint, save_checkpoint
from .stypes import TaskType, load_schema, save_schema
from .train import (
    TrainConfig,
    export_row_embeddings,
    mae,
    roc_auc,
    train,
    write_history_csv,
)

API_KEY_ENV = "TABFRAME_API_KEY"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabframe",
        description="Multi-modal tabular deep learning pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("infer-schema", help="infer semantic types from a CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target", default=None, help="target column (default: last column)")
    p.add_argument("--list-separator", default=DEFAULT_LIST_SEPARATOR)

    p = sub.add_parser("materialize", help="convert a CSV into a cached tensor frame")
    p.add_argument("--csv", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--list-separator", default=DEFAULT_LIST_SEPARATOR)
    p.add_argument("--embed-kind", choices=["hash_stub", "http"], default="hash_stub")
    p.add_argument("--embed-dim", type=int, default=16)
    p.add_argument("--embed-endpoint", default=None)
    p.add_argument("--embed-model", default=None)

    p = sub.add_parser("train", help="train a model on a cached frame")
    p.add_argument("--cache", required=True)
    p.add_argument("--model-config", required=True)
    p.add_argument("--train-config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides the train-config seed")

    p = sub.add_parser("evaluate", help="print the task metric of a checkpoint on a frame")
    p.add_argument("--cache", required=True)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("export-embeddings", help="write pre-head row embeddings")
    p.add_argument("--cache", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)

    return parser


def _load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _cmd_infer_schema(args) -> int:
    table = read_csv(args.csv)
    schema = infer_schema(table, target=args.target, list_separator=args.list_separator)
    save_schema(schema, args.out)
    print(f"wrote schema with {len(schema.columns)} columns to {args.out}")
    return 0


def _build_embedder_registry(args) -> tuple[EmbedderRegistry, str]:
    spec = EmbedderSpec(
        kind=args.embed_kind,
        dim=args.embed_dim,
        endpoint=args.embed_endpoint,
        model=args.embed_model,
        api_key_env=API_KEY_ENV if args.embed_kind == "http" else None,
    )
    return EmbedderRegistry(default=make_embedder(spec)), spec.identifier


def _cmd_materialize(args) -> int:
    csv_bytes = Path(args.csv).read_bytes()
    schema_bytes = Path(args.schema).read_bytes()
    registry, embedder_id = _build_embedder_registry(args)
    key = content_key(csv_bytes, schema_bytes, embedder_id, args.list_separator)

    if Path(args.cache).exists():
        try:
            cache_load(args.cache, expected_key=key)
        except (KeyMismatchError, BadMagicError, VersionMismatchError, CorruptError):
            pass  # stale or damaged: fall through and re-materialize
        else:
            print(f"cache hit: reusing materialized frame from {args.cache}")
            return 0

    table = read_csv(args.csv)
    schema = load_schema(args.schema)
    frame = materialize(table, schema, registry, list_separator=args.list_separator)
    cache_save(frame, args.cache, key=key)
    print(f"materialized {frame.num_rows} rows, {frame.num_feature_columns} columns -> {args.cache}")
    return 0


def _task_head(task: TaskType | None) -> str:
    return "regression" if task is TaskType.regression else "logit"


def _cmd_train(args) -> int:
    frame = cache_load(args.cache)
    model_obj = _load_json(args.model_config)
    if "head" not in model_obj:
        model_obj["head"] = _task_head(frame.schema.task)
    model_config = ModelConfig.from_dict(model_obj)
    train_obj = _load_json(args.train_config)
    if args.seed is not None:
        train_obj["seed"] = args.seed
    train_config = TrainConfig.from_dict(train_obj)

    model = TabularModel.build(model_config, frame, seed=train_config.seed)
    result = train(model, frame, frame.schema, train_config)
    model.load_snapshot(result.best_params)
    save_checkpoint(
        model,
        args.out,
        extra={
            "seed": train_config.seed,
            "best_epoch": result.best_epoch,
            "best_metric": result.best_metric,
            "metric_name": result.metric_name,
        },
    )
    history_path = str(args.out) + ".history.csv"
    write_history_csv(result.history, history_path)
    print(
        f"trained {train_config.epochs} epochs; best {result.metric_name}="
        f"{result.best_metric!r} at epoch {result.best_epoch}; "
        f"checkpoint -> {args.out}, history -> {history_path}"
    )
    return 0


def _cmd_evaluate(args) -> int:
    frame = cache_load(args.cache)
    if frame.target is None:
        raise TabframeError("cached frame carries no target column; cannot evaluate")
    model = model_from_checkpoint(args.checkpoint, frame)
    _, pred = model.forward(frame)
    if pred is None:
        raise TabframeError("checkpoint has no prediction head; cannot evaluate")
    if frame.schema.task is TaskType.regression:
        value = mae(pred.data, frame.target)
    else:
        value = roc_auc(pred.data, frame.target)
    print(f"metric={value!r}")
    return 0


def _cmd_export_embeddings(args) -> int:
    frame = cache_load(args.cache)
    model = model_from_checkpoint(args.checkpoint, frame)
    z = export_row_embeddings(model, frame, args.out)
    print(f"wrote row embeddings [{z.shape[0]}, {z.shape[1]}] to {args.out}")
    return 0


_COMMANDS = {
    "infer-schema": _cmd_infer_schema,
    "materialize": _cmd_materialize,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "export-embeddings": _cmd_export_embeddings,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the message
        return 0 if exc.code == 0 else 1
    try:
        return _COMMANDS[args.command](args)
    except (HttpError, EmbedTimeoutError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (TabframeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # malformed input must never escape as a traceback
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


#: Spec-facing alias: run the CLI on an argv list, returning the exit code.
run_cli = main


def app() -> None:
    sys.exit(main())


if __name__ == "__main__":
    app()
