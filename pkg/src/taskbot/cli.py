"""Command line entry points: serve the API, chat in a terminal REPL, run
offline evaluations, and build the extractive QA dataset.

Exit codes: 0 success, 2 for missing inputs or malformed data.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .action_dsl import DEFAULT_ACTION_SPACE, ActionSpace
from .config import ConfigError, build_orchestrator, load_config
from .evals import build_wote, eval_ndp, eval_qa
from .taskgraph import SchemaError


def _read_jsonl(path: str) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}")
    return records


def _read_action_lines(path: str, key: str) -> list[str]:
    """Action strings from a file: JSON strings, objects with ``key`` (or
    "action"), or plain text lines."""
    actions = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                actions.append(line)
                continue
            if isinstance(obj, str):
                actions.append(obj)
            elif isinstance(obj, dict):
                value = obj.get(key, obj.get("action"))
                if not isinstance(value, str):
                    raise ValueError(f"{path}:{lineno}: no {key!r} string in record")
                actions.append(value)
            else:
                raise ValueError(f"{path}:{lineno}: expected a string or object")
    return actions


def _write_report(report: dict, out: str | None) -> None:
    text = json.dumps(report, ensure_ascii=False, indent=2)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _load_orchestrator(config_path: str | None):
    if config_path:
        config = load_config(config_path)
        return config, build_orchestrator(config)
    config = load_config()
    if not Path(config.catalog_dir).is_dir():
        print(f"note: no catalog at {config.catalog_dir}, starting empty", file=sys.stderr)
        return config, build_orchestrator(config, catalog=[])
    return config, build_orchestrator(config)


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    config, orchestrator = _load_orchestrator(args.config)
    host = args.host or config.host
    port = args.port or config.port
    app = create_app(orchestrator)
    uvicorn.run(app, host=host, port=port, log_level="info")
    return 0


def _cmd_repl(args) -> int:
    _, orchestrator = _load_orchestrator(args.config)
    session_id = orchestrator.create_session()
    print("Connected. Ask me to search for a recipe or DIY project. Ctrl-D to quit.")
    while True:
        try:
            line = input("you> ")
        except (EOFError, KeyboardInterrupt):
            print()
            return 0
        if not line.strip():
            continue
        result = orchestrator.handle_utterance(session_id, line)
        if args.debug:
            annotation = result.action if result.action else f"({result.route})"
            print(f">> {annotation}")
        print(f"bot> {result.response}")
        if result.action_name == "stop":
            return 0


def _cmd_eval_ndp(args) -> int:
    if args.records:
        records = _read_jsonl(args.records)
    else:
        preds = _read_action_lines(args.pred, "predicted_action")
        golds = _read_action_lines(args.gold, "gold_action")
        if len(preds) != len(golds):
            raise ValueError(
                f"prediction/gold length mismatch: {len(preds)} vs {len(golds)}"
            )
        records = [
            {"id": i + 1, "gold_action": gold, "predicted_action": pred}
            for i, (gold, pred) in enumerate(zip(golds, preds))
        ]
    space = DEFAULT_ACTION_SPACE
    if args.space:
        space = ActionSpace.from_config_text(Path(args.space).read_text(encoding="utf-8"))
    _write_report(eval_ndp(records, space), args.out)
    return 0


def _cmd_eval_qa(args) -> int:
    records = _read_jsonl(args.records)
    for i, record in enumerate(records):
        if "prediction" not in record or "reference" not in record:
            raise ValueError(f"record {i} missing prediction/reference")
    _write_report(eval_qa(records), args.out)
    return 0


def _gather_wote_records(input_path: str) -> list[dict]:
    """Raw annotation records from a file or a directory of files.

    Files may be a JSON list, a single JSON object, or JSON lines.
    """
    path = Path(input_path)
    if path.is_dir():
        files = sorted(
            p for p in path.iterdir() if p.suffix in (".json", ".jsonl") and p.is_file()
        )
        if not files:
            raise FileNotFoundError(f"no .json or .jsonl files in {path}")
    elif path.is_file():
        files = [path]
    else:
        raise FileNotFoundError(f"input not found: {path}")
    records: list[dict] = []
    for file in files:
        text = file.read_text(encoding="utf-8").strip()
        if not text:
            continue
        if file.suffix == ".jsonl":
            records.extend(_read_jsonl(str(file)))
            continue
        doc = json.loads(text)
        if isinstance(doc, list):
            records.extend(doc)
        elif isinstance(doc, dict):
            records.append(doc)
        else:
            raise ValueError(f"{file}: expected a JSON list or object")
    return records


def _cmd_wote_build(args) -> int:
    records = _gather_wote_records(args.input)
    dataset, report = build_wote(records)
    with open(args.out, "w", encoding="utf-8") as fh:
        for record in dataset:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    print(f"initial: {report['initial']}")
    for entry in report["stages"]:
        print(f"{entry['stage']}: {entry['kept']}")
    if report["errors"]:
        print(f"skipped {len(report['errors'])} records with errors", file=sys.stderr)
    print(f"wrote {len(dataset)} records to {args.out}")
    if args.report:
        Path(args.report).write_text(
            json.dumps(report, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tbf", description="Task assistant toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP API")
    serve.add_argument("--config", help="JSON config file")
    serve.add_argument("--host")
    serve.add_argument("--port", type=int)
    serve.set_defaults(func=_cmd_serve)

    repl = sub.add_parser("repl", help="chat in the terminal")
    repl.add_argument("--config", help="JSON config file")
    repl.add_argument("--debug", action="store_true", help="show decoded action codes")
    repl.set_defaults(func=_cmd_repl)

    ev = sub.add_parser("eval", help="offline evaluation")
    ev_sub = ev.add_subparsers(dest="eval_command", required=True)
    ndp = ev_sub.add_parser("ndp", help="score predicted action codes")
    ndp.add_argument("--records", help="JSONL with gold_action/predicted_action records")
    ndp.add_argument("--pred", help="file of predicted actions, one per line")
    ndp.add_argument("--gold", help="file of gold actions, one per line")
    ndp.add_argument("--space", help="action space config file")
    ndp.add_argument("--out", help="write the report here instead of stdout")
    ndp.set_defaults(func=_cmd_eval_ndp)
    qa = ev_sub.add_parser("qa", help="score answers")
    qa.add_argument("--records", required=True, help="JSONL with prediction/reference records")
    qa.add_argument("--out", help="write the report here instead of stdout")
    qa.set_defaults(func=_cmd_eval_qa)

    wote = sub.add_parser("wote", help="dataset builds")
    wote_sub = wote.add_subparsers(dest="wote_command", required=True)
    build = wote_sub.add_parser("build", help="filter annotations into a QA dataset")
    build.add_argument(
        "--input", required=True, help="annotation file or directory of files"
    )
    build.add_argument("--out", required=True, help="dataset JSONL output path")
    build.add_argument("--report", help="also write the stage report JSON here")
    build.set_defaults(func=_cmd_wote_build)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "eval" and args.eval_command == "ndp":
        if not args.records and not (args.pred and args.gold):
            parser.error("eval ndp needs --records or both --pred and --gold")
    try:
        return args.func(args)
    except (FileNotFoundError, ConfigError, SchemaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
