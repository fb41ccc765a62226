"""Command-line front end.

Every command that writes results appends one run record (resolved config,
input digests, report) to a JSON Lines log so the run can be replayed.

Exit codes: 0 success, 1 validation error, 2 I/O or gateway error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import sys
import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import agreement, corpus, evalx, markup, promptkit, textsim, tokenlab
from ._rand import digest64
from .llmgateway import DEFAULT_API_KEY_ENV, Gateway, GatewayConfig, GatewayError, RemoteEmbedder
from .markup import Mode

log = logging.getLogger("csk")

DEFAULT_RUNS_LOG = "csk_runs.jsonl"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# -- helpers ----------------------------------------------------------------

def _file_digests(paths: Sequence[str | Path]) -> dict[str, str]:
    out = {}
    for p in paths:
        p = Path(p)
        files = sorted(p.glob("*.txt")) if p.is_dir() else [p]
        for f in files:
            out[str(f)] = digest64(f.read_bytes())
    return out


def _write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    if path.parent:
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _write_json(path: str | Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def _read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _load_corpus(paths: Sequence[str], mode: Mode | str = Mode.LENIENT) -> list[corpus.CorpusRecord]:
    """Tagged text files/directories, or JSONL corpora from a previous run."""
    records: list[corpus.CorpusRecord] = []
    for p in paths:
        if p.endswith(".jsonl"):
            with open(p, encoding="utf-8") as fh:
                records.extend(corpus.read_jsonl(fh))
        else:
            records.extend(corpus.build_corpus(corpus.load_documents([p]), mode))
    return records


def _gateway_config(args) -> GatewayConfig:
    if not args.base_url or not args.model:
        raise ValueError("--base-url and --model are required for gateway access")
    return GatewayConfig(
        base_url=args.base_url,
        model_name=args.model,
        api_key_env=args.api_key_env,
        temperature=args.temperature,
        max_output_tokens=args.max_output_tokens,
        timeout=args.timeout,
        max_retries=args.max_retries,
        max_in_flight=args.max_in_flight,
        embedding_model=args.embedding_model,
        cache_path=args.cache,
    )


def _resolved_config(args) -> dict:
    cfg = {}
    for k, v in sorted(vars(args).items()):
        if k in ("func", "config"):
            continue
        cfg[k] = v
    return cfg


def _write_run(args, inputs: Sequence[str], report) -> None:
    record = {
        "run_id": str(uuid.uuid4()),
        "command": args.command,
        "config": _resolved_config(args),
        "inputs": _file_digests(inputs),
        "report": report,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    path = Path(args.runs_log)
    if path.parent:
        path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")


# -- commands ---------------------------------------------------------------

def cmd_parse(args) -> int:
    mode = Mode(args.mode)
    out = []
    n_diag = 0
    records = []
    for doc_id, text in corpus.load_documents(args.inputs):
        for idx, raw in enumerate(corpus.segment_sentences(text)):
            sid = f"{doc_id}:{idx}"
            try:
                sentence, diags = markup.parse_sentence(raw, mode, sid)
            except markup.MarkupError as exc:
                raise ValueError(f"{doc_id}, sentence {idx}: {exc}") from exc
            n_diag += len(diags)
            for d in diags:
                print(f"{sid}: {d.severity.value}: {d.code.value} at {d.offset}: {d.message}", file=sys.stderr)
            rec = sentence.to_dict(diags)
            rec["doc_id"] = doc_id
            out.append(rec)
            records.append(corpus.CorpusRecord(doc_id, sentence))
    _write_json(args.out, {"sentences": out})
    if args.corpus_out:
        buf = io.StringIO()
        corpus.write_jsonl(records, buf)
        _write_text(args.corpus_out, buf.getvalue())
    summary = {
        "sentences": len(out),
        "causal": sum(1 for r in records if r.is_causal),
        "phrases": sum(len(r.sentence.phrases) for r in records),
        "diagnostics": n_diag,
    }
    _write_run(args, args.inputs, summary)
    return 0


def cmd_tokens(args) -> int:
    records = _load_corpus(args.inputs)
    if args.causal_only:
        records = [r for r in records if r.is_causal]
    seqs = [tokenlab.to_token_labels(r.sentence) for r in records]
    seqs = [s for s in seqs if len(s)]
    buf = io.StringIO()
    tokenlab.write_conll(seqs, buf)
    _write_text(args.out, buf.getvalue())
    _write_run(args, args.inputs, {"sentences": len(seqs), "tokens": sum(len(s) for s in seqs)})
    return 0


def cmd_split(args) -> int:
    if (args.test_fraction is None) == (args.k is None):
        raise ValueError("give exactly one of --test-fraction or --k")
    records = _load_corpus(args.inputs)
    if args.causal_only:
        records = [r for r in records if r.is_causal]
    mode = corpus.Holdout(args.test_fraction) if args.test_fraction is not None else corpus.KFold(args.k)
    spec = corpus.SplitSpec(args.seed, mode, args.group_by_doc)
    manifest = corpus.split_manifest(records, spec)
    manifest["sentence_ids"] = [r.sentence.sentence_id for r in records]
    _write_json(args.out, manifest)
    _write_run(args, args.inputs, {name: len(idx) for name, idx in manifest["partitions"].items()})
    return 0


def cmd_agreement(args) -> int:
    a = _load_corpus(args.a)
    b = _load_corpus(args.b)
    rows = agreement.merge_corpora(a, b, optimal=args.optimal)
    report = agreement.agreement_report(rows)
    if args.optimal:
        report.notes.append("pairs formed by optimal assignment")
    _write_json(args.out, report.to_dict())
    if args.csv:
        buf = io.StringIO()
        agreement.write_merged_csv(rows, buf)
        _write_text(args.csv, buf.getvalue())
    text = report.render_text()
    if args.table:
        _write_text(args.table, text)
    sys.stdout.write(text)
    _write_run(args, [*args.a, *args.b], report.to_dict())
    return 0


def cmd_make_prompts(args) -> int:
    pool = [r.sentence for r in _load_corpus(args.pool) if r.is_causal]
    targets = _load_corpus(args.targets)
    spec = promptkit.PromptSpec(
        shots=args.shots, instruction_text=args.instruction, example_pool=pool, selection_seed=args.seed,
    )
    lines = []
    dump = Path(args.dump_dir) if args.dump_dir else None
    for rec in targets:
        s = rec.sentence
        prompt = promptkit.build_prompt(spec, s.plain, exclude_target=True)
        lines.append(json.dumps({"sentence_id": s.sentence_id, "plain": s.plain, "prompt": prompt}, ensure_ascii=False))
        if dump:
            name = "".join(c if c.isalnum() or c in "-_." else "_" for c in s.sentence_id) + ".txt"
            _write_text(dump / name, prompt + "\n")
    _write_text(args.out, "\n".join(lines) + ("\n" if lines else ""))
    _write_run(args, [*args.pool, *args.targets], {"prompts": len(lines), "shots": args.shots, "pool": len(pool)})
    return 0


def cmd_export_instruct(args) -> int:
    records = _load_corpus(args.inputs)
    if args.causal_only:
        records = [r for r in records if r.is_causal]
    instruct = promptkit.export_instruct([r.sentence for r in records], args.instruction, with_output=not args.test)
    buf = io.StringIO()
    promptkit.write_instruct(instruct, buf)
    _write_text(args.out, buf.getvalue())
    _write_run(args, args.inputs, {"records": len(instruct), "test": args.test})
    return 0


def cmd_run_llm(args) -> int:
    items = _read_jsonl(args.prompts)
    if not items:
        raise ValueError(f"{args.prompts} holds no prompts")
    gateway = Gateway(_gateway_config(args))
    result = gateway.complete_batch([it["prompt"] for it in items])
    lines = []
    for i, it in enumerate(items):
        err = result.errors.get(i)
        lines.append(json.dumps({
            "sentence_id": it.get("sentence_id"),
            "response": result.responses[i],
            "error": None if err is None else f"{type(err).__name__}: {err}",
        }, ensure_ascii=False))
    _write_text(args.out, "\n".join(lines) + "\n")
    for i in result.failed_indices:
        print(f"prompt {i} ({items[i].get('sentence_id')}) failed: {result.errors[i]}", file=sys.stderr)
    _write_run(args, [args.prompts], {
        "prompts": len(items), "failed_indices": result.failed_indices,
    })
    return 2 if result.errors else 0


def _load_token_gold(paths: Sequence[str]) -> tuple[list[str | None], list[tokenlab.TokenLabelSeq]]:
    if all(p.endswith(".conll") for p in paths):
        seqs = []
        for p in paths:
            with open(p, encoding="utf-8") as fh:
                seqs.extend(tokenlab.read_conll(fh))
        return [None] * len(seqs), seqs
    records = _load_corpus(paths)
    return [r.sentence.sentence_id for r in records], [tokenlab.to_token_labels(r.sentence) for r in records]


def cmd_eval_tokens(args) -> int:
    ids, gold = _load_token_gold(args.gold)
    if args.pred.endswith(".conll"):
        with open(args.pred, encoding="utf-8") as fh:
            pred = tokenlab.read_conll(fh)
        if len(pred) != len(gold):
            raise ValueError(f"{len(gold)} gold sentences vs {len(pred)} predicted")
    else:
        responses = {r["sentence_id"]: r.get("response") or "" for r in _read_jsonl(args.pred)}
        if None in ids:
            raise ValueError("JSONL predictions need tagged-text gold to match sentence ids")
        keep = [i for i, sid in enumerate(ids) if sid in responses]
        gold = [gold[i] for i in keep]
        pred = []
        for i in keep:
            sentence, _ = markup.parse_sentence(responses[ids[i]], Mode.LENIENT)
            pred.append(tokenlab.to_token_labels(sentence))
    stats = tokenlab.RepairStats()
    if args.repair:
        repaired = []
        for g, p in zip(gold, pred):
            r, s = tokenlab.repair(g.tokens, p)
            repaired.append(r)
            stats = stats + s
        pred = repaired
    report = evalx.eval_token_corpus(gold, pred, exclude_other=not args.include_other)
    out = report.to_dict()
    out["repair"] = {"inserted_o": stats.inserted_o, "dropped_pred": stats.dropped_pred,
                     "substitutions": stats.substitutions}
    _write_json(args.out, out)
    sys.stdout.write(report.render_text())
    _write_run(args, [*args.gold, args.pred], out)
    return 0


def _embedder(args):
    if args.embedder == "bow":
        return textsim.BowEmbedder(args.dim)
    return RemoteEmbedder(Gateway(_gateway_config(args)))


def cmd_eval_phrases(args) -> int:
    gold_records = _load_corpus(args.gold)
    sentences = {r.sentence.sentence_id: r.sentence.plain for r in gold_records}
    preds: list[promptkit.PredictedPhrase] = []
    if args.pred.endswith(".jsonl"):
        evaluated = set()
        for item in _read_jsonl(args.pred):
            sid = item.get("sentence_id")
            evaluated.add(sid)
            preds.extend(promptkit.parse_output(item.get("response") or "", args.pred_format, sid))
        gold_records = [r for r in gold_records if r.sentence.sentence_id in evaluated]
    else:
        by_text = {}
        for r in gold_records:
            by_text.setdefault(" ".join(r.sentence.plain.split()), r.sentence.sentence_id)
        for r in _load_corpus([args.pred]):
            sid = by_text.get(" ".join(r.sentence.plain.split()), f"pred/{r.sentence.sentence_id}")
            preds.extend(promptkit.parse_tagged_output(r.sentence.raw, sid))
    gold = markup.extract_phrases(r.sentence for r in gold_records)
    report = evalx.eval_phrases(gold, preds, _embedder(args), sentences, omit_unlabeled=args.omit_unlabeled)
    out = report.to_dict()
    out["name"] = args.name
    _write_json(args.out, out)
    sys.stdout.write(evalx.render_similarity_table({args.name: report}))
    sys.stdout.write("\n")
    sys.stdout.write(evalx.render_label_table(report))
    _write_run(args, [*args.gold, args.pred], out)
    return 0


# -- report rendering -------------------------------------------------------

def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k in sorted(obj):
            yield from _flatten(obj[k], f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, list) and obj and all(isinstance(x, (dict, list)) for x in obj):
        for i, x in enumerate(obj):
            yield from _flatten(x, f"{prefix}[{i}]")
    else:
        yield prefix, obj


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    if v is None:
        return "-"
    if isinstance(v, list):
        return ", ".join(str(x) for x in v)
    return str(v)


def _class_tables(report: dict) -> list[tuple[str, list[str], list[list[str]]]]:
    """Pull out per-class score tables (dicts of precision/recall/f1 dicts)."""
    tables = []
    for key in ("labels", "per_class"):
        block = report.get(key) if isinstance(report, dict) else None
        if isinstance(block, dict) and block:
            rows = []
            for name, s in block.items():
                if isinstance(s, dict):
                    rows.append([name, _fmt(s.get("precision")), _fmt(s.get("recall")), _fmt(s.get("f1")),
                                 _fmt(s.get("support"))])
            tables.append((key, ["class", "precision", "recall", "f1", "support"], rows))
    relaxed = report.get("relaxed") if isinstance(report, dict) else None
    if isinstance(relaxed, dict) and relaxed:
        rows = [[name, _fmt(s["levenshtein"]), _fmt(s["jaccard_distance"]), _fmt(s["pairs"])]
                for name, s in relaxed.items()]
        tables.append(("relaxed", ["class", "levenshtein", "jaccard_distance", "pairs"], rows))
    return tables


def render_run_markdown(record: dict) -> str:
    lines = [f"# Run {record['run_id']}", "", f"- command: `{record['command']}`",
             f"- timestamp: {record['timestamp']}", "", "## Inputs", "", "| file | digest |", "|---|---|"]
    lines += [f"| {f} | `{d}` |" for f, d in sorted(record["inputs"].items())]
    lines += ["", "## Report", ""]
    for title, header, rows in _class_tables(record["report"]):
        lines += [f"### {title}", "", "| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        lines.append("")
    lines += ["| key | value |", "|---|---|"]
    lines += [f"| {k} | {_fmt(v)} |" for k, v in _flatten(record["report"])]
    lines += ["", "## Config", "", "| key | value |", "|---|---|"]
    lines += [f"| {k} | {_fmt(v)} |" for k, v in sorted(record["config"].items())]
    return "\n".join(lines) + "\n"


def render_run_csv(record: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "value"])
    for k, v in _flatten(record["report"]):
        w.writerow([k, _fmt(v)])
    return buf.getvalue()


def cmd_report(args) -> int:
    records = _read_jsonl(args.runs)
    if not records:
        raise ValueError(f"{args.runs} holds no run records")
    if args.run_id:
        matches = [r for r in records if r["run_id"] == args.run_id]
        if not matches:
            raise ValueError(f"no run {args.run_id} in {args.runs}")
        record = matches[-1]
    else:
        record = records[-1]
    text = render_run_markdown(record) if args.format == "md" else render_run_csv(record)
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


# -- parser -----------------------------------------------------------------

_BOOL_OPTS = {"causal_only", "group_by_doc", "optimal", "test", "repair", "include_other", "omit_unlabeled"}


def _add_gateway_args(p) -> None:
    g = p.add_argument_group("gateway")
    g.add_argument("--base-url")
    g.add_argument("--model")
    g.add_argument("--api-key-env", default=DEFAULT_API_KEY_ENV)
    g.add_argument("--temperature", type=float, default=0.0)
    g.add_argument("--max-output-tokens", type=int, default=1024)
    g.add_argument("--timeout", type=float, default=60.0)
    g.add_argument("--max-retries", type=int, default=3)
    g.add_argument("--max-in-flight", type=int, default=4)
    g.add_argument("--embedding-model")
    g.add_argument("--cache", help="JSONL response cache")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="csk", description="Causal span annotation toolkit")
    parser.add_argument("--config", help="INI-style file with [section] key = value settings")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def command(name, func, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func)
        p.add_argument("--runs-log", default=DEFAULT_RUNS_LOG)
        return p

    p = command("parse", cmd_parse, "parse tagged text into JSON")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--mode", choices=["strict", "lenient"], default="lenient")
    p.add_argument("--out", required=True)
    p.add_argument("--corpus-out", help="also write a JSONL corpus")

    p = command("tokens", cmd_tokens, "export token labels as CoNLL TSV")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--causal-only", action="store_true")

    p = command("split", cmd_split, "deterministic holdout or k-fold split")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--group-by-doc", action="store_true")
    p.add_argument("--causal-only", action="store_true")
    p.add_argument("--out", required=True)

    p = command("agreement", cmd_agreement, "inter-annotator agreement")
    p.add_argument("--a", nargs="+", required=True)
    p.add_argument("--b", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="merged phrase table")
    p.add_argument("--table", help="plain-text report tables")
    p.add_argument("--optimal", action="store_true", help="optimal instead of greedy pairing")

    p = command("make-prompts", cmd_make_prompts, "build k-shot prompts")
    p.add_argument("--pool", nargs="+", required=True)
    p.add_argument("--targets", nargs="+", required=True)
    p.add_argument("--shots", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instruction", default=promptkit.DEFAULT_INSTRUCTION)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-dir", help="also write one prompt file per sentence")

    p = command("export-instruct", cmd_export_instruct, "write instruction-tuning records")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--instruction", default=promptkit.DEFAULT_INSTRUCT_INSTRUCTION)
    p.add_argument("--test", action="store_true", help="leave outputs empty")
    p.add_argument("--causal-only", action="store_true")

    p = command("run-llm", cmd_run_llm, "send prompts to a chat-completions endpoint")
    p.add_argument("--prompts", required=True)
    p.add_argument("--out", required=True)
    _add_gateway_args(p)

    p = command("eval-tokens", cmd_eval_tokens, "token-level precision/recall/F1")
    p.add_argument("--gold", nargs="+", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--repair", action="store_true", help="align predictions to gold tokens first")
    p.add_argument("--include-other", action="store_true")
    p.add_argument("--out", required=True)

    p = command("eval-phrases", cmd_eval_phrases, "phrase-level similarity and label F1")
    p.add_argument("--gold", nargs="+", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--pred-format", choices=["tagged", "instruct"], default="tagged")
    p.add_argument("--embedder", choices=["bow", "remote"], default="bow")
    p.add_argument("--dim", type=int, default=textsim.DEFAULT_DIM)
    p.add_argument("--omit-unlabeled", action="store_true")
    p.add_argument("--name", default="run")
    p.add_argument("--out", required=True)
    _add_gateway_args(p)

    p = command("report", cmd_report, "render a run record as Markdown or CSV")
    p.add_argument("--runs", default=DEFAULT_RUNS_LOG)
    p.add_argument("--run-id")
    p.add_argument("--format", choices=["md", "csv"], default="md")
    p.add_argument("--out")
    return parser


def _config_defaults(path: str, command: str) -> dict:
    cp = configparser.ConfigParser()
    if not cp.read(path, encoding="utf-8"):
        raise OSError(f"cannot read config file {path}")
    values: dict = {}
    for section in ("csk", command):
        if cp.has_section(section):
            for k, v in cp.items(section):
                key = k.replace("-", "_")
                values[key] = cp.getboolean(section, k) if key in _BOOL_OPTS else v
    return values


def dispatch(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre_parser = _Parser(add_help=False)
    pre_parser.add_argument("--config")
    pre_parser.add_argument("command", nargs="?")
    try:
        pre, _ = pre_parser.parse_known_args(argv)
        if pre.command is None and ("-h" in argv or "--help" in argv):
            parser.print_help()
            return 0
        if pre.command is None:
            raise UsageError(parser.format_usage() + "csk: error: a command is required")
        if pre.config and pre.command in parser._subparsers._group_actions[0].choices:
            sub = parser._subparsers._group_actions[0].choices[pre.command]
            sub.set_defaults(**_config_defaults(pre.config, pre.command))
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help on a subcommand
            return exc.code or 0
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (GatewayError, OSError) as exc:
        log.debug("command failed", exc_info=True)
        print(f"csk: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        log.debug("command failed", exc_info=True)
        print(f"csk: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
