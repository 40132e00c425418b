"""Command-line driver: ingest, extract-types, train, extract, eval-nlp, fuzz, report.

Every subcommand accepts ``--config FILE`` (a flat JSON object); command-line
flags override values from the file. The effective configuration is written
next to the outputs so each run can be reproduced from that file alone.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from rfcfuzz import evaluation, fuzzer, grammar, simnet, zsl
from rfcfuzz.corpus import dump_document, load_document
from rfcfuzz.errors import ConfigurationError, PipelineError
from rfcfuzz.type_extraction import extract_entity_types, format_types, load_types

log = logging.getLogger("rfcfuzz")

DEFAULTS = {
    "common": {"out_dir": "out", "seed": 0},
    "ingest": {"rfc": None, "protocol": None},
    "extract-types": {"rfc": None, "protocol": None},
    "train": {"corpus_dir": "corpus", "protocols": ",".join(evaluation.PROTOCOLS),
              "exclude": "", "epochs": 50},
    "extract": {"rfc": None, "protocol": None, "model_dir": None, "types_file": None,
                "packet_types": None, "guess": True},
    "eval-nlp": {"corpus_dir": "corpus", "protocols": ",".join(evaluation.PROTOCOLS),
                 "epochs": 50},
    "fuzz": {"protocol": "tcp", "configuration": "Random", "grammar": None,
             "strategies": 1000, "events": 100, "stall_window": 20, "retransmits": 3},
    "report": {},
}


def _split(value) -> list[str]:
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    return [v.strip() for v in str(value or "").split(",") if v.strip()]


def _require_file(path, what: str) -> Path:
    if path is None:
        raise ConfigurationError(f"missing {what}")
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"{what} not found: {p}")
    return p


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text)
    return path


def _log_config(cfg: dict, command: str) -> None:
    _write(Path(cfg["out_dir"]), f"{command}.config.json",
           json.dumps({k: cfg[k] for k in sorted(cfg)}, indent=2) + "\n")


# -- commands -------------------------------------------------------------------

def cmd_ingest(cfg: dict) -> int:
    rfc = _require_file(cfg["rfc"], "RFC text file")
    doc = load_document(rfc, cfg["protocol"] or rfc.stem)
    out = _write(Path(cfg["out_dir"]), f"{doc.protocol_id}.document.jsonl", dump_document(doc))
    print(f"{doc.protocol_id}: {len(doc.sections)} sections, {len(doc.sentences)} sentences, "
          f"{len(doc.chunks)} chunks -> {out}")
    return 0


def cmd_extract_types(cfg: dict) -> int:
    rfc = _require_file(cfg["rfc"], "RFC text file")
    doc = load_document(rfc, cfg["protocol"] or rfc.stem)
    t0 = time.perf_counter()
    types = extract_entity_types(doc.raw, doc.sections)
    log.info("type extraction took %.3fs", time.perf_counter() - t0)
    out = _write(Path(cfg["out_dir"]), f"{doc.protocol_id}.types", format_types(types))
    print(f"{doc.protocol_id}: {len(types)} field types -> {out}")
    return 0


def cmd_train(cfg: dict) -> int:
    root = _require_file(cfg["corpus_dir"], "corpus directory")
    protocols = [p for p in _split(cfg["protocols"]) if p not in _split(cfg["exclude"])]
    if not protocols:
        raise ConfigurationError("no training protocols left after exclusions")
    entries = evaluation.load_corpus(root, protocols)
    t0 = time.perf_counter()
    models = evaluation.train_models(entries, int(cfg["seed"]), int(cfg["epochs"]))
    log.info("training took %.2fs", time.perf_counter() - t0)
    out_dir = Path(cfg["out_dir"])
    _write(out_dir, "mention_model.json", zsl.model_to_json(models.mention))
    _write(out_dir, "property_model.json", zsl.model_to_json(models.property))
    print(f"trained on {','.join(protocols)}: {len(models.training.mention_pairs)} mention "
          f"pairs, {len(models.training.property_pairs)} property pairs -> {out_dir}")
    return 0


def extract_grammar(cfg: dict) -> grammar.ProtocolGrammar:
    rfc = _require_file(cfg["rfc"], "RFC text file")
    model_dir = _require_file(cfg["model_dir"], "model directory")
    prop_path = _require_file(model_dir / "property_model.json", "property model file")
    mention_path = _require_file(model_dir / "mention_model.json", "mention model file")
    prop_model = zsl.load_model(prop_path)
    mention_model = zsl.load_model(mention_path)
    doc = load_document(rfc, cfg["protocol"] or rfc.stem)
    if cfg.get("types_file"):
        types = load_types(_require_file(cfg["types_file"], "types file"))
        # names and sizes come from the file; section anchors from the text
        types = evaluation.anchor_types(types, extract_entity_types(doc.raw, doc.sections))
    else:
        types = extract_entity_types(doc.raw, doc.sections)
    if not types:
        raise PipelineError(f"no field types found in {rfc}")
    mentions = zsl.identify_mentions(mention_model, doc, types)
    spans, dropped = zsl.extract_properties(prop_model, doc, types)
    tuples = zsl.property_tuples(spans, doc)
    packet_types = None
    if cfg.get("packet_types"):
        packet_types = {str(k): int(v) for k, v in json.loads(
            _require_file(cfg["packet_types"], "packet types file").read_text()).items()}
    g = grammar.postprocess(tuples, types, doc.protocol_id, guess=bool(cfg["guess"]),
                            packet_types=packet_types)
    print(f"{doc.protocol_id}: {len(types)} types, {len(mentions)} mentions, "
          f"{len(spans)} property spans ({dropped} dropped), {len(g.properties)} properties")
    return g


def cmd_extract(cfg: dict) -> int:
    g = extract_grammar(cfg)
    out = _write(Path(cfg["out_dir"]), f"{g.protocol_id}.grammar.json",
                 grammar.serialize_grammar(g))
    for p in g.properties:
        print(f"  ({p.kind.value}, {p.field}) [{p.provenance}]")
    print(f"grammar -> {out}")
    return 0


def cmd_eval_nlp(cfg: dict) -> int:
    root = _require_file(cfg["corpus_dir"], "corpus directory")
    protocols = _split(cfg["protocols"])
    if len(protocols) < 2:
        raise ConfigurationError("leave-one-out evaluation needs at least two documents")
    entries = evaluation.load_corpus(root, protocols)
    report = evaluation.loocv(entries, evaluation.LoocvConfig(int(cfg["seed"]),
                                                               int(cfg["epochs"])))
    data = evaluation.report_to_dict(report)
    out_dir = Path(cfg["out_dir"])
    _write(out_dir, "intrinsic.json", json.dumps(data, indent=2, sort_keys=True) + "\n")
    table = evaluation.render_tables(data)
    _write(out_dir, "intrinsic.txt", table)
    print(table, end="")
    return 0


def run_fuzz(cfg: dict):
    """Generate and execute strategies; returns (strategies, results, summary)."""
    proto = simnet.get_protocol(cfg["protocol"])
    conf = cfg["configuration"]
    if conf not in fuzzer.CONFIGS:
        raise ConfigurationError(f"configuration must be one of {', '.join(fuzzer.CONFIGS)}")
    budget = int(cfg["strategies"])
    if budget < 1:
        raise ConfigurationError("strategy budget must be positive")
    g = None
    if conf == "Random":
        strategies = fuzzer.generate_random_strategies(budget, int(cfg["seed"]))
    else:
        g = grammar.load_grammar(_require_file(cfg["grammar"], "grammar file"))
        strategies = fuzzer.generate_grammar_strategies(g, conf, int(cfg["seed"]))[:budget]
    params = simnet.SimParams(event_budget=int(cfg["events"]),
                              stall_window=int(cfg["stall_window"]),
                              max_retransmits=int(cfg["retransmits"]))
    results = [simnet.run_strategy(proto, s, g, params) for s in strategies]
    cov = simnet.coverage(results)
    summary = {
        "protocol": proto.name, "configuration": conf,
        "total_strategies": cov.strategies, "unique_traces": cov.unique_traces,
        "reported_attacks": cov.attacks, "off_path_attacks": cov.off_path_attacks,
        "verdicts": cov.verdicts,
        "guessed_properties": [] if g is None else
        [f"{p.kind.value}:{p.field}" for p in g.properties if p.provenance == "guessed"],
    }
    return strategies, results, summary


def run_record(s: fuzzer.TestStrategy, r: simnet.RunResult) -> dict:
    rec = {"strategy": s.id, "action": s.describe(), "verdict": r.verdict,
           "events": r.events_used, "trace": list(r.trace)}
    if r.reason:
        rec["reason"] = r.reason
    if r.attack is not None:
        rec["attack"] = {"class": r.attack.attack_class, "path": r.attack.path}
    return rec


def cmd_fuzz(cfg: dict) -> int:
    strategies, results, summary = run_fuzz(cfg)
    out_dir = Path(cfg["out_dir"])
    stem = f"fuzz_{summary['protocol']}_{summary['configuration']}"
    _write(out_dir, f"{stem}.strategies.jsonl", fuzzer.dump_strategies(strategies))
    _write(out_dir, f"{stem}.runs.jsonl",
           "".join(json.dumps(run_record(s, r), sort_keys=True) + "\n"
                   for s, r in zip(strategies, results)))
    _write(out_dir, f"{stem}.summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{summary['configuration']} on {summary['protocol']}: "
          f"{summary['unique_traces']} unique traces / {summary['total_strategies']} strategies, "
          f"{summary['reported_attacks']} attacks ({summary['off_path_attacks']} off-path)")
    return 0


def render_fuzz_tables(summaries: list[dict]) -> str:
    order = {c: i for i, c in enumerate(fuzzer.CONFIGS)}
    summaries = sorted(summaries, key=lambda s: (s["protocol"], order.get(s["configuration"], 9)))
    lines = ["Coverage", f"{'Configuration':<14}{'Protocol':<10}{'Unique traces':>15}"
             f"{'Strategies':>12}"]
    for s in summaries:
        lines.append(f"{s['configuration']:<14}{s['protocol'].upper():<10}"
                     f"{s['unique_traces']:>15}{s['total_strategies']:>12}")
    lines += ["", "Attack discovery", f"{'Configuration':<14}{'Protocol':<10}{'Reported':>10}"
              f"{'Off-path':>10}"]
    for s in summaries:
        lines.append(f"{s['configuration']:<14}{s['protocol'].upper():<10}"
                     f"{s['reported_attacks']:>10}{s['off_path_attacks']:>10}")
    return "\n".join(lines) + "\n"


def cmd_report(cfg: dict) -> int:
    out_dir = _require_file(cfg["out_dir"], "output directory")
    parts = []
    intrinsic = out_dir / "intrinsic.json"
    if intrinsic.exists():
        parts.append(evaluation.render_tables(json.loads(intrinsic.read_text())))
    summaries = [json.loads(p.read_text()) for p in sorted(out_dir.glob("fuzz_*.summary.json"))]
    if summaries:
        parts.append(render_fuzz_tables(summaries))
    if not parts:
        raise ConfigurationError(f"nothing to report in {out_dir}")
    text = "\n".join(parts)
    _write(out_dir, "report.txt", text)
    print(text, end="")
    return 0


COMMANDS = {"ingest": cmd_ingest, "extract-types": cmd_extract_types, "train": cmd_train,
            "extract": cmd_extract, "eval-nlp": cmd_eval_nlp, "fuzz": cmd_fuzz,
            "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rfcfuzz", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def common(p):
        p.add_argument("--config", default=S, help="flat JSON config file; flags win")
        p.add_argument("--out-dir", dest="out_dir", default=S)
        p.add_argument("--seed", type=int, default=S)

    for name in ("ingest", "extract-types"):
        p = sub.add_parser(name)
        common(p)
        p.add_argument("--rfc", default=S)
        p.add_argument("--protocol", default=S)
    p = sub.add_parser("train")
    common(p)
    p.add_argument("--corpus-dir", dest="corpus_dir", default=S)
    p.add_argument("--protocols", default=S, help="comma-separated")
    p.add_argument("--exclude", default=S, help="comma-separated held-out protocols")
    p.add_argument("--epochs", type=int, default=S)
    p = sub.add_parser("extract")
    common(p)
    p.add_argument("--rfc", default=S)
    p.add_argument("--protocol", default=S)
    p.add_argument("--model-dir", dest="model_dir", default=S)
    p.add_argument("--types-file", dest="types_file", default=S)
    p.add_argument("--packet-types", dest="packet_types", default=S,
                   help="JSON object mapping packet type names to values")
    p.add_argument("--no-guess", dest="guess", action="store_false", default=S)
    p = sub.add_parser("eval-nlp")
    common(p)
    p.add_argument("--corpus-dir", dest="corpus_dir", default=S)
    p.add_argument("--protocols", default=S)
    p.add_argument("--epochs", type=int, default=S)
    p = sub.add_parser("fuzz")
    common(p)
    p.add_argument("--protocol", default=S)
    p.add_argument("--configuration", default=S, choices=fuzzer.CONFIGS)
    p.add_argument("--grammar", default=S)
    p.add_argument("--strategies", type=int, default=S, help="strategy budget")
    p.add_argument("--events", type=int, default=S, help="event budget per run")
    p.add_argument("--stall-window", dest="stall_window", type=int, default=S)
    p.add_argument("--retransmits", type=int, default=S)
    p = sub.add_parser("report")
    common(p)
    return parser


def resolve_config(command: str, flags: dict) -> dict:
    cfg = dict(DEFAULTS["common"])
    cfg.update(DEFAULTS[command])
    path = flags.pop("config", None)
    if path is not None:
        p = _require_file(path, "config file")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{p}: line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError(f"{p}: config must be a JSON object")
        unknown = sorted(set(data) - set(cfg))
        if unknown:
            raise ConfigurationError(f"{p}: unknown keys {', '.join(unknown)}")
        cfg.update(data)
    cfg.update(flags)
    if cfg.get("seed") is None:
        raise ConfigurationError("a seed is required")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    try:
        cfg = resolve_config(args.command, flags)
        if args.command != "report":
            _log_config(cfg, args.command)
        return COMMANDS[args.command](cfg)
    except ConfigurationError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
