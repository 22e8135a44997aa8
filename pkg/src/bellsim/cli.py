"""Command-line driver: ``bellsim <subcommand> ... --out DIR``.

Exit codes: 0 success, 1 domain error (a statistic that does not apply to
the data), 2 configuration error (bad config, unreadable input). The only
environment variable read is ``BELL_THREADS`` (worker count); it never
changes results.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

from . import jp, models, processing, protocols, stats
from .core import CONTEXT_LABELS, ModelError, UndefinedStatistic, model_from_dict, model_to_dict
from .datasets import Dataset, DatasetKind, dumps_json, read_dataset, write_dataset
from .models import ModelRecipe, recipe_from_dict


class ConfigError(Exception):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class DomainError(Exception):
    pass


def workers() -> int:
    raw = os.environ.get("BELL_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError("BELL_THREADS", f"not an integer: {raw!r}") from None
    return max(n, 1)


# ---------------------------------------------------------------------------
# config handling

_MODEL_REF = {"oneOf": [{"type": "string"}, {"type": "object"}]}

SIMULATE_SCHEMA = {
    "type": "object",
    "required": ["model", "protocol", "seed"],
    "properties": {
        "model": _MODEL_REF,
        "protocol": {"enum": ["context", "spreadsheet", "timeseries"]},
        "seed": {"type": "integer", "minimum": 0},
        "counts": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 4, "maxItems": 4},
        "n": {"type": "integer", "minimum": 1},
        "order": {"enum": ["blocked", "shuffled"]},
        "schedule": {"enum": ["blocked", "random"]},
        "spacing": {"type": "number", "exclusiveMinimum": 0},
        "post_select": {"type": "boolean"},
        "window": {"type": "number", "exclusiveMinimum": 0},
    },
}

REPLICATE_SCHEMA = {
    "type": "object",
    "required": ["model", "n_per_context", "replications", "seed"],
    "properties": {
        "model": _MODEL_REF,
        "n_per_context": {"type": "integer", "minimum": 1},
        "replications": {"type": "integer", "minimum": 100},
        "seed": {"type": "integer", "minimum": 0},
        "protocol": {"enum": ["context", "spreadsheet"]},
    },
}

SCAN_SCHEMA = {
    "type": "object",
    "required": ["windows"],
    "properties": {
        "model": _MODEL_REF,
        "streams": {"type": "string"},
        "n_emissions": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "schedule": {"enum": ["blocked", "random"]},
        "spacing": {"type": "number", "exclusiveMinimum": 0},
        "windows": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
    },
}


def _validate(schema: dict, doc) -> None:
    from .core import validate_against

    try:
        validate_against(schema, doc)
    except ModelError as exc:
        raise ConfigError(exc.path, exc.message) from None


def load_config(path, schema: dict) -> tuple[dict, Path]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError("config", f"no such file {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON in {path}: {exc}") from None
    _validate(schema, doc)
    return doc, path.parent


def resolve_model(ref, base: Path):
    """A demo name, a recipe/model JSON path, or an inline recipe/model document."""
    try:
        if isinstance(ref, str):
            if ref in models.DEMO_FACTORIES:
                return models.demo_model(ref), models.demo_recipe(ref).to_dict()
            p = (base / ref) if not Path(ref).is_absolute() else Path(ref)
            if not p.exists():
                raise ConfigError("model", f"not a shipped demo or existing file: {ref!r}")
            return resolve_model(json.loads(p.read_text()), base)
        if "recipe" in ref:
            r = recipe_from_dict(ref)
            return r.build(), r.to_dict()
        if "lambda_spaces" in ref:
            m = model_from_dict(ref)
            return m, model_to_dict(m)
        if "kind" in ref and "parameters" in ref:
            r = ModelRecipe(ref["kind"], ref["parameters"], ref.get("name", "model"))
            return r.build(), r.to_dict()
    except ModelError as exc:
        raise ConfigError(f"model.{exc.path}", exc.message) from None
    raise ConfigError("model", "expected a demo name, a path, a {'recipe': ...} document or a model document")


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    p = out / name
    p.write_text(text)
    return p


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    cfg, base = load_config(args.config, SIMULATE_SCHEMA)
    model, model_doc = resolve_model(cfg["model"], base)
    seed = cfg["seed"]
    proto = cfg["protocol"]
    try:
        if proto == "context":
            if "counts" not in cfg:
                raise ConfigError("counts", "required for the context protocol")
            ds = protocols.run_context_protocol(model, cfg["counts"], seed, cfg.get("order", "blocked"), workers())
        elif proto == "spreadsheet":
            if "n" not in cfg:
                raise ConfigError("n", "required for the spreadsheet protocol")
            ds = protocols.run_spreadsheet_protocol(model, cfg["n"], seed)
        else:
            if "n" not in cfg:
                raise ConfigError("n", "required for the timeseries protocol")
            ds = protocols.run_timeseries_protocol(
                model, cfg["n"], cfg.get("schedule", "blocked"), seed, cfg.get("spacing", protocols.DEFAULT_SPACING)
            )
    except ModelError as exc:
        raise ConfigError(exc.path, exc.message) from None
    ds = Dataset(ds.kind, ds.records, {**ds.provenance, "config": cfg}, ds.meta)
    out = Path(args.out)
    written = list(write_dataset(ds, out / "dataset.csv"))
    if ds.kind is DatasetKind.STREAMS and "window" in cfg:
        raw = processing.match_coincidences(ds, cfg["window"])
        written += write_dataset(raw, out / "raw.csv")
        ds = raw
    if cfg.get("post_select") and ds.kind is DatasetKind.RAW:
        written += write_dataset(processing.post_select(ds), out / "final.csv")
    written.append(_write(out, "model.json", dumps_json(model_doc)))
    for p in written:
        print(p)
    return 0


def _table_doc(table) -> dict:
    doc = table.to_dict()
    if table.defined():
        ch = stats.chsh_S(table)
        doc["chsh"] = {"S": float(ch.S), "S_max": float(ch.S_max), "S_fixed": float(ch.S_fixed), "se": ch.se}
    else:
        doc["chsh"] = None
    return doc


def cmd_analyze(args) -> int:
    try:
        ds = read_dataset(args.dataset)
    except (FileNotFoundError, ModelError, KeyError, ValueError) as exc:
        raise ConfigError("dataset", f"cannot read {args.dataset}: {exc}") from None
    flags = {k: getattr(args, k) for k in ("chsh", "eberhard", "nosignaling", "cbd")}
    if not any(flags.values()):
        flags["chsh"] = True
    report: dict = {"dataset": str(args.dataset), "kind": ds.kind.value, "provenance": ds.provenance}
    text: list[str] = []
    warnings: list[str] = []

    if ds.kind is DatasetKind.STREAMS:
        if args.window is None:
            raise DomainError("Streams data need --window to pair clicks into records")
        ds = processing.match_coincidences(ds, args.window)
        report["window"] = args.window
    elif args.window is not None:
        raise DomainError(f"--window applies to Streams data, not {ds.kind.value}")

    raw = ds if ds.kind is DatasetKind.RAW else None
    final = ds if ds.kind is DatasetKind.FINAL else None
    if raw is not None and (args.post_select or flags["nosignaling"] or flags["cbd"]):
        final = processing.post_select(raw)
        report["post_selection"] = final.meta

    if ds.kind is DatasetKind.SPREADSHEET:
        table = stats.estimate_correlations(ds)
        report["spreadsheet"] = _table_doc(table)
        text.append("spreadsheet (+-1 rows)\n" + stats.correlation_text(table))
        if flags["chsh"]:
            try:
                S = stats.spreadsheet_S(ds)
            except UndefinedStatistic as exc:
                warnings.append(str(exc))
            else:
                if not -2 <= S <= 2:
                    raise DomainError(f"spreadsheet S = {float(S)} outside [-2, 2]; per-row identity broken")
                report["spreadsheet_S"] = {"value": str(S), "float": float(S), "within_bound": True}
                text.append(f"S (fixed signs) = {float(S):.6f}, within [-2, 2]\n")
        if flags["eberhard"] or flags["nosignaling"]:
            raise DomainError("Eberhard and no-signaling statistics need paired Raw data, not Spreadsheet rows")
    tables = {}
    for name, d in (("raw", raw), ("final", final)):
        if d is None:
            continue
        t = stats.estimate_correlations(d)
        tables[name] = t
        if not t.defined():
            missing = [CONTEXT_LABELS[c] for c, e in enumerate(t.entries) if e is None]
            warnings.append(f"{name} table undefined for contexts {', '.join(missing)}")
        if flags["chsh"]:
            report[f"{name}_table"] = _table_doc(t)
            text.append(f"{name}\n" + stats.correlation_text(t))
            ch = report[f"{name}_table"]["chsh"]
            if ch is not None:
                text.append(f"S = {ch['S']:.6f}  S_max = {ch['S_max']:.6f}  S_fixed = {ch['S_fixed']:.6f}  se = {ch['se']:.6f}\n")
    if flags["eberhard"]:
        if raw is None:
            raise DomainError(f"Eberhard J needs Raw data with undetected outcomes; got {ds.kind.value}")
        try:
            J = stats.eberhard_J(raw)
        except UndefinedStatistic as exc:
            warnings.append(str(exc))
            report["eberhard_J"] = None
        else:
            report["eberhard_J"] = J
            text.append(f"Eberhard J = {J:.6f} ({'violates' if J > 0 else 'respects'} J <= 0)\n")
    if flags["nosignaling"]:
        if raw is None:
            raise DomainError("no-signaling deltas compare Final with Raw data; Raw records are required")
        if tables["raw"].defined() and tables["final"].defined():
            fin, rw = stats.nosignaling_deltas(tables["final"], tables["raw"])
            report["nosignaling"] = {"final": fin.to_dict(), "raw": rw.to_dict()}
            rows = [(k, rep.provenance, rep.deltas[k], rep.se[k], rep.z[k]) for rep in (fin, rw) for k in rep.deltas]
            text.append(stats.format_table(rows, ("marginal", "data", "delta", "se", "z")))
        else:
            report["nosignaling"] = None
    if flags["cbd"]:
        t = tables.get("final") or tables.get("raw")
        if t is not None and t.defined():
            cbd = stats.cbd_analysis(t)
            report["cbd"] = {**cbd.to_dict(), "table": t.provenance}
            text.append(f"CbD ({t.provenance}): s_odd = {float(cbd.s_odd):.6f}, delta_c = {float(cbd.delta_c):.6f}, contextual = {cbd.contextual}\n")
        else:
            report["cbd"] = None
    report["warnings"] = warnings
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    out = Path(args.out)
    print(_write(out, "report.json", dumps_json(report)))
    print(_write(out, "report.txt", "\n".join(text) + ("".join(f"warning: {w}\n" for w in warnings))))
    return 0


REPLICATE_HEADER = [
    "protocol", "n_per_context", "replications", "master_seed",
    "count_ge", "fraction_ge", "ci_ge_lo", "ci_ge_hi", "se_ge",
    "count_gt", "fraction_gt", "ci_gt_lo", "ci_gt_hi", "se_gt",
]


def cmd_replicate(args) -> int:
    cfg, base = load_config(args.config, REPLICATE_SCHEMA)
    model, model_doc = resolve_model(cfg["model"], base)
    try:
        rep = stats.violation_frequency(
            model, cfg["n_per_context"], cfg["replications"], cfg["seed"], cfg.get("protocol", "context"), workers()
        )
    except ModelError as exc:
        raise ConfigError(f"model.{exc.path}", exc.message) from None
    d = rep.to_dict()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPLICATE_HEADER)
    w.writerow([d["protocol"], d["n_per_context"], d["replications"], d["master_seed"],
                d["count_ge"], repr(d["fraction_ge"]), repr(d["ci_ge"][0]), repr(d["ci_ge"][1]), repr(d["se_ge"]),
                d["count_gt"], repr(d["fraction_gt"]), repr(d["ci_gt"][0]), repr(d["ci_gt"][1]), repr(d["se_gt"])])
    out = Path(args.out)
    print(_write(out, "replicate.csv", buf.getvalue()))
    vals = "replication,S_fixed\n" + "".join(f"{r},{float(s)!r}\n" for r, s in enumerate(rep.s_values))
    print(_write(out, "replicate_values.csv", vals))
    print(_write(out, "replicate.json", dumps_json({"result": d, "config": cfg, "model": model_doc})))
    return 0


def cmd_window_scan(args) -> int:
    cfg, base = load_config(args.config, SCAN_SCHEMA)
    if "streams" in cfg:
        try:
            streams = read_dataset(base / cfg["streams"])
        except (FileNotFoundError, ModelError) as exc:
            raise ConfigError("streams", str(exc)) from None
    else:
        for key in ("model", "n_emissions", "seed"):
            if key not in cfg:
                raise ConfigError(key, "required unless 'streams' is given")
        model, _ = resolve_model(cfg["model"], base)
        try:
            streams = protocols.run_timeseries_protocol(
                model, cfg["n_emissions"], cfg.get("schedule", "random"), cfg["seed"], cfg.get("spacing", protocols.DEFAULT_SPACING)
            )
        except ModelError as exc:
            raise ConfigError(f"model.{exc.path}", exc.message) from None
    rows = processing.window_scan(streams, cfg["windows"])
    out = Path(args.out)
    print(_write(out, "scan.csv", processing.scan_to_csv(rows)))
    doc = {
        "config": cfg,
        "provenance": streams.provenance,
        "rows": [
            {"window": r.window, "retained_fraction": r.retained_fraction, "S": r.S, "S_se": r.S_se, "table": r.table.to_dict()}
            for r in rows
        ],
    }
    print(_write(out, "scan.json", dumps_json(doc)))
    return 0


def cmd_check_jp(args) -> int:
    path = Path(args.table)
    try:
        if path.suffix == ".csv":
            system = jp.PairwiseSystem.from_csv(path)
        else:
            doc = json.loads(path.read_text())
            if "contexts" not in doc:
                # an analyze report: prefer the final table
                doc = doc.get("final_table") or doc.get("raw_table") or doc
            system = jp.PairwiseSystem.from_json(doc)
    except FileNotFoundError:
        raise ConfigError("table", f"no such file {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("table", f"invalid JSON: {exc}") from None
    except ModelError as exc:
        raise ConfigError(exc.path, exc.message) from None
    res = jp.jp_feasible(system)
    fine = [float(v) for v in jp.fine_inequalities(system)]
    doc = {"input": str(path), "result": res.to_dict(), "fine_inequalities": fine}
    out = Path(args.out)
    print(_write(out, "jp.json", dumps_json(doc)))
    lines = [f"status: {res.status}", f"L1 residual: {res.residual:.3e}", f"max Fine value: {max(fine):.6f}"]
    if res.inconsistent_marginal:
        lines.append(f"inconsistent marginal: {res.inconsistent_marginal}")
    if res.certificate is not None:
        lines.append(f"certificate margin: {res.certificate_margin:.6f}")
    print(_write(out, "jp.txt", "\n".join(lines) + "\n"))
    print(res.status)
    return 0


def cmd_report(args) -> int:
    summary = {}
    for d in args.inputs:
        d = Path(d)
        if not d.is_dir():
            raise ConfigError("inputs", f"not a directory: {d}")
        for p in sorted(d.rglob("*.json")):
            try:
                doc = json.loads(p.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(str(p), f"invalid JSON: {exc}") from None
            summary[str(p.relative_to(d.parent))] = _summarize(p.name, doc)
    out = Path(args.out)
    print(_write(out, "summary.json", dumps_json(summary)))
    rows = [(k, ", ".join(f"{a}={b}" for a, b in v.items())) for k, v in summary.items()]
    print(_write(out, "summary.txt", stats.format_table(rows, ("file", "summary"))))
    return 0


def _summarize(name: str, doc: dict) -> dict:
    if name == "report.json":
        s = {"kind": doc.get("kind")}
        for t in ("raw_table", "final_table", "spreadsheet"):
            if doc.get(t) and doc[t].get("chsh"):
                s[f"{t.split('_')[0]}_S_max"] = round(doc[t]["chsh"]["S_max"], 6)
        if "eberhard_J" in doc and doc["eberhard_J"] is not None:
            s["J"] = round(doc["eberhard_J"], 6)
        if doc.get("cbd"):
            s["contextual"] = doc["cbd"]["contextual"]
        return s
    if name == "replicate.json":
        r = doc["result"]
        return {"fraction_ge": r["fraction_ge"], "fraction_gt": r["fraction_gt"], "replications": r["replications"]}
    if name == "scan.json":
        return {"windows": len(doc["rows"]), "S_first": doc["rows"][0]["S"], "S_last": doc["rows"][-1]["S"]}
    if name == "jp.json":
        return {"status": doc["result"]["status"]}
    if "kind" in doc and "n_records" in doc:
        return {"dataset": doc["kind"], "records": doc["n_records"]}
    return {"keys": len(doc)}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bellsim", description="Bell-test simulation and analysis")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a protocol and write a dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("analyze", help="estimate statistics from a dataset")
    s.add_argument("dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--post-select", action="store_true", dest="post_select")
    s.add_argument("--chsh", action="store_true")
    s.add_argument("--eberhard", action="store_true")
    s.add_argument("--nosignaling", action="store_true")
    s.add_argument("--cbd", action="store_true")
    s.add_argument("--window", type=float, default=None)
    s.set_defaults(fn=cmd_analyze)

    s = sub.add_parser("replicate", help="violation frequency over seeded replications")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_replicate)

    s = sub.add_parser("window-scan", help="S and retained fraction versus coincidence window")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_window_scan)

    s = sub.add_parser("check-jp", help="joint-probability feasibility of a pairwise table")
    s.add_argument("table")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_check_jp)

    s = sub.add_parser("report", help="aggregate prior outputs into one summary")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, UndefinedStatistic, ModelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
