"""Regenerate the shipped recipe files and the golden numbers derived from them.

Run from the repository root:

    python3 scripts/derive_goldens.py

Every golden value is computed by exact enumeration (fractions where the
recipe weights are rational) and written to ``src/bellsim/data/goldens.json``.
Tests compare against the committed file, so a change here shows up as a diff.
"""
import json
import math
from fractions import Fraction
from pathlib import Path

from bellsim import core, jp, models, processing, stats
from bellsim.datasets import dumps_json

DATA = Path(__file__).resolve().parents[1] / "src" / "bellsim" / "data"


def num(v):
    if isinstance(v, Fraction):
        return str(v)
    return float(v)


def table_doc(table):
    return {
        lab: None if e is None else {"E": num(e.E), "marginal_a": num(e.marginal_a), "marginal_b": num(e.marginal_b)}
        for lab, e in zip(core.CONTEXT_LABELS, table.entries)
    }


def chsh_doc(table):
    ch = stats.chsh_S(table)
    return {"S": num(ch.S), "S_max": num(ch.S_max), "S_fixed": num(ch.S_fixed)}


def main():
    for name, factory in models.DEMO_FACTORIES.items():
        (DATA / f"{name}.json").write_text(json.dumps(factory().to_dict(), indent=1, sort_keys=True) + "\n")

    goldens = {}

    m = models.demo_eq3_recipe().build()
    ex = core.exact_correlations(m)
    fin_sig, raw_sig = stats.nosignaling_deltas(ex.final, ex.raw)
    cbd = stats.cbd_analysis(ex.final)
    goldens["demo_eq3"] = {
        "raw": table_doc(ex.raw),
        "final": table_doc(ex.final),
        "raw_chsh": chsh_doc(ex.raw),
        "final_chsh": chsh_doc(ex.final),
        "coincidence": [num(c) for c in ex.coincidence],
        "final_deltas": {k: num(v) for k, v in fin_sig.deltas.items()},
        "raw_deltas": {k: num(v) for k, v in raw_sig.deltas.items()},
        "cbd": {"s_odd": num(cbd.s_odd), "delta_c": num(cbd.delta_c), "contextual": cbd.contextual},
        "final_jp_status": jp.jp_feasible(jp.PairwiseSystem.from_table(ex.final)).status,
        "audit_product_delta": num(stats.larsson_gill_audit(m, "product").delta),
    }

    m = models.demo_eq5_recipe().build()
    ex = core.exact_correlations(m)
    goldens["demo_eq5"] = {"raw": table_doc(ex.raw), "chsh": chsh_doc(ex.raw), "two_sqrt_two": 2 * math.sqrt(2)}

    m = models.demo_timetag_recipe().build()
    scan = {}
    for w in models.DEMO_TIMETAG_WINDOWS:
        ex = processing.windowed_correlations(m, w)
        audit = stats.larsson_gill_audit(m, "product", w)
        scan[repr(w)] = {
            "mean_coincidence": num(sum(ex.coincidence) / 4),
            "final_chsh": chsh_doc(ex.final),
            "J": num(stats.eberhard_J_from_distributions(ex.distributions)),
            "audit_delta": num(audit.delta),
            "audit_bound": num(audit.bound),
        }
    ex = core.exact_correlations(m)
    goldens["demo_timetag"] = {"no_window": table_doc(ex.raw), "no_window_chsh": chsh_doc(ex.raw), "windows": scan}

    m = models.saturating_mixture_recipe().build()
    ex = core.exact_correlations(m)
    goldens["saturating_mixture"] = {"raw": table_doc(ex.raw), "chsh": chsh_doc(ex.raw)}

    (DATA / "goldens.json").write_text(dumps_json(goldens))
    print(f"wrote {len(models.DEMO_FACTORIES)} recipes and goldens.json to {DATA}")


if __name__ == "__main__":
    main()
