"""Data reduction: coincidence matching and post-selection.

Matching is epoch-anchored. Emission epoch ``k`` owns every click whose
timestamp falls in ``[k * spacing, (k + 1) * spacing)``. Within an epoch,
Alice's clicks are visited in time order and each takes the closest unused
Bob click with ``|t_a - t_b| <= window / 2`` (ties go to the earlier Bob
click). A matched pair becomes one record ``(a, b)``; an unmatched click
becomes ``(a, 0)`` or ``(0, b)``; an epoch without clicks becomes ``(0, 0)``.

:func:`windowed_correlations` is the exact counterpart for TimeTag models:
it enumerates the hidden space and applies the same pairing rule to the
delay tables.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import (
    CONTEXTS,
    CorrelationTable,
    ExactCorrelations,
    Model,
    ModelError,
    ModelKind,
    OUTCOMES,
    exact_correlations,
    tables_from_distributions,
)
from .datasets import Dataset, DatasetKind, pair_records


def _epoch_slices(epochs: np.ndarray, n_epochs: int) -> np.ndarray:
    return np.searchsorted(epochs, np.arange(n_epochs + 1), side="left")


def match_coincidences(streams: Dataset, window: float) -> Dataset:
    """Pair two click streams into a Raw dataset using a coincidence window."""
    if streams.kind is not DatasetKind.STREAMS:
        raise ValueError(f"expected a Streams dataset, got {streams.kind.value}")
    if not window > 0:
        raise ValueError(f"window must be positive, got {window}")
    spacing = float(streams.meta.get("spacing", streams.provenance.get("parameters", {}).get("spacing", 1.0)))
    alice, bob = streams.streams()
    for st in (alice, bob):
        if len(st) > 1 and np.any(np.diff(st.timestamps) <= 0):
            raise ValueError(f"{st.side.value} timestamps must be strictly increasing")
    sched = streams.meta.get("schedule")
    ep_a = np.floor(alice.timestamps / spacing).astype(np.int64)
    ep_b = np.floor(bob.timestamps / spacing).astype(np.int64)
    n_epochs = int(streams.meta.get("n_epochs", 0)) or int(max(ep_a.max(initial=-1), ep_b.max(initial=-1)) + 1)
    if sched is None:
        sched = _schedule_from_events(n_epochs, ep_a, alice.settings, ep_b, bob.settings)
    half = window / 2.0

    one_each = (
        len(ep_a) == n_epochs
        and len(ep_b) == n_epochs
        and np.array_equal(ep_a, np.arange(n_epochs))
        and np.array_equal(ep_b, np.arange(n_epochs))
    )
    if one_each:
        ctx, a, b = _match_one_per_epoch(alice, bob, sched, half)
    else:
        ctx, a, b = _match_general(alice, bob, ep_a, ep_b, sched, n_epochs, half)
    prov = dict(streams.provenance)
    prov = {**prov, "processing": {"step": "match_coincidences", "window": float(window)}}
    paired = int(np.sum((a != 0) & (b != 0)))
    return Dataset(
        DatasetKind.RAW,
        pair_records(ctx, a, b),
        prov,
        meta={"window": float(window), "n_epochs": n_epochs, "paired": paired},
    )


def _schedule_from_events(n_epochs, ep_a, set_a, ep_b, set_b) -> np.ndarray:
    sched = np.full((n_epochs, 2), -1, dtype=np.int8)
    sched[ep_a, 0] = set_a
    sched[ep_b, 1] = set_b
    if np.any(sched < 0):
        missing = int(np.argmax(np.any(sched < 0, axis=1)))
        raise ValueError(f"epoch {missing} has no click on one side and no stored schedule to recover its setting")
    return sched


def _match_one_per_epoch(alice, bob, sched, half):
    coinc = np.abs(alice.timestamps - bob.timestamps) <= half
    ctx_epoch = (2 * sched[:, 0] + sched[:, 1]).astype(np.int8)
    # every epoch yields its pair, or (a, 0) followed by (0, b)
    counts = np.where(coinc, 1, 2)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    total = int(counts.sum())
    ctx = np.repeat(ctx_epoch, counts)
    a = np.zeros(total, dtype=np.int8)
    b = np.zeros(total, dtype=np.int8)
    a[starts] = alice.signs
    b[starts[coinc]] = bob.signs[coinc]
    b[starts[~coinc] + 1] = bob.signs[~coinc]
    return ctx, a, b


def _match_general(alice, bob, ep_a, ep_b, sched, n_epochs, half):
    sa = _epoch_slices(ep_a, n_epochs)
    sb = _epoch_slices(ep_b, n_epochs)
    ctx, out_a, out_b = [], [], []
    for k in range(n_epochs):
        c = 2 * int(sched[k, 0]) + int(sched[k, 1])
        ia = range(sa[k], sa[k + 1])
        ib = list(range(sb[k], sb[k + 1]))
        if not ia and not ib:
            ctx.append(c), out_a.append(0), out_b.append(0)
            continue
        used = set()
        for i in ia:
            best, best_d = None, None
            for j in ib:
                if j in used:
                    continue
                d = abs(alice.timestamps[i] - bob.timestamps[j])
                if d <= half and (best is None or d < best_d):
                    best, best_d = j, d
            if best is None:
                ctx.append(c), out_a.append(int(alice.signs[i])), out_b.append(0)
            else:
                used.add(best)
                ctx.append(c), out_a.append(int(alice.signs[i])), out_b.append(int(bob.signs[best]))
        for j in ib:
            if j not in used:
                ctx.append(c), out_a.append(0), out_b.append(int(bob.signs[j]))
    return np.array(ctx, dtype=np.int8), np.array(out_a, dtype=np.int8), np.array(out_b, dtype=np.int8)


def post_select(raw: Dataset) -> Dataset:
    """Keep only records with both outcomes nonzero; per-context counts go into ``meta``."""
    if raw.kind not in (DatasetKind.RAW, DatasetKind.FINAL):
        raise ValueError(f"post-selection applies to Raw datasets, got {raw.kind.value}")
    rec = raw.records
    keep = (rec["a"] != 0) & (rec["b"] != 0)
    retained = [int(np.sum(keep & (rec["context"] == c))) for c in range(4)]
    total = [int(np.sum(rec["context"] == c)) for c in range(4)]
    if raw.kind is DatasetKind.FINAL:
        # idempotent: counts describe the original reduction
        meta = dict(raw.meta)
    else:
        meta = {
            "retained": retained,
            "discarded": [t - r for t, r in zip(total, retained)],
            "retained_fraction": (sum(retained) / sum(total)) if sum(total) else None,
            "empty": sum(retained) == 0,
        }
    prov = {**raw.provenance, "post_selected": True}
    return Dataset(DatasetKind.FINAL, rec[keep].copy(), prov, meta=meta)


# ---------------------------------------------------------------------------
# exact windowed evaluation


def _coincident(da: float, db: float, half: float) -> bool:
    return abs(da - db) <= half


def windowed_correlations(model: Model, window: float | None) -> ExactCorrelations:
    """Exact record-level statistics of a TimeTag model after matching at ``window``.

    Each epoch yields one record when its clicks coincide and two
    (``(a, 0)`` and ``(0, b)``) otherwise, so the returned raw distribution
    is per record, normalized by the expected record count. ``coincidence``
    then equals the expected retained fraction. ``window=None`` is the
    infinite-window limit.
    """
    if model.kind is not ModelKind.TIME_TAG:
        raise ModelError("model.kind", f"windowed evaluation needs a TimeTag model, got {model.kind.value}")
    if window is None:
        return exact_correlations(model)
    if not window > 0:
        raise ValueError("window must be positive")
    half = window / 2.0
    exact = model.exact
    src = model.source.weights
    mats = []
    for ctx in CONTEXTS:
        wa = model.instr_a[ctx.alice].weights
        wb = model.instr_b[ctx.bob].weights
        ta, tb = model.outcome_a[ctx.alice], model.outcome_b[ctx.bob]
        da, db = model.delay_a[ctx.alice], model.delay_b[ctx.bob]
        m = np.full((3, 3), 0 if exact else 0.0, dtype=object if exact else np.float64)
        split = 0 if exact else 0.0
        for (l1, l2), ps in np.ndenumerate(src):
            if ps == 0:
                continue
            for ma in range(len(wa)):
                for mb in range(len(wb)):
                    w = ps * wa[ma] * wb[mb]
                    if w == 0:
                        continue
                    ia = OUTCOMES.index(int(ta[l1, ma]))
                    ib = OUTCOMES.index(int(tb[l2, mb]))
                    if _coincident(float(da[l1, ma]), float(db[l2, mb]), half):
                        m[ia, ib] += w
                    else:
                        m[ia, 1] += w
                        m[1, ib] += w
                        split += w
        norm = 1 + split
        if exact:
            m = np.vectorize(lambda v: Fraction(v) / norm, otypes=[object])(m)
        else:
            m = m / norm
        mats.append(m)
    return tables_from_distributions(mats, exact)


# ---------------------------------------------------------------------------
# window scan


@dataclass(frozen=True)
class ScanRow:
    window: float
    retained_fraction: float
    table: CorrelationTable
    S: float | None
    S_se: float | None


def window_scan(streams: Dataset, windows) -> list[ScanRow]:
    """Match, post-select and estimate at every window; S is the max over sign choices."""
    from .stats import chsh_S, estimate_correlations

    windows = [float(w) for w in windows]
    if not windows:
        raise ValueError("window list is empty")
    rows = []
    for w in windows:
        raw = match_coincidences(streams, w)
        final = post_select(raw)
        table = estimate_correlations(final)
        if table.defined():
            ch = chsh_S(table)
            S, se = ch.S_max, ch.se
        else:
            S, se = None, None
        frac = final.meta["retained_fraction"]
        rows.append(ScanRow(w, frac if frac is not None else 0.0, table, S, se))
    return rows


SCAN_HEADER = ["window", "retained_fraction", "E_xy", "E_xyp", "E_xpy", "E_xpyp", "S"]


def scan_to_csv(rows: list[ScanRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCAN_HEADER)
    for r in rows:
        es = [repr(float(e.E)) if e is not None else "" for e in r.table.entries]
        w.writerow([repr(r.window), repr(float(r.retained_fraction))] + es + ["" if r.S is None else repr(float(r.S))])
    return buf.getvalue()
