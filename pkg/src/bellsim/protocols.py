"""Experiment engines: turn a model plus a protocol into a dataset.

``run_context_protocol``
    Four separate experiments, one per setting pair; each trial reports one
    outcome pair. The only protocol available for contextual models.
``run_spreadsheet_protocol``
    Every trial computes all four outcomes (an N x 4 table). Needs a model
    with a joint distribution of the four variables.
``run_timeseries_protocol``
    Emissions on a regular time grid; each side produces a click with a
    setting- and lambda-dependent delay. Pairing is left to
    :func:`bellsim.processing.match_coincidences`.

Random streams come from :func:`bellsim.core.derive_rng` keyed by
``(protocol stream, unit index)``, so results never depend on worker count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .core import (
    CONTEXTS,
    JOINT_KINDS,
    Model,
    ModelError,
    ModelKind,
    _categorical,
    _float_tables,
    derive_rng,
    sample_context,
    sample_rows,
)
from .datasets import EVENT_DTYPE, ROW_DTYPE, Dataset, DatasetKind, SpreadsheetRow, pair_records, round_timestamps

# derive_rng stream ids
STREAM_CONTEXT = 0
STREAM_SPREADSHEET = 1
STREAM_TIMESERIES = 2
STREAM_SCHEDULE = 3

DEFAULT_SPACING = 1.0


def _provenance(model: Model, protocol: str, seed: int, **params) -> dict:
    return {"model": model.name, "model_kind": model.kind.value, "protocol": protocol, "master_seed": int(seed), "parameters": params}


def _map(fn, items, workers: int):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def context_samples(model: Model, counts, master_seed: int, stream: tuple = (STREAM_CONTEXT,), workers: int = 1):
    """Per-context ``(a, b)`` arrays drawn from ``derive_rng(master_seed, *stream, c)``."""

    def one(c):
        rng = derive_rng(master_seed, *stream, c)
        return sample_context(model, CONTEXTS[c], int(counts[c]), rng)

    return _map(one, range(4), workers)


def run_context_protocol(model: Model, counts_per_context, master_seed: int, order: str = "blocked", workers: int = 1) -> Dataset:
    """Disjoint experiments for the four contexts.

    ``order="blocked"`` lists trials context by context; ``"shuffled"`` applies a
    seeded permutation, mimicking per-trial random switching. Trial indices
    follow the final order.
    """
    counts = [int(n) for n in counts_per_context]
    if len(counts) != 4 or any(n <= 0 for n in counts):
        raise ValueError(f"need four positive counts, got {counts_per_context!r}")
    if order not in ("blocked", "shuffled"):
        raise ValueError(f"unknown order {order!r}")
    blocks = context_samples(model, counts, master_seed, workers=workers)
    ctx = np.concatenate([np.full(n, c, dtype=np.int8) for c, n in enumerate(counts)])
    a = np.concatenate([blk[0] for blk in blocks])
    b = np.concatenate([blk[1] for blk in blocks])
    if order == "shuffled":
        perm = derive_rng(master_seed, STREAM_SCHEDULE, 0).permutation(len(a))
        ctx, a, b = ctx[perm], a[perm], b[perm]
    return Dataset(
        DatasetKind.RAW,
        pair_records(ctx, a, b),
        _provenance(model, "context", master_seed, counts=counts, order=order),
    )


def _check_spreadsheet_model(model: Model) -> None:
    if model.kind in JOINT_KINDS:
        return
    if model.kind is ModelKind.CONTEXTUAL_CORRELATED:
        raise ModelError(
            "model.kind",
            "ContextualCorrelated models assign instrument weights per context; no trial can output "
            "all four outcomes, so the N x 4 protocol cannot be run on them",
        )
    if model.kind is ModelKind.CONTEXTUAL_PRODUCT:
        raise ModelError(
            "model.kind",
            "ContextualProduct models describe four separate experiments; build their coupling "
            "(models.build_gl_coupling) to obtain a joint N x 4 model",
        )
    raise ModelError("model.kind", f"{model.kind.value} models cannot emit joint rows")


def run_spreadsheet_protocol(model: Model, n_rows: int, master_seed: int) -> Dataset:
    """N x 4 protocol: each row holds ``(A_x, A_x', B_y, B_y')`` of one trial."""
    _check_spreadsheet_model(model)
    if n_rows <= 0:
        raise ValueError("n_rows must be positive")
    rows = sample_rows(model, int(n_rows), derive_rng(master_seed, STREAM_SPREADSHEET, 0))
    rec = np.empty(len(rows), dtype=ROW_DTYPE)
    rec["row"] = np.arange(len(rows))
    for k, name in enumerate(("a_x", "a_xp", "b_y", "b_yp")):
        rec[name] = rows[:, k]
    with_zero = int(np.any(rows == 0, axis=1).sum())
    return Dataset(
        DatasetKind.SPREADSHEET,
        rec,
        _provenance(model, "spreadsheet", master_seed, n_rows=int(n_rows)),
        meta={"rows_with_zero": with_zero, "rows_pm1": int(n_rows) - with_zero},
    )


def per_row_chsh(row) -> int:
    """``a_x b_y + a_x b_y' + a_x' b_y - a_x' b_y'`` for one +-1 row."""
    a, ap, b, bp = (int(v) for v in row)
    if 0 in (a, ap, b, bp):
        raise ValueError(f"per-row CHSH needs +-1 outcomes, got {SpreadsheetRow(a, ap, b, bp)}")
    return a * b + a * bp + ap * b - ap * bp


def per_row_chsh_array(rows: np.ndarray) -> np.ndarray:
    """Vectorized per-row term; rows containing 0 must be filtered out first."""
    rows = np.asarray(rows, dtype=np.int64)
    if np.any(rows == 0):
        raise ValueError("rows containing 0 are excluded from the per-row identity")
    a, ap, b, bp = rows.T
    return a * b + a * bp + ap * b - ap * bp


# ---------------------------------------------------------------------------
# time series


def make_schedule(n: int, schedule, master_seed: int) -> np.ndarray:
    """Settings ``(alice, bob)`` per emission epoch.

    ``"blocked"`` runs the four contexts in equal consecutive blocks,
    ``"random"`` switches both settings independently per epoch,
    ``("fixed", (i, j))`` keeps one context, and an explicit ``(n, 2)`` array is
    used as given.
    """
    if n <= 0:
        raise ValueError("n_emissions must be positive")
    if isinstance(schedule, str):
        if schedule == "blocked":
            ctx = np.minimum((np.arange(n) * 4) // n, 3)
            return np.stack([ctx // 2, ctx % 2], axis=1).astype(np.int8)
        if schedule == "random":
            rng = derive_rng(master_seed, STREAM_SCHEDULE, 1)
            return rng.integers(0, 2, size=(n, 2)).astype(np.int8)
        raise ValueError(f"unknown schedule {schedule!r}")
    if isinstance(schedule, (tuple, list)) and len(schedule) == 2 and schedule[0] == "fixed":
        i, j = schedule[1]
        return np.tile(np.array([[i, j]], dtype=np.int8), (n, 1))
    arr = np.asarray(schedule, dtype=np.int8)
    if arr.size == 0:
        raise ValueError("empty setting schedule")
    if arr.shape != (n, 2) or not np.all(np.isin(arr, (0, 1))):
        raise ValueError(f"explicit schedule must be an ({n}, 2) array of 0/1")
    return arr


def run_timeseries_protocol(
    model: Model,
    n_emissions: int,
    setting_schedule="blocked",
    master_seed: int = 0,
    spacing: float = DEFAULT_SPACING,
) -> Dataset:
    """Emit on the grid ``k * spacing`` and timestamp each click as emission + delay.

    Delays must stay below ``spacing / 2`` so every click can be attributed to
    its own epoch.
    """
    if model.kind is not ModelKind.TIME_TAG:
        raise ModelError("model.kind", f"time series need a TimeTag model, got {model.kind.value}")
    max_delay = max(float(t.max()) for t in model.delay_a + model.delay_b)
    if max_delay >= spacing / 2:
        raise ModelError("delays", f"max delay {max_delay} must be below half the emission spacing {spacing}")
    if setting_schedule is None or (hasattr(setting_schedule, "__len__") and len(setting_schedule) == 0):
        raise ValueError("empty setting schedule")
    n = int(n_emissions)
    sched = make_schedule(n, setting_schedule, master_seed)
    rng = derive_rng(master_seed, STREAM_TIMESERIES, 0)
    ft = _float_tables(model)
    n2 = ft.source.shape[1]
    flat = _categorical(ft.source, rng.random(n))
    l1, l2 = flat // n2, flat % n2
    # instruments are drawn for both settings every epoch; the schedule picks one
    mu_a = [_categorical(ft.instr_a[s], rng.random(n)) for s in range(2)]
    mu_b = [_categorical(ft.instr_b[s], rng.random(n)) for s in range(2)]
    sign_a, d_a = np.empty(n, dtype=np.int8), np.empty(n)
    sign_b, d_b = np.empty(n, dtype=np.int8), np.empty(n)
    for s in range(2):
        m = sched[:, 0] == s
        sign_a[m] = model.outcome_a[s][l1[m], mu_a[s][m]]
        d_a[m] = model.delay_a[s][l1[m], mu_a[s][m]]
        m = sched[:, 1] == s
        sign_b[m] = model.outcome_b[s][l2[m], mu_b[s][m]]
        d_b[m] = model.delay_b[s][l2[m], mu_b[s][m]]
    emit = np.arange(n) * float(spacing)
    rec = np.empty(2 * n, dtype=EVENT_DTYPE)
    rec["side"][:n] = 0
    rec["side"][n:] = 1
    rec["timestamp"][:n] = round_timestamps(emit + d_a)
    rec["timestamp"][n:] = round_timestamps(emit + d_b)
    rec["setting"][:n] = sched[:, 0]
    rec["setting"][n:] = sched[:, 1]
    rec["sign"][:n] = sign_a
    rec["sign"][n:] = sign_b
    sched_name = setting_schedule if isinstance(setting_schedule, str) else "explicit"
    return Dataset(
        DatasetKind.STREAMS,
        rec,
        _provenance(model, "timeseries", master_seed, n_emissions=n, schedule=sched_name, spacing=float(spacing)),
        meta={"spacing": float(spacing), "n_epochs": n, "schedule": sched},
    )
