"""Estimators and test statistics.

Standard errors are plug-in: for a per-record quantity ``q`` observed ``n``
times, ``se = sqrt((mean(q**2) - mean(q)**2) / n)``. Contexts are sampled
independently, so errors of sums over contexts add in quadrature.
Replication fractions use Wilson score intervals.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .core import (
    CONTEXT_LABELS,
    CONTEXTS,
    ContextStats,
    CorrelationTable,
    Model,
    ModelError,
    ModelKind,
    UndefinedStatistic,
    exact_correlations,
)
from .datasets import Dataset, DatasetKind

# the 8 sign patterns with an odd number of minus signs
ODD_SIGNS = tuple(s for s in itertools.product((1, -1), repeat=4) if s.count(-1) % 2 == 1)
FIXED_SIGNS = (1, 1, 1, -1)
S_TOL = 1e-12


def _mean_se(q: np.ndarray) -> tuple[float, float]:
    n = len(q)
    m1 = q.mean()
    var = max((q * q).mean() - m1 * m1, 0.0)
    return float(m1), math.sqrt(var / n)


def _stats(a: np.ndarray, b: np.ndarray) -> ContextStats | None:
    if len(a) == 0:
        return None
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    E, se = _mean_se(a * b)
    ma, se_a = _mean_se(a)
    mb, se_b = _mean_se(b)
    return ContextStats(E=E, marginal_a=ma, marginal_b=mb, n=len(a), se=se, se_a=se_a, se_b=se_b)


def estimate_correlations(dataset: Dataset) -> CorrelationTable:
    """Per-context sample means of ``a*b``, ``a`` and ``b``.

    Raw and Final datasets use each context's own records. Spreadsheet data
    use only the rows without zeros, each row feeding all four contexts.
    An empty context gives a ``None`` entry.
    """
    if dataset.kind is DatasetKind.SPREADSHEET:
        rows = dataset.rows()
        rows = rows[~np.any(rows == 0, axis=1)]
        entries = tuple(_stats(rows[:, c.alice], rows[:, 2 + c.bob]) for c in CONTEXTS)
        return CorrelationTable(entries, "spreadsheet")
    if dataset.kind not in (DatasetKind.RAW, DatasetKind.FINAL):
        raise ValueError(f"cannot estimate correlations from {dataset.kind.value} data; match coincidences first")
    entries = tuple(_stats(*dataset.context_block(c)) for c in range(4))
    return CorrelationTable(entries, "final" if dataset.kind is DatasetKind.FINAL else "raw")


def table_from_correlations(E, marginals_a=(0, 0, 0, 0), marginals_b=(0, 0, 0, 0), provenance="raw") -> CorrelationTable:
    """Exact table from four expectations (and optional marginals) in context order."""
    entries = tuple(ContextStats(E=e, marginal_a=ma, marginal_b=mb) for e, ma, mb in zip(E, marginals_a, marginals_b))
    return CorrelationTable(entries, provenance, exact=True)


# ---------------------------------------------------------------------------
# CHSH


class CHSH(NamedTuple):
    S: object
    S_max: object
    S_fixed: object
    se: float


def chsh_S(table: CorrelationTable) -> CHSH:
    """CHSH values of a defined table.

    ``S`` groups the terms as ``|E_xy - E_xy'| + |E_x'y + E_x'y'|``, ``S_max``
    maximizes over the eight odd-minus sign patterns, ``S_fixed`` is the
    pattern ``E_xy + E_xy' + E_x'y - E_x'y'``. ``se`` is the quadrature error
    shared by all of them.
    """
    E = table.E
    S = abs(E[0] - E[1]) + abs(E[2] + E[3])
    S_max = max(sum(s * e for s, e in zip(signs, E)) for signs in ODD_SIGNS)
    S_fixed = sum(s * e for s, e in zip(FIXED_SIGNS, E))
    se = math.sqrt(sum(float(s) ** 2 for s in table.se))
    return CHSH(S, S_max, S_fixed, se)


def spreadsheet_S(dataset: Dataset) -> Fraction:
    """Fixed-sign S of N x 4 data as an exact fraction over the +-1 rows."""
    if dataset.kind is not DatasetKind.SPREADSHEET:
        raise ValueError("spreadsheet_S needs Spreadsheet data")
    from .protocols import per_row_chsh_array

    rows = dataset.rows()
    rows = rows[~np.any(rows == 0, axis=1)]
    if len(rows) == 0:
        raise UndefinedStatistic("no +-1 rows")
    return Fraction(int(per_row_chsh_array(rows).sum()), len(rows))


# ---------------------------------------------------------------------------
# Eberhard / CH counts


def _count_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m = np.zeros((3, 3))
    np.add.at(m, (a + 1, b + 1), 1.0)
    return m


def eberhard_J_from_distributions(mats) -> object:
    """``J`` from four 3x3 outcome distributions (rows a, columns b, order -1, 0, +1).

    ``J = P_xy(+,+) - P_xy'(+, not +) - P_x'y(not +, +) - P_x'y'(+,+)``.
    """
    P, N = 2, slice(0, 2)
    return mats[0][P, P] - mats[1][P, N].sum() - mats[2][N, P].sum() - mats[3][P, P]


def eberhard_J(dataset: Dataset) -> float:
    """Counts form of the Eberhard statistic, normalized per record of each context.

    Undetected outcomes count as "not +", so the statistic needs Raw data.
    """
    if dataset.kind is not DatasetKind.RAW:
        raise ValueError(f"Eberhard J needs Raw data with undetected outcomes, got {dataset.kind.value}")
    mats = []
    for c in range(4):
        a, b = dataset.context_block(c)
        if len(a) == 0:
            raise UndefinedStatistic(f"context {CONTEXT_LABELS[c]} has no records")
        mats.append(_count_matrix(a, b) / len(a))
    return float(eberhard_J_from_distributions(mats))


# ---------------------------------------------------------------------------
# no-signaling


# (name, side, context pair) for the four same-side marginal differences
SIGNALING_PAIRS = (
    ("A_x", "a", (0, 1)),
    ("A_xp", "a", (2, 3)),
    ("B_y", "b", (0, 2)),
    ("B_yp", "b", (1, 3)),
)


@dataclass(frozen=True)
class SignalingReport:
    provenance: str
    deltas: dict
    se: dict
    z: dict

    def to_dict(self) -> dict:
        return {
            "provenance": self.provenance,
            "deltas": {k: float(v) for k, v in self.deltas.items()},
            "se": dict(self.se),
            "z": dict(self.z),
        }


def signaling_report(table: CorrelationTable) -> SignalingReport:
    table.require_defined()
    deltas, ses, zs = {}, {}, {}
    for name, side, (c1, c2) in SIGNALING_PAIRS:
        e1, e2 = table.entries[c1], table.entries[c2]
        m1, m2 = (e1.marginal_a, e2.marginal_a) if side == "a" else (e1.marginal_b, e2.marginal_b)
        s1, s2 = (e1.se_a, e2.se_a) if side == "a" else (e1.se_b, e2.se_b)
        d = m1 - m2
        se = math.hypot(s1, s2)
        deltas[name] = d
        ses[name] = se
        zs[name] = float(d) / se if se > 0 else None
    return SignalingReport(table.provenance, deltas, ses, zs)


def nosignaling_deltas(final: CorrelationTable, raw: CorrelationTable) -> tuple[SignalingReport, SignalingReport]:
    """Same-side marginal differences across the remote setting, for Final and Raw tables."""
    return signaling_report(final), signaling_report(raw)


# ---------------------------------------------------------------------------
# contextuality by default


@dataclass(frozen=True)
class CbDReport:
    s_odd: object
    delta_c: object
    contextual: bool

    def to_dict(self) -> dict:
        return {"s_odd": float(self.s_odd), "delta_c": float(self.delta_c), "contextual": self.contextual}


def cbd_analysis(table: CorrelationTable) -> CbDReport:
    """Cyclic-4 criterion: contextual iff ``s_odd > 2 + delta_c``."""
    E = table.E
    ent = table.entries
    delta_c = sum(abs(ent[c1].marginal_a - ent[c2].marginal_a) for _, s, (c1, c2) in SIGNALING_PAIRS if s == "a")
    delta_c += sum(abs(ent[c1].marginal_b - ent[c2].marginal_b) for _, s, (c1, c2) in SIGNALING_PAIRS if s == "b")
    s_odd = max(sum(s * e for s, e in zip(signs, E)) for signs in ODD_SIGNS)
    return CbDReport(s_odd, delta_c, bool(s_odd > 2 + delta_c))


# ---------------------------------------------------------------------------
# replication experiment


def wilson_interval(k: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n <= 0:
        raise ValueError("n must be positive")
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(mid - half, 0.0), min(mid + half, 1.0)


def wilson_se(k: int, n: int) -> float:
    """Half-width of the Wilson interval at ``z = 1``."""
    lo, hi = wilson_interval(k, n, z=1.0)
    return (hi - lo) / 2


@dataclass(frozen=True)
class ViolationReport:
    protocol: str
    n_per_context: int
    replications: int
    master_seed: int
    count_ge: int
    count_gt: int
    fraction_ge: float
    fraction_gt: float
    ci_ge: tuple
    ci_gt: tuple
    se_ge: float
    se_gt: float
    s_values: np.ndarray = field(repr=False, compare=False, default=None)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("s_values")
        d["ci_ge"] = list(self.ci_ge)
        d["ci_gt"] = list(self.ci_gt)
        return d


def _replicate_context(model, n, r, master_seed):
    from .protocols import STREAM_CONTEXT, context_samples

    blocks = context_samples(model, [n] * 4, master_seed, stream=(STREAM_CONTEXT, r))
    # integer numerator keeps the S >= 2 atom exact
    num = sum(s * int(np.sum(a.astype(np.int64) * b)) for s, (a, b) in zip(FIXED_SIGNS, blocks))
    return Fraction(num, n)


def _replicate_spreadsheet(model, n, r, master_seed):
    from .core import derive_rng, sample_rows
    from .protocols import STREAM_SPREADSHEET, per_row_chsh_array

    rows = sample_rows(model, n, derive_rng(master_seed, STREAM_SPREADSHEET, r)).astype(np.int64)
    rows = rows[~np.any(rows == 0, axis=1)]
    if len(rows) == 0:
        raise UndefinedStatistic(f"replication {r} has no +-1 rows")
    return Fraction(int(per_row_chsh_array(rows).sum()), len(rows))


def violation_frequency(
    model: Model,
    n_per_context: int,
    replications: int,
    master_seed: int,
    protocol: str = "context",
    workers: int = 1,
) -> ViolationReport:
    """Fraction of replications whose fixed-sign S_obs reaches 2 (``>=``) or exceeds it (``>``).

    Replication ``r`` of the context protocol draws context ``c`` from
    ``derive_rng(master_seed, 0, r, c)``; the spreadsheet protocol uses
    ``derive_rng(master_seed, 1, r)`` with ``n_per_context`` rows.
    """
    from .protocols import _map

    if replications < 100:
        raise ValueError(f"replications must be at least 100, got {replications}")
    if n_per_context <= 0:
        raise ValueError("n_per_context must be positive")
    if protocol == "context":
        fn = _replicate_context
    elif protocol == "spreadsheet":
        from .protocols import _check_spreadsheet_model

        _check_spreadsheet_model(model)
        fn = _replicate_spreadsheet
    else:
        raise ValueError(f"unknown protocol {protocol!r}")
    S = _map(lambda r: fn(model, int(n_per_context), r, master_seed), range(int(replications)), workers)
    k_ge = sum(1 for s in S if s >= 2)
    k_gt = sum(1 for s in S if s > 2)
    R = int(replications)
    return ViolationReport(
        protocol=protocol,
        n_per_context=int(n_per_context),
        replications=R,
        master_seed=int(master_seed),
        count_ge=k_ge,
        count_gt=k_gt,
        fraction_ge=k_ge / R,
        fraction_gt=k_gt / R,
        ci_ge=wilson_interval(k_ge, R),
        ci_gt=wilson_interval(k_gt, R),
        se_ge=wilson_se(k_ge, R),
        se_gt=wilson_se(k_gt, R),
        s_values=np.array([float(s) for s in S]),
    )


# ---------------------------------------------------------------------------
# Larsson-Gill bound audit


@dataclass(frozen=True)
class AuditReport:
    embedding: str
    delta: object
    delta_unconditional: object
    bound: object
    exact_S: object
    satisfied: bool
    window: float | None = None

    def to_dict(self) -> dict:
        return {
            "embedding": self.embedding,
            "delta": float(self.delta),
            "delta_unconditional": float(self.delta_unconditional),
            "bound": float(self.bound),
            "exact_S": float(self.exact_S),
            "satisfied": self.satisfied,
            "window": self.window,
        }


def _admissible_mass(model: Model, window: float | None):
    """``P(all four contexts admissible)`` on the product space and per-context ``P(admissible)``."""
    half = None if window is None else window / 2.0
    exact = model.exact
    zero = Fraction(0) if exact else 0.0
    src = model.source.weights
    wa = [t.weights for t in model.instr_a]
    wb = [t.weights for t in model.instr_b]
    total, per_ctx = zero, [zero] * 4
    timed = model.kind is ModelKind.TIME_TAG and half is not None
    for (l1, l2), ps in np.ndenumerate(src):
        if ps == 0:
            continue
        for ma in itertools.product(range(len(wa[0])), range(len(wa[1]))):
            pa = wa[0][ma[0]] * wa[1][ma[1]]
            if pa == 0:
                continue
            for mb in itertools.product(range(len(wb[0])), range(len(wb[1]))):
                w = ps * pa * wb[0][mb[0]] * wb[1][mb[1]]
                if w == 0:
                    continue
                ok = []
                for c in CONTEXTS:
                    i, j = ma[c.alice], mb[c.bob]
                    good = model.outcome_a[c.alice][l1, i] != 0 and model.outcome_b[c.bob][l2, j] != 0
                    if good and timed:
                        good = abs(float(model.delay_a[c.alice][l1, i]) - float(model.delay_b[c.bob][l2, j])) <= half
                    ok.append(good)
                for c in range(4):
                    if ok[c]:
                        per_ctx[c] += w
                if all(ok):
                    total += w
    return total, per_ctx


def larsson_gill_audit(model: Model, embedding: str = "product", window: float | None = None) -> AuditReport:
    """Check the post-selected S_max against ``4 - 2 delta``.

    ``embedding="product"`` places every context on the common space
    ``source x instruments``; a point is admissible in a context when both
    outcomes are nonzero (and, for TimeTag models at a finite ``window``, the
    clicks coincide). ``delta`` is the smallest conditional mass of the
    all-context admissible set given a context's admissible set.
    ``embedding="disjoint"`` declares the contexts' regions disjoint, so
    ``delta = 0``.
    """
    from .processing import windowed_correlations

    if model.kind is ModelKind.TIME_TAG and window is not None:
        ex = windowed_correlations(model, window)
    else:
        ex = exact_correlations(model)
    if not ex.final.defined():
        raise UndefinedStatistic("post-selected table undefined: a context has zero coincidence probability")
    S = chsh_S(ex.final).S_max
    if embedding == "disjoint":
        delta = delta_u = 0
    elif embedding == "product":
        if model.kind is ModelKind.CONTEXTUAL_CORRELATED:
            raise ModelError(
                "embedding",
                "ContextualCorrelated models have per-context instrument weights with no product embedding; use 'disjoint'",
            )
        total, per_ctx = _admissible_mass(model, window)
        delta_u = total
        delta = min(total / p for p in per_ctx)
    else:
        raise ValueError(f"unknown embedding {embedding!r}")
    bound = 4 - 2 * delta
    tol = 0 if (model.exact and isinstance(S, Fraction)) else S_TOL
    return AuditReport(embedding, delta, delta_u, bound, S, bool(abs(S) <= bound + tol), window)


# ---------------------------------------------------------------------------
# text reports


def format_table(rows: list[tuple], header: tuple) -> str:
    """Left-aligned text table."""
    cells = [tuple(str(v) for v in header)] + [tuple(_fmt(v) for v in r) for r in rows]
    widths = [max(len(r[k]) for r in cells) for k in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, (float, Fraction, np.floating)):
        return f"{float(v):.6f}"
    return str(v)


def correlation_text(table: CorrelationTable) -> str:
    rows = []
    for c, e in enumerate(table.entries):
        if e is None:
            rows.append((CONTEXT_LABELS[c], None, None, None, None, None))
        else:
            rows.append((CONTEXT_LABELS[c], e.E, e.se, e.marginal_a, e.marginal_b, e.n))
    return format_table(rows, ("context", "E", "se", "<A>", "<B>", "n"))
