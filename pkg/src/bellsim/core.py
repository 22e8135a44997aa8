"""Hidden-variable model representation and exact evaluation.

A model is a finite, tabulated object. Each side has a source variable
(``lambda1`` for Alice, ``lambda2`` for Bob) drawn jointly from a source
table, plus one instrument variable per setting. Outcome tables map
``(setting, source index, instrument index)`` to -1, 0 or +1, where 0 means
"no click". Locality is structural: Alice's table never sees ``lambda2``, the
remote setting or Bob's instrument.

Probabilities are kept as :class:`fractions.Fraction` whenever every weight
of a table is rational, so enumeration results are exact. Tables containing
floats fall back to float arithmetic and are normalized to within 1e-12.
"""
from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Iterable, NamedTuple, Sequence

import numpy as np

NORMALIZATION_TOL = 1e-12

OUTCOMES = (-1, 0, 1)
PAIRS = tuple(itertools.product(OUTCOMES, OUTCOMES))


class ModelError(ValueError):
    """Invalid model, recipe or model file.

    ``path`` names the offending field, e.g. ``weights.source[2][0]``.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class UndefinedStatistic(ValueError):
    """A statistic was requested for a context with no usable data."""


class ModelKind(str, enum.Enum):
    DETERMINISTIC_LOCAL = "DeterministicLocal"
    STOCHASTIC_LOCAL = "StochasticLocal"
    CONTEXTUAL_PRODUCT = "ContextualProduct"
    CONTEXTUAL_CORRELATED = "ContextualCorrelated"
    TIME_TAG = "TimeTag"
    COUPLED_JOINT = "CoupledJoint"


LOCAL_KINDS = frozenset({ModelKind.DETERMINISTIC_LOCAL, ModelKind.STOCHASTIC_LOCAL, ModelKind.TIME_TAG})
# kinds that produce a full (A_x, A_x', B_y, B_y') row per trial
JOINT_KINDS = frozenset({ModelKind.DETERMINISTIC_LOCAL, ModelKind.STOCHASTIC_LOCAL, ModelKind.COUPLED_JOINT})
# kinds whose outcome tables must be +-1 valued
NO_ZERO_KINDS = frozenset(
    {
        ModelKind.DETERMINISTIC_LOCAL,
        ModelKind.STOCHASTIC_LOCAL,
        ModelKind.TIME_TAG,
        ModelKind.CONTEXTUAL_CORRELATED,
    }
)


class Side(str, enum.Enum):
    ALICE = "Alice"
    BOB = "Bob"


class Setting(NamedTuple):
    side: Side
    label: int  # 0 = primary (x, y), 1 = alternate (x', y')
    angle: float | None = None

    @property
    def name(self) -> str:
        base = "x" if self.side is Side.ALICE else "y"
        return base + ("'" * self.label)


class Context(NamedTuple):
    alice: int
    bob: int

    @property
    def index(self) -> int:
        return 2 * self.alice + self.bob

    @property
    def label(self) -> str:
        return CONTEXT_LABELS[self.index]

    @property
    def settings(self) -> tuple[Setting, Setting]:
        return Setting(Side.ALICE, self.alice), Setting(Side.BOB, self.bob)


# canonical order: (x,y), (x,y'), (x',y), (x',y')
CONTEXTS = (Context(0, 0), Context(0, 1), Context(1, 0), Context(1, 1))
CONTEXT_LABELS = ("xy", "xyp", "xpy", "xpyp")


def as_context(context) -> Context:
    """Accept a Context, an index 0..3, a label like ``"xpy"`` or an (i, j) pair."""
    if isinstance(context, Context):
        return context
    if isinstance(context, str):
        if context not in CONTEXT_LABELS:
            raise ModelError("context", f"unknown context label {context!r}")
        return CONTEXTS[CONTEXT_LABELS.index(context)]
    if isinstance(context, (int, np.integer)):
        if not 0 <= int(context) < 4:
            raise ModelError("context", f"context index {context} outside 0..3")
        return CONTEXTS[int(context)]
    try:
        i, j = context
    except (TypeError, ValueError):
        raise ModelError("context", f"cannot interpret {context!r} as a context") from None
    if i not in (0, 1) or j not in (0, 1):
        raise ModelError("context", f"context {context!r} is not one of the four")
    return Context(int(i), int(j))


def check_outcome(value, path: str = "outcome") -> int:
    if value not in OUTCOMES:
        raise ModelError(path, f"outcome {value!r} not in {{-1, 0, +1}}")
    return int(value)


# ---------------------------------------------------------------------------
# probability tables


def _to_number(value, path: str):
    if isinstance(value, bool):
        raise ModelError(path, "boolean is not a probability")
    if isinstance(value, (Fraction, int, np.integer)):
        return Fraction(int(value)) if not isinstance(value, Fraction) else value
    if isinstance(value, Rational):
        return Fraction(value.numerator, value.denominator)
    if isinstance(value, str):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError):
            raise ModelError(path, f"cannot parse {value!r} as a rational") from None
    if isinstance(value, (float, np.floating)):
        if not np.isfinite(value):
            raise ModelError(path, "non-finite weight")
        return float(value)
    raise ModelError(path, f"unsupported weight type {type(value).__name__}")


def _index_path(path: str, idx: tuple) -> str:
    return path + "".join(f"[{i}]" for i in idx)


class ProbTable:
    """Nonnegative weights over a finite index grid, summing to one.

    Rational inputs (``Fraction``, ``int`` or strings such as ``"1/3"``) are
    kept exact; any float entry turns the whole table into float64.
    """

    __slots__ = ("weights", "exact")

    def __init__(self, weights, path: str = "weights"):
        raw = np.asarray(weights, dtype=object)
        if raw.size == 0:
            raise ModelError(path, "empty probability table")
        converted = np.empty(raw.shape, dtype=object)
        for idx, value in np.ndenumerate(raw):
            converted[idx] = _to_number(value, _index_path(path, idx))
        exact = all(isinstance(v, Fraction) for v in converted.flat)
        if not exact:
            converted = converted.astype(np.float64)
        for idx, value in np.ndenumerate(converted):
            if value < 0:
                raise ModelError(_index_path(path, idx), f"negative weight {value}")
        total = converted.sum()
        if exact:
            if total != 1:
                raise ModelError(path, f"weights sum to {total}, not 1")
        elif abs(total - 1.0) > NORMALIZATION_TOL:
            raise ModelError(path, f"weights sum to {total!r}, not 1 within {NORMALIZATION_TOL}")
        converted.setflags(write=False)
        self.weights = converted
        self.exact = exact

    @property
    def shape(self) -> tuple[int, ...]:
        return self.weights.shape

    def as_float(self) -> np.ndarray:
        return self.weights.astype(np.float64)

    def to_json(self):
        if self.exact:
            return np.vectorize(lambda f: str(f), otypes=[object])(self.weights).tolist()
        return self.weights.tolist()

    def __eq__(self, other):
        return (
            isinstance(other, ProbTable)
            and self.shape == other.shape
            and bool(np.all(self.weights == other.weights))
        )

    def __repr__(self):
        return f"ProbTable(shape={self.shape}, exact={self.exact})"


def outer(p: ProbTable, q: ProbTable) -> ProbTable:
    """Product distribution of two 1-D tables."""
    w = np.multiply.outer(p.weights.astype(object), q.weights.astype(object))
    if not (p.exact and q.exact):
        w = w.astype(np.float64)
        w = w / w.sum()
    return ProbTable(w)


# ---------------------------------------------------------------------------
# models


def _freeze_int_table(table, path: str) -> np.ndarray:
    arr = np.asarray(table)
    if arr.ndim != 2:
        raise ModelError(path, f"expected a 2-D table [lambda][instrument], got shape {arr.shape}")
    out = np.empty(arr.shape, dtype=np.int8)
    for idx, value in np.ndenumerate(arr):
        out[idx] = check_outcome(value, _index_path(path, idx))
    out.setflags(write=False)
    return out


def _freeze_delay_table(table, path: str) -> np.ndarray:
    arr = np.asarray(table, dtype=np.float64)
    if arr.ndim != 2:
        raise ModelError(path, f"expected a 2-D delay table, got shape {arr.shape}")
    for idx, value in np.ndenumerate(arr):
        if not np.isfinite(value) or value < 0:
            raise ModelError(_index_path(path, idx), f"delay must be finite and >= 0, got {value}")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Model:
    """A finite hidden-variable model.

    ``instr_a[i]`` / ``instr_b[j]`` are the per-setting instrument
    distributions used by every kind except ContextualCorrelated, which instead
    carries one joint instrument table ``instr_pair[c]`` per context.
    ``outcome_a[i]`` has shape ``(len(lambda1), len(instrument_a[i]))``.
    """

    kind: ModelKind
    source: ProbTable
    outcome_a: tuple
    outcome_b: tuple
    instr_a: tuple | None = None
    instr_b: tuple | None = None
    instr_pair: tuple | None = None
    delay_a: tuple | None = None
    delay_b: tuple | None = None
    angles: tuple | None = None
    name: str = "model"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if not isinstance(self.source, ProbTable):
            object.__setattr__(self, "source", ProbTable(self.source, "weights.source"))
        if self.source.weights.ndim != 2:
            raise ModelError("weights.source", "source table must be 2-D [lambda1][lambda2]")
        n1, n2 = self.source.shape
        if len(self.outcome_a) != 2 or len(self.outcome_b) != 2:
            raise ModelError("outcome_tables", "exactly two settings per side are required")
        oa = tuple(_freeze_int_table(t, f"outcome_tables.a[{i}]") for i, t in enumerate(self.outcome_a))
        ob = tuple(_freeze_int_table(t, f"outcome_tables.b[{j}]") for j, t in enumerate(self.outcome_b))
        object.__setattr__(self, "outcome_a", oa)
        object.__setattr__(self, "outcome_b", ob)
        for i, t in enumerate(oa):
            if t.shape[0] != n1:
                raise ModelError(f"outcome_tables.a[{i}]", f"has {t.shape[0]} rows, source lambda1 has {n1}")
        for j, t in enumerate(ob):
            if t.shape[0] != n2:
                raise ModelError(f"outcome_tables.b[{j}]", f"has {t.shape[0]} rows, source lambda2 has {n2}")

        if self.kind is ModelKind.CONTEXTUAL_CORRELATED:
            if self.instr_pair is None or len(self.instr_pair) != 4:
                raise ModelError("weights.instr_pair", "ContextualCorrelated needs four joint instrument tables")
            pairs = tuple(
                p if isinstance(p, ProbTable) else ProbTable(p, f"weights.instr_pair[{c}]")
                for c, p in enumerate(self.instr_pair)
            )
            object.__setattr__(self, "instr_pair", pairs)
            for c, ctx in enumerate(CONTEXTS):
                want = (oa[ctx.alice].shape[1], ob[ctx.bob].shape[1])
                if pairs[c].shape != want:
                    raise ModelError(f"weights.instr_pair[{c}]", f"shape {pairs[c].shape}, expected {want}")
        else:
            if self.instr_pair is not None:
                raise ModelError("weights.instr_pair", f"{self.kind.value} models take per-setting instruments")
            ia = self.instr_a if self.instr_a is not None else tuple([1] for _ in range(2))
            ib = self.instr_b if self.instr_b is not None else tuple([1] for _ in range(2))
            ia = tuple(p if isinstance(p, ProbTable) else ProbTable(p, f"weights.instr_a[{i}]") for i, p in enumerate(ia))
            ib = tuple(p if isinstance(p, ProbTable) else ProbTable(p, f"weights.instr_b[{j}]") for j, p in enumerate(ib))
            object.__setattr__(self, "instr_a", ia)
            object.__setattr__(self, "instr_b", ib)
            for i in range(2):
                if ia[i].weights.ndim != 1 or ia[i].shape[0] != oa[i].shape[1]:
                    raise ModelError(f"weights.instr_a[{i}]", f"size {ia[i].shape} does not match outcome table columns {oa[i].shape[1]}")
                if ib[i].weights.ndim != 1 or ib[i].shape[0] != ob[i].shape[1]:
                    raise ModelError(f"weights.instr_b[{i}]", f"size {ib[i].shape} does not match outcome table columns {ob[i].shape[1]}")
            if self.kind is ModelKind.DETERMINISTIC_LOCAL:
                for side, tabs in (("a", oa), ("b", ob)):
                    for s, t in enumerate(tabs):
                        if t.shape[1] != 1:
                            raise ModelError(f"outcome_tables.{side}[{s}]", "deterministic models have no instrument noise")

        if self.kind in NO_ZERO_KINDS:
            for side, tabs in (("a", oa), ("b", ob)):
                for s, t in enumerate(tabs):
                    zeros = np.argwhere(t == 0)
                    if len(zeros):
                        raise ModelError(
                            _index_path(f"outcome_tables.{side}[{s}]", tuple(zeros[0])),
                            f"{self.kind.value} outcomes must be +-1",
                        )

        if self.kind is ModelKind.TIME_TAG:
            if self.delay_a is None or self.delay_b is None:
                raise ModelError("delays", "TimeTag models need delay tables for both sides")
            da = tuple(_freeze_delay_table(t, f"delays.a[{i}]") for i, t in enumerate(self.delay_a))
            db = tuple(_freeze_delay_table(t, f"delays.b[{j}]") for j, t in enumerate(self.delay_b))
            for i in range(2):
                if da[i].shape != oa[i].shape:
                    raise ModelError(f"delays.a[{i}]", f"shape {da[i].shape}, expected {oa[i].shape}")
                if db[i].shape != ob[i].shape:
                    raise ModelError(f"delays.b[{i}]", f"shape {db[i].shape}, expected {ob[i].shape}")
            object.__setattr__(self, "delay_a", da)
            object.__setattr__(self, "delay_b", db)
        elif self.delay_a is not None or self.delay_b is not None:
            raise ModelError("delays", "only TimeTag models carry delay tables")

        if self.angles is not None:
            (ax, axp), (by, byp) = self.angles
            object.__setattr__(self, "angles", ((float(ax), float(axp)), (float(by), float(byp))))

    # -- structure -------------------------------------------------------

    @property
    def exact(self) -> bool:
        tables = [self.source]
        tables += list(self.instr_pair) if self.instr_pair is not None else list(self.instr_a) + list(self.instr_b)
        return all(t.exact for t in tables)

    def instrument_table(self, context) -> ProbTable:
        """Joint instrument distribution for a context (outer product unless correlated)."""
        ctx = as_context(context)
        if self.instr_pair is not None:
            return self.instr_pair[ctx.index]
        return outer(self.instr_a[ctx.alice], self.instr_b[ctx.bob])

    def settings(self) -> tuple[Setting, Setting, Setting, Setting]:
        ang = self.angles or ((None, None), (None, None))
        return (
            Setting(Side.ALICE, 0, ang[0][0]),
            Setting(Side.ALICE, 1, ang[0][1]),
            Setting(Side.BOB, 0, ang[1][0]),
            Setting(Side.BOB, 1, ang[1][1]),
        )

    def emits_zeros(self) -> bool:
        return any(bool(np.any(t == 0)) for t in self.outcome_a + self.outcome_b)

    def with_kind(self, kind: ModelKind, name: str | None = None) -> "Model":
        return Model(
            kind=kind,
            source=self.source,
            outcome_a=self.outcome_a,
            outcome_b=self.outcome_b,
            instr_a=self.instr_a,
            instr_b=self.instr_b,
            instr_pair=self.instr_pair,
            delay_a=self.delay_a if kind is ModelKind.TIME_TAG else None,
            delay_b=self.delay_b if kind is ModelKind.TIME_TAG else None,
            angles=self.angles,
            name=name or self.name,
            meta=dict(self.meta),
        )

    def __repr__(self):
        return f"Model({self.kind.value}, name={self.name!r}, source={self.source.shape})"


# ---------------------------------------------------------------------------
# exact enumeration


def _zero_like(exact: bool):
    return 0 if exact else 0.0


def _side_indicator(table: np.ndarray) -> np.ndarray:
    """Indicator tensor [lambda, instrument, outcome_index] for outcomes -1, 0, +1."""
    return np.stack([(table == o) for o in OUTCOMES], axis=-1).astype(np.int64)


def enumerate_context(model: Model, context) -> list[tuple[tuple[int, int], object]]:
    """Exact distribution of the outcome pair in one context.

    Returns all nine pairs ``(a, b)`` in ``PAIRS`` order together with their
    probability (``Fraction`` for exact models). Raw outcomes are reported,
    zeros included; for TimeTag models this is the no-window limit.
    """
    probs = _context_matrix(model, as_context(context))
    return [((a, b), probs[OUTCOMES.index(a), OUTCOMES.index(b)]) for a, b in PAIRS]


def _context_matrix(model: Model, ctx: Context) -> np.ndarray:
    if not isinstance(model, Model):
        raise ModelError("model", f"expected a Model, got {type(model).__name__}")
    exact = model.exact
    dtype = object if exact else np.float64
    src = model.source.weights.astype(dtype)
    pair = model.instrument_table(ctx).weights.astype(dtype)
    ia = _side_indicator(model.outcome_a[ctx.alice]).astype(dtype)  # n1 x ma x 3
    ib = _side_indicator(model.outcome_b[ctx.bob]).astype(dtype)  # n2 x mb x 3
    result = np.full((3, 3), _zero_like(exact), dtype=dtype)
    # T[l1, nb, a] = sum_ma ia[l1, ma, a] * pair[ma, nb]
    for nb in range(pair.shape[1]):
        t = np.zeros((ia.shape[0], 3), dtype=dtype)
        for ma in range(pair.shape[0]):
            w = pair[ma, nb]
            if w != 0:
                t = t + ia[:, ma, :] * w
        result = result + t.T.dot(src).dot(ib[:, nb, :])
    return result


def enumerate_joint(model: Model) -> dict[tuple[int, int, int, int], object]:
    """Exact distribution of the row ``(A_x, A_x', B_y, B_y')``.

    Walks the full product space ``(lambda1, lambda2, mu_x, mu_x', mu_y, mu_y')``
    term by term, generating all six hidden values and computing the four
    outcomes of each. Only defined for kinds that emit joint rows.
    """
    if model.kind not in JOINT_KINDS:
        raise ModelError(
            "model.kind",
            f"{model.kind.value} models have no joint distribution of the four outcomes",
        )
    exact = model.exact
    src = model.source.weights
    wa = [t.weights for t in model.instr_a]
    wb = [t.weights for t in model.instr_b]
    out: dict[tuple[int, int, int, int], object] = {}
    zero = _zero_like(exact)
    for (l1, l2), ps in np.ndenumerate(src):
        if ps == 0:
            continue
        for mx, mxp, my, myp in itertools.product(
            range(len(wa[0])), range(len(wa[1])), range(len(wb[0])), range(len(wb[1]))
        ):
            w = ps * wa[0][mx] * wa[1][mxp] * wb[0][my] * wb[1][myp]
            if w == 0:
                continue
            row = (
                int(model.outcome_a[0][l1, mx]),
                int(model.outcome_a[1][l1, mxp]),
                int(model.outcome_b[0][l2, my]),
                int(model.outcome_b[1][l2, myp]),
            )
            out[row] = out.get(row, zero) + w
    return out


# ---------------------------------------------------------------------------
# correlation tables


@dataclass(frozen=True)
class ContextStats:
    """Pairwise expectation and marginals for one context.

    ``n`` is the number of records behind an estimate; exact entries have
    ``n=None`` and zero standard errors.
    """

    E: object
    marginal_a: object
    marginal_b: object
    n: int | None = None
    se: float = 0.0
    se_a: float = 0.0
    se_b: float = 0.0

    def to_dict(self) -> dict:
        return {
            "E": float(self.E),
            "marginal_a": float(self.marginal_a),
            "marginal_b": float(self.marginal_b),
            "n": self.n,
            "se": float(self.se),
            "se_a": float(self.se_a),
            "se_b": float(self.se_b),
        }


@dataclass(frozen=True)
class CorrelationTable:
    """Per-context statistics in canonical context order.

    An entry of ``None`` marks an undefined context (no records, or zero
    coincidence probability). ``provenance`` is ``"raw"`` or ``"final"``.
    """

    entries: tuple
    provenance: str = "raw"
    exact: bool = False

    def __post_init__(self):
        if len(self.entries) != 4:
            raise ValueError("a correlation table has exactly four contexts")

    def __getitem__(self, context) -> ContextStats | None:
        return self.entries[as_context(context).index]

    def defined(self) -> bool:
        return all(e is not None for e in self.entries)

    def require_defined(self) -> None:
        missing = [CONTEXT_LABELS[c] for c, e in enumerate(self.entries) if e is None]
        if missing:
            raise UndefinedStatistic(f"undefined contexts in {self.provenance} table: {', '.join(missing)}")

    @property
    def E(self) -> tuple:
        self.require_defined()
        return tuple(e.E for e in self.entries)

    @property
    def se(self) -> tuple:
        self.require_defined()
        return tuple(e.se for e in self.entries)

    def to_dict(self) -> dict:
        return {
            "provenance": self.provenance,
            "exact": self.exact,
            "contexts": {
                CONTEXT_LABELS[c]: (e.to_dict() if e is not None else None) for c, e in enumerate(self.entries)
            },
        }


@dataclass(frozen=True)
class ExactCorrelations:
    """Exact raw and post-selected tables of a model.

    ``coincidence[c]`` is ``P(A != 0, B != 0)`` in context ``c``.
    """

    raw: CorrelationTable
    final: CorrelationTable
    coincidence: tuple
    distributions: tuple


def _stats_from_matrix(m: np.ndarray, post_select: bool, exact: bool) -> ContextStats | None:
    vals = np.array(OUTCOMES)
    if post_select:
        m = m.copy()
        m[1, :] = 0
        m[:, 1] = 0
        total = m.sum()
        if total == 0:
            return None
        m = m / total if not exact else np.vectorize(lambda v: Fraction(v) / total, otypes=[object])(m)
    E = sum(m[i, j] * vals[i] * vals[j] for i in range(3) for j in range(3))
    ma = sum(m[i, :].sum() * vals[i] for i in range(3))
    mb = sum(m[:, j].sum() * vals[j] for j in range(3))
    if exact:
        E, ma, mb = Fraction(E), Fraction(ma), Fraction(mb)
    return ContextStats(E=E, marginal_a=ma, marginal_b=mb)


def tables_from_distributions(matrices: Sequence[np.ndarray], exact: bool) -> ExactCorrelations:
    """Build raw/final tables from four 3x3 outcome matrices (rows: a, cols: b)."""
    raw = tuple(_stats_from_matrix(m, False, exact) for m in matrices)
    final = tuple(_stats_from_matrix(m, True, exact) for m in matrices)
    coinc = tuple(
        sum(m[i, j] for i in (0, 2) for j in (0, 2)) for m in matrices
    )
    return ExactCorrelations(
        raw=CorrelationTable(raw, "raw", exact=exact),
        final=CorrelationTable(final, "final", exact=exact),
        coincidence=coinc,
        distributions=tuple(matrices),
    )


def exact_correlations(model: Model) -> ExactCorrelations:
    """Raw and post-selected expectations of every context, by exact summation."""
    mats = [_context_matrix(model, ctx) for ctx in CONTEXTS]
    return tables_from_distributions(mats, model.exact)


# ---------------------------------------------------------------------------
# sampling

SEED_RULE = "SeedSequence(master_seed, spawn_key=(stream, index))"


def derive_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one work unit.

    The stream for ``key`` is ``PCG64(SeedSequence(master_seed, spawn_key=key))``,
    so it depends only on the master seed and the unit's identity, never on
    which worker happens to run it.
    """
    if master_seed is None:
        raise ValueError("a master seed is required")
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def _categorical(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(weights.ravel())
    idx = np.searchsorted(cdf, u * cdf[-1], side="right")
    return np.minimum(idx, cdf.size - 1)


@dataclass(frozen=True, eq=False)
class _FloatTables:
    source: np.ndarray
    instr_a: tuple
    instr_b: tuple
    instr_pair: tuple | None


def _float_tables(model: Model) -> _FloatTables:
    cached = model.meta.get("_float_tables")
    if cached is None:
        cached = _FloatTables(
            source=model.source.as_float(),
            instr_a=tuple(t.as_float() for t in model.instr_a) if model.instr_a else (),
            instr_b=tuple(t.as_float() for t in model.instr_b) if model.instr_b else (),
            instr_pair=tuple(t.as_float() for t in model.instr_pair) if model.instr_pair else None,
        )
        model.meta["_float_tables"] = cached
    return cached


def sample_hidden(model: Model, context, n: int, rng: np.random.Generator):
    """Draw ``n`` hidden samples for one context.

    Returns index arrays ``(lambda1, lambda2, mu_a, mu_b)``. Draw order is
    fixed: source first, then instruments.
    """
    ctx = as_context(context)
    ft = _float_tables(model)
    n2 = ft.source.shape[1]
    flat = _categorical(ft.source, rng.random(n))
    l1, l2 = flat // n2, flat % n2
    if ft.instr_pair is not None:
        pair = ft.instr_pair[ctx.index]
        k = _categorical(pair, rng.random(n))
        mu_a, mu_b = k // pair.shape[1], k % pair.shape[1]
    else:
        mu_a = _categorical(ft.instr_a[ctx.alice], rng.random(n))
        mu_b = _categorical(ft.instr_b[ctx.bob], rng.random(n))
    return l1, l2, mu_a, mu_b


def sample_context(model: Model, context, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``n`` outcome pairs in one context; returns int8 arrays ``(a, b)``."""
    ctx = as_context(context)
    l1, l2, mu_a, mu_b = sample_hidden(model, ctx, n, rng)
    a = model.outcome_a[ctx.alice][l1, mu_a]
    b = model.outcome_b[ctx.bob][l2, mu_b]
    return a, b


def sample_trial(model: Model, context, rng: np.random.Generator) -> tuple[int, int]:
    a, b = sample_context(model, context, 1, rng)
    return int(a[0]), int(b[0])


def sample_rows(model: Model, n: int, rng: np.random.Generator) -> np.ndarray:
    """Sample ``n`` joint rows ``(A_x, A_x', B_y, B_y')`` from a joint-capable model."""
    if model.kind not in JOINT_KINDS:
        raise ModelError("model.kind", f"{model.kind.value} models cannot emit joint rows")
    ft = _float_tables(model)
    n2 = ft.source.shape[1]
    flat = _categorical(ft.source, rng.random(n))
    l1, l2 = flat // n2, flat % n2
    mx = _categorical(ft.instr_a[0], rng.random(n))
    mxp = _categorical(ft.instr_a[1], rng.random(n))
    my = _categorical(ft.instr_b[0], rng.random(n))
    myp = _categorical(ft.instr_b[1], rng.random(n))
    return np.stack(
        [
            model.outcome_a[0][l1, mx],
            model.outcome_a[1][l1, mxp],
            model.outcome_b[0][l2, my],
            model.outcome_b[1][l2, myp],
        ],
        axis=1,
    ).astype(np.int8)


# ---------------------------------------------------------------------------
# JSON model files

MODEL_SCHEMA = {
    "type": "object",
    "required": ["kind", "lambda_spaces", "weights", "outcome_tables"],
    "properties": {
        "kind": {"enum": [k.value for k in ModelKind]},
        "name": {"type": "string"},
        "lambda_spaces": {
            "type": "object",
            "required": ["lambda1", "lambda2", "instrument_a", "instrument_b"],
            "properties": {
                "lambda1": {"type": "integer", "minimum": 1},
                "lambda2": {"type": "integer", "minimum": 1},
                "instrument_a": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2},
                "instrument_b": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2},
            },
        },
        "weights": {
            "type": "object",
            "required": ["source"],
            "properties": {
                "source": {"type": "array"},
                "instr_a": {"type": "array", "minItems": 2, "maxItems": 2},
                "instr_b": {"type": "array", "minItems": 2, "maxItems": 2},
                "instr_pair": {"type": "array", "minItems": 4, "maxItems": 4},
            },
        },
        "outcome_tables": {
            "type": "object",
            "required": ["a", "b"],
            "properties": {
                "a": {"type": "array", "minItems": 2, "maxItems": 2},
                "b": {"type": "array", "minItems": 2, "maxItems": 2},
            },
        },
        "delays": {
            "type": "object",
            "required": ["a", "b"],
            "properties": {"a": {"type": "array"}, "b": {"type": "array"}},
        },
        "angles": {
            "type": "object",
            "required": ["a", "b"],
            "properties": {
                "a": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "b": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
            },
        },
    },
}


def validate_against(schema: dict, doc, root: str = "") -> None:
    """Raise :class:`ModelError` with a dotted path for the first schema violation."""
    import jsonschema

    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = root
        for part in err.absolute_path:
            path += f"[{part}]" if isinstance(part, int) else (f".{part}" if path else str(part))
        if err.validator == "required":
            # name the missing field itself
            missing = next(k for k in err.validator_value if k not in err.instance)
            path = f"{path}.{missing}" if path else missing
        raise ModelError(path or "<root>", err.message)


def model_to_dict(model: Model) -> dict:
    doc = {
        "kind": model.kind.value,
        "name": model.name,
        "lambda_spaces": {
            "lambda1": model.source.shape[0],
            "lambda2": model.source.shape[1],
            "instrument_a": [int(t.shape[1]) for t in model.outcome_a],
            "instrument_b": [int(t.shape[1]) for t in model.outcome_b],
        },
        "weights": {"source": model.source.to_json()},
        "outcome_tables": {
            "a": [t.tolist() for t in model.outcome_a],
            "b": [t.tolist() for t in model.outcome_b],
        },
    }
    if model.instr_pair is not None:
        doc["weights"]["instr_pair"] = [t.to_json() for t in model.instr_pair]
    else:
        doc["weights"]["instr_a"] = [t.to_json() for t in model.instr_a]
        doc["weights"]["instr_b"] = [t.to_json() for t in model.instr_b]
    if model.delay_a is not None:
        doc["delays"] = {"a": [t.tolist() for t in model.delay_a], "b": [t.tolist() for t in model.delay_b]}
    if model.angles is not None:
        doc["angles"] = {"a": list(model.angles[0]), "b": list(model.angles[1])}
    return doc


def model_from_dict(doc: dict) -> Model:
    validate_against(MODEL_SCHEMA, doc)
    spaces = doc["lambda_spaces"]
    weights = doc["weights"]
    src = ProbTable(weights["source"], "weights.source")
    if src.shape != (spaces["lambda1"], spaces["lambda2"]):
        raise ModelError("weights.source", f"shape {src.shape} disagrees with lambda_spaces")
    tables = doc["outcome_tables"]
    for side, key in (("a", "instrument_a"), ("b", "instrument_b")):
        for s in range(2):
            shape = np.shape(tables[side][s])
            want = (spaces["lambda1" if side == "a" else "lambda2"], spaces[key][s])
            if shape != want:
                raise ModelError(f"outcome_tables.{side}[{s}]", f"shape {shape}, expected {want}")
    kind = ModelKind(doc["kind"])
    kwargs = {}
    if kind is ModelKind.CONTEXTUAL_CORRELATED:
        if "instr_pair" not in weights:
            raise ModelError("weights.instr_pair", "required for ContextualCorrelated models")
        kwargs["instr_pair"] = tuple(ProbTable(p, f"weights.instr_pair[{c}]") for c, p in enumerate(weights["instr_pair"]))
    else:
        for key in ("instr_a", "instr_b"):
            if key in weights:
                kwargs[key] = tuple(ProbTable(p, f"weights.{key}[{s}]") for s, p in enumerate(weights[key]))
    if "delays" in doc:
        kwargs["delay_a"] = tuple(doc["delays"]["a"])
        kwargs["delay_b"] = tuple(doc["delays"]["b"])
    if "angles" in doc:
        kwargs["angles"] = (tuple(doc["angles"]["a"]), tuple(doc["angles"]["b"]))
    return Model(
        kind=kind,
        source=src,
        outcome_a=tuple(tables["a"]),
        outcome_b=tuple(tables["b"]),
        name=doc.get("name", "model"),
        **kwargs,
    )


def load_model(path) -> Model:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelError("<root>", f"invalid JSON: {exc}") from None
    return model_from_dict(doc)


def save_model(model: Model, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1, sort_keys=True)
        fh.write("\n")


def iter_contexts() -> Iterable[Context]:
    return iter(CONTEXTS)
