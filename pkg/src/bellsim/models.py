"""Model zoo: recipe-driven constructors for every model family.

A :class:`ModelRecipe` is a serializable ``(kind, parameters)`` pair. The
``build_*`` functions validate parameters and return immutable
:class:`~bellsim.core.Model` objects. Shipped demonstration recipes
(``demo_eq3``, ``demo_eq5``, ``demo_timetag``) and the saturating mixture
live here too, along with random recipe generators used by property tests.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Callable

import numpy as np

from .core import (
    CONTEXTS,
    Model,
    ModelError,
    ModelKind,
    ProbTable,
    _to_number,
    validate_against,
)


@dataclass(frozen=True)
class ModelRecipe:
    kind: ModelKind
    parameters: dict = field(default_factory=dict)
    name: str = "model"

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", ModelKind(self.kind))
        except ValueError:
            raise ModelError("recipe.kind", f"unknown model kind {self.kind!r}") from None

    def build(self) -> Model:
        return build(self)

    def to_dict(self) -> dict:
        return {"recipe": {"kind": self.kind.value, "name": self.name, "parameters": _jsonable(self.parameters)}}


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items() if not callable(v)}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, Fraction):
        return str(value) if value.denominator != 1 else value.numerator
    if isinstance(value, ModelRecipe):
        return value.to_dict()["recipe"]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def _require(params: dict, key: str, kind: ModelKind):
    if key not in params:
        raise ModelError(f"recipe.parameters.{key}", f"required for {kind.value} recipes")
    return params[key]


def _pm_table(rows, path: str) -> list:
    """Per-setting +-1 vectors [setting][lambda] -> tables [setting][lambda][1]."""
    if len(rows) != 2:
        raise ModelError(path, "exactly two settings required")
    out = []
    for s, row in enumerate(rows):
        col = []
        for k, v in enumerate(row):
            if v not in (-1, 1):
                raise ModelError(f"{path}[{s}][{k}]", f"deterministic outcome must be +-1, got {v!r}")
            col.append([int(v)])
        out.append(col)
    return out


# ---------------------------------------------------------------------------
# constructors


def build_deterministic_local(recipe: ModelRecipe) -> Model:
    """Definite +-1 outcomes per (own setting, own source value).

    Parameters: ``source`` (lambda1 x lambda2 weights), ``a`` and ``b``
    (``[setting][lambda]`` with values +-1).
    """
    p = recipe.parameters
    kind = ModelKind.DETERMINISTIC_LOCAL
    src = ProbTable(_require(p, "source", kind), "recipe.parameters.source")
    a = _pm_table(_require(p, "a", kind), "recipe.parameters.a")
    b = _pm_table(_require(p, "b", kind), "recipe.parameters.b")
    return Model(kind=kind, source=src, outcome_a=tuple(a), outcome_b=tuple(b), name=recipe.name)


def _quantile_coupling(response, path: str):
    """Fold P(+1 | lambda) into a shared uniform instrument variable.

    The instrument index selects an interval of [0, 1) between consecutive
    distinct response probabilities; the outcome is +1 when the interval lies
    below P(+1 | lambda). Exact for rational inputs.
    """
    probs = []
    for k, row in enumerate(response):
        if len(row) != 2:
            raise ModelError(f"{path}[{k}]", "rows are [P(-1), P(+1)]")
        pm, pp = (_to_number(v, f"{path}[{k}][{i}]") for i, v in enumerate(row))
        total = pm + pp
        if isinstance(total, Fraction) and total != 1 or not isinstance(total, Fraction) and abs(total - 1) > 1e-12:
            raise ModelError(f"{path}[{k}]", f"probabilities sum to {total}, not 1")
        if pm < 0 or pp < 0:
            raise ModelError(f"{path}[{k}]", "negative probability")
        probs.append(pp)
    exact = all(isinstance(v, Fraction) for v in probs)
    one, zero = (Fraction(1), Fraction(0)) if exact else (1.0, 0.0)
    cuts = sorted(set(probs) | {zero, one})
    weights = [hi - lo for lo, hi in zip(cuts[:-1], cuts[1:])]
    table = [[1 if hi <= pk else -1 for lo, hi in zip(cuts[:-1], cuts[1:])] for pk in probs]
    if not exact:
        weights = [float(w) for w in weights]
    return weights, table


def build_stochastic_local(recipe: ModelRecipe) -> Model:
    """Local model with outcome noise.

    Parameters: ``source`` and ``response_a`` / ``response_b`` given as
    ``[setting][lambda] = [P(-1), P(+1)]``. The noise becomes a per-setting
    instrument variable, so the structural locality of the tables holds.
    """
    p = recipe.parameters
    kind = ModelKind.STOCHASTIC_LOCAL
    src = ProbTable(_require(p, "source", kind), "recipe.parameters.source")
    ia, ib, ta, tb = [], [], [], []
    for side, instr, tabs in (("a", ia, ta), ("b", ib, tb)):
        resp = _require(p, f"response_{side}", kind)
        if len(resp) != 2:
            raise ModelError(f"recipe.parameters.response_{side}", "exactly two settings required")
        for s in range(2):
            w, t = _quantile_coupling(resp[s], f"recipe.parameters.response_{side}[{s}]")
            instr.append(ProbTable(w, f"recipe.parameters.response_{side}[{s}]"))
            tabs.append(t)
    return Model(
        kind=kind,
        source=src,
        instr_a=tuple(ia),
        instr_b=tuple(ib),
        outcome_a=tuple(ta),
        outcome_b=tuple(tb),
        name=recipe.name,
    )


def _angles(p: dict):
    if "angles" not in p:
        return None
    ang = p["angles"]
    return (tuple(float(v) for v in ang["a"]), tuple(float(v) for v in ang["b"]))


def build_contextual_product(recipe: ModelRecipe) -> Model:
    """Setting-dependent instrument variables with independent weights.

    Parameters: ``source``, ``instr_a`` / ``instr_b`` (per-setting weights),
    ``a`` / ``b`` ternary outcome tables ``[setting][lambda][instrument]``.
    """
    p = recipe.parameters
    kind = ModelKind.CONTEXTUAL_PRODUCT
    src = ProbTable(_require(p, "source", kind), "recipe.parameters.source")
    ia = tuple(ProbTable(w, f"recipe.parameters.instr_a[{s}]") for s, w in enumerate(_require(p, "instr_a", kind)))
    ib = tuple(ProbTable(w, f"recipe.parameters.instr_b[{s}]") for s, w in enumerate(_require(p, "instr_b", kind)))
    return Model(
        kind=kind,
        source=src,
        instr_a=ia,
        instr_b=ib,
        outcome_a=tuple(_require(p, "a", kind)),
        outcome_b=tuple(_require(p, "b", kind)),
        angles=_angles(p),
        name=recipe.name,
    )


def malus_pair_table(base, cos_theta: float) -> np.ndarray:
    """Tilt a 2x2 instrument table toward (anti)alignment by ``1 - 2 cos^2``.

    Instrument states are labelled +1 (index 0) and -1 (index 1) on both
    sides; the resulting correlation of the labels is ``1 - 2 cos^2(theta)``,
    i.e. ``-cos(2 theta)`` for a uniform base.
    """
    base = np.full((2, 2), 0.25) if base is None else np.asarray(base, dtype=np.float64)
    if base.shape != (2, 2):
        raise ModelError("recipe.parameters.base_table", "malus hook needs a 2x2 base table")
    r = 1.0 - 2.0 * cos_theta * cos_theta
    sigma = np.array([1.0, -1.0])
    tilted = base * (1.0 + np.multiply.outer(sigma, sigma) * r)
    return tilted / tilted.sum()


PAIR_TABLE_HOOKS: dict[str, Callable] = {"malus": malus_pair_table}


def build_contextual_correlated(recipe: ModelRecipe) -> Model:
    """Per-context joint instrument weights ``p_xy``; outcomes +-1 only.

    Either supply ``instr_pair`` (four tables in canonical context order) or
    ``angles`` plus ``hook``: a name from :data:`PAIR_TABLE_HOOKS` or a
    callable ``hook(base_table, cos_theta) -> table`` evaluated at the
    relative angle ``theta = angle_b - angle_a`` of each context.
    """
    p = recipe.parameters
    kind = ModelKind.CONTEXTUAL_CORRELATED
    src = ProbTable(_require(p, "source", kind), "recipe.parameters.source")
    angles = _angles(p)
    if "instr_pair" in p:
        pairs = tuple(ProbTable(w, f"recipe.parameters.instr_pair[{c}]") for c, w in enumerate(p["instr_pair"]))
        if len(pairs) != 4:
            raise ModelError("recipe.parameters.instr_pair", "four context tables required")
    elif "hook" in p:
        if angles is None:
            raise ModelError("recipe.parameters.angles", "angle hook needs per-setting angles")
        hook = p["hook"]
        if isinstance(hook, str):
            if hook not in PAIR_TABLE_HOOKS:
                raise ModelError("recipe.parameters.hook", f"unknown hook {hook!r}")
            hook = PAIR_TABLE_HOOKS[hook]
        base = p.get("base_table")
        pairs = tuple(
            ProbTable(
                hook(base, math.cos(angles[1][ctx.bob] - angles[0][ctx.alice])),
                f"recipe.parameters.hook[{c}]",
            )
            for c, ctx in enumerate(CONTEXTS)
        )
    else:
        raise ModelError("recipe.parameters.instr_pair", "give instr_pair or angles + hook")
    return Model(
        kind=kind,
        source=src,
        instr_pair=pairs,
        outcome_a=tuple(_require(p, "a", kind)),
        outcome_b=tuple(_require(p, "b", kind)),
        angles=angles,
        name=recipe.name,
    )


def build_timetag_model(recipe: ModelRecipe) -> Model:
    """Local model plus setting- and lambda-dependent detection delays.

    Parameters: ``base`` (a DeterministicLocal or StochasticLocal recipe) and
    ``delay_a`` / ``delay_b``. Delays are ``[setting][lambda]`` (applied to every
    instrument state) or ``[setting][lambda][instrument]``, in time units.
    """
    p = recipe.parameters
    kind = ModelKind.TIME_TAG
    base = _require(p, "base", kind)
    if isinstance(base, dict):
        base = recipe_from_dict(base if "recipe" in base else {"recipe": base})
    if base.kind not in (ModelKind.DETERMINISTIC_LOCAL, ModelKind.STOCHASTIC_LOCAL):
        raise ModelError("recipe.parameters.base", "time-tag models wrap a local recipe")
    local = build(base)
    delays = {}
    for side, tabs in (("a", local.outcome_a), ("b", local.outcome_b)):
        raw = _require(p, f"delay_{side}", kind)
        if len(raw) != 2:
            raise ModelError(f"recipe.parameters.delay_{side}", "exactly two settings required")
        out = []
        for s in range(2):
            arr = np.asarray(raw[s], dtype=np.float64)
            if arr.ndim == 1:
                arr = np.repeat(arr[:, None], tabs[s].shape[1], axis=1)
            bad = np.argwhere(~(arr >= 0))
            if len(bad):
                idx = "".join(f"[{i}]" for i in bad[0])
                raise ModelError(f"recipe.parameters.delay_{side}[{s}]{idx}", "negative delay")
            out.append(arr)
        delays[side] = tuple(out)
    return Model(
        kind=kind,
        source=local.source,
        instr_a=local.instr_a,
        instr_b=local.instr_b,
        outcome_a=local.outcome_a,
        outcome_b=local.outcome_b,
        delay_a=delays["a"],
        delay_b=delays["b"],
        name=recipe.name,
        meta={"base_kind": base.kind.value},
    )


def build_gl_coupling(model: Model) -> Model:
    """Joint model on the product of all hidden spaces.

    Every trial draws ``(lambda1, lambda2, mu_x, mu_x', mu_y, mu_y')`` and
    outputs all four outcomes. Its pairwise distributions coincide with the
    raw context distributions of the input product model.
    """
    if not isinstance(model, Model) or model.kind is not ModelKind.CONTEXTUAL_PRODUCT:
        got = model.kind.value if isinstance(model, Model) else type(model).__name__
        raise ModelError("model.kind", f"coupling is defined for ContextualProduct models, got {got}")
    return model.with_kind(ModelKind.COUPLED_JOINT, name=f"{model.name}-coupling")


def quantum_singlet_correlation(angle_a: float, angle_b: float) -> float:
    """Polarization-singlet correlation ``-cos(2 (angle_a - angle_b))``."""
    return -math.cos(2.0 * (angle_a - angle_b))


def quantum_table(angles_a=(0.0, math.pi / 4), angles_b=(math.pi / 8, 3 * math.pi / 8)) -> tuple:
    """Four singlet correlations in canonical context order (optimal angles by default)."""
    return tuple(quantum_singlet_correlation(angles_a[c.alice], angles_b[c.bob]) for c in CONTEXTS)


_BUILDERS = {
    ModelKind.DETERMINISTIC_LOCAL: build_deterministic_local,
    ModelKind.STOCHASTIC_LOCAL: build_stochastic_local,
    ModelKind.CONTEXTUAL_PRODUCT: build_contextual_product,
    ModelKind.CONTEXTUAL_CORRELATED: build_contextual_correlated,
    ModelKind.TIME_TAG: build_timetag_model,
}


def build(recipe: ModelRecipe) -> Model:
    if recipe.kind is ModelKind.COUPLED_JOINT:
        inner = recipe.parameters.get("of")
        if inner is None:
            raise ModelError("recipe.parameters.of", "CoupledJoint recipes wrap a ContextualProduct recipe")
        if isinstance(inner, str):
            inner = demo_recipe(inner)
        elif not isinstance(inner, ModelRecipe):
            inner = recipe_from_dict(inner if "recipe" in inner else {"recipe": inner})
        return build_gl_coupling(build(inner))
    return _BUILDERS[recipe.kind](recipe)


# ---------------------------------------------------------------------------
# recipe files

RECIPE_SCHEMA = {
    "type": "object",
    "required": ["recipe"],
    "properties": {
        "recipe": {
            "type": "object",
            "required": ["kind", "parameters"],
            "properties": {
                "kind": {"enum": [k.value for k in ModelKind]},
                "name": {"type": "string"},
                "parameters": {"type": "object"},
            },
        }
    },
}


def recipe_from_dict(doc: dict) -> ModelRecipe:
    validate_against(RECIPE_SCHEMA, doc)
    r = doc["recipe"]
    return ModelRecipe(kind=ModelKind(r["kind"]), parameters=r["parameters"], name=r.get("name", "model"))


def load_recipe(path) -> ModelRecipe:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelError("<root>", f"invalid JSON: {exc}") from None
    return recipe_from_dict(doc)


def save_recipe(recipe: ModelRecipe, path) -> None:
    with open(path, "w") as fh:
        json.dump(recipe.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# shipped recipes


def _diag_source(weights) -> list:
    n = len(weights)
    return [[weights[i] if i == j else 0 for j in range(n)] for i in range(n)]


def constant_recipe(a: int = 1, b: int = 1) -> ModelRecipe:
    return ModelRecipe(
        ModelKind.DETERMINISTIC_LOCAL,
        {"source": [[1]], "a": [[a], [a]], "b": [[b], [b]]},
        name=f"constant{a:+d}{b:+d}",
    )


def saturating_mixture_recipe() -> ModelRecipe:
    """Two equiprobable atoms: (a, a', b, b') = (1, 1, 1, 1) and (1, -1, 1, 1).

    Exact correlations (1, 1, 0, 0), so the fixed-sign CHSH sum is exactly 2.
    """
    half = Fraction(1, 2)
    return ModelRecipe(
        ModelKind.DETERMINISTIC_LOCAL,
        {"source": _diag_source([half, half]), "a": [[1, 1], [1, -1]], "b": [[1, 1], [1, 1]]},
        name="saturating_mixture",
    )


DEMO_EQ3_ANGLES = {"a": [0.0, math.pi / 4], "b": [math.pi / 8, 3 * math.pi / 8]}


def demo_eq3_recipe(n_angles: int = 16, thresholds=(Fraction(0), Fraction(1, 2)), minus_penalty=0.25) -> ModelRecipe:
    """Threshold-detection contextual model (Pearle-style).

    The shared source variable is a polarization angle on an offset grid of
    ``n_angles`` points in [0, pi). Each instrument draws a detection
    threshold ``t`` uniformly from ``thresholds``; with ``c = cos 2(theta - alpha)``
    Alice reports +1 if ``c >= t``, -1 if ``-c >= t + minus_penalty`` and 0
    otherwise. Bob mirrors this with reversed signs and no penalty. The
    penalty makes Alice's detection sign-asymmetric, which is what produces
    remote-setting dependence of post-selected marginals.
    """
    thetas = [(k + 0.5) * math.pi / n_angles for k in range(n_angles)]

    def alice(alpha, theta, t):
        c = math.cos(2 * (theta - alpha))
        if c >= 0:
            return 1 if c >= t else 0
        return -1 if -c >= t + minus_penalty else 0

    def bob(beta, theta, t):
        c = math.cos(2 * (theta - beta))
        if c >= 0:
            return -1 if c >= t else 0
        return 1 if -c >= t else 0

    ts = [float(t) for t in thresholds]
    w_instr = [Fraction(1, len(ts))] * len(ts)
    a = [[[alice(al, th, t) for t in ts] for th in thetas] for al in DEMO_EQ3_ANGLES["a"]]
    b = [[[bob(be, th, t) for t in ts] for th in thetas] for be in DEMO_EQ3_ANGLES["b"]]
    return ModelRecipe(
        ModelKind.CONTEXTUAL_PRODUCT,
        {
            "source": _diag_source([Fraction(1, n_angles)] * n_angles),
            "instr_a": [w_instr, w_instr],
            "instr_b": [w_instr, w_instr],
            "a": a,
            "b": b,
            "angles": DEMO_EQ3_ANGLES,
        },
        name="demo_eq3",
    )


def demo_eq5_recipe() -> ModelRecipe:
    """Correlated-instrument model with Malus-law tilt; no zeros, no post-selection."""
    return ModelRecipe(
        ModelKind.CONTEXTUAL_CORRELATED,
        {
            "source": [[1]],
            "a": [[[1, -1]], [[1, -1]]],
            "b": [[[1, -1]], [[1, -1]]],
            "angles": DEMO_EQ3_ANGLES,
            "hook": "malus",
        },
        name="demo_eq5",
    )


# (a_x, a_x', b_y, b_y') and delays (d_x, d_x', d_y, d_y') per atom type
_TIMETAG_TYPES = (
    # coincident in (x,y), (x,y'), (x',y) at narrow windows, not in (x',y')
    (Fraction(7, 10), (1, 1, 1, 1), (0.15, 0.35, 0.25, 0.05)),
    # coincident in (x,y) and (x',y') only; anticorrelated at (x',y')
    (Fraction(1, 5), (1, 1, 1, -1), (0.35, 0.05, 0.45, 0.05)),
    # prompt clicks everywhere; CHSH term -2
    (Fraction(1, 10), (1, 1, -1, -1), (0.0, 0.0, 0.0, 0.0)),
)

DEMO_TIMETAG_WINDOWS = (0.25, 0.45, 0.65, 0.85, 1.0)


def demo_timetag_recipe() -> ModelRecipe:
    """Deterministic local model whose delays bias narrow coincidence windows.

    Three atom types, each paired with its sign-flipped twin (same delays).
    All delays are below half the default emission spacing.
    """
    weights, rows, delays = [], [], []
    for w, outs, dl in _TIMETAG_TYPES:
        for flip in (1, -1):
            weights.append(w / 2)
            rows.append([flip * o for o in outs])
            delays.append(list(dl))
    a = [[r[0] for r in rows], [r[1] for r in rows]]
    b = [[r[2] for r in rows], [r[3] for r in rows]]
    base = ModelRecipe(
        ModelKind.DETERMINISTIC_LOCAL,
        {"source": _diag_source(weights), "a": a, "b": b},
        name="demo_timetag_base",
    )
    return ModelRecipe(
        ModelKind.TIME_TAG,
        {
            "base": base,
            "delay_a": [[d[0] for d in delays], [d[1] for d in delays]],
            "delay_b": [[d[2] for d in delays], [d[3] for d in delays]],
            "windows": list(DEMO_TIMETAG_WINDOWS),
        },
        name="demo_timetag",
    )


DEMO_FACTORIES = {
    "demo_eq3": demo_eq3_recipe,
    "demo_eq5": demo_eq5_recipe,
    "demo_timetag": demo_timetag_recipe,
    "saturating_mixture": saturating_mixture_recipe,
}


def demo_recipe(name: str) -> ModelRecipe:
    """Load a shipped recipe from the package data directory."""
    if name not in DEMO_FACTORIES:
        raise ModelError("demo", f"unknown demo {name!r}; known: {sorted(DEMO_FACTORIES)}")
    text = resources.files("bellsim.data").joinpath(f"{name}.json").read_text()
    return recipe_from_dict(json.loads(text))


def demo_model(name: str) -> Model:
    return build(demo_recipe(name))


# ---------------------------------------------------------------------------
# random recipes for property tests


def _random_simplex(rng: np.random.Generator, shape, denom: int = 12) -> np.ndarray:
    """Random rational weights with a common denominator; strictly positive support not required."""
    size = int(np.prod(shape))
    counts = rng.multinomial(denom, np.full(size, 1.0 / size))
    return np.array([Fraction(int(c), denom) for c in counts], dtype=object).reshape(shape)


def _pm(rng, shape) -> list:
    return (2 * rng.integers(0, 2, size=shape) - 1).tolist()


def random_deterministic_recipe(rng: np.random.Generator, n1: int = 3, n2: int = 3) -> ModelRecipe:
    return ModelRecipe(
        ModelKind.DETERMINISTIC_LOCAL,
        {"source": _random_simplex(rng, (n1, n2)).tolist(), "a": _pm(rng, (2, n1)), "b": _pm(rng, (2, n2))},
        name="random_deterministic",
    )


def random_stochastic_recipe(rng: np.random.Generator, n1: int = 3, n2: int = 3, denom: int = 6) -> ModelRecipe:
    def resp(n):
        out = []
        for _ in range(2):
            rows = []
            for _ in range(n):
                k = int(rng.integers(0, denom + 1))
                rows.append([Fraction(denom - k, denom), Fraction(k, denom)])
            out.append(rows)
        return out

    return ModelRecipe(
        ModelKind.STOCHASTIC_LOCAL,
        {"source": _random_simplex(rng, (n1, n2)).tolist(), "response_a": resp(n1), "response_b": resp(n2)},
        name="random_stochastic",
    )


def random_product_recipe(
    rng: np.random.Generator, n1: int = 3, n2: int = 3, m: int = 2, zeros: bool = True
) -> ModelRecipe:
    def outcomes(n):
        if zeros:
            return rng.integers(-1, 2, size=(2, n, m)).tolist()
        return (2 * rng.integers(0, 2, size=(2, n, m)) - 1).tolist()

    return ModelRecipe(
        ModelKind.CONTEXTUAL_PRODUCT,
        {
            "source": _random_simplex(rng, (n1, n2)).tolist(),
            "instr_a": [_random_simplex(rng, (m,), 6).tolist() for _ in range(2)],
            "instr_b": [_random_simplex(rng, (m,), 6).tolist() for _ in range(2)],
            "a": outcomes(n1),
            "b": outcomes(n2),
        },
        name="random_product",
    )


def random_timetag_recipe(rng: np.random.Generator, n: int = 4, max_delay: float = 0.45) -> ModelRecipe:
    base = random_deterministic_recipe(rng, n, n)
    grid = np.round(np.linspace(0.0, max_delay, 10), 3)
    return ModelRecipe(
        ModelKind.TIME_TAG,
        {
            "base": base,
            "delay_a": rng.choice(grid, size=(2, n)).tolist(),
            "delay_b": rng.choice(grid, size=(2, n)).tolist(),
        },
        name="random_timetag",
    )
