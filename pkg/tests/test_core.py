import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats as sps

import oracles
from bellsim import core, models
from bellsim.core import CONTEXTS, Model, ModelError, ModelKind, ProbTable


def _dist_matrix(d):
    idx = {-1: 0, 0: 1, 1: 2}
    m = np.zeros((3, 3), dtype=object)
    for (a, b), p in d.items():
        m[idx[a], idx[b]] = p
    return m


def test_prob_table_exact_and_float():
    t = ProbTable(["1/3", "2/3"], "w")
    assert t.exact and t.weights[0] == Fraction(1, 3)
    f = ProbTable([0.25, 0.75], "w")
    assert not f.exact


@pytest.mark.parametrize(
    "weights,path",
    [(["1/2", "1/3"], "w"), ([-0.5, 1.5], "w[0]"), ([0.5, float("nan")], "w[1]")],
)
def test_prob_table_rejects(weights, path):
    with pytest.raises(ModelError) as err:
        ProbTable(weights, "w")
    assert err.value.path.startswith("w")


def test_context_labels_and_index():
    assert [c.label for c in CONTEXTS] == ["xy", "xyp", "xpy", "xpyp"]
    assert [c.index for c in CONTEXTS] == [0, 1, 2, 3]
    assert core.as_context("xpy") == CONTEXTS[2]
    with pytest.raises(ModelError):
        core.as_context("zz")


def test_outcome_validation_names_cell():
    with pytest.raises(ModelError) as err:
        models.ModelRecipe(
            ModelKind.DETERMINISTIC_LOCAL, {"source": [[1]], "a": [[2], [1]], "b": [[1], [1]]}
        ).build()
    assert "a" in err.value.path


def test_deterministic_kind_rejects_zero():
    with pytest.raises(ModelError):
        models.ModelRecipe(ModelKind.DETERMINISTIC_LOCAL, {"source": [[1]], "a": [[0], [1]], "b": [[1], [1]]}).build()


def test_enumeration_sums_to_one(eq3):
    for c in CONTEXTS:
        assert sum(p for _, p in core.enumerate_context(eq3, c)) == 1


def test_exact_matches_oracle_for_demo_eq3(eq3):
    rec = models.demo_eq3_recipe()
    dists = oracles.product_distributions(rec.parameters)
    ex = core.exact_correlations(eq3)
    for c, d in enumerate(dists):
        assert ex.raw.entries[c].E == oracles.correlation(d)
        ps = oracles.post_selected(d)
        assert ex.final.entries[c].E == oracles.correlation(ps)
        assert ex.final.entries[c].marginal_b == oracles.marginals(ps)[1]


@given(st.integers(0, 2**32 - 1))
def test_deterministic_enumeration_matches_oracle(seed):
    rec = models.random_deterministic_recipe(np.random.default_rng(seed))
    m = rec.build()
    for c, d in enumerate(oracles.deterministic_distributions(rec.parameters)):
        assert dict(core.enumerate_context(m, c)) == d


@given(st.integers(0, 2**32 - 1))
def test_stochastic_quantile_coupling_matches_oracle(seed):
    rec = models.random_stochastic_recipe(np.random.default_rng(seed))
    m = rec.build()
    for c, d in enumerate(oracles.stochastic_distributions(rec.parameters)):
        assert dict(core.enumerate_context(m, c)) == d


@given(st.integers(0, 2**32 - 1))
def test_product_enumeration_matches_oracle(seed):
    rec = models.random_product_recipe(np.random.default_rng(seed))
    m = rec.build()
    for c, d in enumerate(oracles.product_distributions(rec.parameters)):
        assert dict(core.enumerate_context(m, c)) == d


@given(st.integers(0, 2**32 - 1))
def test_joint_projection_equals_context_route(seed):
    m = models.random_stochastic_recipe(np.random.default_rng(seed)).build()
    joint = core.enumerate_joint(m)
    assert sum(joint.values()) == 1
    for c in CONTEXTS:
        proj = {}
        for k, p in joint.items():
            key = (k[c.alice], k[2 + c.bob])
            proj[key] = proj.get(key, 0) + p
        ctx = {k: p for k, p in core.enumerate_context(m, c) if p != 0}
        assert {k: p for k, p in proj.items() if p != 0} == ctx


def test_enumerate_joint_rejects_contextual(eq3):
    with pytest.raises(ModelError):
        core.enumerate_joint(eq3)


def test_float_model_tolerance():
    rec = models.ModelRecipe(
        ModelKind.CONTEXTUAL_PRODUCT,
        {
            "source": [[0.1, 0.2], [0.3, 0.4]],
            "instr_a": [[0.5, 0.5], [1.0]],
            "instr_b": [[1.0], [0.25, 0.75]],
            "a": [[[1, 0], [-1, 1]], [[1], [0]]],
            "b": [[[1], [-1]], [[0, 1], [1, -1]]],
        },
    )
    m = rec.build()
    assert not m.exact
    for c in CONTEXTS:
        assert abs(sum(p for _, p in core.enumerate_context(m, c)) - 1) < 1e-12


def test_derive_rng_is_keyed():
    a = core.derive_rng(5, 0, 1).random(3)
    b = core.derive_rng(5, 0, 1).random(3)
    c = core.derive_rng(5, 0, 2).random(3)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_monte_carlo_matches_enumeration_within_4se(eq3):
    ex = core.exact_correlations(eq3)
    n = 40000
    for c in CONTEXTS:
        a, b = core.sample_context(eq3, c, n, core.derive_rng(11, 0, c.index))
        q = a.astype(float) * b
        se = q.std() / np.sqrt(n)
        assert abs(q.mean() - float(ex.raw[c].E)) < 4 * se


def test_sampling_chi_square(eq3):
    # one test over all four contexts: summed statistic, summed degrees of freedom
    n = 50000
    stat, dof = 0.0, 0
    for c in CONTEXTS:
        probs = dict(core.enumerate_context(eq3, c))
        keys = [k for k, p in probs.items() if p > 0]
        a, b = core.sample_context(eq3, c, n, core.derive_rng(3, 9, c.index))
        obs = np.array([np.sum((a == k[0]) & (b == k[1])) for k in keys])
        exp = np.array([float(probs[k]) * n for k in keys])
        assert obs.sum() == n
        stat += float(((obs - exp) ** 2 / exp).sum())
        dof += len(keys) - 1
    assert sps.chi2.sf(stat, dof) > 0.001


def test_sample_rows_marginals_match_joint():
    m = models.saturating_mixture_recipe().build()
    rows = core.sample_rows(m, 20000, core.derive_rng(1, 1, 0))
    assert set(np.unique(rows[:, 0])) == {1}
    assert abs(rows[:, 1].mean()) < 4 / np.sqrt(20000)


def test_model_json_round_trip(tmp_path, eq3, timetag):
    for m in (eq3, timetag, models.demo_model("demo_eq5")):
        p = tmp_path / f"{m.name}.json"
        core.save_model(m, p)
        back = core.load_model(p)
        assert back.kind is m.kind
        e1 = core.exact_correlations(m).raw.E
        e2 = core.exact_correlations(back).raw.E
        assert e1 == e2


def test_model_json_bad_field_named(tmp_path, eq3):
    doc = core.model_to_dict(eq3)
    doc["weights"]["source"][0][0] = "-1"
    with pytest.raises(ModelError) as err:
        core.model_from_dict(doc)
    assert err.value.path.startswith("weights.source")
    doc = core.model_to_dict(eq3)
    del doc["outcome_tables"]
    with pytest.raises(ModelError) as err:
        core.model_from_dict(doc)
    assert "outcome_tables" in err.value.path


def test_model_file_invalid_json(tmp_path):
    p = tmp_path / "m.json"
    p.write_text("{not json")
    with pytest.raises(ModelError):
        core.load_model(p)


def test_with_kind_preserves_tables(eq3):
    c = eq3.with_kind(ModelKind.COUPLED_JOINT)
    assert c.kind is ModelKind.COUPLED_JOINT and c.source is eq3.source
    assert isinstance(c, Model)
    json.dumps(core.model_to_dict(c))
