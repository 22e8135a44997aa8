import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from bellsim import core, models, processing, protocols, stats
from bellsim.core import ModelError, UndefinedStatistic
from bellsim.datasets import Dataset, DatasetKind, pair_records


def raw_from(ctx, a, b, kind=DatasetKind.RAW):
    return Dataset(kind, pair_records(np.array(ctx), np.array(a), np.array(b)), {"test": True})


def test_all_plus_one_records():
    ds = raw_from([0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3], [1] * 16, [1] * 16)
    t = stats.estimate_correlations(ds)
    assert t.E == (1, 1, 1, 1) and t.se == (0, 0, 0, 0)
    assert all(e.n == 4 for e in t.entries)


def test_empty_context_undefined():
    t = stats.estimate_correlations(raw_from([0, 1, 2], [1, 1, 1], [1, 1, 1]))
    assert t.entries[3] is None and not t.defined()
    with pytest.raises(UndefinedStatistic):
        stats.chsh_S(t)


def test_plug_in_se():
    t = stats.estimate_correlations(raw_from([0] * 4 + [1, 2, 3], [1, 1, -1, -1, 1, 1, 1], [1] * 7))
    assert t.entries[0].E == 0 and t.entries[0].se == pytest.approx(0.5)


@given(st.integers(0, 10**6))
def test_permutation_invariance(seed):
    m = models.demo_model("demo_eq3")
    ds = protocols.run_context_protocol(m, [40] * 4, seed)
    perm = np.random.default_rng(seed).permutation(len(ds))
    shuffled = Dataset(DatasetKind.RAW, ds.records[perm].copy(), ds.provenance)
    a, b = stats.estimate_correlations(ds), stats.estimate_correlations(shuffled)
    for x, y in zip(a.entries, b.entries):
        assert x.E == pytest.approx(y.E, abs=1e-15) and x.n == y.n


def test_chsh_values():
    zero = stats.table_from_correlations((0, 0, 0, 0))
    assert stats.chsh_S(zero).S == 0 and stats.chsh_S(zero).S_max == 0
    q = stats.table_from_correlations(models.quantum_table())
    assert stats.chsh_S(q).S_max == pytest.approx(2 * math.sqrt(2), abs=1e-12)
    t = stats.table_from_correlations((Fraction(1, 2), Fraction(-1, 2), Fraction(1, 3), Fraction(1, 3)))
    ch = stats.chsh_S(t)
    assert ch.S == Fraction(5, 3)
    assert ch.S_fixed == Fraction(1, 2) - Fraction(1, 2) + Fraction(1, 3) - Fraction(1, 3)


@given(st.lists(st.integers(-12, 12), min_size=4, max_size=4))
def test_S_max_matches_oracle(nums):
    E = [Fraction(v, 12) for v in nums]
    assert stats.chsh_S(stats.table_from_correlations(E)).S_max == oracles.chsh_max(E)


def test_raw_S_smaller_than_final_for_eq3(eq3):
    ex = core.exact_correlations(eq3)
    assert abs(stats.chsh_S(ex.raw).S_max) < abs(stats.chsh_S(ex.final).S_max)
    ds = protocols.run_context_protocol(eq3, [20000] * 4, 2)
    raw = stats.estimate_correlations(ds)
    fin = stats.estimate_correlations(processing.post_select(ds))
    assert abs(stats.chsh_S(raw).S_max) < abs(stats.chsh_S(fin).S_max)


def test_eberhard_all_zero_outcomes():
    ds = raw_from([0, 1, 2, 3], [0] * 4, [0] * 4)
    assert stats.eberhard_J(ds) == 0


def test_eberhard_rejects_final(eq3):
    fin = processing.post_select(protocols.run_context_protocol(eq3, [10] * 4, 1))
    with pytest.raises(ValueError):
        stats.eberhard_J(fin)


def test_eberhard_missing_context():
    with pytest.raises(UndefinedStatistic):
        stats.eberhard_J(raw_from([0, 1, 2], [0] * 3, [0] * 3))


@given(st.integers(0, 2**32 - 1))
def test_eberhard_local_nonpositive(seed):
    rng = np.random.default_rng(seed)
    rec = models.random_product_recipe(rng) if seed % 3 == 0 else models.random_stochastic_recipe(rng)
    if seed % 3 == 0:
        # product model with zero outcomes but setting-independent instruments is still local
        p = dict(rec.parameters)
        p["instr_a"] = [p["instr_a"][0], p["instr_a"][0]]
        p["instr_b"] = [p["instr_b"][0], p["instr_b"][0]]
        rec = models.ModelRecipe(rec.kind, p)
    ex = core.exact_correlations(rec.build())
    assert stats.eberhard_J_from_distributions(ex.distributions) <= 0


def test_eberhard_timetag_small_window_positive(timetag, goldens):
    ex = processing.windowed_correlations(timetag, models.DEMO_TIMETAG_WINDOWS[0])
    J = stats.eberhard_J_from_distributions(ex.distributions)
    assert J == Fraction(goldens["demo_timetag"]["windows"]["0.25"]["J"]) and J > 0
    ds = protocols.run_timeseries_protocol(timetag, 20000, "random", 1)
    assert stats.eberhard_J(processing.match_coincidences(ds, 0.25)) > 0


def test_nosignaling_product_raw_zero():
    for seed in range(20):
        m = models.random_product_recipe(np.random.default_rng(seed)).build()
        ex = core.exact_correlations(m)
        _, raw = stats.nosignaling_deltas(ex.raw, ex.raw)
        assert all(d == 0 for d in raw.deltas.values())


def test_nosignaling_product_sampled(eq3):
    ds = protocols.run_context_protocol(eq3, [100000] * 4, 12)
    raw = stats.estimate_correlations(ds)
    _, rep = stats.nosignaling_deltas(raw, raw)
    assert all(abs(z) < 3.29 for z in rep.z.values())


def test_nosignaling_eq3_final(eq3, goldens):
    ex = core.exact_correlations(eq3)
    fin, raw = stats.nosignaling_deltas(ex.final, ex.raw)
    assert any(d != 0 for d in fin.deltas.values())
    assert {k: str(v) for k, v in fin.deltas.items()} == goldens["demo_eq3"]["final_deltas"]
    assert all(d == 0 for d in raw.deltas.values())
    assert all(abs(d) <= 2 for d in fin.deltas.values())


def test_nosignaling_no_zero_model_identical():
    m = models.random_stochastic_recipe(np.random.default_rng(4)).build()
    ex = core.exact_correlations(m)
    fin, raw = stats.nosignaling_deltas(ex.final, ex.raw)
    assert fin.deltas == raw.deltas


def test_cbd_quantum_and_zero():
    q = stats.cbd_analysis(stats.table_from_correlations(models.quantum_table()))
    assert q.contextual and abs(q.delta_c) < 1e-12 and q.s_odd == pytest.approx(2 * math.sqrt(2))
    z = stats.cbd_analysis(stats.table_from_correlations((0, 0, 0, 0)))
    assert not z.contextual and z.s_odd == 0


def test_cbd_eq3_recorded(eq3, goldens):
    r = stats.cbd_analysis(core.exact_correlations(eq3).final)
    g = goldens["demo_eq3"]["cbd"]
    assert r.delta_c > 0
    assert (str(r.s_odd), str(r.delta_c), r.contextual) == (g["s_odd"], g["delta_c"], g["contextual"])


@given(st.lists(st.integers(-10, 10), min_size=4, max_size=4))
def test_cbd_reduces_to_chsh_when_consistent(nums):
    E = [Fraction(v, 10) for v in nums]
    t = stats.table_from_correlations(E)
    assert stats.cbd_analysis(t).contextual == (stats.chsh_S(t).S_max > 2)


def test_wilson():
    lo, hi = stats.wilson_interval(50, 100)
    assert lo < 0.5 < hi and hi - lo == pytest.approx(2 * 1.96 * 0.05, rel=0.05)
    assert stats.wilson_interval(0, 100)[0] == 0
    assert stats.wilson_se(5000, 10000) == pytest.approx(0.005, rel=1e-3)
    with pytest.raises(ValueError):
        stats.wilson_interval(0, 0)


def test_violation_frequency_constant_model():
    m = models.constant_recipe(1, 1).build()
    r = stats.violation_frequency(m, 50, 100, 0)
    # S_obs = 2 exactly every time
    assert r.fraction_gt == 0 and r.fraction_ge == 1


def test_violation_frequency_spreadsheet_never():
    m = models.demo_model("saturating_mixture")
    for seed in range(3):
        r = stats.violation_frequency(m, 200, 100, seed, protocol="spreadsheet")
        assert r.fraction_gt == 0 and np.all(r.s_values <= 2)


def test_violation_frequency_requires_100():
    with pytest.raises(ValueError):
        stats.violation_frequency(models.demo_model("saturating_mixture"), 10, 99, 0)


def test_violation_frequency_worker_invariant():
    m = models.demo_model("saturating_mixture")
    a = stats.violation_frequency(m, 100, 120, 3, workers=1)
    b = stats.violation_frequency(m, 100, 120, 3, workers=3)
    assert a == b and np.array_equal(a.s_values, b.s_values)


def test_audit_local_full_overlap():
    for seed in range(10):
        m = models.random_stochastic_recipe(np.random.default_rng(seed)).build()
        a = stats.larsson_gill_audit(m)
        assert a.delta == 1 and a.bound == 2 and a.satisfied


def test_audit_disjoint(eq3):
    a = stats.larsson_gill_audit(eq3, "disjoint")
    assert a.delta == 0 and a.bound == 4 and a.satisfied and abs(a.exact_S) <= 4


def test_audit_product_eq3(eq3, goldens):
    a = stats.larsson_gill_audit(eq3, "product")
    assert a.delta == Fraction(goldens["demo_eq3"]["audit_product_delta"])
    assert a.satisfied and 0 <= a.delta_unconditional <= a.delta <= 1


def test_audit_timetag(timetag, goldens):
    for w in models.DEMO_TIMETAG_WINDOWS:
        a = stats.larsson_gill_audit(timetag, "product", w)
        g = goldens["demo_timetag"]["windows"][repr(w)]
        assert a.satisfied and a.bound == Fraction(g["audit_bound"])


def test_audit_correlated_product_unsupported():
    with pytest.raises(ModelError) as err:
        stats.larsson_gill_audit(models.demo_model("demo_eq5"), "product")
    assert err.value.path == "embedding"
    assert stats.larsson_gill_audit(models.demo_model("demo_eq5"), "disjoint").bound == 4


def test_audit_unknown_embedding(eq3):
    with pytest.raises(ValueError):
        stats.larsson_gill_audit(eq3, "overlapping")


@given(st.integers(0, 2**32 - 1))
def test_audit_bound_holds_random_product(seed):
    m = models.random_product_recipe(np.random.default_rng(seed)).build()
    try:
        a = stats.larsson_gill_audit(m, "product")
    except UndefinedStatistic:
        return
    assert a.satisfied and abs(a.exact_S) <= 4


def test_report_text():
    t = stats.table_from_correlations((1, 0, 0, 0))
    text = stats.correlation_text(t)
    assert text.splitlines()[0].split() == ["context", "E", "se", "<A>", "<B>", "n"]
    assert "xpyp" in text
