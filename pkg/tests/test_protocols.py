import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from bellsim import core, models, protocols, stats
from bellsim.core import ModelError
from bellsim.datasets import dataset_to_csv


def test_context_protocol_counts_and_provenance(eq3):
    ds = protocols.run_context_protocol(eq3, [10, 20, 30, 40], 5)
    assert [int(np.sum(ds.records["context"] == c)) for c in range(4)] == [10, 20, 30, 40]
    assert ds.provenance["master_seed"] == 5 and ds.provenance["protocol"] == "context"


def test_context_protocol_rejects_bad_counts(eq3):
    with pytest.raises(ValueError):
        protocols.run_context_protocol(eq3, [1, 2, 3], 0)
    with pytest.raises(ValueError):
        protocols.run_context_protocol(eq3, [1, 2, 3, 0], 0)


def test_shuffled_is_permutation_of_blocked(eq3):
    a = protocols.run_context_protocol(eq3, [100] * 4, 9, "blocked")
    b = protocols.run_context_protocol(eq3, [100] * 4, 9, "shuffled")
    key = lambda r: sorted(zip(r["context"].tolist(), r["a"].tolist(), r["b"].tolist()))  # noqa: E731
    assert key(a.records) == key(b.records)


@pytest.mark.parametrize("w", [2, 4])
def test_worker_count_invariance(eq3, w):
    a = protocols.run_context_protocol(eq3, [500] * 4, 4, workers=1)
    b = protocols.run_context_protocol(eq3, [500] * 4, 4, workers=w)
    assert dataset_to_csv(a) == dataset_to_csv(b)


def test_same_seed_same_bytes(timetag):
    a = protocols.run_timeseries_protocol(timetag, 1000, "random", 8)
    b = protocols.run_timeseries_protocol(timetag, 1000, "random", 8)
    assert dataset_to_csv(a) == dataset_to_csv(b)
    c = protocols.run_timeseries_protocol(timetag, 1000, "random", 9)
    assert dataset_to_csv(a) != dataset_to_csv(c)


def test_per_row_identity_all_16_patterns():
    terms = oracles.deterministic_chsh_terms()
    assert len(terms) == 16
    for row, want in terms.items():
        assert protocols.per_row_chsh(row) == want
        assert want in (-2, 2)
    arr = np.array(list(terms))
    assert protocols.per_row_chsh_array(arr).tolist() == list(terms.values())


def test_per_row_rejects_zero():
    with pytest.raises(ValueError):
        protocols.per_row_chsh((1, 0, 1, 1))


@given(st.integers(0, 2**32 - 1), st.integers(1, 3000))
def test_spreadsheet_S_within_bound(seed, n):
    rng = np.random.default_rng(seed)
    rec = models.random_stochastic_recipe(rng) if seed % 2 else models.random_deterministic_recipe(rng)
    ds = protocols.run_spreadsheet_protocol(rec.build(), n, seed)
    S = stats.spreadsheet_S(ds)
    assert -2 <= S <= 2


def test_spreadsheet_rejects_contextual(eq3):
    with pytest.raises(ModelError) as err:
        protocols.run_spreadsheet_protocol(eq3, 10, 0)
    assert "coupling" in str(err.value)
    with pytest.raises(ModelError) as err:
        protocols.run_spreadsheet_protocol(models.demo_model("demo_eq5"), 10, 0)
    assert "per context" in str(err.value)


def test_spreadsheet_zero_rows_counted(eq3):
    ds = protocols.run_spreadsheet_protocol(models.build_gl_coupling(eq3), 2000, 1)
    rows = ds.rows()
    assert ds.meta["rows_with_zero"] == int(np.any(rows == 0, axis=1).sum())
    assert ds.meta["rows_with_zero"] + ds.meta["rows_pm1"] == 2000


def test_schedules():
    b = protocols.make_schedule(8, "blocked", 0)
    assert [2 * i + j for i, j in b] == [0, 0, 1, 1, 2, 2, 3, 3]
    r = protocols.make_schedule(1000, "random", 0)
    assert set(map(tuple, r.tolist())) == {(0, 0), (0, 1), (1, 0), (1, 1)}
    f = protocols.make_schedule(3, ("fixed", (1, 0)), 0)
    assert f.tolist() == [[1, 0]] * 3
    with pytest.raises(ValueError):
        protocols.make_schedule(3, np.zeros((2, 2)), 0)
    with pytest.raises(ValueError):
        protocols.make_schedule(3, "sometimes", 0)


def test_timeseries_rejects_non_timetag(eq3):
    with pytest.raises(ModelError):
        protocols.run_timeseries_protocol(eq3, 10)


def test_timeseries_rejects_long_delay():
    r = models.demo_timetag_recipe()
    with pytest.raises(ModelError) as err:
        protocols.run_timeseries_protocol(r.build(), 10, spacing=0.5)
    assert err.value.path == "delays"


def test_timeseries_events(timetag):
    ds = protocols.run_timeseries_protocol(timetag, 400, "blocked", 1)
    alice, bob = ds.streams()
    assert len(alice) == len(bob) == 400
    k = np.floor(alice.timestamps).astype(int)
    assert k.tolist() == list(range(400))
    assert np.all(alice.timestamps - k < 0.5)
    assert np.array_equal(alice.settings, ds.meta["schedule"][:, 0])


def test_timeseries_rate_matches_exact(timetag):
    # infinite window: every epoch one record, raw correlations as enumerated
    from bellsim.processing import match_coincidences

    ds = protocols.run_timeseries_protocol(timetag, 40000, "random", 4)
    raw = match_coincidences(ds, 1.0)
    table = stats.estimate_correlations(raw)
    ex = core.exact_correlations(timetag)
    for c in range(4):
        assert abs(table.entries[c].E - float(ex.raw.entries[c].E)) < 4 * table.entries[c].se
