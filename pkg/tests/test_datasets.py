import numpy as np
import pytest

from bellsim import models, processing, protocols
from bellsim.core import ModelError
from bellsim.datasets import (
    PAIR_DTYPE,
    Dataset,
    DatasetKind,
    dataset_to_csv,
    pair_records,
    read_dataset,
    round_timestamps,
    write_dataset,
)


def _raw():
    return Dataset(DatasetKind.RAW, pair_records(np.array([0, 1, 2, 3]), np.array([1, 0, -1, 1]), np.array([1, 1, 0, -1])), {"p": 1})


def test_validation():
    with pytest.raises(ValueError):
        Dataset(DatasetKind.RAW, pair_records(np.array([0]), np.array([1]), np.array([1])), {})
    with pytest.raises(ValueError):
        Dataset(DatasetKind.FINAL, pair_records(np.array([0]), np.array([0]), np.array([1])), {"p": 1})
    rec = pair_records(np.array([0, 0]), np.array([1, 1]), np.array([1, 1]))
    rec["trial_index"] = 0
    with pytest.raises(ValueError):
        Dataset(DatasetKind.RAW, rec, {"p": 1})
    with pytest.raises(ValueError):
        Dataset(DatasetKind.SPREADSHEET, rec, {"p": 1})


def test_records_immutable():
    ds = _raw()
    with pytest.raises(ValueError):
        ds.records["a"][0] = 0


def test_iteration_and_blocks():
    ds = _raw()
    recs = list(ds)
    assert recs[1].context.label == "xyp" and recs[1].a == 0
    a, b = ds.context_block("xpy")
    assert a.tolist() == [-1] and b.tolist() == [0]


@pytest.mark.parametrize("kind", ["raw", "final", "spreadsheet", "streams"])
def test_csv_round_trip(tmp_path, kind, eq3, timetag):
    if kind == "raw":
        ds = protocols.run_context_protocol(eq3, [50] * 4, 1)
    elif kind == "final":
        ds = processing.post_select(protocols.run_context_protocol(eq3, [50] * 4, 1))
    elif kind == "spreadsheet":
        ds = protocols.run_spreadsheet_protocol(models.build_gl_coupling(eq3), 100, 2)
    else:
        ds = protocols.run_timeseries_protocol(timetag, 200, "random", 3)
    csv_path, side = write_dataset(ds, tmp_path / "d.csv")
    back = read_dataset(csv_path)
    assert back.kind is ds.kind
    assert np.array_equal(back.records, ds.records)
    assert dataset_to_csv(back) == dataset_to_csv(ds)
    # rewrite is byte-identical
    write_dataset(back, tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_bytes() == csv_path.read_bytes()
    assert (tmp_path / "e.json").read_bytes() == side.read_bytes()


def test_missing_sidecar(tmp_path):
    (tmp_path / "x.csv").write_text("trial_index,context,a,b\n")
    with pytest.raises(ModelError):
        read_dataset(tmp_path / "x.csv")


def test_bad_csv_value(tmp_path):
    write_dataset(_raw(), tmp_path / "d.csv")
    text = (tmp_path / "d.csv").read_text().replace("xpy", "zz")
    (tmp_path / "d.csv").write_text(text)
    with pytest.raises(ModelError) as err:
        read_dataset(tmp_path / "d.csv")
    assert ":4" in err.value.path


def test_round_timestamps_stable():
    t = np.array([0.1 + 0.2, 1 / 3, 12345.123456789123])
    r = round_timestamps(t)
    assert np.array_equal(round_timestamps(r), r)
    assert all(float(f"{v:.9f}") == v for v in r)


def test_empty_dataset_ok():
    ds = Dataset(DatasetKind.RAW, np.empty(0, dtype=PAIR_DTYPE), {"p": 1})
    assert len(ds) == 0
