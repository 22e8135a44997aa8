"""Dataset containers and their CSV/JSON persistence.

Four dataset kinds share one container:

* ``Raw`` / ``Final`` - paired outcomes, CSV ``trial_index,context,a,b``
* ``Spreadsheet`` - N x 4 rows, CSV ``row,a_x,a_xp,b_y,b_yp``
* ``Streams`` - click events of both sides, CSV ``side,timestamp,setting,sign``

Each CSV has a sidecar ``.json`` with the dataset kind, provenance and
metadata. Timestamps are written with exactly 9 decimals; everything else is
integer. JSON floats use Python's shortest round-trip repr and keys are
sorted, so identical datasets serialize to identical bytes.
"""
from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .core import CONTEXT_LABELS, CONTEXTS, Context, ModelError, Side, as_context, check_outcome

PAIR_DTYPE = np.dtype([("trial_index", "<i8"), ("context", "i1"), ("a", "i1"), ("b", "i1")])
ROW_DTYPE = np.dtype([("row", "<i8"), ("a_x", "i1"), ("a_xp", "i1"), ("b_y", "i1"), ("b_yp", "i1")])
EVENT_DTYPE = np.dtype([("side", "i1"), ("timestamp", "<f8"), ("setting", "i1"), ("sign", "i1")])

SETTING_LABELS = (("x", "xp"), ("y", "yp"))
SIDE_LABELS = ("Alice", "Bob")
TIMESTAMP_DECIMALS = 9


class DatasetKind(str, enum.Enum):
    RAW = "Raw"
    FINAL = "Final"
    SPREADSHEET = "Spreadsheet"
    STREAMS = "Streams"


class TrialRecord(NamedTuple):
    context: Context
    a: int
    b: int
    trial_index: int


class SpreadsheetRow(NamedTuple):
    a_x: int
    a_xp: int
    b_y: int
    b_yp: int


@dataclass(frozen=True)
class ClickStream:
    side: Side
    timestamps: np.ndarray
    settings: np.ndarray
    signs: np.ndarray

    def __len__(self):
        return len(self.timestamps)


@dataclass(frozen=True, eq=False)
class Dataset:
    kind: DatasetKind
    records: np.ndarray
    provenance: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", DatasetKind(self.kind))
        want = {
            DatasetKind.RAW: PAIR_DTYPE,
            DatasetKind.FINAL: PAIR_DTYPE,
            DatasetKind.SPREADSHEET: ROW_DTYPE,
            DatasetKind.STREAMS: EVENT_DTYPE,
        }[self.kind]
        if self.records.dtype != want:
            raise ValueError(f"{self.kind.value} records need dtype {want}, got {self.records.dtype}")
        if not self.provenance:
            raise ValueError("provenance must be populated")
        if self.kind is DatasetKind.FINAL and len(self.records):
            if np.any(self.records["a"] == 0) or np.any(self.records["b"] == 0):
                raise ValueError("Final datasets cannot contain 0 outcomes")
        if self.kind in (DatasetKind.RAW, DatasetKind.FINAL):
            idx = self.records["trial_index"]
            if len(np.unique(idx)) != len(idx):
                raise ValueError("trial_index must be unique within a dataset")
        self.records.setflags(write=False)

    def __len__(self):
        return len(self.records)

    def __iter__(self) -> Iterator:
        if self.kind in (DatasetKind.RAW, DatasetKind.FINAL):
            for r in self.records:
                yield TrialRecord(CONTEXTS[int(r["context"])], int(r["a"]), int(r["b"]), int(r["trial_index"]))
        elif self.kind is DatasetKind.SPREADSHEET:
            for r in self.records:
                yield SpreadsheetRow(int(r["a_x"]), int(r["a_xp"]), int(r["b_y"]), int(r["b_yp"]))
        else:
            yield from self.streams()

    def context_block(self, context) -> tuple[np.ndarray, np.ndarray]:
        """Outcome arrays ``(a, b)`` of one context (Raw/Final only)."""
        c = as_context(context).index
        sel = self.records["context"] == c
        return self.records["a"][sel].astype(np.int64), self.records["b"][sel].astype(np.int64)

    def rows(self) -> np.ndarray:
        """Spreadsheet rows as an ``(n, 4)`` int array."""
        r = self.records
        return np.stack([r["a_x"], r["a_xp"], r["b_y"], r["b_yp"]], axis=1).astype(np.int64)

    def streams(self) -> tuple[ClickStream, ClickStream]:
        out = []
        for s, side in enumerate((Side.ALICE, Side.BOB)):
            ev = self.records[self.records["side"] == s]
            out.append(ClickStream(side, ev["timestamp"].copy(), ev["setting"].copy(), ev["sign"].copy()))
        return tuple(out)


def pair_records(context: np.ndarray, a: np.ndarray, b: np.ndarray, start: int = 0) -> np.ndarray:
    rec = np.empty(len(a), dtype=PAIR_DTYPE)
    rec["trial_index"] = np.arange(start, start + len(a))
    rec["context"] = context
    rec["a"] = a
    rec["b"] = b
    return rec


def make_pair_dataset(kind, records, provenance, meta=None) -> Dataset:
    return Dataset(kind=kind, records=records, provenance=provenance, meta=meta or {})


def round_timestamps(t: np.ndarray) -> np.ndarray:
    """Round to the CSV precision so in-memory and re-read streams agree bit for bit."""
    return np.array([float(f"{v:.{TIMESTAMP_DECIMALS}f}") for v in t], dtype=np.float64)


# ---------------------------------------------------------------------------
# persistence


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items() if not str(k).startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, enum.Enum):
        return obj.value
    if hasattr(obj, "numerator") and hasattr(obj, "denominator") and not isinstance(obj, int):
        return float(obj)
    return obj


def dumps_json(doc) -> str:
    return json.dumps(_jsonable(doc), indent=1, sort_keys=True, allow_nan=False) + "\n"


def _encode_schedule(schedule: np.ndarray) -> dict:
    return {
        "alice": "".join(str(int(v)) for v in schedule[:, 0]),
        "bob": "".join(str(int(v)) for v in schedule[:, 1]),
    }


def _decode_schedule(doc: dict) -> np.ndarray:
    a = np.frombuffer(doc["alice"].encode(), dtype=np.uint8) - ord("0")
    b = np.frombuffer(doc["bob"].encode(), dtype=np.uint8) - ord("0")
    return np.stack([a, b], axis=1).astype(np.int8)


def dataset_to_csv(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    r = ds.records
    if ds.kind in (DatasetKind.RAW, DatasetKind.FINAL):
        w.writerow(["trial_index", "context", "a", "b"])
        for t, c, a, b in zip(r["trial_index"].tolist(), r["context"].tolist(), r["a"].tolist(), r["b"].tolist()):
            w.writerow([t, CONTEXT_LABELS[c], a, b])
    elif ds.kind is DatasetKind.SPREADSHEET:
        w.writerow(["row", "a_x", "a_xp", "b_y", "b_yp"])
        for row in zip(*(r[k].tolist() for k in ROW_DTYPE.names)):
            w.writerow(row)
    else:
        w.writerow(["side", "timestamp", "setting", "sign"])
        for side, t, s, sign in zip(r["side"].tolist(), r["timestamp"].tolist(), r["setting"].tolist(), r["sign"].tolist()):
            w.writerow([SIDE_LABELS[side], f"{t:.{TIMESTAMP_DECIMALS}f}", SETTING_LABELS[side][s], sign])
    return buf.getvalue()


def sidecar_dict(ds: Dataset) -> dict:
    meta = dict(ds.meta)
    if "schedule" in meta:
        meta["schedule"] = _encode_schedule(meta["schedule"])
    return {"kind": ds.kind.value, "n_records": len(ds), "provenance": ds.provenance, "meta": meta}


def write_dataset(ds: Dataset, path) -> tuple[Path, Path]:
    """Write ``path`` (CSV) and its sidecar ``path.with_suffix('.json')``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dataset_to_csv(ds))
    side = path.with_suffix(".json")
    side.write_text(dumps_json(sidecar_dict(ds)))
    return path, side


def read_dataset(path) -> Dataset:
    path = Path(path)
    side = path.with_suffix(".json")
    if not side.exists():
        raise ModelError(str(side), "missing provenance sidecar")
    doc = json.loads(side.read_text())
    kind = DatasetKind(doc["kind"])
    meta = doc.get("meta", {})
    if "schedule" in meta:
        meta["schedule"] = _decode_schedule(meta["schedule"])
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = list(reader)
    if kind in (DatasetKind.RAW, DatasetKind.FINAL):
        if header != ["trial_index", "context", "a", "b"]:
            raise ModelError(str(path), f"unexpected header {header}")
        rec = np.empty(len(rows), dtype=PAIR_DTYPE)
        for k, (t, c, a, b) in enumerate(rows):
            if c not in CONTEXT_LABELS:
                raise ModelError(f"{path}:{k + 2}", f"unknown context {c!r}")
            rec[k] = (int(t), CONTEXT_LABELS.index(c), check_outcome(int(a)), check_outcome(int(b)))
    elif kind is DatasetKind.SPREADSHEET:
        if header != list(ROW_DTYPE.names):
            raise ModelError(str(path), f"unexpected header {header}")
        rec = np.empty(len(rows), dtype=ROW_DTYPE)
        for k, row in enumerate(rows):
            rec[k] = (int(row[0]),) + tuple(check_outcome(int(v)) for v in row[1:])
    else:
        if header != ["side", "timestamp", "setting", "sign"]:
            raise ModelError(str(path), f"unexpected header {header}")
        rec = np.empty(len(rows), dtype=EVENT_DTYPE)
        for k, (sd, t, s, sign) in enumerate(rows):
            si = SIDE_LABELS.index(sd)
            rec[k] = (si, float(t), SETTING_LABELS[si].index(s), int(sign))
    return Dataset(kind=kind, records=rec, provenance=doc["provenance"], meta=meta)
