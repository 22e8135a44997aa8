"""Joint-probability feasibility for four pairwise +-1 distributions.

A system is feasible when some distribution over the 16 assignments of
``(A_x, A_x', B_y, B_y')`` projects onto all four context distributions.
:func:`jp_feasible` decides this with a linear program. :func:`fine_inequalities`
evaluates the eight CHSH variants, which is an independent route to the same
answer for consistent systems.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .core import CONTEXT_LABELS, CONTEXTS, CorrelationTable, Model, ModelError, ModelKind, enumerate_context, enumerate_joint
from .stats import ODD_SIGNS, SIGNALING_PAIRS

FEASIBLE_TOL = 1e-12
BOUNDARY_TOL = 1e-9

# assignment k <-> (A_x, A_x', B_y, B_y')
ASSIGNMENTS = tuple(itertools.product((1, -1), repeat=4))
# per-context outcome columns
PAIR_COLUMNS = ((1, 1), (1, -1), (-1, 1), (-1, -1))
CSV_HEADER = ["context", "p_pp", "p_pm", "p_mp", "p_mm"]


def _projection_matrix() -> np.ndarray:
    M = np.zeros((16, 16))
    for k, (ax, axp, by, byp) in enumerate(ASSIGNMENTS):
        for c in CONTEXTS:
            a = (ax, axp)[c.alice]
            b = (by, byp)[c.bob]
            M[4 * c.index + PAIR_COLUMNS.index((a, b)), k] = 1.0
    return M


PROJECTION = _projection_matrix()


@dataclass(frozen=True, eq=False)
class PairwiseSystem:
    """Four distributions over ``{-1,+1}^2``; row ``c`` holds ``(p++, p+-, p-+, p--)``."""

    probs: np.ndarray
    tol: float = BOUNDARY_TOL

    def __post_init__(self):
        p = np.asarray(self.probs)
        if p.dtype != object:
            p = p.astype(np.float64)
        if p.shape != (4, 4):
            raise ModelError("system", f"expected 4 contexts x 4 probabilities, got shape {p.shape}")
        for c in range(4):
            for k in range(4):
                if p[c, k] < -self.tol:
                    raise ModelError(f"system.{CONTEXT_LABELS[c]}.{CSV_HEADER[k + 1]}", f"negative probability {float(p[c, k])}")
            s = sum(p[c])
            if abs(s - 1) > self.tol:
                raise ModelError(f"system.{CONTEXT_LABELS[c]}", f"probabilities sum to {float(s)}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    # derived quantities -------------------------------------------------

    def correlations(self) -> tuple:
        return tuple(r[0] - r[1] - r[2] + r[3] for r in self.probs)

    def marginals_a(self) -> tuple:
        return tuple(r[0] + r[1] - r[2] - r[3] for r in self.probs)

    def marginals_b(self) -> tuple:
        return tuple(r[0] - r[1] + r[2] - r[3] for r in self.probs)

    def inconsistencies(self) -> dict:
        """Same-variable marginal differences across contexts, keyed by variable."""
        ma, mb = self.marginals_a(), self.marginals_b()
        out = {}
        for name, side, (c1, c2) in SIGNALING_PAIRS:
            m = ma if side == "a" else mb
            out[name] = m[c1] - m[c2]
        return out

    def inconsistent_marginal(self) -> str | None:
        exact = self.probs.dtype == object
        for name, d in self.inconsistencies().items():
            if (d != 0) if exact else abs(d) > self.tol:
                return name
        return None

    def as_float(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=np.float64)

    # constructors -------------------------------------------------------

    @classmethod
    def from_correlations(cls, E, marginals_a=(0, 0, 0, 0), marginals_b=(0, 0, 0, 0)) -> "PairwiseSystem":
        rows = []
        exact = all(isinstance(v, (int, Fraction)) for v in (*E, *marginals_a, *marginals_b))
        for e, ma, mb in zip(E, marginals_a, marginals_b):
            q = Fraction(1, 4) if exact else 0.25
            rows.append([q * (1 + ma + mb + e), q * (1 + ma - mb - e), q * (1 - ma + mb - e), q * (1 - ma - mb + e)])
        return cls(np.array(rows, dtype=object if exact else np.float64))

    @classmethod
    def from_table(cls, table: CorrelationTable) -> "PairwiseSystem":
        """From a table of +-1 data (final or zero-free raw)."""
        table.require_defined()
        ent = table.entries
        return cls.from_correlations(
            [e.E for e in ent], [e.marginal_a for e in ent], [e.marginal_b for e in ent]
        )

    @classmethod
    def from_distributions(cls, mats) -> "PairwiseSystem":
        """From four 3x3 outcome matrices without zero outcomes (index order -1, 0, +1)."""
        rows = []
        for c, m in enumerate(mats):
            if any(m[1, j] != 0 or m[j, 1] != 0 for j in range(3)):
                raise ModelError(f"system.{CONTEXT_LABELS[c]}", "distribution has 0 outcomes; post-select first")
            rows.append([m[2, 2], m[2, 0], m[0, 2], m[0, 0]])
        return cls(np.array(rows, dtype=object if isinstance(rows[0][0], Fraction) else np.float64))

    @classmethod
    def from_csv(cls, path) -> "PairwiseSystem":
        return cls.from_csv_text(Path(path).read_text(), str(path))

    @classmethod
    def from_csv_text(cls, text: str, where: str = "csv") -> "PairwiseSystem":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ModelError(where, f"header must be {','.join(CSV_HEADER)}")
        probs = [None] * 4
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5 or row[0] not in CONTEXT_LABELS:
                raise ModelError(f"{where}:{line}", f"bad row {row!r}")
            probs[CONTEXT_LABELS.index(row[0])] = [_parse_prob(v, f"{where}:{line}") for v in row[1:]]
        missing = [CONTEXT_LABELS[c] for c in range(4) if probs[c] is None]
        if missing:
            raise ModelError(where, f"missing contexts {missing}")
        exact = all(isinstance(v, Fraction) for r in probs for v in r)
        return cls(np.array(probs, dtype=object if exact else np.float64))

    @classmethod
    def from_json(cls, doc) -> "PairwiseSystem":
        """Accepts a correlation-table JSON (``contexts -> {E, marginal_a, marginal_b}``)
        or a probability JSON (``contexts -> {p_pp, p_pm, p_mp, p_mm}``)."""
        if isinstance(doc, (str, Path)):
            doc = json.loads(Path(doc).read_text())
        if "contexts" not in doc:
            raise ModelError("contexts", "missing field")
        ctx = doc["contexts"]
        for lab in CONTEXT_LABELS:
            if ctx.get(lab) is None:
                raise ModelError(f"contexts.{lab}", "missing or undefined context")
        first = ctx[CONTEXT_LABELS[0]]
        if "E" in first:
            return cls.from_correlations(
                [ctx[lab]["E"] for lab in CONTEXT_LABELS],
                [ctx[lab].get("marginal_a", 0) for lab in CONTEXT_LABELS],
                [ctx[lab].get("marginal_b", 0) for lab in CONTEXT_LABELS],
            )
        return cls(np.array([[ctx[lab][k] for k in CSV_HEADER[1:]] for lab in CONTEXT_LABELS], dtype=np.float64))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for c in range(4):
            w.writerow([CONTEXT_LABELS[c]] + [str(v) if isinstance(v, Fraction) else repr(float(v)) for v in self.probs[c]])
        return buf.getvalue()


def _parse_prob(text: str, where: str):
    text = text.strip()
    try:
        if any(ch in text for ch in ".eE"):
            return float(text)
        return Fraction(text)
    except ValueError:
        raise ModelError(where, f"not a probability: {text!r}") from None


@dataclass(frozen=True, eq=False)
class JointWitness:
    """Distribution over :data:`ASSIGNMENTS`."""

    probs: np.ndarray

    def project(self) -> PairwiseSystem:
        return PairwiseSystem((PROJECTION @ self.probs).reshape(4, 4))

    def projection_error(self, system: PairwiseSystem) -> float:
        return float(np.max(np.abs(PROJECTION @ self.probs - system.as_float().ravel())))

    def to_dict(self) -> dict:
        return {"".join("+" if v > 0 else "-" for v in a): float(p) for a, p in zip(ASSIGNMENTS, self.probs)}


@dataclass(frozen=True, eq=False)
class JPResult:
    """``status`` is ``feasible``, ``marginal-feasible``, ``infeasible`` or ``inconsistent``.

    ``certificate`` is a vector ``y`` over the 16 (context, outcome) cells with
    ``y . p(assignment) <= 0`` for every deterministic assignment and
    ``y . system > 0``.
    """

    status: str
    residual: float
    witness: JointWitness | None = None
    certificate: np.ndarray | None = None
    certificate_margin: float | None = None
    inconsistent_marginal: str | None = None

    @property
    def feasible(self) -> bool:
        return self.status in ("feasible", "marginal-feasible")

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "feasible": self.feasible,
            "residual": self.residual,
            "witness": self.witness.to_dict() if self.witness is not None else None,
            "certificate": None
            if self.certificate is None
            else {f"{CONTEXT_LABELS[i // 4]}:{CSV_HEADER[1 + i % 4]}": float(v) for i, v in enumerate(self.certificate)},
            "certificate_margin": self.certificate_margin,
            "inconsistent_marginal": self.inconsistent_marginal,
        }


def _check_certificate(y: np.ndarray, b: np.ndarray, tol: float = BOUNDARY_TOL) -> float | None:
    """Margin ``b . y`` when ``y`` separates ``b`` from every assignment, else ``None``."""
    if np.max(PROJECTION.T @ y) > tol:
        return None
    margin = float(b @ y)
    return margin if margin > tol else None


def _certificate_lp(b: np.ndarray) -> np.ndarray | None:
    # maximize b.y s.t. M^T y <= 0, -1 <= y <= 1
    res = linprog(-b, A_ub=PROJECTION.T, b_ub=np.zeros(16), bounds=[(-1, 1)] * 16, method="highs")
    return res.x if res.status == 0 else None


def jp_feasible(system: PairwiseSystem) -> JPResult:
    """Decide whether ``system`` has a joint distribution over the 16 assignments.

    Solves ``min sum(s+ + s-)`` subject to ``M q + s+ - s- = p``, ``q, s >= 0``.
    The optimum is the L1 distance from ``p`` to the projected simplex; the
    dual solution of an infeasible system is a separating certificate, checked
    directly and recomputed from a dedicated LP if the check fails.
    """
    bad = system.inconsistent_marginal()
    if bad is not None:
        d = system.inconsistencies()[bad]
        return JPResult("inconsistent", float(abs(d)), inconsistent_marginal=bad)
    b = system.as_float().ravel()
    eye = np.eye(16)
    A = np.hstack([PROJECTION, eye, -eye])
    cost = np.concatenate([np.zeros(16), np.ones(32)])
    res = linprog(cost, A_eq=A, b_eq=b, bounds=[(0, None)] * 48, method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    q = np.clip(res.x[:16], 0.0, None)
    q = q / q.sum()
    witness = JointWitness(q)
    residual = float(np.sum(np.abs(PROJECTION @ q - b)))
    if residual <= FEASIBLE_TOL:
        return JPResult("feasible", residual, witness=witness)
    y = np.asarray(res.eqlin.marginals, dtype=np.float64)
    margin = _check_certificate(y, b)
    if margin is None:
        margin = _check_certificate(-y, b)
        y = -y if margin is not None else y
    if margin is None:
        y2 = _certificate_lp(b)
        if y2 is not None:
            margin = _check_certificate(y2, b)
            y = y2
    if residual <= BOUNDARY_TOL:
        return JPResult("marginal-feasible", residual, witness=witness, certificate=y if margin else None, certificate_margin=margin)
    if margin is None:
        raise RuntimeError(f"system infeasible (L1 residual {residual:.3g}) but no certificate verified")
    return JPResult("infeasible", residual, certificate=y, certificate_margin=margin)


CROSS_CHECK = False


def fine_inequalities(system: PairwiseSystem, cross_check: bool | None = None) -> tuple:
    """The eight odd-minus CHSH sums minus 2; all ``<= 0`` iff a joint distribution exists.

    With ``cross_check`` (default: module flag :data:`CROSS_CHECK`) the verdict
    is compared against :func:`jp_feasible` for consistent systems.
    """
    E = system.correlations()
    vals = tuple(sum(s * e for s, e in zip(signs, E)) - 2 for signs in ODD_SIGNS)
    if (CROSS_CHECK if cross_check is None else cross_check) and system.inconsistent_marginal() is None:
        ok_fine = max(float(v) for v in vals) <= BOUNDARY_TOL
        ok_lp = jp_feasible(system).feasible
        if ok_fine != ok_lp:
            raise AssertionError(f"Fine inequalities ({ok_fine}) and LP ({ok_lp}) disagree on {system.probs.tolist()}")
    return vals


# ---------------------------------------------------------------------------
# coupling equalities

COUPLING_QUANTITIES = ("E_xy", "E_xyp", "E_xpy", "E_xpyp", "A_x", "A_xp", "B_y", "B_yp")
# context used for each marginal of the original model
_MARGINAL_CONTEXT = {"A_x": (0, "a"), "A_xp": (2, "a"), "B_y": (0, "b"), "B_yp": (1, "b")}


@dataclass(frozen=True)
class CouplingReport:
    raw: dict
    final: dict

    @property
    def all_zero(self) -> bool:
        return all(v == 0 for v in self.raw.values()) and all(v == 0 for v in self.final.values() if v is not None)

    def to_dict(self) -> dict:
        f = lambda d: {k: (None if v is None else float(v)) for k, v in d.items()}  # noqa: E731
        return {"raw": f(self.raw), "final": f(self.final), "all_zero": self.all_zero}


def _joint_stats(joint: dict, post_select: bool) -> dict:
    """The 8 quantities from a joint distribution over (A_x, A_x', B_y, B_y')."""
    out = {}
    for c in CONTEXTS:
        ia, ib = c.alice, 2 + c.bob
        items = [(k, p) for k, p in joint.items() if not post_select or (k[ia] != 0 and k[ib] != 0)]
        tot = sum(p for _, p in items)
        out[COUPLING_QUANTITIES[c.index]] = None if tot == 0 else sum(p * k[ia] * k[ib] for k, p in items) / tot
    for name, (ci, side) in _MARGINAL_CONTEXT.items():
        c = CONTEXTS[ci]
        ia, ib = c.alice, 2 + c.bob
        v = ia if side == "a" else ib
        items = [(k, p) for k, p in joint.items() if not post_select or (k[ia] != 0 and k[ib] != 0)]
        tot = sum(p for _, p in items)
        out[name] = None if tot == 0 else sum(p * k[v] for k, p in items) / tot
    return out


def _context_stats(model: Model, post_select: bool) -> dict:
    out, marg = {}, {}
    for c in CONTEXTS:
        dist = [((a, b), p) for (a, b), p in enumerate_context(model, c) if not post_select or (a != 0 and b != 0)]
        tot = sum(p for _, p in dist)
        if tot == 0:
            out[COUPLING_QUANTITIES[c.index]] = None
            marg[c.index] = (None, None)
            continue
        out[COUPLING_QUANTITIES[c.index]] = sum(p * a * b for (a, b), p in dist) / tot
        marg[c.index] = (sum(p * a for (a, _), p in dist) / tot, sum(p * b for (_, b), p in dist) / tot)
    for name, (ci, side) in _MARGINAL_CONTEXT.items():
        out[name] = marg[ci][0 if side == "a" else 1]
    return out


def _diff(x, y):
    return None if x is None or y is None else x - y


def coupling_equalities(model: Model, coupled: Model) -> CouplingReport:
    """Residuals ``coupled - model`` for 4 correlations and 4 marginals.

    The coupled side is evaluated by brute-force enumeration of its joint
    distribution, the model side context by context. ``final`` repeats the
    comparison after discarding zero outcomes.
    """
    if model.kind not in (ModelKind.CONTEXTUAL_PRODUCT, ModelKind.DETERMINISTIC_LOCAL, ModelKind.STOCHASTIC_LOCAL):
        raise ModelError("model.kind", f"coupling needs a product-form model, got {model.kind.value}")
    if coupled.kind is not ModelKind.COUPLED_JOINT:
        raise ModelError("coupled.kind", f"expected CoupledJoint, got {coupled.kind.value}")
    shape = lambda m: (m.source.weights.shape, tuple(len(t.weights) for t in m.instr_a + m.instr_b))  # noqa: E731
    if shape(model) != shape(coupled):
        raise ModelError("coupled", f"hidden spaces differ: {shape(coupled)} vs {shape(model)}")
    joint = enumerate_joint(coupled)
    res = []
    for post in (False, True):
        cj, cm = _joint_stats(joint, post), _context_stats(model, post)
        res.append({k: _diff(cj[k], cm[k]) for k in COUPLING_QUANTITIES})
    raw, fin = res
    return CouplingReport(raw, fin)


__all__ = [
    "ASSIGNMENTS",
    "PairwiseSystem",
    "JointWitness",
    "JPResult",
    "jp_feasible",
    "fine_inequalities",
    "coupling_equalities",
    "CouplingReport",
]
