"""Data containers, CSV/JSON ingestion and the dense least-squares kernels.

All projections go through a QR factorisation; normal equations are never
formed. A matrix counts as rank deficient when its smallest singular value is
below ``RANK_RTOL`` times its largest.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .errors import RankError, ValidationError

RANK_RTOL = 1e-10

ROLES = ("outcome", "exposure", "instrument", "covariate")


# ---------------------------------------------------------------------------
# Least squares primitives
# ---------------------------------------------------------------------------


def _as_2d(b):
    b = np.asarray(b, dtype=float)
    return (b[:, None], True) if b.ndim == 1 else (b, False)


def singular_ratio(A):
    """Smallest over largest singular value of ``A`` (0 for an all-zero matrix)."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 1.0
    s = np.linalg.svd(A, compute_uv=False)
    return float(s[-1] / s[0]) if s[0] > 0 else 0.0


@dataclass(frozen=True)
class QRBasis:
    """Thin QR factorisation of a full-column-rank matrix."""

    q: np.ndarray
    r: np.ndarray
    ratio: float

    def project(self, M):
        return self.q @ (self.q.T @ M)

    def annihilate(self, M):
        return M - self.project(M)

    def solve(self, M):
        return sla.solve_triangular(self.r, self.q.T @ M)

    def inv_gram(self):
        """``(A'A)^{-1}`` from the triangular factor."""
        rinv = sla.solve_triangular(self.r, np.eye(self.r.shape[0]))
        return rinv @ rinv.T


def qr_basis(A, names=None, what="matrix"):
    """Thin QR of ``A`` after checking rank against ``RANK_RTOL``.

    Raises
    ------
    RankError
        If the singular-value ratio of ``A`` is below ``RANK_RTOL``. When
        ``names`` is given the error lists the columns found to be dependent
        by a column-pivoted QR.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValidationError(f"{what} must be two-dimensional, got shape {A.shape}")
    if A.shape[1] == 0:
        return QRBasis(np.zeros((A.shape[0], 0)), np.zeros((0, 0)), 1.0)
    if A.shape[0] < A.shape[1]:
        raise RankError(
            f"{what} has more columns ({A.shape[1]}) than rows ({A.shape[0]})", ratio=0.0
        )
    q, r = np.linalg.qr(A)
    ratio = singular_ratio(r)
    if ratio < RANK_RTOL:
        cols = dependent_columns(A, names)
        raise RankError(
            f"{what} is rank deficient (singular value ratio {ratio:.3g} < {RANK_RTOL:g})"
            + (f"; collinear columns: {', '.join(map(str, cols))}" if cols else ""),
            ratio=ratio,
            columns=cols,
        )
    return QRBasis(q, r, ratio)


def dependent_columns(A, names=None):
    """Columns of ``A`` that a pivoted QR places beyond the numerical rank."""
    A = np.asarray(A, dtype=float)
    _, r, piv = sla.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0:
        dropped = list(piv)
    else:
        rank = int(np.sum(diag > RANK_RTOL * diag[0]))
        dropped = list(piv[rank:])
    dropped.sort()
    if names is None:
        return [int(j) for j in dropped]
    return [names[j] for j in dropped]


def lstsq(A, b):
    """Least-squares coefficients of ``b`` on the columns of ``A`` via QR.

    ``b`` may be a vector or a matrix; the result has the matching shape.

    >>> lstsq(np.ones((4, 1)), np.array([1.0, 2.0, 3.0, 4.0]))
    array([2.5])
    """
    b2, vec = _as_2d(b)
    basis = qr_basis(A, what="design matrix")
    coef = basis.solve(b2)
    return coef[:, 0] if vec else coef


def annihilate(M, B):
    """Residual of ``M`` after projection on the column space of ``B``."""
    M2, vec = _as_2d(M)
    basis = qr_basis(B, what="basis matrix")
    out = basis.annihilate(M2)
    return out[:, 0] if vec else out


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


def _check_labels(labels, count, what):
    labels = [str(x) for x in labels]
    if len(labels) != count:
        raise ValidationError(f"expected {count} {what} labels, got {len(labels)}")
    return labels


@dataclass(frozen=True, eq=False)
class Dataset:
    """Outcome, exposures, instruments and optional covariates for one sample."""

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    W: np.ndarray | None = None
    instrument_labels: list[str] | None = None
    exposure_labels: list[str] | None = None
    covariate_labels: list[str] | None = None
    outcome_label: str = "y"

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        Z = np.asarray(self.Z, dtype=float)
        if y.ndim == 2 and y.shape[1] == 1:
            y = y[:, 0]
        if X.ndim == 1:
            X = X[:, None]
        if Z.ndim == 1:
            Z = Z[:, None]
        n = y.shape[0]
        W = np.zeros((n, 0)) if self.W is None else np.asarray(self.W, dtype=float)
        if W.ndim == 1:
            W = W[:, None]
        if y.ndim != 1:
            raise ValidationError(f"y must be a vector, got shape {y.shape}")
        for name, arr in (("X", X), ("Z", Z), ("W", W)):
            if arr.ndim != 2 or arr.shape[0] != n:
                raise ValidationError(f"{name} must have {n} rows, got shape {arr.shape}")
        k_x, k_z, k_w = X.shape[1], Z.shape[1], W.shape[1]
        if k_x < 1:
            raise ValidationError("at least one exposure is required")
        if k_z < k_x:
            raise ValidationError(f"need at least as many instruments ({k_z}) as exposures ({k_x})")
        if n <= k_x + k_z + k_w:
            raise ValidationError(f"n = {n} must exceed k_x + k_z + k_w = {k_x + k_z + k_w}")
        for name, arr in (("y", y), ("X", X), ("Z", Z), ("W", W)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite values")
        zl = _check_labels(
            self.instrument_labels or [f"z{j + 1}" for j in range(k_z)], k_z, "instrument"
        )
        xl = _check_labels(
            self.exposure_labels or [f"x{q + 1}" for q in range(k_x)], k_x, "exposure"
        )
        wl = _check_labels(
            self.covariate_labels or [f"w{q + 1}" for q in range(k_w)], k_w, "covariate"
        )
        everything = [str(self.outcome_label)] + xl + zl + wl
        if len(set(everything)) != len(everything):
            raise ValidationError("column labels must be unique")
        for arr in (y, X, Z, W):
            arr.setflags(write=False)
        set_ = object.__setattr__
        set_(self, "y", y)
        set_(self, "X", X)
        set_(self, "Z", Z)
        set_(self, "W", W)
        set_(self, "instrument_labels", zl)
        set_(self, "exposure_labels", xl)
        set_(self, "covariate_labels", wl)
        set_(self, "outcome_label", str(self.outcome_label))

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def k_x(self):
        return self.X.shape[1]

    @property
    def k_z(self):
        return self.Z.shape[1]

    @property
    def k_w(self):
        return self.W.shape[1]

    @cached_property
    def z_basis(self):
        """QR basis of the instrument matrix, shared by every projection on Z."""
        return qr_basis(self.Z, names=self.instrument_labels, what="instrument matrix Z")

    def subset_rows(self, rows):
        rows = np.asarray(rows)
        return Dataset(
            self.y[rows],
            self.X[rows],
            self.Z[rows],
            self.W[rows],
            instrument_labels=self.instrument_labels,
            exposure_labels=self.exposure_labels,
            covariate_labels=self.covariate_labels,
            outcome_label=self.outcome_label,
        )

    def instrument_index(self, labels):
        lookup = {lab: j for j, lab in enumerate(self.instrument_labels)}
        missing = [lab for lab in labels if lab not in lookup]
        if missing:
            raise ValidationError(f"unknown instrument label(s): {', '.join(missing)}")
        return [lookup[lab] for lab in labels]


@dataclass(frozen=True)
class BlockStructure:
    """Known relevance of each instrument for each exposure.

    ``relevance[j]`` is the set of exposure indices instrument ``j`` is
    relevant for. Overlapping instruments list several exposures.
    """

    relevance: tuple[frozenset[int], ...]
    k_x: int

    def __post_init__(self):
        rel = tuple(frozenset(int(q) for q in s) for s in self.relevance)
        object.__setattr__(self, "relevance", rel)
        for j, s in enumerate(rel):
            if not s:
                raise ValidationError(f"instrument {j} is not relevant for any exposure")
            bad = [q for q in s if not 0 <= q < self.k_x]
            if bad:
                raise ValidationError(f"instrument {j} lists out-of-range exposure(s) {bad}")
        covered = set().union(*rel) if rel else set()
        missing = sorted(set(range(self.k_x)) - covered)
        if missing:
            raise ValidationError(f"exposure(s) {missing} have no relevant instrument")

    @property
    def k_z(self):
        return len(self.relevance)

    def members(self, q):
        """Instrument indices relevant for exposure ``q``."""
        return [j for j, s in enumerate(self.relevance) if q in s]

    @classmethod
    def from_sets(cls, sets, k_z):
        """Build from per-exposure instrument index sets (S_1, S_2, ...)."""
        rel = [set() for _ in range(k_z)]
        for q, members in enumerate(sets):
            for j in members:
                if not 0 <= j < k_z:
                    raise ValidationError(f"instrument index {j} out of range for k_z = {k_z}")
                rel[j].add(q)
        return cls(tuple(frozenset(s) for s in rel), len(sets))

    @classmethod
    def from_mapping(cls, mapping, instrument_labels, exposure_labels):
        """Build from ``{instrument label: [exposure labels]}``."""
        xi = {lab: q for q, lab in enumerate(exposure_labels)}
        zi = {lab: j for j, lab in enumerate(instrument_labels)}
        unknown = [lab for lab in mapping if lab not in zi]
        if unknown:
            raise ValidationError(f"block file names unknown instrument(s): {', '.join(unknown)}")
        rel = []
        for lab in instrument_labels:
            if lab not in mapping:
                raise ValidationError(f"block file has no entry for instrument {lab!r}")
            exps = mapping[lab]
            if isinstance(exps, str):
                exps = [exps]
            bad = [e for e in exps if e not in xi]
            if bad:
                raise ValidationError(
                    f"block entry for {lab!r} names unknown exposure(s): {', '.join(bad)}"
                )
            rel.append(frozenset(xi[e] for e in exps))
        return cls(tuple(rel), len(exposure_labels))

    def to_mapping(self, instrument_labels, exposure_labels):
        return {
            instrument_labels[j]: [exposure_labels[q] for q in sorted(s)]
            for j, s in enumerate(self.relevance)
        }


@dataclass(frozen=True)
class TruthInfo:
    """Generating parameters of a simulated dataset."""

    beta_true: np.ndarray
    alpha_true: np.ndarray
    valid_set: frozenset[int] = field(init=False)
    invalid_set: frozenset[int] = field(init=False)

    def __post_init__(self):
        a = np.asarray(self.alpha_true, dtype=float)
        object.__setattr__(self, "beta_true", np.asarray(self.beta_true, dtype=float))
        object.__setattr__(self, "alpha_true", a)
        object.__setattr__(self, "valid_set", frozenset(np.flatnonzero(a == 0).tolist()))
        object.__setattr__(self, "invalid_set", frozenset(np.flatnonzero(a != 0).tolist()))

    @property
    def k_valid(self):
        return len(self.valid_set)

    @property
    def k_invalid(self):
        return len(self.invalid_set)


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def load_csv(path, roles):
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    Parameters
    ----------
    path : str or Path
        UTF-8 CSV file, '.' decimal point.
    roles : dict
        Maps column name to one of ``outcome``, ``exposure``, ``instrument`` or
        ``covariate``. Columns of the same role keep the order of the mapping.
        Columns not listed are ignored.

    Raises
    ------
    ValidationError
        Missing columns, non-numeric or non-finite cells, a missing or
        duplicated outcome, or an unknown role.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"data file not found: {path}")
    by_role = {r: [] for r in ROLES}
    for col, role in roles.items():
        if role not in by_role:
            raise ValidationError(f"unknown role {role!r} for column {col!r}")
        by_role[role].append(col)
    if not by_role["outcome"]:
        raise ValidationError("outcome column required")
    if len(by_role["outcome"]) > 1:
        raise ValidationError(f"duplicate role for outcome: {', '.join(by_role['outcome'])}")

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path} is empty") from None
        pos = {h: i for i, h in enumerate(header)}
        missing = [c for c in roles if c not in pos]
        if missing:
            raise ValidationError(f"missing column(s) in {path.name}: {', '.join(missing)}")
        order = [c for r in ROLES for c in by_role[r]]
        idx = [pos[c] for c in order]
        rows = []
        for rownum, rec in enumerate(reader, start=1):
            if not rec or all(not cell.strip() for cell in rec):
                continue
            vals = []
            for c, i in zip(order, idx):
                cell = rec[i].strip() if i < len(rec) else ""
                try:
                    v = float(cell)
                except ValueError:
                    raise ValidationError(
                        f"non-numeric cell at ({rownum}, {c}): {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise ValidationError(f"non-finite cell at ({rownum}, {c}): {cell!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise ValidationError(f"{path} has no data rows")
    arr = np.array(rows, dtype=float)
    sizes = [len(by_role[r]) for r in ROLES]
    cuts = np.cumsum(sizes)[:-1]
    yb, Xb, Zb, Wb = np.split(arr, cuts, axis=1)
    return Dataset(
        yb[:, 0],
        Xb,
        Zb,
        Wb,
        instrument_labels=by_role["instrument"],
        exposure_labels=by_role["exposure"],
        covariate_labels=by_role["covariate"],
        outcome_label=by_role["outcome"][0],
    )


def load_blocks(path, data):
    """Read a block-structure JSON file for ``data``."""
    try:
        mapping = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"block file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"block file {path} is not valid JSON: {exc}") from None
    if not isinstance(mapping, dict):
        raise ValidationError("block file must hold an object mapping instrument to exposures")
    return BlockStructure.from_mapping(mapping, data.instrument_labels, data.exposure_labels)


def partial_out_covariates(data):
    """Residualise y, X and Z on the covariates plus an intercept.

    The returned dataset has no covariates. With no covariates only the
    intercept is removed, i.e. every variable is demeaned.
    """
    ones = np.ones((data.n, 1))
    C = np.hstack([data.W, ones])
    names = list(data.covariate_labels) + ["(intercept)"]
    basis = qr_basis(C, names=names, what="covariate matrix [W, intercept]")
    stacked = np.column_stack([data.y, data.X, data.Z])
    res = basis.annihilate(stacked)
    k_x = data.k_x
    return Dataset(
        res[:, 0],
        res[:, 1 : 1 + k_x],
        res[:, 1 + k_x :],
        None,
        instrument_labels=data.instrument_labels,
        exposure_labels=data.exposure_labels,
        covariate_labels=[],
        outcome_label=data.outcome_label,
    )
