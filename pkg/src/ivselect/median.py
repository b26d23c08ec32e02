"""Just-identified estimates and the median-of-medians initial estimator.

Every just-identified estimate uses ``k_x`` instruments as excluded
instruments and controls for all others. Because all such models share the
reduced forms of y and X on the full instrument set, each estimate solves the
small system ``Pi_hat[s] beta_s = gamma_hat[s]`` (indirect least squares),
which is numerically identical to running 2SLS with the complement of ``s``
treated as invalid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from . import _kernels
from .data import RANK_RTOL
from .errors import EnumerationCapError, RankError, ValidationError

ENUMERATION_CAP = 2_000_000


@dataclass(frozen=True)
class JustIdentifiedTable:
    """All admissible just-identified estimates for one dataset.

    ``subsets`` holds one sorted index tuple per row; ``betas`` the
    corresponding estimates (NaN for skipped rows) and ``min_sv`` the
    singular-value ratio of the subset's first-stage block.
    """

    k_x: int
    k_z: int
    subsets: np.ndarray
    betas: np.ndarray
    min_sv: np.ndarray
    blocks: object = None
    skipped: list = field(default_factory=list)

    @property
    def entries(self):
        """Mapping ``subset tuple -> (beta_s, min_sv)`` for estimated subsets."""
        ok = ~np.isnan(self.betas[:, 0])
        return {
            tuple(int(v) for v in s): (b, float(r))
            for s, b, r, keep in zip(self.subsets, self.betas, self.min_sv, ok)
            if keep
        }

    @property
    def n_estimated(self):
        return int(np.sum(~np.isnan(self.betas[:, 0])))

    def __len__(self):
        return self.n_estimated


def admissible_pairs(blocks):
    """Pairs whose members jointly cover both exposures (overlap counts twice)."""
    if blocks.k_x != 2:
        raise ValidationError(f"block structures are supported for k_x = 2 only, got {blocks.k_x}")
    rel = blocks.relevance
    return [
        (a, b)
        for a, b in combinations(range(blocks.k_z), 2)
        if {0, 1} <= (rel[a] | rel[b])
    ]


def enumerate_just_identified(data, blocks=None, cap=ENUMERATION_CAP):
    """Compute every admissible just-identified estimate of beta.

    Parameters
    ----------
    data : Dataset
    blocks : BlockStructure, optional
        Restrict to pairs that jointly cover both exposures (k_x = 2 only).
    cap : int
        Maximum number of subsets to enumerate.
    """
    k_x, k_z = data.k_x, data.k_z
    if blocks is not None:
        if blocks.k_z != k_z or blocks.k_x != k_x:
            raise ValidationError("block structure does not match the data dimensions")
        subsets = np.array(admissible_pairs(blocks), dtype=np.int64).reshape(-1, 2)
    else:
        count = math.comb(k_z, k_x)
        if count > cap:
            raise EnumerationCapError(
                f"{count} just-identified subsets exceed the enumeration cap of {cap}", count
            )
        flat = np.fromiter(
            (j for s in combinations(range(k_z), k_x) for j in s), dtype=np.int64, count=count * k_x
        )
        subsets = flat.reshape(count, k_x)
    if subsets.shape[0] == 0:
        raise ValidationError("no admissible just-identifying subsets")

    coef = data.z_basis.solve(np.column_stack([data.y, data.X]))
    gamma = np.ascontiguousarray(coef[:, 0])
    Pi = np.ascontiguousarray(coef[:, 1:])
    betas, ratios = _kernels.solve_subsets(Pi, gamma, subsets, RANK_RTOL)
    skipped = [
        (tuple(int(v) for v in subsets[i]), f"first-stage block singular value ratio {ratios[i]:.3g}")
        for i in np.flatnonzero(np.isnan(betas[:, 0]))
    ]
    return JustIdentifiedTable(k_x, k_z, subsets, betas, ratios, blocks, skipped)


def median_naive(table):
    """Elementwise median over all stored just-identified estimates."""
    ok = ~np.isnan(table.betas[:, 0])
    if not ok.any():
        raise ValidationError("no just-identified estimates to take the median of")
    return np.median(table.betas[ok], axis=0)


@dataclass(frozen=True)
class MedianTreeEstimate:
    beta_mm: np.ndarray
    per_instrument: dict
    depth: int


def median_of_medians(table):
    """Generalised median-of-medians over the tree of instrument prefixes.

    At the bottom layer each ``(k_x - 1)``-prefix takes the median over its
    completing instruments; every layer above takes medians over the free
    index, and the top layer over all instruments. A prefix's value depends
    only on the set of its members, so values are memoised by sorted tuple.
    """
    if table.blocks is not None:
        raise ValidationError("median_of_medians needs the full table; use block_median_of_medians")
    if table.skipped:
        listed = "; ".join(str(s) for s, _ in table.skipped[:10])
        raise RankError(
            f"{len(table.skipped)} just-identifying subset(s) are not jointly relevant: {listed}"
        )
    k_x, k_z = table.k_x, table.k_z
    lookup = {tuple(int(v) for v in s): b for s, b in zip(table.subsets, table.betas)}
    memo = {}

    def value(prefix):
        got = memo.get(prefix)
        if got is not None:
            return got
        rest = [j for j in range(k_z) if j not in prefix]
        if len(prefix) == k_x - 1:
            vals = [lookup[tuple(sorted(prefix + (j,)))] for j in rest]
        else:
            vals = [value(tuple(sorted(prefix + (j,)))) for j in rest]
        out = np.median(np.asarray(vals), axis=0)
        memo[prefix] = out
        return out

    beta_mm = value(())
    if k_x == 1:
        per = {j: lookup[(j,)] for j in range(k_z)}
    else:
        per = {j: memo[(j,)] for j in range(k_z)}
    return MedianTreeEstimate(beta_mm, per, k_x - 1)


def _pair_grid(table):
    k_z = table.k_z
    grid = np.full((k_z, k_z, 2), np.nan)
    a, b = table.subsets[:, 0], table.subsets[:, 1]
    grid[a, b] = table.betas
    grid[b, a] = table.betas
    return grid


def pairwise_median_of_medians(table):
    """Two-layer median of medians for ``k_x = 2`` straight from the pair grid."""
    if table.k_x != 2 or table.blocks is not None or table.skipped:
        raise ValidationError("pairwise construction needs a complete k_x = 2 table")
    grid = _pair_grid(table)
    mask = ~np.eye(table.k_z, dtype=bool)
    per = _kernels.masked_row_medians(grid, mask)
    return MedianTreeEstimate(np.median(per, axis=0), dict(enumerate(per)), 1)


def block_median_of_medians(table, blocks):
    """Median of medians restricted to pairs admissible under ``blocks``.

    For each instrument the inner median runs over its admissible, estimated
    partners; the outer median runs over all instruments.
    """
    if table.k_x != 2:
        raise ValidationError("block median-of-medians requires k_x = 2")
    if table.blocks is None or table.blocks != blocks:
        raise ValidationError("table must be enumerated with the same block structure")
    grid = _pair_grid(table)
    mask = ~np.isnan(grid[..., 0])
    lonely = [j for j in range(table.k_z) if not mask[j].any()]
    if lonely:
        raise ValidationError(f"instrument(s) {lonely} have no admissible partner")
    per = _kernels.masked_row_medians(grid, mask)
    return MedianTreeEstimate(np.median(per, axis=0), dict(enumerate(per)), 1)


def alpha_from_beta(data, beta):
    """Coefficients of ``y - X beta`` on Z: the implied direct effects."""
    beta = np.asarray(beta, dtype=float).reshape(data.k_x)
    return data.z_basis.solve(data.y - data.X @ beta)


def min_valid_median_of_medians(k_z, k_x):
    """Fewest valid instruments with ``k_valid > (k_z + k_x - 1) / 2``."""
    return (k_z + k_x - 1) // 2 + 1


def min_valid_naive_median(k_z, k_x):
    """Fewest valid instruments with ``C(k_valid, k_x) > C(k_z, k_x) / 2``."""
    half = math.comb(k_z, k_x)
    for kv in range(k_x, k_z + 1):
        if 2 * math.comb(kv, k_x) > half:
            return kv
    return None


def satisfies_generalized_majority(k_valid, k_z, k_x):
    return 2 * k_valid > k_z + k_x - 1


def write_table_csv(table, path, instrument_labels=None, exposure_labels=None):
    """Dump every enumerated subset with its estimate and singular-value ratio."""
    zl = instrument_labels or [f"z{j + 1}" for j in range(table.k_z)]
    xl = exposure_labels or [f"x{q + 1}" for q in range(table.k_x)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["subset"] + [f"beta_{lab}" for lab in xl] + ["min_sv"])
        for s, b, r in zip(table.subsets, table.betas, table.min_sv):
            w.writerow(["+".join(zl[j] for j in s)] + [repr(float(v)) for v in b] + [repr(float(r))])
