"""From an adaptive-Lasso path to a selected set of invalid instruments."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .alasso import adaptive_lasso_at, build_ztilde, lars_weighted_path
from .data import qr_basis
from .errors import EnumerationCapError, NumericalError, RankError, ValidationError
from .iv import ZERO_RESID_RTOL, first_stage, fit_2sls, sargan

METHODS = ("sargan_dt", "cv_min", "cv_one_se", "exhaustive_dt")


def default_p_threshold(n):
    """``0.1 / log(n)``: vanishes with n while ``log(p)`` stays ``o(n)``."""
    return 0.1 / math.log(n)


@dataclass(frozen=True)
class SelectionResult:
    method: str
    invalid_set: tuple
    valid_set: tuple
    post_fit: object
    sargan: object
    p_threshold: float | None = None
    path_step: int | None = None
    warnings: tuple = ()
    lam: float | None = None
    alpha_ad: np.ndarray | None = None
    beta_ad: np.ndarray | None = None


def _result(data, method, fit, **kw):
    inv = tuple(fit.invalid_set)
    valid = tuple(j for j in range(data.k_z) if j not in set(inv))
    return SelectionResult(method, inv, valid, fit, sargan(fit, data), **kw)


def post_selection_2sls(data, invalid_set):
    """2SLS treating ``invalid_set`` as invalid; same contract as ``fit_2sls``."""
    return fit_2sls(data, invalid_set)


def downward_testing(data, path, p_threshold=None):
    """Walk the path in first-entry order and stop at the first accepted model.

    The candidate with ``k_inv`` invalid instruments treats the first
    ``k_inv`` instruments to enter the path as invalid. A model is accepted
    when its Sargan p-value exceeds ``p_threshold`` (default ``0.1/log n``).
    Just-identified models are accepted by convention, with a warning.
    """
    p = default_p_threshold(data.n) if p_threshold is None else float(p_threshold)
    if not 0 < p < 1:
        raise ValidationError(f"p_threshold must lie in (0, 1), got {p}")
    order = list(path.entry_order)
    max_inv = data.k_z - data.k_x
    notes = list(path.warnings)
    last = None
    for k_inv in range(0, min(max_inv, len(order)) + 1):
        cand = order[:k_inv]
        try:
            fit = fit_2sls(data, cand)
        except RankError as exc:
            notes.append(f"step {k_inv} skipped: {exc}")
            continue
        test = sargan(fit, data)
        last = (k_inv, fit)
        if test.p_value > p:
            if test.df == 0 and k_inv > 0:
                notes.append("every overidentified model was rejected; returning the just-identified model")
            return _result(data, "sargan_dt", fit, p_threshold=p, path_step=k_inv, warnings=tuple(notes))
    if last is None:
        raise NumericalError("no candidate model on the path could be fitted")
    k_inv, fit = last
    notes.append(
        f"path entered only {len(order)} instrument(s); every tested model was rejected, "
        f"returning the largest ({k_inv} invalid)"
    )
    return _result(data, "sargan_dt", fit, p_threshold=p, path_step=k_inv, warnings=tuple(notes))


def exhaustive_downward_testing(data, cap=100_000, p_threshold=None):
    """Test every invalid set of each size, smallest size first.

    Among accepted models of the first accepting size, the one with the
    largest Sargan p-value wins.
    """
    p = default_p_threshold(data.n) if p_threshold is None else float(p_threshold)
    max_inv = data.k_z - data.k_x
    total = sum(math.comb(data.k_z, k) for k in range(max_inv + 1))
    if total > cap:
        raise EnumerationCapError(f"exhaustive search needs {total} fits, cap is {cap}", total)
    notes = []
    for k_inv in range(max_inv + 1):
        best = None
        for cand in combinations(range(data.k_z), k_inv):
            try:
                fit = fit_2sls(data, cand)
            except RankError as exc:
                notes.append(f"{cand} skipped: {exc}")
                continue
            test = sargan(fit, data)
            if test.p_value > p and (best is None or test.p_value > best[1].p_value):
                best = (fit, test)
        if best is not None:
            fit, test = best
            inv = tuple(fit.invalid_set)
            valid = tuple(j for j in range(data.k_z) if j not in set(inv))
            return SelectionResult(
                "exhaustive_dt", inv, valid, fit, test, p_threshold=p, warnings=tuple(notes)
            )
    raise NumericalError("no model could be fitted in the exhaustive search")


def _fold_ids(n, folds, seed):
    perm = np.random.default_rng(seed).permutation(n)
    ids = np.empty(n, dtype=np.int64)
    for f, part in enumerate(np.array_split(perm, folds)):
        ids[part] = f
    return ids


def cv_criteria(data, weights, lambdas, fold_ids, max_active=None):
    """Held-out Sargan-type criterion for every (fold, lambda) pair.

    Training folds get penalties rescaled by ``n_train / n`` so the penalty
    per observation matches the full-sample problem.
    """
    folds = int(fold_ids.max()) + 1
    max_active = data.k_z - data.k_x if max_active is None else max_active
    out = np.empty((folds, len(lambdas)))
    for f in range(folds):
        test = fold_ids == f
        train = data.subset_rows(np.flatnonzero(~test))
        tst = data.subset_rows(np.flatnonzero(test))
        path = lars_weighted_path(build_ztilde(train), train.y, weights, max_active=max_active)
        shrink = train.n / data.n
        A = np.array([adaptive_lasso_at(path, lam * shrink) for lam in lambdas])
        _, X_hat = first_stage(train)
        xb = qr_basis(X_hat, what="fitted exposures")
        B = xb.solve(train.y[:, None] - train.Z @ A.T)  # (k_x, m)
        R = tst.y[:, None] - tst.X @ B - tst.Z @ A.T
        proj = tst.z_basis.q.T @ R
        rr = np.sum(R * R, axis=0)
        exact = rr <= ZERO_RESID_RTOL**2 * float(tst.y @ tst.y)
        with np.errstate(divide="ignore", invalid="ignore"):
            out[f] = np.where(~exact, tst.n * np.sum(proj * proj, axis=0) / rr, 0.0)
    return out


def cv_select(data, weights, folds=10, rule="min", seed=0, path=None, fold_ids=None):
    """Choose the penalty by K-fold cross-validation of a held-out Sargan criterion.

    Parameters
    ----------
    rule : {"min", "one_se"}
        ``min`` takes the penalty with the smallest mean criterion; ``one_se``
        the largest penalty whose mean is within one standard error of it.
    fold_ids : ndarray of int, optional
        Explicit fold assignment; overrides the seeded shuffle.
    """
    if rule not in ("min", "one_se"):
        raise ValidationError(f"rule must be 'min' or 'one_se', got {rule!r}")
    if fold_ids is None:
        if folds < 2:
            raise ValidationError("need at least two folds")
        if data.n < 10 * folds:
            raise ValidationError(f"n = {data.n} is too small for {folds} folds")
        fold_ids = _fold_ids(data.n, folds, seed)
    else:
        fold_ids = np.asarray(fold_ids, dtype=np.int64)
        folds = int(fold_ids.max()) + 1
    max_active = data.k_z - data.k_x
    if path is None:
        path = lars_weighted_path(build_ztilde(data), data.y, weights, max_active=max_active)
    lambdas = np.unique(path.lambdas)[::-1]
    try:
        crit = cv_criteria(data, weights, lambdas, fold_ids, max_active)
    except (RankError, ValidationError) as exc:
        raise NumericalError(f"cross-validation fold too small for a fit: {exc}") from exc
    mean = crit.mean(axis=0)
    se = crit.std(axis=0, ddof=1) / np.sqrt(folds) if folds > 1 else np.zeros_like(mean)
    i_min = int(np.argmin(mean))
    if rule == "min":
        i = i_min
    else:
        ok = np.flatnonzero(mean <= mean[i_min] + se[i_min])
        i = int(ok.min())  # lambdas are in decreasing order
    lam = float(lambdas[i])
    alpha = adaptive_lasso_at(path, lam)
    invalid = tuple(int(j) for j in np.flatnonzero(alpha != 0))
    fit = fit_2sls(data, invalid)
    _, X_hat = first_stage(data)
    beta_ad = qr_basis(X_hat, what="fitted exposures").solve(data.y - data.Z @ alpha)
    step = int(np.argmin(np.abs(path.lambdas - lam)))
    return _result(
        data,
        "cv_min" if rule == "min" else "cv_one_se",
        fit,
        path_step=step,
        lam=lam,
        alpha_ad=alpha,
        beta_ad=beta_ad,
    )
