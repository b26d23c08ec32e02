"""Two-stage least squares with a designated set of invalid instruments.

Instruments treated as invalid enter the outcome equation as controls; the
remaining ones identify the exposure effects. The Sargan statistic tests the
resulting overidentifying restrictions under homoskedasticity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import RANK_RTOL, qr_basis
from .errors import RankError, UnderidentifiedError, ValidationError


@dataclass(frozen=True)
class TwoSLSFit:
    """Result of :func:`fit_2sls`.

    ``vcov`` is ordered as ``[beta, alpha on invalid_set]`` and uses the
    homoskedastic oracle form ``sigma2_hat * (R_hat' R_hat)^{-1}`` with
    ``sigma2_hat = rss / n``.
    """

    invalid_set: tuple[int, ...]
    beta_hat: np.ndarray
    alpha_hat: np.ndarray
    residuals: np.ndarray
    sigma2_hat: float
    rss: float
    vcov: np.ndarray
    n: int
    k_x: int
    k_z: int

    @property
    def df(self):
        return self.k_z - self.k_x - len(self.invalid_set)

    @property
    def beta_se(self):
        return np.sqrt(np.diag(self.vcov)[: self.k_x])

    @property
    def alpha_se(self):
        return np.sqrt(np.diag(self.vcov)[self.k_x :])

    @property
    def sigma2_dof(self):
        """Residual variance with the ``n - k`` divisor instead of ``n``."""
        return self.rss / (self.n - self.k_x - len(self.invalid_set))


@dataclass(frozen=True)
class SarganResult:
    statistic: float
    df: int
    p_value: float


def _normalise_set(invalid_set, k_z):
    idx = sorted({int(j) for j in invalid_set})
    if idx and (idx[0] < 0 or idx[-1] >= k_z):
        raise ValidationError(f"invalid_set indices must lie in [0, {k_z})")
    return tuple(idx)


def first_stage(data):
    """Regress the exposures on all instruments.

    Returns
    -------
    Pi_hat : ndarray, shape (k_z, k_x)
    X_hat : ndarray, shape (n, k_x)
    """
    basis = data.z_basis
    Pi_hat = basis.solve(data.X)
    X_hat = data.Z @ Pi_hat
    return Pi_hat, X_hat


def fit_2sls(data, invalid_set=()):
    """2SLS of y on X controlling for ``Z[:, invalid_set]``, instrumented by Z.

    Parameters
    ----------
    data : Dataset
    invalid_set : iterable of int
        Instrument indices treated as invalid (entered as regressors).

    Raises
    ------
    UnderidentifiedError
        If fewer than ``k_x`` instruments remain valid.
    RankError
        If ``[X_hat, Z_invalid]`` is rank deficient.
    """
    inv = _normalise_set(invalid_set, data.k_z)
    if data.k_z - len(inv) < data.k_x:
        raise UnderidentifiedError(
            f"{data.k_z - len(inv)} valid instrument(s) for {data.k_x} exposure(s)"
        )
    _, X_hat = first_stage(data)
    Z_inv = data.Z[:, list(inv)]
    R_hat = np.hstack([X_hat, Z_inv])
    names = list(data.exposure_labels) + [data.instrument_labels[j] for j in inv]
    basis = qr_basis(R_hat, names=names, what="second-stage design [X_hat, Z_invalid]")
    theta = basis.solve(data.y)
    beta = theta[: data.k_x]
    alpha = theta[data.k_x :]
    resid = data.y - data.X @ beta - Z_inv @ alpha
    rss = float(resid @ resid)
    sigma2 = rss / data.n
    vcov = sigma2 * basis.inv_gram()
    vcov = 0.5 * (vcov + vcov.T)
    for arr in (beta, alpha, resid, vcov):
        arr.setflags(write=False)
    return TwoSLSFit(
        invalid_set=inv,
        beta_hat=beta,
        alpha_hat=alpha,
        residuals=resid,
        sigma2_hat=sigma2,
        rss=rss,
        vcov=vcov,
        n=data.n,
        k_x=data.k_x,
        k_z=data.k_z,
    )


# residuals below this fraction of ||y|| count as an exact fit
ZERO_RESID_RTOL = 1e-10


def sargan_statistic(resid, z_basis, n, zero_ss=0.0):
    """``n * r'P_Z r / r'r``; zero when ``r'r <= zero_ss`` (an exact fit)."""
    rr = float(resid @ resid)
    if rr <= zero_ss:
        return 0.0
    proj = z_basis.q.T @ resid
    return n * float(proj @ proj) / rr


def sargan(fit, data):
    """Sargan overidentification test for a 2SLS fit on ``data``.

    With zero degrees of freedom the model is just identified and the
    statistic is reported as 0 with p-value 1.
    """
    df = fit.df
    if df < 0:
        raise UnderidentifiedError("negative degrees of freedom")
    if df == 0:
        return SarganResult(0.0, 0, 1.0)
    zero_ss = ZERO_RESID_RTOL**2 * float(data.y @ data.y)
    stat = sargan_statistic(fit.residuals, data.z_basis, data.n, zero_ss)
    return SarganResult(stat, df, float(stats.chi2.sf(stat, df)))


def joint_2sls(data, invalid_set=()):
    """Single-solve 2SLS of theta on ``R = [X, Z_invalid]`` with instruments Z.

    Used to cross-check the partitioned form of :func:`fit_2sls`.
    """
    inv = _normalise_set(invalid_set, data.k_z)
    R = np.hstack([data.X, data.Z[:, list(inv)]])
    PR = data.z_basis.project(R)
    basis = qr_basis(PR, what="projected regressors")
    return basis.solve(data.y)


__all__ = [
    "RANK_RTOL",
    "RankError",
    "SarganResult",
    "TwoSLSFit",
    "first_stage",
    "fit_2sls",
    "joint_2sls",
    "sargan",
    "sargan_statistic",
]
