"""Adaptive Lasso for the direct-effect vector via a weighted LARS path.

With the exposure effects profiled out, the penalised problem is an ordinary
weighted Lasso of y on ``Z_tilde = M_{X_hat} Z``. Weights are handled by
rescaling column j by ``1 / w_j``, running LARS with the Lasso modification on
the rescaled problem and mapping coefficients back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import RANK_RTOL, qr_basis
from .errors import ValidationError
from .iv import first_stage

TIE_RTOL = 1e-12


@dataclass(frozen=True)
class AdaptiveWeights:
    """Penalty weights ``1 / |alpha_init|^nu``; exact zeros get infinite weight."""

    weights: np.ndarray
    nu: float
    frozen_valid: frozenset

    @classmethod
    def from_initial(cls, alpha_init, nu=1.0):
        if not nu > 0:
            raise ValidationError(f"nu must be positive, got {nu}")
        a = np.abs(np.asarray(alpha_init, dtype=float))
        if not np.all(np.isfinite(a)):
            raise ValidationError("initial estimate contains non-finite values")
        frozen = a == 0.0
        w = np.full(a.shape, np.inf)
        w[~frozen] = a[~frozen] ** (-nu)
        return cls(w, float(nu), frozenset(np.flatnonzero(frozen).tolist()))

    def scaled(self, c):
        return AdaptiveWeights(self.weights * c, self.nu, self.frozen_valid)


@dataclass(frozen=True)
class Breakpoint:
    lam: float
    active_set: frozenset
    alpha: np.ndarray
    event: tuple | None


@dataclass(frozen=True)
class LarsPath:
    """Breakpoints of the weighted Lasso path, largest penalty first.

    ``coefs[i]`` are the coefficients on the original scale at ``lambdas[i]``;
    ``events[i]`` is ``("enter", j)``, ``("drop", j)`` or None.
    """

    lambdas: np.ndarray
    coefs: np.ndarray
    events: tuple
    entry_order: tuple
    warnings: tuple = ()

    def active_sets(self):
        """Active set after the event at each breakpoint.

        A column that enters at a breakpoint still has a zero coefficient
        there, so sets are replayed from the events rather than read off
        the coefficients.
        """
        out, cur = [], set()
        for ev in self.events:
            if ev is not None:
                kind, j = ev
                if kind == "enter":
                    cur.add(j)
                else:
                    cur.discard(j)
            out.append(frozenset(cur))
        return out

    @property
    def breakpoints(self):
        return [
            Breakpoint(float(lam), s, c, ev)
            for lam, c, ev, s in zip(self.lambdas, self.coefs, self.events, self.active_sets())
        ]

    def __len__(self):
        return len(self.lambdas)


def build_ztilde(data):
    """Instruments with the fitted exposures projected out."""
    _, X_hat = first_stage(data)
    return qr_basis(X_hat, what="fitted exposures").annihilate(data.Z)


def numerical_rank(A, rtol=RANK_RTOL, scale=None):
    """Count singular values above ``rtol`` times ``scale``.

    ``scale`` defaults to the largest singular value of ``A``; pass the norm
    of a parent matrix when ``A`` may be numerically zero.
    """
    s = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    ref = s[0] if s.size else 0.0
    if scale is not None:
        ref = max(ref, float(scale))
    if ref == 0:
        return 0
    return int(np.sum(s > rtol * ref))


def lars_weighted_path(ztilde, y, weights, max_active=None):
    """Exact piecewise-linear path of the weighted Lasso.

    Solves ``0.5 * ||y - Z a||^2 + lam * sum_j w_j |a_j|`` for all ``lam``.

    Parameters
    ----------
    ztilde : ndarray, shape (n, k)
    y : ndarray, shape (n,)
    weights : AdaptiveWeights
        Columns with infinite weight never enter.
    max_active : int, optional
        Largest active set; once reached only drops are allowed and the path
        runs to ``lam = 0``. Defaults to the numerical rank of ``ztilde``.
    """
    Z = np.asarray(ztilde, dtype=float)
    y = np.asarray(y, dtype=float)
    k = Z.shape[1]
    w = np.asarray(weights.weights, dtype=float)
    if w.shape != (k,):
        raise ValidationError(f"expected {k} weights, got shape {w.shape}")
    eligible = np.isfinite(w)
    scale = np.zeros(k)
    scale[eligible] = 1.0 / w[eligible]
    Xs = Z * scale
    G = Xs.T @ Xs
    c0 = Xs.T @ y
    if max_active is None:
        max_active = numerical_rank(Z[:, eligible]) if eligible.any() else 0
    max_active = int(min(max_active, eligible.sum()))
    col_norm = np.sqrt(np.max(np.diag(G))) if k else 0.0
    zero_tol = 1e-12 * max(float(np.linalg.norm(y)) * col_norm, np.finfo(float).tiny)
    lambdas, coefs_s, ev, n_ties = _kernels.lars_gram(
        np.ascontiguousarray(G), c0, eligible, max_active, TIE_RTOL, zero_tol
    )
    coefs = coefs_s * scale
    events = []
    order = []
    for code in ev:
        code = int(code)
        if code > 0:
            events.append(("enter", code - 1))
            if code - 1 not in order:
                order.append(code - 1)
        elif code < 0:
            events.append(("drop", -code - 1))
        else:
            events.append(None)
    warns = ()
    if n_ties:
        warns = (f"{n_ties} step(s) had three or more tied entry candidates; lowest index entered",)
    return LarsPath(np.asarray(lambdas), coefs, tuple(events), tuple(order), warns)


def adaptive_lasso_at(path, lam):
    """Coefficients on the path at penalty ``lam`` by linear interpolation."""
    if lam < 0:
        raise ValidationError("lambda must be non-negative")
    lams = path.lambdas
    if lam >= lams[0]:
        return np.zeros(path.coefs.shape[1]) if lam > lams[0] else path.coefs[0].copy()
    if lam <= lams[-1]:
        return path.coefs[-1].copy()
    # lams is non-increasing; find i with lams[i] >= lam > lams[i + 1]
    i = int(np.searchsorted(-lams, -lam, side="right")) - 1
    hi, lo = lams[i], lams[i + 1]
    if lam == hi:
        return path.coefs[i].copy()
    t = (hi - lam) / (hi - lo)
    return (1.0 - t) * path.coefs[i] + t * path.coefs[i + 1]


def beta_from_alpha(data, alpha_ad):
    """Exposure effects given direct effects: ``(X_hat'X_hat)^{-1} X_hat'(y - Z alpha)``."""
    _, X_hat = first_stage(data)
    basis = qr_basis(X_hat, names=data.exposure_labels, what="fitted exposures")
    return basis.solve(data.y - data.Z @ np.asarray(alpha_ad, dtype=float))


def lasso_objective(ztilde, y, weights, alpha, lam):
    r = y - ztilde @ alpha
    w = np.where(np.isfinite(weights.weights), weights.weights, 0.0)
    return 0.5 * float(r @ r) + lam * float(np.sum(w * np.abs(alpha)))
