"""Hot numeric kernels with numba and pure-numpy implementations.

Every public kernel name is bound at import time to the numba version when
acceleration is enabled and to the numpy version otherwise. Both versions are
also importable under ``*_numba`` / ``*_numpy`` names so tests and the
benchmark can compare them directly.
"""

import warnings

import numpy as np

from ._accel import USE_NUMBA, compile_kernel

# LARS event codes stored in the integer event array: +(j + 1) enter,
# -(j + 1) drop, 0 start / terminal.
EVENT_NONE = 0


# ---------------------------------------------------------------------------
# Just-identified solves over index subsets
# ---------------------------------------------------------------------------


def _solve_subsets_loop(Pi, gamma, subsets, rtol):
    m, k = subsets.shape
    betas = np.full((m, k), np.nan)
    ratios = np.empty(m)
    P = np.empty((k, k))
    g = np.empty(k)
    for i in range(m):
        for a in range(k):
            r = subsets[i, a]
            for q in range(k):
                P[a, q] = Pi[r, q]
            g[a] = gamma[r]
        if k == 1:
            ratios[i] = 1.0 if P[0, 0] != 0.0 else 0.0
            if ratios[i] >= rtol:
                betas[i, 0] = g[0] / P[0, 0]
        elif k == 2:
            # closed-form singular values of a 2x2 matrix
            fro = P[0, 0] ** 2 + P[0, 1] ** 2 + P[1, 0] ** 2 + P[1, 1] ** 2
            det = P[0, 0] * P[1, 1] - P[0, 1] * P[1, 0]
            disc = fro * fro - 4.0 * det * det
            if disc < 0.0:
                disc = 0.0
            s_max2 = 0.5 * (fro + np.sqrt(disc))
            if s_max2 <= 0.0:
                ratios[i] = 0.0
            else:
                # s_min = |det| / s_max avoids cancellation in (fro - sqrt(disc))
                ratios[i] = abs(det) / s_max2
            if ratios[i] >= rtol:
                betas[i, 0] = (g[0] * P[1, 1] - P[0, 1] * g[1]) / det
                betas[i, 1] = (P[0, 0] * g[1] - P[1, 0] * g[0]) / det
        else:
            sv = np.linalg.svd(P.copy())[1]
            ratios[i] = sv[k - 1] / sv[0] if sv[0] > 0.0 else 0.0
            if ratios[i] >= rtol:
                betas[i] = np.linalg.solve(P.copy(), g.copy())
    return betas, ratios


def solve_subsets_numpy(Pi, gamma, subsets, rtol):
    """Solve ``Pi[s] @ beta_s = gamma[s]`` for every row ``s`` of ``subsets``.

    Returns the ``(m, k)`` solutions (NaN rows where the subset matrix has a
    singular-value ratio below ``rtol``) and the ``(m,)`` ratios.
    """
    subsets = np.asarray(subsets, dtype=np.int64)
    m, k = subsets.shape
    P = Pi[subsets]
    g = gamma[subsets]
    sv = np.linalg.svd(P, compute_uv=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(sv[:, 0] > 0.0, sv[:, -1] / sv[:, 0], 0.0)
    betas = np.full((m, k), np.nan)
    ok = ratios >= rtol
    if ok.any():
        betas[ok] = np.linalg.solve(P[ok], g[ok][..., None])[..., 0]
    return betas, ratios


solve_subsets_numba = compile_kernel(_solve_subsets_loop)


# ---------------------------------------------------------------------------
# Masked row medians of a symmetric pairwise grid
# ---------------------------------------------------------------------------


def _masked_row_medians_loop(grid, mask):
    kz = grid.shape[0]
    kx = grid.shape[2]
    out = np.full((kz, kx), np.nan)
    buf = np.empty(grid.shape[1])
    for j in range(kz):
        for q in range(kx):
            cnt = 0
            for ell in range(grid.shape[1]):
                if mask[j, ell]:
                    buf[cnt] = grid[j, ell, q]
                    cnt += 1
            if cnt > 0:
                out[j, q] = np.median(buf[:cnt])
    return out


def masked_row_medians_numpy(grid, mask):
    """Elementwise median over admissible partners for every row.

    ``grid`` has shape ``(kz, kz, kx)``; ``mask[j, l]`` marks the partners of
    row ``j`` that enter its median. Rows without partners yield NaN.
    """
    vals = np.where(mask[..., None], grid, np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmedian(vals, axis=1)


masked_row_medians_numba = compile_kernel(_masked_row_medians_loop)


# ---------------------------------------------------------------------------
# LARS with the Lasso modification, Gram form
# ---------------------------------------------------------------------------


def _lars_gram_loop(G, c0, eligible, max_active, tie_rtol, zero_tol):
    k = G.shape[0]
    max_steps = 8 * k + 8
    lambdas = np.zeros(max_steps)
    coefs = np.zeros((max_steps, k))
    events = np.zeros(max_steps, dtype=np.int64)
    b = np.zeros(k)
    active = np.zeros(k, dtype=np.bool_)
    order = np.zeros(k, dtype=np.int64)
    n_act = 0
    n_ties = 0

    c = c0.copy()
    lam = 0.0
    for j in range(k):
        if eligible[j] and abs(c[j]) > lam:
            lam = abs(c[j])
    if lam <= zero_tol or max_active == 0:
        return lambdas[:1] * 0.0, coefs[:1], events[:1], 0

    lambdas[0] = lam
    step = 1
    blocked = -1
    while step < max_steps:
        if n_act == 0:
            # (re)start: the most correlated eligible column enters at lam
            best = -1
            cand = 0
            for j in range(k):
                if eligible[j] and j != blocked:
                    if best < 0 or abs(c[j]) > abs(c[best]) * (1.0 + tie_rtol):
                        best = j
                        cand = 1
                    elif abs(c[j]) >= abs(c[best]) * (1.0 - tie_rtol):
                        cand += 1
            if best < 0:
                break
            if cand >= 3:
                n_ties += 1
            active[best] = True
            order[0] = best
            n_act = 1
            events[step - 1] = best + 1

        idx = order[:n_act]
        GA = np.empty((n_act, n_act))
        s = np.empty(n_act)
        for a in range(n_act):
            s[a] = 1.0 if c[idx[a]] >= 0.0 else -1.0
            for bb in range(n_act):
                GA[a, bb] = G[idx[a], idx[bb]]
        d = np.linalg.solve(GA, s)
        rate = np.zeros(k)
        for j in range(k):
            acc = 0.0
            for a in range(n_act):
                acc += G[j, idx[a]] * d[a]
            rate[j] = acc

        g_enter = np.inf
        j_enter = -1
        cand = 0
        if n_act < max_active:
            for j in range(k):
                if active[j] or not eligible[j]:
                    continue
                # a just-dropped column sits exactly at |c_j| = lam; only a
                # strictly later crossing counts as re-entry
                floor = 1e-9 * lam if j == blocked else 0.0
                gj = np.inf
                den = 1.0 - rate[j]
                if den > 1e-14:
                    val = (lam - c[j]) / den
                    if val > floor and val < gj:
                        gj = val
                den = 1.0 + rate[j]
                if den > 1e-14:
                    val = (lam + c[j]) / den
                    if val > floor and val < gj:
                        gj = val
                if gj == np.inf:
                    continue
                if gj < g_enter * (1.0 - tie_rtol):
                    g_enter = gj
                    j_enter = j
                    cand = 1
                elif gj <= g_enter * (1.0 + tie_rtol):
                    cand += 1
        if cand >= 3:
            n_ties += 1

        g_drop = np.inf
        a_drop = -1
        for a in range(n_act):
            if d[a] != 0.0:
                val = -b[idx[a]] / d[a]
                if val > 0.0 and val < g_drop:
                    g_drop = val
                    a_drop = a

        gam = lam
        kind = 0
        if g_enter < gam:
            gam = g_enter
            kind = 1
        if g_drop < gam:
            gam = g_drop
            kind = 2

        for a in range(n_act):
            b[idx[a]] += gam * d[a]
        lam -= gam
        if kind == 0 or lam <= zero_tol:
            lam = 0.0
        # recompute correlations from the Gram matrix to limit drift
        for j in range(k):
            acc = c0[j]
            for l in range(k):
                acc -= G[j, l] * b[l]
            c[j] = acc

        if kind == 2 and lam > 0.0:
            jd = idx[a_drop]
            b[jd] = 0.0
            active[jd] = False
            for a in range(a_drop, n_act - 1):
                order[a] = order[a + 1]
            n_act -= 1
            events[step] = -(jd + 1)
            blocked = jd
        elif kind == 1 and lam > 0.0:
            active[j_enter] = True
            order[n_act] = j_enter
            n_act += 1
            events[step] = j_enter + 1
            blocked = -1
        else:
            events[step] = 0
        lambdas[step] = lam
        for j in range(k):
            coefs[step, j] = b[j]
        step += 1
        if lam <= 0.0:
            break
    return lambdas[:step], coefs[:step], events[:step], n_ties


lars_gram_numpy = _lars_gram_loop
lars_gram_numba = compile_kernel(_lars_gram_loop)


# ---------------------------------------------------------------------------
# Weighted Lasso by cyclic coordinate descent (validation oracle)
# ---------------------------------------------------------------------------


def _lasso_cd_loop(G, c0, yy, lam, weights, gap_tol, max_sweeps):
    k = G.shape[0]
    b = np.zeros(k)
    grad = c0.copy()  # X'(y - Xb)
    gap = np.inf
    for sweep in range(max_sweeps):
        for j in range(k):
            if G[j, j] <= 0.0:
                continue
            old = b[j]
            z = grad[j] + G[j, j] * old
            thr = lam * weights[j]
            if z > thr:
                new = (z - thr) / G[j, j]
            elif z < -thr:
                new = (z + thr) / G[j, j]
            else:
                new = 0.0
            if new != old:
                delta = new - old
                for l in range(k):
                    grad[l] -= G[l, j] * delta
                b[j] = new
        # duality gap in Gram form
        cb = 0.0
        bGb = 0.0
        pen = 0.0
        for j in range(k):
            cb += c0[j] * b[j]
            bGb += b[j] * (c0[j] - grad[j])
            pen += weights[j] * abs(b[j])
        rr = yy - 2.0 * cb + bGb
        if rr < 0.0:
            rr = 0.0
        primal = 0.5 * rr + lam * pen
        scale = 1.0
        for j in range(k):
            if abs(grad[j]) > 0.0:
                lim = lam * weights[j] / abs(grad[j])
                if lim < scale:
                    scale = lim
        yr = yy - cb
        dual = scale * yr - 0.5 * scale * scale * rr
        gap = primal - dual
        if gap <= gap_tol:
            break
    return b, gap


lasso_cd_numpy = _lasso_cd_loop
lasso_cd_numba = compile_kernel(_lasso_cd_loop)


if USE_NUMBA:
    solve_subsets = solve_subsets_numba
    masked_row_medians = masked_row_medians_numba
    lars_gram = lars_gram_numba
    lasso_cd = lasso_cd_numba
else:
    solve_subsets = solve_subsets_numpy
    masked_row_medians = masked_row_medians_numpy
    lars_gram = lars_gram_numpy
    lasso_cd = lasso_cd_numpy
