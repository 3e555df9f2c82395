"""Compiled inner loops for pairwise training of the feature-based model.

Representations: q_u = sum_f w_f U[f] over user features; p_j = sum_g w_g V[g]
over item features (+ E[j] @ P in mode 2); b_j = sum_g w_g bV[g]
(+ E[j] . wd + c in modes 1 and 2). Raw score s_uj = q_u . p_j + b_j.

A pair step differentiates L(Delta) + lam * sum ||theta||^2 where
Delta = s_ui - s_uj and theta ranges over every parameter row touched by the
triplet (each row counted once). The caller supplies G = dL/dDelta.
"""

import numpy as np
from numba import njit

BPR = 0
WARP = 1


@njit(cache=True)
def user_repr(u, uptr, uidx, udat, U):
    d = U.shape[1]
    q = np.zeros(d)
    for ptr in range(uptr[u], uptr[u + 1]):
        w = udat[ptr]
        f = uidx[ptr]
        for k in range(d):
            q[k] += w * U[f, k]
    return q


@njit(cache=True)
def item_repr(j, iptr, iidx, idat, V, bV, E, wd, c, P, mode):
    d = V.shape[1]
    p = np.zeros(d)
    b = 0.0
    for ptr in range(iptr[j], iptr[j + 1]):
        w = idat[ptr]
        f = iidx[ptr]
        for k in range(d):
            p[k] += w * V[f, k]
        b += w * bV[f]
    if mode >= 1:
        for a in range(E.shape[1]):
            b += E[j, a] * wd[a]
        b += c[0]
    if mode == 2:
        for a in range(E.shape[1]):
            e = E[j, a]
            if e != 0.0:
                for k in range(d):
                    p[k] += e * P[a, k]
    return p, b


@njit(cache=True)
def pair_grads(u, i, j, G, lam, q, p_i, p_j, uptr, uidx, udat, U, iptr, iidx, idat, V, bV, E, wd, c, P, mode):
    """Sparse gradient of one (user, positive, negative) triplet.

    Returns ``(user_rows, user_grad, item_rows, item_grad, item_bias_grad,
    dense_bias_grad, intercept_grad, projection_grad)``.
    """
    d = U.shape[1]
    nu = uptr[u + 1] - uptr[u]
    user_rows = np.empty(nu, dtype=np.int64)
    user_grad = np.empty((nu, d))
    for r in range(nu):
        f = uidx[uptr[u] + r]
        w = udat[uptr[u] + r]
        user_rows[r] = f
        for k in range(d):
            user_grad[r, k] = w * G * (p_i[k] - p_j[k]) + 2.0 * lam * U[f, k]

    ni = iptr[i + 1] - iptr[i]
    nj = iptr[j + 1] - iptr[j]
    feats = np.empty(ni + nj, dtype=np.int64)
    coefs = np.empty(ni + nj)
    for r in range(ni):
        feats[r] = iidx[iptr[i] + r]
        coefs[r] = idat[iptr[i] + r]
    for r in range(nj):
        feats[ni + r] = iidx[iptr[j] + r]
        coefs[ni + r] = -idat[iptr[j] + r]
    order = np.argsort(feats, kind="mergesort")
    n_unique = 0
    for r in range(ni + nj):
        if r == 0 or feats[order[r]] != feats[order[r - 1]]:
            n_unique += 1
    item_rows = np.empty(n_unique, dtype=np.int64)
    item_coef = np.zeros(n_unique)
    pos = -1
    for r in range(ni + nj):
        if r == 0 or feats[order[r]] != feats[order[r - 1]]:
            pos += 1
            item_rows[pos] = feats[order[r]]
        item_coef[pos] += coefs[order[r]]
    item_grad = np.empty((n_unique, d))
    item_bias_grad = np.empty(n_unique)
    for r in range(n_unique):
        f = item_rows[r]
        a = item_coef[r] * G
        for k in range(d):
            item_grad[r, k] = a * q[k] + 2.0 * lam * V[f, k]
        item_bias_grad[r] = a + 2.0 * lam * bV[f]

    D = E.shape[1]
    dense_bias_grad = np.zeros(D if mode >= 1 else 0)
    intercept_grad = np.zeros(1)
    projection_grad = np.zeros((D if mode == 2 else 0, d))
    if mode >= 1:
        for a in range(D):
            dense_bias_grad[a] = G * (E[i, a] - E[j, a]) + 2.0 * lam * wd[a]
        intercept_grad[0] = 2.0 * lam * c[0]
    if mode == 2:
        for a in range(D):
            de = G * (E[i, a] - E[j, a])
            for k in range(d):
                projection_grad[a, k] = de * q[k] + 2.0 * lam * P[a, k]
    return user_rows, user_grad, item_rows, item_grad, item_bias_grad, dense_bias_grad, intercept_grad, projection_grad


@njit(cache=True)
def _adagrad(theta, acc, g, lr):
    acc += g * g
    theta -= lr * g / np.sqrt(acc)


@njit(cache=True)
def apply_grads(
    lr, user_rows, user_grad, item_rows, item_grad, item_bias_grad, dense_bias_grad, intercept_grad,
    projection_grad, U, V, bV, wd, c, P, aU, aV, abV, awd, ac, aP, mode,
):
    """Adagrad update of the touched rows (accumulators start at 1)."""
    d = U.shape[1]
    for r in range(user_rows.shape[0]):
        f = user_rows[r]
        for k in range(d):
            g = user_grad[r, k]
            aU[f, k] += g * g
            U[f, k] -= lr * g / np.sqrt(aU[f, k])
    for r in range(item_rows.shape[0]):
        f = item_rows[r]
        for k in range(d):
            g = item_grad[r, k]
            aV[f, k] += g * g
            V[f, k] -= lr * g / np.sqrt(aV[f, k])
        g = item_bias_grad[r]
        abV[f] += g * g
        bV[f] -= lr * g / np.sqrt(abV[f])
    if mode >= 1:
        _adagrad(wd, awd, dense_bias_grad, lr)
        _adagrad(c, ac, intercept_grad, lr)
    if mode == 2:
        _adagrad(P, aP, projection_grad, lr)


@njit(cache=True)
def is_train_item(u, j, tptr, tidx):
    lo = tptr[u]
    hi = tptr[u + 1]
    while lo < hi:
        mid = (lo + hi) // 2
        if tidx[mid] < j:
            lo = mid + 1
        else:
            hi = mid
    return lo < tptr[u + 1] and tidx[lo] == j


@njit(cache=True)
def _sample_negative(u, tptr, tidx, n_items):
    while True:
        j = np.random.randint(0, n_items)
        if not is_train_item(u, j, tptr, tidx):
            return j


@njit(cache=True)
def log1pexp(x):
    if x > 0:
        return x + np.log1p(np.exp(-x))
    return np.log1p(np.exp(x))


@njit(cache=True)
def sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def run_epoch(
    pair_users, pair_items, tptr, tidx, n_items, loss_kind, max_trials, phi, lr, lam, seed,
    uptr, uidx, udat, U, iptr, iidx, idat, V, bV, E, wd, c, P, aU, aV, abV, awd, ac, aP, mode,
):
    """One pass over the given (user, positive) pairs in order.

    Returns ``(loss_sum, n_updates, bad_step)``; ``bad_step`` is -1 unless a
    non-finite loss was met, in which case the epoch stops there.
    """
    np.random.seed(seed)
    total = 0.0
    n_updates = 0
    for s in range(pair_users.shape[0]):
        u = pair_users[s]
        i = pair_items[s]
        n_candidates = n_items - (tptr[u + 1] - tptr[u])
        if n_candidates <= 0:
            continue
        q = user_repr(u, uptr, uidx, udat, U)
        p_i, b_i = item_repr(i, iptr, iidx, idat, V, bV, E, wd, c, P, mode)
        s_pos = np.dot(q, p_i) + b_i
        G = 0.0
        loss = 0.0
        if loss_kind == BPR:
            j = _sample_negative(u, tptr, tidx, n_items)
            p_j, b_j = item_repr(j, iptr, iidx, idat, V, bV, E, wd, c, P, mode)
            delta = s_pos - (np.dot(q, p_j) + b_j)
            G = -sigmoid(-delta)
            loss = log1pexp(-delta)
        else:
            j = -1
            for n in range(1, max_trials + 1):
                cand = _sample_negative(u, tptr, tidx, n_items)
                p_j, b_j = item_repr(cand, iptr, iidx, idat, V, bV, E, wd, c, P, mode)
                margin = 1.0 + np.dot(q, p_j) + b_j - s_pos
                if margin > 0.0:
                    j = cand
                    k = max(n_candidates // n, 1)
                    G = -phi[k]
                    loss = phi[k] * margin
                    break
            if j < 0:
                continue
        if not np.isfinite(loss):
            return total, n_updates, s
        p_j, b_j = item_repr(j, iptr, iidx, idat, V, bV, E, wd, c, P, mode)
        ur, ug, ir, ig, ibg, dbg, icg, pg = pair_grads(
            u, i, j, G, lam, q, p_i, p_j, uptr, uidx, udat, U, iptr, iidx, idat, V, bV, E, wd, c, P, mode
        )
        apply_grads(lr, ur, ug, ir, ig, ibg, dbg, icg, pg, U, V, bV, wd, c, P, aU, aV, abV, awd, ac, aP, mode)
        total += loss
        n_updates += 1
    return total, n_updates, -1
