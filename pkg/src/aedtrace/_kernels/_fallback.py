"""Pure numpy implementations of the hot kernels.

These mirror ``_core.pyx`` operation for operation (same working-set
selection, same tie-breaks, same update order) so both backends return
the same numbers on the same inputs.
"""

import numpy as np

TAU = 1e-12


def smo_solve(K, y, C, tol, max_iter):
    """Solve the C-SVC dual with maximal-violating-pair SMO.

    Working set selection uses second-order information (Fan, Chen & Lin
    2005).  Returns ``(alpha, rho, n_iter, violation, converged)`` where the
    decision function is ``sum(alpha * y * K[:, x]) - rho``.
    """
    K = np.ascontiguousarray(K, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    QD = np.diag(K).copy()
    pos = y > 0

    it = 0
    violation = np.inf
    converged = False
    while it < max_iter:
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        score = -y * G
        if not up.any() or not low.any():
            violation = 0.0
            converged = True
            break
        masked = np.where(up, score, -np.inf)
        i = int(np.argmax(masked))
        gmax = masked[i]
        gmin = np.min(np.where(low, score, np.inf))
        violation = gmax - gmin
        if violation < tol:
            converged = True
            break

        Ki = K[i]
        b = gmax - score
        cand = low & (b > 0)
        if not cand.any():
            converged = True
            break
        quad = QD[i] + QD - 2.0 * Ki
        quad = np.where(quad > 0, quad, TAU)
        obj = np.where(cand, -(b * b) / quad, np.inf)
        j = int(np.argmin(obj))
        Kj = K[j]

        yi, yj = y[i], y[j]
        ai_old, aj_old = alpha[i], alpha[j]
        ai, aj = ai_old, aj_old
        if yi != yj:
            q = QD[i] + QD[j] + 2.0 * (yi * yj * Ki[j])
            if q <= 0:
                q = TAU
            delta = (-G[i] - G[j]) / q
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0:
                    ai = 0.0
                    aj = -diff
            if diff > 0:
                if ai > C:
                    ai = C
                    aj = C - diff
            else:
                if aj > C:
                    aj = C
                    ai = C + diff
        else:
            q = QD[i] + QD[j] - 2.0 * (yi * yj * Ki[j])
            if q <= 0:
                q = TAU
            delta = (G[i] - G[j]) / q
            s = ai + aj
            ai -= delta
            aj += delta
            if s > C:
                if ai > C:
                    ai = C
                    aj = s - C
            else:
                if aj < 0:
                    aj = 0.0
                    ai = s
            if s > C:
                if aj > C:
                    aj = C
                    ai = s - C
            else:
                if ai < 0:
                    ai = 0.0
                    aj = s
        alpha[i] = ai
        alpha[j] = aj
        dai = ai - ai_old
        daj = aj - aj_old
        G += (yi * y * Ki) * dai + (yj * y * Kj) * daj
        it += 1

    rho = _compute_rho(alpha, G, y, C)
    return alpha, rho, it, float(violation), converged


def _compute_rho(alpha, G, y, C):
    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        # sequential sum to match the compiled backend bit for bit
        return float(sum(yG[free].tolist()) / np.count_nonzero(free))
    ub = np.inf
    lb = -np.inf
    for k in range(y.shape[0]):
        at_upper = alpha[k] >= C
        at_lower = alpha[k] <= 0
        if at_upper:
            if y[k] < 0:
                ub = min(ub, yG[k])
            else:
                lb = max(lb, yG[k])
        elif at_lower:
            if y[k] > 0:
                ub = min(ub, yG[k])
            else:
                lb = max(lb, yG[k])
    return float((ub + lb) / 2.0)


def signed_rank_counts(doubled_ranks):
    """Number of sign assignments giving each doubled positive-rank sum.

    ``counts[s]`` is how many of the ``2**n`` patterns have ``2*W+ == s``.
    """
    r = np.asarray(doubled_ranks, dtype=np.int64)
    total = int(r.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for v in r:
        v = int(v)
        shifted = counts[: total + 1 - v].copy()
        counts[v:] += shifted
    return counts


def rank_sum_counts(doubled_ranks, n_pick):
    """Number of size-``n_pick`` subsets giving each doubled rank sum."""
    r = np.asarray(doubled_ranks, dtype=np.int64)
    total = int(r.sum())
    c = np.zeros((n_pick + 1, total + 1), dtype=np.int64)
    c[0, 0] = 1
    for idx, v in enumerate(r):
        v = int(v)
        top = min(idx + 1, n_pick)
        for k in range(top, 0, -1):
            c[k, v:] += c[k - 1, : total + 1 - v]
    return c[n_pick]
