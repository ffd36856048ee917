"""Compiled inner loops for acquisition optimization.

The expensive primitive is the inner grid maximum of a fantasy surface,
max_z (mu[z] + sig(:, z) . xi), taken per draw. For any draw with norm at
most w, the key k[z] = mu[z] + w * |sig(:, z)| bounds the draw's value at z,
so visiting grid points in decreasing key order lets every draw stop as soon
as the next key cannot beat its running maximum. The visit order is built
with a 32-bin counting sort (exact early exit at bin-edge granularity, no
per-candidate full sort), which leaves every maximum bit-identical to an
exhaustive scan.
"""

import math

import numpy as np
from numba import njit

_KEY_SLACK = 1e-9
_FAIL = -1e300
_VALUE_BINS = 32


@njit(cache=True)
def _chol_inplace(sig_mat, lower):
    """Cholesky of a small SPD matrix into ``lower``; returns False on failure."""
    n = sig_mat.shape[0]
    for j in range(n):
        s = sig_mat[j, j]
        for k in range(j):
            s -= lower[j, k] * lower[j, k]
        if s <= 0.0:
            return False
        lower[j, j] = math.sqrt(s)
        for i in range(j + 1, n):
            t = sig_mat[i, j]
            for k in range(j):
                t -= lower[i, k] * lower[j, k]
            lower[i, j] = t / lower[j, j]
    return True


@njit(cache=True, fastmath=True)
def _solve_rows(kc, xc, lower, sig):
    """Forward substitution, one full grid row per pass so every inner loop
    runs contiguously (the column-ordered variant cache-misses per element)."""
    n = xc.shape[0]
    d = kc.shape[0]
    for i in range(n):
        row = kc[xc[i]]
        for z in range(d):
            sig[i, z] = row[z]
        for k in range(i):
            c = lower[i, k]
            for z in range(d):
                sig[i, z] -= c * sig[k, z]
        inv = lower[i, i]
        for z in range(d):
            sig[i, z] /= inv


@njit(cache=True, fastmath=True)
def _column_norms(sig, ns):
    n, d = sig.shape
    for z in range(d):
        ns[z] = sig[0, z] * sig[0, z]
    for i in range(1, n):
        for z in range(d):
            ns[z] += sig[i, z] * sig[i, z]
    for z in range(d):
        ns[z] = math.sqrt(ns[z])


@njit(cache=True)
def _candidate_prepare(kc, xc, n_coord, c, noise_var, lower, sig_mat, sig, ns):
    """Cholesky, fantasy weights and their column norms for one candidate.

    Returns False when the batch covariance is not factorizable even with
    escalated jitter.
    """
    n = xc.shape[0]
    xc[n_coord] = c
    for i in range(n):
        for j in range(n):
            sig_mat[i, j] = kc[xc[i], xc[j]]
        sig_mat[i, i] += noise_var
    ok = _chol_inplace(sig_mat, lower)
    jitter = 1e-8
    while not ok and jitter <= 1.0001e-4:
        for i in range(n):
            sig_mat[i, i] += jitter
        ok = _chol_inplace(sig_mat, lower)
        jitter *= 10.0
    if not ok:
        return False
    _solve_rows(kc, xc, lower, sig)
    _column_norms(sig, ns)
    return True


@njit(cache=True)
def _fill_keys(mu, ns, wmax, key_raw):
    """Visit keys mu[z] + wmax * ns[z] (slack-inflated); returns (kmax, kmin)."""
    d = mu.shape[0]
    kmax = -1.0e300
    kmin = 1.0e300
    for z in range(d):
        k = mu[z] + wmax * ns[z]
        k += _KEY_SLACK * (1.0 + abs(k))
        key_raw[z] = k
        if k > kmax:
            kmax = k
        if k < kmin:
            kmin = k
    return kmax, kmin


@njit(cache=True)
def _ordered_mean_max(mu, sig, xi, key_raw, kmax, kmin, mu_o, sig_o, offsets, cursor):
    """mean_m max_z (mu[z] + sum_i xi[m, i] * sig[i, z]), exactly, visiting z
    in decreasing key order via a counting sort over 32 bins."""
    n, d = sig.shape
    width = (kmax - kmin) / _VALUE_BINS
    if width <= 0.0:
        width = 1.0
    for b in range(_VALUE_BINS + 1):
        offsets[b] = 0
    for z in range(d):
        b = int((kmax - key_raw[z]) / width)
        if b >= _VALUE_BINS:
            b = _VALUE_BINS - 1
        key_raw[z] = b  # reuse as bin index
        offsets[b + 1] += 1
    for b in range(_VALUE_BINS):
        offsets[b + 1] += offsets[b]
    for b in range(_VALUE_BINS):
        cursor[b] = offsets[b]
    for z in range(d):
        b = int(key_raw[z])
        pos = cursor[b]
        cursor[b] = pos + 1
        mu_o[pos] = mu[z]
        for i in range(n):
            sig_o[i, pos] = sig[i, z]
    total = 0.0
    m_draws = xi.shape[0]
    for m in range(m_draws):
        best = -1.0e300
        for b in range(_VALUE_BINS):
            if kmax - b * width < best:
                break
            if n == 4:
                x0, x1, x2, x3 = xi[m, 0], xi[m, 1], xi[m, 2], xi[m, 3]
                s0, s1, s2, s3 = sig_o[0], sig_o[1], sig_o[2], sig_o[3]
                for k in range(offsets[b], offsets[b + 1]):
                    v = mu_o[k] + x0 * s0[k] + x1 * s1[k] + x2 * s2[k] + x3 * s3[k]
                    if v > best:
                        best = v
            elif n == 2:
                x0, x1 = xi[m, 0], xi[m, 1]
                s0, s1 = sig_o[0], sig_o[1]
                for k in range(offsets[b], offsets[b + 1]):
                    v = mu_o[k] + x0 * s0[k] + x1 * s1[k]
                    if v > best:
                        best = v
            else:
                for k in range(offsets[b], offsets[b + 1]):
                    v = mu_o[k]
                    for i in range(n):
                        v += xi[m, i] * sig_o[i, k]
                    if v > best:
                        best = v
        total += best
    return total / m_draws


@njit(cache=True, fastmath=True)
def _norm_bucket_cap(mu, ns, norm_caps, norm_counts):
    """Upper bound on mean_m max_z (mu[z] + sig(:, z) . xi_m): each draw's
    maximum is at most the envelope max_z (mu[z] + w * ns[z]) at its norm
    quantile's cap w."""
    d = mu.shape[0]
    total = 0.0
    m_total = 0
    for b in range(norm_caps.shape[0]):
        cnt = norm_counts[b]
        if cnt == 0:
            continue
        w = norm_caps[b]
        env = -1.0e300
        for z in range(d):
            v = mu[z] + w * ns[z]
            if v > env:
                env = v
        total += cnt * env
        m_total += cnt
    return total / m_total


@njit(cache=True)
def scan_coordinate(kc, mu_c, xi, norm_caps, norm_counts, x, n_coord,
                    noise_var, loc_bonus):
    """Best candidate for coordinate ``n_coord`` of the joint decision.

    Candidate c scores the decision whose ``n_coord``-th entry is c:

        val(c) = mean_m max_z (mu_c[z] + sum_j xi[m, j] * sig_c[j, z]) + loc_bonus[c]

    with sig_c solving D(x_c) sig_c = K_c[x_c, :] against the Cholesky factor
    of the central batch covariance plus observation noise.
    ``norm_caps``/``norm_counts`` describe the draw-norm quantiles (cap of
    each bucket and its draw count), used for exact skip bounds. Returns
    (best_index, best_value) with ties broken toward the smallest index;
    skipped candidates are provably strictly below the maximum.
    """
    d = kc.shape[0]
    n = x.shape[0]
    wmax = norm_caps[0]
    lower = np.empty((n, n))
    sig_mat = np.empty((n, n))
    sig = np.empty((n, d))
    ns = np.empty(d)
    key_raw = np.empty(d)
    mu_o = np.empty(d)
    sig_o = np.empty((n, d))
    offsets = np.empty(_VALUE_BINS + 1, np.int64)
    cursor = np.empty(_VALUE_BINS, np.int64)
    nsbar = np.empty(d)
    xc = x.copy()

    # candidate-independent cap: fantasy weight norms never exceed the
    # central posterior standard deviation (Schur-complement bound)
    for z in range(d):
        v = kc[z, z]
        nsbar[z] = math.sqrt(v) if v > 0.0 else 0.0
    kbar = _norm_bucket_cap(mu_c, nsbar, norm_caps, norm_counts)
    kbar += _KEY_SLACK * (1.0 + abs(kbar))

    order = np.argsort(-loc_bonus, kind="mergesort")
    best_val = _FAIL
    best_idx = -1
    for oi in range(d):
        c = order[oi]
        if kbar + loc_bonus[c] < best_val:
            break  # later candidates have no larger bonus; none can tie
        if not _candidate_prepare(kc, xc, n_coord, c, noise_var, lower, sig_mat, sig, ns):
            continue
        kmax, kmin = _fill_keys(mu_c, ns, wmax, key_raw)
        if kmax + loc_bonus[c] < best_val:
            continue  # this candidate's coarsest cap falls short; cannot tie
        cap = _norm_bucket_cap(mu_c, ns, norm_caps, norm_counts)
        cap += _KEY_SLACK * (1.0 + abs(cap))
        if cap + loc_bonus[c] < best_val:
            continue
        val = _ordered_mean_max(mu_c, sig, xi, key_raw, kmax, kmin, mu_o, sig_o,
                                offsets, cursor) + loc_bonus[c]
        if val > best_val or (val == best_val and c < best_idx):
            best_val = val
            best_idx = c
    return best_idx, best_val


@njit(cache=True)
def local_value_table(mu, sig_rows, xi_col, wmax):
    """Per-candidate local fantasy values with the same binned early exit:
    out[c] = mean_m max_z (mu[z] + xi_col[m] * sig_rows[c, z])."""
    d = sig_rows.shape[0]
    m_draws = xi_col.shape[0]
    out = np.empty(d)
    key_raw = np.empty(d)
    mu_o = np.empty(d)
    sig_o = np.empty(d)
    offsets = np.empty(_VALUE_BINS + 1, np.int64)
    cursor = np.empty(_VALUE_BINS, np.int64)
    for c in range(d):
        kmax = -1.0e300
        kmin = 1.0e300
        for z in range(d):
            k = mu[z] + wmax * abs(sig_rows[c, z])
            k += _KEY_SLACK * (1.0 + abs(k))
            key_raw[z] = k
            if k > kmax:
                kmax = k
            if k < kmin:
                kmin = k
        width = (kmax - kmin) / _VALUE_BINS
        if width <= 0.0:
            width = 1.0
        for b in range(_VALUE_BINS + 1):
            offsets[b] = 0
        for z in range(d):
            b = int((kmax - key_raw[z]) / width)
            if b >= _VALUE_BINS:
                b = _VALUE_BINS - 1
            key_raw[z] = b
            offsets[b + 1] += 1
        for b in range(_VALUE_BINS):
            offsets[b + 1] += offsets[b]
        for b in range(_VALUE_BINS):
            cursor[b] = offsets[b]
        for z in range(d):
            b = int(key_raw[z])
            pos = cursor[b]
            cursor[b] = pos + 1
            mu_o[pos] = mu[z]
            sig_o[pos] = sig_rows[c, z]
        total = 0.0
        for m in range(m_draws):
            x = xi_col[m]
            best = -1.0e300
            for b in range(_VALUE_BINS):
                if kmax - b * width < best:
                    break
                for k in range(offsets[b], offsets[b + 1]):
                    v = mu_o[k] + x * sig_o[k]
                    if v > best:
                        best = v
            total += best
        out[c] = total / m_draws
    return out
