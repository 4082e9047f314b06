"""Independent reference computations used by the tests.

These deliberately avoid the package's own helpers: SINRs come from
explicit per-layer matrix inverses, precoders from an eigendecomposition,
percentiles from sorting.
"""

import math

import numpy as np

SE_CAP = 7.8


def crandn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)


def random_psd(rng, n, floor=0.05):
    a = crandn(rng, (n, n))
    return a @ a.conj().T + floor * np.eye(n)


def direct_inverse_sinr(g, r):
    """SINR_k = g_k^H (R + sum_{j!=k} g_j g_j^H)^-1 g_k, with an explicit inverse."""
    out = []
    for k in range(g.shape[1]):
        rk = r.astype(complex).copy()
        for j in range(g.shape[1]):
            if j != k:
                rk += np.outer(g[:, j], g[:, j].conj())
        out.append(np.real(g[:, k].conj() @ np.linalg.inv(rk) @ g[:, k]))
    return np.array(out)


def capped_se(sinr, cap=SE_CAP):
    return sum(min(math.log2(1 + s), cap) for s in sinr)


def eig_precoder(h, rank):
    w, v = np.linalg.eigh(h.conj().T @ h)
    order = np.argsort(w)[::-1]
    return v[:, order[:rank]]


def exhaustive_rank(h, r, power, cap=SE_CAP):
    best = (None, -1.0)
    for rank in range(1, min(h.shape[0], h.shape[1], 4) + 1):
        g = h @ eig_precoder(h, rank) * math.sqrt(power / rank)
        se = capped_se(direct_inverse_sinr(g, r), cap)
        if se > best[1] + 1e-12 * max(1.0, se):
            best = (rank, se)
    return best


def exhaustive_ncjt_split(h_a, h_b, r, power, cap=SE_CAP):
    best = (None, -1.0)
    for total in range(2, 5):
        for ra in range(1, total):
            rb = total - ra
            if ra > h_a.shape[1] or rb > h_b.shape[1]:
                continue
            g = np.hstack([h_a @ eig_precoder(h_a, ra) * math.sqrt(power / ra),
                           h_b @ eig_precoder(h_b, rb) * math.sqrt(power / rb)])
            se = capped_se(direct_inverse_sinr(g, r), cap)
            if se > best[1] + 1e-12 * max(1.0, se):
                best = ((ra, rb), se)
    return best


def sorted_percentile(samples, p):
    x = sorted(float(s) for s in samples)
    pos = p * (len(x) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(x) - 1)
    return x[lo] + (pos - lo) * (x[hi] - x[lo])


def covariance_by_summation(noise, terms):
    """noise * I + sum of p * (h w)(h w)^H over (h, w, p) terms, one at a time."""
    n = terms[0][0].shape[0] if terms else 4
    r = noise * np.eye(n, dtype=complex)
    for h, w, p in terms:
        hw = h @ w
        for k in range(hw.shape[1]):
            r += p * np.outer(hw[:, k], hw[:, k].conj())
    return r
