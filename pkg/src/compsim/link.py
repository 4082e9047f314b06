"""Link abstraction: SVD precoding, MMSE-IRC post-detection SINR and rank adaptation.

All transmit powers are linear (watts) and channels already include the
large-scale gain, so SINRs come out directly against the noise-plus-
interference covariance ``r_ipn``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Optional

import numpy as np

SE_CAP = 7.8  # bits/s/Hz per layer
MAX_LAYERS = 4


@dataclass(frozen=True, eq=False)
class Precoder:
    w: np.ndarray  # n_tx x rank, orthonormal columns
    rank: int


@dataclass(frozen=True, eq=False)
class LinkQuality:
    sinr_per_layer: np.ndarray
    spectral_efficiency: float
    rank: int
    split: tuple = ()  # per-TRP ranks for joint transmissions


@dataclass(eq=False)
class NcjtComposite:
    h_a: np.ndarray
    h_b: np.ndarray
    w_a: Precoder
    w_b: Precoder

    @property
    def total_rank(self) -> int:
        return self.w_a.rank + self.w_b.rank


def spectral_efficiency(sinr, se_cap: float = SE_CAP) -> float:
    """Sum over layers of min(log2(1 + SINR), se_cap)."""
    sinr = np.asarray(sinr, dtype=float)
    return float(np.minimum(np.log2(1.0 + sinr), se_cap).sum())


def max_rank_of(h: np.ndarray) -> int:
    return min(h.shape[0], h.shape[1], MAX_LAYERS)


def right_singular_vectors(h: np.ndarray) -> np.ndarray:
    """Right singular vectors of `h` as columns, by descending singular value."""
    _, _, vh = np.linalg.svd(h)
    return vh.conj().T


def svd_precoder(h: np.ndarray, rank: int) -> Precoder:
    if not 1 <= rank <= max_rank_of(h):
        raise ValueError(f"rank {rank} outside [1, {max_rank_of(h)}] for a {h.shape} channel")
    v = right_singular_vectors(h)
    return Precoder(np.ascontiguousarray(v[:, :rank]), rank)


def whitening(r_ipn: np.ndarray, check: bool = True) -> np.ndarray:
    """Inverse Cholesky factor L^-1 of a Hermitian positive-definite covariance.

    Raises ValueError if the covariance is not Hermitian positive definite.
    """
    r = np.asarray(r_ipn)
    if check and not np.allclose(r, r.conj().T, rtol=1e-10, atol=1e-12 * np.abs(r).max()):
        raise ValueError("interference covariance is not Hermitian")
    try:
        chol = np.linalg.cholesky(r)
    except np.linalg.LinAlgError as exc:
        raise ValueError("interference covariance is not positive definite") from exc
    return np.linalg.inv(chol)


def _joint_sinr(gw: np.ndarray) -> np.ndarray:
    # gw: whitened per-layer channels (n_rx x L), power included
    n = gw.shape[1]
    a = np.eye(n) + gw.conj().T @ gw
    d = np.real(np.diag(np.linalg.inv(a)))
    return np.maximum(1.0 / d - 1.0, 0.0)


def _layer_channels(h_eff, tx_power_per_layer):
    p = np.broadcast_to(np.asarray(tx_power_per_layer, dtype=float), (h_eff.shape[1],))
    return h_eff * np.sqrt(p)[None, :]


def sinr_quadratic_form(g: np.ndarray, r_ipn: np.ndarray) -> np.ndarray:
    """Per-layer g_k^H R_k^-1 g_k with R_k = r_ipn + sum_{j != k} g_j g_j^H."""
    n = g.shape[1]
    out = np.empty(n)
    total = r_ipn + g @ g.conj().T
    for k in range(n):
        gk = g[:, k]
        rk = total - np.outer(gk, gk.conj())
        out[k] = np.real(gk.conj() @ np.linalg.solve(rk, gk))
    return np.maximum(out, 0.0)


def mmse_irc_filter(g: np.ndarray, r_ipn: np.ndarray) -> np.ndarray:
    """Joint MMSE-IRC receive filter (columns are per-layer combiners)."""
    return np.linalg.solve(r_ipn + g @ g.conj().T, g)


def sinr_from_filter(g: np.ndarray, r_ipn: np.ndarray) -> np.ndarray:
    """Post-combining SINR of each layer with the explicit MMSE-IRC filter."""
    w = mmse_irc_filter(g, r_ipn)
    total = r_ipn + g @ g.conj().T
    out = np.empty(g.shape[1])
    for k in range(g.shape[1]):
        wk, gk = w[:, k], g[:, k]
        signal = abs(wk.conj() @ gk) ** 2
        rest = total - np.outer(gk, gk.conj())
        out[k] = signal / np.real(wk.conj() @ rest @ wk)
    return np.maximum(out, 0.0)


def mmse_irc_sinr(h_eff: np.ndarray, r_ipn: np.ndarray, tx_power_per_layer,
                  se_cap: float = SE_CAP, method: str = "joint") -> LinkQuality:
    """Post-MMSE-IRC SINR of every layer of a (possibly multi-TRP) transmission.

    Parameters
    ----------
    h_eff : ndarray, (n_rx, rank)
        Precoded channel, one column per layer.
    r_ipn : ndarray, (n_rx, n_rx)
        Interference-plus-noise covariance, Hermitian positive definite.
    tx_power_per_layer : float or array of length rank
    method : {"joint", "quadratic", "filter"}
        "joint" uses the identity SINR_k = 1 / [(I + G^H R^-1 G)^-1]_kk - 1,
        "quadratic" evaluates the per-layer quadratic forms directly and
        "filter" builds the explicit MMSE filter.  All three agree.
    """
    h_eff = np.atleast_2d(np.asarray(h_eff, dtype=complex))
    r_ipn = np.atleast_2d(np.asarray(r_ipn, dtype=complex))
    linv = whitening(r_ipn)
    g = _layer_channels(h_eff, tx_power_per_layer)
    if method == "joint":
        sinr = _joint_sinr(linv @ g)
    elif method == "quadratic":
        sinr = sinr_quadratic_form(g, r_ipn)
    elif method == "filter":
        sinr = sinr_from_filter(g, r_ipn)
    else:
        raise ValueError(f"unknown method {method!r}")
    return LinkQuality(sinr, spectral_efficiency(sinr, se_cap), g.shape[1])


def batch_whitening(r: np.ndarray) -> np.ndarray:
    """Inverse Cholesky factors of a stack of covariances, shape (N, n, n)."""
    return np.linalg.inv(np.linalg.cholesky(r))


def _sinr_stack(g: np.ndarray) -> np.ndarray:
    # g: (N, n_rx, L) whitened per-layer channels with power included
    gram = g.conj().swapaxes(-1, -2) @ g
    return _sinr_from_gram(gram)


def _sinr_from_gram(gram: np.ndarray) -> np.ndarray:
    n = gram.shape[-1]
    d = np.real(np.diagonal(np.linalg.inv(np.eye(n) + gram), axis1=-2, axis2=-1))
    return np.maximum(1.0 / d - 1.0, 0.0)


def batch_rank_adapt(g_full: np.ndarray, total_power: float, max_rank: int,
                     se_cap: float = SE_CAP):
    """Rank adaptation over a stack of whitened, right-rotated channels.

    Parameters
    ----------
    g_full : ndarray, (N, n_rx, n_tx)
        ``L^-1 h v`` for each link, with ``v`` the right singular vectors
        of the raw channel.

    Returns
    -------
    ranks : (N,) int
    se : (N,) float
    sinr : (N, max_rank) float, zero beyond the chosen rank
    """
    gram = g_full.conj().swapaxes(-1, -2) @ g_full
    n = g_full.shape[0]
    best_se = np.full(n, -1.0)
    best_rank = np.zeros(n, dtype=int)
    best_sinr = np.zeros((n, max_rank))
    for rank in range(1, max_rank + 1):
        sinr = _sinr_from_gram((total_power / rank) * gram[:, :rank, :rank])
        se = np.minimum(np.log2(1.0 + sinr), se_cap).sum(axis=1)
        better = se > best_se
        best_se = np.where(better, se, best_se)
        best_rank = np.where(better, rank, best_rank)
        best_sinr[better] = 0.0
        best_sinr[better, :rank] = sinr[better]
    return best_rank, best_se, best_sinr


def rank_adapt_whitened(hw: np.ndarray, v: np.ndarray, total_power: float, max_rank: int,
                        se_cap: float = SE_CAP):
    """Rank adaptation on a pre-whitened channel ``hw = L^-1 h`` with right
    singular vectors ``v`` of the raw channel ``h``."""
    ranks, se, sinr = batch_rank_adapt((hw @ v)[None], total_power, max_rank, se_cap)
    r = int(ranks[0])
    pre = Precoder(np.ascontiguousarray(v[:, :r]), r)
    return pre, LinkQuality(sinr[0, :r].copy(), float(se[0]), r)


def rank_adapt(h: np.ndarray, r_ipn: np.ndarray, total_power: float,
               max_rank: Optional[int] = None, se_cap: float = SE_CAP):
    """Pick the rank in 1..max_rank with the highest spectral efficiency.

    Power is split equally over the layers of each candidate rank and
    ties resolve to the lower rank.

    Returns
    -------
    (Precoder, LinkQuality)
    """
    cap = max_rank_of(h)
    if max_rank is None:
        max_rank = cap
    if not 1 <= max_rank <= cap:
        raise ValueError(f"max_rank {max_rank} outside [1, {cap}]")
    linv = whitening(np.asarray(r_ipn, dtype=complex))
    return rank_adapt_whitened(linv @ h, right_singular_vectors(h), total_power, max_rank, se_cap)


def _split_powers(total_power_per_trp):
    if np.ndim(total_power_per_trp) == 0:
        return float(total_power_per_trp), float(total_power_per_trp)
    pa, pb = total_power_per_trp
    return float(pa), float(pb)


def ncjt_link_quality(composite: NcjtComposite, r_ipn: np.ndarray, total_power_per_trp,
                      se_cap: float = SE_CAP) -> LinkQuality:
    """Joint reception of distinct layers from two TRPs.

    Each TRP spreads its own power budget over its own layers; the partner
    TRP's layers are desired signal, not interference.
    """
    ra, rb = composite.w_a.rank, composite.w_b.rank
    n_rx = composite.h_a.shape[0]
    if ra + rb > min(MAX_LAYERS, n_rx):
        raise ValueError(f"total rank {ra + rb} exceeds {min(MAX_LAYERS, n_rx)}")
    pa, pb = _split_powers(total_power_per_trp)
    h_eff = np.hstack([composite.h_a @ composite.w_a.w, composite.h_b @ composite.w_b.w])
    powers = np.concatenate([np.full(ra, pa / ra), np.full(rb, pb / rb)])
    lq = mmse_irc_sinr(h_eff, r_ipn, powers, se_cap)
    return LinkQuality(lq.sinr_per_layer, lq.spectral_efficiency, ra + rb, (ra, rb))


def ncjt_splits(n_tx_a: int, n_tx_b: int, n_rx: int):
    """All (rank_a, rank_b) with each >= 1 and total <= min(4, n_rx),
    ordered by total rank, then rank_a."""
    limit = min(MAX_LAYERS, n_rx)
    splits = [(a, b) for a, b in product(range(1, min(n_tx_a, MAX_LAYERS) + 1),
                                         range(1, min(n_tx_b, MAX_LAYERS) + 1))
              if a + b <= limit]
    return sorted(splits, key=lambda s: (s[0] + s[1], s[0]))


def batch_best_ncjt(ga_full: np.ndarray, gb_full: np.ndarray, power_a: float, power_b: float,
                    se_cap: float = SE_CAP):
    """Best NC-JT rank split for a stack of whitened, right-rotated channel pairs.

    Returns (rank_a, rank_b, se, sinr) arrays; ties go to the earlier split
    in `ncjt_splits` order.
    """
    n, n_rx, nta = ga_full.shape
    splits = ncjt_splits(nta, gb_full.shape[2], n_rx)
    width = max(a + b for a, b in splits)
    best_se = np.full(n, -1.0)
    best_a = np.zeros(n, dtype=int)
    best_b = np.zeros(n, dtype=int)
    best_sinr = np.zeros((n, width))
    for ra, rb in splits:
        g = np.concatenate([ga_full[:, :, :ra] * np.sqrt(power_a / ra),
                            gb_full[:, :, :rb] * np.sqrt(power_b / rb)], axis=2)
        sinr = _sinr_stack(g)
        se = np.minimum(np.log2(1.0 + sinr), se_cap).sum(axis=1)
        better = se > best_se
        best_se = np.where(better, se, best_se)
        best_a = np.where(better, ra, best_a)
        best_b = np.where(better, rb, best_b)
        best_sinr[better] = 0.0
        best_sinr[better, :ra + rb] = sinr[better]
    return best_a, best_b, best_se, best_sinr


def best_ncjt_whitened(hw_a, v_a, hw_b, v_b, power_a, power_b, se_cap=SE_CAP):
    """Exhaustive NC-JT rank split on pre-whitened channels.

    Returns (rank_a, rank_b, LinkQuality); ties go to the earlier split in
    `ncjt_splits` order.
    """
    ra, rb, se, sinr = batch_best_ncjt((hw_a @ v_a)[None], (hw_b @ v_b)[None],
                                       power_a, power_b, se_cap)
    ra, rb = int(ra[0]), int(rb[0])
    return ra, rb, LinkQuality(sinr[0, :ra + rb].copy(), float(se[0]), ra + rb, (ra, rb))


def best_ncjt(h_a: np.ndarray, h_b: np.ndarray, r_ipn: np.ndarray, total_power_per_trp,
              se_cap: float = SE_CAP):
    """NC-JT with per-TRP SVD precoders and the best rank split.

    Returns
    -------
    (NcjtComposite, LinkQuality)
    """
    pa, pb = _split_powers(total_power_per_trp)
    linv = whitening(np.asarray(r_ipn, dtype=complex))
    v_a, v_b = right_singular_vectors(h_a), right_singular_vectors(h_b)
    ra, rb, lq = best_ncjt_whitened(linv @ h_a, v_a, linv @ h_b, v_b, pa, pb, se_cap)
    comp = NcjtComposite(h_a, h_b, Precoder(v_a[:, :ra].copy(), ra), Precoder(v_b[:, :rb].copy(), rb))
    return comp, lq
