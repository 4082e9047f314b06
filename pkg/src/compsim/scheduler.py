"""Proportional-fair scheduling: per-TRP baseline and joint per-cluster DPS / NC-JT.

A joint cluster scheduler enumerates scheduling hypotheses (which UE, if
any, each TRP serves, and whether two TRPs jointly serve one UE) and picks
the one with the largest sum of PF metrics.  Blanking a TRP is just another
hypothesis, so dynamic point blanking falls out of the selection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations, product
from typing import Callable, Dict, Mapping, Optional, Sequence

import numpy as np

from . import link
from .link import LinkQuality, Precoder, SE_CAP


class SchemeMode(str, Enum):
    BASELINE = "baseline"
    DPS = "dps"
    NCJT = "ncjt"


@dataclass(frozen=True, eq=False)
class TrpAssignment:
    ue_id: int
    precoder: Precoder

    @property
    def rank(self) -> int:
        return self.precoder.rank


@dataclass(eq=False)
class SchedulingHypothesis:
    trps: tuple
    assignments: tuple  # TrpAssignment or None (blank), aligned with `trps`
    mode_tag: str
    pf_value: float
    rates: dict = field(default_factory=dict)  # ue_id -> estimated rate, bits/s
    quality: dict = field(default_factory=dict)  # ue_id -> LinkQuality

    @property
    def n_transmitting(self) -> int:
        return sum(a is not None for a in self.assignments)

    def served(self) -> dict:
        """ue_id -> list of (trp_id, Precoder)."""
        out: Dict[int, list] = {}
        for t, a in zip(self.trps, self.assignments):
            if a is not None:
                out.setdefault(a.ue_id, []).append((t, a.precoder))
        return out

    def key(self) -> tuple:
        slots = tuple(None if a is None else (a.ue_id, a.rank) for a in self.assignments)
        return (self.mode_tag, self.trps, slots, self.pf_value)


@dataclass
class PfState:
    beta: float = 0.01
    floor: float = 1e3
    init: float = 1e3
    avg: dict = field(default_factory=dict)

    def add(self, ue_id: int, value: Optional[float] = None) -> None:
        self.avg[ue_id] = max(self.init if value is None else value, self.floor)

    def remove(self, ue_id: int) -> None:
        self.avg.pop(ue_id, None)


def pf_metric(instantaneous_rate: float, avg_throughput: float) -> float:
    if avg_throughput <= 0:
        raise ValueError("average throughput must be positive")
    return instantaneous_rate / avg_throughput


def update_pf(state: PfState, served_rate_per_ue: Mapping[int, float],
              beta: Optional[float] = None) -> PfState:
    """Exponential averaging of served rate; unserved UEs count as rate 0."""
    beta = state.beta if beta is None else beta
    if not 0.0 < beta < 1.0:
        raise ValueError("forgetting factor must lie in (0, 1)")
    for ue, avg in state.avg.items():
        r = served_rate_per_ue.get(ue, 0.0)
        state.avg[ue] = max((1.0 - beta) * avg + beta * r, state.floor)
    return state


def select_hypothesis(hypotheses: Sequence[SchedulingHypothesis]) -> SchedulingHypothesis:
    """Largest PF sum; ties prefer fewer transmitting TRPs, then the earliest hypothesis."""
    if not hypotheses:
        raise ValueError("no scheduling hypotheses")
    best_i = min(range(len(hypotheses)),
                 key=lambda i: (-hypotheses[i].pf_value, hypotheses[i].n_transmitting, i))
    return hypotheses[best_i]


class LinkContext:
    """Per-TTI link inputs of one cluster, with memoised link evaluations.

    Link evaluations are computed in batches: `prefetch` collects every
    missing (link, interferer set) combination and evaluates them with one
    stacked linear-algebra call per step.  `single` and `joint` then only
    read the cache (computing on the fly if something was not prefetched).

    Parameters
    ----------
    channels : mapping (trp_id, ue_id) -> ndarray (n_rx, n_tx)
        Channel from a TRP to a UE when the TRP beams at that UE.
    r_ipn : mapping ue_id -> ndarray (n_rx, n_rx)
        Estimated covariance of noise plus interference from outside the
        cluster.
    power : float
        Transmit power of each TRP, watts.
    bandwidth_hz : float
    cross_channel : callable (trp, served_ue, victim_ue) -> ndarray, optional
        Channel from `trp` to `victim_ue` while `trp` beams at `served_ue`.
        Defaults to ``channels[(trp, victim_ue)]``.
    """

    def __init__(self, channels, r_ipn, power, bandwidth_hz, se_cap=SE_CAP,
                 cross_channel: Optional[Callable] = None):
        self.channels = channels
        self.r_ipn = r_ipn
        self.power = power
        self.bandwidth_hz = bandwidth_hz
        self.se_cap = se_cap
        self._cross = cross_channel
        self._v = {}
        self._linv = {}
        self._contrib = {}
        self._single = {}
        self._joint = {}

    def cross(self, trp, served_ue, victim_ue):
        if self._cross is None:
            return self.channels[(trp, victim_ue)]
        return self._cross(trp, served_ue, victim_ue)

    def right_vectors(self, trp, ue):
        key = (trp, ue)
        if key not in self._v:
            self._prefetch_vectors([key])
        return self._v[key]

    def _prefetch_vectors(self, pairs):
        missing = list(dict.fromkeys(k for k in pairs if k not in self._v))
        if not missing:
            return
        _, _, vh = np.linalg.svd(np.array([self.channels[k] for k in missing]))
        v = vh.conj().swapaxes(-1, -2)
        for k, vk in zip(missing, v):
            self._v[k] = vk

    def _interference(self, t, v, ue):
        key = (t, v, ue)
        c = self._contrib.get(key)
        if c is None:
            pre = self.standalone(t, v)[0]
            hg = self.cross(t, v, ue) @ pre.w
            c = self._contrib[key] = (self.power / pre.rank) * (hg @ hg.conj().T)
        return c

    def _prefetch_whiteners(self, keys):
        missing = list(dict.fromkeys(k for k in keys if k not in self._linv))
        if not missing:
            return
        # standalone precoders of every interferer are needed first
        pairs = {(t, v) for _, intf in missing for t, v in intf}
        self._prefetch_single([(t, v, ()) for t, v in sorted(pairs)])
        base = np.array([self.r_ipn[ue] for ue, _ in missing], dtype=complex)
        terms = sorted({(t, v, ue) for ue, intf in missing for t, v in intf})
        if terms:
            pos = {k: i for i, k in enumerate(terms)}
            contrib = np.array([self._interference(*k) for k in terms])
            rows = [i for i, (ue, intf) in enumerate(missing) for _ in intf]
            cols = [pos[(t, v, ue)] for ue, intf in missing for t, v in intf]
            np.add.at(base, rows, contrib[cols])
        linv = link.batch_whitening(base)
        for k, l in zip(missing, linv):
            self._linv[k] = l

    def _whitener(self, ue, interferers):
        key = (ue, interferers)
        if key not in self._linv:
            self._prefetch_whiteners([key])
        return self._linv[key]

    def _prefetch_single(self, keys):
        missing = list(dict.fromkeys(k for k in keys if k not in self._single))
        if not missing:
            return
        self._prefetch_vectors([(t, u) for t, u, _ in missing])
        standalone_first = [k for k in missing if not k[2]]
        rest = [k for k in missing if k[2]]
        for group in (standalone_first, rest):
            if not group:
                continue
            self._prefetch_whiteners([(u, intf) for _, u, intf in group])
            linv = np.array([self._linv[(u, intf)] for _, u, intf in group])
            h = np.array([self.channels[(t, u)] for t, u, _ in group])
            v = np.array([self._v[(t, u)] for t, u, _ in group])
            max_rank = link.max_rank_of(h[0])
            ranks, se, sinr = link.batch_rank_adapt(linv @ h @ v, self.power, max_rank,
                                                    self.se_cap)
            for i, key in enumerate(group):
                r = int(ranks[i])
                self._single[key] = (Precoder(v[i, :, :r], r),
                                     LinkQuality(sinr[i, :r], float(se[i]), r))

    def _prefetch_joint(self, keys):
        missing = list(dict.fromkeys(k for k in keys if k not in self._joint))
        if not missing:
            return
        self._prefetch_vectors([(t, u) for a, b, u, _ in missing for t in (a, b)])
        self._prefetch_whiteners([(u, intf) for _, _, u, intf in missing])
        linv = np.array([self._linv[(u, intf)] for _, _, u, intf in missing])
        ha = np.array([self.channels[(a, u)] for a, _, u, _ in missing])
        hb = np.array([self.channels[(b, u)] for _, b, u, _ in missing])
        va = np.array([self._v[(a, u)] for a, _, u, _ in missing])
        vb = np.array([self._v[(b, u)] for _, b, u, _ in missing])
        ra, rb, se, sinr = link.batch_best_ncjt(linv @ ha @ va, linv @ hb @ vb, self.power,
                                                self.power, self.se_cap)
        for i, key in enumerate(missing):
            a_, b_ = int(ra[i]), int(rb[i])
            self._joint[key] = (Precoder(va[i, :, :a_], a_), Precoder(vb[i, :, :b_], b_),
                                LinkQuality(sinr[i, :a_ + b_], float(se[i]), a_ + b_, (a_, b_)))

    def prefetch(self, single_keys=(), joint_keys=()):
        """Evaluate the given single-TRP and joint links in batches."""
        self._prefetch_single(single_keys)
        self._prefetch_joint(joint_keys)

    def single(self, trp, ue, interferers=()):
        """Rank-adapted single-TRP link; interferers are (trp, ue) pairs in
        the cluster, modelled with their standalone precoders."""
        key = (trp, ue, interferers)
        if key not in self._single:
            self._prefetch_single([key])
        return self._single[key]

    def standalone(self, trp, ue):
        return self.single(trp, ue, ())

    def joint(self, trp_a, trp_b, ue, interferers=()):
        key = (trp_a, trp_b, ue, interferers)
        if key not in self._joint:
            self._prefetch_joint([key])
        return self._joint[key]

    def rate(self, lq: LinkQuality) -> float:
        return lq.spectral_efficiency * self.bandwidth_hz


def _interferers(slots, exclude):
    return tuple(sorted((t, u) for t, u in slots if u is not None and t not in exclude))


def _candidates(trps, active_ues, ctx: LinkContext, pf_avg, top_k):
    cands = {}
    for t in trps:
        scored = []
        for u in active_ues:
            lq = ctx.standalone(t, u)[1]
            scored.append((-pf_metric(ctx.rate(lq), pf_avg[u]), u))
        scored.sort()
        keep = scored if top_k is None else scored[:top_k]
        cands[t] = sorted(u for _, u in keep)
    return cands


def enumerate_hypotheses(cluster, active_ues: Sequence[int], ctx: LinkContext,
                         pf_avg: Mapping[int, float], mode: SchemeMode = SchemeMode.DPS,
                         top_k: Optional[int] = 4, third_trp: bool = True) -> list:
    """All joint scheduling hypotheses of one cluster for one TTI.

    The DPS hypotheses (each TRP blank or serving a distinct UE) come
    first, in the same order for both modes; NC-JT mode appends two-TRP
    joint transmissions, with any remaining cluster TRP blank or serving a
    different UE (unless `third_trp` is False).
    """
    mode = SchemeMode(mode)
    if mode is SchemeMode.BASELINE:
        raise ValueError("the baseline is scheduled per TRP, not per cluster")
    trps = tuple(cluster.member_trps)
    active_ues = sorted(active_ues)
    ctx.prefetch([(t, u, ()) for t in trps for u in active_ues])
    cands = _candidates(trps, active_ues, ctx, pf_avg, top_k)

    dps_slots = []
    for combo in product(*[[None] + cands[t] for t in trps]):
        ues = [u for u in combo if u is not None]
        if len(set(ues)) == len(ues):
            dps_slots.append(tuple(zip(trps, combo)))
    dps_keys = [[(t, u, _interferers(slots, (t,))) if u is not None else None
                 for t, u in slots] for slots in dps_slots]
    single_keys = [k for keys in dps_keys for k in keys if k is not None]

    joint_cases, joint_keys = [], []
    if mode is SchemeMode.NCJT:
        for a, b in combinations(trps, 2):
            others = [t for t in trps if t not in (a, b)]
            for u in sorted(set(cands[a]) | set(cands[b])):
                if third_trp:
                    other_opts = [[None] + [v for v in cands[t] if v != u] for t in others]
                else:
                    other_opts = [[None] for _ in others]
                for combo in product(*other_opts):
                    slots = tuple(zip(others, combo))
                    jkey = (a, b, u, _interferers(slots, ()))
                    skeys = [(t, v, tuple(sorted(_interferers(slots, (t,)) + ((a, u), (b, u)))))
                             for t, v in slots if v is not None]
                    joint_cases.append((a, b, u, jkey, skeys))
                    joint_keys.append(jkey)
                    single_keys.extend(skeys)
    ctx.prefetch(single_keys, joint_keys)

    out = []
    single = ctx._single
    for keys in dps_keys:
        assignments, rates, quality, pf = [], {}, {}, 0.0
        for key in keys:
            if key is None:
                assignments.append(None)
                continue
            u = key[1]
            pre, lq = single[key]
            assignments.append(TrpAssignment(u, pre))
            rates[u] = ctx.rate(lq)
            quality[u] = lq
            pf += pf_metric(rates[u], pf_avg[u])
        out.append(SchedulingHypothesis(trps, tuple(assignments), "dps", pf, rates, quality))

    for a, b, u, jkey, skeys in joint_cases:
        pa, pb, lq = ctx._joint[jkey]
        rates = {u: ctx.rate(lq)}
        quality = {u: lq}
        pf = pf_metric(rates[u], pf_avg[u])
        by_trp = {a: TrpAssignment(u, pa), b: TrpAssignment(u, pb)}
        for key in skeys:
            t, v = key[0], key[1]
            pre, lq_v = single[key]
            by_trp[t] = TrpAssignment(v, pre)
            rates[v] = ctx.rate(lq_v)
            quality[v] = lq_v
            pf += pf_metric(rates[v], pf_avg[v])
        assignments = tuple(by_trp.get(t) for t in trps)
        out.append(SchedulingHypothesis(trps, assignments, "ncjt", pf, rates, quality))
    return out


def baseline_schedule(trp: int, attached_ues: Sequence[int], ctx: LinkContext,
                      pf_avg: Mapping[int, float]):
    """Independent PF decision of one TRP over the UEs attached to it.

    Returns ``(TrpAssignment, LinkQuality, pf_value)`` or ``None`` for a
    blank TRP.  Ties go to the lowest UE id.
    """
    best = None
    for u in sorted(attached_ues):
        pre, lq = ctx.standalone(trp, u)
        m = pf_metric(ctx.rate(lq), pf_avg[u])
        if best is None or m > best[2]:
            best = (TrpAssignment(u, pre), lq, m)
    if best is None or best[2] <= 0.0:
        return None
    return best
