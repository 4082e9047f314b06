"""TTI-driven system simulation, RU accounting and load calibration."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import link
from .channel import LinkBank, compute_large_scale, select_beams
from .config import SimConfig, digest
from .metrics import RunSummary, summarize
from .scenario import Layout, Ue, associate_cluster, build_layout, drop_ue, ue_panel
from .scheduler import (LinkContext, PfState, SchemeMode, baseline_schedule, enumerate_hypotheses,
                        select_hypothesis, update_pf)
from .traffic import FileTransfer, generate_arrivals, record_delivery, upt

log = logging.getLogger(__name__)

ARRIVAL_BLOCK = 4096


class UnderRunError(RuntimeError):
    """No transfer completed inside the measurement window."""


class CalibrationError(RuntimeError):
    pass


@dataclass
class Transmission:
    trp: int
    ue: int
    precoder: link.Precoder
    power_per_layer: float
    beam: Optional[int] = None
    mode_tag: str = "baseline"
    pf_value: float = 0.0

    @property
    def rank(self) -> int:
        return self.precoder.rank

    def tx_covariance(self) -> np.ndarray:
        w = self.precoder.w
        return self.power_per_layer * (w @ w.conj().T)


def build_interference_covariance(bank: LinkBank, transmitting_set: Sequence[Transmission],
                                  noise_power: float, exclude=()) -> np.ndarray:
    """noise * I + sum_i p_i (H_i W_i)(H_i W_i)^H over the interfering transmissions.

    `exclude` holds TRP ids whose transmissions are not interference for
    this UE (its own serving TRPs, or its cluster when the cluster
    scheduler accounts for them itself).
    """
    n_rx = bank.shape[1]
    r = noise_power * np.eye(n_rx, dtype=complex)
    txs = [tx for tx in transmitting_set if tx.trp not in exclude]
    if not txs:
        return r
    idx = np.array([tx.trp for tx in txs])
    h = bank.h[idx]
    if bank.beams is not None:
        beams = np.array([tx.beam for tx in txs])
        scale = np.sqrt(bank.trp_beam_gain[idx, beams] / bank.trp_beam_gain[idx, bank.sel_beam[idx]])
        h = h * scale[:, None, None]
    q = np.array([tx.tx_covariance() for tx in txs])
    r += np.einsum("irk,ikl,isl->rs", h, q, h.conj())
    return r


@dataclass
class _UeState:
    ue: Ue
    bank: LinkBank
    transfer: FileTransfer
    born: int
    measured: bool


@dataclass
class RunResult:
    summary: RunSummary
    transfers: list  # (ue_id, arrival_tti, completion_tti, upt_bps, serving_cluster, scheme)
    schedule_log: list  # (tti, cluster, trp, ue, mode_tag, rank, pf_value)
    delivered_bits: int
    completed_bits: int
    inflight_delivered_bits: int
    n_incomplete: int
    ttis: int
    config_digest: str

    @property
    def conserved(self) -> bool:
        return self.delivered_bits == self.completed_bits + self.inflight_delivered_bits


class Simulation:
    """One seeded simulation run.

    Randomness is split into independent streams: one for the arrival
    process and one per UE (drop, large-scale state, beams, fading), so UE
    number k sees the same radio conditions under every scheme.
    """

    def __init__(self, config: SimConfig, seed: int):
        self.cfg = config
        self.seed = int(seed)
        self.kind = config.scenario
        self.scheme = config.scheme
        self.layout: Layout = build_layout(self.kind, config.scale, config.n_tx, config.layout)
        self.n_trps = self.layout.n_trps
        self.trp_cluster = np.array([t.cluster_id for t in self.layout.trps])
        self.noise = config.noise_power_w
        self.power = config.tx_power_w
        self.panel = ue_panel(self.kind)
        root = np.random.SeedSequence(self.seed)
        self.arrival_rng = np.random.default_rng(root.spawn(1)[0])
        self._arrivals = np.zeros(0, dtype=np.int64)
        self._arrival_offset = 0
        self.ues: dict = {}
        self.next_ue_id = 0
        self.pf = PfState(config.pf_beta, config.pf_floor_bps, config.pf_init_bps)
        self.prev_tx: list = []
        self.busy = np.zeros(self.n_trps, dtype=np.int64)
        self.ru_ttis = 0
        self.delivered_bits = 0
        self.completed_bits = 0
        self.records: list = []
        self.schedule_log: list = []
        self.n_measured_arrivals = 0
        self.measuring = False
        self.wrap_offsets = self._wrap_offsets()

    # -- construction helpers ------------------------------------------------

    def _wrap_offsets(self):
        if self.kind.is_indoor or not self.cfg.layout.wraparound:
            return None
        n_sites = len(self.layout.clusters)
        rings = {7: 1, 19: 2}.get(n_sites)
        if rings is None:
            return None
        isd = self.cfg.layout.du_isd_m
        q, r = 2 * rings + 1, -rings
        offsets = [np.zeros(2)]
        x, y = isd * (q + r / 2.0), isd * math.sqrt(3) / 2.0 * r
        for k in range(6):
            a = math.radians(60 * k)
            offsets.append(np.array([x * math.cos(a) - y * math.sin(a),
                                     x * math.sin(a) + y * math.cos(a)]))
        return np.array(offsets)

    def _image(self, trp, ue_pos):
        if self.wrap_offsets is None:
            return trp
        tp = np.asarray(trp.position, dtype=float)
        cands = tp[None, :2] + self.wrap_offsets
        best = cands[np.argmin(np.linalg.norm(cands - ue_pos[None, :2], axis=1))]
        from dataclasses import replace
        return replace(trp, position=(float(best[0]), float(best[1]), tp[2]))

    def _arrivals_at(self, tti: int) -> int:
        if self.cfg.lambda_per_s <= 0:
            return 0
        while tti - self._arrival_offset >= len(self._arrivals):
            self._arrival_offset += len(self._arrivals)
            self._arrivals = generate_arrivals(self.cfg.lambda_per_s, self.cfg.tti_s,
                                               self.arrival_rng, ARRIVAL_BLOCK)
        return int(self._arrivals[tti - self._arrival_offset])

    def _spawn(self, tti: int) -> None:
        uid = self.next_ue_id
        self.next_ue_id += 1
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(1, uid)))
        pos = drop_ue(self.kind, rng, self.layout.area)
        facing = float(rng.uniform(0.0, 360.0)) if self.kind.is_mmwave else 0.0
        ue = Ue(uid, pos, self.panel, facing_deg=facing)
        trps = [self._image(t, pos) for t in self.layout.trps]
        ls = [compute_large_scale(self.kind, t, pos, rng, self.cfg.channel) for t in trps]
        beams = None
        if self.kind.is_mmwave:
            beams = [select_beams(self.kind, t, ue, params=self.cfg.channel) for t in trps]
        bank = LinkBank(ls, self.panel.total_rx_ports, self.cfg.n_tx, self.cfg.channel, rng,
                        beams, self.panel.rx_ports_per_beam)
        ue.attached_trp = int(np.argmax(bank.coupling_db))
        ue.cluster_id = associate_cluster(ue, self.layout.trps, bank.coupling_db)
        transfer = FileTransfer(uid, tti)
        ue.active_transfer = transfer
        self.ues[uid] = _UeState(ue, bank, transfer, tti, self.measuring)
        if self.measuring:
            self.n_measured_arrivals += 1
        self.pf.add(uid)

    # -- per-TTI pieces ------------------------------------------------------

    def _covariances(self, uids, txs, keep) -> np.ndarray:
        """Interference-plus-noise covariances of many UEs at once.

        keep[i, j] says whether transmission j interferes at UE uids[i];
        the result matches `build_interference_covariance` UE by UE.
        """
        n_rx = self.panel.total_rx_ports
        r = np.broadcast_to(self.noise * np.eye(n_rx, dtype=complex),
                            (len(uids), n_rx, n_rx)).copy()
        if not txs or not keep.any():
            return r
        idx = np.array([tx.trp for tx in txs])
        banks = [self.ues[u].bank for u in uids]
        h = np.stack([b.h[idx] for b in banks])  # (U, n, nr, nt)
        weight = keep.astype(float)
        if self.kind.is_mmwave:
            beams = np.array([tx.beam for tx in txs])
            weight = weight * np.stack([b.trp_beam_gain[idx, beams]
                                        / b.trp_beam_gain[idx, b.sel_beam[idx]] for b in banks])
        q = np.stack([tx.tx_covariance() for tx in txs])
        hq = (h @ q) * weight[:, :, None, None]
        r += (hq @ h.conj().swapaxes(-1, -2)).sum(axis=1)
        return r

    def _estimates(self) -> dict:
        """Covariance estimates from the previous TTI's transmissions, excluding
        the TRPs the UE's own scheduler accounts for."""
        uids = list(self.ues)
        txs = self.prev_tx
        if not txs:
            eye = self.noise * np.eye(self.panel.total_rx_ports, dtype=complex)
            return {u: eye for u in uids}
        tx_trp = np.array([tx.trp for tx in txs])
        if self.scheme is SchemeMode.BASELINE:
            own = np.array([self.ues[u].ue.attached_trp for u in uids])
            keep = tx_trp[None, :] != own[:, None]
        else:
            own = np.array([self.ues[u].ue.cluster_id for u in uids])
            keep = self.trp_cluster[tx_trp][None, :] != own[:, None]
        r = self._covariances(uids, txs, keep)
        return dict(zip(uids, r))

    def _cross(self, trp, served, victim):
        bank = self.ues[victim].bank
        return bank.channel(trp, int(self.ues[served].bank.sel_beam[trp]))

    def _beam(self, trp, ue):
        bank = self.ues[ue].bank
        return None if bank.beams is None else int(bank.sel_beam[trp])

    def _schedule_baseline(self, r_est, tti):
        by_trp: dict = {}
        for uid, st in self.ues.items():
            by_trp.setdefault(st.ue.attached_trp, []).append(uid)
        channels = {(t, u): self.ues[u].bank.h[t] for t, ues in by_trp.items() for u in ues}
        ctx = LinkContext(channels, r_est, self.power, self.cfg.bandwidth_hz, self.cfg.se_cap)
        ctx.prefetch([(t, u, ()) for t, u in channels])
        txs = []
        for t in sorted(by_trp):
            res = baseline_schedule(t, by_trp[t], ctx, self.pf.avg)
            if res is None:
                continue
            assignment, _, pf = res
            txs.append(Transmission(t, assignment.ue_id, assignment.precoder,
                                    self.power / assignment.rank, self._beam(t, assignment.ue_id),
                                    "baseline", pf))
        return txs

    def _schedule_joint(self, r_est, tti):
        by_cluster: dict = {}
        for uid, st in self.ues.items():
            by_cluster.setdefault(st.ue.cluster_id, []).append(uid)
        cross = self._cross if self.kind.is_mmwave else None
        txs = []
        for cid in sorted(by_cluster):
            cluster = self.layout.clusters[cid]
            ues = by_cluster[cid]
            channels = {(t, u): self.ues[u].bank.h[t] for t in cluster.member_trps for u in ues}
            ctx = LinkContext(channels, r_est, self.power, self.cfg.bandwidth_hz,
                              self.cfg.se_cap, cross)
            hyps = enumerate_hypotheses(cluster, ues, ctx, self.pf.avg, self.scheme,
                                        self.cfg.top_k, self.cfg.third_trp_with_ncjt)
            best = select_hypothesis(hyps)
            for t, a in zip(best.trps, best.assignments):
                if a is None:
                    continue
                txs.append(Transmission(t, a.ue_id, a.precoder, self.power / a.rank,
                                        self._beam(t, a.ue_id), best.mode_tag, best.pf_value))
        return txs

    def _realize(self, txs):
        """Realized spectral efficiency of every served UE under the actual transmissions."""
        served: dict = {}
        for j, tx in enumerate(txs):
            served.setdefault(tx.ue, []).append(j)
        if not served:
            return {}
        uids = list(served)
        keep = np.ones((len(uids), len(txs)), dtype=bool)
        for i, u in enumerate(uids):
            keep[i, served[u]] = False
        linv = link.batch_whitening(self._covariances(uids, txs, keep))
        out = {}
        for i, u in enumerate(uids):
            h = self.ues[u].bank.h
            g = np.hstack([h[txs[j].trp] @ txs[j].precoder.w * math.sqrt(txs[j].power_per_layer)
                           for j in served[u]])
            sinr = link._joint_sinr(linv[i] @ g)
            out[u] = link.spectral_efficiency(sinr, self.cfg.se_cap)
        return out

    def step(self, tti: int) -> None:
        for _ in range(self._arrivals_at(tti)):
            self._spawn(tti)
        if self.measuring:
            self.ru_ttis += 1
        if not self.ues:
            self.prev_tx = []
            return
        for st in self.ues.values():
            if st.born < tti:
                st.bank.evolve()
        r_est = self._estimates()
        if self.scheme is SchemeMode.BASELINE:
            txs = self._schedule_baseline(r_est, tti)
        else:
            txs = self._schedule_joint(r_est, tti)
        se = self._realize(txs)

        rates = {}
        bits_per_se = self.cfg.bandwidth_hz * self.cfg.tti_s
        for uid, s in se.items():
            rates[uid] = s * self.cfg.bandwidth_hz
            st = self.ues[uid]
            bits = int(math.floor(s * bits_per_se))
            useful = min(bits, st.transfer.remaining_bits)
            record_delivery(st.transfer, bits, tti)
            self.delivered_bits += useful
        update_pf(self.pf, rates)
        if self.measuring:
            for tx in txs:
                self.busy[tx.trp] += 1
        if self.cfg.log_schedule:
            for tx in txs:
                self.schedule_log.append((tti, int(self.trp_cluster[tx.trp]), tx.trp, tx.ue,
                                          tx.mode_tag, tx.rank, tx.pf_value))
        for uid in list(se):
            st = self.ues[uid]
            if st.transfer.completed:
                self.completed_bits += st.transfer.size_bits
                if st.measured:
                    self.records.append((uid, st.transfer.arrival_tti, st.transfer.completion_tti,
                                         upt(st.transfer, self.cfg.tti_s), st.ue.cluster_id,
                                         self.scheme.value))
                del self.ues[uid]
                self.pf.remove(uid)
        self.prev_tx = txs

    # -- full run ------------------------------------------------------------

    def run(self, require_samples: bool = True) -> RunResult:
        cfg = self.cfg
        tti = 0
        for tti in range(cfg.warmup_ttis):
            self.step(tti)
        start = cfg.warmup_ttis
        end = start + cfg.measure_ttis
        cap = start + max(cfg.max_measure_ttis, cfg.measure_ttis)
        self.measuring = True
        tti = start
        while True:
            if tti >= end:
                if self.n_measured_arrivals >= cfg.min_transfers or tti >= cap:
                    break
            self.step(tti)
            tti += 1
        self.measuring = False
        drain_end = tti + cfg.max_drain_ttis
        while tti < drain_end and any(st.measured for st in self.ues.values()):
            self.step(tti)
            tti += 1
        n_incomplete = sum(st.measured for st in self.ues.values())
        if require_samples and not self.records:
            raise UnderRunError(
                f"no completed transfers in the measurement window "
                f"(lambda={cfg.lambda_per_s}, seed={self.seed})")
        samples = [r[3] for r in self.records]
        summary = summarize(samples, self.kind.value, self.scheme.value, cfg.n_tx,
                            int(self.busy.sum()), self.n_trps * self.ru_ttis,
                            seed=self.seed, lambda_per_s=cfg.lambda_per_s)
        inflight = sum(st.transfer.delivered_bits for st in self.ues.values())
        return RunResult(summary, list(self.records), list(self.schedule_log),
                         self.delivered_bits, self.completed_bits, inflight, n_incomplete,
                         tti, digest(cfg))


def run(config: SimConfig, seed: int, require_samples: bool = True) -> RunResult:
    return Simulation(config, seed).run(require_samples)


def _run_job(args):
    config, seed, require = args
    return run(config, seed, require)


def run_many(config: SimConfig, seeds: Sequence[int], workers: int = 1,
             require_samples: bool = True) -> list:
    """Independent runs over seeds, optionally in worker processes.

    Results come back in seed order and do not depend on `workers`.
    """
    jobs = [(config, s, require_samples) for s in seeds]
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


# ---------------------------------------------------------------------------
# load calibration

@dataclass
class CalibrationResult:
    lambda_per_s: float
    achieved_ru: float
    target_ru: float
    seeds: tuple
    history: list = field(default_factory=list)


def baseline_ru(config: SimConfig, lambda_per_s: float, seeds: Sequence[int],
                workers: int = 1) -> float:
    cfg = config.with_(scheme=SchemeMode.BASELINE, lambda_per_s=lambda_per_s, log_schedule=False)
    results = run_many(cfg, seeds, workers, require_samples=False)
    busy = sum(r.summary.busy_trp_ttis for r in results)
    total = sum(r.summary.trp_ttis for r in results)
    return busy / total if total else 0.0


def calibrate_ru(config: SimConfig, target_ru: float, tolerance: float = 0.01,
                 seeds: Sequence[int] = (1, 2, 3), lambda_guess: Optional[float] = None,
                 max_expansions: int = 12, max_iterations: int = 30,
                 workers: int = 1) -> CalibrationResult:
    """Arrival rate at which the baseline scheme reaches `target_ru`.

    A bracket [lo, hi] is grown (proportionally to the RU shortfall, by
    at most 4x per step) until RU(hi) exceeds the target and then
    shrunk with interpolation steps, falling back to plain bisection every
    third step, until the pooled RU over `seeds` is within `tolerance`.
    """
    if not 0.0 < target_ru <= 0.7:
        raise ValueError(f"target RU must lie in (0, 0.7], got {target_ru}")
    seeds = tuple(seeds)
    history = []

    def ru_at(lam):
        ru = baseline_ru(config, lam, seeds, workers)
        history.append((lam, ru))
        log.info("calibrate %s n_tx=%d: lambda=%.3f ru=%.4f", config.scenario.value,
                 config.n_tx, lam, ru)
        return ru

    def done(lam, ru):
        return CalibrationResult(lam, ru, target_ru, seeds, history)

    if lambda_guess is None:
        lambda_guess = 50.0 * target_ru * len(build_layout(config.scenario, config.scale,
                                                           config.n_tx, config.layout).trps)
    lo, ru_lo = 0.0, 0.0
    hi = lambda_guess
    ru_hi = ru_at(hi)
    expansions = 0
    while ru_hi < target_ru - tolerance:
        lo, ru_lo = hi, ru_hi
        # RU is close to linear in lambda below saturation
        hi *= min(max(1.1 * target_ru / ru_hi, 1.25), 4.0) if ru_hi > 0 else 2.0
        ru_hi = ru_at(hi)
        expansions += 1
        if expansions > max_expansions:
            raise CalibrationError(
                f"could not bracket RU {target_ru}: RU({hi:.3g}/s) = {ru_hi:.4f}; history {history}")
    if abs(ru_hi - target_ru) <= tolerance:
        return done(hi, ru_hi)
    for it in range(max_iterations):
        if it % 3 == 2 or ru_hi <= ru_lo:
            x = 0.5 * (lo + hi)
        else:
            x = lo + (target_ru - ru_lo) * (hi - lo) / (ru_hi - ru_lo)
            x = min(max(x, lo + 0.05 * (hi - lo)), hi - 0.05 * (hi - lo))
        ru = ru_at(x)
        if abs(ru - target_ru) <= tolerance:
            return done(x, ru)
        if ru < target_ru:
            lo, ru_lo = x, ru
        else:
            hi, ru_hi = x, ru
    raise CalibrationError(f"RU calibration for target {target_ru} did not converge; "
                           f"history {history}")
