import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from compsim.link import best_ncjt, rank_adapt
from compsim.scenario import CoordinationCluster
from compsim.scheduler import (LinkContext, PfState, SchedulingHypothesis, SchemeMode,
                               TrpAssignment, baseline_schedule, enumerate_hypotheses, pf_metric,
                               select_hypothesis, update_pf)

from oracles import crandn, random_psd


def snapshot(seed, n_trps=2, n_ues=3, n_tx=2):
    """Frozen cluster snapshot: channels, out-of-cluster covariances, PF averages."""
    rng = np.random.default_rng(seed)
    trps = tuple(range(n_trps))
    ues = list(range(10, 10 + n_ues))
    channels = {(t, u): crandn(rng, (4, n_tx)) * 10 ** rng.uniform(-0.5, 0.5)
                for t in trps for u in ues}
    r = {u: random_psd(rng, 4, floor=0.01) * 0.05 for u in ues}
    avg = {u: float(10 ** rng.uniform(6, 8)) for u in ues}
    return CoordinationCluster(0, trps), ues, channels, r, avg


def ctx_of(channels, r, power=1.0):
    return LinkContext(channels, r, power, 20e6)


def test_enumeration_counts():
    cl, _, ch, r, avg = snapshot(0, n_ues=1)
    dps = enumerate_hypotheses(cl, [10], ctx_of(ch, r), avg, SchemeMode.DPS)
    ncjt = enumerate_hypotheses(cl, [10], ctx_of(ch, r), avg, SchemeMode.NCJT)
    assert len(dps) == 3
    assert len(ncjt) == 4 and ncjt[-1].mode_tag == "ncjt"
    empty = enumerate_hypotheses(cl, [], ctx_of(ch, r), avg, SchemeMode.DPS)
    assert len(empty) == 1 and empty[0].n_transmitting == 0
    with pytest.raises(ValueError):
        enumerate_hypotheses(cl, [10], ctx_of(ch, r), avg, SchemeMode.BASELINE)


@pytest.mark.parametrize("n_trps, n_ues", [(2, 1), (2, 3), (3, 2), (3, 5)])
def test_ncjt_list_extends_dps_list_verbatim(n_trps, n_ues):
    for seed in range(5):
        cl, ues, ch, r, avg = snapshot(seed, n_trps, n_ues)
        dps = enumerate_hypotheses(cl, ues, ctx_of(ch, r), avg, SchemeMode.DPS)
        ncjt = enumerate_hypotheses(cl, ues, ctx_of(ch, r), avg, SchemeMode.NCJT)
        assert len(ncjt) > len(dps)
        assert [h.key() for h in ncjt[:len(dps)]] == [h.key() for h in dps]


def test_hypothesis_invariants():
    for seed in range(10):
        cl, ues, ch, r, avg = snapshot(seed, 3, 5)
        for h in enumerate_hypotheses(cl, ues, ctx_of(ch, r), avg, SchemeMode.NCJT, top_k=None):
            served = h.served()
            assert len(h.assignments) == len(cl.member_trps)
            for u, links in served.items():
                assert len(links) <= 2
                if len(links) == 2:
                    assert h.mode_tag == "ncjt"
                assert sum(p.rank for _, p in links) <= 4


def test_hypothesis_values_match_direct_link_evaluation():
    cl, ues, ch, r, avg = snapshot(3, 2, 3)
    power = 1.0
    for h in enumerate_hypotheses(cl, ues, ctx_of(ch, r), avg, SchemeMode.NCJT, top_k=None):
        served = h.served()
        pf = 0.0
        for u, links in served.items():
            trps = {t for t, _ in links}
            cov = r[u].copy()
            for other, a in zip(h.trps, h.assignments):
                if a is None or other in trps:
                    continue
                # intra-cluster interferers use their standalone precoders
                pre = rank_adapt(ch[(other, a.ue_id)], r[a.ue_id], power)[0]
                hw = ch[(other, u)] @ pre.w
                cov += power / pre.rank * hw @ hw.conj().T
            if len(links) == 1:
                lq = rank_adapt(ch[(links[0][0], u)], cov, power)[1]
            else:
                (ta, _), (tb, _) = links
                lq = best_ncjt(ch[(ta, u)], ch[(tb, u)], cov, power)[1]
            pf += lq.spectral_efficiency * 20e6 / avg[u]
        assert h.pf_value == pytest.approx(pf, rel=1e-9)


def _hyp(pf, n_tx):
    a = TrpAssignment(1, None)
    assignments = tuple([a] * n_tx + [None] * (2 - n_tx))
    return SchedulingHypothesis((0, 1), assignments, "dps", pf)


def test_select_hypothesis_rules():
    only = _hyp(1.0, 1)
    assert select_hypothesis([only]) is only
    both, blank = _hyp(2.0, 2), _hyp(2.0, 1)
    assert select_hypothesis([both, blank]) is blank
    first, second = _hyp(2.0, 1), _hyp(2.0, 1)
    assert select_hypothesis([first, second]) is first
    with pytest.raises(ValueError):
        select_hypothesis([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 2)), min_size=1, max_size=30))
def test_select_matches_brute_force(items):
    hyps = [_hyp(float(pf), n) for pf, n in items]
    best = hyps[0]
    for h in hyps[1:]:
        if h.pf_value > best.pf_value or (h.pf_value == best.pf_value
                                          and h.n_transmitting < best.n_transmitting):
            best = h
    assert select_hypothesis(hyps) is best


def test_selection_invariant_to_pf_scaling():
    for seed in range(5):
        cl, ues, ch, r, avg = snapshot(seed, 3, 4)
        pick = select_hypothesis(enumerate_hypotheses(cl, ues, ctx_of(ch, r), avg,
                                                      SchemeMode.NCJT))
        scaled = {u: 7.5 * a for u, a in avg.items()}
        pick2 = select_hypothesis(enumerate_hypotheses(cl, ues, ctx_of(ch, r), scaled,
                                                       SchemeMode.NCJT))
        assert pick.key()[:3] == pick2.key()[:3]


def test_pf_metric():
    assert pf_metric(10.0, 10.0) == 1.0
    assert pf_metric(20.0, 10.0) == 2 * pf_metric(10.0, 10.0)
    with pytest.raises(ValueError):
        pf_metric(1.0, 0.0)


def test_pf_update_fixed_point_and_decay():
    st_ = PfState(beta=0.05, floor=1e3, init=1e6)
    st_.add(1)
    st_.add(2)
    for _ in range(2000):
        update_pf(st_, {1: 5e6})
    assert st_.avg[1] == pytest.approx(5e6, rel=1e-9)
    assert st_.avg[2] == 1e3
    with pytest.raises(ValueError):
        update_pf(st_, {}, beta=1.0)


def test_pf_update_replay():
    rng = np.random.default_rng(0)
    st_ = PfState(beta=0.01, floor=1e3, init=1e4)
    for u in range(3):
        st_.add(u)
    ref = {u: 1e4 for u in range(3)}
    for _ in range(100):
        served = {int(u): float(rng.uniform(0, 1e8)) for u in rng.choice(3, 2, replace=False)}
        update_pf(st_, served)
        for u in ref:
            ref[u] = max(0.99 * ref[u] + 0.01 * served.get(u, 0.0), 1e3)
    assert st_.avg == ref


def test_baseline_schedule():
    cl, ues, ch, r, avg = snapshot(5, 2, 4)
    ctx = ctx_of(ch, r)
    assert baseline_schedule(0, [], ctx, avg) is None
    assert baseline_schedule(0, [12], ctx, avg)[0].ue_id == 12
    a, lq, pf = baseline_schedule(1, ues, ctx, avg)
    brute = max(ues, key=lambda u: (rank_adapt(ch[(1, u)], r[u], 1.0)[1].spectral_efficiency
                                    * 20e6 / avg[u], -u))
    assert a.ue_id == brute


def test_batched_context_matches_direct_links():
    cl, ues, ch, r, avg = snapshot(8, 3, 3)
    ctx = ctx_of(ch, r)
    intf = ((1, 11), (2, 12))
    pre, lq = ctx.single(0, 10, intf)
    cov = r[10].copy()
    for t, v in intf:
        p = rank_adapt(ch[(t, v)], r[v], 1.0)[0]
        hw = ch[(t, 10)] @ p.w
        cov += hw @ hw.conj().T / p.rank
    pre2, lq2 = rank_adapt(ch[(0, 10)], cov, 1.0)
    assert pre.rank == pre2.rank
    assert lq.spectral_efficiency == pytest.approx(lq2.spectral_efficiency, rel=1e-9)


def test_real_valued_covariances_keep_complex_interference():
    cl, ues, ch, r, avg = snapshot(9, 2, 2)
    r_real = {u: 0.05 * np.eye(4) for u in ues}
    r_cplx = {u: 0.05 * np.eye(4, dtype=complex) for u in ues}
    a = enumerate_hypotheses(cl, ues, ctx_of(ch, r_real), avg, SchemeMode.NCJT, top_k=None)
    b = enumerate_hypotheses(cl, ues, ctx_of(ch, r_cplx), avg, SchemeMode.NCJT, top_k=None)
    assert [h.pf_value for h in a] == [h.pf_value for h in b]
