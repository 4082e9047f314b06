import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from compsim.traffic import FILE_SIZE_BITS, FileTransfer, generate_arrivals, record_delivery, upt


def test_zero_rate_never_arrives():
    rng = np.random.default_rng(0)
    assert generate_arrivals(0.0, 1e-3, rng) == 0
    assert generate_arrivals(0.0, 1e-3, rng, 1000).sum() == 0
    with pytest.raises(ValueError):
        generate_arrivals(-1.0, 1e-3, rng)


def test_arrival_count_within_three_sigma():
    counts = generate_arrivals(10.0, 1e-3, np.random.default_rng(1), 1_000_000)
    assert abs(counts.sum() - 1e4) < 3 * math.sqrt(1e4)


def test_arrivals_reproducible():
    a = generate_arrivals(50.0, 1e-3, np.random.default_rng(2), 5000)
    b = generate_arrivals(50.0, 1e-3, np.random.default_rng(2), 5000)
    assert np.array_equal(a, b)


def test_exact_finish_and_floor():
    t = FileTransfer(0, 0, size_bits=10**6)
    record_delivery(t, 10**6, 7)
    assert t.completed and t.completion_tti == 7 and t.remaining_bits == 0
    t = FileTransfer(0, 0, size_bits=10**6)
    record_delivery(t, 4 * 10**6, 3)
    assert t.remaining_bits == 0 and t.completion_tti == 3
    with pytest.raises(ValueError):
        record_delivery(t, 1, 4)
    with pytest.raises(ValueError):
        record_delivery(FileTransfer(0, 0), -1, 0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 2_000_000), min_size=1, max_size=40))
def test_serial_deliveries_complete_iff_sum_reaches_size(chunks):
    t = FileTransfer(0, 0)
    delivered = 0
    for i, c in enumerate(chunks):
        if t.completed:
            break
        record_delivery(t, c, i)
        delivered += c
        assert 0 <= t.remaining_bits <= t.size_bits
    assert t.completed == (delivered >= FILE_SIZE_BITS)


def test_upt_arithmetic():
    t = FileTransfer(0, 10)
    record_delivery(t, FILE_SIZE_BITS, 109)
    assert upt(t, 1e-3) == pytest.approx(40e6)
    t = FileTransfer(0, 5)
    record_delivery(t, FILE_SIZE_BITS, 5)
    assert upt(t, 1e-3) == pytest.approx(FILE_SIZE_BITS / 1e-3)
    with pytest.raises(ValueError):
        upt(FileTransfer(0, 0))


def test_mean_upt_matches_event_log_replay():
    rng = np.random.default_rng(3)
    log, transfers = [], []
    for k in range(200):
        t = FileTransfer(k, int(rng.integers(0, 1000)))
        tti = t.arrival_tti
        while not t.completed:
            bits = int(rng.integers(0, 600_000))
            log.append((k, tti, bits))
            record_delivery(t, bits, tti)
            tti += 1
        transfers.append(t)
    # replay: completion is the first TTI where cumulative bits reach the size
    done = {}
    arrival = {t.ue_id: t.arrival_tti for t in transfers}
    acc = {}
    for k, tti, bits in log:
        acc[k] = acc.get(k, 0) + bits
        if k not in done and acc[k] >= FILE_SIZE_BITS:
            done[k] = tti
    replay = np.mean([FILE_SIZE_BITS / ((done[k] - arrival[k] + 1) * 1e-3) for k in done])
    assert np.mean([upt(t) for t in transfers]) == pytest.approx(replay, rel=1e-12)
