import numpy as np
import pytest

from corrkit.characterize import (
    GroupCounters,
    click_rates,
    collect_clicks,
    count_transmissions,
    error_bars,
    fluctuation_stats,
)
from corrkit.datasets import bb84_counters, bb84_source, toy_sequence
from corrkit.errors import DataError, DomainError
from corrkit.model import encode_pattern, parse_pattern_name
from corrkit.simulate import ClickStream


def naive_two_pass(seq, p, k, repetitions, mode):
    """Reference counter: materialize the full repeated string."""
    seq = np.asarray(seq, dtype=np.int64)
    full = np.tile(seq, repetitions)
    groups = p**k
    G = np.zeros(groups, dtype=np.int64)
    T = np.zeros(groups, dtype=np.int64)
    for t in range(seq.size):
        if t >= k - 1:
            idx = 0
            for j in range(t - k + 1, t + 1):
                idx = idx * p + int(seq[j])
            G[idx] += 1
        elif repetitions > 1 or k == 1:
            idx = 0
            for j in range(t - k + 1, t + 1):
                idx = idx * p + int(seq[j % seq.size])
            G[idx] += 1
    for t in range(full.size):
        if t < k - 1:
            continue
        idx = 0
        for j in range(t - k + 1, t + 1):
            idx = idx * p + int(full[j])
        T[idx] += 1
    if mode == "paper-compat":
        T = G * repetitions
    return G, T


def clicks_at(positions, n, n_cycles=1):
    positions = np.asarray(sorted(positions), dtype=np.int64)
    return ClickStream(
        n_cycles=n_cycles,
        slots_per_cycle=n,
        cycle=positions // n,
        slot=positions % n,
        detector=np.zeros(positions.size, dtype=np.int64),
    )


def test_toy_sequence_counts_two_s_then_d1():
    # the bundled seven-pulse walkthrough: labels 1,0,2,3,1,3,1
    seq = toy_sequence()
    counters = count_transmissions(seq, 4, 2)
    sd1 = encode_pattern((3, 1), 4)
    assert counters.G[sd1] == 2
    assert counters.G.sum() == seq.size - 1


def test_toy_sequence_click_collection():
    seq = toy_sequence()
    counters = count_transmissions(seq, 4, 2)
    # detect pulses 1..4: windows D1-V, V-D2, D2-S, S-D1 each collect one
    collect_clicks(seq, clicks_at([1, 2, 3, 4], seq.size), counters)
    for pattern in ((1, 0), (0, 2), (2, 3), (3, 1)):
        assert counters.C[encode_pattern(pattern, 4)] == 1
    assert counters.C.sum() == 4
    assert counters.discarded == 0


def test_headless_click_is_discarded():
    seq = toy_sequence()
    counters = count_transmissions(seq, 4, 2)
    collect_clicks(seq, clicks_at([0], seq.size), counters)
    assert counters.C.sum() == 0
    assert counters.discarded == 1


def test_zero_clicks_leave_counters_empty():
    seq = toy_sequence()
    counters = count_transmissions(seq, 4, 2)
    collect_clicks(seq, clicks_at([], seq.size), counters)
    assert counters.C.sum() == 0


def test_constant_sequence_counts():
    seq = np.full(50, 2, dtype=np.int64)
    counters = count_transmissions(seq, 4, 2)
    aa = encode_pattern((2, 2), 4)
    assert counters.G[aa] == 49
    assert counters.T[aa] == 49
    assert counters.G.sum() == 49


def test_exact_mode_counts_seam_windows_r_minus_1_times():
    seq = np.array([0, 1], dtype=np.int64)
    r = 5
    counters = count_transmissions(seq, 2, 2, repetitions=r, mode="exact")
    # concatenated string 0101...01: windows 01 appear r times, 10 r-1 times
    assert counters.T[encode_pattern((0, 1), 2)] == r
    assert counters.T[encode_pattern((1, 0), 2)] == r - 1
    assert counters.G[encode_pattern((1, 0), 2)] == 1


def test_paper_compat_mode_multiplies_circular_counts():
    seq = np.array([0, 1], dtype=np.int64)
    r = 5
    counters = count_transmissions(seq, 2, 2, repetitions=r, mode="paper-compat")
    assert counters.T[encode_pattern((0, 1), 2)] == r
    assert counters.T[encode_pattern((1, 0), 2)] == r


@pytest.mark.parametrize("mode", ["exact", "paper-compat"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_streaming_counters_match_naive_two_pass(mode, seed):
    rng = np.random.default_rng(seed)
    seq = rng.integers(0, 4, size=500)
    r = 7
    counters = count_transmissions(seq, 4, 2, repetitions=r, mode=mode)
    G_ref, T_ref = naive_two_pass(seq, 4, 2, r, mode)
    assert np.array_equal(counters.G, G_ref)
    assert np.array_equal(counters.T, T_ref)


def test_transmission_conservation():
    rng = np.random.default_rng(3)
    seq = rng.integers(0, 4, size=1000)
    r = 4
    counters = count_transmissions(seq, 4, 2, repetitions=r, mode="exact")
    # every pulse after the first k-1 heads exactly one window
    assert counters.T.sum() == seq.size * r - 1
    assert counters.G.sum() == seq.size


def test_click_conservation():
    rng = np.random.default_rng(4)
    seq = rng.integers(0, 4, size=300)
    counters = count_transmissions(seq, 4, 2, repetitions=3)
    positions = rng.choice(900, size=200, replace=False)
    collect_clicks(seq, clicks_at(positions, 300, n_cycles=3), counters)
    headless = int(np.sum(positions < 1))
    assert counters.C.sum() == 200 - headless
    assert counters.discarded == headless


def test_collect_clicks_chunking_is_invisible():
    rng = np.random.default_rng(5)
    seq = rng.integers(0, 4, size=200)
    positions = np.sort(rng.choice(600, size=150, replace=False))
    stream = clicks_at(positions, 200, n_cycles=3)
    a = count_transmissions(seq, 4, 2, repetitions=3)
    b = count_transmissions(seq, 4, 2, repetitions=3)
    collect_clicks(seq, stream, a)
    collect_clicks(seq, stream, b, chunk_size=7)
    assert np.array_equal(a.C, b.C)
    assert a.discarded == b.discarded


def test_collect_clicks_rejects_out_of_range():
    seq = np.zeros(10, dtype=np.int64)
    seq[0] = 1
    counters = count_transmissions(seq, 2, 2)
    bad = ClickStream(
        n_cycles=2,
        slots_per_cycle=10,
        cycle=np.array([1]),
        slot=np.array([3]),
        detector=np.array([0]),
    )
    with pytest.raises(DataError):
        collect_clicks(seq, bad, counters)


def test_merge_accumulates_shards():
    rng = np.random.default_rng(6)
    seq = rng.integers(0, 4, size=100)
    a = count_transmissions(seq, 4, 2, repetitions=2)
    b = count_transmissions(seq, 4, 2, repetitions=3)
    merged = a + b
    assert merged.repetitions == 5
    assert np.array_equal(merged.T, a.T + b.T)
    other = count_transmissions(rng.integers(0, 4, size=100), 4, 2)
    with pytest.raises(DataError):
        a.merge(other)


def test_count_transmissions_validates_input():
    with pytest.raises(DomainError):
        count_transmissions(np.array([0]), 4, 2)
    with pytest.raises(DataError):
        count_transmissions(np.array([0, 9]), 4, 2)
    with pytest.raises(DomainError):
        count_transmissions(np.array([0, 1]), 4, 2, mode="fast")


def test_published_division_fixed_point():
    counters = bb84_counters()
    source = bb84_source()
    table = click_rates(counters, low_threshold=0)
    k = 2

    def rate_of(name):
        return table.rate[parse_pattern_name(name, source, k)]

    assert rate_of("S-S") == pytest.approx(9101922 / 4.5495e10, abs=1e-8)
    assert rate_of("S-S") == pytest.approx(2.0006e-4, abs=1e-8)
    assert rate_of("V-S") == pytest.approx(448412 / 2.325e9, abs=1e-8)
    assert rate_of("V-S") == pytest.approx(1.9286e-4, abs=1e-8)
    assert rate_of("D1-S") == pytest.approx(6001994 / 2.8905e10, abs=1e-8)
    assert rate_of("D2-S") == pytest.approx(1183455 / 5.7e9, abs=1e-8)


def test_published_fluctuations():
    counters = bb84_counters()
    source = bb84_source()
    stats = fluctuation_stats(click_rates(counters, low_threshold=0))
    s = stats[source.id_of("S")]
    assert s.abs_discrepancy == pytest.approx(1.48e-5, abs=0.02e-5)
    assert s.rel_fluctuation == pytest.approx(0.07, abs=0.01)
    v = stats[source.id_of("V")]
    assert v.rel_fluctuation == pytest.approx(0.12, abs=0.02)


def test_published_ss_error_bar():
    counters = bb84_counters()
    source = bb84_source()
    se = error_bars(counters)
    ss = parse_pattern_name("S-S", source, 2)
    assert se[ss] == pytest.approx(
        np.sqrt(2.0006e-4 * (1 - 2.0006e-4) / 4.5495e10), rel=1e-3
    )
    assert se[ss] == pytest.approx(6.6e-8, abs=0.2e-8)


def test_absent_groups_are_nan_not_zero():
    counters = GroupCounters(
        p=2,
        k=2,
        repetitions=1,
        sequence_length=4,
        mode="exact",
        G=np.array([0, 2, 1, 0]),
        T=np.array([0, 2, 1, 0]),
        C=np.array([0, 1, 0, 0]),
    )
    table = click_rates(counters, low_threshold=0)
    assert np.isnan(table.rate[0])
    assert not table.present[0]
    assert table.rate[1] == pytest.approx(0.5)
    assert table.rate[2] == 0.0


def test_clicks_exceeding_transmissions_rejected():
    counters = GroupCounters(
        p=2,
        k=1,
        repetitions=1,
        sequence_length=3,
        mode="exact",
        G=np.array([2, 1]),
        T=np.array([2, 1]),
        C=np.array([3, 0]),
    )
    with pytest.raises(DataError):
        click_rates(counters)


def test_low_statistics_flag():
    counters = GroupCounters(
        p=2,
        k=1,
        repetitions=1,
        sequence_length=10,
        mode="exact",
        G=np.array([5, 5]),
        T=np.array([5, 20_000]),
        C=np.array([1, 2]),
    )
    table = click_rates(counters)
    assert bool(table.low_statistics[0])
    assert not bool(table.low_statistics[1])


def test_closed_form_error_bar():
    counters = GroupCounters(
        p=2,
        k=1,
        repetitions=1,
        sequence_length=100,
        mode="exact",
        G=np.array([100, 100]),
        T=np.array([100, 100]),
        C=np.array([50, 0]),
    )
    se = error_bars(counters)
    assert se[0] == pytest.approx(0.05)
    assert se[1] == 0.0


def test_equal_rates_have_zero_fluctuation():
    counters = GroupCounters(
        p=2,
        k=2,
        repetitions=1,
        sequence_length=9,
        mode="exact",
        G=np.array([2, 2, 2, 2]),
        T=np.array([100, 100, 100, 100]),
        C=np.array([5, 5, 5, 5]),
    )
    stats = fluctuation_stats(click_rates(counters, low_threshold=0))
    for st in stats.values():
        assert st.abs_discrepancy == 0.0
        assert st.rel_fluctuation == 0.0
        assert st.mean == pytest.approx(0.05)


def test_fluctuation_skips_absent_labels():
    counters = GroupCounters(
        p=2,
        k=2,
        repetitions=1,
        sequence_length=5,
        mode="exact",
        G=np.array([2, 0, 2, 0]),
        T=np.array([10, 0, 10, 0]),
        C=np.array([1, 0, 2, 0]),
    )
    stats = fluctuation_stats(click_rates(counters, low_threshold=0))
    assert set(stats) == {0}
    assert stats[0].n_groups == 2
