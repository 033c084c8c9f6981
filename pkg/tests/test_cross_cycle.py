import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corrkit.cross_cycle import (
    BsmPatternTable,
    appendix_oracle,
    classify_bsm,
    count_valid_transmissions,
    cross_cycle_coincidences,
    cross_cycle_rates,
    default_bsm_table,
    filter_same_basis,
    naive_cross_cycle,
    parse_pattern_table,
    symbols_to_labels,
)
from corrkit.datasets import (
    MDI_CYCLES_PER_BLOCK,
    MDI_N_BLOCKS,
    mdi_coincidences,
    mdi_source,
    mdi_symbol_strings,
    mdi_transmissions,
)
from corrkit.errors import DataError, DomainError
from corrkit.model import parse_pattern_name
from corrkit.simulate import ClickStream


def stream_from_events(events, n_cycles, slots):
    """events: iterable of (cycle, slot, detector)."""
    events = sorted(events)
    arr = np.asarray(events, dtype=np.int64).reshape(-1, 3)
    s = ClickStream(
        n_cycles=n_cycles,
        slots_per_cycle=slots,
        cycle=arr[:, 0],
        slot=arr[:, 1],
        detector=arr[:, 2],
    )
    s.validate()
    return s


def test_pattern_table_validation():
    with pytest.raises(DomainError):
        BsmPatternTable(psi_plus=((0, 0),), psi_minus=())
    with pytest.raises(DomainError):
        BsmPatternTable(psi_plus=((0, 1),), psi_minus=((1, 0),))
    table = BsmPatternTable(psi_plus=((1, 0),), psi_minus=((2, 3),))
    assert table.psi_plus == ((0, 1),)


def test_classify_bsm_pairs():
    table = default_bsm_table()
    assert classify_bsm({0}, {3}, table) == "psi-"
    assert classify_bsm({3}, {0}, table) == "psi-"
    assert classify_bsm({0}, {1}, table) == "psi+"
    assert classify_bsm(set(), {2}, table) is None
    assert classify_bsm({0}, {0}, table) is None
    assert classify_bsm({0, 1}, {2}, table) is None
    assert classify_bsm({0}, {2}, table) is None


def test_parse_pattern_table(tmp_path):
    path = tmp_path / "pairs.txt"
    path.write_text("# wiring\nPSI+ D1 D2\nPSI+ D3 D4\nPSI- D1 D4\nPSI- D2 D3\n")
    table = parse_pattern_table(path)
    assert table.psi_plus == ((0, 1), (2, 3))
    assert table.psi_minus == ((0, 3), (1, 2))
    bad = tmp_path / "bad.txt"
    bad.write_text("PSI* D1 D2\n")
    with pytest.raises(DataError):
        parse_pattern_table(bad)


def test_symbols_to_labels_mapping():
    out = symbols_to_labels(np.arange(8))
    assert out.tolist() == [3, 3, 2, 2, 1, 1, 0, 0]
    with pytest.raises(DataError):
        symbols_to_labels(np.array([8]))


def test_filter_same_basis_rules():
    assert filter_same_basis(np.array([0]), np.array([1])).tolist() == [True]
    assert filter_same_basis(np.array([0]), np.array([2])).tolist() == [False]
    assert filter_same_basis(np.array([5]), np.array([2])).tolist() == [True]
    with pytest.raises(DataError):
        filter_same_basis(np.array([0]), np.array([0, 1]))


def test_fixture_strings_reproduce_bundled_transmissions():
    sym_a, sym_b = mdi_symbol_strings()
    labels = symbols_to_labels(sym_a)
    valid = filter_same_basis(sym_a, sym_b)
    assert int(valid.sum()) == 2802
    G = count_valid_transmissions(labels, valid)
    assert np.array_equal(G, mdi_transmissions())
    source = mdi_source()
    assert G[parse_pattern_name("omega-omega", source, 2)] == 19
    assert G[parse_pattern_name("s-s", source, 2)] == 838


def test_two_coincidences_in_one_block():
    # two cycles, both with conforming clicks at two valid slots
    table = default_bsm_table()
    labels = np.array([3, 3, 3])
    valid = np.array([True, True, True])
    events = [(0, 1, 0), (0, 2, 2), (1, 1, 1), (1, 2, 3)]
    counts = cross_cycle_coincidences(
        stream_from_events(events, 2, 3), labels, valid, table, n_b=2, n_blocks=1
    )
    assert counts.C_blocks.sum() == 2


def test_single_cycle_blocks_cannot_pair():
    table = default_bsm_table()
    labels = np.array([3, 3])
    valid = np.array([True, True])
    events = [(0, 1, 0), (1, 1, 1)]
    counts = cross_cycle_coincidences(
        stream_from_events(events, 2, 2), labels, valid, table, n_b=2, n_blocks=1
    )
    assert counts.C_blocks.sum() == 1
    with pytest.raises(DomainError):
        cross_cycle_coincidences(
            stream_from_events(events, 2, 2), labels, valid, table, n_b=1, n_blocks=2
        )


def test_fully_clicked_pair_counts_once_per_cycle_pair():
    # both detectors of a pair click in both cycles: the one unordered
    # cycle pair yields one cross-cycle count, not two
    table = default_bsm_table()
    labels = np.array([3, 3])
    valid = np.array([True, True])
    events = [(0, 1, 0), (0, 1, 1), (1, 1, 0), (1, 1, 1)]
    counts = cross_cycle_coincidences(
        stream_from_events(events, 2, 2), labels, valid, table, n_b=2, n_blocks=1
    )
    assert counts.C_blocks.sum() == 1
    assert counts.same_cycle.tolist() == [2]


def test_role_orientation_is_fixed():
    # the pair's lower-id detector must click in the earlier cycle
    table = default_bsm_table()
    labels = np.array([3, 3])
    valid = np.array([True, True])
    forward = [(0, 1, 0), (1, 1, 1)]
    counts = cross_cycle_coincidences(
        stream_from_events(forward, 2, 2), labels, valid, table, n_b=2, n_blocks=1
    )
    assert counts.C_blocks.sum() == 1
    swapped = [(0, 1, 1), (1, 1, 0)]
    counts = cross_cycle_coincidences(
        stream_from_events(swapped, 2, 2), labels, valid, table, n_b=2, n_blocks=1
    )
    assert counts.C_blocks.sum() == 0


def test_multi_click_cycles_still_pair_and_are_diagnosed():
    table = default_bsm_table()
    labels = np.array([3, 3])
    valid = np.array([True, True])
    events = [(0, 1, 0), (0, 1, 1), (1, 1, 1)]
    counts = cross_cycle_coincidences(
        stream_from_events(events, 2, 2), labels, valid, table, n_b=2, n_blocks=1
    )
    assert counts.C_blocks.sum() == 1
    assert counts.multi_click_cycles == 1
    assert counts.same_cycle.tolist() == [1]


def test_invalid_and_headless_events_are_diagnostics():
    table = default_bsm_table()
    labels = np.array([3, 3, 3])
    valid = np.array([True, False, True])
    events = [(0, 0, 0), (0, 1, 1), (1, 1, 0)]
    counts = cross_cycle_coincidences(
        stream_from_events(events, 2, 3), labels, valid, table, n_b=2, n_blocks=1
    )
    assert counts.invalid_slot_events == 2
    assert counts.headless_events == 1
    assert counts.C_blocks.sum() == 0


def random_instance(rng, n_b, n_blocks, slots, rate):
    labels = rng.integers(0, 4, size=slots).astype(np.int16)
    valid = rng.random(slots) < 0.7
    n_cycles = n_b * n_blocks
    mask = rng.random((n_cycles, slots, 4)) < rate
    cyc, slot, det = np.nonzero(mask)
    return labels, valid, ClickStream(
        n_cycles=n_cycles,
        slots_per_cycle=slots,
        cycle=cyc.astype(np.int64),
        slot=slot.astype(np.int64),
        detector=det.astype(np.int64),
    )


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_fast_counter_matches_naive_oracle(seed):
    rng = np.random.default_rng(seed)
    table = default_bsm_table()
    labels, valid, stream = random_instance(rng, n_b=25, n_blocks=3, slots=12, rate=0.08)
    fast = cross_cycle_coincidences(stream, labels, valid, table, 25, 3)
    slow = naive_cross_cycle(stream, labels, valid, table, 25, 3)
    assert np.array_equal(fast.C_blocks, slow.C_blocks)
    assert np.array_equal(fast.same_cycle, slow.same_cycle)
    assert fast.invalid_slot_events == slow.invalid_slot_events
    assert fast.headless_events == slow.headless_events
    assert fast.multi_click_cycles == slow.multi_click_cycles


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=10_000),
    n_b=st.integers(min_value=2, max_value=12),
    slots=st.integers(min_value=2, max_value=8),
)
def test_fast_counter_matches_naive_oracle_random(seed, n_b, slots):
    rng = np.random.default_rng(seed)
    table = default_bsm_table()
    labels, valid, stream = random_instance(rng, n_b, 2, slots, rate=0.15)
    fast = cross_cycle_coincidences(stream, labels, valid, table, n_b, 2)
    slow = naive_cross_cycle(stream, labels, valid, table, n_b, 2)
    assert np.array_equal(fast.C_blocks, slow.C_blocks)


def test_appendix_enumeration_identities():
    assert appendix_oracle(1, 0.3)[0] == pytest.approx(0.09, abs=1e-15)
    enum, closed = appendix_oracle(2, 0.5)
    assert enum == pytest.approx(1.0, abs=1e-15)
    assert closed == 1.0
    for n_b in range(1, 13):
        for d in np.arange(0.1, 1.0, 0.1):
            enum, closed = appendix_oracle(n_b, float(d))
            assert enum == pytest.approx(closed, abs=1e-12)


def test_appendix_oracle_validation():
    with pytest.raises(DomainError):
        appendix_oracle(0, 0.5)
    with pytest.raises(DomainError):
        appendix_oracle(2, 1.5)


def test_independent_clicks_converge_to_d_squared():
    # one valid slot, two detectors of a psi+ pair clicking independently
    rng = np.random.default_rng(17)
    table = default_bsm_table()
    labels = np.array([3, 3])
    valid = np.array([True, True])
    d = 0.25
    n_b, n_blocks = 60, 60
    n_cycles = n_b * n_blocks
    hits0 = rng.random(n_cycles) < d
    hits1 = rng.random(n_cycles) < d
    events = []
    for c in range(n_cycles):
        if hits0[c]:
            events.append((c, 1, 0))
        if hits1[c]:
            events.append((c, 1, 1))
    counts = cross_cycle_coincidences(
        stream_from_events(events, n_cycles, 2), labels, valid, table, n_b, n_blocks
    )
    pairs = n_b * (n_b - 1) / 2
    per_block = counts.C_blocks.sum(axis=1) / pairs
    mean = per_block.mean()
    se = per_block.std(ddof=1) / np.sqrt(n_blocks)
    assert abs(mean - d * d) <= 3 * se


def test_cross_cycle_rates_formula():
    G = np.zeros(16, dtype=np.int64)
    C = np.zeros((1, 16))
    source = mdi_source()
    ss = parse_pattern_name("s-s", source, 2)
    G[ss] = 838
    C[0, ss] = 4.03e8
    table = cross_cycle_rates(C, G, n_b=160_000)
    assert table.T[ss] == 838 * 160_000 * 159_999 // 2
    assert table.rate[ss] == pytest.approx(3.76e-5, abs=0.01e-5)
    assert not table.present[0]
    assert np.isnan(table.rate[0])


def test_cross_cycle_rates_rejects_counts_without_transmissions():
    G = np.zeros(16, dtype=np.int64)
    C = np.zeros((1, 16))
    C[0, 3] = 5.0
    with pytest.raises(DataError):
        cross_cycle_rates(C, G, n_b=100)


def test_published_tables_reproduce_rate_gap():
    C_blocks = mdi_coincidences()
    G = mdi_transmissions()
    assert C_blocks.shape == (MDI_N_BLOCKS, 16)
    table = cross_cycle_rates(C_blocks, G, n_b=MDI_CYCLES_PER_BLOCK)
    source = mdi_source()
    r_ss = table.rate[parse_pattern_name("s-s", source, 2)]
    r_ws = table.rate[parse_pattern_name("omega-s", source, 2)]
    assert r_ss - r_ws == pytest.approx(1.2e-5, abs=0.1e-5)


def test_published_tables_omega_fluctuation():
    from corrkit.characterize import fluctuation_stats

    C_blocks = mdi_coincidences()
    G = mdi_transmissions()
    table = cross_cycle_rates(C_blocks, G, n_b=MDI_CYCLES_PER_BLOCK)
    source = mdi_source()
    omega = source.id_of("omega")
    sel = np.arange(16) % 4 == omega
    vals = table.rate[sel & table.present]
    rel = (vals.max() - vals.min()) / vals.mean()
    assert 0.8 <= rel <= 1.3


def test_count_valid_transmissions_uses_raw_predecessors():
    # slot 2's pattern is (labels[1], labels[2]) even though slot 1 is invalid
    labels = np.array([0, 1, 2])
    valid = np.array([True, False, True])
    G = count_valid_transmissions(labels, valid)
    assert G[0 * 4 + 1] == 0
    assert G[1 * 4 + 2] == 1
    assert G.sum() == 1
