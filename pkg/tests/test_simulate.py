import numpy as np
import pytest

from corrkit.characterize import collect_clicks, count_transmissions
from corrkit.errors import DataError, DomainError
from corrkit.model import ExperimentConfig, IntensityLabel, SourceSpec
from corrkit.photon_stats import click_probability
from corrkit.simulate import (
    ClickStream,
    CorrelationModel,
    bb84_click_probabilities,
    bb84_repeated_run,
    concatenate_streams,
    emit_intensities,
    generate_sequence,
    read_detection_log,
    read_sequence,
    repetition_rng,
    simulate_bb84_detection,
    simulate_mdi_detection,
    write_detection_log,
    write_sequence,
)


def bb84_source() -> SourceSpec:
    return SourceSpec(
        labels=(
            IntensityLabel(0, "V", 0.001, 3),
            IntensityLabel(1, "D1", 0.03, 7),
            IntensityLabel(2, "D2", 0.09, 35),
            IntensityLabel(3, "S", 0.23, 55),
        )
    )


def degenerate_source() -> SourceSpec:
    return SourceSpec(
        labels=(
            IntensityLabel(0, "only", 0.2, 1),
            IntensityLabel(1, "never", 0.1, 0),
        )
    )


def test_degenerate_ratio_yields_constant_sequence():
    seq = generate_sequence(degenerate_source(), 5, seed=1)
    assert seq.tolist() == [0, 0, 0, 0, 0]


def test_sequence_frequencies_match_ratios():
    source = bb84_source()
    n = 10_000
    seq = generate_sequence(source, n, seed=3)
    for label, ratio in enumerate(source.probabilities()):
        count = int(np.sum(seq == label))
        sd = np.sqrt(n * ratio * (1 - ratio))
        assert abs(count - n * ratio) <= 3 * sd


def test_sequence_determinism():
    source = bb84_source()
    a = generate_sequence(source, 1000, seed=9, mode="fixed-string")
    b = generate_sequence(source, 1000, seed=9, mode="fixed-string")
    assert np.array_equal(a, b)


def test_generate_sequence_rejects_bad_mode():
    with pytest.raises(DomainError):
        generate_sequence(bb84_source(), 10, seed=0, mode="markov")
    with pytest.raises(DomainError):
        generate_sequence(bb84_source(), 0, seed=0)


def test_emit_intensities_without_model_is_nominal():
    seq = np.array([0, 3, 1, 2, 3])
    mus = (0.001, 0.03, 0.09, 0.23)
    out = emit_intensities(seq, None, mus)
    assert np.allclose(out, [0.001, 0.23, 0.03, 0.09, 0.23])


def test_emit_intensities_zero_model_is_nominal():
    seq = generate_sequence(bb84_source(), 500, seed=4)
    model = CorrelationModel(k=2, p=4)
    out = emit_intensities(seq, model, bb84_source().mus)
    assert np.allclose(out, np.asarray(bb84_source().mus)[seq])


def test_epsilon_shifts_exactly_the_keyed_pattern():
    # label 3 preceded by label 3 gains five percent, nothing else moves
    seq = np.array([3, 3, 0, 3, 3, 3])
    model = CorrelationModel(k=2, p=4, epsilon={(3, 3): 0.05})
    mus = (0.1, 0.1, 0.1, 0.2)
    out = emit_intensities(seq, model, mus)
    assert out[1] == pytest.approx(0.21)
    assert out[4] == pytest.approx(0.21)
    assert out[5] == pytest.approx(0.21)
    assert out[0] == pytest.approx(0.2)
    assert out[2] == pytest.approx(0.1)
    assert out[3] == pytest.approx(0.2)


def test_prefix_supplies_history_for_first_pulse():
    seq = np.array([3, 0])
    model = CorrelationModel(k=2, p=4, epsilon={(3, 3): 0.05})
    mus = (0.1, 0.1, 0.1, 0.2)
    without = emit_intensities(seq, model, mus)
    with_prefix = emit_intensities(seq, model, mus, prefix=np.array([3]))
    assert without[0] == pytest.approx(0.2)
    assert with_prefix[0] == pytest.approx(0.21)
    assert with_prefix[1] == without[1]


def test_jitter_sample_mean_recovers_shifted_intensity():
    n = 100_000
    seq = np.tile([0, 3], n // 2)
    model = CorrelationModel(
        k=2, p=4, epsilon={(0, 3): -0.07}, jitter_sigma={3: 0.01}
    )
    mus = (0.0, 0.0, 0.0, 0.2)
    out = emit_intensities(seq, model, mus, seed=11)
    vs = out[1::2]
    target = 0.2 * 0.93
    se = target * 0.01 / np.sqrt(vs.size)
    assert abs(vs.mean() - target) <= 3 * se


def test_correlation_model_validation():
    with pytest.raises(DomainError):
        CorrelationModel(k=2, p=4, epsilon={(1,): 0.1})
    with pytest.raises(DomainError):
        CorrelationModel(k=2, p=4, epsilon={(4, 0): 0.1})
    with pytest.raises(DomainError):
        CorrelationModel(k=2, p=4, epsilon={(0, 0): -1.0})
    with pytest.raises(DomainError):
        CorrelationModel(k=2, p=4, jitter_sigma={0: -0.1})


def test_zero_intensity_never_clicks():
    stream = simulate_bb84_detection(np.zeros(1000), eta=0.5, seed=1)
    assert len(stream) == 0


def test_dark_rate_one_is_rejected_but_high_dark_clicks_often():
    with pytest.raises(DomainError):
        bb84_click_probabilities(np.zeros(4), eta=0.5, dark_rate=1.0)
    probs = bb84_click_probabilities(np.zeros(4), eta=0.5, dark_rate=0.999)
    assert np.allclose(probs, 0.999)


def test_click_fraction_matches_probability():
    n = 1_000_000
    stream = simulate_bb84_detection(np.full(n, 0.5), eta=0.1, seed=2)
    p = click_probability(0.1, 0.5)
    sd = np.sqrt(n * p * (1 - p))
    assert abs(len(stream) - n * p) <= 3 * sd


def test_detection_log_round_trip(tmp_path):
    stream = simulate_bb84_detection(np.full(500, 0.5), eta=0.3, seed=5)
    path = tmp_path / "clicks.csv"
    write_detection_log(stream, path, "run=5")
    back = read_detection_log(path)
    assert back.n_cycles == stream.n_cycles
    assert back.slots_per_cycle == stream.slots_per_cycle
    assert np.array_equal(back.slot, stream.slot)
    assert np.array_equal(back.detector, stream.detector)


def test_detection_log_requires_geometry(tmp_path):
    path = tmp_path / "raw.csv"
    path.write_text("cycle,slot,detector\n0,1,0\n")
    with pytest.raises(DataError):
        read_detection_log(path)
    stream = read_detection_log(path, n_cycles=1, slots_per_cycle=4)
    assert len(stream) == 1


def test_click_stream_validate_rejects_disorder():
    stream = ClickStream(
        n_cycles=1,
        slots_per_cycle=10,
        cycle=np.array([0, 0]),
        slot=np.array([5, 3]),
        detector=np.array([0, 0]),
    )
    with pytest.raises(DataError):
        stream.validate()


def test_sequence_file_round_trip(tmp_path):
    seq = generate_sequence(bb84_source(), 200, seed=8)
    path = tmp_path / "seq.txt"
    write_sequence(seq, path)
    back = read_sequence(path, p=4)
    assert np.array_equal(back, seq)


def test_read_sequence_validates_alphabet(tmp_path):
    path = tmp_path / "seq.txt"
    path.write_text("0\n1\n7\n")
    with pytest.raises(DataError):
        read_sequence(path, p=4)


def make_config(**kwargs) -> ExperimentConfig:
    defaults = dict(
        source=bb84_source(),
        k=2,
        eta=0.05,
        repetitions=40,
        sequence_length=400,
        seed=13,
    )
    defaults.update(kwargs)
    return ExperimentConfig(**defaults)


def test_repeated_run_matches_per_repetition_streams():
    config = make_config()
    seq = generate_sequence(config.source, config.sequence_length, seed=21)
    model = CorrelationModel(k=2, p=4, epsilon={(3, 3): 0.05})
    fast = bb84_repeated_run(config, seq, model)

    counters = count_transmissions(seq, 4, 2, repetitions=config.repetitions)
    streams = []
    mus = np.asarray(config.source.mus)
    tail = seq[-1:]
    for rep in range(config.repetitions):
        rng = repetition_rng(config.seed, rep)
        prefix = None if rep == 0 else tail
        intens = emit_intensities(seq, model, mus, seed=rng, prefix=prefix)
        streams.append(
            simulate_bb84_detection(
                intens,
                config.eta,
                seed=rng,
                cycle_index=rep,
                n_cycles=config.repetitions,
            )
        )
    merged = concatenate_streams(streams)
    collect_clicks(seq, merged, counters)
    assert np.array_equal(fast.C, counters.C)
    assert fast.discarded == counters.discarded


def test_repeated_run_shard_invariance():
    config = make_config(repetitions=30)
    seq = generate_sequence(config.source, config.sequence_length, seed=22)
    model = CorrelationModel(k=2, p=4, jitter_sigma={3: 0.02})
    single = bb84_repeated_run(config, seq, model, threads=1)
    sharded = bb84_repeated_run(config, seq, model, threads=4)
    assert np.array_equal(single.C, sharded.C)
    assert single.discarded == sharded.discarded


def test_repeated_run_null_model_rates_agree_within_errors():
    config = make_config(eta=0.2, repetitions=300, sequence_length=1000, seed=5)
    seq = generate_sequence(config.source, config.sequence_length, seed=30)
    counters = bb84_repeated_run(config, seq, None)
    from corrkit.characterize import click_rates, error_bars

    table = click_rates(counters, low_threshold=0)
    se = error_bars(counters)
    for current in range(4):
        groups = [
            prev * 4 + current
            for prev in range(4)
            if counters.T[prev * 4 + current] > 0
        ]
        for a in groups:
            for b in groups:
                gap = abs(table.rate[a] - table.rate[b])
                assert gap <= 4 * (se[a] + se[b]) + 1e-15


def test_mdi_detection_empty_for_vacuum():
    zeros = np.zeros(100)
    syms = np.zeros(100, dtype=int)
    stream = simulate_mdi_detection(zeros, zeros, syms, syms, eta=0.5, seed=3)
    assert len(stream) == 0


def test_mdi_detection_rejects_length_mismatch():
    with pytest.raises(DomainError):
        simulate_mdi_detection(
            np.zeros(5), np.zeros(4), np.zeros(5, int), np.zeros(4, int), eta=0.5
        )


def test_mdi_both_sides_click_frequency():
    n = 20_000
    m = 0.4
    eta = 0.5
    intens = np.full(n, m)
    syms = np.full(n, 2, dtype=int)
    stream = simulate_mdi_detection(intens, intens, syms, syms, eta=eta, seed=7)
    # two clicks in one slot can only happen when both sides click and land
    # on different detectors; correct for the 1/4 same-detector merge chance
    per_side = 1.0 - np.exp(-eta * m / 2.0)
    slots, counts = np.unique(stream.slot, return_counts=True)
    both = int(np.sum(counts == 2))
    expect = n * per_side**2 * 0.75
    sd = np.sqrt(expect)
    assert abs(both - expect) <= 4 * sd


def test_mdi_doubling_intensity_increases_clicks():
    n = 30_000
    syms = np.full(n, 2, dtype=int)
    low = simulate_mdi_detection(
        np.full(n, 0.2), np.zeros(n), syms, syms, eta=0.5, seed=9
    )
    high = simulate_mdi_detection(
        np.full(n, 0.4), np.zeros(n), syms, syms, eta=0.5, seed=9
    )
    assert len(high) > len(low)


def test_concatenate_streams_orders_events():
    a = ClickStream(2, 10, np.array([1]), np.array([4]), np.array([0]))
    b = ClickStream(2, 10, np.array([0]), np.array([7]), np.array([0]))
    merged = concatenate_streams([a, b])
    merged.validate()
    assert merged.cycle.tolist() == [0, 1]
    with pytest.raises(DataError):
        concatenate_streams([a, ClickStream(1, 9, *(np.zeros(0),) * 3)])
    with pytest.raises(DomainError):
        concatenate_streams([])
