"""Synthetic sources and detectors for validating the counting pipeline.

Intensity correlations are injected through a lookup table keyed by the
pattern of recent labels; detection is Bernoulli sampling of per-pulse
click probabilities.  Randomness is derived per repetition from
``(seed, repetition_index)``, so a run sharded over workers produces the
same clicks as a single-threaded run no matter how work is divided.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DomainError
from .model import ExperimentConfig, SourceSpec, check_group_count

_SEQUENCE_DTYPE = np.int16


@dataclass
class ClickStream:
    """Detection events of one run, strictly ordered by (cycle, slot, detector)."""

    n_cycles: int
    slots_per_cycle: int
    cycle: np.ndarray
    slot: np.ndarray
    detector: np.ndarray

    def __post_init__(self) -> None:
        self.cycle = np.asarray(self.cycle, dtype=np.int64)
        self.slot = np.asarray(self.slot, dtype=np.int64)
        self.detector = np.asarray(self.detector, dtype=np.int64)
        if not (self.cycle.shape == self.slot.shape == self.detector.shape):
            raise DataError("cycle, slot and detector arrays must have equal length")

    def __len__(self) -> int:
        return int(self.cycle.size)

    def validate(self) -> None:
        """Check ranges and strict ordering; raises :class:`DataError`."""
        if len(self) == 0:
            return
        if self.cycle.min() < 0 or self.cycle.max() >= self.n_cycles:
            bad = int(np.argmax((self.cycle < 0) | (self.cycle >= self.n_cycles)))
            raise DataError(f"event {bad}: cycle {self.cycle[bad]} out of range")
        if self.slot.min() < 0 or self.slot.max() >= self.slots_per_cycle:
            bad = int(np.argmax((self.slot < 0) | (self.slot >= self.slots_per_cycle)))
            raise DataError(f"event {bad}: slot {self.slot[bad]} out of range")
        if self.detector.min() < 0:
            raise DataError("negative detector id")
        key = (self.cycle * self.slots_per_cycle + self.slot) * (
            self.detector.max() + 1
        ) + self.detector
        if np.any(np.diff(key) <= 0):
            bad = int(np.argmax(np.diff(key) <= 0)) + 1
            raise DataError(
                f"event {bad}: events must be strictly ordered by (cycle, slot, detector)"
            )

    def pulse_index(self) -> np.ndarray:
        """Global pulse position of each event in the concatenated stream."""
        return self.cycle * self.slots_per_cycle + self.slot


def write_detection_log(stream: ClickStream, path: str | Path, header_comment: str | None = None) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write(f"# cycles={stream.n_cycles} slots={stream.slots_per_cycle}\n")
        fh.write("cycle,slot,detector\n")
        writer = csv.writer(fh)
        for c, s, d in zip(stream.cycle, stream.slot, stream.detector):
            writer.writerow((int(c), int(s), int(d)))


def read_detection_log(
    path: str | Path,
    n_cycles: int | None = None,
    slots_per_cycle: int | None = None,
) -> ClickStream:
    """Parse a ``cycle,slot,detector`` CSV, using embedded metadata if present."""
    path = Path(path)
    cycles_meta = slots_meta = None
    rows: list[tuple[int, int, int]] = []
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if tok.startswith("cycles="):
                        cycles_meta = int(tok.partition("=")[2])
                    elif tok.startswith("slots="):
                        slots_meta = int(tok.partition("=")[2])
                continue
            if line.lower().startswith("cycle"):
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 'cycle,slot,detector'")
            try:
                rows.append((int(parts[0]), int(parts[1]), int(parts[2])))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    n_cycles = n_cycles if n_cycles is not None else cycles_meta
    slots_per_cycle = slots_per_cycle if slots_per_cycle is not None else slots_meta
    if n_cycles is None or slots_per_cycle is None:
        raise DataError(
            f"{path}: cycle/slot geometry not embedded; pass n_cycles and slots_per_cycle"
        )
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
    stream = ClickStream(n_cycles, slots_per_cycle, arr[:, 0], arr[:, 1], arr[:, 2])
    stream.validate()
    return stream


def write_sequence(seq: np.ndarray, path: str | Path) -> None:
    np.savetxt(path, np.asarray(seq, dtype=np.int64), fmt="%d")


def read_sequence(path: str | Path, p: int | None = None) -> np.ndarray:
    path = Path(path)
    try:
        seq = np.loadtxt(path, dtype=np.int64, comments="#", ndmin=1)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if seq.size == 0:
        raise DataError(f"{path}: empty sequence file")
    if seq.min() < 0:
        raise DataError(f"{path}: negative label id")
    if p is not None and seq.max() >= p:
        raise DataError(f"{path}: label id {seq.max()} out of range [0, {p})")
    return seq.astype(_SEQUENCE_DTYPE)


@dataclass
class CorrelationModel:
    """Relative intensity deviations keyed by the recent label pattern.

    ``epsilon`` maps a length-``k`` tuple (the ``k-1`` preceding labels plus
    the current label, oldest first) to a relative deviation of the emitted
    mean photon number.  ``jitter_sigma`` adds per-pulse Gaussian spread per
    label.  Pulses without a full history are emitted at nominal intensity.
    """

    k: int
    p: int
    epsilon: dict[tuple[int, ...], float] = field(default_factory=dict)
    jitter_sigma: dict[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        check_group_count(self.p, self.k)
        for key, eps in self.epsilon.items():
            if len(key) != self.k:
                raise DomainError(f"epsilon key {key} must have length k={self.k}")
            if any(not 0 <= lab < self.p for lab in key):
                raise DomainError(f"epsilon key {key} has label out of range")
            if eps <= -1.0:
                raise DomainError(f"epsilon {eps} would drive intensity negative")
        for lab, sig in self.jitter_sigma.items():
            if not 0 <= lab < self.p:
                raise DomainError(f"jitter label {lab} out of range")
            if sig < 0:
                raise DomainError(f"jitter sigma must be >= 0, got {sig}")

    def epsilon_flat(self) -> np.ndarray:
        """Deviation table as a dense array over pattern indices."""
        table = np.zeros(self.p**self.k, dtype=float)
        for key, eps in self.epsilon.items():
            idx = 0
            for lab in key:
                idx = idx * self.p + lab
            table[idx] = eps
        return table

    def jitter_flat(self) -> np.ndarray:
        table = np.zeros(self.p, dtype=float)
        for lab, sig in self.jitter_sigma.items():
            table[lab] = sig
        return table


def generate_sequence(
    source: SourceSpec,
    length: int,
    seed: int | np.random.Generator = 0,
    mode: str = "iid",
) -> np.ndarray:
    """Draw a label string from the source's ratio distribution.

    ``iid`` draws every position independently.  ``fixed-string`` draws the
    string the same way but marks it for whole-string repetition by the
    caller; the draw itself is identical.
    """
    if mode not in ("iid", "fixed-string"):
        raise DomainError(f"unknown sequence mode {mode!r}")
    if length < 1:
        raise DomainError(f"length must be >= 1, got {length}")
    rng = (
        seed
        if isinstance(seed, np.random.Generator)
        else np.random.default_rng(np.random.SeedSequence(seed))
    )
    probs = np.asarray(source.probabilities())
    return rng.choice(len(probs), size=length, p=probs).astype(_SEQUENCE_DTYPE)


def _pattern_ids_circular(seq: np.ndarray, p: int, k: int) -> np.ndarray:
    """Pattern index at each position, wrapping the history around the ends.

    Position ``t`` gets the index of ``(seq[t-k+1], ..., seq[t])`` with
    indices taken modulo ``len(seq)``, which equals the in-stream pattern
    for every position of a whole-string repetition after the first copy.
    """
    n = seq.size
    ids = np.zeros(n, dtype=np.int64)
    for j in range(k):
        shift = k - 1 - j
        ids = ids * p + np.roll(seq, shift).astype(np.int64)
    return ids


def emit_intensities(
    seq: np.ndarray,
    model: CorrelationModel | None,
    nominal_mus,
    seed: int | np.random.Generator = 0,
    prefix: np.ndarray | None = None,
) -> np.ndarray:
    """Mean photon number per pulse with correlations and jitter applied.

    ``prefix`` supplies the labels emitted immediately before ``seq`` (for
    repeated strings, the tail of the previous copy); without it the first
    ``k-1`` pulses have no full history and are emitted at nominal.
    """
    seq = np.asarray(seq)
    mus = np.asarray(nominal_mus, dtype=float)
    if np.any(mus < 0):
        raise DomainError("nominal intensities must be >= 0")
    base = mus[seq]
    if model is None:
        return base

    k = model.k
    if k > 1:
        if prefix is not None:
            prefix = np.asarray(prefix)
            if prefix.size < k - 1:
                raise DomainError(f"prefix needs at least k-1={k-1} labels")
            ext = np.concatenate([prefix[-(k - 1):], seq])
        else:
            ext = seq
        ids = np.zeros(ext.size, dtype=np.int64)
        for j in range(k):
            shift = k - 1 - j
            shifted = np.empty_like(ext, dtype=np.int64)
            shifted[shift:] = ext[: ext.size - shift]
            shifted[:shift] = 0
            ids = ids * model.p + shifted
        ids = ids[ext.size - seq.size:]
        eps = model.epsilon_flat()[ids]
        if prefix is None:
            eps[: k - 1] = 0.0
    else:
        eps = model.epsilon_flat()[seq.astype(np.int64)]

    factor = 1.0 + eps
    jitter = model.jitter_flat()
    if np.any(jitter > 0):
        rng = (
            seed
            if isinstance(seed, np.random.Generator)
            else np.random.default_rng(np.random.SeedSequence(seed))
        )
        factor = factor * (1.0 + rng.normal(0.0, 1.0, size=seq.size) * jitter[seq])
    return np.clip(base * factor, 0.0, None)


def bb84_click_probabilities(
    intensities: np.ndarray, eta: float, dark_rate: float = 0.0
) -> np.ndarray:
    if not 0 < eta <= 1:
        raise DomainError(f"eta must be in (0, 1], got {eta}")
    if not 0 <= dark_rate < 1:
        raise DomainError(f"dark rate must be in [0, 1), got {dark_rate}")
    return 1.0 - (1.0 - dark_rate) * np.exp(-eta * np.asarray(intensities, dtype=float))


def simulate_bb84_detection(
    intensities: np.ndarray,
    eta: float,
    dark_rate: float = 0.0,
    seed: int | np.random.Generator = 0,
    cycle_index: int = 0,
    n_cycles: int = 1,
) -> ClickStream:
    """Threshold detection of one string of pulses on a single detector."""
    probs = bb84_click_probabilities(intensities, eta, dark_rate)
    rng = (
        seed
        if isinstance(seed, np.random.Generator)
        else np.random.default_rng(np.random.SeedSequence(seed))
    )
    clicked = np.flatnonzero(rng.random(probs.size) < probs)
    return ClickStream(
        n_cycles=n_cycles,
        slots_per_cycle=int(probs.size),
        cycle=np.full(clicked.size, cycle_index, dtype=np.int64),
        slot=clicked,
        detector=np.zeros(clicked.size, dtype=np.int64),
    )


def repetition_rng(seed: int, repetition: int) -> np.random.Generator:
    """Generator for one repetition, independent of shard layout."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(repetition,)))


def bb84_repeated_run(
    config: ExperimentConfig,
    seq: np.ndarray,
    model: CorrelationModel | None = None,
    mode: str = "exact",
    threads: int = 1,
) -> "GroupCounters":
    """Simulate ``repetitions`` copies of ``seq`` and tally group counters.

    Clicks are counted directly into per-group accumulators without
    materializing the event list, which keeps memory flat for large runs.
    The result is identical to simulating each repetition separately and
    feeding the merged click stream through the counting stage.
    """
    from .characterize import count_transmissions

    seq = np.asarray(seq, dtype=_SEQUENCE_DTYPE)
    if seq.size != config.sequence_length:
        raise DomainError(
            f"sequence length {seq.size} != configured {config.sequence_length}"
        )
    p, k, r = config.p, config.k, config.repetitions
    counters = count_transmissions(seq, p, k, repetitions=r, mode=mode)
    pids = _pattern_ids_circular(seq, p, k)
    mus = np.asarray(config.source.mus, dtype=float)
    tail = seq[-(k - 1):] if k > 1 else None

    jitterless = model is None or not any(
        s > 0 for s in model.jitter_sigma.values()
    )
    prob_first = bb84_click_probabilities(
        emit_intensities(seq, model, mus, seed=0, prefix=None),
        config.eta,
        config.dark_rate,
    )
    prob_later = bb84_click_probabilities(
        emit_intensities(seq, model, mus, seed=0, prefix=tail),
        config.eta,
        config.dark_rate,
    )

    def run_range(lo: int, hi: int) -> tuple[np.ndarray, int]:
        counts = np.zeros(p**k, dtype=np.int64)
        discarded = 0
        for rep in range(lo, hi):
            rng = repetition_rng(config.seed, rep)
            if jitterless:
                probs = prob_first if rep == 0 else prob_later
            else:
                prefix = None if rep == 0 else tail
                intens = emit_intensities(seq, model, mus, seed=rng, prefix=prefix)
                probs = bb84_click_probabilities(intens, config.eta, config.dark_rate)
            clicked = np.flatnonzero(rng.random(seq.size) < probs)
            if rep == 0 and k > 1:
                lead = clicked[clicked < k - 1]
                discarded += int(lead.size)
                clicked = clicked[clicked >= k - 1]
            counts += np.bincount(pids[clicked], minlength=p**k)
        return counts, discarded

    if threads <= 1:
        total, discarded = run_range(0, r)
    else:
        bounds = np.linspace(0, r, threads + 1, dtype=int)
        total = np.zeros(p**k, dtype=np.int64)
        discarded = 0
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for counts, disc in pool.map(
                lambda ab: run_range(ab[0], ab[1]), zip(bounds[:-1], bounds[1:])
            ):
                total += counts
                discarded += disc

    counters.C = total
    counters.discarded = discarded
    return counters


# Detector routing for the measurement node: Z-basis photons can only reach
# the detectors matching their polarization, X-basis photons any of the four.
_Z_H_DETECTORS = np.array([0, 2])
_Z_V_DETECTORS = np.array([1, 3])
_ALL_DETECTORS = np.array([0, 1, 2, 3])


def _route_detector(symbol: int, rng: np.random.Generator) -> int:
    if symbol == 0:
        return int(rng.choice(_Z_H_DETECTORS))
    if symbol == 1:
        return int(rng.choice(_Z_V_DETECTORS))
    return int(rng.choice(_ALL_DETECTORS))


def simulate_mdi_detection(
    intensities_a: np.ndarray,
    intensities_b: np.ndarray,
    symbols_a: np.ndarray,
    symbols_b: np.ndarray,
    eta: float,
    seed: int | np.random.Generator = 0,
    cycle_index: int = 0,
    n_cycles: int = 1,
) -> ClickStream:
    """One cycle of two-source interference at a four-detector node.

    Each side's pulse clicks independently with probability
    ``1 - exp(-eta*m/2)``; a clicking photon lands on a detector allowed
    for its symbol's basis and polarization.  Two photons on the same
    detector in the same slot merge into one event.
    """
    ia = np.asarray(intensities_a, dtype=float)
    ib = np.asarray(intensities_b, dtype=float)
    sa = np.asarray(symbols_a)
    sb = np.asarray(symbols_b)
    if not (ia.size == ib.size == sa.size == sb.size):
        raise DomainError("per-slot arrays must have equal length")
    if not 0 < eta <= 1:
        raise DomainError(f"eta must be in (0, 1], got {eta}")
    rng = (
        seed
        if isinstance(seed, np.random.Generator)
        else np.random.default_rng(np.random.SeedSequence(seed))
    )
    events: set[tuple[int, int]] = set()
    for side_int, side_sym in ((ia, sa), (ib, sb)):
        probs = 1.0 - np.exp(-eta * side_int / 2.0)
        hits = np.flatnonzero(rng.random(side_int.size) < probs)
        for slot in hits:
            events.add((int(slot), _route_detector(int(side_sym[slot]), rng)))
    ordered = sorted(events)
    slots = np.array([s for s, _ in ordered], dtype=np.int64)
    dets = np.array([d for _, d in ordered], dtype=np.int64)
    return ClickStream(
        n_cycles=n_cycles,
        slots_per_cycle=int(ia.size),
        cycle=np.full(slots.size, cycle_index, dtype=np.int64),
        slot=slots,
        detector=dets,
    )


def concatenate_streams(streams: list[ClickStream]) -> ClickStream:
    """Merge per-cycle streams that share geometry into one ordered stream."""
    if not streams:
        raise DomainError("need at least one stream")
    slots = streams[0].slots_per_cycle
    n_cycles = max(s.n_cycles for s in streams)
    if any(s.slots_per_cycle != slots for s in streams):
        raise DataError("streams disagree on slots_per_cycle")
    cycle = np.concatenate([s.cycle for s in streams])
    slot = np.concatenate([s.slot for s in streams])
    det = np.concatenate([s.detector for s in streams])
    order = np.lexsort((det, slot, cycle))
    return ClickStream(n_cycles, slots, cycle[order], slot[order], det[order])
