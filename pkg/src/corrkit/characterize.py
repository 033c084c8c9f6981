"""Group counting and click-rate statistics for repeated label strings.

The pipeline follows four bookkeeping stages: group every pulse by the
pattern of its ``k-1`` predecessors plus its own label, count how many
times each group was transmitted, collect detector clicks into the same
groups, and reduce to per-group rates with fluctuation summaries.

Transmission accounting for a string repeated ``r`` times is exact by
default: windows spanning the repetition seam occur ``r - 1`` times, one
less than in-string windows.  ``mode="paper-compat"`` instead multiplies
the circular per-string counts by ``r``, the convention used in published
summary tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DomainError
from .model import SourceSpec, check_group_count, pattern_name
from .simulate import ClickStream, _pattern_ids_circular

LOW_TRANSMISSION_THRESHOLD = 10_000

_MODES = ("exact", "paper-compat")


@dataclass
class GroupCounters:
    """Per-group transmission and click tallies, mergeable across shards."""

    p: int
    k: int
    repetitions: int
    sequence_length: int
    mode: str
    G: np.ndarray
    T: np.ndarray
    C: np.ndarray
    discarded: int = 0

    def __post_init__(self) -> None:
        groups = check_group_count(self.p, self.k)
        for name in ("G", "T", "C"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            if arr.shape != (groups,):
                raise DomainError(f"{name} must have shape ({groups},)")
            setattr(self, name, arr)

    @property
    def groups(self) -> int:
        return self.p**self.k

    def merge(self, other: "GroupCounters") -> "GroupCounters":
        """Combine counters from disjoint repetition shards of one run."""
        if (self.p, self.k, self.mode, self.sequence_length) != (
            other.p,
            other.k,
            other.mode,
            other.sequence_length,
        ):
            raise DataError("cannot merge counters with different geometry")
        if not np.array_equal(self.G, other.G):
            raise DataError("cannot merge counters from different base strings")
        return GroupCounters(
            p=self.p,
            k=self.k,
            repetitions=self.repetitions + other.repetitions,
            sequence_length=self.sequence_length,
            mode=self.mode,
            G=self.G.copy(),
            T=self.T + other.T,
            C=self.C + other.C,
            discarded=self.discarded + other.discarded,
        )

    def __add__(self, other: "GroupCounters") -> "GroupCounters":
        return self.merge(other)


def _window_pattern_ids(seq: np.ndarray, p: int, k: int) -> np.ndarray:
    """Pattern index of every complete window in a linear string."""
    n = seq.size
    if n < k:
        return np.empty(0, dtype=np.int64)
    ids = np.zeros(n - k + 1, dtype=np.int64)
    for j in range(k):
        ids = ids * p + seq[j : n - k + 1 + j].astype(np.int64)
    return ids


def count_transmissions(
    seq: np.ndarray,
    p: int,
    k: int,
    repetitions: int = 1,
    mode: str = "exact",
) -> GroupCounters:
    """Count how often each pattern group is transmitted.

    ``G`` holds the per-string occurrence counts (circular, so seam
    windows of a repeated string are included once each).  For a single
    pass (``repetitions=1``) only complete windows are counted and
    ``T == G``.
    """
    if mode not in _MODES:
        raise DomainError(f"mode must be one of {_MODES}, got {mode!r}")
    seq = np.asarray(seq)
    groups = check_group_count(p, k)
    if seq.ndim != 1 or seq.size < k:
        raise DomainError(f"sequence must be 1-D with at least k={k} labels")
    if seq.min() < 0 or seq.max() >= p:
        raise DataError(f"label ids must be in [0, {p})")
    if repetitions < 1:
        raise DomainError(f"repetitions must be >= 1, got {repetitions}")

    linear = np.bincount(_window_pattern_ids(seq, p, k), minlength=groups).astype(
        np.int64
    )
    circular = np.bincount(_pattern_ids_circular(seq, p, k), minlength=groups).astype(
        np.int64
    )
    r = repetitions
    if r == 1:
        G = linear if k > 1 else circular
        T = G.copy()
    else:
        G = circular
        if mode == "paper-compat":
            T = circular * r
        else:
            seam = circular - linear
            T = linear * r + seam * (r - 1)
    return GroupCounters(
        p=p,
        k=k,
        repetitions=r,
        sequence_length=int(seq.size),
        mode=mode,
        G=G,
        T=T,
        C=np.zeros(groups, dtype=np.int64),
    )


def collect_clicks(
    seq: np.ndarray,
    clicks: ClickStream,
    counters: GroupCounters,
    chunk_size: int = 1 << 20,
) -> GroupCounters:
    """Attribute detector clicks to pattern groups in one streaming pass.

    The pattern at cycle ``c``, slot ``s`` is read from the concatenated
    repeated string; clicks in the first ``k-1`` slots of the first cycle
    have no full history and are tallied as discarded.  Click positions
    outside the declared geometry raise :class:`DataError`.
    """
    seq = np.asarray(seq)
    p, k = counters.p, counters.k
    if seq.size != counters.sequence_length:
        raise DataError(
            f"sequence length {seq.size} != counters' {counters.sequence_length}"
        )
    if clicks.slots_per_cycle != seq.size:
        raise DataError(
            f"click stream slots_per_cycle {clicks.slots_per_cycle} != sequence length {seq.size}"
        )
    if clicks.n_cycles > counters.repetitions:
        raise DataError(
            f"click stream spans {clicks.n_cycles} cycles, counters expect {counters.repetitions}"
        )
    pids = _pattern_ids_circular(seq, p, k)
    groups = counters.groups
    C = np.zeros(groups, dtype=np.int64)
    discarded = 0
    n = len(clicks)
    for lo in range(0, max(n, 1), chunk_size):
        hi = min(lo + chunk_size, n)
        if hi <= lo:
            break
        cyc = clicks.cycle[lo:hi]
        slot = clicks.slot[lo:hi]
        if cyc.size and (cyc.min() < 0 or cyc.max() >= counters.repetitions):
            bad = int(np.argmax((cyc < 0) | (cyc >= counters.repetitions)))
            raise DataError(f"event {lo + bad}: cycle {cyc[bad]} out of range")
        if slot.size and (slot.min() < 0 or slot.max() >= seq.size):
            bad = int(np.argmax((slot < 0) | (slot >= seq.size)))
            raise DataError(f"event {lo + bad}: slot {slot[bad]} out of range")
        headless = (cyc == 0) & (slot < k - 1)
        discarded += int(np.count_nonzero(headless))
        keep = slot[~headless]
        C += np.bincount(pids[keep], minlength=groups)
    counters.C = counters.C + C
    counters.discarded += discarded
    return counters


@dataclass
class RateTable:
    """Per-group click rates with binomial error bars."""

    p: int
    k: int
    T: np.ndarray
    C: np.ndarray
    rate: np.ndarray
    se: np.ndarray
    present: np.ndarray
    low_statistics: np.ndarray

    def pattern_names(self, source: SourceSpec) -> list[str]:
        return [pattern_name(i, source, self.k) for i in range(self.p**self.k)]


def click_rates(
    counters: GroupCounters,
    low_threshold: int = LOW_TRANSMISSION_THRESHOLD,
) -> RateTable:
    """Stage-4 reduction: exact division of clicks by transmissions.

    Groups that never occur are masked out rather than reported as zero;
    groups with fewer transmissions than ``low_threshold`` keep their rate
    but carry a low-statistics flag.
    """
    T = counters.T
    C = counters.C
    if np.any(C < 0) or np.any(T < 0):
        raise DataError("negative counts")
    over = C > T
    if np.any(over):
        bad = int(np.argmax(over))
        raise DataError(
            f"group {bad}: clicks {C[bad]} exceed transmissions {T[bad]}; "
            "click data is inconsistent with one logical detector per pulse"
        )
    present = T > 0
    rate = np.full(counters.groups, np.nan)
    se = np.full(counters.groups, np.nan)
    np.divide(C, T, out=rate, where=present)
    with np.errstate(invalid="ignore"):
        se_val = np.sqrt(rate * (1.0 - rate) / np.where(present, T, 1))
    se[present] = se_val[present]
    low = present & (T < low_threshold)
    return RateTable(
        p=counters.p,
        k=counters.k,
        T=T.copy(),
        C=C.copy(),
        rate=rate,
        se=se,
        present=present,
        low_statistics=low,
    )


def error_bars(counters: GroupCounters) -> np.ndarray:
    """Binomial standard error of each group's rate estimate."""
    return click_rates(counters).se


@dataclass(frozen=True)
class FluctuationStats:
    """Spread of click rates among the groups sharing a current label."""

    label: int
    n_groups: int
    mean: float
    maximum: float
    minimum: float
    argmax: int
    argmin: int
    abs_discrepancy: float
    rel_fluctuation: float


def fluctuation_stats(rates: RateTable) -> dict[int, FluctuationStats]:
    """Per current label: max/min/mean rate over its predecessor groups.

    The mean is unweighted over present groups.  Labels with no present
    group are omitted from the result.
    """
    p, k = rates.p, rates.k
    indices = np.arange(p**k)
    out: dict[int, FluctuationStats] = {}
    for label in range(p):
        sel = (indices % p == label) & rates.present
        if not np.any(sel):
            continue
        vals = rates.rate[sel]
        ids = indices[sel]
        mean = float(np.mean(vals))
        i_max = int(np.argmax(vals))
        i_min = int(np.argmin(vals))
        maximum = float(vals[i_max])
        minimum = float(vals[i_min])
        if mean == 0.0:
            rel = math.nan
        else:
            rel = (maximum - minimum) / mean
        out[label] = FluctuationStats(
            label=label,
            n_groups=int(np.count_nonzero(sel)),
            mean=mean,
            maximum=maximum,
            minimum=minimum,
            argmax=int(ids[i_max]),
            argmin=int(ids[i_min]),
            abs_discrepancy=maximum - minimum,
            rel_fluctuation=float(rel),
        )
    return out
