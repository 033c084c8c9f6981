"""Cross-cycle coincidence counting for a two-source interference setup.

A run is a long train of cycles, each replaying the same pair of symbol
strings.  Slots where both sources chose the same basis are valid; valid
slots are grouped by the target source's intensity pattern (the raw
predecessor's label plus the current label).  Within a block of ``n_b``
consecutive cycles, clicks at the same slot of two different cycles are
paired, which amplifies the number of usable transmissions per group to
``G_i * n_b * (n_b - 1) / 2``.

Pairing convention: conceptually every click on the first detector of a
configured pair can match every click on the second detector, which over a
block yields ``n_b**2`` expected pairings per transmission at independent
per-cycle click rate ``d``.  The counter keeps the cross-cycle part of
that matching in one fixed role orientation: the pair's lower-id detector
must click in the earlier cycle, the higher-id one in the later cycle.
That keeps exactly half of the off-diagonal pairings, matching the halved
amplification factor above, so measured rates stay calibrated at ``d**2``;
counting both role orders per cycle pair would double the numerator
without doubling the denominator.  All clicks participate regardless of
how many other detectors fired in their cycle.  Same-cycle conforming
click pairs (the diagonal of the full matching) are never merged into
``C_i``; they are tallied separately as a diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DomainError
from .model import check_group_count
from .simulate import ClickStream

N_DETECTORS = 4

# Symbol alphabet of the modulated sources: 0/1 signal in the rectilinear
# basis (H/V), 2..7 decoy and vacuum settings in the diagonal basis.
Z_BASIS_SYMBOLS = frozenset({0, 1})
X_BASIS_SYMBOLS = frozenset({2, 3, 4, 5, 6, 7})

# Symbol -> intensity label id, ordered vacuum, weak decoy, strong decoy,
# signal (0..3) to match the row/column order of the bundled tables.
LABEL_OMEGA, LABEL_NU, LABEL_MU, LABEL_S = 0, 1, 2, 3
SYMBOL_TO_LABEL = {
    0: LABEL_S,
    1: LABEL_S,
    2: LABEL_MU,
    3: LABEL_MU,
    4: LABEL_NU,
    5: LABEL_NU,
    6: LABEL_OMEGA,
    7: LABEL_OMEGA,
}

PSI_PLUS = "psi+"
PSI_MINUS = "psi-"


def _canonical_pair(a: int, b: int) -> tuple[int, int]:
    if a == b:
        raise DomainError(f"a detector pair needs two distinct detectors, got {a},{b}")
    if not (0 <= a < N_DETECTORS and 0 <= b < N_DETECTORS):
        raise DomainError(f"detector ids must be in [0, {N_DETECTORS})")
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class BsmPatternTable:
    """Detector pairs whose joint click projects onto a Bell state.

    Pairs are unordered and stored lower-id first.  The same pair cannot
    appear in both classes.
    """

    psi_plus: tuple[tuple[int, int], ...]
    psi_minus: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        plus = tuple(sorted(_canonical_pair(*pr) for pr in self.psi_plus))
        minus = tuple(sorted(_canonical_pair(*pr) for pr in self.psi_minus))
        if set(plus) & set(minus):
            raise DomainError("a detector pair cannot be both psi+ and psi-")
        if len(set(plus)) != len(plus) or len(set(minus)) != len(minus):
            raise DomainError("duplicate detector pair in pattern table")
        object.__setattr__(self, "psi_plus", plus)
        object.__setattr__(self, "psi_minus", minus)

    def all_pairs(self) -> tuple[tuple[int, int], ...]:
        return self.psi_plus + self.psi_minus

    def classify_pair(self, a: int, b: int) -> str | None:
        pair = _canonical_pair(a, b)
        if pair in self.psi_plus:
            return PSI_PLUS
        if pair in self.psi_minus:
            return PSI_MINUS
        return None


def default_bsm_table() -> BsmPatternTable:
    """Conventional polarization assignment: D1/D3 horizontal, D2/D4 vertical.

    Same-port H and V clicks project onto psi+, opposite-port onto psi-.
    The mapping is configurable because hardware wiring varies.
    """
    return BsmPatternTable(psi_plus=((0, 1), (2, 3)), psi_minus=((0, 3), (1, 2)))


def parse_pattern_table(path: str | Path) -> BsmPatternTable:
    """Read lines of the form ``PSI+ D1 D2`` or ``PSI- D2 D3``."""
    path = Path(path)
    plus: list[tuple[int, int]] = []
    minus: list[tuple[int, int]] = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 'PSI+|PSI- D<i> D<j>'")
        cls, da, db = parts
        try:
            ids = tuple(int(tok.upper().lstrip("D")) - 1 for tok in (da, db))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad detector name: {exc}") from exc
        if cls.upper() == "PSI+":
            plus.append(ids)
        elif cls.upper() == "PSI-":
            minus.append(ids)
        else:
            raise DataError(f"{path}:{lineno}: unknown class {cls!r}")
    try:
        return BsmPatternTable(psi_plus=tuple(plus), psi_minus=tuple(minus))
    except DomainError as exc:
        raise DataError(f"{path}: {exc}") from exc


def classify_bsm(half_one, half_two, table: BsmPatternTable) -> str | None:
    """Bell class of a candidate pair of click sets, or ``None``.

    Each half must contain exactly one click and the two detectors must
    form a configured pair; the classification itself ignores which half
    came first.
    """
    one = set(int(d) for d in half_one)
    two = set(int(d) for d in half_two)
    if len(one) != 1 or len(two) != 1:
        return None
    (a,) = one
    (b,) = two
    if a == b:
        return None
    return table.classify_pair(a, b)


def symbols_to_labels(symbols: np.ndarray) -> np.ndarray:
    """Map the 8-symbol alphabet onto the four intensity labels."""
    symbols = np.asarray(symbols)
    if symbols.size and (symbols.min() < 0 or symbols.max() > 7):
        raise DataError("symbols must be in [0, 8)")
    lut = np.array([SYMBOL_TO_LABEL[s] for s in range(8)], dtype=np.int16)
    return lut[symbols]


def filter_same_basis(symbols_a: np.ndarray, symbols_b: np.ndarray) -> np.ndarray:
    """Boolean mask of slots where both sources used the same basis."""
    sa = np.asarray(symbols_a)
    sb = np.asarray(symbols_b)
    if sa.shape != sb.shape:
        raise DataError("symbol strings must have equal length")
    if sa.size and (min(sa.min(), sb.min()) < 0 or max(sa.max(), sb.max()) > 7):
        raise DataError("symbols must be in [0, 8)")
    za = sa <= 1
    zb = sb <= 1
    return za == zb


def count_valid_transmissions(
    labels: np.ndarray,
    valid: np.ndarray,
    p: int = 4,
    k: int = 2,
) -> np.ndarray:
    """Per-group occurrence counts over valid slots of one string replay.

    The pattern of slot ``t`` uses the raw string's preceding labels
    regardless of their own validity; valid slots with an incomplete
    history (``t < k-1``) are skipped.
    """
    labels = np.asarray(labels)
    valid = np.asarray(valid, dtype=bool)
    if labels.shape != valid.shape:
        raise DataError("labels and validity mask must have equal length")
    groups = check_group_count(p, k)
    n = labels.size
    if n < k:
        return np.zeros(groups, dtype=np.int64)
    ids = np.zeros(n - k + 1, dtype=np.int64)
    for j in range(k):
        ids = ids * p + labels[j : n - k + 1 + j].astype(np.int64)
    sel = valid[k - 1 :]
    return np.bincount(ids[sel], minlength=groups).astype(np.int64)


@dataclass
class CrossCycleCounts:
    """Per-block coincidence tallies and counting diagnostics."""

    n_b: int
    n_blocks: int
    p: int
    k: int
    C_blocks: np.ndarray
    same_cycle: np.ndarray
    invalid_slot_events: int
    headless_events: int
    multi_click_cycles: int

    @property
    def C_mean(self) -> np.ndarray:
        return self.C_blocks.mean(axis=0)


def _slot_groups(labels: np.ndarray, valid: np.ndarray, p: int, k: int) -> np.ndarray:
    """Group id per slot; -1 where invalid or without full history."""
    n = labels.size
    out = np.full(n, -1, dtype=np.int64)
    if n < k:
        return out
    ids = np.zeros(n - k + 1, dtype=np.int64)
    for j in range(k):
        ids = ids * p + labels[j : n - k + 1 + j].astype(np.int64)
    out[k - 1 :] = ids
    out[~np.asarray(valid, dtype=bool)] = -1
    return out


def cross_cycle_coincidences(
    clicks: ClickStream,
    labels: np.ndarray,
    valid: np.ndarray,
    table: BsmPatternTable,
    n_b: int,
    n_blocks: int,
    p: int = 4,
    k: int = 2,
) -> CrossCycleCounts:
    """Count conforming click pairs across cycle pairs within each block.

    Runs in time proportional to the number of click events: per block and
    slot, pairs are accumulated arithmetically from running per-detector
    click totals instead of scanning all cycle pairs.
    """
    if n_b < 2:
        raise DomainError(f"n_b must be >= 2, got {n_b}")
    if n_blocks < 1:
        raise DomainError(f"n_blocks must be >= 1, got {n_blocks}")
    labels = np.asarray(labels)
    groups = check_group_count(p, k)
    if clicks.slots_per_cycle != labels.size:
        raise DataError(
            f"click stream slots_per_cycle {clicks.slots_per_cycle} != string length {labels.size}"
        )
    if len(clicks) and clicks.cycle.max() >= n_b * n_blocks:
        raise DataError(
            f"cycle {int(clicks.cycle.max())} outside {n_blocks} blocks of {n_b} cycles"
        )
    if len(clicks) and clicks.cycle.min() < 0:
        raise DataError("negative cycle index")
    if len(clicks) and (clicks.detector.min() < 0 or clicks.detector.max() >= N_DETECTORS):
        raise DataError(f"detector ids must be in [0, {N_DETECTORS})")

    slot_group = _slot_groups(labels, valid, p, k)
    valid = np.asarray(valid, dtype=bool)

    C_blocks = np.zeros((n_blocks, groups), dtype=np.int64)
    same_cycle = np.zeros(n_blocks, dtype=np.int64)
    if len(clicks) == 0:
        return CrossCycleCounts(
            n_b=n_b,
            n_blocks=n_blocks,
            p=p,
            k=k,
            C_blocks=C_blocks,
            same_cycle=same_cycle,
            invalid_slot_events=0,
            headless_events=0,
            multi_click_cycles=0,
        )

    slot = clicks.slot
    invalid_mask = ~valid[slot]
    invalid_slot_events = int(np.count_nonzero(invalid_mask))
    headless_mask = valid[slot] & (slot_group[slot] < 0)
    headless_events = int(np.count_nonzero(headless_mask))
    keep = ~(invalid_mask | headless_mask)

    slot = slot[keep]
    cycle = clicks.cycle[keep]
    det = clicks.detector[keep]
    if slot.size == 0:
        return CrossCycleCounts(
            n_b=n_b,
            n_blocks=n_blocks,
            p=p,
            k=k,
            C_blocks=C_blocks,
            same_cycle=same_cycle,
            invalid_slot_events=invalid_slot_events,
            headless_events=headless_events,
            multi_click_cycles=0,
        )
    block = cycle // n_b
    cyc = cycle % n_b

    order = np.lexsort((det, cyc, slot, block))
    slot, block, cyc, det = slot[order], block[order], cyc[order], det[order]

    # Cell = one (block, slot, cycle); a detector clicks at most once per
    # cell because the stream is strictly ordered.
    cell_key = (block * labels.size + slot) * n_b + cyc
    new_cell = np.empty(cell_key.size, dtype=bool)
    new_cell[0] = True
    np.not_equal(cell_key[1:], cell_key[:-1], out=new_cell[1:])
    cell_id = np.cumsum(new_cell) - 1
    n_cells = int(cell_id[-1]) + 1
    cell_start = np.flatnonzero(new_cell)
    start_of_cell = cell_start[cell_id]

    cell_sizes = np.bincount(cell_id)
    multi_click_cycles = int(np.count_nonzero(cell_sizes >= 2))

    # Same-cycle diagnostic: configured pairs fully present within a cell.
    bits = np.zeros(n_cells, dtype=np.int64)
    np.bitwise_or.at(bits, cell_id, np.int64(1) << det)
    cell_block = block[new_cell]
    for u, v in table.all_pairs():
        mask = (1 << u) | (1 << v)
        hit = (bits & mask) == mask
        if np.any(hit):
            np.add.at(same_cycle, cell_block[hit], 1)

    # Cross-cycle pairing: within each (block, slot) segment sorted by
    # cycle, every click on the pair's second detector matches each click
    # on the first detector from strictly earlier cycles.
    seg_key = block * labels.size + slot
    new_seg = np.empty(seg_key.size, dtype=bool)
    new_seg[0] = True
    np.not_equal(seg_key[1:], seg_key[:-1], out=new_seg[1:])
    seg_start = np.flatnonzero(new_seg)
    seg_id = np.cumsum(new_seg) - 1
    start_of_segment = seg_start[seg_id]
    group_of_event = slot_group[slot]
    flat_index = block * groups + group_of_event
    for u, v in table.all_pairs():
        cum_u = np.concatenate([[0], np.cumsum(det == u)])
        before = cum_u[start_of_cell] - cum_u[start_of_segment]
        sel = det == v
        if np.any(sel):
            np.add.at(C_blocks.reshape(-1), flat_index[sel], before[sel])
    return CrossCycleCounts(
        n_b=n_b,
        n_blocks=n_blocks,
        p=p,
        k=k,
        C_blocks=C_blocks,
        same_cycle=same_cycle,
        invalid_slot_events=invalid_slot_events,
        headless_events=headless_events,
        multi_click_cycles=multi_click_cycles,
    )


def naive_cross_cycle(
    clicks: ClickStream,
    labels: np.ndarray,
    valid: np.ndarray,
    table: BsmPatternTable,
    n_b: int,
    n_blocks: int,
    p: int = 4,
    k: int = 2,
) -> CrossCycleCounts:
    """Reference implementation scanning every cycle pair explicitly.

    Same convention as :func:`cross_cycle_coincidences`; quadratic in
    ``n_b`` and only meant for validating the fast path on small runs.
    """
    labels = np.asarray(labels)
    valid = np.asarray(valid, dtype=bool)
    groups = check_group_count(p, k)
    slot_group = _slot_groups(labels, valid, p, k)
    C_blocks = np.zeros((n_blocks, groups), dtype=np.int64)
    same_cycle = np.zeros(n_blocks, dtype=np.int64)
    invalid_slot_events = headless_events = multi_click = 0

    per_cell: dict[tuple[int, int, int], list[int]] = {}
    for c, s, d in zip(clicks.cycle, clicks.slot, clicks.detector):
        c, s, d = int(c), int(s), int(d)
        if not valid[s]:
            invalid_slot_events += 1
            continue
        if slot_group[s] < 0:
            headless_events += 1
            continue
        per_cell.setdefault((c // n_b, s, c % n_b), []).append(d)

    slots_seen: dict[tuple[int, int], dict[int, set[int]]] = {}
    for (b, s, cy), dets in per_cell.items():
        ds = set(dets)
        slots_seen.setdefault((b, s), {})[cy] = ds
        if len(ds) > 1:
            multi_click += 1
        for u, v in table.all_pairs():
            if u in ds and v in ds:
                same_cycle[b] += 1

    for (b, s), cycles in slots_seen.items():
        order = sorted(cycles)
        g = slot_group[s]
        for i_pos in range(len(order)):
            for j_pos in range(i_pos + 1, len(order)):
                di = cycles[order[i_pos]]
                dj = cycles[order[j_pos]]
                for u, v in table.all_pairs():
                    if u in di and v in dj:
                        C_blocks[b, g] += 1
    return CrossCycleCounts(
        n_b=n_b,
        n_blocks=n_blocks,
        p=p,
        k=k,
        C_blocks=C_blocks,
        same_cycle=same_cycle,
        invalid_slot_events=invalid_slot_events,
        headless_events=headless_events,
        multi_click_cycles=multi_click,
    )


@dataclass
class MdiRateTable:
    """Cross-cycle rates with the pair-amplified transmission denominator."""

    p: int
    k: int
    G: np.ndarray
    T: np.ndarray
    C_mean: np.ndarray
    rate: np.ndarray
    se: np.ndarray
    present: np.ndarray


def cross_cycle_rates(
    C_blocks: np.ndarray,
    G: np.ndarray,
    n_b: int,
    p: int = 4,
    k: int = 2,
) -> MdiRateTable:
    """Average per-block coincidences over ``T_i = G_i * n_b*(n_b-1)/2``."""
    if n_b < 2:
        raise DomainError(f"n_b must be >= 2, got {n_b}")
    groups = check_group_count(p, k)
    C_blocks = np.atleast_2d(np.asarray(C_blocks, dtype=float))
    G = np.asarray(G, dtype=np.int64)
    if G.shape != (groups,) or C_blocks.shape[1] != groups:
        raise DataError("counts and transmissions must cover all groups")
    C_mean = C_blocks.mean(axis=0)
    if np.any((G == 0) & (C_mean > 0)):
        bad = int(np.argmax((G == 0) & (C_mean > 0)))
        raise DataError(
            f"group {bad}: coincidences recorded but the group never occurs"
        )
    pairs = n_b * (n_b - 1) // 2
    T = G * pairs
    present = G > 0
    rate = np.full(groups, np.nan)
    se = np.full(groups, np.nan)
    np.divide(C_mean, T, out=rate, where=present)
    if C_blocks.shape[0] > 1:
        block_rates = C_blocks / np.where(present, T, 1)[None, :]
        se_val = block_rates.std(axis=0, ddof=1) / math.sqrt(C_blocks.shape[0])
        se[present] = se_val[present]
    return MdiRateTable(
        p=p, k=k, G=G, T=T, C_mean=C_mean, rate=rate, se=se, present=present
    )


def appendix_oracle(n_b: int, d: float) -> tuple[float, float]:
    """Expected full-matching coincidences by category enumeration.

    Enumerates the joint distribution of per-block click counts on the two
    detectors of a pair (each Binomial(n_b, d)) and sums ``j * k`` over all
    categories; the closed form is ``(n_b * d)**2``.  Returns
    ``(enumerated, closed_form)``.
    """
    if n_b < 1:
        raise DomainError(f"n_b must be >= 1, got {n_b}")
    if not 0 <= d <= 1:
        raise DomainError(f"d must be in [0, 1], got {d}")
    total = 0.0
    pmf = [
        math.comb(n_b, j) * d**j * (1.0 - d) ** (n_b - j) for j in range(n_b + 1)
    ]
    for j in range(n_b + 1):
        for kk in range(n_b + 1):
            total += pmf[j] * pmf[kk] * j * kk
    return total, (n_b * d) ** 2
