"""Loaders for the reference datasets bundled with the package.

Two measured systems are covered: a four-intensity BB84 link (string,
aggregate counts, 20-block breakdown, source config) and a four-intensity
MDI link (symbol strings for both sources, valid-transmission table,
per-block cross-cycle coincidence table).  Set ``CORRKIT_DATA_DIR`` to
read the same file set from a different directory.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .characterize import GroupCounters
from .errors import DataError
from .model import ExperimentConfig, IntensityLabel, SourceSpec, parse_config, parse_pattern_name
from .photon_stats import AfterPulseModel
from .simulate import read_sequence

DATA_ENV = "CORRKIT_DATA_DIR"

MDI_N_BLOCKS = 10
MDI_CYCLES_PER_BLOCK = 160_000


def data_dir() -> Path:
    override = os.environ.get(DATA_ENV)
    if override:
        return Path(override)
    return Path(str(resources.files("corrkit") / "data"))


def _data_path(name: str) -> Path:
    path = data_dir() / name
    if not path.is_file():
        raise DataError(f"bundled dataset {name!r} not found under {data_dir()}")
    return path


def bb84_source() -> SourceSpec:
    return bb84_config().source


def bb84_config() -> ExperimentConfig:
    return parse_config(_data_path("bb84.conf"))


def bb84_after_pulse() -> AfterPulseModel:
    """Detector after-pulse constants of the measured BB84 link."""
    return AfterPulseModel(q=0.022, tau=5)


def bb84_string() -> np.ndarray:
    return read_sequence(_data_path("bb84_string.txt"), p=4)


def bb84_counters() -> GroupCounters:
    """Aggregate (G, T, C) of the measured BB84 run."""
    config = bb84_config()
    source = config.source
    G = np.zeros(16, dtype=np.int64)
    T = np.zeros(16, dtype=np.int64)
    C = np.zeros(16, dtype=np.int64)
    with open(_data_path("bb84_counts.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            g = parse_pattern_name(row["pattern"], source, k=2)
            G[g] = int(row["G"])
            T[g] = int(row["T"])
            C[g] = int(row["C"])
    return GroupCounters(
        p=4,
        k=2,
        repetitions=config.repetitions,
        sequence_length=config.sequence_length,
        mode="paper-compat",
        G=G,
        T=T,
        C=C,
        discarded=0,
    )


@dataclass(frozen=True)
class BlockCounts:
    """Per-block click counts with the per-block transmission totals."""

    n_blocks: int
    T: np.ndarray
    C: np.ndarray

    def rates(self) -> np.ndarray:
        return self.C / self.T[None, :].astype(float)


def bb84_blocks() -> BlockCounts:
    source = bb84_source()
    rows: dict[tuple[int, int], tuple[int, int]] = {}
    with open(_data_path("bb84_blocks.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            g = parse_pattern_name(row["pattern"], source, k=2)
            rows[(int(row["block"]), g)] = (int(row["T"]), int(row["C"]))
    n_blocks = 1 + max(b for b, _ in rows)
    T = np.zeros(16, dtype=np.int64)
    C = np.zeros((n_blocks, 16), dtype=np.int64)
    for (b, g), (t, c) in rows.items():
        T[g] = t
        C[b, g] = c
    if len(rows) != n_blocks * 16:
        raise DataError("block table is missing (block, pattern) rows")
    return BlockCounts(n_blocks=n_blocks, T=T, C=C)


def mdi_source() -> SourceSpec:
    """The MDI source's label set; nominal intensities were not recorded."""
    return SourceSpec(
        labels=(
            IntensityLabel(0, "omega", 0.0, 1),
            IntensityLabel(1, "nu", 0.0, 1),
            IntensityLabel(2, "mu", 0.0, 3),
            IntensityLabel(3, "s", 0.0, 7),
        )
    )


def mdi_symbol_strings() -> tuple[np.ndarray, np.ndarray]:
    a = read_sequence(_data_path("mdi_alice_symbols.txt"), p=8)
    b = read_sequence(_data_path("mdi_bob_symbols.txt"), p=8)
    return a, b


def mdi_transmissions() -> np.ndarray:
    source = mdi_source()
    G = np.zeros(16, dtype=np.int64)
    with open(_data_path("mdi_transmissions.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            G[parse_pattern_name(row["pattern"], source, k=2)] = int(row["G"])
    return G


def mdi_coincidences() -> np.ndarray:
    """Per-block coincidence counts, shape (blocks, 16)."""
    source = mdi_source()
    rows: dict[tuple[int, int], int] = {}
    with open(_data_path("mdi_coincidences.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            g = parse_pattern_name(row["pattern"], source, k=2)
            rows[(int(row["block"]), g)] = int(row["C"])
    n_blocks = 1 + max(b for b, _ in rows)
    C = np.zeros((n_blocks, 16), dtype=np.int64)
    for (b, g), c in rows.items():
        C[b, g] = c
    if len(rows) != n_blocks * 16:
        raise DataError("coincidence table is missing (block, pattern) rows")
    return C


def toy_sequence() -> np.ndarray:
    return read_sequence(_data_path("toy_sequence.txt"), p=4)
