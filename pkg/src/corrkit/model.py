"""Core data model: intensity labels, pattern keys, and run configuration.

A pulsed source emits one of ``p`` intensity settings per gate.  A pattern
key is the tuple of the ``k-1`` labels preceding a pulse plus the label of
the pulse itself, ordered oldest to current, and is stored as a radix-``p``
integer so that counters are flat arrays of length ``p**k``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, DomainError

# Above this many groups the flat counter arrays stop being a sensible
# representation, so deeper histories are rejected up front.
MAX_GROUPS = 16_777_216


@dataclass(frozen=True)
class IntensityLabel:
    """One intensity setting of the modulated source."""

    id: int
    name: str
    nominal_mu: float
    ratio: float

    def __post_init__(self) -> None:
        if self.id < 0:
            raise DomainError(f"label id must be non-negative, got {self.id}")
        if not self.name:
            raise DomainError("label name must be non-empty")
        if self.nominal_mu < 0:
            raise DomainError(f"nominal_mu must be >= 0, got {self.nominal_mu}")
        if self.ratio < 0:
            raise DomainError(f"ratio must be >= 0, got {self.ratio}")


@dataclass(frozen=True)
class SourceSpec:
    """The set of ``p`` intensity settings a source cycles through."""

    labels: tuple[IntensityLabel, ...]

    def __post_init__(self) -> None:
        if len(self.labels) < 2:
            raise DomainError("a source needs at least two intensity settings")
        ids = [lab.id for lab in self.labels]
        if ids != list(range(len(self.labels))):
            raise DomainError(f"label ids must be 0..p-1 in order, got {ids}")
        names = [lab.name for lab in self.labels]
        if len(set(names)) != len(names):
            raise DomainError(f"label names must be unique, got {names}")
        if sum(lab.ratio for lab in self.labels) <= 0:
            raise DomainError("at least one label must have a positive ratio")

    @property
    def p(self) -> int:
        return len(self.labels)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(lab.name for lab in self.labels)

    @property
    def mus(self) -> tuple[float, ...]:
        return tuple(lab.nominal_mu for lab in self.labels)

    def probabilities(self) -> tuple[float, ...]:
        total = sum(lab.ratio for lab in self.labels)
        return tuple(lab.ratio / total for lab in self.labels)

    def id_of(self, name: str) -> int:
        for lab in self.labels:
            if lab.name == name:
                return lab.id
        raise DomainError(f"unknown label name {name!r}")


def encode_pattern(labels: tuple[int, ...] | list[int], p: int) -> int:
    """Map a length-k tuple of label ids (oldest first) to a flat index.

    The current pulse label is the least-significant radix-``p`` digit.
    """
    if p < 2:
        raise DomainError(f"p must be >= 2, got {p}")
    if len(labels) == 0:
        raise DomainError("pattern must have at least one label")
    index = 0
    for lab in labels:
        if not 0 <= lab < p:
            raise DomainError(f"label id {lab} out of range [0, {p})")
        index = index * p + lab
    return index


def decode_pattern(index: int, p: int, k: int) -> tuple[int, ...]:
    """Inverse of :func:`encode_pattern` for length-``k`` patterns."""
    if p < 2:
        raise DomainError(f"p must be >= 2, got {p}")
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    if not 0 <= index < p**k:
        raise DomainError(f"pattern index {index} out of range [0, {p**k})")
    digits = []
    for _ in range(k):
        digits.append(index % p)
        index //= p
    return tuple(reversed(digits))


def pattern_name(index: int, source: SourceSpec, k: int, sep: str = "-") -> str:
    """Human-readable name of a pattern group, oldest label first."""
    ids = decode_pattern(index, source.p, k)
    return sep.join(source.labels[i].name for i in ids)


def parse_pattern_name(text: str, source: SourceSpec, k: int, sep: str = "-") -> int:
    """Inverse of :func:`pattern_name`."""
    parts = text.strip().split(sep)
    if len(parts) != k:
        raise DomainError(f"pattern {text!r} does not have {k} labels")
    return encode_pattern(tuple(source.id_of(n) for n in parts), source.p)


def check_group_count(p: int, k: int) -> int:
    """Validate the (p, k) combination and return p**k."""
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    if p < 2:
        raise DomainError(f"p must be >= 2, got {p}")
    groups = p**k
    if groups > MAX_GROUPS:
        raise DomainError(
            f"p**k = {groups} exceeds the supported maximum of {MAX_GROUPS}; "
            "use a shorter history"
        )
    return groups


@dataclass
class ExperimentConfig:
    """Everything needed to drive one simulated or measured run."""

    source: SourceSpec
    k: int = 2
    l: int = 1
    eta: float = 1e-3
    repetitions: int = 1
    sequence_length: int = 10_000
    seed: int = 0
    shards: int = 1
    target_source: int = 0
    dark_rate: float = 0.0

    def __post_init__(self) -> None:
        check_group_count(self.source.p, self.k)
        if self.l < 1:
            raise DomainError(f"l must be >= 1, got {self.l}")
        if not 0 < self.eta <= 1:
            raise DomainError(f"eta must be in (0, 1], got {self.eta}")
        if self.repetitions < 1:
            raise DomainError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.sequence_length < 1:
            raise DomainError(f"sequence_length must be >= 1, got {self.sequence_length}")
        if self.shards < 1:
            raise DomainError(f"shards must be >= 1, got {self.shards}")
        if not 0 <= self.target_source < self.l:
            raise DomainError(
                f"target_source must be in [0, {self.l}), got {self.target_source}"
            )
        if not 0 <= self.dark_rate < 1:
            raise DomainError(f"dark_rate must be in [0, 1), got {self.dark_rate}")

    @property
    def p(self) -> int:
        return self.source.p


_KEY_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(\S+)$")

_INT_KEYS = {"p", "k", "l", "repetitions", "seed", "length", "shards", "target"}
_FLOAT_KEYS = {"eta", "dark"}


def parse_config(path: str | Path) -> ExperimentConfig:
    """Read a line-oriented run configuration file.

    Recognized lines::

        key = value            # p, k, l, eta, repetitions, seed, length,
                               # shards, target, dark
        label <name> <mu> <ratio>

    ``#`` starts a comment; blank lines are ignored.  Labels get ids in
    declaration order.
    """
    path = Path(path)
    scalars: dict[str, float | int] = {}
    labels: list[IntensityLabel] = []
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("label"):
            parts = line.split()
            if len(parts) != 4:
                raise ConfigError(
                    f"{path}:{lineno}: label lines need 'label <name> <mu> <ratio>'"
                )
            _, name, mu_s, ratio_s = parts
            try:
                mu, ratio = float(mu_s), float(ratio_s)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc
            labels.append(IntensityLabel(len(labels), name, mu, ratio))
            continue
        m = _KEY_RE.match(line)
        if m is None:
            raise ConfigError(f"{path}:{lineno}: cannot parse {raw!r}")
        key, value = m.group(1), m.group(2)
        try:
            if key in _INT_KEYS:
                scalars[key] = int(value)
            elif key in _FLOAT_KEYS:
                scalars[key] = float(value)
            else:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc

    if not labels:
        raise ConfigError(f"{path}: no label lines found")
    if "p" in scalars and scalars["p"] != len(labels):
        raise ConfigError(
            f"{path}: p = {scalars['p']} but {len(labels)} labels are declared"
        )
    source = SourceSpec(tuple(labels))
    try:
        return ExperimentConfig(
            source=source,
            k=int(scalars.get("k", 2)),
            l=int(scalars.get("l", 1)),
            eta=float(scalars.get("eta", 1e-3)),
            repetitions=int(scalars.get("repetitions", 1)),
            sequence_length=int(scalars.get("length", 10_000)),
            seed=int(scalars.get("seed", 0)),
            shards=int(scalars.get("shards", 1)),
            target_source=int(scalars.get("target", 0)),
            dark_rate=float(scalars.get("dark", 0.0)),
        )
    except DomainError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
