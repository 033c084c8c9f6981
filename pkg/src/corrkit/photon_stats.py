"""Click statistics of a gated threshold detector behind a lossy channel.

For a phase-randomized coherent pulse of mean photon number ``m`` and total
detection efficiency ``eta``, the click probability is ``1 - exp(-eta*m)``.
After-pulsing inflates the observed click rate by a factor ``1 + q``, which
the inversion removes before solving for ``m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class AfterPulseModel:
    """Residual after-pulse contribution of a gated detector.

    ``q`` is the after-pulse rate relative to the true click rate and
    ``tau`` the number of gates an avalanche paralyzes (kept for
    bookkeeping; the reduced correction only needs ``q``).
    """

    q: float = 0.0
    tau: int = 1

    def __post_init__(self) -> None:
        if self.q < 0:
            raise DomainError(f"after-pulse rate q must be >= 0, got {self.q}")
        if self.tau < 1:
            raise DomainError(f"tau must be >= 1 gate, got {self.tau}")


def click_probability(eta: float, m: float) -> float:
    """Probability that a pulse of mean photon number ``m`` clicks."""
    if not 0 < eta <= 1:
        raise DomainError(f"eta must be in (0, 1], got {eta}")
    if m < 0:
        raise DomainError(f"mean photon number must be >= 0, got {m}")
    return -math.expm1(-eta * m)


def observed_rate(eta: float, m: float, ap: AfterPulseModel | None = None) -> float:
    """Click rate including the after-pulse inflation factor."""
    q = ap.q if ap is not None else 0.0
    return click_probability(eta, m) * (1.0 + q)


def invert_click_rate(
    rate: float, eta: float, ap: AfterPulseModel | None = None
) -> float:
    """Solve ``rate = (1 + q) * (1 - exp(-eta*m))`` for ``m``.

    Raises :class:`DomainError` when the corrected rate reaches or exceeds
    the saturation value 1, where no finite intensity reproduces it.
    """
    if not 0 < eta <= 1:
        raise DomainError(f"eta must be in (0, 1], got {eta}")
    if rate < 0:
        raise DomainError(f"click rate must be >= 0, got {rate}")
    q = ap.q if ap is not None else 0.0
    corrected = rate / (1.0 + q)
    if corrected >= 1.0:
        raise DomainError(
            f"corrected click rate {corrected} is saturated; cannot invert"
        )
    return -math.log1p(-corrected) / eta


@dataclass(frozen=True)
class LinearityReport:
    """Origin-constrained straight-line fit of click probability vs intensity."""

    eta: float
    m_grid: tuple[float, ...]
    probabilities: tuple[float, ...]
    slope: float
    fitted: tuple[float, ...]
    max_relative_deviation: float


def linearity_report(eta: float, m_grid) -> LinearityReport:
    """Quantify how linear ``1 - exp(-eta*m)`` is over a grid of intensities.

    Fits ``P = slope * m`` through the origin by least squares and reports
    the worst relative deviation of the exact probability from the fit.
    A single-point grid fits exactly and reports zero deviation.
    """
    if not 0 < eta <= 1:
        raise DomainError(f"eta must be in (0, 1], got {eta}")
    grid = np.asarray(list(m_grid), dtype=float)
    if grid.size == 0:
        raise DomainError("intensity grid must not be empty")
    if np.any(grid <= 0):
        raise DomainError("intensity grid values must be positive")
    probs = -np.expm1(-eta * grid)
    slope = float(np.dot(probs, grid) / np.dot(grid, grid))
    fitted = slope * grid
    rel_dev = float(np.max(np.abs(probs - fitted) / probs))
    return LinearityReport(
        eta=eta,
        m_grid=tuple(float(x) for x in grid),
        probabilities=tuple(float(x) for x in probs),
        slope=slope,
        fitted=tuple(float(x) for x in fitted),
        max_relative_deviation=rel_dev,
    )
