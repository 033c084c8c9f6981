"""Deviation bounds and decoy-state security analysis.

Per-group click rates fitted across measurement blocks give a Gaussian
picture of each group's emitted intensity; the spread relative to the
quietest group with the same current label yields a worst-case relative
deviation ``delta_max``.  That deviation widens the intensity interval
``[a(1-delta), a(1+delta)]`` entering the decoy-state linear program,
which lower-bounds the single-photon yield and upper-bounds the
single-photon error rate; both feed a standard GLLP-style key-rate
formula.

The linking coefficients that relate the n-photon yields of different
settings under correlated sources are problem inputs here: an identity
provider (valid only at zero deviation), a user-supplied table, or a
clearly heuristic built-in relaxation used for rendering rate curves.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from .errors import ConfigError, DataError, DomainError, InfeasibleError
from .photon_stats import AfterPulseModel, invert_click_rate

CoefficientProvider = Callable[[str, str, int], tuple[float, float, float, float]]

DEFAULT_N_CUT = 10


@dataclass(frozen=True)
class GroupGaussianFit:
    """Gaussian summary of a group's inverted intensity across blocks."""

    group: int
    current_label: int
    mean: float
    std: float
    n_blocks: int


def fit_group_gaussians(
    block_rates: np.ndarray,
    p: int,
    k: int,
    eta: float,
    ap: AfterPulseModel | None = None,
) -> dict[int, GroupGaussianFit]:
    """Invert per-block click rates to intensities and fit each group.

    ``block_rates`` has shape (blocks, p**k); NaN columns (absent groups)
    are skipped.  Needs at least two blocks for a spread estimate.
    """
    rates = np.atleast_2d(np.asarray(block_rates, dtype=float))
    groups = p**k
    if rates.shape[1] != groups:
        raise DataError(f"expected {groups} group columns, got {rates.shape[1]}")
    if rates.shape[0] < 2:
        raise DomainError("need at least two blocks to estimate dispersion")
    out: dict[int, GroupGaussianFit] = {}
    for g in range(groups):
        col = rates[:, g]
        if np.all(np.isnan(col)):
            continue
        if np.any(np.isnan(col)):
            raise DataError(f"group {g}: rate missing in some blocks")
        intensities = np.array([invert_click_rate(r, eta, ap) for r in col])
        out[g] = GroupGaussianFit(
            group=g,
            current_label=g % p,
            mean=float(np.mean(intensities)),
            std=float(np.std(intensities, ddof=1)),
            n_blocks=rates.shape[0],
        )
    return out


@dataclass(frozen=True)
class DeviationBound:
    """Three-sigma excursion of one group against its label's reference."""

    group: int
    reference_group: int
    a_minus: float
    a_plus: float
    delta: float
    clamped: bool


def deviation_bound(ref: GroupGaussianFit, alt: GroupGaussianFit) -> DeviationBound:
    """Interval ``mean_alt -/+ 3*sqrt(var_alt - var_ref)`` and its relative width.

    The reference group absorbs statistical noise common to all groups;
    when the alternative's variance falls below the reference's, the
    radicand clamps to zero with a warning.
    """
    if alt.mean <= 0:
        raise DomainError(
            f"group {alt.group}: non-positive mean intensity {alt.mean}; "
            "cannot form a relative deviation"
        )
    radicand = alt.std**2 - ref.std**2
    clamped = radicand < 0
    if clamped:
        warnings.warn(
            f"group {alt.group}: variance below reference group {ref.group}; "
            "clamping deviation to zero",
            stacklevel=2,
        )
        radicand = 0.0
    spread = 3.0 * math.sqrt(radicand)
    return DeviationBound(
        group=alt.group,
        reference_group=ref.group,
        a_minus=alt.mean - spread,
        a_plus=alt.mean + spread,
        delta=spread / alt.mean,
        clamped=clamped,
    )


def group_deviation_bounds(
    fits: dict[int, GroupGaussianFit], p: int
) -> dict[int, DeviationBound]:
    """Deviation of every group against the minimum-variance group sharing
    its current label."""
    by_label: dict[int, list[GroupGaussianFit]] = {}
    for fit in fits.values():
        by_label.setdefault(fit.current_label, []).append(fit)
    out: dict[int, DeviationBound] = {}
    for label, members in by_label.items():
        ref = min(members, key=lambda f: f.std)
        for fit in members:
            out[fit.group] = deviation_bound(ref, fit)
    return out


def delta_max(bounds: dict[int, DeviationBound]) -> float:
    """Worst relative deviation over all groups."""
    if not bounds:
        raise DomainError("no deviation bounds to maximize over")
    return max(b.delta for b in bounds.values())


def identity_coefficient_provider(
    a: str, b: str, n: int, delta_max: float = 0.0
) -> tuple[float, float, float, float]:
    """Equal-yield linking, valid only in the uncorrelated limit."""
    if delta_max != 0.0:
        raise ConfigError(
            "identity linking coefficients are only valid at delta_max = 0"
        )
    return (0.0, 0.0, 1.0, 1.0)


def table_coefficient_provider(path: str | Path) -> CoefficientProvider:
    """Provider backed by a file of ``a b n c+ c- m+ m-`` rows."""
    path = Path(path)
    table: dict[tuple[str, str, int], tuple[float, float, float, float]] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 7:
            raise DataError(
                f"{path}:{lineno}: expected 'a b n c+ c- m+ m-', got {raw!r}"
            )
        try:
            key = (parts[0], parts[1], int(parts[2]))
            vals = tuple(float(x) for x in parts[3:])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        table[key] = vals  # type: ignore[assignment]

    def provider(a: str, b: str, n: int) -> tuple[float, float, float, float]:
        try:
            return table[(a, b, n)]
        except KeyError:
            raise ConfigError(
                f"coefficient table {path} has no row for ({a}, {b}, n={n})"
            ) from None

    return provider


def linear_relaxation_provider(
    delta_max: float, scale: float = 1.0
) -> CoefficientProvider:
    """Heuristic linking that loosens linearly with photon number.

    ``|Y_n^a - Y_n^b| <= min(1, scale * delta_max * (n + 1))``.  This is an
    interpolation between exact equality at zero deviation and full
    decoupling, intended for exercising interfaces and rendering curves;
    it is NOT a certified security bound.  Certified coefficient sets must
    be supplied as a table.
    """
    if delta_max < 0:
        raise DomainError(f"delta_max must be >= 0, got {delta_max}")
    if scale < 0:
        raise DomainError(f"scale must be >= 0, got {scale}")

    def provider(a: str, b: str, n: int) -> tuple[float, float, float, float]:
        eps = min(1.0, scale * delta_max * (n + 1))
        return (eps, -eps, 1.0, 1.0)

    return provider


@dataclass
class DecoyLPProblem:
    """Data of one decoy-state yield estimation instance."""

    settings: dict[str, float]
    gains: dict[str, float]
    delta_max: float = 0.0
    n_cut: int = DEFAULT_N_CUT
    provider: CoefficientProvider = identity_coefficient_provider
    signal: str | None = None
    error_gains: dict[str, float] | None = None

    def __post_init__(self) -> None:
        if len(self.settings) < 2:
            raise ConfigError("need at least two intensity settings")
        for name, mu in self.settings.items():
            if mu < 0:
                raise ConfigError(f"setting {name}: intensity must be >= 0")
        if set(self.gains) != set(self.settings):
            raise ConfigError("gains must cover exactly the declared settings")
        for name, q in self.gains.items():
            if not 0 <= q <= 1:
                raise ConfigError(f"gain Q_{name}={q} outside [0, 1]")
        if not 0 <= self.delta_max < 1:
            raise ConfigError(f"delta_max must be in [0, 1), got {self.delta_max}")
        if self.n_cut < 1:
            raise ConfigError(f"n_cut must be >= 1, got {self.n_cut}")
        if self.signal is None:
            self.signal = max(self.settings, key=lambda nm: self.settings[nm])
        elif self.signal not in self.settings:
            raise ConfigError(f"signal setting {self.signal!r} not declared")
        if self.provider is identity_coefficient_provider and self.delta_max != 0.0:
            # Delegate so the provider's own contract raises the error.
            identity_coefficient_provider("", "", 0, self.delta_max)
        if self.error_gains is not None:
            if set(self.error_gains) != set(self.settings):
                raise ConfigError(
                    "error gains must cover exactly the declared settings"
                )
            for name, q in self.error_gains.items():
                if not 0 <= q <= 1:
                    raise ConfigError(f"error gain for {name} outside [0, 1]")


def _poisson_weight(a: float, n: int) -> float:
    return math.exp(-a) * a**n / math.factorial(n)


def _build_constraints(
    problem: DecoyLPProblem,
    observations: dict[str, float],
    orientation: str = "printed",
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Inequality rows ``A x <= b`` over variables Y_n^a, a-major.

    ``orientation`` selects where the widened intensities enter the gain
    constraints: ``"printed"`` keeps the published asymmetric placement
    (a+ on the lower constraint's vacuum term, a- on its tail);
    ``"mirrored"`` swaps a+ and a- throughout, for the strictness audit.
    """
    if orientation not in ("printed", "mirrored"):
        raise DomainError(f"unknown orientation {orientation!r}")
    names = sorted(problem.settings)
    n_cut = problem.n_cut
    nv = n_cut + 1
    dim = len(names) * nv
    rows: list[np.ndarray] = []
    rhs: list[float] = []
    delta = problem.delta_max

    def var(a_idx: int, n: int) -> int:
        return a_idx * nv + n

    for ai, name in enumerate(names):
        a = problem.settings[name]
        q = observations[name]
        a_plus = a * (1.0 + delta)
        a_minus = a * (1.0 - delta)
        if orientation == "mirrored":
            a_plus, a_minus = a_minus, a_plus
        # Gain from below: Q >= e^(-a+) Y0 + sum_n>=1 e^(-a-) (a-)^n/n! Yn
        row = np.zeros(dim)
        row[var(ai, 0)] = math.exp(-a_plus)
        for n in range(1, nv):
            row[var(ai, n)] = _poisson_weight(a_minus, n)
        rows.append(row)
        rhs.append(q)
        # Gain from above:
        # Q <= 1 - e^(-a+) + e^(-a-) Y0 - sum_n>=1 e^(-a+) a^n/n! (1 - Yn)
        row = np.zeros(dim)
        row[var(ai, 0)] = -math.exp(-a_minus)
        total = 0.0
        for n in range(1, nv):
            w = math.exp(-a_plus) * a**n / math.factorial(n)
            row[var(ai, n)] = -w
            total += w
        rows.append(row)
        rhs.append(1.0 - math.exp(-a_plus) - total - q)

    for ai, a_name in enumerate(names):
        for bi, b_name in enumerate(names):
            if ai == bi:
                continue
            for n in range(nv):
                c_plus, c_minus, m_plus, m_minus = problem.provider(
                    a_name, b_name, n
                )
                # Y_n^b <= c+ + m+ Y_n^a
                row = np.zeros(dim)
                row[var(bi, n)] = 1.0
                row[var(ai, n)] -= m_plus
                rows.append(row)
                rhs.append(c_plus)
                # Y_n^b >= c- + m- Y_n^a
                row = np.zeros(dim)
                row[var(bi, n)] = -1.0
                row[var(ai, n)] += m_minus
                rows.append(row)
                rhs.append(-c_minus)
    return np.array(rows), np.array(rhs), names


def _solve(
    c: np.ndarray, A_ub: np.ndarray, b_ub: np.ndarray
) -> tuple[float, np.ndarray]:
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=(0.0, 1.0), method="highs")
    if res.status == 2:
        raise InfeasibleError("decoy linear program is infeasible")
    if res.status != 0:
        raise InfeasibleError(f"decoy linear program failed: {res.message}")
    return float(res.fun), np.asarray(res.x)


@dataclass(frozen=True)
class DecoyBounds:
    """LP results for one instance."""

    y1_lower: float
    e1_upper: float | None
    y0_lower: float
    signal: str
    n_cut: int
    delta_max: float


def decoy_lp_bounds(
    problem: DecoyLPProblem, objective: str = "min_y1"
) -> DecoyBounds:
    """Solve the yield LP; optionally also the error-rate LP.

    ``objective`` is ``"min_y1"`` for the single-photon yield lower bound
    alone, or ``"max_e1"`` to additionally bound the single-photon error
    rate from above using the declared error gains.
    """
    if objective not in ("min_y1", "max_e1"):
        raise DomainError(f"unknown objective {objective!r}")
    A_ub, b_ub, names = _build_constraints(problem, problem.gains)
    nv = problem.n_cut + 1
    sig_idx = names.index(problem.signal)

    c = np.zeros(A_ub.shape[1])
    c[sig_idx * nv + 1] = 1.0
    y1_lower, _ = _solve(c, A_ub, b_ub)
    y1_lower = max(0.0, y1_lower)

    c0 = np.zeros(A_ub.shape[1])
    c0[sig_idx * nv + 0] = 1.0
    y0_lower, _ = _solve(c0, A_ub, b_ub)
    y0_lower = max(0.0, y0_lower)

    e1_upper: float | None = None
    if objective == "max_e1":
        if problem.error_gains is None:
            raise ConfigError("error gains are required for the e1 objective")
        A_err, b_err, _ = _build_constraints(problem, problem.error_gains)
        c = np.zeros(A_err.shape[1])
        c[sig_idx * nv + 1] = -1.0
        neg_w1_upper, _ = _solve(c, A_err, b_err)
        w1_upper = max(0.0, -neg_w1_upper)
        if w1_upper == 0.0:
            e1_upper = 0.0
        elif y1_lower <= 0.0:
            e1_upper = 0.5
        else:
            e1_upper = min(0.5, w1_upper / y1_lower)
    return DecoyBounds(
        y1_lower=y1_lower,
        e1_upper=e1_upper,
        y0_lower=y0_lower,
        signal=problem.signal,
        n_cut=problem.n_cut,
        delta_max=problem.delta_max,
    )


def ncut_convergence(problem: DecoyLPProblem, other_n_cut: int = 12) -> dict:
    """Drift of the yield bound when the photon-number cutoff changes."""
    base = decoy_lp_bounds(problem)
    alt_problem = DecoyLPProblem(
        settings=dict(problem.settings),
        gains=dict(problem.gains),
        delta_max=problem.delta_max,
        n_cut=other_n_cut,
        provider=problem.provider,
        signal=problem.signal,
        error_gains=dict(problem.error_gains) if problem.error_gains else None,
    )
    alt = decoy_lp_bounds(alt_problem)
    return {
        "n_cut": problem.n_cut,
        "other_n_cut": other_n_cut,
        "y1_lower": base.y1_lower,
        "y1_lower_other": alt.y1_lower,
        "drift": abs(base.y1_lower - alt.y1_lower),
    }


def orientation_audit(problem: DecoyLPProblem) -> dict:
    """Yield bound under both gain-constraint orientations.

    The published constraints place the widened intensities
    asymmetrically (a+ with the vacuum term of the lower constraint, a-
    with its tail); this diagnostic also solves the mirrored placement
    and reports which one is stricter.  The two coincide at zero
    deviation.
    """
    nv = problem.n_cut + 1
    out: dict[str, float] = {}
    for orientation in ("printed", "mirrored"):
        A_ub, b_ub, names = _build_constraints(
            problem, problem.gains, orientation
        )
        sig_idx = names.index(problem.signal)
        c = np.zeros(A_ub.shape[1])
        c[sig_idx * nv + 1] = 1.0
        try:
            value, _ = _solve(c, A_ub, b_ub)
            out[orientation] = max(0.0, value)
        except InfeasibleError:
            out[orientation] = float("nan")
    diff = out["printed"] - out["mirrored"]
    if math.isnan(out["mirrored"]) != math.isnan(out["printed"]):
        # An infeasible orientation admits no yield vector at all.
        stricter = "mirrored" if math.isnan(out["mirrored"]) else "printed"
    else:
        stricter = "printed" if diff >= 0 else "mirrored"
    return {
        "y1_lower_printed": out["printed"],
        "y1_lower_mirrored": out["mirrored"],
        "difference": diff,
        "stricter": stricter,
    }


def binary_entropy(x: float) -> float:
    """Shannon entropy of a binary variable, in bits."""
    if not 0 <= x <= 1:
        raise DomainError(f"entropy argument must be in [0, 1], got {x}")
    if x in (0.0, 1.0):
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def skr(
    q_sift: float,
    mu: float,
    gain: float,
    qber: float,
    y1_lower: float,
    e1_upper: float,
    f_ec: float = 1.16,
) -> float:
    """GLLP-style secure key rate per pulse, floored at zero.

    ``q_sift * (-gain * f_ec * H2(qber) + mu*e^-mu * Y1 * (1 - H2(e1)))``.
    """
    if not 0 < q_sift <= 1:
        raise DomainError(f"q_sift must be in (0, 1], got {q_sift}")
    if mu <= 0:
        raise DomainError(f"signal intensity must be > 0, got {mu}")
    if not 0 <= gain <= 1:
        raise DomainError(f"gain must be in [0, 1], got {gain}")
    if not 0 <= qber <= 0.5:
        raise DomainError(f"QBER must be in [0, 0.5], got {qber}")
    if not 0 <= e1_upper <= 0.5:
        raise DomainError(f"e1 must be in [0, 0.5], got {e1_upper}")
    if y1_lower < 0:
        raise DomainError(f"Y1 must be >= 0, got {y1_lower}")
    if f_ec < 1:
        raise DomainError(f"error-correction inefficiency must be >= 1, got {f_ec}")
    q1 = mu * math.exp(-mu) * y1_lower
    rate = q_sift * (
        -gain * f_ec * binary_entropy(qber) + q1 * (1.0 - binary_entropy(e1_upper))
    )
    return max(0.0, rate)


@dataclass(frozen=True)
class ChannelModel:
    """Idealized fiber channel and receiver used for rate curves."""

    alpha_db_per_km: float = 0.2
    eta_det: float = 0.1
    dark_rate: float = 6.0e-6
    e_misalign: float = 0.015
    e0: float = 0.5
    f_ec: float = 1.16
    q_sift: float = 0.5

    def efficiency(self, distance_km: float) -> float:
        if distance_km < 0:
            raise DomainError(f"distance must be >= 0, got {distance_km}")
        return self.eta_det * 10.0 ** (-self.alpha_db_per_km * distance_km / 10.0)


def expected_gains(
    channel: ChannelModel, settings: dict[str, float], distance_km: float
) -> tuple[dict[str, float], dict[str, float], float]:
    """Noiseless asymptotic gains and error gains at one distance."""
    eta = channel.efficiency(distance_km)
    y0 = channel.dark_rate
    gains = {}
    error_gains = {}
    for name, mu in settings.items():
        signal_part = 1.0 - math.exp(-eta * mu)
        q = min(1.0, y0 + signal_part)
        gains[name] = q
        error_gains[name] = min(q, channel.e0 * y0 + channel.e_misalign * signal_part)
    return gains, error_gains, eta


@dataclass(frozen=True)
class KeyRatePoint:
    """One point of a secure-key-rate curve."""

    distance_km: float
    delta_max: float
    eta: float
    gain_signal: float
    qber_signal: float
    y1_lower: float
    e1_upper: float
    skr: float
    feasible: bool = True


def rate_curve(
    channel: ChannelModel,
    settings: dict[str, float],
    deltas,
    distances_km,
    signal: str | None = None,
    n_cut: int = DEFAULT_N_CUT,
    provider_factory: Callable[[float], CoefficientProvider] | None = None,
    relaxation_scale: float = 0.05,
) -> list[KeyRatePoint]:
    """Secure key rate versus distance for each deviation level.

    Without an explicit ``provider_factory``, zero deviation uses the
    identity linking and positive deviations the built-in heuristic
    relaxation with the given scale.
    """
    if provider_factory is None:

        def provider_factory(d: float) -> CoefficientProvider:
            if d == 0.0:
                return identity_coefficient_provider
            return linear_relaxation_provider(d, scale=relaxation_scale)

    if signal is None:
        signal = max(settings, key=lambda nm: settings[nm])
    points: list[KeyRatePoint] = []
    for delta in deltas:
        provider = provider_factory(delta)
        for dist in distances_km:
            gains, error_gains, eta = expected_gains(channel, settings, dist)
            problem = DecoyLPProblem(
                settings=dict(settings),
                gains=gains,
                delta_max=delta,
                n_cut=n_cut,
                provider=provider,
                signal=signal,
                error_gains=error_gains,
            )
            q_mu = gains[signal]
            e_mu = error_gains[signal] / q_mu if q_mu > 0 else 0.5
            e_mu = min(0.5, e_mu)
            try:
                bounds = decoy_lp_bounds(problem, objective="max_e1")
            except InfeasibleError:
                points.append(
                    KeyRatePoint(
                        distance_km=float(dist),
                        delta_max=float(delta),
                        eta=eta,
                        gain_signal=q_mu,
                        qber_signal=e_mu,
                        y1_lower=float("nan"),
                        e1_upper=float("nan"),
                        skr=float("nan"),
                        feasible=False,
                    )
                )
                continue
            assert bounds.e1_upper is not None
            rate = skr(
                q_sift=channel.q_sift,
                mu=settings[signal],
                gain=q_mu,
                qber=e_mu,
                y1_lower=bounds.y1_lower,
                e1_upper=bounds.e1_upper,
                f_ec=channel.f_ec,
            )
            points.append(
                KeyRatePoint(
                    distance_km=float(dist),
                    delta_max=float(delta),
                    eta=eta,
                    gain_signal=q_mu,
                    qber_signal=e_mu,
                    y1_lower=bounds.y1_lower,
                    e1_upper=bounds.e1_upper,
                    skr=rate,
                )
            )
    return points


def positive_cutoff(points: list[KeyRatePoint], delta: float) -> float:
    """Largest distance at which the given delta's curve is positive."""
    dists = [p.distance_km for p in points if p.delta_max == delta and p.skr > 0]
    return max(dists) if dists else 0.0
