"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data or configuration error,
3 infeasible or degenerate analysis.  Diagnostics go to standard error;
data goes to files or standard output as CSV/JSON.  Every output embeds
the hash of a run manifest covering the subcommand, input digests, and
seed, so artifacts can be audited for provenance; timestamps are kept
out of the hash to keep reruns byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, datasets
from .characterize import (
    GroupCounters,
    click_rates,
    collect_clicks,
    count_transmissions,
    error_bars,
    fluctuation_stats,
)
from .cross_cycle import (
    count_valid_transmissions,
    cross_cycle_coincidences,
    cross_cycle_rates,
    default_bsm_table,
    filter_same_basis,
    parse_pattern_table,
    symbols_to_labels,
)
from .errors import ConfigError, DataError, DomainError, InfeasibleError
from .model import (
    ExperimentConfig,
    IntensityLabel,
    SourceSpec,
    decode_pattern,
    parse_config,
    parse_pattern_name,
    pattern_name,
)
from .photon_stats import AfterPulseModel, linearity_report
from .security import (
    ChannelModel,
    DecoyLPProblem,
    decoy_lp_bounds,
    delta_max,
    fit_group_gaussians,
    group_deviation_bounds,
    identity_coefficient_provider,
    linear_relaxation_provider,
    ncut_convergence,
    orientation_audit,
    rate_curve,
    table_coefficient_provider,
)
from .simulate import (
    CorrelationModel,
    concatenate_streams,
    emit_intensities,
    generate_sequence,
    read_detection_log,
    read_sequence,
    simulate_bb84_detection,
    write_detection_log,
    write_sequence,
)


# ------------------------------------------------------------- manifest


@dataclass
class RunManifest:
    """Provenance record embedded (as a hash) into every output."""

    subcommand: str
    config: str | None
    inputs: dict[str, str]
    seed: int | None
    version: str = __version__
    created: float = field(default_factory=time.time)

    def digest(self) -> str:
        stable = {
            "subcommand": self.subcommand,
            "config": self.config,
            "inputs": self.inputs,
            "seed": self.seed,
            "version": self.version,
        }
        blob = json.dumps(stable, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def as_dict(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "config": self.config,
            "inputs": self.inputs,
            "seed": self.seed,
            "version": self.version,
            "created": self.created,
            "manifest": self.digest(),
        }


def _sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest(
    subcommand: str,
    inputs: list[str | Path | None],
    config: str | None = None,
    seed: int | None = None,
) -> RunManifest:
    digests = {}
    for item in inputs:
        if item is None:
            continue
        digests[str(item)] = _sha256_file(item)
    return RunManifest(
        subcommand=subcommand, config=config, inputs=digests, seed=seed
    )


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _write_csv(path: str | None, header: list[str], rows: list[list], manifest: RunManifest) -> None:
    buf = io.StringIO()
    buf.write(f"# manifest={manifest.digest()}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    _write_text(path, buf.getvalue())


def _write_json(path: str | None, payload: dict, manifest: RunManifest) -> None:
    payload = dict(payload)
    payload["manifest"] = manifest.digest()
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _read_table(path: str | Path) -> list[dict[str, str]]:
    """CSV rows as dicts, tolerating leading ``#`` comment lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _fmt(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return repr(float(x))


# ------------------------------------------------------------- sources


def _generic_source(p: int) -> SourceSpec:
    return SourceSpec(
        labels=tuple(IntensityLabel(i, f"L{i}", 0.0, 1.0) for i in range(p))
    )


def _source_from_args(args, p: int) -> SourceSpec:
    if getattr(args, "config", None):
        return parse_config(args.config).source
    return _generic_source(p)


def _source_from_patterns(patterns: list[str], k: int) -> SourceSpec:
    """Label set inferred from a full pattern column (index order)."""
    names: list[str] = []
    for pat in patterns:
        cur = pat.rsplit("-", 1)[-1]
        if cur not in names:
            names.append(cur)
    p = len(names)
    if len(patterns) != p**k:
        raise DataError(
            f"pattern column lists {len(patterns)} groups; expected p^k"
        )
    return SourceSpec(
        labels=tuple(IntensityLabel(i, nm, 0.0, 1.0) for i, nm in enumerate(names))
    )


# ------------------------------------------------------------- simulate


def _parse_assignments(items: list[str], what: str) -> dict[str, float]:
    out: dict[str, float] = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"{what} {item!r} must look like NAME=VALUE")
        try:
            out[key.strip()] = float(value)
        except ValueError as exc:
            raise ConfigError(f"{what} {item!r}: {exc}") from exc
    return out


def cmd_simulate(args) -> int:
    config = parse_config(args.config)
    if args.reps is not None:
        config = ExperimentConfig(
            source=config.source,
            k=config.k,
            l=config.l,
            eta=config.eta,
            repetitions=args.reps,
            sequence_length=config.sequence_length,
            seed=config.seed if args.seed is None else args.seed,
            shards=config.shards,
            target_source=config.target_source,
            dark_rate=config.dark_rate,
        )
    elif args.seed is not None:
        config = ExperimentConfig(
            source=config.source,
            k=config.k,
            l=config.l,
            eta=config.eta,
            repetitions=config.repetitions,
            sequence_length=config.sequence_length,
            seed=args.seed,
            shards=config.shards,
            target_source=config.target_source,
            dark_rate=config.dark_rate,
        )
    source = config.source

    epsilon: dict[tuple[int, ...], float] = {}
    for pat, value in _parse_assignments(args.epsilon, "--epsilon").items():
        idx = parse_pattern_name(pat, source, config.k)
        epsilon[decode_pattern(idx, config.p, config.k)] = value
    jitter: dict[int, float] = {}
    for name, sigma in _parse_assignments(args.jitter, "--jitter").items():
        jitter[source.id_of(name)] = sigma
    model = None
    if epsilon or jitter:
        model = CorrelationModel(
            k=config.k, p=config.p, epsilon=epsilon, jitter_sigma=jitter
        )

    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    mus = np.asarray(source.mus)
    if args.mode == "fixed-string":
        seq = generate_sequence(source, config.sequence_length, rng, "fixed-string")
        tail = seq[-(config.k - 1):] if config.k > 1 else None
        streams = []
        for rep in range(config.repetitions):
            prefix = tail if rep > 0 else None
            intens = emit_intensities(seq, model, mus, seed=rng, prefix=prefix)
            streams.append(
                simulate_bb84_detection(
                    intens,
                    config.eta,
                    config.dark_rate,
                    seed=rng,
                    cycle_index=rep,
                    n_cycles=config.repetitions,
                )
            )
        clicks = concatenate_streams(streams)
    else:
        seq = generate_sequence(source, config.sequence_length, rng, "iid")
        intens = emit_intensities(seq, model, mus, seed=rng)
        clicks = simulate_bb84_detection(
            intens, config.eta, config.dark_rate, seed=rng
        )

    manifest = _manifest("simulate", [args.config], args.config, config.seed)
    write_sequence(seq, args.out_seq)
    write_detection_log(clicks, args.out_clicks, f"manifest={manifest.digest()}")
    print(
        f"simulate: {len(clicks)} clicks over {clicks.n_cycles} cycle(s) "
        f"of {clicks.slots_per_cycle} slots",
        file=sys.stderr,
    )
    return 0


# --------------------------------------------------------- characterize


def _counters_from_csv(path: str, source: SourceSpec, k: int) -> GroupCounters:
    rows = _read_table(path)
    groups = source.p**k
    if len(rows) != groups:
        raise DataError(f"{path}: expected {groups} rows, found {len(rows)}")
    G = np.zeros(groups, dtype=np.int64)
    T = np.zeros(groups, dtype=np.int64)
    C = np.zeros(groups, dtype=np.int64)
    for row in rows:
        g = parse_pattern_name(row["pattern"], source, k)
        G[g] = int(row["G"])
        T[g] = int(row["T"])
        C[g] = int(row["C"])
    reps = int(round(T.sum() / max(1, G.sum())))
    return GroupCounters(
        p=source.p,
        k=k,
        repetitions=max(1, reps),
        sequence_length=int(G.sum()),
        mode="paper-compat",
        G=G,
        T=T,
        C=C,
        discarded=0,
    )


def _rate_csv_rows(
    counters: GroupCounters, source: SourceSpec
) -> tuple[list[str], list[list]]:
    table = click_rates(counters, low_threshold=0)
    se = error_bars(counters)
    rows = []
    for g in range(counters.groups):
        name = pattern_name(g, source, counters.k)
        r = table.rate[g]
        rows.append(
            [
                name,
                int(counters.G[g]),
                int(counters.T[g]),
                int(counters.C[g]),
                "" if math.isnan(r) else _fmt(r),
                "" if math.isnan(se[g]) else _fmt(se[g]),
            ]
        )
    return ["pattern", "G", "T", "C", "R", "se"], rows


def _fluctuation_payload(
    counters: GroupCounters, source: SourceSpec, low_threshold: int
) -> dict:
    table = click_rates(counters, low_threshold=low_threshold)
    stats = fluctuation_stats(table)
    labels = {}
    for label_id, st in sorted(stats.items()):
        labels[source.names[label_id]] = {
            "n_groups": st.n_groups,
            "mean": st.mean,
            "max": st.maximum,
            "min": st.minimum,
            "argmax": pattern_name(st.argmax, source, counters.k),
            "argmin": pattern_name(st.argmin, source, counters.k),
            "abs_discrepancy": st.abs_discrepancy,
            "rel_fluctuation": st.rel_fluctuation,
        }
    low = [
        pattern_name(g, source, counters.k)
        for g in np.flatnonzero(table.low_statistics)
    ]
    return {
        "labels": labels,
        "discarded_clicks": int(counters.discarded),
        "counting_mode": counters.mode,
        "low_statistics": low,
    }


def cmd_characterize(args) -> int:
    if args.counts:
        if not args.config:
            raise ConfigError("--counts needs --config for the label names")
        source = parse_config(args.config).source
        counters = _counters_from_csv(args.counts, source, args.k)
        manifest = _manifest(
            "characterize", [args.counts, args.config], args.config
        )
    else:
        if not (args.seq and args.clicks):
            raise ConfigError("need either --counts or both --seq and --clicks")
        seq = read_sequence(args.seq)
        p = int(seq.max()) + 1 if args.p is None else args.p
        source = _source_from_args(args, p)
        if source.p < p:
            raise ConfigError(
                f"sequence uses {p} labels but config declares {source.p}"
            )
        mode = "paper-compat" if args.paper_compat else "exact"
        counters = count_transmissions(seq, source.p, args.k, args.reps, mode=mode)
        clicks = read_detection_log(args.clicks)
        collect_clicks(seq, clicks, counters)
        manifest = _manifest(
            "characterize",
            [args.seq, args.clicks, args.config],
            args.config,
        )

    header, rows = _rate_csv_rows(counters, source)
    _write_csv(args.out, header, rows, manifest)
    if args.summary:
        payload = _fluctuation_payload(counters, source, args.low_threshold)
        _write_json(args.summary, payload, manifest)
    return 0


# ----------------------------------------------------------- crosscycle


def _blocks_from_csv(
    path: str, source: SourceSpec, k: int, column: str
) -> np.ndarray:
    rows = _read_table(path)
    groups = source.p**k
    cells: dict[tuple[int, int], int] = {}
    for row in rows:
        g = parse_pattern_name(row["pattern"], source, k)
        cells[(int(row["block"]), g)] = int(row[column])
    n_blocks = 1 + max(b for b, _ in cells)
    if len(cells) != n_blocks * groups:
        raise DataError(f"{path}: missing (block, pattern) rows")
    out = np.zeros((n_blocks, groups), dtype=np.int64)
    for (b, g), v in cells.items():
        out[b, g] = v
    return out


def cmd_crosscycle(args) -> int:
    if args.table_g and args.table_c:
        g_rows = _read_table(args.table_g)
        source = _source_from_patterns([r["pattern"] for r in g_rows], k=2)
        G = np.zeros(source.p**2, dtype=np.int64)
        for row in g_rows:
            G[parse_pattern_name(row["pattern"], source, 2)] = int(row["G"])
        C_blocks = _blocks_from_csv(args.table_c, source, 2, "C")
        manifest = _manifest("crosscycle", [args.table_g, args.table_c])
        diagnostics: dict[str, int] = {}
    elif args.clicks and args.strA and args.strB:
        sym_a = read_sequence(args.strA, p=8)
        sym_b = read_sequence(args.strB, p=8)
        labels = symbols_to_labels(sym_a)
        valid = filter_same_basis(sym_a, sym_b)
        table = (
            parse_pattern_table(args.patterns)
            if args.patterns
            else default_bsm_table()
        )
        clicks = read_detection_log(args.clicks)
        counts = cross_cycle_coincidences(
            clicks, labels, valid, table, n_b=args.nb, n_blocks=args.blocks
        )
        G = count_valid_transmissions(labels, valid)
        C_blocks = counts.C_blocks
        source = datasets.mdi_source()
        manifest = _manifest(
            "crosscycle",
            [args.clicks, args.strA, args.strB, args.patterns],
        )
        diagnostics = {
            "invalid_slot_events": counts.invalid_slot_events,
            "headless_events": counts.headless_events,
            "multi_click_cycles": counts.multi_click_cycles,
            "same_cycle_conforming": int(counts.same_cycle.sum()),
        }
    else:
        raise ConfigError(
            "need either --table-g/--table-c or --clicks/--strA/--strB"
        )

    rates = cross_cycle_rates(C_blocks, G, args.nb)
    n_blocks = C_blocks.shape[0]
    header = (
        ["pattern", "G", "T", "C_mean"]
        + [f"C_{b}" for b in range(n_blocks)]
        + ["R", "se"]
    )
    rows = []
    for g in range(G.size):
        name = pattern_name(g, source, 2)
        r, s = rates.rate[g], rates.se[g]
        rows.append(
            [name, int(G[g]), int(rates.T[g]), _fmt(rates.C_mean[g])]
            + [int(C_blocks[b, g]) for b in range(n_blocks)]
            + ["" if math.isnan(r) else _fmt(r), "" if math.isnan(s) else _fmt(s)]
        )
    _write_csv(args.out, header, rows, manifest)
    for key, value in diagnostics.items():
        print(f"crosscycle: {key}={value}", file=sys.stderr)
    return 0


# ------------------------------------------------------------- security


def cmd_security(args) -> int:
    source = parse_config(args.config).source
    config = parse_config(args.config)
    eta = args.eta if args.eta is not None else config.eta
    ap = AfterPulseModel(q=args.q, tau=args.tau)

    T_blocks = _blocks_from_csv(args.blocks, source, args.k, "T")
    C_blocks = _blocks_from_csv(args.blocks, source, args.k, "C")
    block_rates = C_blocks / T_blocks.astype(float)
    fits = fit_group_gaussians(block_rates, source.p, args.k, eta, ap)
    bounds = group_deviation_bounds(fits, source.p)
    dmax = delta_max(bounds)

    per_label: dict[str, float] = {}
    per_group = []
    for g in sorted(bounds):
        b = bounds[g]
        name = pattern_name(g, source, args.k)
        label = source.names[g % source.p]
        per_label[label] = max(per_label.get(label, 0.0), b.delta)
        per_group.append(
            {
                "pattern": name,
                "delta": b.delta,
                "a_minus": b.a_minus,
                "a_plus": b.a_plus,
                "reference": pattern_name(b.reference_group, source, args.k),
                "clamped": b.clamped,
            }
        )

    payload: dict = {
        "delta_max": dmax,
        "per_label_deltas": per_label,
        "per_group": per_group,
        "eta": eta,
        "after_pulse_q": args.q,
        "y1_lower": None,
        "e1_upper": None,
    }

    if args.rates:
        counters = _counters_from_csv(args.rates, source, args.k)
        stats = fluctuation_stats(click_rates(counters, low_threshold=0))
        gains = {
            source.names[label]: st.mean for label, st in stats.items()
        }
        settings = {name: mu for name, mu in zip(source.names, source.mus)}
        if args.coeffs:
            provider = table_coefficient_provider(args.coeffs)
        elif dmax == 0.0:
            provider = identity_coefficient_provider
        else:
            provider = linear_relaxation_provider(dmax, scale=args.scale)
        problem = DecoyLPProblem(
            settings=settings,
            gains=gains,
            delta_max=dmax,
            n_cut=args.ncut,
            provider=provider,
        )
        lp = decoy_lp_bounds(problem)
        payload["y1_lower"] = lp.y1_lower
        payload["e1_upper"] = lp.e1_upper
        payload["y0_lower"] = lp.y0_lower
        payload["signal"] = lp.signal
        payload["n_cut"] = lp.n_cut
        payload["ncut_convergence"] = ncut_convergence(problem)
        payload["orientation_audit"] = orientation_audit(problem)

    manifest = _manifest(
        "security",
        [args.blocks, args.rates, args.coeffs, args.config],
        args.config,
    )
    _write_json(args.out, payload, manifest)
    return 0


# ---------------------------------------------------------------- curve


def _parse_distances(spec: str) -> list[float]:
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigError("--distances range must be start:stop:step")
        start, stop, step = (float(x) for x in parts)
        if step <= 0:
            raise ConfigError("--distances step must be positive")
        return [float(x) for x in np.arange(start, stop, step)]
    return [float(x) for x in spec.split(",") if x.strip()]


def cmd_curve(args) -> int:
    deltas = [float(x) for x in args.deltas.split(",") if x.strip()]
    if not deltas:
        raise ConfigError("--deltas must list at least one value")
    distances = _parse_distances(args.distances)
    if not distances:
        raise ConfigError("--distances must produce at least one point")
    settings = _parse_assignments(args.mus.split(","), "--mus")
    channel = ChannelModel(
        alpha_db_per_km=args.alpha,
        eta_det=args.etadet,
        dark_rate=args.dark,
        e_misalign=args.emis,
        f_ec=args.fec,
        q_sift=args.qsift,
    )
    points = rate_curve(
        channel,
        settings,
        deltas,
        distances,
        signal=args.signal,
        n_cut=args.ncut,
        relaxation_scale=args.scale,
    )
    by_key = {(p.delta_max, p.distance_km): p for p in points}
    header = ["distance_km"] + [f"skr_{d:g}" for d in deltas]
    rows = []
    for dist in distances:
        row = [_fmt(dist)]
        for d in deltas:
            row.append(_fmt(by_key[(d, dist)].skr))
        rows.append(row)
    manifest = _manifest("curve", [])
    _write_csv(args.out, header, rows, manifest)
    return 0


# --------------------------------------------------------------- report


_BAR_COLORS = ("#4878a8", "#e49444", "#d1615d", "#85b6b2", "#6a9f58", "#e7ca60")


def _svg_header(width: int, height: int, manifest: RunManifest) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f"<!-- manifest={manifest.digest()} -->",
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]


def _bar_svg(groups: list[tuple[str, list[tuple[str, float]]]], manifest: RunManifest) -> str:
    width, height = 640, 400
    margin_l, margin_b, margin_t = 60, 40, 20
    plot_w = width - margin_l - 20
    plot_h = height - margin_b - margin_t
    vmax = max(v for _, bars in groups for _, v in bars)
    parts = _svg_header(width, height, manifest)
    parts.append(
        f'<line x1="{margin_l}" y1="{margin_t}" x2="{margin_l}" '
        f'y2="{margin_t + plot_h}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{margin_l}" y1="{margin_t + plot_h}" '
        f'x2="{margin_l + plot_w}" y2="{margin_t + plot_h}" stroke="black"/>'
    )
    group_w = plot_w / max(1, len(groups))
    for gi, (label, bars) in enumerate(groups):
        x0 = margin_l + gi * group_w
        bar_w = group_w * 0.8 / max(1, len(bars))
        for bi, (prev, value) in enumerate(bars):
            h = 0.0 if vmax <= 0 else value / vmax * (plot_h - 10)
            x = x0 + group_w * 0.1 + bi * bar_w
            y = margin_t + plot_h - h
            color = _BAR_COLORS[bi % len(_BAR_COLORS)]
            parts.append(
                f'<rect x="{x:.2f}" y="{y:.2f}" width="{bar_w:.2f}" '
                f'height="{h:.2f}" fill="{color}">'
                f"<title>{prev}-{label}: {value:.6e}</title></rect>"
            )
        parts.append(
            f'<text x="{x0 + group_w / 2:.2f}" y="{height - 20}" '
            f'text-anchor="middle" font-size="14">{label}</text>'
        )
    parts.append(
        f'<text x="12" y="{margin_t + 10}" font-size="12">{vmax:.3e}</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _curve_svg(
    distances: list[float], series: dict[str, list[float]], manifest: RunManifest
) -> str:
    width, height = 640, 400
    margin_l, margin_b, margin_t = 70, 40, 20
    plot_w = width - margin_l - 20
    plot_h = height - margin_b - margin_t
    finite = [
        v for vals in series.values() for v in vals if v > 0 and math.isfinite(v)
    ]
    if not finite:
        raise DataError("curve has no positive rates to plot")
    lo = math.floor(math.log10(min(finite)))
    hi = math.ceil(math.log10(max(finite)))
    hi = max(hi, lo + 1)
    xmin, xmax = min(distances), max(distances)
    span = max(xmax - xmin, 1e-9)

    def xpix(x: float) -> float:
        return margin_l + (x - xmin) / span * plot_w

    def ypix(v: float) -> float:
        return margin_t + (hi - math.log10(v)) / (hi - lo) * plot_h

    parts = _svg_header(width, height, manifest)
    parts.append(
        f'<line x1="{margin_l}" y1="{margin_t}" x2="{margin_l}" '
        f'y2="{margin_t + plot_h}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{margin_l}" y1="{margin_t + plot_h}" '
        f'x2="{margin_l + plot_w}" y2="{margin_t + plot_h}" stroke="black"/>'
    )
    for ci, (name, vals) in enumerate(series.items()):
        pts = [
            f"{xpix(x):.2f},{ypix(v):.2f}"
            for x, v in zip(distances, vals)
            if v > 0 and math.isfinite(v)
        ]
        if not pts:
            continue
        color = _BAR_COLORS[ci % len(_BAR_COLORS)]
        parts.append(
            f'<polyline points="{" ".join(pts)}" fill="none" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{width - 150}" y="{margin_t + 16 * (ci + 1)}" '
            f'font-size="12" fill="{color}">{name}</text>'
        )
    parts.append(
        f'<text x="{margin_l + plot_w / 2:.0f}" y="{height - 8}" '
        f'text-anchor="middle" font-size="12">distance (km)</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_report(args) -> int:
    if args.rates:
        rows = _read_table(args.rates)
        if not rows:
            raise DataError(f"{args.rates}: no rate rows")
        grouped: dict[str, list[tuple[str, float]]] = {}
        order: list[str] = []
        for row in rows:
            if not row.get("R"):
                continue
            prev, _, cur = row["pattern"].rpartition("-")
            value = float(row["R"])
            if math.isnan(value):
                continue
            if cur not in grouped:
                grouped[cur] = []
                order.append(cur)
            grouped[cur].append((prev, value))
        groups = [(cur, grouped[cur]) for cur in order if grouped[cur]]
        if not groups:
            raise DataError(f"{args.rates}: all groups empty")
        manifest = _manifest("report", [args.rates])
        _write_text(args.out_svg, _bar_svg(groups, manifest))
        if args.out_csv:
            rows_out = [
                [cur, prev, _fmt(v)]
                for cur, bars in groups
                for prev, v in bars
            ]
            _write_csv(
                args.out_csv, ["current", "previous", "R"], rows_out, manifest
            )
        return 0
    if args.curve:
        rows = _read_table(args.curve)
        if not rows:
            raise DataError(f"{args.curve}: no curve rows")
        distances = [float(r["distance_km"]) for r in rows]
        names = [c for c in rows[0] if c != "distance_km"]
        series = {nm: [float(r[nm]) for r in rows] for nm in names}
        manifest = _manifest("report", [args.curve])
        _write_text(args.out_svg, _curve_svg(distances, series, manifest))
        return 0
    raise ConfigError("need --rates or --curve")


# ---------------------------------------------------------------- stats


def cmd_stats_linearity(args) -> int:
    m_max = args.m_max if args.m_max is not None else 0.01 / args.eta
    grid = np.linspace(m_max / args.points, m_max, args.points)
    report = linearity_report(args.eta, grid)
    manifest = _manifest("stats-linearity", [], seed=None)
    rows = []
    for m, prob, fit in zip(report.m_grid, report.probabilities, report.fitted):
        rows.append([_fmt(m), _fmt(prob), _fmt(fit), _fmt(abs(prob - fit) / prob)])
    _write_csv(args.out, ["m", "P", "fit", "deviation"], rows, manifest)
    print(
        f"linearity: slope={report.slope:.9e} "
        f"max_relative_deviation={report.max_relative_deviation:.3e}",
        file=sys.stderr,
    )
    return 0


# --------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage failures exit with code 1."""

    def error(self, message: str):  # noqa: D401 - argparse contract
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="corrkit",
        description=(
            "Characterize intensity correlations of a QKD source from "
            "detection data and propagate them into decoy-state security "
            "bounds."
        ),
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    sim = sub.add_parser("simulate", help="synthesize a sequence and click log")
    sim.add_argument("--config", required=True, help="source config file")
    sim.add_argument("--mode", choices=("fixed-string", "iid"), default="fixed-string")
    sim.add_argument("--reps", type=int, default=None, help="override repetitions")
    sim.add_argument("--seed", type=int, default=None, help="override seed")
    sim.add_argument("--epsilon", action="append", default=[],
                     metavar="PATTERN=FRAC",
                     help="relative intensity shift for one pattern group")
    sim.add_argument("--jitter", action="append", default=[],
                     metavar="LABEL=SIGMA",
                     help="relative intensity jitter for one label")
    sim.add_argument("--out-seq", required=True)
    sim.add_argument("--out-clicks", required=True)
    sim.add_argument("--threads", type=int, default=1)
    sim.set_defaults(func=cmd_simulate)

    cha = sub.add_parser("characterize", help="count transmissions and clicks into rates")
    cha.add_argument("--seq", help="label sequence file")
    cha.add_argument("--clicks", help="detection log file")
    cha.add_argument("--counts", help="precomputed pattern,G,T,C table")
    cha.add_argument("--config", help="source config (label names)")
    cha.add_argument("--k", type=int, default=2)
    cha.add_argument("--p", type=int, default=None)
    cha.add_argument("--reps", type=int, default=1)
    cha.add_argument("--paper-compat", action="store_true",
                     help="count transmissions as G*r on the circular string")
    cha.add_argument("--low-threshold", type=int, default=10_000)
    cha.add_argument("--out", default=None, help="rate CSV (default stdout)")
    cha.add_argument("--summary", default=None, help="fluctuation summary JSON")
    cha.set_defaults(func=cmd_characterize)

    crx = sub.add_parser("crosscycle", help="cross-cycle coincidence rates")
    crx.add_argument("--clicks")
    crx.add_argument("--strA", help="target source symbol string")
    crx.add_argument("--strB", help="partner source symbol string")
    crx.add_argument("--patterns", help="conforming detector-pair table")
    crx.add_argument("--table-g", help="pattern,G table (skip counting)")
    crx.add_argument("--table-c", help="block,pattern,C table (skip counting)")
    crx.add_argument("--nb", type=int, required=True, help="cycles per block")
    crx.add_argument("--blocks", type=int, default=1)
    crx.add_argument("--out", default=None)
    crx.set_defaults(func=cmd_crosscycle)

    sec = sub.add_parser("security", help="deviation bounds and yield LP")
    sec.add_argument("--blocks", required=True, help="block,pattern,T,C table")
    sec.add_argument("--config", required=True, help="source config")
    sec.add_argument("--rates", help="pattern,G,T,C table for the gain inputs")
    sec.add_argument("--eta", type=float, default=None, help="override config eta")
    sec.add_argument("--q", type=float, default=0.0, help="after-pulse rate")
    sec.add_argument("--tau", type=int, default=1, help="gates per dead time")
    sec.add_argument("--k", type=int, default=2)
    sec.add_argument("--coeffs", help="linking coefficient table file")
    sec.add_argument("--ncut", type=int, default=10)
    sec.add_argument("--scale", type=float, default=0.05,
                     help="heuristic linking relaxation scale (uncertified)")
    sec.add_argument("--out", default=None, help="JSON output (default stdout)")
    sec.set_defaults(func=cmd_security)

    cur = sub.add_parser("curve", help="secure key rate versus distance")
    cur.add_argument("--deltas", default="0,0.63")
    cur.add_argument("--alpha", type=float, default=0.2, help="fiber loss dB/km")
    cur.add_argument("--etadet", type=float, default=0.1)
    cur.add_argument("--dark", type=float, default=6e-6)
    cur.add_argument("--emis", type=float, default=0.015)
    cur.add_argument("--fec", type=float, default=1.16)
    cur.add_argument("--qsift", type=float, default=0.5)
    cur.add_argument("--distances", default="0:201:5",
                     help="start:stop:step range or comma list, km")
    cur.add_argument("--mus", default="V=0.001,D1=0.03,D2=0.09,S=0.23")
    cur.add_argument("--signal", default=None)
    cur.add_argument("--ncut", type=int, default=10)
    cur.add_argument("--scale", type=float, default=0.05)
    cur.add_argument("--out", default=None)
    cur.set_defaults(func=cmd_curve)

    rep = sub.add_parser("report", help="render rate tables or curves as SVG")
    rep.add_argument("--rates", help="rate CSV from characterize/crosscycle")
    rep.add_argument("--curve", help="curve CSV from the curve subcommand")
    rep.add_argument("--out-svg", required=True)
    rep.add_argument("--out-csv", default=None, help="grouped-bar data CSV")
    rep.set_defaults(func=cmd_report)

    sta = sub.add_parser("stats", help="numerical diagnostics")
    sta_sub = sta.add_subparsers(dest="stat", required=True)
    lin = sta_sub.add_parser("linearity", help="click probability versus intensity")
    lin.add_argument("--eta", type=float, required=True)
    lin.add_argument("--m-max", type=float, default=None,
                     help="largest intensity on the grid (default 0.01/eta)")
    lin.add_argument("--points", type=int, default=50)
    lin.add_argument("--out", default=None)
    lin.set_defaults(func=cmd_stats_linearity)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleError as exc:
        print(f"corrkit: infeasible: {exc}", file=sys.stderr)
        return 3
    except (DataError, ConfigError, DomainError) as exc:
        print(f"corrkit: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"corrkit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
