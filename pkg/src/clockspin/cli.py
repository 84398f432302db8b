"""Command-line driver: ``clockspin {levels,clock,map,cavity,fit,dipolar,config}``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .cavity import cavity_map, write_kappa_csv
from .config import ConfigError, RunConfig, load_config
from .dipolar import dipolar_bias_samples, energy_broadening, histogram
from .fitlab import FitError, Trace, fit_cavity_width, fit_lineshape
from .hamiltonian import FieldVector, find_anticrossings, solve, sweep
from .spectro import _fmt, _jsonable, clock_line, enumerate_transitions, normalize_map, transmission_map

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _prepare(args) -> tuple[RunConfig, Path]:
    overrides = {}
    if args.seed is not None:
        overrides[("dipolar", "seed")] = args.seed
    cfg = load_config(args.config, overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.yaml").write_text(cfg.dump())
    return cfg, out


def cmd_levels(cfg: RunConfig, out: Path, args) -> list[Path]:
    diagram = sweep(cfg.system, cfg.direction, cfg.fields, threads=args.threads)
    if args.format == "json":
        path = out / "levels.json"
        _write_json(
            path,
            {
                "field_T": diagram.fields,
                "energy_GHz": diagram.energies,
                "jz_expect": [s.jz_expect for s in diagram.solutions],
                "iz_expect": [s.iz_expect for s in diagram.solutions],
            },
        )
    else:
        path = out / "levels.csv"
        diagram.to_csv(path)
    return [path]


def clock_report(cfg: RunConfig) -> list[dict]:
    diagram = sweep(cfg.system, cfg.direction, cfg.fields)
    c = cfg.data["clock"]
    found = find_anticrossings(diagram, xatol=c["xatol_T"], crossing_gap=c["crossing_gap_GHz"])
    return [
        {
            "field_T": round(a.field_center, 9),
            "gap_GHz": round(a.gap, 9),
            "m_I": a.nuclear_label,
            "kind": a.kind,
        }
        for a in found
    ]


def cmd_clock(cfg: RunConfig, out: Path, args) -> list[Path]:
    report = clock_report(cfg)
    if args.format == "csv":
        path = out / "clock.csv"
        rows = ["field_T,gap_GHz,m_I,kind"] + [
            f"{_fmt(r['field_T'])},{_fmt(r['gap_GHz'])},{_fmt(r['m_I'])},{r['kind']}" for r in report
        ]
        path.write_text("\n".join(rows) + "\n")
    else:
        path = out / "clock.json"
        _write_json(path, report)
    return [path]


def cmd_map(cfg: RunConfig, out: Path, args) -> list[Path]:
    norm = cfg.data["normalization"]
    tr = cfg.data["transitions"]
    raw = transmission_map(
        cfg.system,
        cfg.coupling,
        cfg.broadening,
        cfg.direction,
        cfg.fields,
        cfg.freqs,
        cfg.temperature,
        reference_field=norm["reference_field_T"],
        threads=args.threads,
        floor=tr["floor"],
        tilt=cfg.tilt,
        max_freq=float(cfg.freqs.max()) + tr["margin_GHz"],
    )
    t = normalize_map(raw, norm["delta_field_T"])
    paths = []
    for name, m in (("map_raw", raw), ("map_normalized", t)):
        if args.format == "json":
            p = out / f"{name}.json"
            _write_json(
                p,
                {
                    "header": m.metadata,
                    "field_T": m.fields,
                    "freq_GHz": m.freqs,
                    "re_t": m.values.real,
                    "im_t": m.values.imag,
                },
            )
        else:
            p = out / f"{name}.csv"
            m.to_csv(p)
        paths.append(p)
    return paths


def cmd_cavity(cfg: RunConfig, out: Path, args) -> list[Path]:
    c = cfg.data["cavity"]
    diagram = sweep(cfg.system, cfg.direction, cfg.fields, threads=args.threads)
    m, kappa = cavity_map(
        cfg.cavity,
        diagram,
        cfg.broadening,
        cfg.cavity_freqs,
        cfg.temperature,
        window=c["window_GHz"],
        weighting=c["weighting"],
        contrast=c["contrast"],
    )
    if args.format == "json":
        p = out / "cavity_map.json"
        _write_json(p, {"header": m.metadata, "field_T": m.fields, "freq_GHz": m.freqs,
                        "re_t": m.values.real, "im_t": m.values.imag, "kappa_eff_GHz": kappa})
        return [p]
    p1, p2 = out / "cavity_map.csv", out / "kappa.csv"
    m.to_csv(p1)
    write_kappa_csv(p2, m.fields, kappa)
    return [p1, p2]


def _thermal_delta_p(cfg: RunConfig, near_freq: float) -> float:
    fit = cfg.data["fit"]
    field = FieldVector(fit["field_T"], *cfg.direction)
    if fit["m_I"] is not None:
        _, _, dp = clock_line(cfg.system, field, fit["m_I"], cfg.temperature)
        return float(dp[0])
    eig = solve(cfg.system, field)
    lines = enumerate_transitions(eig, cfg.temperature, near_freq + 5.0, system=cfg.system)
    if not lines:
        raise FitError("no transition available to supply the population difference")
    return min(lines, key=lambda t: abs(t.omega12 - near_freq)).delta_p


def _omega12_of_field(cfg: RunConfig):
    system = cfg.system
    c = cfg.cavity
    m_i = cfg.data["fit"]["m_I"]

    def omega(fields):
        out = []
        for h in np.atleast_1d(fields):
            f = FieldVector(float(abs(h)), *cfg.direction)
            if m_i is not None:
                out.append(float(clock_line(system, f, m_i, cfg.temperature)[0][0]))
                continue
            lines = enumerate_transitions(solve(system, f), cfg.temperature, c.omega_r + 20.0,
                                          system=system)
            out.append(min(lines, key=lambda t: abs(t.omega12 - c.omega_r)).omega12)
        return np.array(out)

    return omega


def cmd_fit(cfg: RunConfig, out: Path, args) -> list[Path]:
    try:
        trace = Trace.from_csv(args.trace)
    except OSError as exc:
        raise ConfigError(f"{args.trace}: cannot read trace: {exc.strerror}") from None
    except ValueError as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith(str(args.trace)) else f"{args.trace}: {msg}") from None
    if args.model == "lineshape":
        delta_p = args.delta_p or cfg.data["fit"]["delta_p"]
        if delta_p is None:
            centre = float(trace.x[np.argmin(trace.y)])
            delta_p = _thermal_delta_p(cfg, centre)
        result = fit_lineshape(trace, delta_p)
        payload = result.as_dict() | {"delta_p": delta_p}
    else:
        result = fit_cavity_width(trace, _omega12_of_field(cfg), omega_r=cfg.cavity.omega_r)
        payload = result.as_dict() | {"omega_r_GHz": cfg.cavity.omega_r}
    path = out / f"fit_{args.model}.json"
    _write_json(path, payload)
    return [path]


def cmd_dipolar(cfg: RunConfig, out: Path, args) -> list[Path]:
    d = cfg.dipolar
    if d is None:
        raise ConfigError(f"{cfg.source}: dipolar.enabled is false")
    samples = dipolar_bias_samples(d)
    centres, counts = histogram(samples, cfg.data["dipolar"]["histogram_bins"])
    p1 = out / "dipolar_histogram.csv"
    p1.write_text(
        "bin_center_T,count\n" + "".join(f"{_fmt(c)},{int(n)}\n" for c, n in zip(centres, counts))
    )
    std = float(np.std(samples))
    p2 = out / "dipolar_summary.json"
    _write_json(
        p2,
        {
            "samples": len(samples),
            "mean_T": float(np.mean(samples)),
            "std_T": std,
            "broadening_GHz": energy_broadening(std, cfg.system.g_j, 4.0),
            "mode": d.mode,
            "seed": d.seed,
        },
    )
    return [p1, p2]


def cmd_config(cfg: RunConfig, out: Path, args) -> list[Path]:
    sys.stdout.write(cfg.dump())
    return [out / "effective_config.yaml"]


COMMANDS = {
    "levels": cmd_levels,
    "clock": cmd_clock,
    "map": cmd_map,
    "cavity": cmd_cavity,
    "fit": cmd_fit,
    "dipolar": cmd_dipolar,
    "config": cmd_config,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration (defaults if omitted)")
    common.add_argument("--seed", type=int, help="override dipolar.seed")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default=None)

    parser = argparse.ArgumentParser(prog="clockspin", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("levels", parents=[common], help="energy levels vs field (CSV)")
    sub.add_parser("clock", parents=[common], help="locate clock transitions (JSON)")
    sub.add_parser("map", parents=[common], help="raw and normalized transmission maps")
    sub.add_parser("cavity", parents=[common], help="cavity-mode map and kappa_eff curve")
    fit = sub.add_parser("fit", parents=[common], help="fit a trace (JSON report)")
    fit.add_argument("trace", type=Path, help="CSV with columns x, y[, sigma]")
    fit.add_argument("--model", choices=("lineshape", "cavity"), default="lineshape")
    fit.add_argument("--delta-p", type=float, default=None,
                     help="population difference; thermal model if omitted")
    sub.add_parser("dipolar", parents=[common], help="bias-field histogram")
    sub.add_parser("config", parents=[common], help="print the resolved configuration")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.format is None:
        args.format = "json" if args.command in ("clock",) else "csv"
    if args.threads < 1:
        print("clockspin: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg, out = _prepare(args)
        paths = COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"clockspin: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FitError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        print(f"clockspin: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if args.command != "config":
        for p in paths:
            print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
