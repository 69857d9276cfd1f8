"""Batch command-line front end: validate, run, sweep.

Emits CSV and plain-text artifacts only; numeric fields are written with 17
significant digits so identical runs produce byte-identical files.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .cosim import RunRecord, derive_seed, run_federation
from .scenario import ConfigError, Scenario, dumps_scenario, load_scenario
from .stability import FeasibleSet, classify_run, sweep_feasible_space


def _g(x: float) -> str:
    return f"{float(x):.17g}"


def parse_grid(spec: str, name: str) -> tuple[float, ...]:
    """Grid from a flag: either 'a,b,c' or an inclusive range 'lo:hi:step'."""
    spec = spec.strip()
    try:
        if ":" in spec:
            lo_s, hi_s, step_s = spec.split(":")
            lo, hi, step = float(lo_s), float(hi_s), float(step_s)
            if step <= 0 or hi < lo:
                raise ValueError
            values = []
            k = 0
            while True:
                v = lo + k * step
                if v > hi + 1e-9 * max(1.0, abs(hi)):
                    break
                values.append(min(v, hi))
                k += 1
            return tuple(values)
        return tuple(float(tok) for tok in spec.split(","))
    except ValueError:
        raise ValueError(
            f"bad {name} grid {spec!r}: expected 'a,b,c' or 'lo:hi:step'"
        ) from None


def _write(path: Path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _timeseries_csv(record: RunRecord) -> str:
    lines = [",".join(RunRecord.COLUMNS)]
    columns = [record.series()[name] for name in RunRecord.COLUMNS]
    for row in zip(*columns):
        lines.append(",".join(_g(v) for v in row))
    return "\n".join(lines) + "\n"


def _verdict_text(verdict, detector, record: RunRecord) -> str:
    lines = [
        f"verdict: {'stable' if verdict.stable else 'unstable'}",
        f"reason: {verdict.reason}",
        f"peak_dev_hz: {_g(verdict.peak_dev_hz)}",
        f"envelope_ratio: {_g(verdict.envelope_ratio)}",
        f"diverged_t: {_g(record.diverged_t) if record.diverged_t is not None else 'none'}",
        "thresholds:",
        f"  hard_bound_hz = {_g(detector.hard_bound_hz)}",
        f"  window_s = {_g(detector.window_s)}",
        f"  growth_ratio = {_g(detector.growth_ratio)}",
        f"  amplitude_floor_hz = {_g(detector.amplitude_floor_hz)}",
        f"  settle_band_hz = {_g(detector.settle_band_hz)}",
    ]
    return "\n".join(lines) + "\n"


def _channel_seed_lines(scenario: Scenario) -> list[str]:
    lines = [f"uplink_seed = {derive_seed(scenario.seed, 0)}"]
    n_gov = len(scenario.governors)
    for i, g in enumerate(scenario.governors):
        lines.append(f"governor_seed[{g.unit.id}] = {derive_seed(scenario.seed, 1 + i)}")
    for j, a in enumerate(scenario.aggregators):
        lines.append(f"aggregator_seed[{a.id}] = {derive_seed(scenario.seed, 1 + n_gov + j)}")
    return lines


def _meta_text(scenario: Scenario, command: str, extra: list[str]) -> str:
    lines = [
        f"tool: dercosim {__version__}",
        f"command: {command}",
        *extra,
        f"base_seed = {scenario.seed}",
        "seed_derivation: blake2b-8B of repr((base_seed, *indices)), top bit cleared",
        "channel seeds (run order):",
        *(f"  {line}" for line in _channel_seed_lines(scenario)),
        "",
        "--- resolved scenario ---",
        dumps_scenario(scenario),
    ]
    return "\n".join(lines)


def _sweep_csv(rows: list[FeasibleSet]) -> str:
    lines = ["kp,ki,delay,verdict,reason,peak_df,lower_margin,upper_margin,intervals"]
    for fs in rows:
        intervals = ";".join(f"{_g(lo)}:{_g(hi)}" for lo, hi in fs.intervals)
        for delay, v in zip(fs.delays, fs.verdicts):
            lines.append(
                ",".join(
                    (
                        _g(fs.kp), _g(fs.ki), _g(delay),
                        "stable" if v.stable else "unstable",
                        v.reason,
                        _g(v.peak_dev_hz),
                        _g(fs.lower_margin),
                        _g(fs.upper_margin),
                        intervals,
                    )
                )
            )
    return "\n".join(lines) + "\n"


def _surfaces_csv(rows: list[FeasibleSet]) -> str:
    lines = ["kp,ki,lower_margin,upper_margin"]
    for fs in rows:
        lines.append(",".join((_g(fs.kp), _g(fs.ki), _g(fs.lower_margin), _g(fs.upper_margin))))
    return "\n".join(lines) + "\n"


def cmd_validate(args) -> int:
    scenario = load_scenario(args.config)
    n_der = sum(len(a.units) for a in scenario.aggregators)
    print(
        f"ok: {args.config}: {len(scenario.governors)} governor(s), "
        f"{len(scenario.aggregators)} aggregator(s) with {n_der} DER unit(s), "
        f"AGC {'enabled' if scenario.agc is not None else 'disabled'}, "
        f"{len(scenario.events)} event(s), horizon {_g(scenario.horizon)} s"
    )
    return 0


def cmd_run(args) -> int:
    scenario = load_scenario(args.config)
    full_rate = args.full_rate or scenario.full_rate
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    record = run_federation(scenario, full_rate=full_rate)
    verdict = classify_run(record, scenario.detector)

    _write(out / "timeseries.csv", _timeseries_csv(record))
    _write(out / "verdict.txt", _verdict_text(verdict, scenario.detector, record))
    extra = [f"config: {args.config}", f"out: {out}", f"full_rate: {full_rate}"]
    _write(out / "meta.txt", _meta_text(scenario, "run", extra))
    print(f"run: {'stable' if verdict.stable else 'unstable'} ({verdict.reason}), "
          f"peak |df| {_g(verdict.peak_dev_hz)} Hz -> {out}")
    return 0 if verdict.stable else 2


def _resolve_grid(flag_value, config_value, name: str) -> tuple[float, ...]:
    if flag_value is not None:
        return parse_grid(flag_value, name)
    if config_value is not None:
        return tuple(config_value)
    raise ValueError(f"no {name} grid: pass --{name} or set [sweep] {name} in the config")


def cmd_sweep(args) -> int:
    scenario = load_scenario(args.config)
    kp_grid = _resolve_grid(args.kp, scenario.sweep_kp, "kp")
    ki_grid = _resolve_grid(args.ki, scenario.sweep_ki, "ki")
    delay_grid = _resolve_grid(args.delay, scenario.sweep_delay, "delay")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = sweep_feasible_space(scenario, kp_grid, ki_grid, delay_grid, jobs=args.jobs)

    _write(out / "sweep.csv", _sweep_csv(rows))
    _write(out / "surfaces.csv", _surfaces_csv(rows))
    extra = [
        f"config: {args.config}",
        f"out: {out}",
        f"jobs: {args.jobs}",
        f"sweep_target: {scenario.sweep_target}",
        f"kp_grid = [{', '.join(_g(v) for v in kp_grid)}]",
        f"ki_grid = [{', '.join(_g(v) for v in ki_grid)}]",
        f"delay_grid = [{', '.join(_g(v) for v in delay_grid)}]",
        "point_seed = derive_seed(base_seed, kp_index, ki_index, delay_index)",
    ]
    _write(out / "meta.txt", _meta_text(scenario, "sweep", extra))
    n_stable = sum(v.stable for fs in rows for v in fs.verdicts)
    n_total = sum(len(fs.verdicts) for fs in rows)
    print(f"sweep: {len(rows)} gain cells, {n_stable}/{n_total} stable points -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dercosim",
        description="Frequency-response co-simulation with delayed AGC signals",
    )
    parser.add_argument("--version", action="version", version=f"dercosim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and validate a scenario file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run one scenario and classify it")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--full-rate", action="store_true",
                   help="sample every integration step instead of every cosim step")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="map the feasible (kp, ki, delay) space")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kp", help="grid: 'a,b,c' or 'lo:hi:step'")
    p.add_argument("--ki", help="grid: 'a,b,c' or 'lo:hi:step'")
    p.add_argument("--delay", help="grid: 'a,b,c' or 'lo:hi:step'")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main_entry():
    raise SystemExit(main())
