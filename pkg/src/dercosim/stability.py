"""Stability classification and feasible-delay-space search.

A run is unstable on numerical divergence, on a hard frequency bound, or on
a growing oscillation envelope over the final window. Delay scans are full
linear sweeps (never bisection: the feasible set may exclude short delays),
merged into maximal intervals of consecutive stable grid points.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .cosim import RunRecord, derive_seed, run_federation

if TYPE_CHECKING:
    from .scenario import Scenario

STABLE_REASONS = ("settled", "bounded_nongrowing")
UNSTABLE_REASONS = ("bound_exceeded", "growing_envelope", "diverged")

_EPS = 1e-9


class IllPosedScenarioError(RuntimeError):
    """The zero-delay baseline of a sweep scenario is already unstable."""


@dataclass(frozen=True)
class DetectorConfig:
    """Thresholds for the run classifier; all configurable and recorded in
    output metadata (the underlying study gives no numeric criterion)."""

    hard_bound_hz: float = 3.0
    window_s: float = 20.0
    growth_ratio: float = 1.05
    amplitude_floor_hz: float = 0.01
    settle_band_hz: float = 0.0
    nominal_hz: float = 60.0

    def __post_init__(self):
        if not self.hard_bound_hz > 0:
            raise ValueError(f"hard_bound_hz must be positive, got {self.hard_bound_hz!r}")
        if not self.window_s > 0:
            raise ValueError(f"window_s must be positive, got {self.window_s!r}")
        if not self.growth_ratio > 0:
            raise ValueError(f"growth_ratio must be positive, got {self.growth_ratio!r}")
        if self.amplitude_floor_hz < 0 or self.settle_band_hz < 0:
            raise ValueError("amplitude floor and settle band must be non-negative")


def _metric_eq(a: float, b: float) -> bool:
    return a == b or (math.isnan(a) and math.isnan(b))


@dataclass(frozen=True, eq=False)
class StabilityVerdict:
    """Classification of one run. Metric fields may be NaN (divergence, hard
    bound); equality treats NaN metrics as equal so identical results compare
    equal even after a round trip through a worker process."""

    stable: bool
    reason: str
    peak_dev_hz: float
    envelope_ratio: float     # final-window ptp over preceding-window ptp; nan if unused

    def __post_init__(self):
        ok = STABLE_REASONS if self.stable else UNSTABLE_REASONS
        if self.reason not in ok:
            raise ValueError(f"reason {self.reason!r} inconsistent with stable={self.stable}")

    def __eq__(self, other):
        if not isinstance(other, StabilityVerdict):
            return NotImplemented
        return (
            self.stable == other.stable
            and self.reason == other.reason
            and _metric_eq(self.peak_dev_hz, other.peak_dev_hz)
            and _metric_eq(self.envelope_ratio, other.envelope_ratio)
        )

    def __hash__(self):
        return hash((self.stable, self.reason))


def detect_instability(
    t, f_hz, cfg: DetectorConfig, *, diverged: bool = False
) -> StabilityVerdict:
    """Classify a frequency trajectory.

    Checks run in order: numerical divergence, hard deviation bound, then
    envelope growth (final window vs the preceding one, gated by the
    amplitude floor). Non-diverged series must span at least two windows.
    """
    t = np.asarray(t, dtype=float)
    f_hz = np.asarray(f_hz, dtype=float)
    if t.shape != f_hz.shape or t.ndim != 1:
        raise ValueError("t and f_hz must be 1-D arrays of equal length")
    dev = np.abs(f_hz - cfg.nominal_hz)
    peak = float(dev.max()) if dev.size else math.nan

    if diverged:
        return StabilityVerdict(False, "diverged", peak, math.nan)
    if f_hz.size == 0:
        raise ValueError("empty frequency series")
    if peak > cfg.hard_bound_hz:
        return StabilityVerdict(False, "bound_exceeded", peak, math.nan)

    span = t[-1] - t[0]
    if span + _EPS < 2.0 * cfg.window_s:
        raise ValueError(
            f"horizon too short: series spans {span:.6g} s, need >= {2 * cfg.window_s:.6g} s"
        )
    t_end = t[-1]
    final = f_hz[t >= t_end - cfg.window_s - _EPS]
    prev = f_hz[(t >= t_end - 2.0 * cfg.window_s - _EPS) & (t < t_end - cfg.window_s - _EPS)]
    ptp_final = float(final.max() - final.min())
    ptp_prev = float(prev.max() - prev.min())
    if ptp_prev > 0.0:
        ratio = ptp_final / ptp_prev
    else:
        ratio = math.inf if ptp_final > 0.0 else 1.0

    if ptp_final > cfg.amplitude_floor_hz and ratio > cfg.growth_ratio:
        return StabilityVerdict(False, "growing_envelope", peak, ratio)
    if abs(float(f_hz[-1]) - cfg.nominal_hz) < cfg.settle_band_hz:
        return StabilityVerdict(True, "settled", peak, ratio)
    return StabilityVerdict(True, "bounded_nongrowing", peak, ratio)


def classify_run(record: RunRecord, cfg: DetectorConfig) -> StabilityVerdict:
    return detect_instability(record.t, record.f_hz, cfg, diverged=record.diverged)


@dataclass(frozen=True)
class FeasibleSet:
    """Per-(kp, ki) result of a delay scan: the stable grid points merged
    into maximal closed intervals, plus the per-point verdicts."""

    kp: float
    ki: float
    delays: tuple[float, ...]
    verdicts: tuple[StabilityVerdict, ...]
    intervals: tuple[tuple[float, float], ...]
    resolution: float

    @property
    def lower_margin(self) -> float:
        return self.intervals[0][0] if self.intervals else math.nan

    @property
    def upper_margin(self) -> float:
        return self.intervals[-1][1] if self.intervals else math.nan


def merge_stable_intervals(delays, stable_flags) -> tuple[tuple[float, float], ...]:
    """Maximal runs of consecutive stable grid points as [lo, hi] intervals."""
    intervals = []
    start = None
    for d, ok in zip(delays, stable_flags):
        if ok and start is None:
            start = d
        elif not ok and start is not None:
            intervals.append((start, prev))
            start = None
        if ok:
            prev = d
    if start is not None:
        intervals.append((start, prev))
    return tuple(intervals)


def _grid_resolution(delays) -> float:
    if len(delays) < 2:
        return 0.0
    return float(max(b - a for a, b in zip(delays, delays[1:])))


def delay_feasible_set(
    scenario: "Scenario",
    kp: float,
    ki: float,
    delay_grid,
    *,
    kp_index: int = 0,
    ki_index: int = 0,
) -> FeasibleSet:
    """Linear scan over the delay grid at fixed gains.

    Every grid point is simulated (no bisection). Run failures count as
    unstable (diverged). Point seeds derive from (scenario seed, kp index,
    ki index, delay index) so jittered sweeps stay reproducible.
    """
    delays = [float(d) for d in delay_grid]
    if not delays:
        raise ValueError("delay grid must not be empty")
    if any(d < 0 for d in delays):
        raise ValueError("delay grid must be non-negative")
    if any(b <= a for a, b in zip(delays, delays[1:])):
        raise ValueError("delay grid must be strictly increasing")

    gains_apply = scenario.agc is not None   # without AGC the gains are inert
    verdicts = []
    for di, delay in enumerate(delays):
        point = scenario.with_overrides(
            kp=kp if gains_apply else None,
            ki=ki if gains_apply else None,
            delay=delay,
            seed=derive_seed(scenario.seed, kp_index, ki_index, di),
        )
        try:
            record = run_federation(point)
            verdicts.append(classify_run(record, scenario.detector))
        except Exception:
            verdicts.append(StabilityVerdict(False, "diverged", math.nan, math.nan))
    intervals = merge_stable_intervals(delays, [v.stable for v in verdicts])
    return FeasibleSet(
        kp=kp,
        ki=ki,
        delays=tuple(delays),
        verdicts=tuple(verdicts),
        intervals=intervals,
        resolution=_grid_resolution(delays),
    )


def _sweep_cell(args) -> FeasibleSet:
    scenario, kp, ki, i, j, delays = args
    return delay_feasible_set(scenario, kp, ki, delays, kp_index=i, ki_index=j)


def sweep_feasible_space(
    scenario: "Scenario", kp_grid, ki_grid, delay_grid, *, jobs: int = 1
) -> list[FeasibleSet]:
    """Scan the (kp, ki, delay) space; one FeasibleSet per gain pair.

    The scenario's zero-delay baseline (its own gains) must be stable or the
    sweep is rejected as ill-posed. Cells are independent: results do not
    depend on the degree of parallelism. Rows return sorted by (kp, ki).
    """
    kp_grid = [float(v) for v in kp_grid]
    ki_grid = [float(v) for v in ki_grid]
    if not kp_grid or not ki_grid:
        raise ValueError("gain grids must not be empty")

    baseline = scenario.with_overrides(delay=0.0)
    verdict = classify_run(run_federation(baseline), scenario.detector)
    if not verdict.stable:
        raise IllPosedScenarioError(
            f"zero-delay baseline is unstable ({verdict.reason}); scenario rejected"
        )

    cells = [
        (scenario, kp, ki, i, j, tuple(float(d) for d in delay_grid))
        for i, kp in enumerate(kp_grid)
        for j, ki in enumerate(ki_grid)
    ]
    if jobs <= 1:
        results = [_sweep_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_cell, cells))
    return sorted(results, key=lambda fs: (fs.kp, fs.ki))
