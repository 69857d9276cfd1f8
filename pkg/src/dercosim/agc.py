"""Discrete secondary frequency control.

Area control error from the biased frequency deviation, a PI controller
ticking on a fixed interval, and participation-factor dispatch of the total
command to the controllable units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BETA_SUM_TOL = 1e-9


@dataclass(frozen=True)
class AgcConfig:
    """AGC parameters. bias is signed, MW per 0.1 Hz; with bias < 0 an
    underfrequency event produces a positive (raise) command.

    betas are validated to sum to 1 within 1e-9 and then renormalized
    exactly so dispatch conserves the command to float precision.
    """

    bias: float
    betas: tuple[float, ...]
    kp: float = 0.2
    ki: float = 0.2
    interval: float = 4.0
    nominal_hz: float = 60.0
    freq_deadband: float = 0.0     # Hz, error tolerance band
    u_min: float = -1.0
    u_max: float = 1.0

    def __post_init__(self):
        if not self.interval > 0:
            raise ValueError(f"interval must be positive, got {self.interval!r}")
        if self.freq_deadband < 0:
            raise ValueError(f"freq_deadband must be non-negative, got {self.freq_deadband!r}")
        if not self.u_min < self.u_max:
            raise ValueError(f"require u_min < u_max, got [{self.u_min!r}, {self.u_max!r}]")
        if len(self.betas) == 0:
            raise ValueError("betas must not be empty")
        if any(b < 0 for b in self.betas):
            raise ValueError(f"participation factors must be non-negative, got {self.betas!r}")
        total = sum(self.betas)
        if abs(total - 1.0) > BETA_SUM_TOL:
            raise ValueError(f"participation factors must sum to 1, got {total!r}")
        object.__setattr__(self, "betas", tuple(b / total for b in self.betas))


@dataclass(frozen=True)
class AgcState:
    """PI controller state between ticks."""

    integrator: float = 0.0    # accumulated ACE (p.u.) * time, p.u.*s
    last_tick: int = -1
    last_command: float = 0.0


def compute_ace(f_meas: float, cfg: AgcConfig) -> float:
    """Area control error in MW; zero inside the error tolerance deadband."""
    if not math.isfinite(f_meas):
        raise ValueError(f"measured frequency must be finite, got {f_meas!r}")
    error = f_meas - cfg.nominal_hz
    if abs(error) <= cfg.freq_deadband:
        return 0.0
    return 10.0 * cfg.bias * error

def pi_update(
    st: AgcState, ace: float, cfg: AgcConfig, s_base: float, tick: int
) -> tuple[AgcState, float]:
    """One controller tick: forward-rectangle integration of the per-unit ACE,
    output clamped to [u_min, u_max] with the integrator suspended while the
    output is clamped against the direction the ACE is pushing.

    Ticks must be strictly increasing; an out-of-order tick is rejected.
    """
    if tick <= st.last_tick:
        raise ValueError(f"out-of-order AGC tick {tick} (last was {st.last_tick})")
    ace_pu = ace / s_base
    integrator = st.integrator + ace_pu * cfg.interval
    raw = cfg.kp * ace_pu + cfg.ki * integrator
    if (raw > cfg.u_max and ace_pu > 0.0) or (raw < cfg.u_min and ace_pu < 0.0):
        integrator = st.integrator
        raw = cfg.kp * ace_pu + cfg.ki * integrator
    command = min(max(raw, cfg.u_min), cfg.u_max)
    return AgcState(integrator=integrator, last_tick=tick, last_command=command), command


def dispatch(command: float, cfg: AgcConfig) -> np.ndarray:
    """Split the total command across units by participation factor."""
    if not math.isfinite(command):
        raise ValueError(f"command must be finite, got {command!r}")
    return np.array(cfg.betas, dtype=float) * command
