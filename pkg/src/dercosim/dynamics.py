"""Single-area frequency dynamics.

Aggregated swing equation plus governor-turbine chains and DER units with
droop-based primary frequency response, advanced by a fixed-step classical
Runge-Kutta integrator. All powers are per-unit on the system base; frequency
is carried internally as a per-unit deviation and converted to Hz only where
droop and ACE formulas are evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MAX_DT = 0.1  # hard cap on the integration step, seconds

EVENT_KINDS = ("generation_outage", "load_step")

_TIME_EPS = 1e-9


class IntegrationDivergedError(RuntimeError):
    """Integrator produced a non-finite state."""

    def __init__(self, t: float):
        super().__init__(f"integration diverged at t={t:.6g} s")
        self.t = t


@dataclass(frozen=True)
class SwingParams:
    """Aggregated swing-bus parameters (powers in p.u. on base_mva)."""

    inertia: float            # H, seconds on base_mva
    damping: float            # load damping, p.u. power per p.u. frequency
    base_mva: float
    nominal_hz: float = 60.0

    def __post_init__(self):
        if not self.inertia > 0:
            raise ValueError(f"inertia must be positive, got {self.inertia!r}")
        if not self.damping >= 0:
            raise ValueError(f"damping must be non-negative, got {self.damping!r}")
        if not self.base_mva > 0:
            raise ValueError(f"base_mva must be positive, got {self.base_mva!r}")
        if not self.nominal_hz > 0:
            raise ValueError(f"nominal_hz must be positive, got {self.nominal_hz!r}")


@dataclass(frozen=True)
class GovernorUnit:
    """Two-lag governor-turbine chain with valve limits."""

    id: str
    droop: float              # p.u. frequency per p.u. power
    t_gov: float              # governor (valve) time constant, s
    t_turbine: float          # turbine time constant, s
    p_ref: float              # scheduled output, p.u.
    p_min: float = 0.0
    p_max: float = 1.0

    def __post_init__(self):
        if not self.droop > 0:
            raise ValueError(f"{self.id}: droop must be positive, got {self.droop!r}")
        if not self.t_gov > 0 or not self.t_turbine > 0:
            raise ValueError(f"{self.id}: time constants must be positive")
        if not self.p_min <= self.p_ref <= self.p_max:
            raise ValueError(
                f"{self.id}: p_ref {self.p_ref!r} outside [{self.p_min!r}, {self.p_max!r}]"
            )


@dataclass(frozen=True)
class DerUnit:
    """First-order DER active-power path with droop response and MPPT cap.

    droop_up defaults to droop_dn; the overfrequency branch curtails output
    (negative contribution), the underfrequency branch raises it.
    """

    id: str
    aggregator_id: str
    t_lag: float              # output lag time constant, s
    droop_dn: float           # underfrequency gain, p.u. power per p.u. frequency
    p0: float                 # scheduled output, p.u.
    p_mppt: float             # maximum available power, p.u.
    droop_up: float | None = None
    deadband_under: float = 0.0   # Hz
    deadband_over: float = 0.0    # Hz

    def __post_init__(self):
        if self.droop_up is None:
            object.__setattr__(self, "droop_up", self.droop_dn)
        if not self.t_lag > 0:
            raise ValueError(f"{self.id}: t_lag must be positive, got {self.t_lag!r}")
        if self.droop_dn < 0 or self.droop_up < 0:
            raise ValueError(f"{self.id}: droop gains must be non-negative")
        if self.deadband_under < 0 or self.deadband_over < 0:
            raise ValueError(f"{self.id}: deadbands must be non-negative")
        if not 0.0 <= self.p0 <= self.p_mppt:
            raise ValueError(
                f"{self.id}: p0 {self.p0!r} outside [0, p_mppt={self.p_mppt!r}]"
            )


@dataclass(eq=False)
class SystemState:
    """Continuous state of the area model at time t.

    p_valve/p_mech are per-governor, p_out per-DER; all p.u. on the system
    base. Frequency in Hz is nominal_hz * (1 + df_pu).
    """

    t: float
    df_pu: float
    p_valve: np.ndarray
    p_mech: np.ndarray
    p_out: np.ndarray
    p_load: float

    def copy(self) -> "SystemState":
        return SystemState(
            t=self.t,
            df_pu=self.df_pu,
            p_valve=self.p_valve.copy(),
            p_mech=self.p_mech.copy(),
            p_out=self.p_out.copy(),
            p_load=self.p_load,
        )


@dataclass(eq=False)
class StateDerivatives:
    """Time derivative of every continuous state, same shapes as SystemState."""

    df_pu: float
    p_valve: np.ndarray
    p_mech: np.ndarray
    p_out: np.ndarray


@dataclass(frozen=True)
class Event:
    """Step disturbance applied at the first integration boundary >= time."""

    time: float
    kind: str
    magnitude: float          # p.u.; positive = power deficit

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if not self.time >= 0:
            raise ValueError(f"event time must be non-negative, got {self.time!r}")
        if not math.isfinite(self.magnitude):
            raise ValueError(f"event magnitude must be finite, got {self.magnitude!r}")


def pfr_droop(f_hz: float, unit: DerUnit, nominal_hz: float = 60.0) -> float:
    """Droop power contribution of one DER unit, p.u.

    Zero inside the deadband, positive (raise) below it, negative (curtail)
    above it; continuous at both edges.
    """
    if not math.isfinite(f_hz) or f_hz <= 0.0:
        raise ValueError(f"frequency must be finite and positive, got {f_hz!r}")
    lower = nominal_hz - unit.deadband_under
    upper = nominal_hz + unit.deadband_over
    if f_hz < lower:
        return (lower - f_hz) / nominal_hz * unit.droop_dn
    if f_hz > upper:
        return -(f_hz - upper) / nominal_hz * unit.droop_up
    return 0.0


def der_target(unit: DerUnit, f_hz: float, p_ext: float, nominal_hz: float = 60.0) -> float:
    """Setpoint the DER output lag tracks: schedule + droop + AGC share,
    clamped to [0, p_mppt]."""
    raw = unit.p0 + pfr_droop(f_hz, unit, nominal_hz) + p_ext
    return min(max(raw, 0.0), unit.p_mppt)


def apply_event(state: SystemState, event: Event) -> SystemState:
    """Fold a disturbance into the net load; both kinds add their magnitude."""
    out = state.copy()
    out.p_load = state.p_load + event.magnitude
    return out


class EventSchedule:
    """Serves events in time order, each exactly once.

    Events bind to the first integration boundary at or after their time
    (1 ns tolerance absorbs accumulated step rounding).
    """

    def __init__(self, events):
        self._events = sorted(events, key=lambda e: e.time)
        self._next = 0

    def pop_due(self, t: float) -> list[Event]:
        due = []
        while self._next < len(self._events) and self._events[self._next].time <= t + _TIME_EPS:
            due.append(self._events[self._next])
            self._next += 1
        return due

    @property
    def remaining(self) -> int:
        return len(self._events) - self._next


def rk4_step_vector(f, y: np.ndarray, t: float, dt: float) -> np.ndarray:
    """One classical 4th-order Runge-Kutta step of dy/dt = f(t, y)."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * dt, y + (0.5 * dt) * k1)
    k3 = f(t + 0.5 * dt, y + (0.5 * dt) * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class FrequencyModel:
    """Vectorized area model over a fixed set of governors and DER units.

    Unit parameters are packed into arrays once at construction; the scalar
    formulas (pfr_droop, der_target) and the vectorized right-hand side
    evaluate the same expressions in the same operation order.
    """

    def __init__(self, swing: SwingParams, governors, ders):
        self.swing = swing
        self.governors = tuple(governors)
        self.ders = tuple(ders)
        n, m = len(self.governors), len(self.ders)
        self.n_governors = n
        self.n_ders = m

        self._r = np.array([g.droop for g in self.governors], dtype=float)
        self._inv_t_gov = 1.0 / np.array([g.t_gov for g in self.governors], dtype=float)
        self._inv_t_turb = 1.0 / np.array([g.t_turbine for g in self.governors], dtype=float)
        self._p_ref = np.array([g.p_ref for g in self.governors], dtype=float)
        self._p_min = np.array([g.p_min for g in self.governors], dtype=float)
        self._p_max = np.array([g.p_max for g in self.governors], dtype=float)

        self._inv_t_lag = 1.0 / np.array([u.t_lag for u in self.ders], dtype=float)
        self._droop_dn = np.array([u.droop_dn for u in self.ders], dtype=float)
        self._droop_up = np.array([u.droop_up for u in self.ders], dtype=float)
        f0 = swing.nominal_hz
        self._f_lower = np.array([f0 - u.deadband_under for u in self.ders], dtype=float)
        self._f_upper = np.array([f0 + u.deadband_over for u in self.ders], dtype=float)
        self._p0 = np.array([u.p0 for u in self.ders], dtype=float)
        self._p_mppt = np.array([u.p_mppt for u in self.ders], dtype=float)

        self._iv = slice(1, 1 + n)
        self._im = slice(1 + n, 1 + 2 * n)
        self._io = slice(1 + 2 * n, 1 + 2 * n + m)
        self._size = 1 + 2 * n + m

    def frequency_hz(self, state: SystemState) -> float:
        return self.swing.nominal_hz * (1.0 + state.df_pu)

    def initial_state(self, p_load: float | None = None) -> SystemState:
        """Balanced equilibrium: every lag settled at its schedule, df = 0.

        With the default p_load (= total scheduled generation) all
        derivatives are zero.
        """
        if p_load is None:
            p_load = float(self._p_ref.sum() + self._p0.sum())
        return SystemState(
            t=0.0,
            df_pu=0.0,
            p_valve=self._p_ref.copy(),
            p_mech=self._p_ref.copy(),
            p_out=self._p0.copy(),
            p_load=p_load,
        )

    def _pack(self, state: SystemState) -> np.ndarray:
        y = np.empty(self._size)
        y[0] = state.df_pu
        y[self._iv] = state.p_valve
        y[self._im] = state.p_mech
        y[self._io] = state.p_out
        return y

    def _unpack(self, y: np.ndarray, t: float, p_load: float) -> SystemState:
        return SystemState(
            t=t,
            df_pu=float(y[0]),
            p_valve=y[self._iv].copy(),
            p_mech=y[self._im].copy(),
            p_out=y[self._io].copy(),
            p_load=p_load,
        )

    def _deriv(self, y, p_ext_gov, p_ext_der, p_load):
        df = y[0]
        p_valve = y[self._iv]
        p_mech = y[self._im]
        p_out = y[self._io]
        swing = self.swing
        f_hz = swing.nominal_hz * (1.0 + df)

        dy = np.empty_like(y)
        dy[0] = (p_mech.sum() + p_out.sum() - p_load - swing.damping * df) / (2.0 * swing.inertia)

        dv = ((self._p_ref + p_ext_gov - df / self._r) - p_valve) * self._inv_t_gov
        # anti-windup: no push past an active valve limit
        dv[(p_valve >= self._p_max) & (dv > 0.0)] = 0.0
        dv[(p_valve <= self._p_min) & (dv < 0.0)] = 0.0
        dy[self._iv] = dv
        dy[self._im] = (p_valve - p_mech) * self._inv_t_turb

        # droop branches mirror pfr_droop term for term
        droop = np.where(
            f_hz < self._f_lower,
            (self._f_lower - f_hz) / swing.nominal_hz * self._droop_dn,
            np.where(
                f_hz > self._f_upper,
                -(f_hz - self._f_upper) / swing.nominal_hz * self._droop_up,
                0.0,
            ),
        )
        target = np.clip(self._p0 + droop + p_ext_der, 0.0, self._p_mppt)
        do = (target - p_out) * self._inv_t_lag
        do[(p_out >= self._p_mppt) & (do > 0.0)] = 0.0
        do[(p_out <= 0.0) & (do < 0.0)] = 0.0
        dy[self._io] = do
        return dy

    def _rk4_flat(self, y, p_ext_gov, p_ext_der, p_load, dt, t_next):
        def rhs(_t, yy):
            return self._deriv(yy, p_ext_gov, p_ext_der, p_load)

        # overflow is how divergence manifests; the finiteness check below
        # turns it into a typed error instead of a warning
        with np.errstate(over="ignore", invalid="ignore"):
            y2 = rk4_step_vector(rhs, y, 0.0, dt)
        np.clip(y2[self._iv], self._p_min, self._p_max, out=y2[self._iv])
        np.clip(y2[self._io], 0.0, self._p_mppt, out=y2[self._io])
        if not np.all(np.isfinite(y2)):
            raise IntegrationDivergedError(t_next)
        return y2

    def derivatives(self, state: SystemState, p_ext_gov, p_ext_der) -> StateDerivatives:
        """Right-hand side of the area model with zero-order-held AGC inputs."""
        y = self._pack(state)
        if not np.all(np.isfinite(y)) or not math.isfinite(state.p_load):
            raise ValueError(f"non-finite state at t={state.t:.6g} s")
        p_ext_gov = np.asarray(p_ext_gov, dtype=float)
        p_ext_der = np.asarray(p_ext_der, dtype=float)
        if p_ext_gov.shape != (self.n_governors,):
            raise ValueError(f"expected {self.n_governors} governor inputs, got {p_ext_gov.shape}")
        if p_ext_der.shape != (self.n_ders,):
            raise ValueError(f"expected {self.n_ders} DER inputs, got {p_ext_der.shape}")
        dy = self._deriv(y, p_ext_gov, p_ext_der, state.p_load)
        return StateDerivatives(
            df_pu=float(dy[0]),
            p_valve=dy[self._iv].copy(),
            p_mech=dy[self._im].copy(),
            p_out=dy[self._io].copy(),
        )

    def rk4_step(self, state: SystemState, p_ext_gov, p_ext_der, dt: float) -> SystemState:
        """Advance one fixed step with inputs held constant across the step.

        Limited states are re-clamped after the step; a non-finite result
        raises IntegrationDivergedError carrying the offending time.
        """
        if not 0.0 < dt <= MAX_DT:
            raise ValueError(f"dt must be in (0, {MAX_DT}], got {dt!r}")
        p_ext_gov = np.asarray(p_ext_gov, dtype=float)
        p_ext_der = np.asarray(p_ext_der, dtype=float)
        t_next = state.t + dt
        y2 = self._rk4_flat(self._pack(state), p_ext_gov, p_ext_der, state.p_load, dt, t_next)
        return self._unpack(y2, t_next, state.p_load)


def advance_span(
    model: FrequencyModel,
    state: SystemState,
    schedule: EventSchedule,
    p_ext_gov,
    p_ext_der,
    n_steps: int,
    dt: float,
    recorder=None,
) -> SystemState:
    """Advance n_steps RK4 steps with zero-order-held inputs.

    Due events fold into the load at each step boundary before stepping.
    recorder(state), when given, is called after every step except the last
    (whose boundary the caller samples itself). The span runs on the packed
    state vector; each step is the same kernel rk4_step uses.
    """
    p_ext_gov = np.asarray(p_ext_gov, dtype=float)
    p_ext_der = np.asarray(p_ext_der, dtype=float)
    y = model._pack(state)
    t = state.t
    p_load = state.p_load
    for i in range(n_steps):
        for ev in schedule.pop_due(t):
            p_load = p_load + ev.magnitude
        t_next = t + dt
        y = model._rk4_flat(y, p_ext_gov, p_ext_der, p_load, dt, t_next)
        t = t_next
        if recorder is not None and i < n_steps - 1:
            recorder(model._unpack(y, t, p_load))
    return model._unpack(y, t, p_load)
