"""Federated co-simulation kernel.

A lockstep broker owns a queue of timestamped messages flowing between the
transmission dynamics federate, the control center, per-governor agents, and
per-bus DER aggregators. Channels add configurable latency, jitter, and drops
from per-channel seeded streams. run_monolithic is the direct-coupled
reference: at zero delay it must reproduce the federation bit for bit.
"""

from __future__ import annotations

import hashlib
import heapq
import math
import random
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .agc import AgcState, compute_ace, dispatch, pi_update
from .dynamics import (
    EventSchedule,
    FrequencyModel,
    IntegrationDivergedError,
    advance_span,
)

if TYPE_CHECKING:
    from .scenario import Scenario

FEDERATE_KINDS = ("transmission", "control_center", "governor_agent", "der_aggregator")
TOPICS = ("frequency", "ace", "agc_command")

_GRANT_EPS = 1e-9


class SchedulingError(RuntimeError):
    """A federate requested a grant that violates lockstep advancement."""


def derive_seed(base: int, *parts) -> int:
    """Deterministic 63-bit child seed from a base seed and an index path.

    Stable across platforms and Python versions (keyed on the repr of the
    path, hashed with BLAKE2b).
    """
    h = hashlib.blake2b(repr((int(base),) + tuple(parts)).encode("ascii"), digest_size=8)
    return int.from_bytes(h.digest(), "big") >> 1


@dataclass(frozen=True)
class FederateId:
    kind: str
    index: int

    def __post_init__(self):
        if self.kind not in FEDERATE_KINDS:
            raise ValueError(f"unknown federate kind {self.kind!r}")
        if self.index < 0:
            raise ValueError(f"federate index must be non-negative, got {self.index!r}")

    def __str__(self):
        return f"{self.kind}[{self.index}]"


@dataclass(frozen=True)
class Message:
    seq: int
    sender: FederateId
    receiver: FederateId
    topic: str
    value: float
    send_time: float
    deliver_time: float


class DelayChannel:
    """Unidirectional delayed signal path between two federates.

    Drop decisions and jitter offsets come from the channel's own seeded
    stream, drawn in a fixed order, so runs replay identically. Channels
    with zero drop probability and zero jitter consume no randomness.
    """

    def __init__(
        self,
        sender: FederateId,
        receiver: FederateId,
        base_delay: float = 0.0,
        jitter_half_width: float = 0.0,
        drop_probability: float = 0.0,
        rng_seed: int = 0,
    ):
        if base_delay < 0:
            raise ValueError(f"base_delay must be non-negative, got {base_delay!r}")
        if not 0.0 <= jitter_half_width <= base_delay:
            raise ValueError(
                f"jitter_half_width must be in [0, base_delay], got {jitter_half_width!r} "
                f"with base_delay {base_delay!r}"
            )
        if not 0.0 <= drop_probability <= 1.0:
            raise ValueError(f"drop_probability must be in [0, 1], got {drop_probability!r}")
        self.sender = sender
        self.receiver = receiver
        self.base_delay = base_delay
        self.jitter_half_width = jitter_half_width
        self.drop_probability = drop_probability
        self.rng_seed = rng_seed
        self._rng = random.Random(rng_seed)
        self._next_seq = 0
        self.order: int | None = None   # attach index, set by the broker
        self.sent = 0
        self.delivered = 0
        self.dropped = 0
        self.drop_log: list[tuple[float, int]] = []   # (send_time, seq)

    @property
    def label(self) -> str:
        return f"{self.sender}->{self.receiver}"

    def send(self, topic: str, value: float, t: float) -> Message | None:
        """Stamp a message for this send time, or drop it (returns None)."""
        if topic not in TOPICS:
            raise ValueError(f"unknown topic {topic!r}")
        seq = self._next_seq
        self._next_seq += 1
        self.sent += 1
        if self.drop_probability > 0.0 and self._rng.random() < self.drop_probability:
            self.dropped += 1
            self.drop_log.append((t, seq))
            return None
        jitter = 0.0
        if self.jitter_half_width > 0.0:
            jitter = self._rng.uniform(-self.jitter_half_width, self.jitter_half_width)
        return Message(
            seq=seq,
            sender=self.sender,
            receiver=self.receiver,
            topic=topic,
            value=value,
            send_time=t,
            deliver_time=t + self.base_delay + jitter,
        )


class Broker:
    """Lockstep time coordinator and sole owner of the in-flight queue.

    Time advances in fixed increments of dt_cosim. A queued message is
    released at the first grant boundary at or after its deliver_time;
    simultaneous releases order by (deliver_time, channel attach order, seq).
    """

    def __init__(self, dt_cosim: float):
        if not dt_cosim > 0:
            raise ValueError(f"dt_cosim must be positive, got {dt_cosim!r}")
        self.dt_cosim = dt_cosim
        self.step = 0
        self.time = 0.0
        self._channels: list[DelayChannel] = []
        self._queue: list[tuple[float, int, int, int, Message]] = []

    def attach(self, channel: DelayChannel) -> DelayChannel:
        channel.order = len(self._channels)
        self._channels.append(channel)
        return channel

    @property
    def pending(self) -> int:
        return len(self._queue)

    def send(self, channel: DelayChannel, topic: str, value: float) -> Message | None:
        """Send on an attached channel at the current grant time."""
        if channel.order is None:
            raise ValueError("channel is not attached to this broker")
        msg = channel.send(topic, value, self.time)
        if msg is None:
            return None
        # grant index at which the message becomes visible; the 1 ns slack
        # keeps exact boundary hits (deliver_time == k*dt) on grant k
        deliver_step = math.ceil(msg.deliver_time / self.dt_cosim - _GRANT_EPS)
        heapq.heappush(self._queue, (msg.deliver_time, channel.order, msg.seq, deliver_step, msg))
        return msg

    def deliver_due(self) -> list[Message]:
        """Release every queued message due at or before the current grant."""
        out = []
        while self._queue and self._queue[0][3] <= self.step:
            _, order, _, _, msg = heapq.heappop(self._queue)
            self._channels[order].delivered += 1
            out.append(msg)
        return out

    def advance(self, requested: float) -> tuple[float, list[Message]]:
        """Grant the next lockstep boundary and release newly due messages."""
        expected = (self.step + 1) * self.dt_cosim
        if abs(requested - expected) > _GRANT_EPS * max(1.0, abs(expected)):
            raise SchedulingError(
                f"lockstep violation: requested {requested!r}, expected {expected!r}"
            )
        self.step += 1
        self.time = expected
        return self.time, self.deliver_due()


@dataclass(frozen=True)
class ChannelLog:
    channel: str
    sent: int
    delivered: int
    dropped: int
    drop_log: tuple[tuple[float, int], ...]


@dataclass(eq=False)
class RunRecord:
    """Recorded time series and message accounting for one simulation run."""

    t: np.ndarray
    f_hz: np.ndarray
    df_pu: np.ndarray
    ace_mw: np.ndarray
    agc_cmd_sent: np.ndarray
    agc_cmd_applied_der: np.ndarray
    agc_cmd_applied_gov: np.ndarray
    p_mech_total: np.ndarray
    p_der_total: np.ndarray
    p_load: np.ndarray
    diverged: bool = False
    diverged_t: float | None = None
    channel_logs: tuple[ChannelLog, ...] = ()
    stale_measurements: int = 0

    COLUMNS = (
        "t", "f_hz", "df_pu", "ace_mw", "agc_cmd_sent", "agc_cmd_applied_der",
        "agc_cmd_applied_gov", "p_mech_total", "p_der_total", "p_load",
    )

    def series(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.COLUMNS}


class _Recorder:
    def __init__(self):
        self.rows = {name: [] for name in RunRecord.COLUMNS}

    def add(self, model, state, last_ace, last_sent, applied_der, applied_gov):
        r = self.rows
        r["t"].append(state.t)
        r["f_hz"].append(model.frequency_hz(state))
        r["df_pu"].append(state.df_pu)
        r["ace_mw"].append(last_ace)
        r["agc_cmd_sent"].append(last_sent)
        r["agc_cmd_applied_der"].append(applied_der)
        r["agc_cmd_applied_gov"].append(applied_gov)
        r["p_mech_total"].append(float(state.p_mech.sum()))
        r["p_der_total"].append(float(state.p_out.sum()))
        r["p_load"].append(state.p_load)

    def finish(self, **kwargs) -> RunRecord:
        arrays = {name: np.array(vals, dtype=float) for name, vals in self.rows.items()}
        return RunRecord(**arrays, **kwargs)


def _grid_counts(scenario) -> tuple[int, int, int]:
    n_outer = round(scenario.horizon / scenario.dt_cosim)
    n_inner = round(scenario.dt_cosim / scenario.dt)
    ticks_every = (
        round(scenario.agc.interval / scenario.dt_cosim) if scenario.agc is not None else 0
    )
    return n_outer, n_inner, ticks_every


def run_federation(scenario: "Scenario", *, full_rate: bool = False) -> RunRecord:
    """Execute the full federation loop for one scenario.

    Each grant cycle: deliver due messages, let the control center consume
    measurements and dispatch commands (zero-delay hops cascade within the
    same grant), publish transmission measurements on AGC ticks, sample the
    series, then integrate the dynamics across the cosim step with the held
    commands. Dropped or missing commands leave the last value held.
    """
    gov_units = [g.unit for g in scenario.governors]
    der_units = [u for a in scenario.aggregators for u in a.units]
    model = FrequencyModel(scenario.swing, gov_units, der_units)
    state = model.initial_state()
    schedule = EventSchedule(scenario.events)

    cfg = scenario.agc
    agc_on = cfg is not None
    s_base = scenario.swing.base_mva

    n_gov = len(gov_units)
    n_agg = len(scenario.aggregators)
    member_count = np.array([len(a.units) for a in scenario.aggregators], dtype=float)
    der_agg_index = np.array(
        [j for j, a in enumerate(scenario.aggregators) for _ in a.units], dtype=int
    )

    trans_id = FederateId("transmission", 0)
    cc_id = FederateId("control_center", 0)

    broker = Broker(scenario.dt_cosim)
    uplink = broker.attach(
        DelayChannel(
            trans_id,
            cc_id,
            base_delay=scenario.uplink.delay,
            jitter_half_width=scenario.uplink.jitter,
            drop_probability=scenario.uplink.drop,
            rng_seed=derive_seed(scenario.seed, 0),
        )
    )
    gov_channels = []
    for i, g in enumerate(scenario.governors):
        gov_channels.append(
            broker.attach(
                DelayChannel(
                    cc_id,
                    FederateId("governor_agent", i),
                    base_delay=g.delay,
                    jitter_half_width=g.jitter,
                    drop_probability=g.drop,
                    rng_seed=derive_seed(scenario.seed, 1 + i),
                )
            )
        )
    agg_channels = []
    for j, a in enumerate(scenario.aggregators):
        agg_channels.append(
            broker.attach(
                DelayChannel(
                    cc_id,
                    FederateId("der_aggregator", j),
                    base_delay=a.delay,
                    jitter_half_width=a.jitter,
                    drop_probability=a.drop,
                    rng_seed=derive_seed(scenario.seed, 1 + n_gov + j),
                )
            )
        )

    held_gov = np.zeros(n_gov)
    held_agg = np.zeros(n_agg)
    agc_state = AgcState()
    last_ace = 0.0
    last_sent = 0.0
    stale = 0
    pending_meas: list[Message] = []

    def route(msgs):
        nonlocal stale
        for m in msgs:
            if m.receiver == cc_id:
                pending_meas.append(m)
            elif m.receiver.kind == "governor_agent":
                held_gov[m.receiver.index] = m.value   # last writer wins
            elif m.receiver.kind == "der_aggregator":
                held_agg[m.receiver.index] = m.value
            else:
                raise RuntimeError(f"message routed to unexpected federate {m.receiver}")

    def control_center():
        """Consume measurements in delivery order; stale ticks are skipped."""
        nonlocal agc_state, last_ace, last_sent, stale
        while pending_meas:
            m = pending_meas.pop(0)
            if scenario.ace_source == "transmission" and m.topic == "frequency":
                continue   # informational; the forwarded ACE drives the PI
            tick = round(m.send_time / cfg.interval)
            if tick <= agc_state.last_tick:
                stale += 1
                continue
            if m.topic == "ace":
                ace = m.value
            else:
                ace = compute_ace(m.value, cfg)
                last_ace = ace
            agc_state, u = pi_update(agc_state, ace, cfg, s_base, tick)
            last_sent = u
            per_unit = dispatch(u, cfg)
            for i, ch in enumerate(gov_channels):
                broker.send(ch, "agc_command", float(per_unit[i]))
            for j, ch in enumerate(agg_channels):
                broker.send(ch, "agc_command", float(per_unit[n_gov + j]))

    def pump():
        while True:
            due = broker.deliver_due()
            if not due and not pending_meas:
                return
            route(due)
            control_center()

    n_outer, n_inner, ticks_every = _grid_counts(scenario)
    rec = _Recorder()
    inner_recorder = None
    if full_rate:
        def inner_recorder(st):
            rec.add(model, st, last_ace, last_sent, float(held_agg.sum()), float(held_gov.sum()))

    diverged = False
    diverged_t = None
    for k in range(n_outer + 1):
        tk = k * scenario.dt_cosim
        if k > 0:
            _, due = broker.advance(tk)
            route(due)
            pump()
        if agc_on and k % ticks_every == 0:
            f_now = model.frequency_hz(state)
            if scenario.ace_source == "transmission":
                last_ace = compute_ace(f_now, cfg)
                broker.send(uplink, "frequency", f_now)
                broker.send(uplink, "ace", last_ace)
            else:
                broker.send(uplink, "frequency", f_now)
            pump()
        rec.add(model, state, last_ace, last_sent, float(held_agg.sum()), float(held_gov.sum()))
        if k == n_outer:
            break
        p_ext_der = (held_agg / member_count)[der_agg_index] if n_agg else np.zeros(0)
        try:
            state = advance_span(
                model, state, schedule, held_gov, p_ext_der, n_inner, scenario.dt,
                recorder=inner_recorder,
            )
        except IntegrationDivergedError as e:
            diverged = True
            diverged_t = e.t
            break

    logs = tuple(
        ChannelLog(ch.label, ch.sent, ch.delivered, ch.dropped, tuple(ch.drop_log))
        for ch in [uplink, *gov_channels, *agg_channels]
    )
    return rec.finish(
        diverged=diverged,
        diverged_t=diverged_t,
        channel_logs=logs,
        stale_measurements=stale,
    )


def run_monolithic(scenario: "Scenario", *, full_rate: bool = False) -> RunRecord:
    """Direct-coupled reference run: no broker, no channels.

    Implements the zero-delay command schedule (measure, update, apply at
    each AGC tick boundary); it is the oracle the federation must match at
    zero configured delay. Channel settings in the scenario are ignored.
    """
    gov_units = [g.unit for g in scenario.governors]
    der_units = [u for a in scenario.aggregators for u in a.units]
    model = FrequencyModel(scenario.swing, gov_units, der_units)
    state = model.initial_state()
    schedule = EventSchedule(scenario.events)

    cfg = scenario.agc
    agc_on = cfg is not None
    s_base = scenario.swing.base_mva

    n_gov = len(gov_units)
    n_agg = len(scenario.aggregators)
    member_count = np.array([len(a.units) for a in scenario.aggregators], dtype=float)
    der_agg_index = np.array(
        [j for j, a in enumerate(scenario.aggregators) for _ in a.units], dtype=int
    )

    held_gov = np.zeros(n_gov)
    held_agg = np.zeros(n_agg)
    agc_state = AgcState()
    last_ace = 0.0
    last_sent = 0.0

    n_outer, n_inner, ticks_every = _grid_counts(scenario)
    rec = _Recorder()
    inner_recorder = None
    if full_rate:
        def inner_recorder(st):
            rec.add(model, st, last_ace, last_sent, float(held_agg.sum()), float(held_gov.sum()))

    diverged = False
    diverged_t = None
    for k in range(n_outer + 1):
        tk = k * scenario.dt_cosim
        if agc_on and k % ticks_every == 0:
            f_now = model.frequency_hz(state)
            last_ace = compute_ace(f_now, cfg)
            agc_state, u = pi_update(agc_state, last_ace, cfg, s_base, k // ticks_every)
            last_sent = u
            per_unit = dispatch(u, cfg)
            held_gov = per_unit[:n_gov]
            held_agg = per_unit[n_gov:]
        rec.add(model, state, last_ace, last_sent, float(held_agg.sum()), float(held_gov.sum()))
        if k == n_outer:
            break
        p_ext_der = (held_agg / member_count)[der_agg_index] if n_agg else np.zeros(0)
        try:
            state = advance_span(
                model, state, schedule, held_gov, p_ext_der, n_inner, scenario.dt,
                recorder=inner_recorder,
            )
        except IntegrationDivergedError as e:
            diverged = True
            diverged_t = e.t
            break

    return rec.finish(diverged=diverged, diverged_t=diverged_t, channel_logs=(), stale_measurements=0)
