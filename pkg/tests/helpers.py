"""Shared builders for small test scenarios (constructed directly, no TOML)."""

from __future__ import annotations

from dercosim import (
    AgcConfig,
    AggregatorSpec,
    ChannelSpec,
    DerUnit,
    DetectorConfig,
    Event,
    GovernorSpec,
    GovernorUnit,
    Scenario,
    SwingParams,
)


def tiny_scenario(
    *,
    agc: bool = True,
    bias: float = -10.0,
    kp: float = 0.2,
    ki: float = 0.2,
    freq_deadband: float = 0.02,
    der_delay: float = 0.0,
    der_jitter: float = 0.0,
    der_drop: float = 0.0,
    gov_beta: float = 0.0,
    der_beta: float = 1.0,
    horizon: float = 60.0,
    dt: float = 0.02,
    dt_cosim: float = 0.1,
    seed: int = 7,
    events: tuple = None,
    outage: float = 0.05,
    sweep_target: str = "der",
    ace_source: str = "transmission",
    uplink: ChannelSpec = ChannelSpec(),
    hard_bound_hz: float = 1.0,
    window_s: float = 15.0,
) -> Scenario:
    """One governor + one 2-unit aggregator; AGC dispatched per gov/der betas."""
    swing = SwingParams(inertia=4.0, damping=1.0, base_mva=1000.0)
    gov = GovernorSpec(
        unit=GovernorUnit(
            id="g1", droop=0.2, t_gov=0.2, t_turbine=0.5, p_ref=0.5, p_min=0.0, p_max=0.8
        ),
        beta=gov_beta,
    )
    der = tuple(
        DerUnit(
            id=f"a1_der{i+1}",
            aggregator_id="a1",
            t_lag=0.5,
            droop_dn=1.0,
            deadband_under=0.036,
            deadband_over=0.036,
            p0=0.1,
            p_mppt=0.3,
        )
        for i in range(2)
    )
    agg = AggregatorSpec(
        id="a1", units=der, beta=der_beta, delay=der_delay, jitter=der_jitter, drop=der_drop
    )
    agc_cfg = (
        AgcConfig(bias=bias, betas=(gov_beta, der_beta), kp=kp, ki=ki, freq_deadband=freq_deadband)
        if agc
        else None
    )
    if events is None:
        events = (Event(time=5.0, kind="generation_outage", magnitude=outage),)
    detector = DetectorConfig(
        hard_bound_hz=hard_bound_hz,
        window_s=window_s,
        settle_band_hz=freq_deadband if agc else 0.0,
    )
    return Scenario(
        swing=swing,
        governors=(gov,),
        aggregators=(agg,),
        agc=agc_cfg,
        ace_source=ace_source,
        uplink=uplink,
        events=events,
        horizon=horizon,
        dt=dt,
        dt_cosim=dt_cosim,
        seed=seed,
        detector=detector,
        sweep_target=sweep_target,
    )
