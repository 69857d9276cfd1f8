"""Cyber-physical co-simulation of frequency control under AGC signal delays.

A single-area frequency-response model (swing bus, governor-turbine chains,
DER units with droop) runs inside a small federated co-simulation kernel
whose channels add configurable latency, jitter, and packet loss to the AGC
signal path. Sweep tooling maps the feasible (kp, ki, delay) space.
"""

__version__ = "0.1.0"

from .agc import AgcConfig, AgcState, compute_ace, dispatch, pi_update
from .cosim import (
    Broker,
    ChannelLog,
    DelayChannel,
    FederateId,
    Message,
    RunRecord,
    SchedulingError,
    derive_seed,
    run_federation,
    run_monolithic,
)
from .dynamics import (
    DerUnit,
    Event,
    EventSchedule,
    FrequencyModel,
    GovernorUnit,
    IntegrationDivergedError,
    SwingParams,
    SystemState,
    apply_event,
    der_target,
    pfr_droop,
)
from .scenario import (
    AggregatorSpec,
    ChannelSpec,
    ConfigError,
    GovernorSpec,
    Scenario,
    dumps_scenario,
    load_scenario,
    parse_scenario,
    reference_scenario,
)
from .stability import (
    DetectorConfig,
    FeasibleSet,
    IllPosedScenarioError,
    StabilityVerdict,
    classify_run,
    delay_feasible_set,
    detect_instability,
    sweep_feasible_space,
)
