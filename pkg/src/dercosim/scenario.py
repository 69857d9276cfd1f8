"""Scenario configuration: schema, validation, serialization.

The on-disk format is a TOML subset: `[section]` tables of `key = value`
pairs plus repeated `[[governor]]`, `[[aggregator]]`, and `[[event]]` blocks.
Unknown sections or keys are errors; every violation is reported with its
section and key. The formal key table ships in the README.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from importlib import resources

try:
    import tomllib
except ModuleNotFoundError:              # Python 3.10
    import tomli as tomllib

from .agc import AgcConfig
from .dynamics import MAX_DT, DerUnit, Event, GovernorUnit, SwingParams
from .stability import DetectorConfig

ACE_SOURCES = ("transmission", "control_center")
SWEEP_TARGETS = ("der", "gov")

_REL_TOL = 1e-9


class ConfigError(ValueError):
    """Scenario validation failure, located by section and key."""

    def __init__(self, section: str, key: str | None, message: str):
        self.section = section
        self.key = key
        where = f"[{section}]" if key is None else f"[{section}] {key}"
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class ChannelSpec:
    """Latency parameters of one cyber path."""

    delay: float = 0.0
    jitter: float = 0.0
    drop: float = 0.0


@dataclass(frozen=True)
class GovernorSpec:
    unit: GovernorUnit
    beta: float = 0.0
    delay: float = 0.0
    jitter: float = 0.0
    drop: float = 0.0


@dataclass(frozen=True)
class AggregatorSpec:
    id: str
    units: tuple[DerUnit, ...]
    beta: float = 0.0
    delay: float = 0.0
    jitter: float = 0.0
    drop: float = 0.0


@dataclass(frozen=True)
class Scenario:
    """Fully resolved experiment description.

    Participation factors order governors first, then aggregators, matching
    the AgcConfig betas; agc is None when secondary control is disabled.
    """

    swing: SwingParams
    governors: tuple[GovernorSpec, ...]
    aggregators: tuple[AggregatorSpec, ...]
    agc: AgcConfig | None
    ace_source: str
    uplink: ChannelSpec
    events: tuple[Event, ...]
    horizon: float
    dt: float
    dt_cosim: float
    seed: int
    detector: DetectorConfig
    sweep_target: str = "der"
    sweep_kp: tuple[float, ...] | None = None
    sweep_ki: tuple[float, ...] | None = None
    sweep_delay: tuple[float, ...] | None = None
    full_rate: bool = False

    def with_overrides(
        self,
        kp: float | None = None,
        ki: float | None = None,
        delay: float | None = None,
        seed: int | None = None,
    ) -> "Scenario":
        """Sweep-point substitution: gains, the targeted channel delay, and
        the base seed; everything else is untouched."""
        changes: dict = {}
        if kp is not None or ki is not None:
            if self.agc is None:
                raise ValueError("cannot override AGC gains: AGC is disabled")
            changes["agc"] = dataclasses.replace(
                self.agc,
                kp=self.agc.kp if kp is None else kp,
                ki=self.agc.ki if ki is None else ki,
            )
        if delay is not None:
            if delay < 0:
                raise ValueError(f"delay must be non-negative, got {delay!r}")
            if self.sweep_target == "gov":
                specs = []
                for g in self.governors:
                    if g.jitter > delay:
                        raise ValueError(
                            f"governor {g.unit.id}: jitter {g.jitter} exceeds swept delay {delay}"
                        )
                    specs.append(dataclasses.replace(g, delay=delay))
                changes["governors"] = tuple(specs)
            else:
                specs = []
                for a in self.aggregators:
                    if a.jitter > delay:
                        raise ValueError(
                            f"aggregator {a.id}: jitter {a.jitter} exceeds swept delay {delay}"
                        )
                    specs.append(dataclasses.replace(a, delay=delay))
                changes["aggregators"] = tuple(specs)
        if seed is not None:
            changes["seed"] = seed
        return dataclasses.replace(self, **changes)


# --- schema -----------------------------------------------------------------

_REQUIRED = object()

# section -> key -> (type tag, default); _REQUIRED means the key must appear
_TABLE_SCHEMA = {
    "system": {
        "inertia": ("float", _REQUIRED),
        "damping": ("float", _REQUIRED),
        "base_mva": ("float", _REQUIRED),
        "nominal_hz": ("float", 60.0),
    },
    "simulation": {
        "horizon": ("float", _REQUIRED),
        "dt": ("float", 0.01),
        "dt_cosim": ("float", 0.1),
        "seed": ("int", 0),
    },
    "agc": {
        "enabled": ("bool", True),
        "bias": ("float", None),
        "freq_deadband": ("float", 0.0),
        "kp": ("float", 0.2),
        "ki": ("float", 0.2),
        "interval": ("float", 4.0),
        "u_min": ("float", -1.0),
        "u_max": ("float", 1.0),
        "ace_source": ("str", "transmission"),
    },
    "channels": {
        "uplink_delay": ("float", 0.0),
        "uplink_jitter": ("float", 0.0),
        "uplink_drop": ("float", 0.0),
    },
    "detector": {
        "hard_bound_hz": ("float", 3.0),
        "window_s": ("float", 20.0),
        "growth_ratio": ("float", 1.05),
        "amplitude_floor_hz": ("float", 0.01),
    },
    "sweep": {
        "delay_target": ("str", "der"),
        "kp": ("float_list", None),
        "ki": ("float_list", None),
        "delay": ("float_list", None),
    },
    "output": {
        "full_rate": ("bool", False),
    },
}

_BLOCK_SCHEMA = {
    "governor": {
        "id": ("str", _REQUIRED),
        "droop": ("float", _REQUIRED),
        "t_gov": ("float", _REQUIRED),
        "t_turbine": ("float", _REQUIRED),
        "p_ref": ("float", _REQUIRED),
        "p_min": ("float", 0.0),
        "p_max": ("float", 1.0),
        "beta": ("float", 0.0),
        "delay": ("float", 0.0),
        "jitter": ("float", 0.0),
        "drop": ("float", 0.0),
    },
    "aggregator": {
        "id": ("str", _REQUIRED),
        "count": ("int", 1),
        "t_lag": ("float", _REQUIRED),
        "droop_dn": ("float", _REQUIRED),
        "droop_up": ("float", None),
        "deadband_under": ("float", 0.0),
        "deadband_over": ("float", 0.0),
        "p0": ("float", None),
        "p0_total": ("float", None),
        "p_mppt": ("float", None),
        "p_mppt_total": ("float", None),
        "beta": ("float", 0.0),
        "delay": ("float", 0.0),
        "jitter": ("float", 0.0),
        "drop": ("float", 0.0),
    },
    "event": {
        "time": ("float", _REQUIRED),
        "kind": ("str", _REQUIRED),
        "magnitude": ("float", _REQUIRED),
    },
}


def _coerce(section: str, key: str, tag: str, value):
    if tag == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(section, key, f"expected a number, got {value!r}")
        v = float(value)
        if not math.isfinite(v):
            raise ConfigError(section, key, f"must be finite, got {value!r}")
        return v
    if tag == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(section, key, f"expected an integer, got {value!r}")
        return value
    if tag == "bool":
        if not isinstance(value, bool):
            raise ConfigError(section, key, f"expected true/false, got {value!r}")
        return value
    if tag == "str":
        if not isinstance(value, str):
            raise ConfigError(section, key, f"expected a string, got {value!r}")
        return value
    if tag == "float_list":
        if not isinstance(value, list) or not value:
            raise ConfigError(section, key, f"expected a non-empty list of numbers, got {value!r}")
        out = []
        for item in value:
            if isinstance(item, bool) or not isinstance(item, (int, float)):
                raise ConfigError(section, key, f"expected numbers, got {item!r}")
            out.append(float(item))
        return tuple(out)
    raise AssertionError(f"unhandled schema tag {tag}")


def _read_table(section: str, raw: dict, schema: dict) -> dict:
    for key in raw:
        if key not in schema:
            raise ConfigError(section, key, "unknown key")
    out = {}
    for key, (tag, default) in schema.items():
        if key in raw:
            out[key] = _coerce(section, key, tag, raw[key])
        elif default is _REQUIRED:
            raise ConfigError(section, key, "required key is missing")
        else:
            out[key] = default
    return out


def _check_channel(section: str, delay: float, jitter: float, drop: float):
    if delay < 0:
        raise ConfigError(section, "delay", f"must be non-negative, got {delay!r}")
    if not 0.0 <= jitter <= delay:
        raise ConfigError(
            section, "jitter", f"must be in [0, delay]; got {jitter!r} with delay {delay!r}"
        )
    if not 0.0 <= drop <= 1.0:
        raise ConfigError(section, "drop", f"must be in [0, 1], got {drop!r}")


def _divides(small: float, big: float) -> bool:
    n = round(big / small)
    return n >= 1 and abs(big - n * small) <= _REL_TOL * max(1.0, abs(big))


def parse_scenario(text: str) -> Scenario:
    """Parse and fully validate a scenario document."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("<document>", None, f"syntax error: {e}") from e

    known = set(_TABLE_SCHEMA) | set(_BLOCK_SCHEMA)
    for section in doc:
        if section not in known:
            raise ConfigError(section, None, "unknown section")
    for name in _BLOCK_SCHEMA:
        if name in doc and not isinstance(doc[name], list):
            raise ConfigError(name, None, f"must be written as repeated [[{name}]] blocks")
    for name in _TABLE_SCHEMA:
        if name in doc and not isinstance(doc[name], dict):
            raise ConfigError(name, None, f"must be written as a single [{name}] table")

    for required in ("system", "simulation"):
        if required not in doc:
            raise ConfigError(required, None, "required section is missing")

    system = _read_table("system", doc["system"], _TABLE_SCHEMA["system"])
    sim = _read_table("simulation", doc["simulation"], _TABLE_SCHEMA["simulation"])
    channels = _read_table("channels", doc.get("channels", {}), _TABLE_SCHEMA["channels"])
    det = _read_table("detector", doc.get("detector", {}), _TABLE_SCHEMA["detector"])
    sweep = _read_table("sweep", doc.get("sweep", {}), _TABLE_SCHEMA["sweep"])
    output = _read_table("output", doc.get("output", {}), _TABLE_SCHEMA["output"])

    try:
        swing = SwingParams(
            inertia=system["inertia"],
            damping=system["damping"],
            base_mva=system["base_mva"],
            nominal_hz=system["nominal_hz"],
        )
    except ValueError as e:
        raise ConfigError("system", None, str(e)) from e

    governors = []
    gov_ids = set()
    for idx, raw in enumerate(doc.get("governor", [])):
        section = f"governor #{idx + 1}"
        vals = _read_table(section, raw, _BLOCK_SCHEMA["governor"])
        if vals["id"] in gov_ids:
            raise ConfigError(section, "id", f"duplicate governor id {vals['id']!r}")
        gov_ids.add(vals["id"])
        try:
            unit = GovernorUnit(
                id=vals["id"],
                droop=vals["droop"],
                t_gov=vals["t_gov"],
                t_turbine=vals["t_turbine"],
                p_ref=vals["p_ref"],
                p_min=vals["p_min"],
                p_max=vals["p_max"],
            )
        except ValueError as e:
            raise ConfigError(section, None, str(e)) from e
        if vals["beta"] < 0:
            raise ConfigError(section, "beta", f"must be non-negative, got {vals['beta']!r}")
        _check_channel(section, vals["delay"], vals["jitter"], vals["drop"])
        governors.append(
            GovernorSpec(
                unit=unit, beta=vals["beta"],
                delay=vals["delay"], jitter=vals["jitter"], drop=vals["drop"],
            )
        )

    aggregators = []
    agg_ids = set()
    for idx, raw in enumerate(doc.get("aggregator", [])):
        section = f"aggregator #{idx + 1}"
        vals = _read_table(section, raw, _BLOCK_SCHEMA["aggregator"])
        if vals["id"] in agg_ids:
            raise ConfigError(section, "id", f"duplicate aggregator id {vals['id']!r}")
        agg_ids.add(vals["id"])
        count = vals["count"]
        if count < 1:
            raise ConfigError(section, "count", f"must be >= 1, got {count!r}")

        def per_unit(key: str) -> float:
            single, total = vals[key], vals[key + "_total"]
            if (single is None) == (total is None):
                raise ConfigError(
                    section, key, f"exactly one of {key} / {key}_total must be set"
                )
            return single if single is not None else total / count

        p0 = per_unit("p0")
        p_mppt = per_unit("p_mppt")
        if vals["beta"] < 0:
            raise ConfigError(section, "beta", f"must be non-negative, got {vals['beta']!r}")
        _check_channel(section, vals["delay"], vals["jitter"], vals["drop"])
        try:
            units = tuple(
                DerUnit(
                    id=f"{vals['id']}_der{n + 1}",
                    aggregator_id=vals["id"],
                    t_lag=vals["t_lag"],
                    droop_dn=vals["droop_dn"],
                    droop_up=vals["droop_up"],
                    deadband_under=vals["deadband_under"],
                    deadband_over=vals["deadband_over"],
                    p0=p0,
                    p_mppt=p_mppt,
                )
                for n in range(count)
            )
        except ValueError as e:
            raise ConfigError(section, None, str(e)) from e
        aggregators.append(
            AggregatorSpec(
                id=vals["id"], units=units, beta=vals["beta"],
                delay=vals["delay"], jitter=vals["jitter"], drop=vals["drop"],
            )
        )

    if not governors and not aggregators:
        raise ConfigError("system", None, "scenario defines no governors and no DER aggregators")

    events = []
    for idx, raw in enumerate(doc.get("event", [])):
        section = f"event #{idx + 1}"
        vals = _read_table(section, raw, _BLOCK_SCHEMA["event"])
        try:
            events.append(Event(time=vals["time"], kind=vals["kind"], magnitude=vals["magnitude"]))
        except ValueError as e:
            raise ConfigError(section, None, str(e)) from e

    agc_raw = doc.get("agc", {})
    agc_vals = None
    agc = None
    ace_source = "transmission"
    if agc_raw or "agc" in doc:
        agc_vals = _read_table("agc", agc_raw, _TABLE_SCHEMA["agc"])
    if agc_vals is not None and agc_vals["enabled"]:
        if agc_vals["bias"] is None:
            raise ConfigError("agc", "bias", "required when AGC is enabled")
        ace_source = agc_vals["ace_source"]
        if ace_source not in ACE_SOURCES:
            raise ConfigError("agc", "ace_source", f"must be one of {ACE_SOURCES}, got {ace_source!r}")
        betas = tuple(g.beta for g in governors) + tuple(a.beta for a in aggregators)
        total = sum(betas)
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(
                "agc", "betas",
                f"participation factors over governors and aggregators must sum to 1, got {total!r}",
            )
        try:
            agc = AgcConfig(
                bias=agc_vals["bias"],
                betas=betas,
                kp=agc_vals["kp"],
                ki=agc_vals["ki"],
                interval=agc_vals["interval"],
                nominal_hz=system["nominal_hz"],
                freq_deadband=agc_vals["freq_deadband"],
                u_min=agc_vals["u_min"],
                u_max=agc_vals["u_max"],
            )
        except ValueError as e:
            raise ConfigError("agc", None, str(e)) from e

    _check_channel("channels", channels["uplink_delay"], channels["uplink_jitter"], channels["uplink_drop"])
    uplink = ChannelSpec(
        delay=channels["uplink_delay"],
        jitter=channels["uplink_jitter"],
        drop=channels["uplink_drop"],
    )

    horizon, dt, dt_cosim = sim["horizon"], sim["dt"], sim["dt_cosim"]
    if not 0.0 < dt <= MAX_DT:
        raise ConfigError("simulation", "dt", f"must be in (0, {MAX_DT}], got {dt!r}")
    if dt_cosim <= 0:
        raise ConfigError("simulation", "dt_cosim", f"must be positive, got {dt_cosim!r}")
    if not _divides(dt, dt_cosim):
        raise ConfigError(
            "simulation", "dt", f"dt ({dt!r}) must divide dt_cosim ({dt_cosim!r})"
        )
    if agc is not None and not _divides(dt_cosim, agc.interval):
        raise ConfigError(
            "simulation", "dt_cosim",
            f"dt_cosim ({dt_cosim!r}) must divide the AGC interval ({agc.interval!r})",
        )
    if horizon <= 0 or not _divides(dt_cosim, horizon):
        raise ConfigError(
            "simulation", "horizon",
            f"horizon ({horizon!r}) must be a positive multiple of dt_cosim ({dt_cosim!r})",
        )

    settle_band = agc.freq_deadband if agc is not None else 0.0
    try:
        detector = DetectorConfig(
            hard_bound_hz=det["hard_bound_hz"],
            window_s=det["window_s"],
            growth_ratio=det["growth_ratio"],
            amplitude_floor_hz=det["amplitude_floor_hz"],
            settle_band_hz=settle_band,
            nominal_hz=system["nominal_hz"],
        )
    except ValueError as e:
        raise ConfigError("detector", None, str(e)) from e
    if horizon < 2.0 * detector.window_s - _REL_TOL:
        raise ConfigError(
            "simulation", "horizon",
            f"horizon ({horizon!r} s) must cover two detector windows "
            f"({2 * detector.window_s!r} s)",
        )

    if sweep["delay_target"] not in SWEEP_TARGETS:
        raise ConfigError(
            "sweep", "delay_target",
            f"must be one of {SWEEP_TARGETS}, got {sweep['delay_target']!r}",
        )
    for key in ("kp", "ki", "delay"):
        grid = sweep[key]
        if grid is not None and any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("sweep", key, f"grid must be strictly increasing, got {grid!r}")
    if sweep["delay"] is not None and any(d < 0 for d in sweep["delay"]):
        raise ConfigError("sweep", "delay", "grid values must be non-negative")

    return Scenario(
        swing=swing,
        governors=tuple(governors),
        aggregators=tuple(aggregators),
        agc=agc,
        ace_source=ace_source,
        uplink=uplink,
        events=tuple(events),
        horizon=horizon,
        dt=dt,
        dt_cosim=dt_cosim,
        seed=sim["seed"],
        detector=detector,
        sweep_target=sweep["delay_target"],
        sweep_kp=sweep["kp"],
        sweep_ki=sweep["ki"],
        sweep_delay=sweep["delay"],
        full_rate=output["full_rate"],
    )


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())


# --- serialization ----------------------------------------------------------

def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_fmt_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {v!r}")


def _emit(lines: list[str], header: str, pairs):
    lines.append(header)
    for key, value in pairs:
        if value is not None:
            lines.append(f"{key} = {_fmt_value(value)}")
    lines.append("")


def dumps_scenario(s: Scenario) -> str:
    """Canonical text form; parse(dumps(s)) == s."""
    lines: list[str] = []
    _emit(lines, "[system]", [
        ("inertia", s.swing.inertia),
        ("damping", s.swing.damping),
        ("base_mva", s.swing.base_mva),
        ("nominal_hz", s.swing.nominal_hz),
    ])
    _emit(lines, "[simulation]", [
        ("horizon", s.horizon),
        ("dt", s.dt),
        ("dt_cosim", s.dt_cosim),
        ("seed", s.seed),
    ])
    if s.agc is not None:
        _emit(lines, "[agc]", [
            ("enabled", True),
            ("bias", s.agc.bias),
            ("freq_deadband", s.agc.freq_deadband),
            ("kp", s.agc.kp),
            ("ki", s.agc.ki),
            ("interval", s.agc.interval),
            ("u_min", s.agc.u_min),
            ("u_max", s.agc.u_max),
            ("ace_source", s.ace_source),
        ])
    _emit(lines, "[channels]", [
        ("uplink_delay", s.uplink.delay),
        ("uplink_jitter", s.uplink.jitter),
        ("uplink_drop", s.uplink.drop),
    ])
    _emit(lines, "[detector]", [
        ("hard_bound_hz", s.detector.hard_bound_hz),
        ("window_s", s.detector.window_s),
        ("growth_ratio", s.detector.growth_ratio),
        ("amplitude_floor_hz", s.detector.amplitude_floor_hz),
    ])
    _emit(lines, "[sweep]", [
        ("delay_target", s.sweep_target),
        ("kp", s.sweep_kp),
        ("ki", s.sweep_ki),
        ("delay", s.sweep_delay),
    ])
    _emit(lines, "[output]", [("full_rate", s.full_rate)])
    for g in s.governors:
        _emit(lines, "[[governor]]", [
            ("id", g.unit.id),
            ("droop", g.unit.droop),
            ("t_gov", g.unit.t_gov),
            ("t_turbine", g.unit.t_turbine),
            ("p_ref", g.unit.p_ref),
            ("p_min", g.unit.p_min),
            ("p_max", g.unit.p_max),
            ("beta", g.beta),
            ("delay", g.delay),
            ("jitter", g.jitter),
            ("drop", g.drop),
        ])
    for a in s.aggregators:
        u = a.units[0]
        _emit(lines, "[[aggregator]]", [
            ("id", a.id),
            ("count", len(a.units)),
            ("t_lag", u.t_lag),
            ("droop_dn", u.droop_dn),
            ("droop_up", u.droop_up),
            ("deadband_under", u.deadband_under),
            ("deadband_over", u.deadband_over),
            ("p0", u.p0),
            ("p_mppt", u.p_mppt),
            ("beta", a.beta),
            ("delay", a.delay),
            ("jitter", a.jitter),
            ("drop", a.drop),
        ])
    for e in s.events:
        _emit(lines, "[[event]]", [
            ("time", e.time),
            ("kind", e.kind),
            ("magnitude", e.magnitude),
        ])
    return "\n".join(lines)


def reference_scenario(name: str) -> Scenario:
    """Load one of the scenario files shipped with the package."""
    res = resources.files("dercosim").joinpath("scenarios", f"{name}.toml")
    try:
        text = res.read_text(encoding="utf-8")
    except FileNotFoundError:
        available = sorted(
            p.name.removesuffix(".toml")
            for p in resources.files("dercosim").joinpath("scenarios").iterdir()
            if p.name.endswith(".toml")
        )
        raise ValueError(f"unknown scenario {name!r}; available: {available}") from None
    return parse_scenario(text)
