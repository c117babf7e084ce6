"""Run configuration: defaults, file loading, overrides, validation.

A run is configured by one YAML document with sections env, idm, mobil,
rl, gate, trainer and io. Unknown sections or keys are rejected, the
seed is a mandatory input with no default, and the fully resolved
document is written next to every run's outputs.
"""

import copy
import hashlib
import json

import yaml

from . import gate as gate_mod
from . import highway
from .driver_models import IdmParams, MobilParams
from .highway import RewardParams, RoadConfig, ScenarioSpec
from .policy import RlConfig

__all__ = ["ConfigError", "RunConfig", "load_config", "DEFAULTS", "GATE_MODES"]

GATE_MODES = ("gated", "always_accept", "rule_only")

DEFAULTS: dict = {
    "env": {
        "scenario": "emergency_brake",
        "dt": 0.1,
        "lanes": 3,
        "lane_width": 3.5,
        "road_length": 2000.0,
        "speed_limit": 120.0 / 3.6,
        "episode_steps": None,          # null: scenario default
        "base_speed": 20.0,
        "speed_jitter": 2.0,
        "cut_in_gap": 15.0,
        "trigger_gap": 15.0,
        "speed_drop": 5.0,
        "brake_gap": 10.0,
        "brake_rate": -8.0,
        "trigger_time": 1.0,
        "demand": 2000.0,
        "desired_speed_band": [90.0 / 3.6, 120.0 / 3.6],
        "distance_goal": 1000.0,
        "omega1": 1.5,
        "omega2": -0.05,
        "omega3": -2.0,
        "omega4": -0.5,
        "omega5": -0.5,
        "omega6": -20.0,
        "jerk_threshold": 2.0,
        "steer_threshold": 0.30,
    },
    "idm": {
        "time_headway": 1.5,
        "min_gap": 2.0,
        "a_max": 2.0,
        "b_comfort": 2.0,
        "exponent": 4.0,
    },
    "mobil": {
        "politeness": 0.3,
        "threshold": 0.2,
        "b_safe": 4.0,
        "cooldown": 2.0,
    },
    "rl": {
        "gamma": 0.995,
        "epsilon_clip": 0.2,
        "entropy_coef": 0.01,
        "epochs": 10,
        "batch_size": 64,
        "lr_actor": 3e-4,
        "lr_critic": 3e-4,
        "lookahead_T": 16,
        "sigma_init": 0.5,
        "target_kl": 0.015,             # null: no trust-region brake
    },
    "gate": {
        "mode": "gated",
        "delta": 0.90,
        "bootstrap_samples": 2000,
        "log_weight_clamp": 30.0,
        "r_upper": None,                # null: analytic default
        "r_lower": None,
    },
    "trainer": {
        "M": 400000,
        "beta": 39,
        "eval_episodes": 10,
        "checkpoint_every": 10,
        "max_wall_time": None,          # seconds; null: no budget
        "seed": None,                   # mandatory, no default
    },
    "io": {
        "out_root": None,
        "run_name": None,
    },
}

# concrete types for keys whose default is None
_NULLABLE_TYPES = {
    ("env", "episode_steps"): int,
    ("gate", "r_upper"): float,
    ("gate", "r_lower"): float,
    ("rl", "target_kl"): float,
    ("trainer", "max_wall_time"): float,
    ("trainer", "seed"): int,
    ("io", "out_root"): str,
    ("io", "run_name"): str,
}


class ConfigError(ValueError):
    pass


def _coerce(section: str, key: str, value, template):
    if value is None:
        if template is not None and (section, key) not in _NULLABLE_TYPES:
            raise ConfigError(f"{section}.{key} may not be null")
        return None
    target = type(template) if template is not None else _NULLABLE_TYPES.get((section, key))
    if target is None:
        return value
    if target is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if target is int:
        if isinstance(value, bool) or (not isinstance(value, int)
                                       and not (isinstance(value, float) and value.is_integer())):
            raise ConfigError(f"{section}.{key}: expected an integer, got {value!r}")
        return int(value)
    if target is str and isinstance(value, str):
        return value
    if target is list:
        if not isinstance(value, (list, tuple)) or len(value) != len(template):
            raise ConfigError(f"{section}.{key}: expected a list of {len(template)} numbers")
        return [float(v) for v in value]
    if not isinstance(value, target):
        raise ConfigError(f"{section}.{key}: expected {target.__name__}, got {value!r}")
    return value


def _merge(base: dict, incoming: dict) -> None:
    for section, content in incoming.items():
        if section not in base:
            raise ConfigError(f"unknown configuration section {section!r}")
        if not isinstance(content, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        for key, value in content.items():
            if key not in base[section]:
                raise ConfigError(f"unknown configuration key {section}.{key}")
            base[section][key] = _coerce(section, key, value, DEFAULTS[section][key])


def _parse_override(section: str, key: str, text: str):
    template = DEFAULTS[section][key]
    target = type(template) if template is not None else _NULLABLE_TYPES[(section, key)]
    if text.lower() in ("null", "none") and (template is None
                                             or (section, key) in _NULLABLE_TYPES):
        return None
    try:
        if target is list:
            return [float(part) for part in text.split(",")]
        if target is bool:
            return text.lower() in ("1", "true", "yes")
        if target is int:
            return int(text)
        if target is float:
            return float(text)
        return text
    except ValueError as err:
        raise ConfigError(f"bad value for {section}.{key}: {text!r}") from err


class RunConfig:
    """Validated, fully resolved configuration."""

    def __init__(self, data: dict):
        self.data = data

    def __getitem__(self, section: str) -> dict:
        return self.data[section]

    @property
    def seed(self) -> int:
        return self.data["trainer"]["seed"]

    def as_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=False)

    def digest(self) -> str:
        blob = json.dumps(self.data, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # ---- typed views --------------------------------------------------------

    def road_config(self) -> RoadConfig:
        env = self.data["env"]
        return RoadConfig(lanes=env["lanes"], lane_width=env["lane_width"],
                          length=env["road_length"], speed_limit=env["speed_limit"])

    def scenario_spec(self, scenario: str | None = None) -> ScenarioSpec:
        env = self.data["env"]
        name = scenario or env["scenario"]
        steps = env["episode_steps"]
        if scenario is not None and scenario != env["scenario"]:
            steps = None  # scenario switch falls back to that scenario's default
        return highway.scenario_by_name(
            name, episode_steps=steps, dt=env["dt"],
            base_speed=env["base_speed"], speed_jitter=env["speed_jitter"],
            cut_in_gap=env["cut_in_gap"], trigger_gap=env["trigger_gap"],
            speed_drop=env["speed_drop"], brake_gap=env["brake_gap"],
            brake_rate=env["brake_rate"], trigger_time=env["trigger_time"],
            demand=env["demand"],
            desired_speed_band=tuple(env["desired_speed_band"]),
            distance_goal=env["distance_goal"])

    def reward_params(self) -> RewardParams:
        env = self.data["env"]
        return RewardParams(
            w_efficiency=env["omega1"], w_jerk=env["omega2"], w_steer=env["omega3"],
            w_front_risk=env["omega4"], w_rear_risk=env["omega5"],
            w_collision=env["omega6"], jerk_threshold=env["jerk_threshold"],
            steer_threshold=env["steer_threshold"])

    def idm_params(self) -> IdmParams:
        d = self.data["idm"]
        return IdmParams(time_headway=d["time_headway"], min_gap=d["min_gap"],
                         a_max=d["a_max"], b_comfort=d["b_comfort"],
                         exponent=d["exponent"])

    def mobil_params(self) -> MobilParams:
        d = self.data["mobil"]
        return MobilParams(politeness=d["politeness"], threshold=d["threshold"],
                           b_safe=d["b_safe"], cooldown=d["cooldown"])

    def rl_config(self) -> RlConfig:
        d = self.data["rl"]
        return RlConfig(gamma=d["gamma"], epsilon_clip=d["epsilon_clip"],
                        entropy_coef=d["entropy_coef"], epochs=d["epochs"],
                        batch_size=d["batch_size"], lr_actor=d["lr_actor"],
                        lr_critic=d["lr_critic"], lookahead_T=d["lookahead_T"],
                        sigma_init=d["sigma_init"], target_kl=d["target_kl"])

    def bounds(self) -> gate_mod.NormalizationBounds:
        return gate_mod.NormalizationBounds(lower=self.data["gate"]["r_lower"],
                                            upper=self.data["gate"]["r_upper"])


def _validate(data: dict) -> None:
    env, rl, gt, tr = data["env"], data["rl"], data["gate"], data["trainer"]
    if env["scenario"] not in highway.SCENARIO_NAMES:
        raise ConfigError(f"env.scenario must be one of {highway.SCENARIO_NAMES}")
    if env["dt"] <= 0:
        raise ConfigError("env.dt must be positive")
    if env["lanes"] < 1:
        raise ConfigError("env.lanes must be at least 1")
    if env["episode_steps"] is not None and env["episode_steps"] < 1:
        raise ConfigError("env.episode_steps must be at least 1")
    if not 0.0 < rl["gamma"] < 1.0:
        raise ConfigError("rl.gamma must lie in (0, 1)")
    if not 0.0 < rl["epsilon_clip"] < 1.0:
        raise ConfigError("rl.epsilon_clip must lie in (0, 1)")
    if rl["epochs"] < 1 or rl["batch_size"] < 1 or rl["lookahead_T"] < 1:
        raise ConfigError("rl.epochs, rl.batch_size and rl.lookahead_T must be positive")
    if rl["sigma_init"] <= 0:
        raise ConfigError("rl.sigma_init must be positive")
    if rl["lr_actor"] < 0 or rl["lr_critic"] < 0:
        raise ConfigError("learning rates must be non-negative")
    if rl["target_kl"] is not None and rl["target_kl"] <= 0:
        raise ConfigError("rl.target_kl must be positive when set")
    if gt["mode"] not in GATE_MODES:
        raise ConfigError(f"gate.mode must be one of {GATE_MODES}")
    if not 0.5 < gt["delta"] < 1.0:
        raise ConfigError("gate.delta must lie in (0.5, 1)")
    if gt["bootstrap_samples"] < 100:
        raise ConfigError("gate.bootstrap_samples must be at least 100")
    if gt["log_weight_clamp"] <= 0:
        raise ConfigError("gate.log_weight_clamp must be positive")
    if tr["M"] < 1:
        raise ConfigError("trainer.M must be positive")
    if tr["beta"] < 3 or tr["beta"] % 3 != 0:
        raise ConfigError("trainer.beta must be a positive multiple of 3")
    if tr["eval_episodes"] < 1 or tr["checkpoint_every"] < 1:
        raise ConfigError("trainer.eval_episodes and trainer.checkpoint_every must be positive")
    if tr["max_wall_time"] is not None and tr["max_wall_time"] <= 0:
        raise ConfigError("trainer.max_wall_time must be positive when set")
    if tr["seed"] is None:
        raise ConfigError("a seed is required: pass --seed or set trainer.seed")
    if tr["seed"] < 0:
        raise ConfigError("trainer.seed must be non-negative")


def _resolve(data: dict) -> None:
    """Fill scenario-dependent and analytic defaults with concrete values."""
    env = data["env"]
    if env["episode_steps"] is None:
        env["episode_steps"] = highway._DEFAULT_STEPS[env["scenario"]]
    gt = data["gate"]
    if gt["r_upper"] is None or gt["r_lower"] is None:
        accel_span = highway.EGO_ACCEL_RANGE[1] - highway.EGO_ACCEL_RANGE[0]
        jerk_max = accel_span / highway.ACTUATOR_TAU
        steer_max = highway.EGO_STEER_RANGE[1]
        bounds = gate_mod.default_bounds(
            env["episode_steps"], data["rl"]["gamma"],
            w_efficiency=env["omega1"], w_jerk=env["omega2"], w_steer=env["omega3"],
            w_front_risk=env["omega4"], w_rear_risk=env["omega5"],
            w_collision=env["omega6"], jerk_max=jerk_max, steer_max=steer_max)
        if gt["r_upper"] is None:
            gt["r_upper"] = bounds.upper
        if gt["r_lower"] is None:
            gt["r_lower"] = bounds.lower
    if not gt["r_upper"] > gt["r_lower"]:
        raise ConfigError("gate.r_upper must exceed gate.r_lower")


def load_config(path: str | None = None, overrides=None,
                seed: int | None = None) -> RunConfig:
    """Assemble a validated RunConfig.

    Precedence, lowest to highest: built-in defaults, the YAML file,
    dotted overrides ("section.key" -> string value, as a mapping or as
    (key, value) pairs applied in order), the seed argument.
    """
    data = copy.deepcopy(DEFAULTS)
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("configuration file must contain a mapping")
        _merge(data, loaded)
    pairs = overrides.items() if isinstance(overrides, dict) else (overrides or [])
    for dotted, text in pairs:
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        section, key = dotted.split(".", 1)
        if section not in data or key not in data[section]:
            raise ConfigError(f"unknown configuration key {dotted}")
        data[section][key] = _parse_override(section, key, text)
    if seed is not None:
        data["trainer"]["seed"] = int(seed)
    _validate(data)
    _resolve(data)
    return RunConfig(data)
