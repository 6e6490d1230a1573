"""Run configuration stored as flat TOML with dotted section keys.

Example::

    seed = 20240101
    horizon = 280
    mcmc.iterations = 10000
    mcmc.burn_in = 3000
    abc.accepted = 10000
    abc.quantile = 0.05
    prior.variance_scales = [0.4, 0.08, 0.05, 0.01]
    subject.id = "400"

Every key is optional except ``seed``; unknown keys are rejected.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields

from .abc import AbcConfig
from .errors import ConfigurationError, ValidationError
from .mcmc import McmcConfig
from .priors import PriorSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

PRIOR_KEYS = ("rate_lower", "rate_upper", "capacity_cap", "v0_bounds", "delay_support",
              "nu0", "variance_scales")
MCMC_KEYS = ("iterations", "burn_in", "max_failures", "fallback_every")
ABC_KEYS = ("accepted", "quantile", "pool_budget", "chunk_size")
OUTPUT_KEYS = ("resample", "trajectories", "learnability_prior_draws")
SUBJECT_KEYS = ("id", "route", "m0_source", "m0")


@dataclass
class OutputConfig:
    resample: int = 10_000
    trajectories: int = 100
    learnability_prior_draws: int = 1_000_000


@dataclass
class RunConfig:
    """Everything a fit needs besides the data."""

    seed: int
    prior: PriorSpec = field(default_factory=PriorSpec)
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    abc: AbcConfig = field(default_factory=AbcConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    horizon: float = 280.0
    step: float = 1.0
    subject: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigurationError(f"seed must be a nonnegative integer, got {self.seed!r}")
        if self.seed >= 2 ** 64:
            raise ConfigurationError("seed must fit in 64 bits")
        source = self.subject.get("m0_source", "day0")
        if source not in ("day0", "value"):
            raise ConfigurationError(f"subject.m0_source must be 'day0' or 'value', got {source!r}")
        if source == "value" and "m0" not in self.subject:
            raise ConfigurationError("subject.m0_source = 'value' needs subject.m0")
        self.mcmc.horizon = self.horizon
        self.mcmc.step = self.step

    def with_seed(self, seed):
        return RunConfig(seed, self.prior, self.mcmc, self.abc, self.output, self.horizon,
                         self.step, dict(self.subject))


def _section(data, name, keys):
    sub = data.pop(name, {})
    if not isinstance(sub, dict):
        raise ConfigurationError(f"'{name}' must be a section of dotted keys")
    unknown = set(sub) - set(keys)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {name}: {sorted(unknown)}")
    return sub


def config_from_dict(data):
    data = dict(data)
    if "seed" not in data:
        raise ConfigurationError("config must set 'seed'")
    prior = _section(data, "prior", PRIOR_KEYS)
    mcmc = _section(data, "mcmc", MCMC_KEYS)
    abc = _section(data, "abc", ABC_KEYS)
    output = _section(data, "output", OUTPUT_KEYS)
    subject = _section(data, "subject", SUBJECT_KEYS)
    seed = data.pop("seed")
    horizon = float(data.pop("horizon", 280.0))
    step = float(data.pop("step", 1.0))
    if data:
        raise ConfigurationError(f"unknown top-level key(s): {sorted(data)}")
    try:
        return RunConfig(
            seed=seed,
            prior=PriorSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in prior.items()}),
            mcmc=McmcConfig(horizon=horizon, step=step, **mcmc),
            abc=AbcConfig(**abc),
            output=OutputConfig(**output),
            horizon=horizon, step=step,
            subject={k: str(v) if k in ("id", "route") else v for k, v in subject.items()},
        )
    except ValidationError as err:
        raise ConfigurationError(str(err)) from err
    except TypeError as err:
        raise ConfigurationError(f"bad config value: {err}") from err


def load_config(path):
    """Read a :class:`RunConfig` from a TOML file."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as err:
        raise ConfigurationError(f"cannot read config {path}: {err}") from err
    except tomllib.TOMLDecodeError as err:
        raise ConfigurationError(f"invalid config {path}: {err}") from err
    return config_from_dict(data)


def _toml_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_to_toml(cfg):
    """Serialize a config back to the flat dotted-key form."""
    lines = [f"seed = {cfg.seed}", f"horizon = {_toml_value(cfg.horizon)}",
             f"step = {_toml_value(cfg.step)}"]
    sections = (
        ("prior", asdict(cfg.prior), PRIOR_KEYS),
        ("mcmc", {f.name: getattr(cfg.mcmc, f.name) for f in fields(cfg.mcmc)}, MCMC_KEYS),
        ("abc", {f.name: getattr(cfg.abc, f.name) for f in fields(cfg.abc)}, ABC_KEYS),
        ("output", asdict(cfg.output), OUTPUT_KEYS),
        ("subject", cfg.subject, SUBJECT_KEYS),
    )
    for name, values, keys in sections:
        for key in keys:
            if key in values and values[key] is not None:
                lines.append(f"{name}.{key} = {_toml_value(values[key])}")
    return "\n".join(lines) + "\n"


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_toml(cfg))
