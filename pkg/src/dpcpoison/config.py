"""Experiment configuration: YAML ingestion, strict validation, round-trip."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

import yaml


class ParseError(ValueError):
    """Configuration file does not parse; carries line information when available."""


class ValidationError(ValueError):
    """A configuration value is missing, unknown or inconsistent."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


ATTACK_MODES = ("none", "random", "algorithm1", "oracle")
PLANT_KINDS = ("oscillating_masses", "continuous", "discrete")
REFERENCE_KINDS = ("setpoint", "sinusoid")
TARGET_KINDS = ("sinusoid", "constant")


@dataclass(frozen=True)
class PlantConfig:
    """Plant selection: the built-in benchmark or explicit matrices."""

    kind: str = "oscillating_masses"
    A: list | None = None
    B: list | None = None
    C: list | None = None
    Ad: list | None = None
    Bd: list | None = None
    delta: float = 0.1


@dataclass(frozen=True)
class DpcConfig:
    """Controller parameters; weights default to the benchmark choices."""

    sigma: int = 6
    ell: int = 25
    n_g: int = 500
    lambda_g: float = 100.0
    lambda_s: float = 1.0e6
    q_weights: list | None = None  # per output channel, default 10 each
    r_weights: list | None = None  # per input channel, default 1 each
    u_bounds: list = field(default_factory=lambda: [-1.0, 1.0])
    y_bounds: list = field(default_factory=lambda: [-5.0, 5.0])


@dataclass(frozen=True)
class ReferenceConfig:
    """Output reference: a constant equilibrium set-point or per-channel sinusoids."""

    kind: str = "setpoint"
    y_setpoint: list | None = None  # default for the benchmark: [1, 1, 0, 0]
    amplitude: float = 1.0
    omega: float = 1.0
    phase: float = 0.0


@dataclass(frozen=True)
class TargetConfig:
    """Attacker's desired input trajectory generator."""

    kind: str = "sinusoid"
    amplitude: float = 1.0
    omega: float = 1.0
    phase: float = 0.0
    value: list | None = None  # constant target, per input channel


@dataclass(frozen=True)
class AttackConfig:
    mode: str = "none"
    rho: float = 0.0
    seed: int = 0
    u_target: TargetConfig = field(default_factory=TargetConfig)
    oracle_samples: int = 500


@dataclass(frozen=True)
class RunConfig:
    total_steps: int = 200
    replan_interval: int = 10
    solver_tol: float | None = None  # default 1e-9 * (1 + |q|)
    max_iter: int = 200_000
    data_seed: int = 0
    excitation_amplitude: float = 1.0
    data_length: int | None = None  # default n_g + ell + sigma - 1
    x0: list | None = None  # default zero state
    out_dir: str = "out"


@dataclass(frozen=True)
class ExperimentConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    dpc: DpcConfig = field(default_factory=DpcConfig)
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    run: RunConfig = field(default_factory=RunConfig)


_SECTIONS = {
    "plant": PlantConfig,
    "dpc": DpcConfig,
    "reference": ReferenceConfig,
    "attack": AttackConfig,
    "run": RunConfig,
}


def _build_section(cls, data: dict, prefix: str):
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ValidationError(f"{prefix}.{key}", "unknown key")
    kwargs = {}
    for key, value in data.items():
        if key == "u_target" and cls is AttackConfig:
            if not isinstance(value, dict):
                raise ValidationError(f"{prefix}.u_target", "must be a mapping")
            value = _build_section(TargetConfig, value, f"{prefix}.u_target")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValidationError(prefix, str(exc)) from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build and validate a configuration from nested plain dictionaries."""
    if not isinstance(data, dict):
        raise ValidationError("<root>", "configuration must be a mapping")
    for key in data:
        if key not in _SECTIONS:
            raise ValidationError(key, "unknown section")
    sections = {}
    for name, cls in _SECTIONS.items():
        raw = data.get(name, {})
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ValidationError(name, "section must be a mapping")
        sections[name] = _build_section(cls, raw, name)
    cfg = ExperimentConfig(**sections)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    """Cross-field consistency checks; raises `ValidationError` naming the field."""
    if cfg.plant.kind not in PLANT_KINDS:
        raise ValidationError("plant.kind", f"must be one of {PLANT_KINDS}")
    if cfg.plant.kind == "continuous" and (
        cfg.plant.A is None or cfg.plant.B is None or cfg.plant.C is None
    ):
        raise ValidationError("plant", "continuous plant requires A, B and C")
    if cfg.plant.kind == "discrete" and (
        cfg.plant.Ad is None or cfg.plant.Bd is None or cfg.plant.C is None
    ):
        raise ValidationError("plant", "discrete plant requires Ad, Bd and C")
    if cfg.plant.delta <= 0:
        raise ValidationError("plant.delta", "must be positive")

    d = cfg.dpc
    for name in ("sigma", "ell", "n_g"):
        if getattr(d, name) < 1:
            raise ValidationError(f"dpc.{name}", "must be a positive integer")
    if d.lambda_g < 0 or d.lambda_s < 0:
        raise ValidationError("dpc.lambda_g/lambda_s", "must be nonnegative")
    for name in ("u_bounds", "y_bounds"):
        bounds = getattr(d, name)
        if len(bounds) != 2 or not bounds[0] <= bounds[1]:
            raise ValidationError(f"dpc.{name}", "must be [lower, upper] with lower <= upper")

    if cfg.reference.kind not in REFERENCE_KINDS:
        raise ValidationError("reference.kind", f"must be one of {REFERENCE_KINDS}")

    a = cfg.attack
    if a.mode not in ATTACK_MODES:
        raise ValidationError("attack.mode", f"must be one of {ATTACK_MODES}")
    if a.rho < 0:
        raise ValidationError("attack.rho", "must be nonnegative")
    if a.u_target.kind not in TARGET_KINDS:
        raise ValidationError("attack.u_target.kind", f"must be one of {TARGET_KINDS}")
    if a.oracle_samples < 1:
        raise ValidationError("attack.oracle_samples", "must be positive")

    r = cfg.run
    if r.replan_interval < 1:
        raise ValidationError("run.replan_interval", "must be at least 1")
    if r.replan_interval > d.ell:
        raise ValidationError(
            "run.replan_interval", f"must not exceed the planning horizon ell={d.ell}"
        )
    if r.total_steps <= d.sigma:
        raise ValidationError("run.total_steps", f"must exceed the warmup length sigma={d.sigma}")
    if r.max_iter < 1:
        raise ValidationError("run.max_iter", "must be positive")
    if r.solver_tol is not None and r.solver_tol <= 0:
        raise ValidationError("run.solver_tol", "must be positive when given")
    if r.excitation_amplitude < 0:
        raise ValidationError("run.excitation_amplitude", "must be nonnegative")
    if r.data_length is not None:
        needed = d.n_g + d.ell + d.sigma - 1
        if r.data_length != needed:
            raise ValidationError(
                "run.data_length",
                f"must equal n_g + ell + sigma - 1 = {needed} for n_g={d.n_g}",
            )


def load_config(path) -> ExperimentConfig:
    """Load and validate a YAML configuration file."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ParseError(f"cannot parse {path}{where}: {exc}") from exc
    if data is None:
        data = {}
    return config_from_dict(data)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Nested plain-dict form of a configuration (inverse of `config_from_dict`)."""
    return dataclasses.asdict(cfg)


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=True)
