"""Pipeline configuration: one validated document of every module default.

Loading order: built-in defaults, then a JSON file (`--config`), then environment
variables named ``AFPRIM__SECTION__KEY`` (values parsed as JSON, falling back to a
plain string). Unknown sections or keys are rejected at every stage.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional

from .lifting import AdamParams, FilterThresholds, LiftConfig
from .primitives import FieldConfig
from .synth import SCENARIOS

ENV_PREFIX = "AFPRIM__"


class ConfigError(ValueError):
    """Invalid configuration document or override."""


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


@dataclass
class SynthSection:
    scenario: str = "seated-box"
    samples: int = 4
    jitter: float = 1.0
    object_points: int = 500
    body_points: int = 500
    views: int = 8
    elevation: float = 10.0
    scale: float = 256.0
    resolution: int = 512
    joint_noise_px: float = 2.0
    outlier_views: int = 0
    mask_margin: float = 0.03

    def validate(self) -> None:
        _check(self.scenario in SCENARIOS, f"synth.scenario must be one of {', '.join(SCENARIOS)}")
        _check(self.samples >= 1, "synth.samples must be >= 1")
        _check(self.jitter >= 0, "synth.jitter must be >= 0")
        _check(self.object_points >= 1 and self.body_points >= 1, "synth point counts must be >= 1")
        _check(self.views >= 2, "synth.views must be >= 2")
        _check(0.0 <= self.elevation <= 30.0, "synth.elevation must lie in [0, 30] degrees")
        _check(self.scale > 0, "synth.scale must be > 0")
        _check(self.resolution >= 16, "synth.resolution must be >= 16")
        _check(self.joint_noise_px >= 0, "synth.joint_noise_px must be >= 0")
        _check(0 <= self.outlier_views < self.views, "synth.outlier_views must lie in [0, views)")
        _check(self.mask_margin >= 0, "synth.mask_margin must be >= 0")


@dataclass
class LiftSection:
    tau_stage1: float = 100.0
    tau_stage2: float = 200.0
    min_joints: Optional[int] = None
    k_candidates: int = 7
    spacing_mult: float = 0.3
    lambda_collision: float = 400.0
    kappa: float = 50.0
    lr: float = 1e-2
    iterations: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    fd_step: float = 1e-4
    iou_lo: float = 0.3
    iou_hi: float = 0.8
    tau_inlier: int = 3
    penetration: float = 0.01
    penetration_samples: int = 10_000

    def validate(self) -> None:
        _check(0 < self.tau_stage1 <= self.tau_stage2, "lift: need 0 < tau_stage1 <= tau_stage2")
        _check(self.min_joints is None or self.min_joints >= 1, "lift.min_joints must be >= 1")
        _check(self.k_candidates >= 1 and self.k_candidates % 2 == 1, "lift.k_candidates must be odd")
        _check(self.spacing_mult > 0, "lift.spacing_mult must be > 0")
        _check(self.lambda_collision >= 0, "lift.lambda_collision must be >= 0")
        _check(self.kappa > 0, "lift.kappa must be > 0")
        _check(self.penetration_samples >= 10_000, "lift.penetration_samples must be >= 10000")
        try:
            self.lift_config()
        except ValueError as exc:
            raise ConfigError(f"lift: {exc}") from None

    def lift_config(self) -> LiftConfig:
        adam = AdamParams(self.lr, self.iterations, self.beta1, self.beta2, self.eps, self.fd_step)
        thr = FilterThresholds(self.iou_lo, self.iou_hi, self.tau_inlier, self.penetration)
        return LiftConfig(self.tau_stage1, self.tau_stage2, self.min_joints, self.k_candidates,
                          self.spacing_mult, self.lambda_collision, self.kappa, adam, thr,
                          self.penetration_samples)


@dataclass
class FieldSection:
    n_b: int = 300
    extent: float = 1.5
    resolution: int = 32
    sigma_p: Optional[float] = None
    sigma_n: Optional[float] = None
    pair_radius: Optional[float] = None
    direction: str = "object->human"

    def validate(self) -> None:
        try:
            self.field_config()
        except ValueError as exc:
            raise ConfigError(f"field: {exc}") from None

    def field_config(self) -> FieldConfig:
        return FieldConfig(self.n_b, self.extent, self.resolution, self.sigma_p, self.sigma_n,
                           self.pair_radius, self.direction)


@dataclass
class AffordanceSection:
    rho: float = 1.0
    rule: str = "max"

    def validate(self) -> None:
        _check(self.rho > 0, "affordance.rho must be > 0")
        _check(self.rule in ("max", "mean", "median"), "affordance.rule must be max, mean or median")


@dataclass
class PipelineConfig:
    seed: int = 0
    synth: SynthSection = dataclasses.field(default_factory=SynthSection)
    lift: LiftSection = dataclasses.field(default_factory=LiftSection)
    field: FieldSection = dataclasses.field(default_factory=FieldSection)
    affordance: AffordanceSection = dataclasses.field(default_factory=AffordanceSection)

    SECTIONS = ("synth", "lift", "field", "affordance")

    def validate(self) -> "PipelineConfig":
        _check(isinstance(self.seed, int) and self.seed >= 0, "seed must be a nonnegative integer")
        for name in self.SECTIONS:
            getattr(self, name).validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "PipelineConfig":
        cfg = cls()
        apply_overrides(cfg, doc)
        return cfg.validate()

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        _check(isinstance(doc, dict), "config document must be a JSON object")
        return cls.from_dict(doc)


def _coerce(current: Any, value: Any, where: str, optional: bool) -> Any:
    if value is None:
        _check(optional, f"{where} may not be null")
        return None
    kind = type(current) if current is not None else float
    if kind is bool:
        _check(isinstance(value, bool), f"{where} must be a boolean")
        return value
    if kind is int:
        _check(isinstance(value, int) and not isinstance(value, bool), f"{where} must be an integer")
        return int(value)
    if kind is float:
        _check(isinstance(value, (int, float)) and not isinstance(value, bool), f"{where} must be a number")
        return float(value)
    _check(isinstance(value, str), f"{where} must be a string")
    return value


def _optional_fields(section) -> set:
    return {f.name for f in dataclasses.fields(section) if "Optional" in str(f.type)}


def apply_overrides(cfg: PipelineConfig, doc: Mapping[str, Any]) -> PipelineConfig:
    for key, value in doc.items():
        if key == "seed":
            _check(isinstance(value, int) and not isinstance(value, bool), "seed must be an integer")
            cfg.seed = value
            continue
        _check(key in PipelineConfig.SECTIONS, f"unknown config section {key!r}")
        _check(isinstance(value, Mapping), f"section {key!r} must be an object")
        section = getattr(cfg, key)
        names = {f.name for f in dataclasses.fields(section)}
        optional = _optional_fields(section)
        for k, v in value.items():
            _check(k in names, f"unknown key {key}.{k}")
            setattr(section, k, _coerce(getattr(section, k), v, f"{key}.{k}", k in optional))
    return cfg


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> dict:
    """Nested override document from ``AFPRIM__SECTION__KEY`` (or ``AFPRIM__SEED``) variables."""
    environ = os.environ if environ is None else environ
    doc: dict = {}
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        parts = name[len(ENV_PREFIX):].lower().split("__")
        raw = environ[name]
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if parts == ["seed"]:
            doc["seed"] = value
        elif len(parts) == 2 and all(parts):
            doc.setdefault(parts[0], {})[parts[1]] = value
        else:
            raise ConfigError(f"malformed override variable {name}")
    return doc


def load_config(path=None, environ: Optional[Mapping[str, str]] = None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        _check(isinstance(doc, dict), f"{path}: config document must be a JSON object")
        apply_overrides(cfg, doc)
    apply_overrides(cfg, env_overrides(environ))
    return cfg.validate()
