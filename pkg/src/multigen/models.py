"""Transmission-model families, parameter validation and JSON round-tripping.

Every linear family is normalized so that latent endowments and observed
outcomes have unit variance in every generation; shock variances follow from
that requirement. The poverty-trap family is non-linear and is standardized
per generation by the simulator instead.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import MISSING, asdict, dataclass, fields
from typing import Any, Union


class ModelError(ValueError):
    """Raised when a model spec is invalid or cannot be parsed."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class LatentFactorParams:
    returns_rho: float
    transferability_lambda: float
    sibling_shared_u: float = 0.0
    sibling_shared_v: float = 0.0

    name = "latent_factor"

    def violations(self) -> list[str]:
        out = []
        if not 0.0 < self.returns_rho <= 1.0:
            out.append(f"returns_rho={self.returns_rho} out of range (0, 1]")
        if not 0.0 <= self.transferability_lambda < 1.0:
            out.append(
                f"transferability_lambda={self.transferability_lambda} out of range [0, 1)"
            )
        for key in ("sibling_shared_u", "sibling_shared_v"):
            val = getattr(self, key)
            if not 0.0 <= val < 1.0:
                out.append(f"{key}={val} out of range [0, 1)")
        return out

    @property
    def u_var(self) -> float:
        return 1.0 - self.returns_rho**2

    @property
    def v_var(self) -> float:
        return 1.0 - self.transferability_lambda**2


@dataclass(frozen=True)
class GrandparentAR2Params:
    gamma_p: float
    gamma_gp: float

    name = "grandparent_ar2"

    def violations(self) -> list[str]:
        out = []
        gp, ggp = self.gamma_p, self.gamma_gp
        if not abs(ggp) < 1.0:
            out.append(f"non-stationary: |gamma_gp|={abs(ggp)} must be < 1")
        if not gp + ggp < 1.0:
            out.append(f"non-stationary: gamma_p + gamma_gp = {gp + ggp} must be < 1")
        if not ggp - gp < 1.0:
            out.append(f"non-stationary: gamma_gp - gamma_p = {ggp - gp} must be < 1")
        return out

    @property
    def beta1(self) -> float:
        return self.gamma_p / (1.0 - self.gamma_gp)

    @property
    def shock_var(self) -> float:
        # Yule-Walker: 1 = gamma_p*beta1 + gamma_gp*beta2 + sigma^2
        b1 = self.beta1
        b2 = self.gamma_p * b1 + self.gamma_gp
        return 1.0 - self.gamma_p * b1 - self.gamma_gp * b2


@dataclass(frozen=True)
class MultiplicityParams:
    rho1_sq: float
    rho2_sq: float
    lambda1: float
    lambda2: float

    name = "multiplicity"

    def violations(self) -> list[str]:
        out = []
        for key in ("rho1_sq", "rho2_sq"):
            val = getattr(self, key)
            if not 0.0 <= val <= 1.0:
                out.append(f"{key}={val} out of range [0, 1]")
        for key in ("lambda1", "lambda2"):
            val = getattr(self, key)
            if not 0.0 <= val < 1.0:
                out.append(f"{key}={val} out of range [0, 1)")
        if self.rho1_sq + self.rho2_sq > 1.0 + 1e-12:
            out.append(
                f"rho1_sq + rho2_sq = {self.rho1_sq + self.rho2_sq} exceeds 1 "
                "(residual market-luck variance would be negative)"
            )
        return out

    @property
    def u_var(self) -> float:
        return max(0.0, 1.0 - self.rho1_sq - self.rho2_sq)


@dataclass(frozen=True)
class PovertyTrapParams:
    gamma_low: float
    gamma_high: float
    threshold_ybar: float
    shock_sd: float = 0.5

    name = "poverty_trap"

    def violations(self) -> list[str]:
        out = []
        for key in ("gamma_low", "gamma_high", "threshold_ybar", "shock_sd"):
            if not math.isfinite(getattr(self, key)):
                out.append(f"{key} must be finite")
        if not self.shock_sd > 0.0:
            out.append(f"shock_sd={self.shock_sd} must be > 0")
        return out

    def warnings(self) -> list[str]:
        if self.gamma_low <= self.gamma_high:
            return [
                f"gamma_low={self.gamma_low} <= gamma_high={self.gamma_high}: "
                "no extra persistence below the threshold"
            ]
        return []


@dataclass(frozen=True)
class AssortativeParams:
    returns_rho: float
    transferability_lambda_tilde: float
    assortative_m: float

    name = "assortative"

    def violations(self) -> list[str]:
        out = []
        if not 0.0 < self.returns_rho <= 1.0:
            out.append(f"returns_rho={self.returns_rho} out of range (0, 1]")
        if not 0.0 <= self.transferability_lambda_tilde < 1.0:
            out.append(
                "transferability_lambda_tilde="
                f"{self.transferability_lambda_tilde} out of range [0, 1)"
            )
        if not 0.0 <= self.assortative_m < 1.0:
            out.append(f"assortative_m={self.assortative_m} out of range [0, 1)")
        elif self.v_var < 0.0:
            out.append(f"endowment shock variance {self.v_var} < 0")
        return out

    @property
    def u_var(self) -> float:
        return 1.0 - self.returns_rho**2

    @property
    def v_var(self) -> float:
        lt, m = self.transferability_lambda_tilde, self.assortative_m
        return 1.0 - lt * lt * (1.0 + m) / 2.0


ModelSpec = Union[
    LatentFactorParams,
    GrandparentAR2Params,
    MultiplicityParams,
    PovertyTrapParams,
    AssortativeParams,
]

MODELS: dict[str, type] = {
    cls.name: cls
    for cls in (
        LatentFactorParams,
        GrandparentAR2Params,
        MultiplicityParams,
        PovertyTrapParams,
        AssortativeParams,
    )
}

# Short keys accepted on input next to the full field names.
ALIASES: dict[str, dict[str, str]] = {
    "latent_factor": {
        "rho": "returns_rho",
        "lambda": "transferability_lambda",
        "shared_u": "sibling_shared_u",
        "shared_v": "sibling_shared_v",
    },
    "assortative": {
        "rho": "returns_rho",
        "lambda_tilde": "transferability_lambda_tilde",
        "m": "assortative_m",
    },
    "poverty_trap": {"ybar": "threshold_ybar"},
}

TWO_PARENT_MODELS = {"assortative"}


def validate(spec: ModelSpec) -> list[str]:
    """Return every violated invariant of ``spec``; empty when valid."""
    if type(spec) not in MODELS.values():
        return [f"unknown model type {type(spec).__name__}"]
    out = []
    for f in fields(spec):
        val = getattr(spec, f.name)
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            out.append(f"{f.name} must be a real number, got {val!r}")
        elif not math.isfinite(val):
            out.append(f"{f.name} must be finite, got {val!r}")
    if out:
        return out
    return spec.violations()


def check(spec: ModelSpec) -> ModelSpec:
    """Raise :class:`ModelError` if ``spec`` is invalid, else return it."""
    problems = validate(spec)
    if problems:
        raise ModelError(problems)
    if isinstance(spec, PovertyTrapParams):
        for msg in spec.warnings():
            warnings.warn(msg, stacklevel=2)
    return spec


def model_name(spec: ModelSpec) -> str:
    return spec.name


def spec_to_dict(spec: ModelSpec) -> dict[str, Any]:
    return {"model": spec.name, "params": asdict(spec)}


def spec_from_dict(doc: dict[str, Any]) -> ModelSpec:
    """Build a spec from ``{"model": ..., "params": {...}}``; unknown keys are rejected."""
    if not isinstance(doc, dict):
        raise ModelError("model document must be a JSON object")
    extra = set(doc) - {"model", "params"}
    if extra:
        raise ModelError(f"unknown top-level field(s): {sorted(extra)}")
    name = doc.get("model")
    if name not in MODELS:
        raise ModelError(f"unknown model {name!r}; expected one of {sorted(MODELS)}")
    cls = MODELS[name]
    raw = doc.get("params", {})
    if not isinstance(raw, dict):
        raise ModelError("params must be a JSON object")
    aliases = ALIASES.get(name, {})
    known = {f.name for f in fields(cls)}
    params: dict[str, Any] = {}
    problems = []
    for key, val in raw.items():
        full = aliases.get(key, key)
        if full not in known:
            problems.append(f"unknown field params.{key} for model {name}")
        elif full in params:
            problems.append(f"field {full} given twice")
        else:
            params[full] = val
    missing = [f.name for f in fields(cls) if f.name not in params and f.default is MISSING]
    if missing:
        problems.append(f"missing required field(s) for {name}: {', '.join(missing)}")
    if problems:
        raise ModelError(problems)
    spec = cls(**params)
    problems = validate(spec)
    if problems:
        raise ModelError(problems)
    return spec


def spec_to_json(spec: ModelSpec) -> str:
    return json.dumps(spec_to_dict(spec), sort_keys=True)


def spec_from_json(text: str) -> ModelSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"invalid JSON: {exc}") from exc
    return spec_from_dict(doc)
