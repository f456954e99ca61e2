"""Closed-form kinship correlations for the linear transmission models."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .models import (
    AssortativeParams,
    GrandparentAR2Params,
    LatentFactorParams,
    ModelError,
    ModelSpec,
    MultiplicityParams,
    PovertyTrapParams,
    check,
)

MAX_K = 64
_UNDERFLOW = 1e-300


class PreconditionError(ValueError):
    pass


@dataclass
class MomentSet:
    """Kinship correlations of the observed outcome, keyed by ancestor distance."""

    beta_k: dict[int, float]
    sibling: float | None = None
    cousin: float | None = None
    spousal: float | None = None
    latent_beta_k: dict[int, float] | None = None
    # share of beta_k carried by the first endowment (multiplicity model only)
    first_share_k: dict[int, float] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        keys = sorted(self.beta_k)
        if keys != list(range(1, len(keys) + 1)):
            raise ValueError(f"beta_k keys must run 1..K contiguously, got {keys}")
        for name, val in self._scalars():
            if not -1.0 - 1e-12 <= val <= 1.0 + 1e-12:
                raise ValueError(f"{name}={val} outside [-1, 1]")

    def _scalars(self):
        for k, v in self.beta_k.items():
            yield f"beta_k[{k}]", v
        for k, v in (self.latent_beta_k or {}).items():
            yield f"latent_beta_k[{k}]", v
        for name in ("sibling", "cousin", "spousal"):
            v = getattr(self, name)
            if v is not None:
                yield name, v

    @property
    def max_k(self) -> int:
        return len(self.beta_k)

    def to_dict(self) -> dict:
        def keyed(d):
            return None if d is None else {str(k): d[k] for k in sorted(d)}

        return {
            "beta_k": keyed(self.beta_k),
            "sibling": self.sibling,
            "cousin": self.cousin,
            "spousal": self.spousal,
            "latent_beta_k": keyed(self.latent_beta_k),
            "first_share_k": keyed(self.first_share_k),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MomentSet":
        def unkey(d):
            return None if d is None else {int(k): float(v) for k, v in d.items()}

        return cls(
            beta_k=unkey(doc["beta_k"]),
            sibling=doc.get("sibling"),
            cousin=doc.get("cousin"),
            spousal=doc.get("spousal"),
            latent_beta_k=unkey(doc.get("latent_beta_k")),
            first_share_k=unkey(doc.get("first_share_k")),
            meta=doc.get("meta", {}),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv(self, series: str = "beta_k") -> str:
        """Two-column ``k,<series>`` CSV of one series, 6 significant digits."""
        data = getattr(self, series)
        if data is None:
            raise ValueError(f"series {series!r} not present")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", series])
        for k in sorted(data):
            w.writerow([k, f"{data[k]:.6g}"])
        return buf.getvalue()


def _check_k(max_k: int) -> int:
    if int(max_k) != max_k or max_k < 1:
        raise ValueError(f"max_k must be a positive integer, got {max_k}")
    if max_k > MAX_K:
        raise ValueError(f"max_k={max_k} exceeds cap {MAX_K}")
    return int(max_k)


def _clamp(x: float) -> float:
    return 0.0 if abs(x) < _UNDERFLOW else x


def iterated_prediction(beta1: float, k: int) -> float:
    """Naive geometric extrapolation ``beta1**k`` of the parent-child correlation."""
    if int(k) != k or k < 1:
        raise ValueError(f"k must be an integer >= 1, got {k}")
    if abs(beta1) > 1.0:
        raise ValueError(f"|beta1| must be <= 1, got {beta1}")
    return beta1 ** int(k)


def duality_gp_coefficient(beta1: float, beta2: float) -> float:
    """Grandparent coefficient implied by the two- and three-generation correlations.

    Positive exactly when ``beta2`` exceeds the iterated value ``beta1**2``.
    """
    denom = 1.0 - beta1 * beta1
    if denom <= 0.0:
        raise ZeroDivisionError(f"duality formula is singular at |beta1|={abs(beta1)}")
    return (beta2 - beta1 * beta1) / denom


def latent_factor_moments(p: LatentFactorParams, max_k: int) -> MomentSet:
    check(p)
    max_k = _check_k(max_k)
    r2, lam = p.returns_rho**2, p.transferability_lambda
    beta = {k: _clamp(r2 * lam**k) for k in range(1, max_k + 1)}
    latent = {k: _clamp(lam**k) for k in range(1, max_k + 1)}
    # siblings: common parent endowment plus correlated shocks
    sib_e = lam * lam + p.sibling_shared_v * (1.0 - lam * lam)
    sibling = r2 * sib_e + p.sibling_shared_u * (1.0 - r2)
    cousin = r2 * lam * lam * sib_e
    return MomentSet(beta, sibling=sibling, cousin=cousin, latent_beta_k=latent,
                     meta={"model": p.name})


def latent_factor_extrapolation_error(p: LatentFactorParams) -> float:
    """``beta1**2 - beta2`` for the latent factor model; negative when 0 < rho < 1."""
    check(p)
    r2, lam = p.returns_rho**2, p.transferability_lambda
    return (r2 - 1.0) * r2 * lam * lam


def ar2_moments(p: GrandparentAR2Params, max_k: int) -> MomentSet:
    check(p)
    max_k = _check_k(max_k)
    gp, ggp = p.gamma_p, p.gamma_gp
    beta = {1: gp / (1.0 - ggp)}
    if max_k >= 2:
        beta[2] = gp * beta[1] + ggp
    for k in range(3, max_k + 1):
        beta[k] = gp * beta[k - 1] + ggp * beta[k - 2]
    beta = {k: _clamp(v) for k, v in beta.items()}
    return MomentSet(beta, meta={"model": p.name})


def multiplicity_moments(p: MultiplicityParams, max_k: int) -> MomentSet:
    check(p)
    max_k = _check_k(max_k)
    beta, share = {}, {}
    for k in range(1, max_k + 1):
        first = p.rho1_sq * p.lambda1**k
        second = p.rho2_sq * p.lambda2**k
        beta[k] = _clamp(first + second)
        share[k] = first / beta[k] if beta[k] > 0.0 else math.nan
    return MomentSet(beta, first_share_k=share, meta={"model": p.name})


def multiplicity_extrapolation_error(p: MultiplicityParams, tol: float = 1e-9) -> float:
    """Closed-form ``beta1**2 - beta2`` when outcomes are fully determined by endowments.

    Only defined for ``rho1_sq + rho2_sq == 1``; otherwise compute the difference
    from :func:`multiplicity_moments`.
    """
    check(p)
    if abs(p.rho1_sq + p.rho2_sq - 1.0) > tol:
        raise PreconditionError(
            f"rho1_sq + rho2_sq = {p.rho1_sq + p.rho2_sq} != 1; use "
            "multiplicity_moments(p, 2) and compute beta_k[1]**2 - beta_k[2] instead"
        )
    r1 = p.rho1_sq
    return r1 * (r1 - 1.0) * (p.lambda1 - p.lambda2) ** 2


def assortative_moments(p: AssortativeParams, max_k: int) -> MomentSet:
    """Correlations with a single ancestor in the two-parent model.

    ``spousal`` is the observed-outcome correlation between spouses, which is
    the endowment correlation damped by independent market luck.
    """
    check(p)
    max_k = _check_k(max_k)
    r2 = p.returns_rho**2
    step = p.transferability_lambda_tilde * (1.0 + p.assortative_m) / 2.0
    beta = {k: _clamp(r2 * step**k) for k in range(1, max_k + 1)}
    latent = {k: _clamp(step**k) for k in range(1, max_k + 1)}
    return MomentSet(beta, spousal=r2 * p.assortative_m, latent_beta_k=latent,
                     meta={"model": p.name})


def analytic_moments(spec: ModelSpec, max_k: int) -> MomentSet:
    """Dispatch to the closed form for ``spec``; the poverty trap has none."""
    if isinstance(spec, LatentFactorParams):
        return latent_factor_moments(spec, max_k)
    if isinstance(spec, GrandparentAR2Params):
        return ar2_moments(spec, max_k)
    if isinstance(spec, MultiplicityParams):
        return multiplicity_moments(spec, max_k)
    if isinstance(spec, AssortativeParams):
        return assortative_moments(spec, max_k)
    if isinstance(spec, PovertyTrapParams):
        raise ModelError("poverty_trap has no closed-form moments; simulate it instead")
    raise ModelError(f"unknown model type {type(spec).__name__}")


def population_regression(cov, target: int, regressors) -> tuple[np.ndarray, float]:
    """Population OLS slopes and R² of variable ``target`` on ``regressors``.

    ``cov`` is the covariance matrix of all variables; solves the normal equations.
    """
    cov = np.asarray(cov, dtype=np.float64)
    xs = list(regressors)
    sxx = cov[np.ix_(xs, xs)]
    sxy = cov[xs, target]
    coef = np.linalg.solve(sxx, sxy)
    r2 = float(coef @ sxy / cov[target, target])
    return coef, r2


def stationary_covariance(beta1: float, beta2: float) -> np.ndarray:
    """Covariance of (child, parent, grandparent) outcomes under stationarity."""
    return np.array([[1.0, beta1, beta2], [beta1, 1.0, beta1], [beta2, beta1, 1.0]])


def sibling_covariance(beta1: float, sibling: float) -> np.ndarray:
    """Covariance of (child, parent, sibling) outcomes."""
    return np.array([[1.0, beta1, sibling], [beta1, 1.0, beta1], [sibling, beta1, 1.0]])


def assortative_covariance(p: AssortativeParams) -> np.ndarray:
    """Covariance of (child, father, paternal grandfather, mother) outcomes.

    Mothers are matched on the father's endowment with correlation ``m``, so
    the mother inherits a share ``m`` of the father's covariance with his own
    ancestors.
    """
    check(p)
    r2 = p.returns_rho**2
    m = p.assortative_m
    a = p.transferability_lambda_tilde * (1.0 + m) / 2.0
    return np.array([
        [1.0, r2 * a, r2 * a * a, r2 * a],
        [r2 * a, 1.0, r2 * a, r2 * m],
        [r2 * a * a, r2 * a, 1.0, r2 * m * a],
        [r2 * a, r2 * m, r2 * m * a, 1.0],
    ])
