"""Regression and moment estimators over pedigree panels.

Outcomes are standardized within each generation over the analysis sample
before every individual-level regression, so bivariate slopes are
correlations. Standard errors assume homoskedastic, independent rows.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .moments import MomentSet, duality_gp_coefficient
from .pedigree import MISSING, Pedigree, PedigreeError

SMALL_SAMPLE = 30


class EstimationError(ValueError):
    pass


class RankDeficiencyError(EstimationError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"collinear regressors: {', '.join(self.columns)}")


class MissingColumnError(EstimationError):
    pass


class InfeasibleError(EstimationError):
    """Moments that no latent factor parameterization can produce."""


@dataclass(frozen=True)
class RegressionResult:
    coefficients: dict[str, float]
    std_errors: dict[str, float]
    r_squared: float
    n_obs: int
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        if set(self.coefficients) != set(self.std_errors):
            raise ValueError("coefficients and std_errors must share keys")

    def to_dict(self) -> dict:
        return {
            "coefficients": dict(self.coefficients),
            "std_errors": dict(self.std_errors),
            "r_squared": self.r_squared,
            "n_obs": self.n_obs,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_table(self) -> str:
        return format_table([self], [""])


@dataclass(frozen=True)
class FitResult:
    rho_sq: float
    lambda_: float
    residual_norm: float
    n_moments: int = 2
    method: str = "exact"
    misfit: bool = False

    def to_dict(self) -> dict:
        return {
            "rho_sq": self.rho_sq,
            "lambda": self.lambda_,
            "residual_norm": self.residual_norm,
            "n_moments": self.n_moments,
            "method": self.method,
            "misfit": self.misfit,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_table(self) -> str:
        rows = [("rho_sq", self.rho_sq), ("lambda", self.lambda_),
                ("residual_norm", self.residual_norm)]
        lines = [f"{k:<14}{v:>12.6g}" for k, v in rows]
        lines.append(f"{'moments':<14}{self.n_moments:>12d}")
        lines.append(f"{'method':<14}{self.method:>12}")
        lines.append(f"{'misfit':<14}{str(self.misfit):>12}")
        return "\n".join(lines) + "\n"


def format_table(results, labels, order=None) -> str:
    """Side-by-side regression table: coefficient, (SE) below, then R² and n."""
    if order is None:
        order = []
        for r in results:
            for k in r.coefficients:
                if k != "const" and k not in order:
                    order.append(k)
    width = 12
    head = f"{'':<16}" + "".join(f"{lab:>{width}}" for lab in labels)
    lines = [head]
    for name in order:
        coef = "".join(
            f"{r.coefficients[name]:>{width}.3f}" if name in r.coefficients else f"{'--':>{width}}"
            for r in results
        )
        se = "".join(
            f"{'(' + format(r.std_errors[name], '.3f') + ')':>{width}}" if name in r.std_errors
            else " " * width
            for r in results
        )
        lines.append(f"{name:<16}" + coef)
        lines.append(f"{'':<16}" + se)
    lines.append(f"{'R2':<16}" + "".join(f"{r.r_squared:>{width}.3f}" for r in results))
    lines.append(f"{'n':<16}" + "".join(f"{r.n_obs:>{width}d}" for r in results))
    return "\n".join(lines) + "\n"


def ols(y, regressors: dict, intercept: bool = True, notes=()) -> RegressionResult:
    """OLS with homoskedastic standard errors; raises on rank deficiency."""
    y = np.asarray(y, dtype=np.float64)
    names = list(regressors)
    cols = [np.asarray(regressors[k], dtype=np.float64) for k in names]
    if intercept:
        names = ["const"] + names
        cols = [np.ones_like(y)] + cols
    X = np.column_stack(cols) if cols else np.empty((len(y), 0))
    n, p = X.shape
    if n < p + 1:
        raise EstimationError(f"{n} observations for {p} regressors")
    norms = np.linalg.norm(X, axis=0)
    if (norms == 0.0).any():
        raise RankDeficiencyError([names[j] for j in np.flatnonzero(norms == 0.0)])
    # column-scaled SVD keeps the rank test unit-free
    _, s, vt = np.linalg.svd(X / norms, full_matrices=False)
    small = s <= s[0] * 1e-10
    if small.any():
        null = vt[small]
        raise RankDeficiencyError([names[j] for j in range(p) if np.abs(null[:, j]).max() > 1e-6])
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    rss = float(resid @ resid)
    centered = y - y.mean() if intercept else y
    tss = float(centered @ centered)
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    sigma2 = rss / (n - p)
    cov = sigma2 * np.linalg.inv(X.T @ X)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    notes = tuple(notes)
    if n < SMALL_SAMPLE:
        notes += (f"small sample: {n} observations",)
    return RegressionResult(
        coefficients={k: float(b) for k, b in zip(names, beta)},
        std_errors={k: float(v) for k, v in zip(names, se)},
        r_squared=float(min(max(r2, 0.0), 1.0)),
        n_obs=int(n),
        notes=notes,
    )


def r2_of(result: RegressionResult) -> float:
    return result.r_squared


def standardize_by_group(values, groups) -> np.ndarray:
    """Subtract the mean and divide by the SD within each group (ddof=0)."""
    values = np.asarray(values, dtype=np.float64)
    groups = np.asarray(groups)
    out = np.empty_like(values)
    for g in np.unique(groups):
        m = groups == g
        v = values[m]
        sd = v.std()
        if sd == 0.0 or not np.isfinite(sd):
            raise EstimationError(f"outcome has zero variance in generation {g}")
        out[m] = (v - v.mean()) / sd
    return out


def _lag_name(k: int) -> str:
    return {1: "parent", 2: "grandparent"}.get(k, f"ancestor_{k}")


def _require_generations(ped: Pedigree, k: int):
    if ped.n_generations < k + 1:
        raise PedigreeError(f"distance {k} needs {k + 1} generations, panel has {ped.n_generations}")


def _descendant_mask(ped: Pedigree, descendant_generation):
    if descendant_generation is None:
        return np.ones(len(ped), dtype=bool)
    if descendant_generation == "last":
        descendant_generation = int(ped.generation.max())
    return ped.generation == descendant_generation


def _std(ped: Pedigree, rows):
    return standardize_by_group(ped.y[rows], ped.generation[rows])


def beta_k_estimate(ped: Pedigree, k: int, line: str = "father",
                    descendant_generation=None) -> RegressionResult:
    """Slope of descendant outcome on the outcome of one ancestor ``k`` generations up.

    Every (descendant, ancestor) pair enters once. ``descendant_generation``
    restricts descendants to one generation (``"last"`` for the youngest).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    _require_generations(ped, k)
    anc = ped.ancestor_rows(k, line)
    rows = np.flatnonzero((anc >= 0) & _descendant_mask(ped, descendant_generation))
    if len(rows) < 3:
        raise EstimationError(f"only {len(rows)} pairs at distance {k}")
    y = _std(ped, rows)
    x = _std(ped, anc[rows])
    return ols(y, {_lag_name(k): x})


_CONTROLS = {
    "mother_y": "mother",
    "spouse_y": "spouse",
    "grandmother_y": "grandmother",
}


def _control_rows(ped: Pedigree, name: str):
    kind = _CONTROLS.get(name)
    if kind is None:
        raise MissingColumnError(f"unknown control {name!r}; available: {sorted(_CONTROLS)}")
    present = getattr(ped, "columns_present", None)
    if kind in ("mother", "grandmother") and present is not None and "mother_id" not in present:
        raise MissingColumnError(f"control {name} needs the mother_id column")
    if kind == "spouse" and present is not None and "spouse_id" not in present:
        raise MissingColumnError(f"control {name} needs the spouse_id column")
    if kind == "mother":
        rows = ped.mother_row
    elif kind == "spouse":
        rows = ped.spouse_row
    else:
        f = ped.father_row
        rows = np.where(f >= 0, ped.mother_row[np.where(f >= 0, f, 0)], MISSING)
    if not (rows >= 0).any():
        raise MissingColumnError(f"control {name}: no linked relatives in the panel")
    return rows


def multigen_regression(ped: Pedigree, ancestor_lags=(1, 2), extra_controls=(),
                        line: str = "father", descendant_generation=None) -> RegressionResult:
    """Child outcome on several ancestors' outcomes plus relative controls."""
    lags = sorted(set(int(k) for k in ancestor_lags))
    if not lags or lags[0] < 1:
        raise ValueError("ancestor_lags must be positive integers")
    _require_generations(ped, lags[-1])
    mask = _descendant_mask(ped, descendant_generation)
    anc = {k: ped.ancestor_rows(k, line) for k in lags}
    ctl = {name: _control_rows(ped, name) for name in extra_controls}
    for rows in list(anc.values()) + list(ctl.values()):
        mask &= rows >= 0
    rows = np.flatnonzero(mask)
    if len(rows) < len(lags) + len(ctl) + 2:
        raise EstimationError(f"only {len(rows)} complete observations")
    regs = {_lag_name(k): _std(ped, a[rows]) for k, a in anc.items()}
    for name, r in ctl.items():
        regs[name] = _std(ped, r[rows])
    return ols(_std(ped, rows), regs)


def _triples(ped: Pedigree, line: str, descendant_generation):
    p = ped.ancestor_rows(1, line)
    g = ped.ancestor_rows(2, line)
    rows = np.flatnonzero((g >= 0) & _descendant_mask(ped, descendant_generation))
    if len(rows) < 3:
        raise EstimationError("no child-parent-grandparent triples")
    return _std(ped, rows), _std(ped, p[rows]), _std(ped, g[rows]), rows


def pooled_triple_moments(ped: Pedigree, line: str = "father",
                          descendant_generation=None) -> tuple[float, float]:
    """(beta1, beta2) on the standardized triple sample, pooling both adjacent pairs."""
    c, p, g, _ = _triples(ped, line, descendant_generation)
    n = len(c)
    beta1 = float((c @ p + p @ g) / (2 * n))
    beta2 = float(c @ g / n)
    return beta1, beta2


def symmetric_gp_regression(ped: Pedigree, line: str = "father",
                            descendant_generation=None) -> RegressionResult:
    """Three-generation regression with every triple also entered time-reversed.

    Reversal makes the sample moment matrix stationary, which is the
    condition under which the grandparent coefficient is an exact function of
    the two- and three-generation correlations.
    """
    c, p, g, _ = _triples(ped, line, descendant_generation)
    y = np.concatenate([c, g])
    return ols(y, {"parent": np.concatenate([p, p]), "grandparent": np.concatenate([g, c])},
               notes=("time-symmetrized triples",))


def sibling_pairs(ped: Pedigree, descendant_generation=None):
    """Ordered (i, j) row pairs of full siblings, both orders included."""
    mask = (ped.father_row >= 0) & _descendant_mask(ped, descendant_generation)
    rows = np.flatnonzero(mask)
    if len(rows) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    fam = np.stack([ped.father_row[rows], ped.mother_row[rows]])
    order = np.lexsort(fam[::-1])
    rows = rows[order]
    f, m = ped.father_row[rows], ped.mother_row[rows]
    new = np.ones(len(rows), dtype=bool)
    new[1:] = (f[1:] != f[:-1]) | (m[1:] != m[:-1])
    starts = np.flatnonzero(new)
    sizes = np.diff(np.append(starts, len(rows)))
    fam_id = np.cumsum(new) - 1
    start_e = starts[fam_id]
    size_e = sizes[fam_id]
    rank_e = np.arange(len(rows)) - start_e
    reps = size_e - 1
    left = np.repeat(np.arange(len(rows)), reps)
    offs = np.arange(len(left)) - np.repeat(np.cumsum(reps) - reps, reps)
    partner_rank = offs + (offs >= rank_e[left])
    right = start_e[left] + partner_rank
    return rows[left], rows[right]


def sibling_regression(ped: Pedigree, include_parent: bool = False,
                       descendant_generation=None) -> RegressionResult:
    """Outcome on a sibling's outcome, optionally controlling the father's outcome."""
    i, j = sibling_pairs(ped, descendant_generation)
    if len(i) == 0:
        raise EstimationError("no sibling pairs in panel")
    gens = ped.generation[i]
    y = standardize_by_group(ped.y[i], gens)
    regs = {}
    if include_parent:
        par = ped.father_row[i]
        regs["parent"] = standardize_by_group(ped.y[par], ped.generation[par])
    regs["sibling"] = standardize_by_group(ped.y[j], ped.generation[j])
    return ols(y, regs, notes=("sibling pairs in both orders; SEs ignore pair dependence",))


def lineage_members(ped: Pedigree) -> np.ndarray:
    """Mask of persons on the father lines (drops married-in spouses)."""
    is_father = np.zeros(len(ped), dtype=bool)
    f = ped.father_row[ped.father_row >= 0]
    is_father[f] = True
    gen0 = ped.generation == ped.generation.min()
    return (ped.father_row >= 0) | is_father | (gen0 & (ped.spouse_row < 0))


def group_level_regression(ped: Pedigree, generation_pair=None, group_by: str = "dynasty",
                           min_groups: int = SMALL_SAMPLE) -> RegressionResult:
    """Regress group-mean outcome at generation t on the group mean at t - 1.

    Group means are taken on raw outcomes; averaging removes idiosyncratic
    noise, so the slope approaches the latent transferability for large groups.
    """
    if group_by != "dynasty":
        raise ValueError("only group_by='dynasty' is supported")
    if generation_pair is None:
        t = int(ped.generation.max())
        generation_pair = (t - 1, t)
    t0, t1 = generation_pair
    if t1 != t0 + 1:
        raise ValueError("generation_pair must be (t-1, t)")
    members = lineage_members(ped)
    means = []
    for t in (t0, t1):
        m = members & (ped.generation == t)
        if not m.any():
            raise EstimationError(f"no lineage members in generation {t}")
        d = ped.dynasty_id[m]
        uniq, inv, counts = np.unique(d, return_inverse=True, return_counts=True)
        sums = np.bincount(inv, weights=ped.y[m])
        means.append(dict(zip(uniq.tolist(), (sums / counts).tolist())))
    common = sorted(set(means[0]) & set(means[1]))
    if len(common) < min_groups:
        raise EstimationError(f"only {len(common)} groups observed in both generations; need {min_groups}")
    x = np.array([means[0][g] for g in common])
    y = np.array([means[1][g] for g in common])
    if x.std() == 0.0:
        raise EstimationError("group means do not vary")
    return ols(y, {"group_mean_parent": x})


def group_level_estimate(ped: Pedigree, group_by: str = "dynasty", generation_pair=None) -> float:
    return group_level_regression(ped, generation_pair, group_by).coefficients["group_mean_parent"]


def sample_moments(ped: Pedigree, max_k: int, line: str = "father",
                   descendant_generation=None) -> MomentSet:
    """Bivariate ``beta_k`` estimates for k = 1..max_k collected into a MomentSet."""
    beta = {}
    for k in range(1, max_k + 1):
        beta[k] = beta_k_estimate(ped, k, line, descendant_generation).coefficients[_lag_name(k)]
    return MomentSet(beta, meta={"source": "sample"})


def _objective(theta, ks, target):
    rho_sq, lam = theta
    return rho_sq * lam**ks - target


def fit_latent_factor(moments: MomentSet, misfit_tol: float = 1e-6) -> FitResult:
    """Recover (rho², lambda) of the latent factor model from ``beta_k`` moments.

    Two moments are inverted exactly; more moments are fit by least squares
    from a 10 x 10 grid of starts.
    """
    beta = moments.beta_k
    if 1 not in beta or 2 not in beta:
        raise EstimationError("need beta_k[1] and beta_k[2]")
    b1, b2 = beta[1], beta[2]
    if not (b1 > 0.0 and b2 > 0.0):
        raise InfeasibleError(f"moments must be positive, got beta1={b1}, beta2={b2}")
    if b2 >= b1:
        raise InfeasibleError(f"non-decaying moments: beta2={b2} >= beta1={b1}")
    lam0 = b2 / b1
    rho0 = b1 * b1 / b2
    if rho0 > 1.0 + 1e-12:
        raise InfeasibleError(
            f"implied rho_sq={rho0:.6g} > 1 (beta2 < beta1**2: less persistence than iteration)"
        )
    rho0 = min(rho0, 1.0)
    if len(beta) == 2:
        return FitResult(rho0, lam0, 0.0, 2, "exact", False)

    ks = np.array(sorted(beta), dtype=np.float64)
    target = np.array([beta[int(k)] for k in ks])
    lo, hi = np.array([1e-12, 0.0]), np.array([1.0, 1.0 - 1e-12])
    grid = np.linspace(0.1, 1.0, 10)
    starts = [np.array([rho0, min(lam0, hi[1])])]
    starts += [np.array([r, min(l, hi[1])]) for r in grid for l in grid]
    best = None
    for x0 in starts:
        sol = optimize.least_squares(
            _objective, x0, bounds=(lo, hi), args=(ks, target),
            xtol=1e-15, ftol=1e-15, gtol=1e-15, method="trf",
        )
        cost = float(sol.fun @ sol.fun)
        if best is None or cost < best[0] - 1e-10 * max(best[0], 1e-300):
            best = (cost, sol.x)
        if cost == 0.0:
            break
    cost, (rho_sq, lam) = best
    norm = math.sqrt(cost)
    return FitResult(float(rho_sq), float(lam), norm, len(ks), "nls", norm > misfit_tol)


def excess_persistence(ped: Pedigree, k: int = 2, n_boot: int = 400, seed: int = 0,
                       line: str = "father", descendant_generation="last") -> dict:
    """``beta_k - beta1**k`` on chains of length ``k`` with a dynasty bootstrap SE.

    Both correlations use the same descendants, so the difference is measured
    on one sample and resampling whole dynasties keeps within-family dependence.
    """
    if int(k) != k or k < 2:
        raise ValueError(f"k must be an integer >= 2, got {k}")
    _require_generations(ped, k)
    c_rows = np.flatnonzero((ped.ancestor_rows(k, line) >= 0)
                            & _descendant_mask(ped, descendant_generation))
    if len(c_rows) < 3:
        raise EstimationError(f"no chains of length {k} for excess persistence")
    c = ped.y[c_rows]
    p = ped.y[ped.ancestor_rows(1, line)[c_rows]]
    a = ped.y[ped.ancestor_rows(k, line)[c_rows]]
    _, grp = np.unique(ped.dynasty_id[c_rows], return_inverse=True)
    n_grp = int(grp.max()) + 1

    def sums(x, z):
        return np.stack([np.bincount(grp, w, minlength=n_grp)
                         for w in (np.ones_like(x), x, z, x * x, z * z, x * z)])

    s1, sk = sums(c, p), sums(c, a)

    def corr(s):
        n, sa, sb, saa, sbb, sab = s
        cov = sab - sa * sb / n
        return cov / np.sqrt((saa - sa * sa / n) * (sbb - sb * sb / n))

    b1 = float(corr(s1.sum(axis=1)))
    bk = float(corr(sk.sum(axis=1)))
    rng = np.random.default_rng(seed)
    w = rng.multinomial(n_grp, np.full(n_grp, 1.0 / n_grp), size=n_boot).astype(np.float64)
    boot = corr(sk @ w.T) - corr(s1 @ w.T) ** k
    return {
        "k": int(k),
        "beta1": b1,
        "beta_k": bk,
        "delta": bk - b1**k,
        "se": float(boot.std(ddof=1)),
        "n_chains": int(len(c_rows)),
        "n_boot": int(n_boot),
    }


def duality_from_sample(ped: Pedigree, line: str = "father", descendant_generation=None) -> dict:
    """Grandparent coefficient two ways on one standardized triple sample."""
    reg = symmetric_gp_regression(ped, line, descendant_generation)
    b1, b2 = pooled_triple_moments(ped, line, descendant_generation)
    return {
        "regression_gp": reg.coefficients["grandparent"],
        "duality_gp": duality_gp_coefficient(b1, b2),
        "beta1": b1,
        "beta2": b2,
    }
