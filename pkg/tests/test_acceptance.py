"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

The lines are also collected and repeated in the pytest terminal summary.
Run directly with ``python3 tests/test_acceptance.py`` for the lines alone.
"""

import json
import time

import numpy as np
import pytest

from multigen import estimators as est
from multigen.cli import main as cli_main
from multigen.experiments import TABLE2_PUBLISHED, replicate_fig1a, replicate_fig2a, replicate_table2
from multigen.kernels import seed_key
from multigen.models import (
    AssortativeParams,
    GrandparentAR2Params,
    LatentFactorParams,
    MultiplicityParams,
    PovertyTrapParams,
)
from multigen.moments import (
    analytic_moments,
    assortative_covariance,
    assortative_moments,
    duality_gp_coefficient,
    latent_factor_moments,
    multiplicity_extrapolation_error,
    multiplicity_moments,
    population_regression,
)
from multigen.pedigree import SimTopology
from multigen.simulate import simulate, spouse_draw

RESULTS = []


def verdict(num, ok, detail):
    line = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# 1 -----------------------------------------------------------------------------

def test_c01_table2_printed_values():
    t0 = time.perf_counter()
    r = replicate_table2()
    elapsed = time.perf_counter() - t0
    misses = []
    n_coef = n_r2 = 0
    for col, (coefs, r2) in TABLE2_PUBLISHED.items():
        for name, val in coefs.items():
            got = r.series[f"{col} {name}"][0]
            n_coef += 1
            if abs(got - val) > 0.010:
                misses.append(f"{col} {name} {got:.3f} vs {val:.3f}")
        got = r.series[f"{col} R2"][0]
        n_r2 += 1
        if abs(got - r2) > 0.010:
            misses.append(f"{col} R2 {got:.3f} vs {r2:.3f}")
    assert (n_coef, n_r2) == (9, 6)
    ok = not misses and elapsed < 60.0
    detail = f"{9 + 6 - len(misses)}/15 printed values within 0.010, runtime {elapsed:.1f}s"
    if misses:
        detail += "; misses: " + ", ".join(misses)
    verdict(1, ok, detail)


# 2 -----------------------------------------------------------------------------

def _random_spec(rng):
    kind = rng.integers(5)
    if kind == 0:
        return LatentFactorParams(rng.uniform(0.3, 1.0), rng.uniform(0.1, 0.9))
    if kind == 1:
        gp = rng.uniform(0.1, 0.6)
        return GrandparentAR2Params(gp, rng.uniform(0.0, min(0.3, 0.95 - gp)))
    if kind == 2:
        r1 = rng.uniform(0.1, 0.6)
        return MultiplicityParams(r1, rng.uniform(0.1, 1.0 - r1), rng.uniform(0.5, 0.95), rng.uniform(0.0, 0.5))
    if kind == 3:
        return PovertyTrapParams(rng.uniform(0.6, 0.95), rng.uniform(0.0, 0.5), rng.uniform(-1.0, 0.0))
    return AssortativeParams(rng.uniform(0.3, 1.0), rng.uniform(0.2, 0.9), rng.uniform(0.0, 0.9))


def test_c02_duality_identity_on_data():
    rng = np.random.default_rng(20240)
    worst = 0.0
    names = []
    for _ in range(10):
        spec = _random_spec(rng)
        seed = int(rng.integers(2**32))
        ped = simulate(spec, SimTopology(2_000, 4, 1, seed))
        d = est.duality_from_sample(ped)
        assert d["duality_gp"] == duality_gp_coefficient(d["beta1"], d["beta2"])
        worst = max(worst, abs(d["regression_gp"] - d["duality_gp"]))
        names.append(spec.name)
    verdict(2, worst <= 1e-10, f"max |regression - formula| = {worst:.2e} over {len(names)} panels "
            f"({', '.join(sorted(set(names)))})")


# 3 -----------------------------------------------------------------------------

FIGURE_SPECS = [
    LatentFactorParams(0.8, 0.7),
    GrandparentAR2Params(0.4, 0.2),
    MultiplicityParams(0.3, 0.7, 0.9, 0.5),
    AssortativeParams(0.8, 0.7, 0.5),
]


def test_c03_analytic_vs_monte_carlo():
    worst = 0.0
    fails = []
    for i, spec in enumerate(FIGURE_SPECS):
        ped = simulate(spec, SimTopology(10_000, 5, 1, 2024 + i))
        mom = analytic_moments(spec, 4)
        for k in range(1, 5):
            r = est.beta_k_estimate(ped, k, descendant_generation="last")
            b = mom.beta_k[k]
            se = (1 - b * b) / np.sqrt(r.n_obs)
            z = abs(r.coefficients[est._lag_name(k)] - b) / se
            worst = max(worst, z)
            if z > 3:
                fails.append(f"{spec.name} k={k} z={z:.2f}")
    verdict(3, not fails, f"worst |z| = {worst:.2f} over 4 models x k=1..4" +
            ("; " + ", ".join(fails) if fails else ""))


# 4 -----------------------------------------------------------------------------

def test_c04_figure1a_anchors():
    r = replicate_fig1a()
    a, it = r.series["actual"], r.series["iterated"]
    ok = (it[3] < 0.1 and abs(a[3] - 0.2195) < 5e-5 and a[6] < 0.1 <= a[5]
          and abs(a[5] - 0.1076) < 5e-5 and abs(a[6] - 0.0753) < 5e-5
          and min(k for k in a if a[k] < 0.1) == 6)
    verdict(4, ok, f"iterated k=3 {it[3]:.4f}, actual k=3 {a[3]:.4f}, k=5 {a[5]:.4f}, k=6 {a[6]:.4f}")


# 5 -----------------------------------------------------------------------------

def test_c05_jensen_property():
    p = MultiplicityParams(0.3, 0.7, 0.9, 0.5)
    err = multiplicity_extrapolation_error(p)
    m = multiplicity_moments(p, 2)
    ok_point = abs(err - (-0.0336)) <= 1e-12 and abs(err - (m.beta_k[1] ** 2 - m.beta_k[2])) <= 1e-12
    rng = np.random.default_rng(15)
    sweep = []
    for _ in range(20):
        r1 = rng.uniform(0.0, 1.0)
        q = MultiplicityParams(r1, 1.0 - r1, rng.uniform(0, 0.99), rng.uniform(0, 0.99))
        sweep.append(multiplicity_extrapolation_error(q))
    ok = ok_point and max(sweep) <= 0.0
    verdict(5, ok, f"error at figure parameters {err:.12f}; sweep max {max(sweep):.3e} over 20 draws")


# 6 -----------------------------------------------------------------------------

def test_c06_poverty_trap_excess():
    r = replicate_fig2a()
    ex2 = r.details["excess"]["2"]
    ctl = r.details["control_excess"]
    ok = ex2["delta"] > 3 * ex2["se"] and abs(ctl["delta"]) <= 3 * ctl["se"]
    verdict(6, ok, f"trap delta {ex2['delta']:.4f} (SE {ex2['se']:.4f}); "
            f"linear control delta {ctl['delta']:.4f} (SE {ctl['se']:.4f})")


# 7 -----------------------------------------------------------------------------

def test_c07_assortative_decay():
    dev = max(abs(assortative_moments(AssortativeParams(0.8, 0.7, m), 1).beta_k[1] - b)
              for m, b in ((0.0, 0.224), (0.5, 0.336), (0.8, 0.4032)))
    key = seed_key(2024)
    n = 100_000
    e = simulate(LatentFactorParams(1.0, 0.0), SimTopology(n, 2, 1, 2024)).y[:n]
    mc = {}
    for m in (0.0, 0.5, 0.8):
        mc[m] = float(np.corrcoef(e, spouse_draw(e, m, key, np.arange(n)))[0, 1])
        ped = simulate(AssortativeParams(0.8, 0.7, m), SimTopology(n, 2, 1, 2024))
        men = np.flatnonzero((ped.generation == 0) & (ped.spouse_row >= 0))[:n]
        mc[f"panel {m}"] = float(np.corrcoef(ped.e[men, 0], ped.e[ped.spouse_row[men], 0])[0, 1])
    worst = max(abs(v - (k if isinstance(k, float) else float(k.split()[1]))) for k, v in mc.items())
    ok = dev <= 1e-12 and worst <= 0.01
    verdict(7, ok, f"analytic beta1 max dev {dev:.1e}; spousal endowment corr max dev {worst:.4f} "
            f"at {n:,} couples")


# 8 -----------------------------------------------------------------------------

def test_c08_parameter_recovery():
    f = est.fit_latent_factor(latent_factor_moments(LatentFactorParams(0.8, 0.7), 2))
    exact = max(abs(f.rho_sq - 0.64), abs(f.lambda_ - 0.7))
    ped = simulate(LatentFactorParams(0.8, 0.7), SimTopology(50_000, 3, 1, 2024))
    g = est.fit_latent_factor(est.sample_moments(ped, 2))
    wide = simulate(LatentFactorParams(0.8, 0.7), SimTopology(2_000, 3, 64, 2024, max_persons=10_000_000))
    lam_g = est.group_level_estimate(wide, generation_pair=(1, 2))
    ok = exact <= 1e-12 and abs(g.rho_sq - 0.64) <= 0.02 and abs(g.lambda_ - 0.7) <= 0.02 \
        and abs(lam_g - 0.7) <= 0.03
    verdict(8, ok, f"exact inversion error {exact:.1e}; simulated fit rho^2={g.rho_sq:.4f} "
            f"lambda={g.lambda_:.4f}; group-level lambda={lam_g:.4f}")


# 9 -----------------------------------------------------------------------------

def test_c09_conditioning_on_mother():
    p = AssortativeParams(0.8, 0.7, 0.8)
    ped = simulate(p, SimTopology(50_000, 3, 1, 2024))
    base = est.multigen_regression(ped, (1, 2), descendant_generation="last")
    ctl = est.multigen_regression(ped, (1, 2), ["mother_y"], descendant_generation="last")
    cov = assortative_covariance(p)
    pop_base = population_regression(cov, 0, [1, 2])[0][1]
    pop_ctl = population_regression(cov, 0, [1, 2, 3])[0][1]
    gb, gc = base.coefficients["grandparent"], ctl.coefficients["grandparent"]
    drop = 1 - gc / gb
    ok = drop >= 0.30 and abs(gb - pop_base) <= 0.01 and abs(gc - pop_ctl) <= 0.01
    verdict(9, ok, f"grandfather {gb:.4f} -> {gc:.4f} (drop {drop:.1%}); population "
            f"{pop_base:.4f} -> {pop_ctl:.4f} (drop {1 - pop_ctl / pop_base:.1%})")


# 10 ----------------------------------------------------------------------------

def test_c10_determinism(tmp_path):
    model = ["--model", "assortative", "--rho", "0.8", "--lambda-tilde", "0.7", "--m", "0.5"]
    runs = {
        "simulate-csv": lambda d, w: ["simulate", *model, "--dynasties", "3000", "--generations", "4",
                                      "--children", "2", "--seed", "7", "--workers", w,
                                      "--out", str(d / "panel.csv")],
        "simulate-json": lambda d, w: ["simulate", *model, "--dynasties", "500", "--generations", "3",
                                       "--seed", "7", "--workers", w, "--include-latent",
                                       "--out", str(d / "panel.json")],
        "moments": lambda d, w: ["moments", *model, "--max-k", "7", "--out", str(d / "moments.json")],
        "fit": lambda d, w: ["fit", "--beta1", "0.448", "--beta2", "0.3136", "--out", str(d / "fit.json")],
        "regress": lambda d, w: ["regress", "--panel", str(tmp_path / "w1" / "panel.csv"),
                                 "--controls", "mother_y", "--out", str(d / "regress.json")],
        "excess": lambda d, w: ["regress", "--panel", str(tmp_path / "w1" / "panel.csv"),
                                "--estimator", "excess", "--n-boot", "50", "--seed", "3",
                                "--out", str(d / "excess.json")],
        "replicate": lambda d, w: ["replicate", "fig2a", "--out", str(d / "fig2a")],
    }
    dirs = {}
    for tag, w in (("w1", "1"), ("w1b", "1"), ("w4", "4")):
        d = tmp_path / tag
        d.mkdir()
        for make in runs.values():
            assert cli_main(make(d, w)) == 0
        dirs[tag] = d
    files = sorted(p.relative_to(dirs["w1"]) for p in dirs["w1"].rglob("*") if p.is_file())
    differ = [str(f) for f in files
              if not (dirs["w1"] / f).read_bytes() == (dirs["w1b"] / f).read_bytes()
              == (dirs["w4"] / f).read_bytes()]
    json.loads((dirs["w1"] / "fit.json").read_text())
    verdict(10, not differ and len(files) == 8,
            f"{len(files)} output files byte-identical across reruns and worker counts 1/4"
            + (f"; differing: {differ}" if differ else ""))


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
