"""Monte Carlo pedigrees under any transmission model.

Layout: person ids are assigned generation by generation. Within generation
``g`` the ``n_dynasties * c**g`` dynasty members come first, ordered by
(dynasty, birth index); in two-parent models their spouses follow in the same
order. Member ``L`` of generation ``g + 1`` is a child of member ``L // c`` of
generation ``g``.

Randomness: every draw is ``normal(seed, stream, slot)`` from the counter
kernel in :mod:`multigen.kernels`, where the stream is the person id (or the
parent id for components siblings share). No draw depends on evaluation
order, so chunking the work across threads cannot change a single bit.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import kernels
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
from .pedigree import MISSING, Pedigree, PedigreeError, SimTopology

# draw slots; shared (family-level) components use slot + 1 on the parent's stream
SLOT_V = 0
SLOT_U = 2
SLOT_V2 = 4
SLOT_SPOUSE = 6
SLOT_E0 = 8
SLOT_E0_2 = 9

AR2_BURN_IN = 10
_BURN_TAG = 1 << 62


class SimulationError(ValueError):
    pass


def _chunked(fn, n, workers, *arrays):
    """Apply an elementwise kernel over ``workers`` contiguous chunks."""
    if workers <= 1 or n < 2 * workers:
        return fn(*arrays)
    bounds = np.linspace(0, n, workers + 1).astype(np.int64)
    parts = [tuple(a[lo:hi] for a in arrays) for lo, hi in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        out = list(pool.map(lambda args: fn(*args), parts))
    return np.concatenate(out)


class _Draws:
    def __init__(self, seed: int, workers: int):
        self.key = kernels.seed_key(seed)
        self.workers = max(1, int(workers))

    def normal(self, streams, slot):
        streams = np.asarray(streams, dtype=np.uint64)
        return _chunked(lambda s: kernels.normals(self.key, s, slot), len(streams),
                        self.workers, streams)

    def mixed(self, own, family, slot, shared):
        own = np.asarray(own, dtype=np.uint64)
        family = np.asarray(family, dtype=np.uint64)
        return _chunked(lambda a, f: kernels.mixed_normals(self.key, a, f, slot, shared),
                        len(own), self.workers, own, family)


def spouse_draw(e_own, m: float, key: int, streams, slot: int = SLOT_SPOUSE):
    """Spouse endowments with correlation ``m`` to ``e_own`` and standard-normal marginals.

    ``key`` comes from :func:`multigen.kernels.seed_key`; ``streams`` are the
    spouses' person ids.
    """
    if not abs(m) < 1.0:
        raise ValueError(f"|m| must be < 1, got {m}")
    e_own = np.asarray(e_own, dtype=np.float64)
    z = kernels.normals(key, np.asarray(streams, dtype=np.uint64), slot)
    return m * e_own + math.sqrt(1.0 - m * m) * z


def _standardize(x):
    sd = x.std()
    if sd == 0.0:
        raise SimulationError("zero variance generation; cannot standardize")
    return (x - x.mean()) / sd


def simulate(spec: ModelSpec, topo: SimTopology, workers: int = 1) -> Pedigree:
    """Simulate an explicit pedigree; deterministic in (spec, topo) for any ``workers``."""
    check(spec)
    problems = topo.violations()
    if problems:
        raise SimulationError("; ".join(problems))
    two_parent = isinstance(spec, AssortativeParams)
    total = topo.total_persons(two_parent)
    if total > topo.max_persons:
        raise SimulationError(
            f"topology needs {total} persons, above the memory cap of {topo.max_persons}"
        )
    draws = _Draws(topo.seed, workers)
    c = topo.children_per_family

    blocks = []  # per generation: dict of columns for members (+ spouses)
    next_id = 0
    prev = None
    ar2_state = None
    for g in range(topo.generations):
        n = topo.members_in_generation(g)
        ids = np.arange(next_id, next_id + n, dtype=np.int64)
        local = np.arange(n, dtype=np.int64)
        dyn = local // (c**g)
        if prev is None:
            father = np.full(n, MISSING, dtype=np.int64)
            parent_rows = None
        else:
            parent_rows = local // c
            father = prev["ids"][parent_rows]
        mother = np.full(n, MISSING, dtype=np.int64)
        if prev is not None and two_parent:
            mother = prev["spouse_ids"][parent_rows]

        if isinstance(spec, LatentFactorParams):
            e, y = _latent_generation(spec, draws, ids, father, prev, parent_rows)
        elif isinstance(spec, MultiplicityParams):
            e, y = _multiplicity_generation(spec, draws, ids, father, prev, parent_rows)
        elif isinstance(spec, GrandparentAR2Params):
            y, ar2_state = _ar2_generation(spec, draws, ids, dyn, prev, parent_rows, ar2_state)
            e = None
        elif isinstance(spec, PovertyTrapParams):
            y = _poverty_generation(spec, draws, ids, prev, parent_rows)
            e = None
        elif isinstance(spec, AssortativeParams):
            e, y = _assortative_generation(spec, draws, ids, father, prev, parent_rows)
        else:  # pragma: no cover
            raise ModelError(f"unsupported model {type(spec).__name__}")

        block = {
            "ids": ids, "dyn": dyn, "father": father, "mother": mother,
            "spouse": np.full(n, MISSING, dtype=np.int64), "y": y, "e": e,
        }
        next_id += n
        if two_parent and g < topo.generations - 1:
            sp_ids = np.arange(next_id, next_id + n, dtype=np.int64)
            e_sp = spouse_draw(e[:, 0], spec.assortative_m, draws.key, sp_ids)
            u_sp = draws.normal(sp_ids, SLOT_U)
            y_sp = spec.returns_rho * e_sp + math.sqrt(spec.u_var) * u_sp
            block["spouse"] = sp_ids
            block["spouse_ids"] = sp_ids
            block["spouse_block"] = {
                "ids": sp_ids, "dyn": dyn, "father": np.full(n, MISSING, dtype=np.int64),
                "mother": np.full(n, MISSING, dtype=np.int64), "spouse": ids,
                "y": y_sp, "e": e_sp[:, None],
            }
            block["e_spouse"] = e_sp
            next_id += n
        blocks.append(block)
        prev = block

    cols = {k: [] for k in ("ids", "dyn", "gen", "father", "mother", "spouse", "y", "e")}
    for g, b in enumerate(blocks):
        for part in (b, b.get("spouse_block")):
            if part is None:
                continue
            cols["ids"].append(part["ids"])
            cols["dyn"].append(part["dyn"])
            cols["gen"].append(np.full(len(part["ids"]), g, dtype=np.int64))
            cols["father"].append(part["father"])
            cols["mother"].append(part["mother"])
            cols["spouse"].append(part["spouse"])
            cols["y"].append(part["y"])
            cols["e"].append(part["e"])
    e_all = None if cols["e"][0] is None else np.concatenate(cols["e"])
    return Pedigree(
        np.concatenate(cols["ids"]),
        np.concatenate(cols["dyn"]),
        np.concatenate(cols["gen"]),
        np.concatenate(cols["father"]),
        np.concatenate(cols["mother"]),
        np.concatenate(cols["spouse"]),
        np.concatenate(cols["y"]),
        e_all,
        topology=topo,
        spec=spec,
        validate=False,
    )


def _latent_generation(p: LatentFactorParams, draws, ids, father, prev, parent_rows):
    rho, lam = p.returns_rho, p.transferability_lambda
    if prev is None:
        e = draws.normal(ids, SLOT_E0)
        u = draws.normal(ids, SLOT_U)
    else:
        v = draws.mixed(ids, father, SLOT_V, p.sibling_shared_v)
        e = lam * prev["e"][parent_rows, 0] + math.sqrt(p.v_var) * v
        u = draws.mixed(ids, father, SLOT_U, p.sibling_shared_u)
    y = rho * e + math.sqrt(p.u_var) * u
    return e[:, None], y


def _multiplicity_generation(p: MultiplicityParams, draws, ids, father, prev, parent_rows):
    r1, r2 = math.sqrt(p.rho1_sq), math.sqrt(p.rho2_sq)
    if prev is None:
        e1 = draws.normal(ids, SLOT_E0)
        e2 = draws.normal(ids, SLOT_E0_2)
    else:
        pe = prev["e"][parent_rows]
        e1 = p.lambda1 * pe[:, 0] + math.sqrt(1.0 - p.lambda1**2) * draws.normal(ids, SLOT_V)
        e2 = p.lambda2 * pe[:, 1] + math.sqrt(1.0 - p.lambda2**2) * draws.normal(ids, SLOT_V2)
    y = r1 * e1 + r2 * e2 + math.sqrt(p.u_var) * draws.normal(ids, SLOT_U)
    return np.column_stack([e1, e2]), y


def _ar2_generation(p: GrandparentAR2Params, draws, ids, dyn, prev, parent_rows, state):
    sd = math.sqrt(p.shock_var)
    gp, ggp = p.gamma_p, p.gamma_gp
    if prev is None:
        # burn-in from independent standard-normal starts, one chain per dynasty
        n_dyn = int(dyn.max()) + 1
        streams = _BURN_TAG + np.arange(n_dyn, dtype=np.int64) * (AR2_BURN_IN + 2)
        y2 = draws.normal(streams, 0)
        y1 = draws.normal(streams + 1, 0)
        for b in range(AR2_BURN_IN):
            y2, y1 = y1, gp * y1 + ggp * y2 + sd * draws.normal(streams + 2 + b, 0)
        y = gp * y1[dyn] + ggp * y2[dyn] + sd * draws.normal(ids, SLOT_U)
        # hidden parent of each founder, needed as grandparent of generation 1
        return y, {"grandparent_y": y1[dyn]}
    y_parent = prev["y"][parent_rows]
    y_grand = state["grandparent_y"][parent_rows]
    y = gp * y_parent + ggp * y_grand + sd * draws.normal(ids, SLOT_U)
    return y, {"grandparent_y": y_parent}


def _poverty_generation(p: PovertyTrapParams, draws, ids, prev, parent_rows):
    if prev is None:
        return _standardize(draws.normal(ids, SLOT_U))
    z = prev["y"][parent_rows]  # already standardized within its generation
    dev = z - p.threshold_ybar
    slope = np.where(z < p.threshold_ybar, p.gamma_low, p.gamma_high)
    raw = slope * dev + p.shock_sd * draws.normal(ids, SLOT_U)
    return _standardize(raw)


def _assortative_generation(p: AssortativeParams, draws, ids, father, prev, parent_rows):
    if prev is None:
        e = draws.normal(ids, SLOT_E0)
    else:
        mid = 0.5 * (prev["e"][parent_rows, 0] + prev["e_spouse"][parent_rows])
        e = p.transferability_lambda_tilde * mid + math.sqrt(p.v_var) * draws.normal(ids, SLOT_V)
    y = p.returns_rho * e + math.sqrt(p.u_var) * draws.normal(ids, SLOT_U)
    return e[:, None], y


def poverty_persistence_curve(ped: Pedigree, ybar: float, max_k: int) -> np.ndarray:
    """P(descendant k generations down is below ``ybar`` | founder below ``ybar``).

    Founders are generation-0 father-line ancestors; every founder-descendant
    pair at distance ``k`` counts once. Entry 0 is 1 by construction.
    """
    if max_k < 0:
        raise ValueError("max_k must be >= 0")
    if max_k >= ped.n_generations:
        raise PedigreeError(f"max_k={max_k} needs more than {ped.n_generations} generations")
    g0 = ped.generation.min()
    founders = (ped.generation == g0) & (ped.father_row < 0) & (ped.mother_row < 0)
    poor_founder = founders & (ped.y < ybar)
    if not poor_founder.any():
        raise SimulationError(f"no founders below ybar={ybar}; conditional probability undefined")
    curve = [1.0]
    for k in range(1, max_k + 1):
        anc = ped.ancestor_rows(k, "father")
        has = anc >= 0
        cond = np.zeros(len(ped), dtype=bool)
        cond[has] = poor_founder[anc[has]]
        n = int(cond.sum())
        if n == 0:
            raise SimulationError(f"no descendants at distance {k} of poor founders")
        curve.append(float((ped.y[cond] < ybar).mean()))
    return np.array(curve)
