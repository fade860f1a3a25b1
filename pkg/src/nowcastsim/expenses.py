"""Housing, work-related and capital adjustments to disposable income:
commuting costs, childcare costs, mortgage deferral, and equity losses.

Commuting uses the two transport-mode logits (public / private) evaluated
on industry group, region, occupation, age band and education dummies;
public transport wins when both fire. Weekly household costs come from the
per-worker-count cost table, with the count capped at its last column.

Childcare is a three-stage pipeline: a participation logit with a draw
anchored to the observed user flag, an expenditure regression with the
residual recovered from observed spending, and a cell-mean calibration of
users' costs to the family-type x income-decile grid.

Capital losses apply a participation gate at the holdings-grid rate
(anchored to observed capital income) and a per-holder value change of
holding x index factor.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .calibration import align_continuous
from .igm import anchored_draws, draw_residual, linear_predict, logit_prob
from .money import cents
from .rng import keyed_uniform

MODE_NONE, MODE_PUBLIC, MODE_PRIVATE = 0, 1, 2

FAMILY_TYPES = ("lone_parent", "two_adults_1_3_children", "other_with_children")
AGE_BANDS = ("30", "40", "50", "60", "70")


class ExpenseError(ValueError):
    pass


# -- commuting ---------------------------------------------------------------

@dataclass(frozen=True)
class CommuteCostTable:
    """Weekly cost in cents by number of commuters (index 0..3, 3 = 3+)."""

    motor_fuels_cents: tuple
    public_transport_cents: tuple


def load_commute_costs(path) -> CommuteCostTable:
    mf = [0, 0, 0, 0]
    pt = [0, 0, 0, 0]
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.DictReader(fh), start=2):
            n = int(rec["workers"])
            if n not in (1, 2, 3):
                raise ExpenseError(f"{path}:{lineno}: workers column must be 1, 2 or 3")
            mf[n] = cents(float(rec["motor_fuels_eur"]))
            pt[n] = cents(float(rec["public_transport_eur"]))
            total = cents(float(rec["total_eur"]))
            if abs(total - mf[n] - pt[n]) > 1:  # components must add up to the total
                raise ExpenseError(
                    f"{path}:{lineno}: total {total} != {mf[n]} + {pt[n]} within a cent"
                )
    return CommuteCostTable(motor_fuels_cents=tuple(mf), public_transport_cents=tuple(pt))


def load_sector_groups(path) -> dict:
    groups = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            groups[rec["sector"].strip()] = rec["transport_group"].strip()
    return groups


def transport_covariates(groups, region_bmw, occupation, age, university) -> dict:
    """Dummy covariates for the transport-mode logits.

    `groups` holds the industry-group covariate name per worker (or
    "reference"); occupation 9 and ages under 20 are the reference
    categories.
    """
    groups = np.asarray(groups)
    occupation = np.asarray(occupation)
    age = np.asarray(age)
    cov = {}
    for name in ("ind_manufacturing_utilities", "ind_construction", "ind_commerce",
                 "ind_transport_comms", "ind_public_admin", "ind_education_health",
                 "ind_other"):
        cov[name] = (groups == name).astype(np.float64)
    cov["region_bmw"] = np.asarray(region_bmw, dtype=np.float64)
    for occ in range(1, 9):
        cov[f"occ_{occ}"] = (occupation == occ).astype(np.float64)
    edges = [(20, 24), (25, 29), (30, 34), (35, 39), (40, 44), (45, 49),
             (50, 54), (55, 59), (60, 64), (65, 69), (70, 74)]
    for lo, hi in edges:
        cov[f"age_{lo}_{hi}"] = ((age >= lo) & (age <= hi)).astype(np.float64)
    cov["age_75p"] = (age >= 75).astype(np.float64)
    cov["university"] = np.asarray(university, dtype=np.float64)
    return cov


def assign_commute_modes(models, sector_groups, is_worker, industry, region_bmw,
                         occupation, age, university, person_ids, seed: int) -> np.ndarray:
    """Commute mode per person: 1 public, 2 private, 0 none.

    Both logits are evaluated; the draws are keyed per person so modes stay
    fixed across scenarios. Public transport wins when both fire;
    non-workers always get none.
    """
    is_worker = np.asarray(is_worker, dtype=bool)
    groups = np.array([sector_groups.get(s, "reference") for s in industry])
    cov = transport_covariates(groups, region_bmw, occupation, age, university)
    p_public = np.asarray(logit_prob(models["transport_public"], cov))
    p_private = np.asarray(logit_prob(models["transport_private"], cov))
    ids = np.asarray(person_ids)
    u_public = keyed_uniform(seed, "transport_public", ids)
    u_private = keyed_uniform(seed, "transport_private", ids)
    modes = np.full(ids.shape, MODE_NONE, dtype=np.int64)
    modes[is_worker & (u_public < p_public)] = MODE_PUBLIC
    private = is_worker & (modes == MODE_NONE) & (u_private < p_private)
    modes[private] = MODE_PRIVATE
    return modes


def commuting_cost_cents(table: CommuteCostTable, n_private: int, n_public: int) -> int:
    """Weekly household commuting cost for the active commuter mix."""
    if n_private < 0 or n_public < 0:
        raise ExpenseError("commuter counts must be >= 0")
    return (table.motor_fuels_cents[min(n_private, 3)]
            + table.public_transport_cents[min(n_public, 3)])


# -- childcare ---------------------------------------------------------------

@dataclass(frozen=True)
class ChildcareCostGrid:
    """Weekly cost cells in cents by (family type, income decile)."""

    cells: dict


def load_childcare_grid(path) -> ChildcareCostGrid:
    cells = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.DictReader(fh), start=2):
            ftype = rec["family_type"].strip()
            if ftype not in FAMILY_TYPES:
                raise ExpenseError(f"{path}:{lineno}: unknown family type {ftype!r}")
            cells[(ftype, int(rec["decile"]))] = cents(float(rec["cost_eur_week"]))
    return ChildcareCostGrid(cells=cells)


def family_type(n_adults: int, n_children_under14: int) -> str:
    """Family-type cell of the childcare grid; adults counted from 18."""
    if n_children_under14 <= 0:
        return "no_children"
    if n_adults <= 1:
        return "lone_parent"
    if n_adults == 2 and 1 <= n_children_under14 <= 3:
        return "two_adults_1_3_children"
    return "other_with_children"


def childcare_costs_cents(models, grid: ChildcareCostGrid, household_ids, weights,
                          family_types, deciles, n_children_0_4, n_children_under14,
                          equiv_disposable_week_eur, two_workers_flag, observed_user,
                          observed_spend_eur, seed: int, residual_scale: float = 0.0,
                          residual_store=None) -> np.ndarray:
    """Baseline weekly childcare cost in cents per household.

    Participation replays the observed user flag through an anchored draw
    at the participation-logit probability; user-level costs start from the
    expenditure regression plus the recovered (or, for users without an
    observation, stochastic) residual, then users' costs in each populated
    family-type x decile cell are mean-calibrated to the cost grid.
    """
    ids = np.asarray(household_ids)
    w = np.asarray(weights, dtype=np.float64)
    ftypes = np.asarray(family_types)
    deciles = np.asarray(deciles)
    cov = {
        "n_children_0_4": np.asarray(n_children_0_4, dtype=np.float64),
        "n_children": np.asarray(n_children_under14, dtype=np.float64),
        "equiv_income_week": np.asarray(equiv_disposable_week_eur, dtype=np.float64),
        "equiv_income_week_sq": np.asarray(equiv_disposable_week_eur, dtype=np.float64) ** 2,
        "two_workers_or_working_lone_parent": np.asarray(two_workers_flag, dtype=np.float64),
    }
    observed_user = np.asarray(observed_user, dtype=bool)
    observed_spend = np.asarray(observed_spend_eur, dtype=np.float64)

    has_model = models["childcare_has"]
    spend_model = models["childcare_spend"]
    p = np.asarray(logit_prob(has_model, {k: v for k, v in cov.items()
                                          if k in has_model.covariates}))
    u = anchored_draws(p, observed_user, seed, "childcare_has", ids)
    users = (u < p) & (ftypes != "no_children")

    prediction = np.asarray(linear_predict(
        spend_model, {k: v for k, v in cov.items() if k in spend_model.covariates}))
    eps_recovered = observed_spend - prediction
    eps_stochastic = draw_residual("childcare_spend", residual_scale, seed, ids)
    recovered = users & observed_user
    level = np.where(recovered, prediction + eps_recovered,
                     prediction + eps_stochastic)
    level = np.maximum(level, 0.0)
    level[~users] = 0.0
    if residual_store is not None:
        for i in np.flatnonzero(recovered):
            residual_store.put(int(ids[i]), "childcare_spend",
                               float(eps_recovered[i]), "recovered")
        for i in np.flatnonzero(users & ~observed_user):
            residual_store.put(int(ids[i]), "childcare_spend",
                               float(eps_stochastic[i]), "stochastic")

    for (ftype, decile), target_cents in grid.cells.items():
        cell = users & (ftypes == ftype) & (deciles == decile)
        if not np.any(cell):
            continue
        target = target_cents / 100.0
        current = float(np.sum(level[cell] * w[cell]) / np.sum(w[cell]))
        if current == 0.0:
            level[cell] = target
        else:
            level[cell] = align_continuous(level[cell], w[cell], target)
    return np.array([cents(v) for v in level], dtype=np.int64)


# -- housing -----------------------------------------------------------------

TENURE_CODES = {"owner_outright": 0, "mortgage": 1, "renter": 2}


def housing_cost_cents(tenure_code, mortgage_cents, rent_cents, deferred) -> np.ndarray:
    """Monthly housing cost: rent for renters, the mortgage payment for
    mortgage holders unless deferred, nothing for outright owners."""
    tenure = np.asarray(tenure_code, dtype=np.int64)
    mortgage = np.asarray(mortgage_cents, dtype=np.int64)
    rent = np.asarray(rent_cents, dtype=np.int64)
    deferred = np.asarray(deferred, dtype=bool)
    cost = np.where(tenure == TENURE_CODES["renter"], rent, 0)
    cost = np.where((tenure == TENURE_CODES["mortgage"]) & ~deferred, mortgage, cost)
    return cost.astype(np.int64)


# -- capital losses ----------------------------------------------------------

@dataclass(frozen=True)
class CapitalHoldingsGrid:
    """Per (age band, income quintile): participation rate and per-holder
    share value in cents."""

    participation: dict
    value_cents: dict


def load_holdings_grid(participation_path, values_path) -> CapitalHoldingsGrid:
    participation = {}
    with open(participation_path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.DictReader(fh), start=2):
            rate = float(rec["participation"])
            if not 0.0 <= rate <= 1.0:
                raise ExpenseError(f"{participation_path}:{lineno}: rate outside [0, 1]")
            participation[(rec["age_band"].strip(), int(rec["quintile"]))] = rate
    values = {}
    with open(values_path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.DictReader(fh), start=2):
            thousands = float(rec["value_eur_thousand"])
            if thousands < 0:
                raise ExpenseError(f"{values_path}:{lineno}: negative holding value")
            values[(rec["age_band"].strip(), int(rec["quintile"]))] = cents(thousands * 1000.0)
    if set(participation) != set(values):
        raise ExpenseError("participation and value grids cover different cells")
    return CapitalHoldingsGrid(participation=participation, value_cents=values)


def age_band(age) -> np.ndarray:
    """Holding-grid age band labels: <35, 35-44, 45-54, 55-64, 65+."""
    a = np.atleast_1d(np.asarray(age, dtype=np.int64))
    bands = np.select(
        [a < 35, a < 45, a < 55, a < 65],
        [np.str_("30"), np.str_("40"), np.str_("50"), np.str_("60")],
        default=np.str_("70"),
    )
    return bands


def capital_participants(grid: CapitalHoldingsGrid, bands, quintiles, observed_holder,
                         person_ids, seed: int) -> np.ndarray:
    """Participation gate: anchored draw at the grid rate against the
    observed holder state (capital income present)."""
    bands = np.asarray(bands)
    quintiles = np.asarray(quintiles)
    rates = np.empty(bands.shape, dtype=np.float64)
    for i, (b, q) in enumerate(zip(bands.tolist(), quintiles.tolist())):
        try:
            rates[i] = grid.participation[(b, int(q))]
        except KeyError:
            raise ExpenseError(f"holding grid has no cell ({b!r}, {q})") from None
    rates = np.clip(rates, 1e-9, 1.0 - 1e-9)
    u = anchored_draws(rates, np.asarray(observed_holder, dtype=bool), seed,
                       "shareholding", np.asarray(person_ids))
    return u < rates


def capital_value_change_cents(grid: CapitalHoldingsGrid, bands, quintiles,
                               participant, index_change_factor: float) -> np.ndarray:
    """Signed change in share value per person: holding x index factor for
    participants, 0 otherwise. Negative when markets fall."""
    bands = np.asarray(bands)
    quintiles = np.asarray(quintiles)
    participant = np.asarray(participant, dtype=bool)
    out = np.zeros(bands.shape, dtype=np.int64)
    for i in np.flatnonzero(participant):
        key = (str(bands[i]), int(quintiles[i]))
        try:
            holding = grid.value_cents[key]
        except KeyError:
            raise ExpenseError(f"holding grid has no cell {key!r}") from None
        out[i] = int(round(holding * index_change_factor))
    return out
