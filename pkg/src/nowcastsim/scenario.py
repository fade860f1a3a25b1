"""Scenario orchestration: nowcast the base population, apply each wave's
labour-market shock and policy state, and produce counterfactual income
distributions.

Per wave, in a fixed order so a person holds at most one pandemic state:

  (a) job losses aligned per sector to the pandemic-payment recipient
      stocks (rescaled from national counts by the population's sector
      worker weight over the national reference employment), restricted to
      workers aged 18-66; losers get the earnings-banded pandemic rate, or
      ordinary unemployment benefit when the instrument is switched off
  (b) sickness-benefit cases aligned per age band among remaining workers
      (in-work cases only; out-of-work cases carry no income change)
  (c) wage-subsidised employees aligned per sector among the remainder;
      their pay is recomposed as subsidy plus an employer top-up share of
      the shortfall, and stays in taxable market income
  (d) home-working flags for non-essential, home-capable remaining workers
  (e) mortgage deferrals aligned among mortgage holders (uniform odds)
  (f) capital value changes for share holders at the wave's index factor
  (g) taxes and benefits evaluated; market / gross / disposable / adjusted
      income emitted per household in integer cents

Ranking alignment keys never include the wave date for persistent states
(job loss, subsidy, deferral), so recipient sets are nested as targets
move; sickness draws are keyed per wave. All draws are keyed by unit id,
making results independent of iteration order and thread count.
"""
from __future__ import annotations

import configparser
import csv
import datetime as dt
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import expenses, igm, metrics, taxben
from .calibration import AlignmentError, align_binary, align_by_score, align_continuous
from .money import cents, round_div
from .population import SECTORS, Population
from .rng import anchored_uniform, keyed_uniform

CASE_AGE_BANDS = ("0", "1-4", "5-14", "15-24", "25-34", "35-44", "45-54", "55-64", "65+")
_CASE_BAND_EDGES = (1, 5, 15, 25, 35, 45, 55, 65)


class ScenarioError(ValueError):
    pass


class ControlError(ValueError):
    pass


def _np_round_div(n, d: int) -> np.ndarray:
    """Vectorised round-half-away-from-zero division by a positive int."""
    n = np.asarray(n, dtype=np.int64)
    q = (2 * np.abs(n) + d) // (2 * d)
    return np.where(n >= 0, q, -q).astype(np.int64)


def case_age_band(age) -> np.ndarray:
    a = np.atleast_1d(np.asarray(age, dtype=np.int64))
    idx = np.searchsorted(np.asarray(_CASE_BAND_EDGES), a, side="right")
    return np.asarray(CASE_AGE_BANDS, dtype=object)[idx]


# -- control totals ------------------------------------------------------------


@dataclass
class ControlTotals:
    """External aggregates in force at one wave date."""

    date: dt.date
    pup_by_sector: dict = field(default_factory=dict)
    ceib_by_sector: dict = field(default_factory=dict)
    ceib_cases: dict = field(default_factory=dict)  # (band, in_work) -> count
    subsidy_by_sector: dict = field(default_factory=dict)
    deferral_count: float = 0.0
    index_change_factor: float = 0.0
    employment_rate_by_age: dict = field(default_factory=dict)
    wage_index: float = 1.0


@dataclass
class ControlSeries:
    """All dated control rows of one file, resolvable per wave date."""

    pup: dict = field(default_factory=dict)
    ceib_sector: dict = field(default_factory=dict)
    ceib_cases: dict = field(default_factory=dict)
    subsidy: dict = field(default_factory=dict)
    deferrals: list = field(default_factory=list)  # [(date, count)] ascending
    index_factor: dict = field(default_factory=dict)
    employment_rate: dict = field(default_factory=dict)
    wage_index: dict = field(default_factory=dict)

    def deferrals_at(self, date: dt.date) -> float:
        """Piecewise-linear interpolation of the deferral request series."""
        if not self.deferrals:
            return 0.0
        points = sorted(self.deferrals)
        if date <= points[0][0]:
            return float(points[0][1]) if date == points[0][0] else 0.0
        if date >= points[-1][0]:
            return float(points[-1][1])
        for (d0, v0), (d1, v1) in zip(points, points[1:]):
            if d0 <= date <= d1:
                frac = (date - d0).days / (d1 - d0).days
                return v0 + frac * (v1 - v0)
        return 0.0

    def at(self, date: dt.date) -> ControlTotals:
        return ControlTotals(
            date=date,
            pup_by_sector=self.pup.get(date, {}),
            ceib_by_sector=self.ceib_sector.get(date, {}),
            ceib_cases=self.ceib_cases.get(date, {}),
            subsidy_by_sector=self.subsidy.get(date, {}),
            deferral_count=self.deferrals_at(date),
            index_change_factor=self.index_factor.get(date, 0.0),
            employment_rate_by_age=self.employment_rate.get(date, {}),
            wage_index=self.wage_index.get(date, 1.0),
        )


def load_control_totals(path) -> ControlSeries:
    """Load (stratum_key, date, target) rows; '#' lines are comments."""
    series = ControlSeries()
    with open(path, encoding="utf-8") as fh:
        lines = [(i, line) for i, line in enumerate(fh, start=1)
                 if line.strip() and not line.lstrip().startswith("#")]
    reader = csv.DictReader(line for _, line in lines)
    if reader.fieldnames is None or not {"stratum_key", "date", "target"}.issubset(
            reader.fieldnames):
        raise ControlError(f"{path}: expected columns stratum_key, date, target")
    name = os.path.basename(path)
    for (lineno, _), rec in zip(lines[1:], reader):
        key = rec["stratum_key"].strip()
        try:
            date = dt.date.fromisoformat(rec["date"].strip())
            target = float(rec["target"])
        except ValueError as exc:
            raise ControlError(f"{name}:{lineno}: bad date or target") from exc
        if target < 0 and not key == "index_change_factor":
            raise ControlError(f"{name}:{lineno}: negative target for {key!r}")
        head, _, rest = key.partition(":")
        if head in ("pup", "ceib", "subsidy"):
            if rest not in SECTORS:
                raise ControlError(f"{name}:{lineno}: unknown sector {rest!r}")
            table = {"pup": series.pup, "ceib": series.ceib_sector,
                     "subsidy": series.subsidy}[head]
            table.setdefault(date, {})[rest] = target
        elif head == "ceib_cases":
            status, _, band = rest.partition(":")
            if status not in ("in_work", "out_of_work") or band not in CASE_AGE_BANDS:
                raise ControlError(f"{name}:{lineno}: bad case stratum {key!r}")
            series.ceib_cases.setdefault(date, {})[(band, status == "in_work")] = target
        elif head == "mortgage_deferrals":
            series.deferrals.append((date, target))
        elif head == "index_change_factor":
            series.index_factor[date] = target
        elif head == "employment_rate":
            if not 0.0 <= target <= 1.0:
                raise ControlError(f"{name}:{lineno}: employment rate outside [0, 1]")
            series.employment_rate.setdefault(date, {})[rest] = target
        elif head == "wage_index":
            series.wage_index[date] = target
        else:
            raise ControlError(f"{name}:{lineno}: unknown stratum_key {key!r}")
    return series


def load_national_reference(path) -> dict:
    ref = {"sector_employment": {}}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.DictReader(fh), start=2):
            key = rec["key"].strip()
            value = float(rec["value"])
            if key.startswith("sector_employment:"):
                sector = key.split(":", 1)[1]
                if sector not in SECTORS:
                    raise ControlError(f"{path}:{lineno}: unknown sector {sector!r}")
                ref["sector_employment"][sector] = value
            else:
                ref[key] = value
    for required in ("population_total", "mortgage_count"):
        if required not in ref:
            raise ControlError(f"{path}: missing key {required!r}")
    missing = [s for s in SECTORS if s not in ref["sector_employment"]]
    if missing:
        raise ControlError(f"{path}: missing sector employment for {missing[0]!r}")
    return ref


# -- scenario file ---------------------------------------------------------------


@dataclass(frozen=True)
class WavePoint:
    """One time point: a date plus the instrument switches in force."""

    label: str
    date: dt.date
    pup_on: bool = False
    ceib_on: bool = False
    subsidy: str = "none"  # none | twss | ewss | auto
    childcare_support: bool = False
    deferrals_on: bool = False
    capital_on: bool = False
    home_working_on: bool = False


@dataclass
class Scenario:
    waves: list
    controls_path: str
    seed: int = 0
    employer_topup: float = 0.30
    capital_booking: str = "amortized"  # amortized (/12) or once


def parse_scenario(path) -> Scenario:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"cannot read scenario file {path}")
    if "scenario" not in parser:
        raise ScenarioError(f"{path}: missing [scenario] section")
    main = parser["scenario"]
    controls = main.get("controls", "")
    if not controls:
        raise ScenarioError(f"{path}: [scenario] needs a controls file reference")
    if not os.path.isabs(controls):
        controls = os.path.join(os.path.dirname(os.path.abspath(path)), controls)

    def flag(section, key):
        value = section.get(key, "off").strip().lower()
        if value not in ("on", "off"):
            raise ScenarioError(f"{path}: [{section.name}] {key} must be on or off")
        return value == "on"

    waves = []
    for section_name in parser.sections():
        if not section_name.startswith("wave:"):
            continue
        section = parser[section_name]
        label = section_name.split(":", 1)[1]
        if "date" not in section:
            raise ScenarioError(f"{path}: [{section_name}] needs a date")
        subsidy = section.get("subsidy", "none").strip().lower()
        if subsidy not in ("none", "twss", "ewss", "auto"):
            raise ScenarioError(f"{path}: [{section_name}] bad subsidy {subsidy!r}")
        waves.append(WavePoint(
            label=label,
            date=dt.date.fromisoformat(section["date"].strip()),
            pup_on=flag(section, "pup"),
            ceib_on=flag(section, "ceib"),
            subsidy=subsidy,
            childcare_support=flag(section, "childcare_support"),
            deferrals_on=flag(section, "deferrals"),
            capital_on=flag(section, "capital_losses"),
            home_working_on=flag(section, "home_working"),
        ))
    if not waves:
        raise ScenarioError(f"{path}: no [wave:...] sections")
    labels = [w.label for w in waves]
    if len(set(labels)) != len(labels):
        raise ScenarioError(f"{path}: duplicate wave labels")
    waves.sort(key=lambda w: w.date)
    return Scenario(
        waves=waves,
        controls_path=controls,
        seed=main.getint("seed", fallback=0),
        employer_topup=main.getfloat("employer_topup", fallback=0.30),
        capital_booking=main.get("capital_booking", "amortized").strip(),
    )


# -- reference data bundle -------------------------------------------------------


@dataclass
class DataTables:
    models: dict
    sector_groups: dict
    commute: expenses.CommuteCostTable
    childcare_grid: expenses.ChildcareCostGrid
    holdings: expenses.CapitalHoldingsGrid
    national: dict


def load_data_tables(data_dir) -> DataTables:
    join = lambda name: os.path.join(data_dir, name)
    return DataTables(
        models=igm.load_coefficients(join("coefficients.csv")),
        sector_groups=expenses.load_sector_groups(join("sector_groups.csv")),
        commute=expenses.load_commute_costs(join("commuting_costs.csv")),
        childcare_grid=expenses.load_childcare_grid(join("childcare_cost_grid.csv")),
        holdings=expenses.load_holdings_grid(
            join("shareholding_participation.csv"), join("shareholding_values.csv")
        ),
        national=load_national_reference(join("national_reference.csv")),
    )


# -- baseline nowcast ------------------------------------------------------------


def nowcast_baseline(pop: Population, controls: ControlTotals, seed: int) -> Population:
    """Calibrate the population to the baseline control totals.

    Employment is aligned per age band to the target rates with scores
    built from anchored uniforms, so targets equal to the observed rates
    leave the population untouched and shifted targets flip the loosest
    attachments first. Employee earnings are then uprated to the wage
    index. Returns a new Population; the input is not modified.
    """
    persons = [replace(p) for p in pop.persons]
    weights = {h.household_id: h.weight for h in pop.households}
    if controls.employment_rate_by_age:
        bands = case_age_band([p.age for p in persons])
        med = _weighted_median(
            [p.employment_income for p in persons if p.work_status == "employee"],
            [weights[p.household_id] for p in persons if p.work_status == "employee"],
        )
        shares = np.cumsum([_worker_share(pop, s) for s in SECTORS])
        for band, rate in sorted(controls.employment_rate_by_age.items()):
            idx = [i for i in range(len(persons))
                   if bands[i] == band and persons[i].age >= 16]
            if not idx:
                continue
            w = np.array([weights[persons[i].household_id] for i in idx])
            observed = np.array([persons[i].is_worker for i in idx])
            pids = np.array([persons[i].person_id for i in idx])
            p0 = float(np.sum(w[observed]) / np.sum(w))
            p0 = min(max(p0, 1e-9), 1.0 - 1e-9)
            u = anchored_uniform(p0, observed, keyed_uniform(seed, "employment", pids))
            target = rate * float(np.sum(w))
            chosen = set(align_by_score(pids, -u, w, target).tolist())
            for i in idx:
                p = persons[i]
                selected = p.person_id in chosen
                if selected and not p.is_worker:
                    sector_u = keyed_uniform(seed, "employment:sector", p.person_id)
                    sector = SECTORS[int(np.searchsorted(shares, sector_u * shares[-1]))]
                    occupation = p.occupation or 1 + int(
                        keyed_uniform(seed, "employment:occ", p.person_id) * 9)
                    persons[i] = replace(
                        p, work_status="employee", industry=sector,
                        occupation=occupation, employment_income=med,
                    )
                elif not selected and p.is_worker:
                    persons[i] = replace(
                        p, work_status="unemployed",
                        employment_income=0.0, self_employment_income=0.0,
                    )
    if controls.wage_index != 1.0:
        emp = [i for i, p in enumerate(persons) if p.work_status == "employee"]
        values = np.array([persons[i].employment_income for i in emp])
        w = np.array([weights[persons[i].household_id] for i in emp])
        current = float(np.sum(values * w) / np.sum(w))
        scaled = align_continuous(values, w, controls.wage_index * current)
        for i, v in zip(emp, scaled):
            persons[i] = replace(persons[i], employment_income=float(v))
    return Population(households=pop.households, persons=persons,
                      base_period=pop.base_period)


def _weighted_median(values, weights) -> float:
    if not len(values):
        return 0.0
    v = np.asarray(values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    order = np.argsort(v)
    cum = np.cumsum(w[order])
    return float(v[order][np.searchsorted(cum, 0.5 * cum[-1])])


def _worker_share(pop: Population, sector: str) -> float:
    return sum(1.0 for p in pop.persons if p.is_worker and p.industry == sector) or 1e-9


# -- baseline state --------------------------------------------------------------


@dataclass
class BaselineState:
    """Immutable pre-shock arrays shared by every wave computation."""

    base_date: dt.date
    # person arrays (sorted by person id)
    pid: np.ndarray
    hh_row: np.ndarray           # index into the household arrays
    age: np.ndarray
    person_weight: np.ndarray
    status: np.ndarray           # taxben.STATUS_CODES
    sector_idx: np.ndarray       # index into SECTORS, -1 when none
    is_worker: np.ndarray
    essential: np.ndarray
    home_capable: np.ndarray
    emp_cents: np.ndarray        # annual
    se_cents: np.ndarray
    cap_cents: np.ndarray
    pens_cents: np.ndarray
    weekly_earn_cents: np.ndarray
    take_home_weekly_cents: np.ndarray
    commute_mode: np.ndarray
    case_band: np.ndarray
    cap_band: np.ndarray
    cap_quintile: np.ndarray
    cap_participant: np.ndarray
    # household arrays (sorted by household id)
    hid: np.ndarray
    hh_weight: np.ndarray
    tenure_code: np.ndarray
    mortgage_cents: np.ndarray
    rent_cents: np.ndarray
    adults_14plus: np.ndarray
    children_under14: np.ndarray
    equiv_scale: np.ndarray
    childcare_weekly_cents: np.ndarray
    decile: np.ndarray
    quintile: np.ndarray
    residual_store: igm.ResidualStore
    ranking_equiv_adjusted: np.ndarray = None  # per person, set after the first wave


def build_baseline(pop: Population, tables: DataTables,
                   schedules: taxben.PolicySchedules, seed: int) -> BaselineState:
    persons = sorted(pop.persons, key=lambda p: p.person_id)
    households = sorted(pop.households, key=lambda h: h.household_id)
    hid = np.array([h.household_id for h in households], dtype=np.int64)
    pid = np.array([p.person_id for p in persons], dtype=np.int64)
    hh_row = np.searchsorted(hid, np.array([p.household_id for p in persons]))
    hh_weight = np.array([h.weight for h in households], dtype=np.float64)

    age = np.array([p.age for p in persons], dtype=np.int64)
    status = np.array([taxben.STATUS_CODES[p.work_status] for p in persons], dtype=np.int64)
    sector_index = {s: i for i, s in enumerate(SECTORS)}
    sector_idx = np.array([sector_index.get(p.industry, -1) for p in persons], dtype=np.int64)
    is_worker = np.array([p.is_worker for p in persons], dtype=bool)
    emp = np.array([cents(p.employment_income) for p in persons], dtype=np.int64)
    se = np.array([cents(p.self_employment_income) for p in persons], dtype=np.int64)
    cap = np.array([cents(p.capital_income) for p in persons], dtype=np.int64)
    pens = np.array([cents(p.private_pension) for p in persons], dtype=np.int64)
    weekly_earn = _np_round_div(emp + np.maximum(se, 0), 52)

    taxable = emp + np.maximum(se, 0) + cap + pens
    person_tax = taxben.income_tax_cents(taxable, schedules.tax)
    take_home_weekly = _np_round_div(np.maximum(emp - person_tax, 0), 52)

    # baseline taxes/benefits -> household disposable, for deciles and childcare
    covid0 = np.zeros(pid.size, dtype=np.int64)
    weekly_b = taxben.benefit_weekly_cents(
        status, covid0, weekly_earn, pop.base_period, taxben.PolicyState(), schedules)
    b_month_p = _np_round_div(weekly_b * 52, 12)
    t_month_p = _np_round_div(person_tax, 12)
    market_p = _np_round_div(emp + se + cap + pens, 12)
    n_hh = hid.size
    market_hh = np.bincount(hh_row, weights=market_p, minlength=n_hh).astype(np.int64)
    b_hh = np.bincount(hh_row, weights=b_month_p, minlength=n_hh).astype(np.int64)
    t_hh = np.bincount(hh_row, weights=t_month_p, minlength=n_hh).astype(np.int64)
    disposable_hh = market_hh + b_hh - t_hh

    children_u14 = np.array([h.n_children_under14 for h in households], dtype=np.int64)
    members = np.bincount(hh_row, minlength=n_hh).astype(np.int64)
    adults_14plus = members - children_u14
    scale = metrics.equivalence_scale(adults_14plus, children_u14)
    equiv_disposable = disposable_hh / 100.0 / scale

    person_weight = hh_weight[hh_row]
    # household-level deciles/quintiles of equivalised disposable income,
    # person-weighted (household weight x size), so a household never
    # straddles a boundary
    group_weight = hh_weight * members
    decile_hh = metrics.weighted_quantile_groups(equiv_disposable, group_weight, 10, ids=hid)
    quintile_hh = metrics.weighted_quantile_groups(equiv_disposable, group_weight, 5, ids=hid)
    quintile_p = quintile_hh[hh_row]

    region_bmw = np.array([1.0 if p.region.startswith("border") else 0.0 for p in persons])
    occupation = np.array([p.occupation for p in persons], dtype=np.int64)
    university = np.array([1.0 if p.education == "university" else 0.0 for p in persons])
    industry = [p.industry for p in persons]
    commute_mode = expenses.assign_commute_modes(
        tables.models, tables.sector_groups, is_worker, industry, region_bmw,
        occupation, age, university, pid, seed)

    n_workers_hh = np.bincount(hh_row, weights=is_worker.astype(float),
                               minlength=n_hh).astype(np.int64)
    adults_18 = np.bincount(hh_row, weights=(age >= 18).astype(float),
                            minlength=n_hh).astype(np.int64)
    ftypes = np.array([
        expenses.family_type(int(a), int(c))
        for a, c in zip(adults_18, children_u14)
    ], dtype=object)
    lone_working = (adults_18 == 1) & (n_workers_hh >= 1)
    two_workers = (n_workers_hh == 2) | lone_working
    residual_store = igm.ResidualStore()
    childcare_weekly = expenses.childcare_costs_cents(
        tables.models, tables.childcare_grid,
        household_ids=hid, weights=hh_weight, family_types=ftypes,
        deciles=decile_hh,
        n_children_0_4=np.array([h.n_children_0_4 for h in households]),
        n_children_under14=children_u14,
        equiv_disposable_week_eur=equiv_disposable * 12.0 / 52.0,
        two_workers_flag=two_workers,
        observed_user=np.array([h.childcare_user for h in households]),
        observed_spend_eur=np.array([h.childcare_expenditure for h in households]),
        seed=seed, residual_store=residual_store,
    )

    cap_band = expenses.age_band(age)
    cap_participant = expenses.capital_participants(
        tables.holdings, cap_band, quintile_p, cap > 0, pid, seed)

    return BaselineState(
        base_date=pop.base_period,
        pid=pid, hh_row=hh_row, age=age, person_weight=person_weight,
        status=status, sector_idx=sector_idx, is_worker=is_worker,
        essential=np.array([p.essential_worker for p in persons], dtype=bool),
        home_capable=np.array([p.home_work_capable for p in persons], dtype=bool),
        emp_cents=emp, se_cents=se, cap_cents=cap, pens_cents=pens,
        weekly_earn_cents=weekly_earn, take_home_weekly_cents=take_home_weekly,
        commute_mode=commute_mode, case_band=case_age_band(age),
        cap_band=cap_band, cap_quintile=quintile_p, cap_participant=cap_participant,
        hid=hid, hh_weight=hh_weight,
        tenure_code=np.array([expenses.TENURE_CODES[h.tenure] for h in households]),
        mortgage_cents=np.array([cents(h.mortgage_payment) for h in households]),
        rent_cents=np.array([cents(h.rent) for h in households]),
        adults_14plus=adults_14plus, children_under14=children_u14,
        equiv_scale=np.asarray(scale, dtype=np.float64),
        childcare_weekly_cents=childcare_weekly,
        decile=decile_hh, quintile=quintile_hh,
        residual_store=residual_store,
    )


# -- wave application ------------------------------------------------------------


@dataclass
class WaveResult:
    """Per-wave incomes in integer cents per month, household level, plus
    the person-level states behind them."""

    label: str
    date: dt.date
    # household arrays aligned to BaselineState.hid
    market: np.ndarray
    gross: np.ndarray
    disposable: np.ndarray
    adjusted: np.ndarray
    taxes: np.ndarray
    benefits: np.ndarray
    housing: np.ndarray          # H
    capital_adjustment: np.ndarray  # Q (positive = loss)
    work_expenses: np.ndarray    # C
    # person arrays
    covid_code: np.ndarray
    employed_now: np.ndarray
    home_working: np.ndarray
    person_ids: np.ndarray

    def household_incomes(self) -> dict:
        return {"market": self.market, "gross": self.gross,
                "disposable": self.disposable, "adjusted": self.adjusted}


def _scaled_sector_targets(base: BaselineState, national_counts: dict,
                           national_employment: dict) -> dict:
    """Rescale national recipient stocks to the loaded population by the
    sector worker-weight share of national sector employment."""
    targets = {}
    for sector, count in national_counts.items():
        s = SECTORS.index(sector)
        mask = base.is_worker & (base.sector_idx == s)
        pop_weight = float(np.sum(base.person_weight[mask]))
        targets[sector] = count * pop_weight / national_employment[sector]
    return targets


def _align_units(ids, weights, target: float, seed: int, label: str,
                 unit_weight: float, context: str) -> np.ndarray:
    """Align uniform-odds units to a rescaled (fractional) target.

    A shortfall within one unit-weight is satisfiable by construction
    (|realized - target| <= one unit-weight), so thin strata may legally
    absorb a sub-unit remainder by selecting nobody; anything beyond that
    is an infeasible control total and fails loudly.
    """
    if target <= 0:
        return np.empty(0, dtype=np.int64)
    available = float(np.sum(weights))
    w_max = float(np.max(weights)) if len(weights) else unit_weight
    if target > available + w_max + 1e-9:
        raise AlignmentError(
            f"{context}: target {target:.2f} exceeds the available weight "
            f"{available:.2f} by more than one unit-weight"
        )
    if available == 0.0:
        return np.empty(0, dtype=np.int64)
    probs = np.full(len(ids), 0.5)
    return align_binary(ids, probs, weights, min(target, available), seed, label)


def apply_wave(base: BaselineState, controls: ControlTotals, wave: WavePoint,
               tables: DataTables, schedules: taxben.PolicySchedules, seed: int,
               employer_topup: float = 0.30, capital_booking: str = "amortized") -> WaveResult:
    n = base.pid.size
    n_hh = base.hid.size
    covid = np.zeros(n, dtype=np.int64)
    status_now = base.status.copy()
    emp_now = base.emp_cents.copy()
    se_now = base.se_cents.copy()

    subsidy_scheme = wave.subsidy
    if subsidy_scheme == "auto":
        subsidy_scheme = "twss" if wave.date < schedules.ewss_handover else "ewss"

    unit_weight = float(np.max(base.person_weight))

    # (a) pandemic job losses per sector
    job_lost = np.zeros(n, dtype=bool)
    if controls.pup_by_sector:
        targets = _scaled_sector_targets(base, controls.pup_by_sector,
                                         tables.national["sector_employment"])
        eligible_age = (base.age >= 18) & (base.age <= 66)
        for sector, target in sorted(targets.items()):
            s = SECTORS.index(sector)
            mask = base.is_worker & eligible_age & (base.sector_idx == s)
            chosen = _align_units(base.pid[mask], base.person_weight[mask], target,
                                  seed, f"pup:{sector}", unit_weight,
                                  f"job losses in {sector!r}")
            job_lost[np.isin(base.pid, chosen)] = True
    if wave.pup_on:
        covid[job_lost] = taxben.COVID_CODES["pup_recipient"]
    else:
        status_now[job_lost] = taxben.STATUS_CODES["unemployed"]
    emp_now[job_lost] = 0
    se_now[job_lost] = 0

    # (b) sickness-benefit cases among remaining workers, per age band
    ceib = np.zeros(n, dtype=bool)
    if wave.ceib_on and controls.ceib_cases:
        pop_share = float(np.sum(base.person_weight)) / tables.national["population_total"]
        for (band, in_work), count in sorted(controls.ceib_cases.items()):
            if not in_work:
                continue  # out-of-work cases carry no income change
            mask = base.is_worker & ~job_lost & (base.case_band == band)
            chosen = _align_units(base.pid[mask], base.person_weight[mask],
                                  count * pop_share, seed,
                                  f"ceib:{band}:{wave.date.isoformat()}", unit_weight,
                                  f"sickness cases in age band {band}")
            ceib[np.isin(base.pid, chosen)] = True
    covid[ceib] = taxben.COVID_CODES["ceib_recipient"]
    emp_now[ceib] = 0
    se_now[ceib] = 0

    # (c) wage subsidy among remaining employees, per sector
    subsidised = np.zeros(n, dtype=bool)
    if subsidy_scheme != "none" and controls.subsidy_by_sector:
        gross_weekly = _np_round_div(base.emp_cents, 52)

        def scheme_amount(i: int) -> int:
            if subsidy_scheme == "twss":
                return taxben.twss_subsidy_cents(
                    schedules, int(base.take_home_weekly_cents[i]), wave.date)
            return taxben.ewss_subsidy_cents(schedules, int(gross_weekly[i]), wave.date)

        targets = _scaled_sector_targets(base, controls.subsidy_by_sector,
                                         tables.national["sector_employment"])
        for sector, target in sorted(targets.items()):
            s = SECTORS.index(sector)
            mask = (base.status == taxben.STATUS_CODES["employee"]) & ~job_lost \
                & ~ceib & (base.sector_idx == s)
            # pay bands outside the scheme ("no subsidy applies") are ineligible
            rows = np.flatnonzero(mask)
            eligible = np.array([scheme_amount(int(i)) > 0 for i in rows], dtype=bool) \
                if rows.size else np.empty(0, dtype=bool)
            rows = rows[eligible]
            chosen = _align_units(base.pid[rows], base.person_weight[rows], target,
                                  seed, f"subsidy:{sector}", unit_weight,
                                  f"wage subsidy in {sector!r}")
            subsidised[np.isin(base.pid, chosen)] = True
        covid[subsidised] = taxben.COVID_CODES["wage_subsidised"]
        for i in np.flatnonzero(subsidised):
            amount = scheme_amount(int(i))
            shortfall = max(int(gross_weekly[i]) - amount, 0)
            new_weekly = amount + round_div(
                int(round(employer_topup * 10000)) * shortfall, 10000)
            emp_now[i] = new_weekly * 52

    # (d) home working for non-essential remaining workers
    employed_now = base.is_worker & ~job_lost & ~ceib
    home_working = np.zeros(n, dtype=bool)
    if wave.home_working_on:
        home_working = employed_now & ~base.essential & base.home_capable

    # (e) mortgage deferrals
    deferred = np.zeros(n_hh, dtype=bool)
    if wave.deferrals_on and controls.deferral_count > 0:
        holders = base.tenure_code == expenses.TENURE_CODES["mortgage"]
        holder_weight = float(np.sum(base.hh_weight[holders]))
        target = controls.deferral_count * holder_weight / tables.national["mortgage_count"]
        chosen = _align_units(base.hid[holders], base.hh_weight[holders], target,
                              seed, "deferral", float(np.max(base.hh_weight)),
                              "mortgage deferrals")
        deferred[np.isin(base.hid, chosen)] = True

    # (f) capital value changes
    q_hh = np.zeros(n_hh, dtype=np.int64)
    if wave.capital_on and controls.index_change_factor != 0.0:
        change = expenses.capital_value_change_cents(
            tables.holdings, base.cap_band, base.cap_quintile,
            base.cap_participant, controls.index_change_factor)
        change_hh = np.bincount(base.hh_row, weights=change,
                                minlength=n_hh).astype(np.int64)
        if capital_booking == "once":
            q_hh = -change_hh
        else:
            q_hh = _np_round_div(-change_hh, 12)

    # (g) taxes, benefits, and the four income definitions
    policy = taxben.PolicyState(pup_on=wave.pup_on, ceib_on=wave.ceib_on,
                                subsidy=subsidy_scheme)
    weekly_b = taxben.benefit_weekly_cents(
        status_now, covid, base.weekly_earn_cents, wave.date, policy, schedules)
    taxable = emp_now + np.maximum(se_now, 0) + base.cap_cents + base.pens_cents
    person_tax = taxben.income_tax_cents(taxable, schedules.tax)
    b_hh = np.bincount(base.hh_row, weights=_np_round_div(weekly_b * 52, 12),
                       minlength=n_hh).astype(np.int64)
    t_hh = np.bincount(base.hh_row, weights=_np_round_div(person_tax, 12),
                       minlength=n_hh).astype(np.int64)
    market_p = _np_round_div(emp_now + se_now + base.cap_cents + base.pens_cents, 12)
    market_hh = np.bincount(base.hh_row, weights=market_p, minlength=n_hh).astype(np.int64)

    h_hh = expenses.housing_cost_cents(base.tenure_code, base.mortgage_cents,
                                       base.rent_cents, deferred)

    commuting_active = employed_now & ~home_working
    n_private = np.bincount(base.hh_row[commuting_active
                                        & (base.commute_mode == expenses.MODE_PRIVATE)],
                            minlength=n_hh)
    n_public = np.bincount(base.hh_row[commuting_active
                                       & (base.commute_mode == expenses.MODE_PUBLIC)],
                           minlength=n_hh)
    commuting_weekly = np.array(
        [expenses.commuting_cost_cents(tables.commute, int(a), int(b))
         for a, b in zip(n_private, n_public)], dtype=np.int64)

    childcare_weekly = base.childcare_weekly_cents.copy()
    if wave.childcare_support:
        childcare_weekly[:] = 0
    else:
        someone_home = (job_lost | ceib | home_working)
        home_hh = np.bincount(base.hh_row[someone_home], minlength=n_hh) > 0
        childcare_weekly[home_hh] = 0

    c_hh = _np_round_div((commuting_weekly + childcare_weekly) * 52, 12)

    gross_hh = market_hh + b_hh
    disposable_hh = gross_hh - t_hh
    adjusted_hh = disposable_hh - h_hh - q_hh - c_hh

    return WaveResult(
        label=wave.label, date=wave.date,
        market=market_hh, gross=gross_hh, disposable=disposable_hh,
        adjusted=adjusted_hh, taxes=t_hh, benefits=b_hh,
        housing=h_hh.astype(np.int64), capital_adjustment=q_hh,
        work_expenses=c_hh, covid_code=covid, employed_now=employed_now,
        home_working=home_working, person_ids=base.pid,
    )


# -- comparison and summaries ------------------------------------------------------


@dataclass
class DistributionDelta:
    """Counterfactual-minus-base deltas per income definition."""

    mean_delta: dict
    gini_delta: dict
    decile_mean_delta: dict


def person_equivalized(base: BaselineState, result: WaveResult) -> dict:
    """Person-level equivalised EUR/month for the four definitions."""
    out = {}
    for name, values in result.household_incomes().items():
        out[name] = (values / 100.0 / base.equiv_scale)[base.hh_row]
    return out


def compare(base_state: BaselineState, base_result: WaveResult,
            cf_result: WaveResult) -> DistributionDelta:
    if not np.array_equal(base_result.person_ids, cf_result.person_ids):
        raise ScenarioError("cannot compare results over different person sets")
    ranking = base_state.ranking_equiv_adjusted
    if ranking is None:
        ranking = person_equivalized(base_state, base_result)["adjusted"]
    w = base_state.person_weight
    a = person_equivalized(base_state, base_result)
    b = person_equivalized(base_state, cf_result)
    mean_delta, gini_delta, decile_delta = {}, {}, {}
    da = metrics.decile_means(a, w, ranking, ids=base_state.pid)
    db = metrics.decile_means(b, w, ranking, ids=base_state.pid)
    for name in metrics.INCOME_DEFINITIONS:
        mean_delta[name] = float(np.sum((b[name] - a[name]) * w) / np.sum(w))
        gini_delta[name] = metrics.weighted_gini(b[name], w) - metrics.weighted_gini(a[name], w)
        decile_delta[name] = db[name] - da[name]
    return DistributionDelta(mean_delta=mean_delta, gini_delta=gini_delta,
                             decile_mean_delta=decile_delta)


def run_scenario(pop: Population, scenario: Scenario, tables: DataTables,
                 schedules: taxben.PolicySchedules, seed: int,
                 threads: int = 1):
    """Run every wave; returns (BaselineState, [WaveResult], [DistributionSummary]).

    The first wave (by date) anchors the decile ranking: persons are ranked
    by its equivalised adjusted disposable income, and that ranking is held
    fixed for every wave's decile table.
    """
    series = load_control_totals(scenario.controls_path)
    first = scenario.waves[0]
    pop = nowcast_baseline(pop, series.at(first.date), seed)
    base = build_baseline(pop, tables, schedules, seed)

    def run_wave(wave: WavePoint) -> WaveResult:
        return apply_wave(base, series.at(wave.date), wave, tables, schedules,
                          seed, employer_topup=scenario.employer_topup,
                          capital_booking=scenario.capital_booking)

    before = run_wave(first)
    base.ranking_equiv_adjusted = person_equivalized(base, before)["adjusted"]
    rest = scenario.waves[1:]
    if threads > 1 and rest:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            others = list(pool.map(run_wave, rest))
    else:
        others = [run_wave(w) for w in rest]
    results = [before] + others

    summaries = [
        metrics.summarize(r.label, person_equivalized(base, r), base.person_weight,
                          base.ranking_equiv_adjusted, ids=base.pid)
        for r in results
    ]
    return base, results, summaries
