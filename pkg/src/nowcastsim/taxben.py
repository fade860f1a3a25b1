"""Taxes, baseline benefits, and the dated pandemic income-support
instruments (PUP, CEIB, TWSS, EWSS).

All money arithmetic is in integer cents so schedule lookups are bit-exact.
Schedules are data, loaded from a policy directory with one row per
(scheme, effective_from, band_lower, value); bands are inclusive of their
lower bound and regimes partition the scheme life from their first date.

Interpretation notes (the published wording leaves gaps; every choice
below ships as overridable data, see the README):

* The June 29 2020 pay-related structure is encoded as <200 -> 203,
  200-300 -> 250, >=300 -> 300.
* The October 16 2020 structure leaves 300-400 unstated; it is encoded as
  300, consistent with the adjacent regimes.
* The February 2021 reversion pays 250 from exactly 300 up (band lower
  bounds are inclusive everywhere).
* The TWSS tier above 586 is encoded as flat 350 up to 960 and a linear
  taper to 0 at 1,462.
* TWSS/EWSS amounts are part of taxable pay; PUP/CEIB are untaxed
  within-year.
"""
from __future__ import annotations

import bisect
import csv
import datetime as dt
import os
from dataclasses import dataclass

import numpy as np

from .money import annual_to_monthly, cents, round_div, weekly_to_monthly

TWSS_START = dt.date(2020, 3, 13)
PUP_START = dt.date(2020, 3, 13)
# Handover from the temporary to the employment wage subsidy scheme.
EWSS_HANDOVER = dt.date(2020, 9, 1)


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class Band:
    lower_cents: int
    kind: str            # flat | rate | taper
    value_cents: int = 0  # flat amount, or taper start amount
    rate: float = 0.0
    cap_cents: int = 0    # 0 = uncapped
    taper_end_cents: int = 0


@dataclass(frozen=True)
class Regime:
    effective_from: dt.date
    bands: tuple

    def band_for(self, amount_cents: int) -> Band:
        lowers = [b.lower_cents for b in self.bands]
        i = bisect.bisect_right(lowers, max(amount_cents, 0)) - 1
        return self.bands[max(i, 0)]


@dataclass(frozen=True)
class Schedule:
    """Date-ordered regimes of banded payment rules for one scheme."""

    scheme: str
    regimes: tuple

    def regime_at(self, date: dt.date) -> Regime:
        dates = [r.effective_from for r in self.regimes]
        i = bisect.bisect_right(dates, date) - 1
        if i < 0:
            raise PolicyError(
                f"{self.scheme}: no regime in force on {date} "
                f"(scheme starts {dates[0]})"
            )
        return self.regimes[i]


def _eval_band(band: Band, amount_cents: int) -> int:
    if band.kind == "flat":
        return band.value_cents
    if band.kind == "rate":
        pay = round_div(int(round(band.rate * 10000)) * amount_cents, 10000)
        if band.cap_cents:
            pay = min(pay, band.cap_cents)
        return pay
    if band.kind == "taper":
        span = band.taper_end_cents - band.lower_cents
        remaining = max(band.taper_end_cents - amount_cents, 0)
        return round_div(band.value_cents * remaining, span)
    raise PolicyError(f"unknown band kind {band.kind!r}")


def _parse_band_value(text: str, lower_cents: int, where: str) -> Band:
    text = text.strip()
    try:
        if text.startswith("taper:"):
            _, start, end = text.split(":")
            return Band(lower_cents, "taper", value_cents=cents(float(start)),
                        taper_end_cents=cents(float(end)))
        if "%" in text:
            rate_part, _, cap_part = text.partition("%")
            rate = float(rate_part) / 100.0
            cap = 0
            if cap_part:
                if not cap_part.startswith("max"):
                    raise ValueError(cap_part)
                cap = cents(float(cap_part[3:]))
            return Band(lower_cents, "rate", rate=rate, cap_cents=cap)
        return Band(lower_cents, "flat", value_cents=cents(float(text)))
    except ValueError as exc:
        raise PolicyError(f"{where}: bad band value {text!r}") from exc


def load_schedule(path, scheme: str) -> Schedule:
    """Load one scheme's banded regimes from a 4-column schedule file."""
    by_date = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"scheme", "effective_from", "band_lower", "value"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise PolicyError(f"{path}: expected columns {sorted(required)}")
        for lineno, rec in enumerate(reader, start=2):
            where = f"{os.path.basename(path)}:{lineno}"
            if rec["scheme"].strip() != scheme:
                raise PolicyError(f"{where}: expected scheme {scheme!r}")
            try:
                eff = dt.date.fromisoformat(rec["effective_from"].strip())
                lower = cents(float(rec["band_lower"]))
            except ValueError as exc:
                raise PolicyError(f"{where}: bad date or band_lower") from exc
            band = _parse_band_value(rec["value"], lower, where)
            by_date.setdefault(eff, []).append(band)

    regimes = []
    for eff in sorted(by_date):
        bands = sorted(by_date[eff], key=lambda b: b.lower_cents)
        lowers = [b.lower_cents for b in bands]
        if len(set(lowers)) != len(lowers):
            raise PolicyError(f"{path}: duplicate band lower bound in regime {eff}")
        regimes.append(Regime(effective_from=eff, bands=tuple(bands)))
    if not regimes:
        raise PolicyError(f"{path}: no schedule rows")
    return Schedule(scheme=scheme, regimes=tuple(regimes))


@dataclass(frozen=True)
class TaxSystem:
    """Simplified parametric baseline system: progressive bands, a credit,
    flat social insurance above a floor, and weekly benefit rates."""

    band_thresholds_cents: tuple   # ascending, first must be 0 (annual)
    band_rates: tuple
    credit_cents: int              # annual, non-refundable
    si_rate: float
    si_floor_cents: int            # annual
    unemployment_weekly_cents: int
    pension_weekly_cents: int

    def __post_init__(self):
        t = self.band_thresholds_cents
        if not t or t[0] != 0 or list(t) != sorted(set(t)):
            raise PolicyError("tax bands need ascending thresholds starting at 0")
        if any(not 0.0 <= r <= 1.0 for r in self.band_rates):
            raise PolicyError("tax rates must lie in [0, 1]")
        if len(self.band_rates) != len(t):
            raise PolicyError("one rate per band threshold required")


def load_tax_system(path) -> TaxSystem:
    bands = []
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise PolicyError(f"{os.path.basename(path)}:{lineno}: expected key = value")
            key, value = (tok.strip() for tok in line.split("=", 1))
            if key == "band":
                threshold, _, rate = value.partition(":")
                bands.append((cents(float(threshold)), float(rate)))
            else:
                values[key] = value
    bands.sort()
    try:
        return TaxSystem(
            band_thresholds_cents=tuple(b[0] for b in bands),
            band_rates=tuple(b[1] for b in bands),
            credit_cents=cents(float(values["credit"])),
            si_rate=float(values["si_rate"]),
            si_floor_cents=cents(float(values["si_floor"])),
            unemployment_weekly_cents=cents(float(values["unemployment_rate_weekly"])),
            pension_weekly_cents=cents(float(values["pension_rate_weekly"])),
        )
    except KeyError as exc:
        raise PolicyError(f"{path}: missing key {exc.args[0]!r}") from exc


@dataclass(frozen=True)
class PolicySchedules:
    pup: Schedule
    twss: Schedule
    ewss: Schedule
    tax: TaxSystem
    ewss_handover: dt.date = EWSS_HANDOVER


def load_policy(policy_dir) -> PolicySchedules:
    return PolicySchedules(
        pup=load_schedule(os.path.join(policy_dir, "pup.csv"), "pup"),
        twss=load_schedule(os.path.join(policy_dir, "twss.csv"), "twss"),
        ewss=load_schedule(os.path.join(policy_dir, "ewss.csv"), "ewss"),
        tax=load_tax_system(os.path.join(policy_dir, "tax_system.cfg")),
    )


def pup_rate_cents(schedules: PolicySchedules, prev_weekly_cents: int, date: dt.date) -> int:
    """Weekly pandemic unemployment payment for previous earnings at date."""
    if prev_weekly_cents < 0:
        raise PolicyError("previous earnings must be >= 0")
    regime = schedules.pup.regime_at(date)
    return _eval_band(regime.band_for(prev_weekly_cents), prev_weekly_cents)


def ceib_rate_cents(schedules: PolicySchedules, date: dt.date) -> int:
    """Enhanced illness benefit: the top PUP band payment in force at date.

    The earnings-banded rate is used instead when previous earnings are
    known (see household benefit computation below)."""
    regime = schedules.pup.regime_at(date)
    return max(_eval_band(b, b.lower_cents) for b in regime.bands)


def twss_subsidy_cents(schedules: PolicySchedules, avg_take_home_weekly_cents: int,
                       date: dt.date) -> int:
    """Temporary wage subsidy on average weekly take-home pay."""
    if not TWSS_START <= date < schedules.ewss_handover:
        raise PolicyError(
            f"twss not in force on {date} (life {TWSS_START} to {schedules.ewss_handover})"
        )
    regime = schedules.twss.regime_at(date)
    return _eval_band(regime.band_for(avg_take_home_weekly_cents),
                      avg_take_home_weekly_cents)


def ewss_subsidy_cents(schedules: PolicySchedules, gross_weekly_cents: int,
                       date: dt.date) -> int:
    """Employment wage subsidy: exact band lookup on gross weekly pay."""
    first = schedules.ewss.regimes[0].effective_from
    if date < first:
        raise PolicyError(f"ewss rates start {first}, got {date}")
    regime = schedules.ewss.regime_at(date)
    return _eval_band(regime.band_for(gross_weekly_cents), gross_weekly_cents)


def income_tax_cents(taxable_annual_cents, system: TaxSystem):
    """Band tax net of credits (floored at 0) plus social insurance on
    income above the floor. Accepts an int or an int64 array."""
    taxable = np.asarray(taxable_annual_cents, dtype=np.int64)
    thresholds = list(system.band_thresholds_cents) + [None]
    band_tax = np.zeros(taxable.shape, dtype=np.float64)
    for i, rate in enumerate(system.band_rates):
        lo = thresholds[i]
        hi = thresholds[i + 1]
        span = np.clip(taxable - lo, 0, None) if hi is None else \
            np.clip(np.minimum(taxable, hi) - lo, 0, None)
        band_tax += rate * span
    gross_tax = np.maximum(np.rint(band_tax).astype(np.int64) - system.credit_cents, 0)
    si = np.rint(system.si_rate * np.clip(taxable - system.si_floor_cents, 0, None))
    total = gross_tax + si.astype(np.int64)
    if total.ndim == 0:
        return int(total)
    return total


# work_status / covid_state integer codes used on the vectorised path
STATUS_CODES = {"employee": 0, "self-employed": 1, "unemployed": 2, "retired": 3,
                "inactive": 4, "student": 5, "child": 6}
COVID_CODES = {"none": 0, "pup_recipient": 1, "ceib_recipient": 2, "wage_subsidised": 3}


@dataclass(frozen=True)
class PolicyState:
    """Which pandemic instruments are switched on for a wave."""

    pup_on: bool = False
    ceib_on: bool = False
    subsidy: str = "none"  # none | twss | ewss


def benefit_weekly_cents(status_code, covid_code, prev_weekly_cents,
                         date: dt.date, policy: PolicyState,
                         schedules: PolicySchedules) -> np.ndarray:
    """Per-person weekly benefit under a policy state (vectorised).

    PUP and CEIB recipients get the earnings-banded pandemic rate; with the
    instrument switched off they fall back to the ordinary unemployment
    rate, so disabling every instrument reproduces the baseline benefit
    rules. Unemployed persons get the baseline unemployment rate; retired
    persons the baseline pension.
    """
    status = np.asarray(status_code, dtype=np.int64)
    covid = np.asarray(covid_code, dtype=np.int64)
    prev = np.asarray(prev_weekly_cents, dtype=np.int64)
    out = np.zeros(status.shape, dtype=np.int64)
    out[status == STATUS_CODES["unemployed"]] = schedules.tax.unemployment_weekly_cents
    out[status == STATUS_CODES["retired"]] = schedules.tax.pension_weekly_cents

    pup_mask = covid == COVID_CODES["pup_recipient"]
    ceib_mask = covid == COVID_CODES["ceib_recipient"]
    for mask, on in ((pup_mask, policy.pup_on), (ceib_mask, policy.ceib_on)):
        if not np.any(mask):
            continue
        if on:
            rates = np.fromiter(
                (pup_rate_cents(schedules, int(c), date) for c in prev[mask]),
                dtype=np.int64, count=int(mask.sum()),
            )
            out[mask] = rates
        else:
            out[mask] = schedules.tax.unemployment_weekly_cents
    return out


def household_T_and_B(household, persons, date: dt.date, policy: PolicyState,
                      schedules: PolicySchedules,
                      baseline_weekly_cents=None) -> tuple:
    """Monthly household taxes T and benefits B in cents.

    `persons` carry the scenario-state incomes and covid states; PUP/CEIB
    banding uses `baseline_weekly_cents` (person_id -> pre-shock weekly
    earnings in cents) and falls back to current earnings when absent.
    """
    status = np.array([STATUS_CODES[p.work_status] for p in persons], dtype=np.int64)
    covid = np.array([COVID_CODES[p.covid_state] for p in persons], dtype=np.int64)
    prev = np.array(
        [
            (baseline_weekly_cents or {}).get(
                p.person_id,
                round_div(cents(p.employment_income + max(p.self_employment_income, 0.0)), 52),
            )
            for p in persons
        ],
        dtype=np.int64,
    )
    weekly_b = benefit_weekly_cents(status, covid, prev, date, policy, schedules)
    b_month = int(sum(weekly_to_monthly(int(b)) for b in weekly_b))

    taxable = np.array(
        [
            cents(p.employment_income) + max(cents(p.self_employment_income), 0)
            + cents(p.capital_income) + cents(p.private_pension)
            for p in persons
        ],
        dtype=np.int64,
    )
    taxes = income_tax_cents(taxable, schedules.tax)
    t_month = int(sum(annual_to_monthly(int(t)) for t in np.atleast_1d(taxes)))
    return t_month, b_month
