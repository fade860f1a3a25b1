import datetime as dt

import numpy as np
import pytest

from nowcastsim import taxben
from nowcastsim.calibration import AlignmentError
from nowcastsim.population import SECTORS
from nowcastsim.scenario import (ControlError, ControlTotals,
                                 ScenarioError, WavePoint, apply_wave,
                                 build_baseline, compare, load_control_totals,
                                 nowcast_baseline, parse_scenario,
                                 person_equivalized, run_scenario)

D = dt.date
ACCOM = "accommodation and food service activities"
CONSTRUCTION = "construction"


def null_wave(label="before", date=D(2019, 12, 1)):
    return WavePoint(label=label, date=date)


def crisis_wave(date=D(2020, 5, 5), **overrides):
    fields = dict(label=date.isoformat(), date=date, pup_on=True, ceib_on=True,
                  subsidy="auto", childcare_support=True, deferrals_on=True,
                  capital_on=True, home_working_on=True)
    fields.update(overrides)
    return WavePoint(**fields)


@pytest.fixture(scope="module")
def base(small_pop, tables, schedules):
    return build_baseline(small_pop, tables, schedules, seed=7)


@pytest.fixture(scope="module")
def shipped_controls(default_scenario):
    return load_control_totals(default_scenario.controls_path)


class TestControlLoading:
    def test_shipped_file_parses(self, shipped_controls):
        wave1 = shipped_controls.at(D(2020, 5, 5))
        assert wave1.pup_by_sector[ACCOM] == 128500
        assert wave1.index_change_factor == pytest.approx(-0.3532)
        assert wave1.ceib_cases[("25-34", True)] > 0

    def test_unknown_sector_is_named(self, tmp_path):
        path = tmp_path / "controls.csv"
        path.write_text("stratum_key,date,target\npup:space mining,2020-05-05,10\n")
        with pytest.raises(ControlError, match="space mining"):
            load_control_totals(path)

    def test_unknown_stratum_key_rejected(self, tmp_path):
        path = tmp_path / "controls.csv"
        path.write_text("stratum_key,date,target\nfrobnicate,2020-05-05,10\n")
        with pytest.raises(ControlError):
            load_control_totals(path)

    def test_deferral_interpolation(self, shipped_controls):
        # linear between the March 28 (28000) and April 12 (45000) points
        series = shipped_controls
        assert series.deferrals_at(D(2020, 3, 28)) == 28000
        assert series.deferrals_at(D(2020, 4, 12)) == 45000
        mid = series.deferrals_at(D(2020, 4, 4))
        assert 28000 < mid < 45000
        # flat beyond the last observation, zero before the scheme
        assert series.deferrals_at(D(2021, 1, 26)) == 90539
        assert series.deferrals_at(D(2020, 1, 1)) == 0.0

    def test_missing_date_yields_null_controls(self, shipped_controls):
        empty = shipped_controls.at(D(2019, 12, 1))
        assert empty.pup_by_sector == {}
        assert empty.index_change_factor == 0.0


class TestScenarioFile:
    def test_shipped_scenario(self, default_scenario):
        labels = [w.label for w in default_scenario.waves]
        assert labels[0] == "before"
        assert len(labels) == 7
        assert default_scenario.waves[1].pup_on is True
        assert default_scenario.waves[0].pup_on is False
        dates = [w.date for w in default_scenario.waves]
        assert dates == sorted(dates)

    def test_bad_subsidy_value(self, tmp_path):
        path = tmp_path / "s.cfg"
        path.write_text("[scenario]\ncontrols=c.csv\n[wave:a]\ndate=2020-05-05\n"
                        "subsidy=moon\n")
        with pytest.raises(ScenarioError):
            parse_scenario(path)

    def test_wave_needs_date(self, tmp_path):
        path = tmp_path / "s.cfg"
        path.write_text("[scenario]\n[wave:a]\npup=on\n")
        with pytest.raises(ScenarioError):
            parse_scenario(path)


class TestNowcastBaseline:
    def test_no_targets_is_identity(self, small_pop):
        out = nowcast_baseline(small_pop, ControlTotals(date=D(2019, 12, 1)), seed=7)
        assert out.persons == small_pop.persons

    def test_observed_rates_are_a_fixed_point(self, small_pop):
        bands = {}
        from nowcastsim.scenario import case_age_band
        group = case_age_band([p.age for p in small_pop.persons])
        weights = {h.household_id: h.weight for h in small_pop.households}
        for band in ("25-34", "35-44", "45-54"):
            idx = [i for i, p in enumerate(small_pop.persons)
                   if group[i] == band and p.age >= 16]
            w = np.array([weights[small_pop.persons[i].household_id] for i in idx])
            worker = np.array([small_pop.persons[i].is_worker for i in idx])
            bands[band] = float(w[worker].sum() / w.sum())
        controls = ControlTotals(date=D(2019, 12, 1), employment_rate_by_age=bands)
        out = nowcast_baseline(small_pop, controls, seed=7)
        assert out.persons == small_pop.persons

    def test_higher_target_hits_rate_within_one_unit(self, small_pop):
        from nowcastsim.scenario import case_age_band
        group = case_age_band([p.age for p in small_pop.persons])
        weights = {h.household_id: h.weight for h in small_pop.households}
        band = "35-44"
        idx = [i for i, p in enumerate(small_pop.persons)
               if group[i] == band and p.age >= 16]
        w = np.array([weights[small_pop.persons[i].household_id] for i in idx])
        worker = np.array([small_pop.persons[i].is_worker for i in idx])
        rate0 = float(w[worker].sum() / w.sum())
        target = min(rate0 + 0.05, 0.99)
        controls = ControlTotals(date=D(2019, 12, 1),
                                 employment_rate_by_age={band: target})
        out = nowcast_baseline(small_pop, controls, seed=7)
        worker_now = np.array([out.persons[i].is_worker for i in idx])
        realized = float(w[worker_now].sum() / w.sum())
        assert abs(realized - target) <= w.max() / w.sum()
        violations = __import__("nowcastsim.population", fromlist=["validate"]) \
            .validate(out.households, out.persons)
        assert violations == []

    def test_wage_index_scales_mean(self, small_pop):
        controls = ControlTotals(date=D(2019, 12, 1), wage_index=1.02)
        out = nowcast_baseline(small_pop, controls, seed=7)
        weights = {h.household_id: h.weight for h in small_pop.households}

        def mean(pop):
            pairs = [(p.employment_income, weights[p.household_id])
                     for p in pop.persons if p.work_status == "employee"]
            v = np.array([a for a, _ in pairs])
            w = np.array([b for _, b in pairs])
            return float((v * w).sum() / w.sum())

        assert mean(out) == pytest.approx(1.02 * mean(small_pop), rel=1e-9)


class TestApplyWave:
    def test_null_wave_is_fixed_point(self, base, tables, schedules):
        controls = ControlTotals(date=D(2019, 12, 1))
        a = apply_wave(base, controls, null_wave(), tables, schedules, seed=7)
        b = apply_wave(base, controls, null_wave(), tables, schedules, seed=7)
        for name in ("market", "gross", "disposable", "adjusted", "taxes",
                     "benefits", "housing", "capital_adjustment", "work_expenses"):
            assert np.array_equal(getattr(a, name), getattr(b, name))
        assert np.all(a.covid_code == 0)
        assert np.all(a.capital_adjustment == 0)

    def test_identity_every_wave(self, base, tables, schedules, shipped_controls,
                                 default_scenario):
        for wave in default_scenario.waves:
            r = apply_wave(base, shipped_controls.at(wave.date), wave, tables,
                           schedules, seed=7)
            assert np.array_equal(
                r.adjusted, r.disposable - r.housing - r.capital_adjustment
                - r.work_expenses)

    def test_pup_counts_match_scaled_targets(self, base, tables, schedules,
                                             shipped_controls):
        wave = crisis_wave()
        controls = shipped_controls.at(wave.date)
        r = apply_wave(base, controls, wave, tables, schedules, seed=7)
        pup_code = taxben.COVID_CODES["pup_recipient"]
        for sector, count in controls.pup_by_sector.items():
            s = SECTORS.index(sector)
            mask = base.is_worker & (base.sector_idx == s)
            pop_weight = float(base.person_weight[mask].sum())
            target = count * pop_weight / tables.national["sector_employment"][sector]
            realized = float(base.person_weight[(r.covid_code == pup_code)
                                                & (base.sector_idx == s)].sum())
            assert abs(realized - target) <= base.person_weight.max() + 1e-9

    def test_recipients_lose_earnings_and_gain_banded_rate(self, base, tables,
                                                           schedules, shipped_controls):
        wave = crisis_wave(date=D(2020, 11, 15))
        r = apply_wave(base, shipped_controls.at(wave.date), wave, tables,
                       schedules, seed=7)
        recipients = r.covid_code == taxben.COVID_CODES["pup_recipient"]
        assert recipients.any()
        rates = np.array([
            taxben.pup_rate_cents(schedules, int(c), wave.date)
            for c in base.weekly_earn_cents[recipients]
        ])
        assert set(rates.tolist()) <= {20300, 25000, 30000, 35000}
        # recompute household benefits from person states and compare
        expected_weekly = np.zeros(base.pid.size, dtype=np.int64)
        expected_weekly[recipients] = rates
        ceib = r.covid_code == taxben.COVID_CODES["ceib_recipient"]
        expected_weekly[ceib] = [
            taxben.pup_rate_cents(schedules, int(c), wave.date)
            for c in base.weekly_earn_cents[ceib]
        ]
        baseline_unemployed = base.status == taxben.STATUS_CODES["unemployed"]
        expected_weekly[baseline_unemployed & (r.covid_code == 0)] = \
            schedules.tax.unemployment_weekly_cents
        retired = base.status == taxben.STATUS_CODES["retired"]
        expected_weekly[retired] = schedules.tax.pension_weekly_cents
        from nowcastsim.scenario import _np_round_div
        expected_b = np.bincount(
            base.hh_row, weights=_np_round_div(expected_weekly * 52, 12),
            minlength=base.hid.size).astype(np.int64)
        assert np.array_equal(expected_b, r.benefits)

    def test_switch_off_identity(self, base, tables, schedules, shipped_controls):
        wave = crisis_wave(pup_on=False, ceib_on=False, subsidy="none",
                           childcare_support=False, deferrals_on=False,
                           capital_on=False, home_working_on=False)
        r = apply_wave(base, shipped_controls.at(wave.date), wave, tables,
                       schedules, seed=7)
        assert np.all(r.covid_code == 0)
        assert np.array_equal(r.disposable, r.market - r.taxes + r.benefits)
        # benefits reduce to the baseline rules: job losers draw the ordinary
        # unemployment rate
        job_lost = ~r.employed_now & base.is_worker
        assert job_lost.any()
        lost_rows = base.hh_row[job_lost]
        assert np.all(r.benefits[lost_rows] > 0)
        assert np.all(r.capital_adjustment == 0)
        baseline = apply_wave(base, ControlTotals(date=wave.date), null_wave(
            label="null", date=wave.date), tables, schedules, seed=7)
        assert float(r.market.sum()) < float(baseline.market.sum())

    def test_monotone_burden_in_pup_count(self, base, tables, schedules,
                                          shipped_controls):
        wave = crisis_wave()
        controls = shipped_controls.at(wave.date)
        market_totals = []
        for factor in (0.5, 1.0):
            scaled = ControlTotals(
                date=controls.date,
                pup_by_sector={k: v * factor for k, v in controls.pup_by_sector.items()},
            )
            r = apply_wave(base, scaled, wave, tables, schedules, seed=7)
            market_totals.append(float((r.market * base.hh_weight).sum()))
        assert market_totals[1] <= market_totals[0]

    def test_infeasible_sector_raises(self, base, tables, schedules):
        count = tables.national["sector_employment"][CONSTRUCTION] * 2.0
        controls = ControlTotals(date=D(2020, 5, 5),
                                 pup_by_sector={CONSTRUCTION: count})
        with pytest.raises(AlignmentError):
            apply_wave(base, controls, crisis_wave(), tables, schedules, seed=7)

    def test_home_working_and_support_zero_expenses(self, base, tables, schedules,
                                                    shipped_controls):
        wave = crisis_wave(childcare_support=False)
        r = apply_wave(base, shipped_controls.at(wave.date), wave, tables,
                       schedules, seed=7)
        null = apply_wave(base, ControlTotals(date=wave.date),
                          null_wave(label="n", date=wave.date), tables,
                          schedules, seed=7)
        assert float(r.work_expenses.sum()) < float(null.work_expenses.sum())
        # households where someone newly stays home (benefit recipients and
        # home workers, not the still-working subsidised) pay no childcare,
        # so their work expenses cannot exceed the largest commuting bill
        from nowcastsim.money import weekly_to_monthly
        recipients = np.isin(r.covid_code, [taxben.COVID_CODES["pup_recipient"],
                                            taxben.COVID_CODES["ceib_recipient"]])
        stays_home = recipients | r.home_working
        home_hh = np.unique(base.hh_row[stays_home])
        max_commuting = weekly_to_monthly(
            tables.commute.motor_fuels_cents[3] + tables.commute.public_transport_cents[3])
        assert np.all(r.work_expenses[home_hh] <= max_commuting)

    def test_childcare_support_switch_zeroes_all_childcare(self, base, tables,
                                                           schedules, shipped_controls):
        wave = crisis_wave(childcare_support=True)
        with_support = apply_wave(base, shipped_controls.at(wave.date), wave,
                                  tables, schedules, seed=7)
        without = apply_wave(base, shipped_controls.at(wave.date),
                             crisis_wave(childcare_support=False), tables,
                             schedules, seed=7)
        assert float(with_support.work_expenses.sum()) <= \
            float(without.work_expenses.sum())
        payers = base.childcare_weekly_cents > 0
        assert payers.any()


class TestCompare:
    def test_self_comparison_is_zero(self, base, tables, schedules):
        r = apply_wave(base, ControlTotals(date=D(2019, 12, 1)), null_wave(),
                       tables, schedules, seed=7)
        delta = compare(base, r, r)
        for name in ("market", "gross", "disposable", "adjusted"):
            assert delta.mean_delta[name] == 0.0
            assert delta.gini_delta[name] == 0.0
            assert np.all(delta.decile_mean_delta[name] == 0.0)

    def test_person_set_mismatch_rejected(self, base, tables, schedules):
        r = apply_wave(base, ControlTotals(date=D(2019, 12, 1)), null_wave(),
                       tables, schedules, seed=7)
        import dataclasses
        clipped = dataclasses.replace(r, person_ids=r.person_ids[:-1])
        with pytest.raises(ScenarioError):
            compare(base, r, clipped)

    def test_instruments_on_vs_off_gini(self, base, tables, schedules,
                                        shipped_controls):
        date = D(2020, 5, 5)
        controls = shipped_controls.at(date)
        before = apply_wave(base, ControlTotals(date=date),
                            null_wave(label="b", date=date), tables, schedules, seed=7)
        on = apply_wave(base, controls, crisis_wave(), tables, schedules, seed=7)
        off = apply_wave(base, controls,
                         crisis_wave(pup_on=False, ceib_on=False, subsidy="none"),
                         tables, schedules, seed=7)
        d_on = compare(base, before, on)
        d_off = compare(base, before, off)
        assert d_on.gini_delta["market"] > 0
        assert d_on.gini_delta["disposable"] < d_off.gini_delta["disposable"]


class TestRunScenario:
    def test_end_to_end_and_thread_determinism(self, small_pop, tables, schedules,
                                               default_scenario):
        base1, results1, summaries1 = run_scenario(
            small_pop, default_scenario, tables, schedules, seed=42, threads=1)
        base3, results3, summaries3 = run_scenario(
            small_pop, default_scenario, tables, schedules, seed=42, threads=3)
        assert [r.label for r in results1] == [w.label for w in default_scenario.waves]
        for a, b in zip(results1, results3):
            assert np.array_equal(a.adjusted, b.adjusted)
            assert np.array_equal(a.market, b.market)
        for a, b in zip(summaries1, summaries3):
            assert a.gini == b.gini and a.means == b.means
        # decile means of the ranking definition rise with the decile index
        # in the ranking wave itself
        before = summaries1[0].decile_means["adjusted"]
        assert np.all(np.diff(before) >= 0)

    def test_null_scenario_constant_across_waves(self, small_pop, tables, schedules,
                                                 tmp_path, default_scenario):
        controls = tmp_path / "controls.csv"
        controls.write_text("stratum_key,date,target\n")
        cfg = tmp_path / "scenario.cfg"
        cfg.write_text(
            "[scenario]\ncontrols = controls.csv\nseed = 1\n"
            "[wave:before]\ndate = 2019-12-01\n"
            "[wave:later]\ndate = 2020-05-05\n"
        )
        plan = parse_scenario(cfg)
        _, results, summaries = run_scenario(small_pop, plan, tables, schedules,
                                             seed=1)
        assert np.array_equal(results[0].adjusted, results[1].adjusted)
        assert summaries[0].gini == summaries[1].gini

    def test_equivalised_values_positive(self, small_pop, tables, schedules,
                                         default_scenario):
        base, results, _ = run_scenario(small_pop, default_scenario, tables,
                                        schedules, seed=3)
        values = person_equivalized(base, results[0])
        assert set(values) == {"market", "gross", "disposable", "adjusted"}
        assert values["gross"].mean() > 0


class TestWeightedPopulation:
    def test_weighted_pipeline_contracts(self, tables, schedules, default_scenario):
        from nowcastsim.population import SynthConfig, generate_synthetic
        pop = generate_synthetic(SynthConfig(households=1500, weight_jitter=True), 13)
        _, results, summaries = run_scenario(pop, default_scenario, tables,
                                             schedules, seed=13)
        state = build_baseline(pop, tables, schedules, seed=13)
        series = load_control_totals(default_scenario.controls_path)
        wave = default_scenario.waves[1]
        controls = series.at(wave.date)
        r = apply_wave(state, controls, wave, tables, schedules, seed=13)
        assert np.array_equal(
            r.adjusted, r.disposable - r.housing - r.capital_adjustment
            - r.work_expenses)
        pup = r.covid_code == taxben.COVID_CODES["pup_recipient"]
        w_max = state.person_weight.max()
        for sector, count in controls.pup_by_sector.items():
            s = SECTORS.index(sector)
            mask = state.is_worker & (state.sector_idx == s)
            scale = state.person_weight[mask].sum() \
                / tables.national["sector_employment"][sector]
            realized = state.person_weight[pup & (state.sector_idx == s)].sum()
            assert abs(realized - count * scale) <= w_max + 1e-9
        for s in summaries:
            assert 0.0 < s.gini["disposable"] < 1.0
