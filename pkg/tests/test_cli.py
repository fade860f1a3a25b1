import filecmp
import os


from nowcastsim.cli import main
from nowcastsim.population import SynthConfig, generate_synthetic, save_population


def read_dir(path):
    out = {}
    for name in sorted(os.listdir(path)):
        with open(os.path.join(path, name), "rb") as fh:
            out[name] = fh.read()
    return out


class TestSchedulesCommand:
    def test_pup_lookup(self, capsys):
        code = main(["schedules", "pup", "--earnings", "450",
                     "--date", "2020-11-15"])
        assert code == 0
        assert capsys.readouterr().out.strip() == "350.00"

    def test_ewss_lookup(self, capsys):
        code = main(["schedules", "ewss", "--earnings", "180",
                     "--date", "2020-11-01"])
        assert code == 0
        assert capsys.readouterr().out.strip() == "203.00"

    def test_date_before_scheme_exits_one(self, capsys):
        code = main(["schedules", "pup", "--earnings", "100",
                     "--date", "2020-03-01"])
        assert code == 1
        assert "2020-03-13" in capsys.readouterr().err

    def test_ceib_lookup(self, capsys):
        code = main(["schedules", "ceib", "--date", "2020-05-05"])
        assert code == 0
        assert capsys.readouterr().out.strip() == "350.00"


class TestValidateCommand:
    def test_valid_inputs(self, data_dir, capsys):
        code = main(["validate",
                     "--scenario", os.path.join(data_dir, "scenario.cfg")])
        assert code == 0
        assert "valid" in capsys.readouterr().out

    def test_broken_population_reports_every_violation(self, data_dir, tmp_path,
                                                       capsys):
        pop = generate_synthetic(SynthConfig(households=5), 1)
        save_population(pop, tmp_path)
        lines = (tmp_path / "households.csv").read_text().splitlines()
        # break the first household's weight and orphan a person
        lines[1] = lines[1].replace("1,1.0", "1,0.0", 1)
        (tmp_path / "households.csv").write_text("\n".join(lines) + "\n")
        plines = (tmp_path / "persons.csv").read_text().splitlines()
        plines[1] = plines[1].replace(",1,", ",99,", 1)
        (tmp_path / "persons.csv").write_text("\n".join(plines) + "\n")
        code = main(["validate",
                     "--scenario", os.path.join(data_dir, "scenario.cfg"),
                     "--population", str(tmp_path)])
        err = capsys.readouterr().err
        assert code == 1
        assert "weight" in err
        assert "99" in err


class TestRunCommand:
    def test_run_twice_is_byte_identical(self, data_dir, tmp_path):
        args = ["run", "--scenario", os.path.join(data_dir, "scenario.cfg"),
                "--seed", "11"]
        synth = tmp_path / "synth.cfg"
        synth.write_text("households = 120\n")
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(args + ["--synth-config", str(synth), "--out", str(out1)]) == 0
        assert main(args + ["--synth-config", str(synth), "--out", str(out2)]) == 0
        files1, files2 = read_dir(out1), read_dir(out2)
        assert files1.keys() == files2.keys()
        assert files1 == files2

    def test_threads_do_not_change_output(self, data_dir, tmp_path):
        synth = tmp_path / "synth.cfg"
        synth.write_text("households = 120\n")
        args = ["run", "--scenario", os.path.join(data_dir, "scenario.cfg"),
                "--seed", "11", "--synth-config", str(synth)]
        out1, out2 = tmp_path / "t1", tmp_path / "t4"
        assert main(args + ["--out", str(out1), "--threads", "1"]) == 0
        assert main(args + ["--out", str(out2), "--threads", "4"]) == 0
        assert read_dir(out1) == read_dir(out2)

    def test_expected_outputs_exist(self, data_dir, tmp_path):
        synth = tmp_path / "synth.cfg"
        synth.write_text("households = 100\n")
        out = tmp_path / "out"
        assert main(["run", "--scenario", os.path.join(data_dir, "scenario.cfg"),
                     "--seed", "2", "--synth-config", str(synth),
                     "--out", str(out)]) == 0
        names = set(os.listdir(out))
        assert {"average_income.csv", "gini.csv", "redistribution.csv",
                "decile_means.csv", "manifest.json"} <= names
        assert any(n.startswith("summary_") for n in names)

    def test_null_scenario_produces_zero_deltas(self, tmp_path, capsys):
        controls = tmp_path / "controls.csv"
        controls.write_text("stratum_key,date,target\n")
        cfg = tmp_path / "scenario.cfg"
        cfg.write_text(
            "[scenario]\ncontrols = controls.csv\nseed = 5\n"
            "[wave:before]\ndate = 2019-12-01\n"
            "[wave:w1]\ndate = 2020-05-05\n"
            "[wave:w2]\ndate = 2020-11-15\n"
        )
        synth = tmp_path / "synth.cfg"
        synth.write_text("households = 80\n")
        out = tmp_path / "out"
        assert main(["run", "--scenario", str(cfg), "--synth-config", str(synth),
                     "--out", str(out)]) == 0
        gini_lines = (out / "gini.csv").read_text().splitlines()
        change = [l for l in gini_lines if l.startswith("change:")]
        assert len(change) == 2
        for line in change:
            values = line.split(",")[1:]
            assert all(float(v) == 0.0 for v in values)

    def test_unknown_sector_in_controls_names_it(self, tmp_path, capsys):
        controls = tmp_path / "controls.csv"
        controls.write_text("stratum_key,date,target\npup:space mining,2020-05-05,5\n")
        cfg = tmp_path / "scenario.cfg"
        cfg.write_text("[scenario]\ncontrols = controls.csv\n"
                       "[wave:before]\ndate = 2019-12-01\n")
        synth = tmp_path / "synth.cfg"
        synth.write_text("households = 40\n")
        code = main(["run", "--scenario", str(cfg), "--synth-config", str(synth),
                     "--out", str(tmp_path / "out")])
        assert code == 1
        assert "space mining" in capsys.readouterr().err

    def test_infeasible_calibration_exits_two(self, tmp_path, capsys):
        controls = tmp_path / "controls.csv"
        controls.write_text(
            "stratum_key,date,target\npup:construction,2020-05-05,10000000\n")
        cfg = tmp_path / "scenario.cfg"
        cfg.write_text("[scenario]\ncontrols = controls.csv\n"
                       "[wave:before]\ndate = 2019-12-01\n"
                       "[wave:w1]\ndate = 2020-05-05\npup = on\n")
        synth = tmp_path / "synth.cfg"
        synth.write_text("households = 40\n")
        code = main(["run", "--scenario", str(cfg), "--synth-config", str(synth),
                     "--out", str(tmp_path / "out")])
        assert code == 2
        assert "infeasible" in capsys.readouterr().err


class TestSynthCommand:
    def test_synth_writes_population(self, tmp_path, capsys):
        out = tmp_path / "pop"
        code = main(["synth", "--seed", "3", "--out", str(out)])
        assert code == 0
        assert (out / "persons.csv").exists()
        assert (out / "households.csv").exists()

    def test_synth_is_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["synth", "--seed", "3", "--out", str(a)])
        main(["synth", "--seed", "3", "--out", str(b)])
        assert filecmp.cmp(a / "persons.csv", b / "persons.csv", shallow=False)


def test_print_config(capsys):
    assert main(["--print-config"]) == 0
    out = capsys.readouterr().out
    assert "policy_dir" in out and "seed" in out


def test_missing_scenario_file_is_io_error(tmp_path, capsys):
    code = main(["run", "--scenario", str(tmp_path / "nope.cfg"),
                 "--out", str(tmp_path / "out")])
    assert code == 3
    assert "nope.cfg" in capsys.readouterr().err
