"""Command-line interface tests: outputs, exit codes, determinism."""

import os

import numpy as np

from nanosim.cli import main

from conftest import deck_path


def _read(path):
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _csv_rows(path):
    lines = [l for l in _read(path).splitlines() if l and not l.startswith("#")]
    header = lines[0].split(",")
    data = np.array([[float(x) for x in l.split(",")] for l in lines[1:]])
    return header, data


class TestOp:
    def test_divider_prints_voltage(self, capsys):
        code = main(["op", deck_path("divider.ckt")])
        out = capsys.readouterr().out
        assert code == 0
        assert "v(2) = 2.5" in out

    def test_missing_file(self, capsys):
        code = main(["op", "no_such_deck.ckt"])
        err = capsys.readouterr().err
        assert code == 1
        assert "no_such_deck.ckt" in err

    def test_compare_nr_prints_speedup(self, capsys):
        code = main(["op", deck_path("rtd_divider_bistable.ckt"), "--compare-nr"])
        out = capsys.readouterr().out
        assert code == 0
        assert "speedup=" in out

    def test_settle_failure_exit_code(self, tmp_path, capsys):
        deck = tmp_path / "diverge.ckt"
        deck.write_text(
            "V1 1 0 DC 25\nR1 1 2 200\nXRTD1 2 0 M1\n"
            ".model M1 RTD (A=1e-4 B=2 C=1.5 D=0.3 H=1.43e-8 n1=0.35 n2=0.0172)\n"
            ".op\n.end\n")
        code = main(["op", str(deck)])
        assert code == 2


class TestDc:
    def test_sweep_csv(self, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        code = main(["dc", deck_path("rtd_divider.ckt"), "--points", "12",
                     "--out", str(out)])
        assert code == 0
        header, data = _csv_rows(str(out))
        assert header[0] == "bias"
        assert "i(XRTD1)" in header
        assert data.shape[0] == 12

    def test_points_validation(self, capsys):
        code = main(["dc", deck_path("rtd_divider.ckt"), "--points", "1"])
        assert code == 1

    def test_resistor_sweep_constant_slope(self, tmp_path, capsys):
        deck = tmp_path / "r.ckt"
        deck.write_text("V1 1 0 DC 0\nR1 1 2 1k\nR2 2 0 1k\n.dc V1 0 8 9\n.end\n")
        out = tmp_path / "r.csv"
        code = main(["dc", str(deck), "--out", str(out)])
        assert code == 0
        header, data = _csv_rows(str(out))
        v2 = data[:, header.index("v(2)")]
        i = (data[:, 0] - v2) / 1000.0
        slopes = np.diff(i) / np.diff(data[:, 0])
        assert np.allclose(slopes, slopes[0], rtol=1e-9)

    def test_plot_script(self, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        code = main(["dc", deck_path("nanowire_divider.ckt"), "--points", "8",
                     "--out", str(out), "--plot"])
        assert code == 0
        assert os.path.exists(str(out).replace(".csv", ".gp"))
        assert "plot" in _read(str(out).replace(".csv", ".gp"))


class TestTran:
    def test_rc_final_value(self, tmp_path, capsys):
        out = tmp_path / "rc.csv"
        code = main(["tran", deck_path("rc_lowpass.ckt"), "--out", str(out)])
        assert code == 0
        header, data = _csv_rows(str(out))
        v_out = data[:, header.index("v(out)")]
        assert abs(v_out[-1] - 1.0) <= 0.01

    def test_eps_zero_rejected(self, capsys):
        code = main(["tran", deck_path("rc_lowpass.ckt"), "--eps", "0"])
        assert code == 1

    def test_resample(self, tmp_path, capsys):
        out = tmp_path / "rc.csv"
        code = main(["tran", deck_path("rc_lowpass.ckt"), "--out", str(out),
                     "--resample", "41"])
        assert code == 0
        _, data = _csv_rows(str(out))
        assert data.shape[0] == 41
        assert np.allclose(np.diff(data[:, 0]), data[1, 0] - data[0, 0])

    def test_deterministic_output(self, tmp_path, capsys):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        assert main(["tran", deck_path("rc_lowpass.ckt"), "--out", str(a)]) == 0
        assert main(["tran", deck_path("rc_lowpass.ckt"), "--out", str(b)]) == 0
        assert _read(str(a)) == _read(str(b))

    def test_hmin_warning_exit_code(self, tmp_path, capsys, monkeypatch):
        import nanosim.cli as climod
        real = climod.transient

        def warned(net, cfg, fc=None):
            series = real(net, cfg, fc)
            series.hmin_warnings = 2
            return series

        monkeypatch.setattr(climod, "transient", warned)
        out = tmp_path / "warned.csv"
        code = main(["tran", deck_path("rc_lowpass.ckt"), "--out", str(out)])
        assert code == 3
        assert os.path.exists(out)     # results are still written


class TestStoch:
    def test_zero_intensity_var_is_zero(self, tmp_path, capsys):
        deck = tmp_path / "quiet.ckt"
        deck.write_text("V1 in 0 DC 1\nR1 in out 1k\nC1 out 0 1n\nN1 out 0 0\n"
                        ".stoch 1e-6 1e-8 4\n.end\n")
        out = tmp_path / "quiet.csv"
        code = main(["stoch", str(deck), "--out", str(out)])
        assert code == 0
        header, data = _csv_rows(str(out))
        var_cols = [i for i, h in enumerate(header) if h.startswith("var(")]
        assert np.all(data[:, var_cols] == 0.0)

    def test_seed_reproducibility(self, tmp_path, capsys):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        args = ["stoch", deck_path("ou_step.ckt"), "--paths", "300", "--seed", "7"]
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert _read(str(a)) == _read(str(b))

    def test_thread_count_invariance(self, tmp_path, capsys, monkeypatch):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        args = ["stoch", deck_path("ou_step.ckt"), "--paths", "300", "--seed", "7"]
        monkeypatch.setenv("NANOSIM_THREADS", "1")
        assert main(args + ["--out", str(a)]) == 0
        monkeypatch.setenv("NANOSIM_THREADS", "4")
        assert main(args + ["--out", str(b)]) == 0
        assert _read(str(a)) == _read(str(b))

    def test_seed_echoed_in_header(self, tmp_path, capsys):
        out = tmp_path / "ou.csv"
        code = main(["stoch", deck_path("ou_step.ckt"), "--paths", "50",
                     "--seed", "31", "--out", str(out)])
        assert code == 0
        assert "seed=31" in _read(str(out))

    def test_window_flag(self, tmp_path, capsys):
        out = tmp_path / "ou.csv"
        code = main(["stoch", deck_path("ou_step.ckt"), "--paths", "50",
                     "--window", "1u", "2u", "--out", str(out)])
        assert code == 0
        text = _read(str(out))
        assert "window=[1e-06,2e-06]" in text
        assert "peak(out):" in text

    def test_mean_matches_analytic_charging(self, tmp_path, capsys):
        out = tmp_path / "ou.csv"
        code = main(["stoch", deck_path("ou_step.ckt"), "--paths", "2000",
                     "--out", str(out)])
        assert code == 0
        header, data = _csv_rows(str(out))
        t = data[:, 0]
        mean = data[:, header.index("mean(out)")]
        var = data[:, header.index("var(out)")]
        lam = 1e6
        exact = 1.0 - np.exp(-lam * t)
        se = np.sqrt(var / 2000.0)
        mask = t > 0
        assert np.all(np.abs(mean[mask] - exact[mask]) <= 4 * se[mask] + 1e-9)
