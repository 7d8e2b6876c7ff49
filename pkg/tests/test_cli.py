"""End-to-end tests for the command-line front end.

Commands run in-process through cli.main so exit codes and stdout/stderr
are observable; a couple of subprocess tests cover the module entry point.
Every output file goes through tmp_path.
"""

import math
import subprocess
import sys

import numpy as np
import pytest
import scipy.signal

from spindefect import analysis, cli
from spindefect.errors import ConfigurationError

GAMMA_E_HZ_PER_T = 2.8025e10

DEGENERATE_TOML = """
[manifold.triplet]
D_Hz = 1.0e9
E_Hz = 0.0

[rates]
pump = 0.0
radiative = 5.0e7
isc_in_ms0 = 0.0
isc_in_ms1 = 0.0
isc_out_ms0 = 0.0
isc_out_ms1 = 0.0
hop_ms0 = 0.0
hop_ms1 = 0.0
recombine = 0.0

[collection]
efficiency = 0.1

[drive]
mw_sites = ["pair.electron_a", "triplet.electron"]
rf_sites = []
"""


def read_csv(path):
    """Split a written CSV into (comment lines, header cells, float rows)."""
    comments, header, rows = [], None, []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            comments.append(line)
        elif header is None:
            header = line.split(",")
        else:
            rows.append(line.split(","))
    return comments, header, rows


def write_trace(path, x, y, y_err=None, header="x,y"):
    lines = [header]
    for k in range(len(x)):
        cells = [repr(float(x[k])), repr(float(y[k]))]
        if y_err is not None:
            cells.append(repr(float(y_err[k])))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


class TestQuantityParsing:
    def test_frequency_suffixes_scale_to_hz(self):
        assert cli.parse_quantity("1.5GHz", "frequency") == 1.5e9
        assert cli.parse_quantity("300MHz", "frequency") == 3.0e8
        assert cli.parse_quantity("25kHz", "frequency") == 25e3
        assert cli.parse_quantity("7Hz", "frequency") == 7.0

    def test_bare_number_is_taken_in_the_base_unit(self):
        assert cli.parse_quantity("2.5e6", "frequency") == 2.5e6
        assert cli.parse_quantity("1e-6", "time") == 1e-6

    def test_suffix_match_is_case_insensitive(self):
        assert cli.parse_quantity("1.5ghz", "frequency") == 1.5e9
        assert cli.parse_quantity("10US", "time") == pytest.approx(10e-6)

    def test_whitespace_between_number_and_unit_is_allowed(self):
        assert cli.parse_quantity("300 MHz", "frequency") == 3.0e8
        assert cli.parse_quantity(" 62.5 mT ", "field") == pytest.approx(
            62.5e-3
        )

    def test_time_suffixes_scale_to_seconds(self):
        assert cli.parse_quantity("600ns", "time") == pytest.approx(6e-7)
        assert cli.parse_quantity("5us", "time") == pytest.approx(5e-6)
        assert cli.parse_quantity("10ms", "time") == pytest.approx(1e-2)
        assert cli.parse_quantity("2s", "time") == 2.0

    def test_field_suffixes_scale_to_tesla(self):
        assert cli.parse_quantity("62.5mT", "field") == pytest.approx(
            62.5e-3
        )
        assert cli.parse_quantity("80uT", "field") == pytest.approx(80e-6)
        assert cli.parse_quantity("1T", "field") == 1.0

    def test_unit_from_the_wrong_dimension_is_rejected(self):
        with pytest.raises(ConfigurationError):
            cli.parse_quantity("62.5mT", "frequency")
        with pytest.raises(ConfigurationError):
            cli.parse_quantity("1.5GHz", "time")

    def test_unparseable_text_is_rejected(self):
        with pytest.raises(ConfigurationError):
            cli.parse_quantity("fast", "time")
        with pytest.raises(ConfigurationError):
            cli.parse_quantity("", "frequency")

    def test_field_flag_accepts_scalar_or_triple(self):
        assert cli.parse_field("62.5mT") == pytest.approx(62.5e-3)
        vec = cli.parse_field("0,0,62.5mT")
        assert np.allclose(vec, [0.0, 0.0, 62.5e-3])
        vec = cli.parse_field("10mT,0,5mT")
        assert np.allclose(vec, [1e-2, 0.0, 5e-3])

    def test_field_flag_rejects_two_components(self):
        with pytest.raises(ConfigurationError):
            cli.parse_field("0,62.5mT")


class TestOutputContract:
    def test_metadata_comments_precede_the_header(self, tmp_path):
        out = tmp_path / "odmr.csv"
        rc = cli.main(
            [
                "odmr", "--model", "group2", "--from", "1.2GHz", "--to",
                "1.6GHz", "--points", "11", "--out", str(out),
            ]
        )
        assert rc == 0
        comments, header, rows = read_csv(out)
        assert comments[0].startswith("# config_hash: ")
        assert comments[1] == f"# seed: {cli.DEFAULT_SEED}"
        assert comments[2].startswith("# version: ")
        assert header == ["frequency_hz", "contrast"]
        assert len(rows) == 11

    def test_rows_are_parseable_floats_on_the_requested_grid(self, tmp_path):
        out = tmp_path / "odmr.csv"
        cli.main(
            [
                "odmr", "--model", "group2", "--from", "1.2GHz", "--to",
                "1.6GHz", "--points", "21", "--out", str(out),
            ]
        )
        _, _, rows = read_csv(out)
        freqs = np.array([float(r[0]) for r in rows])
        assert np.allclose(freqs, np.linspace(1.2e9, 1.6e9, 21))
        assert all(np.isfinite(float(r[1])) for r in rows)

    def test_identical_invocations_write_identical_bytes(self, tmp_path):
        argv = [
            "odmr", "--model", "group2", "--from", "1.2GHz", "--to",
            "1.6GHz", "--points", "11", "--noise", "0.02",
        ]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        cli.main(argv + ["--out", str(a)])
        cli.main(argv + ["--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_worker_count_does_not_change_the_output(
        self, tmp_path, monkeypatch
    ):
        argv = [
            "odmr", "--model", "group2", "--from", "1.2GHz", "--to",
            "1.6GHz", "--points", "13",
        ]
        a, b = tmp_path / "w1.csv", tmp_path / "w4.csv"
        monkeypatch.delenv("SPINDEFECT_WORKERS", raising=False)
        cli.main(argv + ["--out", str(a)])
        monkeypatch.setenv("SPINDEFECT_WORKERS", "4")
        cli.main(argv + ["--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_fieldmap_output_is_worker_neutral(self, tmp_path, monkeypatch):
        a, b = tmp_path / "w1.csv", tmp_path / "w3.csv"
        monkeypatch.delenv("SPINDEFECT_WORKERS", raising=False)
        cli.main(["fieldmap", "--points", "7", "--out", str(a)])
        monkeypatch.setenv("SPINDEFECT_WORKERS", "3")
        cli.main(["fieldmap", "--points", "7", "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_noise_draw_depends_on_the_seed(self, tmp_path):
        argv = [
            "odmr", "--model", "group2", "--from", "1.2GHz", "--to",
            "1.6GHz", "--points", "11", "--noise", "0.05",
        ]
        a, b = tmp_path / "s1.csv", tmp_path / "s2.csv"
        cli.main(argv + ["--out", str(a), "--seed", "1"])
        cli.main(argv + ["--out", str(b), "--seed", "2"])
        assert a.read_bytes() != b.read_bytes()
        _, _, rows_a = read_csv(a)
        comments, _, _ = read_csv(b)
        assert comments[1] == "# seed: 2"
        assert len(rows_a) == 11

    def test_config_hash_tracks_physics_flags_not_the_out_path(
        self, tmp_path
    ):
        argv = [
            "odmr", "--model", "group2", "--from", "1.2GHz", "--to",
            "1.6GHz", "--points", "5",
        ]
        a = tmp_path / "one.csv"
        b = tmp_path / "two.csv"
        c = tmp_path / "three.csv"
        cli.main(argv + ["--out", str(a)])
        cli.main(argv + ["--out", str(b)])
        cli.main(argv + ["--amp", "1MHz", "--out", str(c)])
        hash_of = lambda p: read_csv(p)[0][0]
        assert hash_of(a) == hash_of(b)
        assert hash_of(a) != hash_of(c)


class TestExitCodes:
    def test_missing_model_file_exits_2_and_names_the_path(
        self, tmp_path, capsys
    ):
        rc = cli.main(
            [
                "odmr", "--model", "no_such_model.toml", "--points", "5",
                "--out", str(tmp_path / "x.csv"),
            ]
        )
        assert rc == 2
        assert "no_such_model.toml" in capsys.readouterr().err

    def test_empty_fit_input_exits_2(self, tmp_path, capsys):
        src = tmp_path / "empty.csv"
        src.write_text("# nothing here\nx,y\n")
        rc = cli.main(
            [
                "fit", "--input", str(src), "--kind", "decay", "--out",
                str(tmp_path / "f.csv"),
            ]
        )
        assert rc == 2
        assert "no data rows" in capsys.readouterr().err

    def test_malformed_fit_row_exits_2(self, tmp_path, capsys):
        src = tmp_path / "bad.csv"
        src.write_text("x,y\n0.0,1.0\noops,nope\n")
        rc = cli.main(
            [
                "fit", "--input", str(src), "--kind", "decay", "--out",
                str(tmp_path / "f.csv"),
            ]
        )
        assert rc == 2
        assert "malformed" in capsys.readouterr().err

    def test_single_column_fit_input_exits_2(self, tmp_path, capsys):
        src = tmp_path / "thin.csv"
        src.write_text("x\n0.0\n1.0\n")
        rc = cli.main(
            [
                "fit", "--input", str(src), "--kind", "decay", "--out",
                str(tmp_path / "f.csv"),
            ]
        )
        assert rc == 2
        assert "x,y" in capsys.readouterr().err

    def test_missing_fit_input_file_exits_2(self, tmp_path, capsys):
        rc = cli.main(
            [
                "fit", "--input", str(tmp_path / "ghost.csv"), "--kind",
                "rabi", "--out", str(tmp_path / "f.csv"),
            ]
        )
        assert rc == 2
        assert "ghost.csv" in capsys.readouterr().err

    def test_degenerate_rate_set_exits_3_naming_the_module(
        self, tmp_path, capsys
    ):
        model = tmp_path / "degenerate.toml"
        model.write_text(DEGENERATE_TOML)
        rc = cli.main(
            [
                "odmr", "--model", str(model), "--from", "1GHz", "--to",
                "1.1GHz", "--points", "3", "--out", str(tmp_path / "x.csv"),
            ]
        )
        assert rc == 3
        assert "[numerics]" in capsys.readouterr().err

    def test_unknown_transition_label_exits_2(self, tmp_path, capsys):
        rc = cli.main(
            [
                "rabi", "--line", "not_a_line", "--points", "5", "--to",
                "1us", "--out", str(tmp_path / "x.csv"),
            ]
        )
        assert rc == 2
        assert "not_a_line" in capsys.readouterr().err

    def test_non_integer_worker_env_exits_2(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SPINDEFECT_WORKERS", "many")
        rc = cli.main(
            [
                "odmr", "--model", "group2", "--points", "5", "--out",
                str(tmp_path / "x.csv"),
            ]
        )
        assert rc == 2

    def test_bad_points_count_exits_2(self, tmp_path):
        rc = cli.main(
            [
                "odmr", "--model", "group2", "--points", "1", "--out",
                str(tmp_path / "x.csv"),
            ]
        )
        assert rc == 2

    def test_module_entry_point_reports_version(self):
        proc = subprocess.run(
            [sys.executable, "-m", "spindefect.cli", "--version"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "spindefect" in proc.stdout

    def test_module_entry_point_rejects_unknown_flags(self):
        proc = subprocess.run(
            [sys.executable, "-m", "spindefect.cli", "odmr", "--bogus"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 2


class TestSpectrumCommands:
    def test_odmr_resolves_two_hyperfine_peaks_at_the_stated_spacing(
        self, tmp_path
    ):
        out = tmp_path / "odmr.csv"
        rc = cli.main(
            [
                "odmr", "--model", "group3", "--from", "1.5GHz", "--to",
                "2.5GHz", "--points", "251", "--B", "0,0,62.5mT", "--out",
                str(out),
            ]
        )
        assert rc == 0
        _, _, rows = read_csv(out)
        assert len(rows) == 251
        freqs = np.array([float(r[0]) for r in rows])
        contrast = np.array([float(r[1]) for r in rows])
        first = int(np.argmax(contrast))
        masked = contrast.copy()
        window = np.abs(freqs - freqs[first]) < 5e7
        masked[window] = -np.inf
        second = int(np.argmax(masked))
        separation = abs(freqs[second] - freqs[first])
        step = freqs[1] - freqs[0]
        assert abs(separation - 3.0e8) <= 2 * step

    def test_fieldmap_defaults_to_the_bare_triplet_model(self, tmp_path):
        out = tmp_path / "fieldmap.csv"
        rc = cli.main(
            [
                "fieldmap", "--from", "0mT", "--to", "80mT", "--steps",
                "9", "--out", str(out),
            ]
        )
        assert rc == 0
        _, header, rows = read_csv(out)
        assert header == ["field_t", "frequency_hz", "intensity"]
        data = np.array([[float(c) for c in r] for r in rows])
        # Both anticrossing branches are visible at finite field; at zero
        # field the x-polarized drive lights only one of the two
        # E-split lines, so check membership there instead.
        for bz in (0.04, 0.08):
            sticks = data[np.isclose(data[:, 0], bz)]
            assert sticks.size > 0
            zeeman = GAMMA_E_HZ_PER_T * bz
            for branch in (
                1.0e9 + math.hypot(2.0e8, zeeman),
                1.0e9 - math.hypot(2.0e8, zeeman),
            ):
                # Past the ground-state level crossing the lower branch
                # is negative and shows up folded to |frequency|.
                target = abs(branch)
                best = np.min(np.abs(sticks[:, 1] - target))
                assert best < 1e-6 * target + 1.0
        at_zero = data[np.isclose(data[:, 0], 0.0)]
        triplet = at_zero[np.abs(at_zero[:, 1] - 1.0e9) < 5e8]
        assert triplet.size > 0
        for freq in triplet[:, 1]:
            off = min(abs(freq - 1.2e9), abs(freq - 0.8e9))
            assert off < 1e-6 * freq

    def test_fieldmap_pair_line_passes_through_zero_frequency(
        self, tmp_path
    ):
        out = tmp_path / "fieldmap.csv"
        cli.main(
            [
                "fieldmap", "--from", "0mT", "--to", "40mT", "--points",
                "5", "--out", str(out),
            ]
        )
        _, _, rows = read_csv(out)
        data = np.array([[float(c) for c in r] for r in rows])
        for bz in (0.01, 0.02, 0.04):
            sticks = data[np.isclose(data[:, 0], bz)]
            zeeman = GAMMA_E_HZ_PER_T * bz
            best = np.min(np.abs(sticks[:, 1] - zeeman))
            assert best < 1e-6 * zeeman
        at_zero = data[np.isclose(data[:, 0], 0.0)]
        assert np.min(at_zero[:, 1]) < 1.0

    def test_odnmr_lines_straddle_half_the_hyperfine_splitting(
        self, tmp_path
    ):
        out = tmp_path / "odnmr.csv"
        rc = cli.main(
            [
                "odnmr", "--model", "group2", "--from", "63MHz", "--to",
                "67MHz", "--points", "81", "--out", str(out),
            ]
        )
        assert rc == 0
        _, _, rows = read_csv(out)
        freqs = np.array([float(r[0]) for r in rows])
        response = np.abs(np.array([float(r[1]) for r in rows]))
        first = int(np.argmax(response))
        masked = response.copy()
        masked[np.abs(freqs - freqs[first]) < 6e5] = -np.inf
        second = int(np.argmax(masked))
        mean = 0.5 * (freqs[first] + freqs[second])
        assert abs(mean - 65e6) < 0.005 * 65e6


class TestSequenceCommands:
    def test_rabi_photons_start_at_the_dark_baseline_and_oscillate(
        self, tmp_path
    ):
        out = tmp_path / "rabi.csv"
        rc = cli.main(
            [
                "rabi", "--line", "e_low", "--from", "0us", "--to", "2us",
                "--points", "41", "--out", str(out),
            ]
        )
        assert rc == 0
        _, _, rows = read_csv(out)
        photons = np.array([float(r[1]) for r in rows])
        # tau = 0 reproduces the undriven 5 us readout of the pumped
        # steady state; driving brightens this model, with the coherent
        # oscillation riding on the saturating sector-mixing background.
        assert photons[0] == pytest.approx(0.90, rel=0.05)
        assert photons[-1] > photons[0]
        direction = np.sign(np.diff(photons))
        reversals = np.count_nonzero(np.diff(direction) != 0)
        assert reversals >= 2

    def test_ramsey_fringe_spacing_matches_the_set_detuning(
        self, tmp_path
    ):
        out = tmp_path / "ramsey.csv"
        rc = cli.main(
            [
                "ramsey", "--line", "e_low", "--detuning", "2MHz",
                "--from", "0us", "--to", "2us", "--points", "81",
                "--out", str(out),
            ]
        )
        assert rc == 0
        _, _, rows = read_csv(out)
        taus = np.array([float(r[0]) for r in rows])
        photons = np.array([float(r[1]) for r in rows])
        peaks, _ = scipy.signal.find_peaks(photons)
        assert len(peaks) >= 3
        spacing = np.mean(np.diff(taus[peaks]))
        assert spacing == pytest.approx(0.5e-6, rel=0.15)

    def test_echo_and_t1_write_finite_photon_traces(self, tmp_path):
        echo_out = tmp_path / "echo.csv"
        rc = cli.main(
            [
                "echo", "--line", "e_low", "--from", "0us", "--to", "8us",
                "--points", "9", "--out", str(echo_out),
            ]
        )
        assert rc == 0
        t1_out = tmp_path / "t1.csv"
        rc = cli.main(
            [
                "t1", "--from", "0us", "--to", "300us", "--points", "7",
                "--out", str(t1_out),
            ]
        )
        assert rc == 0
        for path in (echo_out, t1_out):
            _, header, rows = read_csv(path)
            assert header == ["tau_s", "photons"]
            photons = np.array([float(r[1]) for r in rows])
            assert np.all(np.isfinite(photons))
            assert np.all(photons > 0.0)
            assert np.ptp(photons) > 1e-6

    def test_swap_polarize_reports_opposite_transfer_signs(self, tmp_path):
        out = tmp_path / "swap.csv"
        rc = cli.main(["swap-polarize", "--out", str(out)])
        assert rc == 0
        _, header, rows = read_csv(out)
        assert header == [
            "ordering", "electron_polarization", "nuclear_polarization",
        ]
        assert [r[0] for r in rows] == ["e_low/e_high", "e_high/e_low"]
        forward = float(rows[0][2])
        backward = float(rows[1][2])
        assert forward == pytest.approx(1.0, abs=1e-6)
        assert backward == pytest.approx(-1.0, abs=1e-6)
        assert abs(float(rows[0][1])) < 1e-6

    def test_swap_polarize_rejects_a_non_complementary_line_set(
        self, tmp_path, capsys
    ):
        rc = cli.main(
            [
                "swap-polarize", "--e-lines", "e_low,e_low", "--out",
                str(tmp_path / "x.csv"),
            ]
        )
        assert rc == 2
        assert "complementary" in capsys.readouterr().err


class TestFitCommand:
    def test_rabi_fit_echoes_the_pi_gate_fidelity(self, tmp_path, capsys):
        x = np.linspace(0.0, 6e-6, 401)
        y = (
            0.5
            * np.sin(math.pi * x / 0.6e-6)
            * np.exp(-x / 117e-6)
            + 1.0
        )
        src = tmp_path / "rabi.csv"
        write_trace(src, x, y, header="tau_s,photons")
        out = tmp_path / "fit.csv"
        rc = cli.main(
            ["fit", "--input", str(src), "--kind", "rabi", "--out", str(out)]
        )
        assert rc == 0
        stdout = capsys.readouterr().out
        line = next(
            ln for ln in stdout.splitlines() if ln.startswith("gate_fidelity:")
        )
        fidelity = float(line.split(":")[1])
        expected = 0.5 * (1.0 + math.exp(-0.6e-6 / 117e-6))
        assert fidelity == pytest.approx(expected, abs=2e-4)
        _, header, rows = read_csv(out)
        assert header == ["parameter", "value", "sigma"]
        by_name = {r[0]: r[1] for r in rows}
        assert float(by_name["t_pi_s"]) == pytest.approx(0.6e-6, rel=1e-3)
        assert float(by_name["gate_fidelity"]) == pytest.approx(
            expected, abs=2e-4
        )

    def test_ramsey_fit_echoes_the_dephasing_time(self, tmp_path, capsys):
        x = np.linspace(0.0, 40e-6, 401)
        y = 0.3 * np.cos(2 * math.pi * 2e5 * x) * np.exp(-x / 16.6e-6) + 1.0
        src = tmp_path / "ramsey.csv"
        write_trace(src, x, y, header="tau_s,photons")
        rc = cli.main(
            [
                "fit", "--input", str(src), "--kind", "ramsey", "--out",
                str(tmp_path / "fit.csv"),
            ]
        )
        assert rc == 0
        stdout = capsys.readouterr().out
        line = next(
            ln for ln in stdout.splitlines() if ln.startswith("t2_star_s:")
        )
        assert float(line.split(":")[1]) == pytest.approx(16.6e-6, rel=1e-3)

    def test_decay_fit_recovers_the_relaxation_time(self, tmp_path):
        x = np.linspace(0.0, 600e-6, 201)
        y = 0.8 * np.exp(-x / 144e-6) + 0.1
        src = tmp_path / "t1.csv"
        write_trace(src, x, y, header="tau_s,photons")
        out = tmp_path / "fit.csv"
        rc = cli.main(
            ["fit", "--input", str(src), "--kind", "decay", "--out", str(out)]
        )
        assert rc == 0
        _, _, rows = read_csv(out)
        by_name = {r[0]: r[1] for r in rows}
        assert float(by_name["t_decay_s"]) == pytest.approx(144e-6, rel=1e-3)

    def test_fit_accepts_a_third_uncertainty_column(self, tmp_path):
        x = np.linspace(0.0, 600e-6, 101)
        y = 0.8 * np.exp(-x / 144e-6) + 0.1
        src = tmp_path / "weighted.csv"
        write_trace(
            src, x, y, y_err=np.full(x.size, 0.01),
            header="tau_s,photons,photons_err",
        )
        rc = cli.main(
            [
                "fit", "--input", str(src), "--kind", "decay", "--out",
                str(tmp_path / "fit.csv"),
            ]
        )
        assert rc == 0

    def test_fit_accepts_a_headerless_numeric_csv(self, tmp_path):
        x = np.linspace(0.0, 600e-6, 101)
        y = 0.8 * np.exp(-x / 144e-6) + 0.1
        src = tmp_path / "bare.csv"
        lines = [f"{float(a)!r},{float(b)!r}" for a, b in zip(x, y)]
        src.write_text("\n".join(lines) + "\n")
        rc = cli.main(
            [
                "fit", "--input", str(src), "--kind", "decay", "--out",
                str(tmp_path / "fit.csv"),
            ]
        )
        assert rc == 0

    def test_unconverged_fit_still_exits_0_and_reports_false(
        self, tmp_path, capsys
    ):
        # Pure noise has no sinusoid to find; the solver stops without
        # meeting its gradient-reduction target but must not crash.
        rng = np.random.default_rng(11)
        x = np.linspace(0.0, 6e-6, 101)
        y = 1.0 + 0.3 * rng.standard_normal(x.size)
        src = tmp_path / "noise.csv"
        write_trace(src, x, y, header="tau_s,photons")
        out = tmp_path / "fit.csv"
        rc = cli.main(
            ["fit", "--input", str(src), "--kind", "rabi", "--out", str(out)]
        )
        assert rc == 0
        _, _, rows = read_csv(out)
        by_name = {r[0]: r[1] for r in rows}
        assert by_name["converged"] in ("true", "false")
        stdout = capsys.readouterr().out
        assert "converged" in stdout
