import numpy as np
import pytest

from plotkit import (
    SchemaError,
    read_targets,
    read_trajectory,
    relative_error_series,
    render,
)
from plotkit.cli import main
from plotkit.errors import error_on_common_grid
from plotkit.figure import end_errors


def _write(path, text):
    path.write_text(text)
    return path


@pytest.fixture
def traj_csv(tmp_path):
    return _write(tmp_path / "sol.csv",
                  "time_s,p.n1,q.rg\n"
                  "0,50,10\n900,49,9\n1800,48.5,9\n")


@pytest.fixture
def ref_csv(tmp_path):
    return _write(tmp_path / "ref.csv",
                  "time_s,p.n1,q.rg\n"
                  "0,50,10\n450,49.6,9.6\n900,49.2,9.2\n"
                  "1350,48.9,9.1\n1800,48.6,9\n")


@pytest.fixture
def targets_csv(tmp_path):
    return _write(tmp_path / "tv.csv",
                  "time_s,q_max.rg,p_out_max.rg\n"
                  "0,10,55\n900,9,55\n1800,9,50\n")


class TestReaders:
    def test_round_values(self, traj_csv):
        traj = read_trajectory(traj_csv)
        assert traj.times.tolist() == [0.0, 900.0, 1800.0]
        assert traj.columns["q.rg"].tolist() == [10.0, 9.0, 9.0]
        assert traj.kinds("p") == ["p.n1"]

    def test_targets(self, targets_csv):
        tv = read_targets(targets_csv)
        assert set(tv.columns) == {"q_max.rg", "p_out_max.rg"}

    def test_missing_time_column(self, tmp_path):
        path = _write(tmp_path / "x.csv", "t,p.n1\n0,50\n1,50\n")
        with pytest.raises(SchemaError, match="time_s"):
            read_trajectory(path)

    def test_bad_cell_names_column_and_row(self, tmp_path):
        path = _write(tmp_path / "x.csv",
                      "time_s,p.n1\n0,50\n900,oops\n")
        with pytest.raises(SchemaError, match=r"'p\.n1'.*row 3"):
            read_trajectory(path)

    def test_unknown_quantity_named(self, tmp_path):
        path = _write(tmp_path / "x.csv",
                      "time_s,rho.n1\n0,50\n900,51\n")
        with pytest.raises(SchemaError, match="rho.n1"):
            read_trajectory(path)

    def test_unknown_target_named(self, tmp_path):
        path = _write(tmp_path / "x.csv",
                      "time_s,q_avg.rg\n0,5\n900,5\n")
        with pytest.raises(SchemaError, match="q_avg.rg"):
            read_targets(path)

    def test_ragged_row_rejected(self, tmp_path):
        path = _write(tmp_path / "x.csv",
                      "time_s,p.n1\n0,50\n900\n")
        with pytest.raises(SchemaError, match="row 3"):
            read_trajectory(path)

    def test_decreasing_time_rejected(self, tmp_path):
        path = _write(tmp_path / "x.csv",
                      "time_s,p.n1\n900,50\n0,50\n")
        with pytest.raises(SchemaError, match="nondecreasing"):
            read_trajectory(path)


class TestErrors:
    def test_identical_is_zero(self):
        grid = np.linspace(0.0, 10.0, 21)
        ref = np.cos(grid) + 2.0
        assert np.all(relative_error_series(ref, ref, grid) == 0.0)

    def test_scaled_reference(self):
        grid = np.linspace(0.0, 10.0, 21)
        ref = np.cos(grid) + 2.0
        e = relative_error_series(1.02 * ref, ref, grid)
        assert np.allclose(e[1:], 0.02)

    def test_jump_with_doubled_grid_point(self):
        grid = np.array([0.0, 1.0, 1.0, 2.0])
        sol = np.array([2.0, 2.0, 1.0, 1.0])
        e = relative_error_series(sol, np.ones(4), grid)
        assert e[-1] == pytest.approx(0.5)

    def test_vanishing_reference(self):
        grid = np.linspace(0.0, 1.0, 5)
        with pytest.raises(ZeroDivisionError):
            relative_error_series(np.ones(5), np.zeros(5), grid)

    def test_common_grid_interpolation(self):
        # a coarse linear reference interpolates without extra error
        t_fine = np.linspace(0.0, 4.0, 41)
        t_coarse = np.array([0.0, 2.0, 4.0])
        sol = 2.0 + t_fine
        ref = 2.0 + t_coarse
        grid, e = error_on_common_grid(t_fine, sol, t_coarse, ref)
        assert grid.tolist() == t_fine.tolist()
        assert np.allclose(e, 0.0, atol=1e-14)


class TestRender:
    def test_svg_written_and_ends_returned(self, tmp_path, traj_csv,
                                           ref_csv, targets_csv):
        out = tmp_path / "fig.svg"
        ends = render(read_trajectory(traj_csv), read_trajectory(ref_csv),
                      read_targets(targets_csv), out)
        text = out.read_text()
        assert text.lstrip().startswith("<?xml")
        assert "</svg>" in text
        assert set(ends) == {"p.n1", "q.rg"}

    def test_render_matches_end_errors(self, traj_csv, ref_csv,
                                       targets_csv, tmp_path):
        sol = read_trajectory(traj_csv)
        ref = read_trajectory(ref_csv)
        ends = render(sol, ref, read_targets(targets_csv),
                      tmp_path / "f.svg")
        assert ends == end_errors(sol, ref)

    def test_deterministic_output(self, tmp_path, traj_csv, ref_csv,
                                  targets_csv):
        sol = read_trajectory(traj_csv)
        ref = read_trajectory(ref_csv)
        tv = read_targets(targets_csv)
        a, b = tmp_path / "a.svg", tmp_path / "b.svg"
        render(sol, ref, tv, a)
        render(sol, ref, tv, b)
        assert a.read_bytes() == b.read_bytes()


class TestCli:
    def test_render_success(self, tmp_path, traj_csv, ref_csv, targets_csv,
                            capsys):
        out = tmp_path / "fig.svg"
        code = main(["render", "--sol", str(traj_csv), "--ref", str(ref_csv),
                     "--targets", str(targets_csv), "--out", str(out)])
        assert code == 0
        assert out.exists()
        captured = capsys.readouterr().out
        assert "end error q.rg" in captured

    def test_schema_error_exit_code(self, tmp_path, traj_csv, targets_csv,
                                    capsys):
        bad = _write(tmp_path / "bad.csv", "time_s,p.n1\n0,50\n900,x\n")
        code = main(["render", "--sol", str(traj_csv), "--ref", str(bad),
                     "--targets", str(targets_csv),
                     "--out", str(tmp_path / "f.svg")])
        assert code == 2
        assert "p.n1" in capsys.readouterr().err

    def test_missing_file_exit_code(self, tmp_path, traj_csv, targets_csv):
        code = main(["render", "--sol", str(traj_csv),
                     "--ref", str(tmp_path / "absent.csv"),
                     "--targets", str(targets_csv),
                     "--out", str(tmp_path / "f.svg")])
        assert code == 2
