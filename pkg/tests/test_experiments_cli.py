import csv
import json

import numpy as np
import pytest

from dasswipt.cli import main, parse_seeds
from dasswipt.errors import StructuralError
from dasswipt.experiments import (
    RESULT_COLUMNS, ExperimentSpec, PointResult, num_workers, run_experiment, run_point, summarize,
)
from dasswipt.scenario import SystemParams
from dasswipt.units import dbm_to_watt
from conftest import TINY_CAP, TINY_GAMMA_DB, tiny_params

TINY_SYSTEM = dict(L=2, K=2, M=1, Nt=2, gamma_req_db=list(TINY_GAMMA_DB), C_backhaul_max=TINY_CAP, sigma_est_sq=0.05)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def serial(monkeypatch):
    monkeypatch.setenv("SWIPT_NUM_THREADS", "1")


class TestParseSeeds:
    def test_forms(self):
        assert parse_seeds("3") == (3,)
        assert parse_seeds("0..4") == (0, 1, 2, 3, 4)
        assert parse_seeds("1,4..5, 9") == (1, 4, 5, 9)

    @pytest.mark.parametrize("bad", ["", "a", "5..2", "1..x"])
    def test_bad(self, bad):
        with pytest.raises(StructuralError):
            parse_seeds(bad)


class TestSpec:
    def test_defaults(self):
        spec = ExperimentSpec("power_vs_csi_error", (0,))
        assert spec.sweep_param == "sigma_est_sq"
        assert spec.sweep_values == (0.0, 0.025, 0.05)

    def test_antenna_sweep(self):
        spec = ExperimentSpec("power_vs_antennas", (0,), params=tiny_params(), sweep_values=(4, 6, 8))
        assert [spec.scenario(0, v).Nt for v in spec.sweep_values] == [2, 3, 4]

    @pytest.mark.parametrize("kw", [
        dict(experiment="fig10"), dict(seeds=()), dict(algorithms=("magic",)), dict(sweep_values=(-1.0,)),
        dict(sweep_values=(5.0,)), dict(kappa=-1.0), dict(phi=0.0), dict(max_iter=0),
    ])
    def test_invalid(self, kw):
        base = dict(experiment="power_vs_antennas", seeds=(0,), params=tiny_params())
        base.update(kw)
        with pytest.raises(StructuralError):
            ExperimentSpec(**base)

    def test_csi_sweep_changes_radius_only(self):
        spec = ExperimentSpec("power_vs_csi_error", (0,), params=tiny_params())
        a, b = spec.scenario(0, 0.0), spec.scenario(0, 0.05)
        assert np.array_equal(a.h, b.h) and np.all(a.eps == 0) and np.all(b.eps > 0)


class TestWorkers:
    def test_env_cap(self, monkeypatch):
        monkeypatch.setenv("SWIPT_NUM_THREADS", "3")
        assert num_workers(10) == 3
        assert num_workers(2) == 2

    def test_bad_env(self, monkeypatch):
        monkeypatch.setenv("SWIPT_NUM_THREADS", "many")
        with pytest.raises(StructuralError):
            num_workers(4)
        monkeypatch.setenv("SWIPT_NUM_THREADS", "0")
        with pytest.raises(StructuralError):
            num_workers(4)


class TestSummary:
    def test_matched_seeds(self):
        rows = [
            PointResult(0, "gbd", "sigma_est_sq", 0.0, 1.0, 0.1, 3, "optimal"),
            PointResult(0, "gbd", "sigma_est_sq", 0.05, 2.0, 0.2, 3, "optimal"),
            PointResult(1, "gbd", "sigma_est_sq", 0.0, 5.0, 0.5, 3, "optimal"),
            PointResult(1, "gbd", "sigma_est_sq", 0.05, np.nan, np.nan, 0, "infeasible"),
        ]
        out = summarize(rows)
        # seed 1 failed at one point and is dropped from both
        assert [r["objective_w"] for r in out] == [1.0, 2.0]
        assert [r["n_seeds"] for r in out] == [1, 1]
        assert out[0]["objective_dbm"] == pytest.approx(30.0)

    def test_failed_row_has_nan_dbm(self):
        row = PointResult(3, "sca", "none", 0.0, np.nan, np.nan, 0, "rounding-violates-backhaul").row()
        assert row[5] == "nan" and row[-1] == "rounding-violates-backhaul"


class TestRunExperiment:
    def test_convergence_outputs(self, tmp_path, serial):
        spec = ExperimentSpec("convergence", (0,), ("gbd", "sca"), output_dir=str(tmp_path), params=tiny_params(),
                              kappa=1e-4)
        manifest = run_experiment(spec)
        assert not manifest["failures"]
        header = (tmp_path / "results.csv").read_text().splitlines()[0]
        assert header == ",".join(RESULT_COLUMNS)
        for name in ("trace_gbd_seed0.csv", "trace_sca_seed0.csv", "convergence_seed0.png", "manifest.json"):
            assert (tmp_path / name).exists()
        trace = read_rows(tmp_path / "trace_gbd_seed0.csv")
        ub = [float(r["UB"]) for r in trace]
        lb = [float(r["LB"]) for r in trace]
        assert all(b <= a for a, b in zip(ub, ub[1:]))
        assert all(b >= a for a, b in zip(lb, lb[1:]))
        for r in read_rows(tmp_path / "results.csv"):
            assert float(dbm_to_watt(float(r["objective_dbm"]))) == pytest.approx(float(r["objective_w"]), rel=1e-9)

    def test_deterministic(self, tmp_path, serial):
        kw = dict(experiment="power_vs_csi_error", seeds=(1,), algorithms=("full_coop",), params=tiny_params(),
                  sweep_values=(0.0, 0.05))
        run_experiment(ExperimentSpec(output_dir=str(tmp_path / "a"), **kw), plots=False)
        run_experiment(ExperimentSpec(output_dir=str(tmp_path / "b"), **kw), plots=False)
        assert (tmp_path / "a" / "results.csv").read_text() == (tmp_path / "b" / "results.csv").read_text()

    def test_parallel_matches_serial(self, tmp_path, monkeypatch):
        kw = dict(experiment="power_vs_csi_error", seeds=(1, 2), algorithms=("full_coop",), params=tiny_params(),
                  sweep_values=(0.0, 0.05))
        monkeypatch.setenv("SWIPT_NUM_THREADS", "1")
        run_experiment(ExperimentSpec(output_dir=str(tmp_path / "a"), **kw), plots=False)
        monkeypatch.setenv("SWIPT_NUM_THREADS", "2")
        man = run_experiment(ExperimentSpec(output_dir=str(tmp_path / "b"), **kw), plots=False)
        assert man["workers"] == 2
        assert (tmp_path / "a" / "results.csv").read_text() == (tmp_path / "b" / "results.csv").read_text()

    def test_failures_listed(self, tmp_path, serial):
        spec = ExperimentSpec("convergence", (13,), ("gbd",), output_dir=str(tmp_path), params=tiny_params())
        manifest = run_experiment(spec, plots=False)
        assert manifest["failures"][0]["status"] == "infeasible"
        row = read_rows(tmp_path / "results.csv")[0]
        assert row["status"] == "infeasible" and row["objective_w"] == "nan"

    def test_every_policy_verified(self):
        spec = ExperimentSpec("power_vs_csi_error", (2,), ("gbd", "full_coop", "colocated"), params=tiny_params(),
                              sweep_values=(0.05,))
        res = run_point(spec, 2, 0.05)
        assert all(r.ok for r in res), [(r.algorithm, r.status, r.message) for r in res]
        # harvested power of the co-located scheme is measured on its own channels
        assert all(r.harvested_total_w > 0 for r in res)


class TestCli:
    def write_config(self, tmp_path, run=None):
        cfg = {"system": TINY_SYSTEM, "run": run or {}}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        return str(path)

    def test_success(self, tmp_path, serial, capsys):
        cfg = self.write_config(tmp_path)
        code = main(["--config", cfg, "--experiment", "power_vs_csi_error", "--seeds", "1", "--algo", "full_coop",
                     "--sweep", "0,0.05", "--out", str(tmp_path / "out")])
        assert code == 0
        assert (tmp_path / "out" / "power_vs_csi_error.png").exists()
        assert "0 failed runs" in capsys.readouterr().out

    def test_run_section(self, tmp_path, serial):
        cfg = self.write_config(tmp_path, {"experiment": "power_vs_csi_error", "seeds": "2", "algorithms": ["full_coop"],
                                           "sweep_values": [0.05], "out": str(tmp_path / "o")})
        assert main(["--config", cfg, "--no-plots"]) == 0
        rows = read_rows(tmp_path / "o" / "results.csv")
        assert len(rows) == 1 and rows[0]["seed"] == "2"

    def test_infeasible_seed_exit_2(self, tmp_path, serial):
        cfg = self.write_config(tmp_path)
        assert main(["--config", cfg, "--experiment", "convergence", "--seeds", "13", "--algo", "gbd",
                     "--out", str(tmp_path / "o"), "--no-plots"]) == 2

    def test_structural_exit_1(self, tmp_path, capsys):
        assert main(["--experiment", "convergence", "--seeds", "3..1", "--out", str(tmp_path)]) == 1
        assert "error" in capsys.readouterr().err

    def test_missing_experiment(self, tmp_path):
        assert main(["--seeds", "0", "--out", str(tmp_path)]) == 1

    def test_bad_config(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"system": {"L": 0}}))
        assert main(["--config", str(path), "--experiment", "convergence"]) == 1
        assert main(["--config", str(tmp_path / "missing.json"), "--experiment", "convergence"]) == 1

    def test_unknown_experiment_flag(self):
        with pytest.raises(SystemExit):
            main(["--experiment", "fig10"])


def test_system_params_from_tiny_dict():
    assert SystemParams(**TINY_SYSTEM).L == 2
