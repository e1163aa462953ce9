import json

import numpy as np
import pytest

import pacbandits as pb
from pacbandits.cli import main
from conftest import ANCHOR_A, ANCHOR_MU


@pytest.fixture()
def anchor_path(tmp_path, anchor_instance):
    path = tmp_path / "anchor.json"
    pb.save_instance(anchor_instance, path)
    return path


@pytest.fixture()
def nonsep_path(tmp_path, easy_nonsep):
    path = tmp_path / "ns.json"
    pb.save_instance(easy_nonsep, path)
    return path


class TestGenInstance:
    def test_writes_valid_instance(self, tmp_path):
        out = tmp_path / "g.json"
        code = main(["gen-instance", "--n", "3", "--k", "2",
                     "--kind", "non_separator", "--seed", "5",
                     "--out", str(out)])
        assert code == 0
        inst = pb.load_instance(out)
        assert inst.n == 3 and inst.k == 2 and inst.kind == pb.NON_SEPARATOR

    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for out in (a, b):
            assert main(["gen-instance", "--n", "3", "--k", "3",
                         "--kind", "separator", "--seed", "12",
                         "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_bad_args_exit_two(self, tmp_path):
        code = main(["gen-instance", "--n", "1", "--k", "2",
                     "--kind", "separator", "--seed", "1",
                     "--out", str(tmp_path / "x.json")])
        assert code == 2


class TestSolveWeights:
    def test_anchor_output(self, anchor_path, capsys):
        assert main(["solve-weights", "--instance", str(anchor_path)]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["kind"] == "separator"
        assert out["best_arm"] == 2  # 1-based in CLI output
        np.testing.assert_allclose(out["weights"], [0.10, 0.45, 0.45], atol=1e-5)
        assert out["t_star"] == pytest.approx(1.0 / out["objective"], rel=1e-12)
        np.testing.assert_allclose(
            ANCHOR_A @ np.array(out["mixture"]), out["weights"], atol=1e-6)

    def test_oracle_comparison(self, anchor_path, capsys):
        assert main(["solve-weights", "--instance", str(anchor_path),
                     "--oracle"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert abs(out["oracle"]["objective_shortfall"]) <= 1e-3
        assert out["oracle"]["objective"] == pytest.approx(0.0045, rel=1e-9)

    def test_nonsep_weights(self, nonsep_path, capsys):
        assert main(["solve-weights", "--instance", str(nonsep_path)]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["kind"] == "non_separator"
        assert sum(out["weights"]) == pytest.approx(1.0, abs=1e-9)
        assert "mixture" not in out

    def test_missing_file_exit_two(self, tmp_path):
        assert main(["solve-weights", "--instance",
                     str(tmp_path / "ghost.json")]) == 2


class TestRun:
    def test_writes_result_json(self, nonsep_path, tmp_path, capsys):
        out = tmp_path / "res.json"
        code = main(["run", "--algo", "nsts", "--instance", str(nonsep_path),
                     "--delta", "0.1", "--seed", "3", "--trajectory", "100",
                     "--out", str(out)])
        assert code == 0
        res = json.loads(out.read_text())
        assert res["algo"] == "nsts" and res["delta"] == 0.1
        assert res["recommendation"] in (1, 2)  # 1-based
        assert res["tau"] >= 4
        assert res["trajectory"], "trajectory stride was requested"
        assert res["trajectory"][0]["round"] == 100
        assert "tau=" in capsys.readouterr().out

    def test_deterministic_across_calls(self, nonsep_path, tmp_path):
        outs = []
        for name in ("r1.json", "r2.json"):
            path = tmp_path / name
            assert main(["run", "--algo", "ts", "--instance", str(nonsep_path),
                         "--delta", "0.2", "--seed", "9", "--max-rounds",
                         "5000", "--out", str(path)]) == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]

    def test_algo_kind_mismatch_exit_two(self, anchor_path, tmp_path):
        assert main(["run", "--algo", "nsts", "--instance", str(anchor_path),
                     "--delta", "0.1", "--seed", "1",
                     "--out", str(tmp_path / "x.json")]) == 2


class TestBench:
    def _write_config(self, tmp_path, nonsep_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "seed": 77, "delta": 0.15, "trials": 3,
            "algorithms": ["nsts", "ts"],
            "max_rounds": 50_000,
            "max_rounds_by_algo": {"ts": 4000},
            "trajectory_stride": 100,
            "instances": [
                {"id": "base", "path": nonsep_path.name},
                {"generate": {"count": 1, "n": 3, "k": 2,
                              "kind": "non_separator", "id_prefix": "r"}},
            ],
        }))
        return cfg

    def test_end_to_end_and_jobs_invariance(self, tmp_path, nonsep_path, capsys):
        cfg = self._write_config(tmp_path, nonsep_path)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert main(["bench", "--config", str(cfg), "--out", str(out1),
                     "--jobs", "1"]) == 0
        assert main(["bench", "--config", str(cfg), "--out", str(out2),
                     "--jobs", "3"]) == 0
        capsys.readouterr()
        s1 = (out1 / "summary.csv").read_bytes()
        s2 = (out2 / "summary.csv").read_bytes()
        assert s1 == s2
        lines = s1.decode().splitlines()
        assert len(lines) == 1 + 4  # header + 2 instances x 2 algos
        trajs = sorted(p.name for p in out1.glob("trajectory_*.csv"))
        assert trajs == ["trajectory_base_nsts.csv", "trajectory_base_ts.csv",
                         "trajectory_r-1_nsts.csv", "trajectory_r-1_ts.csv"]

    def test_config_error_exit_two(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{}")
        assert main(["bench", "--config", str(bad),
                     "--out", str(tmp_path / "o")]) == 2
        assert "error:" in capsys.readouterr().err

    def test_run_failure_exit_three(self, tmp_path, nonsep_path, capsys,
                                    monkeypatch):
        import pacbandits.harness as harness

        def boom(*args, **kwargs):
            raise RuntimeError("synthetic run failure")

        monkeypatch.setattr(harness, "_run_pair", boom)
        cfg = self._write_config(tmp_path, nonsep_path)
        code = main(["bench", "--config", str(cfg),
                     "--out", str(tmp_path / "o3"), "--jobs", "1"])
        assert code == 3
        assert "FAILED" in capsys.readouterr().err
