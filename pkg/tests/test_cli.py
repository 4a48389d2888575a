import csv
import json

import numpy as np
import pytest
import yaml

from adaprox import cli
from adaprox.controllers import ControllerConfig

QUAD = {
    "problem": {"quadratic": {"dimension": 4, "mu": 0.2, "L": 1.0, "sigma": 0.5, "pool_size": 40, "seed": 0}},
    "controllers": [{"kind": "norm", "eta": 0.9}, {"kind": "ip", "beta": 0.5}, {"kind": "geometric", "gamma": 0.2}],
    "steplength": {"exponents": [-2, 0]},
    "seeds": [0, 1],
    "max_epochs": 5,
    "reference": {"iterations": 2000},
}


def write_config(tmp_path, cfg=None, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg or QUAD))
    return p


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def artifact(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    out = tmp / "out"
    assert cli.main(["run", str(write_config(tmp)), "--out", str(out)]) == cli.EXIT_OK
    return out


class TestConfig:
    def test_defaults(self, monkeypatch):
        monkeypatch.setenv("ADAPROX_SEED", "7")
        cfg = cli.resolve_config({"problem": QUAD["problem"]})
        assert cfg["seeds"] == [7, 8, 9, 10, 11]
        assert cfg["steplength"]["values"] == [2.0**e for e in cli.DEFAULT_EXPONENTS]
        assert cfg["timing"] is False and cfg["max_epochs"] == 100.0

    def test_flag_overrides(self):
        args = cli.build_parser().parse_args(["run", "x.yaml", "--controller", "ip", "--eta", "0.5",
                                              "--alpha", "theory", "--seed", "3"])
        cfg = cli.resolve_config(dict(QUAD), args)
        (c,) = cli.expand_controllers(cfg["controllers"])
        assert c.kind == "ip" and c.beta == pytest.approx(0.5)
        assert cfg["steplength"] == {"mode": "theory"} and cfg["seeds"] == [3]

    @pytest.mark.parametrize("bad", [
        {"problem": {}},
        {"problem": {"quadratic": {"dimension": 3}}},
        {"problem": QUAD["problem"], "controllers": [{"kind": "norm", "eta": 1.5}]},
        {"problem": QUAD["problem"], "steplength": {"values": [-1.0]}},
    ])
    def test_invalid(self, bad):
        with pytest.raises(cli.ConfigError):
            cli.resolve_config(bad)

    def test_hash_ignores_output(self):
        a = cli.resolve_config(dict(QUAD, output="a"))
        b = cli.resolve_config(dict(QUAD, output="b"))
        assert cli.config_hash(a) == cli.config_hash(b)
        assert cli.config_hash(a) != cli.config_hash(cli.resolve_config(dict(QUAD, max_epochs=6)))

    def test_cell_ids(self):
        cells = cli.enumerate_cells(cli.resolve_config(QUAD))
        assert len(cells) == 3 * 2 * 2
        assert cells[0]["cell"] == "NORM_eta=0.9_alpha=2^-2_seed=0"
        assert cells[0]["label"] == "NORM η=0.9"


class TestRun:
    def test_artifacts(self, artifact):
        names = {p.name for p in artifact.iterdir()}
        assert {"config.json", "reference.json", "summary.json", "best_comparison.csv"} <= names
        assert len([n for n in names if n.startswith("trace_")]) == 12
        cfg = json.loads((artifact / "config.json").read_text())
        assert cfg["config_hash"] == cli.config_hash(cfg)

    def test_trace_columns_and_monotone_batches(self, artifact):
        for path in artifact.glob("trace_*.csv"):
            rows = read_rows(path)
            assert list(rows[0]) == cli.TRACE_COLUMNS
            S = [int(r["S_k"]) for r in rows]
            assert all(b >= a for a, b in zip(S, S[1:]))
            assert rows[0]["k"] == "0" and rows[0]["cum_samples"] == "0"
            np.testing.assert_allclose([float(r["eff_grad_evals"]) for r in rows],
                                       [int(r["cum_samples"]) / 40 for r in rows])
            assert all(r["wall_ms"] == "nan" for r in rows)

    def test_summary_selection(self, artifact):
        s = json.loads((artifact / "summary.json").read_text())
        assert s["failures"] == []
        assert set(s["best_per_method"]) == {"norm", "ip", "geometric"}
        for label, setting in s["settings"].items():
            table = setting["by_alpha"]
            best = min(v["mean_final_gap"] for v in table.values())
            assert table[setting["best_alpha_tag"]]["mean_final_gap"] == best

    def test_best_comparison_has_means(self, artifact):
        rows = read_rows(artifact / "best_comparison.csv")
        assert {r["seed"] for r in rows} == {"0", "1", "mean"}

    def test_replay_is_byte_identical(self, artifact, tmp_path):
        out = tmp_path / "again"
        assert cli.main(["run", str(write_config(tmp_path)), "--out", str(out), "--jobs", "2"]) == 0
        for path in artifact.glob("*.csv"):
            assert (out / path.name).read_bytes() == path.read_bytes()
        a = json.loads((artifact / "summary.json").read_text())
        b = json.loads((out / "summary.json").read_text())
        assert a == b

    def test_numerical_failure_keeps_other_cells(self, tmp_path, capsys):
        cfg = dict(QUAD, controllers=[{"kind": "norm", "eta": 0.9}], steplength={"values": [0.5, 1e6]})
        out = tmp_path / "o"
        assert cli.main(["run", str(write_config(tmp_path, cfg)), "--out", str(out)]) == cli.EXIT_NUMERIC
        s = json.loads((out / "summary.json").read_text())
        status = {c["cell"]: c["status"] for c in s["cells"]}
        assert status["NORM_eta=0.9_alpha=2^-1_seed=0"] == "ok"
        assert status["NORM_eta=0.9_alpha=1000000.0_seed=1"] == "numerical_failure"
        assert s["settings"]["NORM η=0.9"]["best_alpha_tag"] == "2^-1"
        assert "failed: NORM_eta=0.9_alpha=1000000.0_seed=0" in capsys.readouterr().err

    def test_config_errors(self, tmp_path):
        assert cli.main(["run", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG
        assert cli.main(["run"]) == cli.EXIT_CONFIG
        assert cli.main(["run", "--dataset", str(tmp_path / "nope.txt"), "--out", str(tmp_path / "o")]) == 1


class TestSelectBest:
    def result(self, tag, alpha, seed, gap, evals, status="ok"):
        return {"label": "NORM η=0.9", "kind": "norm", "alpha_tag": tag, "alpha": alpha, "seed": seed,
                "status": status, "final_gap": gap, "eff_grad_evals": evals, "cum_samples": evals * 10,
                "final_batch_fraction": 0.5}

    def test_tie_breaks(self):
        rs = [self.result("a", 1.0, 0, 0.1, 5), self.result("b", 2.0, 0, 0.1, 4),
              self.result("c", 0.5, 0, 0.1, 4)]
        sel = cli.select_best(rs)
        assert sel["settings"]["NORM η=0.9"]["best_alpha_tag"] == "c"
        assert sel["best_per_method"]["norm"]["alpha"] == 0.5

    def test_failed_seed_disqualifies(self):
        rs = [self.result("a", 1.0, 0, 0.01, 5), self.result("a", 1.0, 1, 0, 0, status="numerical_failure"),
              self.result("b", 2.0, 0, 0.2, 4), self.result("b", 2.0, 1, 0.3, 4)]
        s = cli.select_best(rs)["settings"]["NORM η=0.9"]
        assert s["best_alpha_tag"] == "b"
        assert s["by_alpha"]["a"]["failures"] == 1


class TestEmit:
    def test_long_format(self, artifact, capsys):
        assert cli.main(["emit", str(artifact)]) == cli.EXIT_OK
        gap = read_rows(artifact / "plot_gap_vs_evals.csv")
        frac = read_rows(artifact / "plot_batch_fraction.csv")
        assert list(gap[0]) == ["series_label", "alpha", "seed", "x", "y"]
        assert {r["series_label"] for r in gap} == {"NORM η=0.9", "IP β=0.5", "GEOMETRIC γ=0.2"}
        # pool problems have no cap, so only positivity holds here
        assert all(float(r["y"]) > 0 for r in frac)
        traces = {p.name: cli.read_trace(p) for p in artifact.glob("trace_*.csv")}
        assert len(gap) == sum(len(t["k"]) for t in traces.values())

    def test_finite_sum_fraction_is_capped(self, tmp_path, capsys):
        r = np.random.default_rng(0)
        lines = []
        for i in range(30):
            feats = " ".join(f"{j + 1}:{r.normal():.4f}" for j in range(3))
            lines.append(f"{'+1' if r.random() < 0.5 else '-1'} {feats}")
        data = tmp_path / "tiny.txt"
        data.write_text("\n".join(lines) + "\n")
        out = tmp_path / "o"
        code = cli.main(["run", "--dataset", str(data), "--controller", "norm", "--eta", "0.5",
                         "--alpha", "4", "--seed", "0", "--max-epochs", "30", "--out", str(out)])
        assert code == cli.EXIT_OK
        assert cli.main(["emit", str(out)]) == cli.EXIT_OK
        y = np.array([float(row["y"]) for row in read_rows(out / "plot_batch_fraction.csv")])
        assert np.all((y > 0) & (y <= 1))
        assert y.max() == 1.0

    def test_missing_trace(self, artifact, tmp_path, capsys):
        import shutil
        copy = tmp_path / "copy"
        shutil.copytree(artifact, copy)
        victim = next(copy.glob("trace_*.csv"))
        victim.unlink()
        assert cli.main(["emit", str(copy)]) == cli.EXIT_CONFIG
        assert victim.name[len("trace_"):-len(".csv")] in capsys.readouterr().err

    def test_not_an_artifact_dir(self, tmp_path):
        assert cli.main(["emit", str(tmp_path)]) == cli.EXIT_CONFIG


class TestReference:
    def test_cache_hit(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        out = tmp_path / "ref"
        assert cli.main(["reference", str(cfg), "--out", str(out)]) == 0
        first = json.loads(capsys.readouterr().out)
        assert cli.main(["reference", str(cfg), "--out", str(out)]) == 0
        second = json.loads(capsys.readouterr().out)
        assert not first["cached"] and second["cached"]
        assert first["phi_star"] == second["phi_star"]
        assert cli.main(["reference", str(cfg), "--out", str(out), "--iterations", "3000"]) == 0
        assert not json.loads(capsys.readouterr().out)["cached"]

    def test_matches_closed_form(self, tmp_path):
        cfg = cli.resolve_config(QUAD)
        rec = cli.compute_reference(cfg, tmp_path)
        p, _, _ = cli.build_problem(cfg["problem"])
        assert rec["phi_star"] == pytest.approx(p.value(p.minimizer()), abs=1e-10)

    def test_divergence_exit_code(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        code = cli.main(["reference", str(cfg), "--out", str(tmp_path / "r"), "--ref-alpha", "50"])
        assert code == cli.EXIT_NUMERIC
        assert "smaller steplength" in capsys.readouterr().err

    def test_config_override(self, tmp_path):
        cfg = cli.resolve_config(dict(QUAD, reference={"phi_star": -1.25}))
        assert cli.compute_reference(cfg, tmp_path)["phi_star"] == -1.25


class TestVerify:
    def test_boundary_blowup(self, tmp_path, capsys):
        out = tmp_path / "v.json"
        assert cli.main(["verify", "figure1", "--out", str(out)]) == cli.EXIT_OK
        report = json.loads(out.read_text())
        assert report["figure1"]["passed"]

    def test_linear_small(self, capsys):
        assert cli.main(["verify", "linear", "--seeds", "30", "--horizon", "10"]) == cli.EXIT_OK
        assert json.loads(capsys.readouterr().out)["linear"]["passed"]


def test_label_matches_controller():
    assert ControllerConfig("ip", beta=0.5).label == "IP β=0.5"
