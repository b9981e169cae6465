import csv
import json
import math

import numpy as np
import pytest
import yaml
from hypothesis import given, settings, strategies as st
from scipy import stats

from ddml.bench import ExperimentConfig, MethodSpec, load_config, rank_features, read_replications, \
    run_diagnostics, run_experiment
from ddml.bench.cli import main
from ddml.bench.experiment import DatasetSpec, ResultCell, run_method
from ddml.bench.stats import Q_ALPHA_005, error_metrics, friedman_ranks, nemenyi_cd
from ddml.errors import InputError
from ddml.numcore import TrainConfig, make_rng
from ddml.nuisance import NuisanceSpec
from ddml.synthgen import Dataset, DgpConfig

RF = NuisanceSpec(kind="random-forest", n_trees=8)


def tiny_config(**kw):
    base = dict(
        datasets=(DatasetSpec(dgp=DgpConfig(n=80, d=10)),),
        methods=(MethodSpec("DML-RF", "dml", RF), MethodSpec("DDML-RF", "ddml", RF)),
        replications=2, k=2, train=TrainConfig(epochs=2), latent_dim=2,
    )
    base.update(kw)
    return ExperimentConfig(**base)


class TestMetrics:
    def test_single_run(self):
        m = error_metrics([4.8], [5.0])
        assert m["mae"] == pytest.approx(0.2) and m["rmse"] == pytest.approx(0.2)

    def test_symmetric_pair(self):
        m = error_metrics([4.0, 6.0], 5.0)
        assert m["mae"] == 1.0 and m["rmse"] == 1.0

    def test_three_runs(self):
        m = error_metrics([4.0, 5.0, 7.0], 5.0)
        assert m["mae"] == pytest.approx(1.0)
        assert m["rmse"] == pytest.approx(math.sqrt(5 / 3), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30))
def test_mae_never_exceeds_rmse(values):
    m = error_metrics(values, 0.0)
    assert m["rmse"] ** 2 - m["mae"] ** 2 >= -1e-12 * max(1.0, m["rmse"] ** 2)


class TestNemenyi:
    def test_anchor(self):
        assert nemenyi_cd(7, 12) == pytest.approx(2.60, abs=0.01)

    def test_q_table_matches_studentized_range(self):
        for k, q in Q_ALPHA_005.items():
            ref = stats.studentized_range.ppf(0.95, k, np.inf) / math.sqrt(2)
            assert abs(ref - q) < 1e-3  # three-decimal table

    def test_two_methods(self):
        # 2 * 3 / (6 * eta) = 1 / eta
        assert nemenyi_cd(2, 8) == pytest.approx(1.960 * math.sqrt(1 / 8), rel=1e-12)
        cds = [nemenyi_cd(2, n) for n in range(2, 20)]
        assert all(a > b for a, b in zip(cds, cds[1:]))

    def test_quadruple_tasks_halves(self):
        assert nemenyi_cd(7, 48) == pytest.approx(nemenyi_cd(7, 12) / 2, rel=1e-12)

    def test_unsupported(self):
        with pytest.raises(InputError):
            nemenyi_cd(11, 5)
        with pytest.raises(InputError):
            nemenyi_cd(3, 5, alpha=0.1)


class TestFriedman:
    def test_dominant_method(self):
        r = friedman_ranks([[0.1, 0.2, 0.3], [0.5, 0.6, 0.7], [0.9, 0.8, 1.0]])
        assert r.mean_ranks[0] == 1.0

    def test_all_tied(self):
        r = friedman_ranks([[1.0, 2.0], [1.0, 2.0]])
        assert r.mean_ranks.tolist() == [1.5, 1.5]

    def test_hand_computed_table(self):
        # errors for 3 methods on 4 tasks; lower is better
        table = [[1.0, 2.0, 1.0, 3.0],
                 [2.0, 1.0, 3.0, 1.0],
                 [3.0, 3.0, 2.0, 2.0]]
        r = friedman_ranks(table)
        # task ranks equal the entries themselves here
        assert r.ranks.tolist() == table
        assert r.mean_ranks.tolist() == [7 / 4, 7 / 4, 10 / 4]
        # 12*4/(3*4) * (49/16 + 49/16 + 100/16 - 3*16/4) = 4 * (198/16 - 12)
        assert r.statistic == pytest.approx(4 * (198 / 16 - 12), abs=1e-12)
        assert r.statistic == pytest.approx(stats.friedmanchisquare(*np.array(table)).statistic)

    def test_higher_is_better(self):
        r = friedman_ranks([[0.9, 0.8], [0.1, 0.2]], higher_is_better=True)
        assert r.mean_ranks.tolist() == [1.0, 2.0]

    def test_nan_rejected(self):
        with pytest.raises(InputError):
            friedman_ranks([[1.0, np.nan], [2.0, 3.0]])


class TestConfig:
    def test_yaml_round_trip(self, tmp_path):
        cfg = tiny_config()
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump(cfg.to_dict()))
        assert load_config(path) == cfg

    def test_encoder_shape_keys(self, tmp_path):
        cfg = ExperimentConfig.from_dict({"hidden": [16, 8], "activation": "tanh", "latent_dim": 3})
        assert cfg.hidden == (16, 8) and cfg.activation == "tanh"
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump(cfg.to_dict()))
        assert load_config(path) == cfg
        with pytest.raises(InputError):
            ExperimentConfig.from_dict({"activation": "sigmoid"})
        with pytest.raises(InputError):
            ExperimentConfig.from_dict({"hidden": [0]})

    def test_defaults(self):
        cfg = ExperimentConfig.from_dict({})
        assert cfg.k == 5 and cfg.datasets[0].dgp.n == 6000 and cfg.datasets[0].dgp.lambda_mix == 8.0
        assert cfg.replication_seeds() == [0, 1, 2, 3, 4]

    def test_explicit_seeds(self):
        cfg = ExperimentConfig.from_dict({"seeds": [3, 9]})
        assert cfg.replications == 2 and cfg.replication_seeds() == [3, 9]

    def test_invalid(self):
        with pytest.raises(InputError):
            ExperimentConfig.from_dict({"replications": 0})
        with pytest.raises(InputError):
            ExperimentConfig.from_dict({"bogus": 1})
        with pytest.raises(InputError):
            ExperimentConfig.from_dict({"methods": [{"name": "x", "estimator": "ols"}]})
        with pytest.raises(InputError):
            ExperimentConfig.from_dict({"replications": 3, "seeds": [1, 2]})


class TestRunExperiment:
    def test_files_and_reproducibility(self, tmp_path):
        cfg = tiny_config()
        a = run_experiment(cfg, tmp_path / "a")
        b = run_experiment(cfg, tmp_path / "b")
        assert [r["theta_hat"] for r in a.records] == [r["theta_hat"] for r in b.records]
        assert all(r["error"] is None for r in a.records)
        records = read_replications(tmp_path / "a" / "replications.json")
        with (tmp_path / "a" / "summary.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert {r["schema_version"] for r in rows} == {"1"}
        for row in rows:
            mine = [r for r in records if r["method"] == row["method"]]
            m = error_metrics([r["theta_hat"] for r in mine], [r["theta_true"] for r in mine])
            assert abs(m["mae"] - float(row["mae"])) <= 1e-12
            assert abs(m["rmse"] - float(row["rmse"])) <= 1e-12
            assert float(row["mae"]) <= float(row["rmse"]) + 1e-12

    def test_parallel_matches_serial(self):
        cfg = tiny_config()
        serial = run_experiment(cfg, False, workers=1)
        parallel = run_experiment(cfg, False, workers=2)
        assert [r["theta_hat"] for r in serial.records] == [r["theta_hat"] for r in parallel.records]

    def test_failures_recorded(self, tmp_path):
        bad = DatasetSpec(source="csv", path=str(tmp_path / "missing.csv"))
        table = run_experiment(tiny_config(datasets=(bad,)), False)
        cell = table.cells[0]
        assert cell.thetas == [] and len(cell.errors) == 2
        assert math.isnan(cell.mae)

    def test_csv_source(self, tmp_path):
        from ddml.synthgen import generate, write_csv
        data = generate(DgpConfig(n=60, d=10, seed=1))
        write_csv(data, tmp_path / "d.csv")
        ds = DatasetSpec(source="csv", path=str(tmp_path / "d.csv"), theta_true=5.0)
        table = run_experiment(tiny_config(datasets=(ds,), replications=1), False)
        assert table.cells[0].errors == []
        assert table.cells[0].truths == [5.0]


class TestRankFeatures:
    def test_dominant_column_first(self):
        wins = 0
        method = MethodSpec("DML-RF", "dml", NuisanceSpec(kind="random-forest", n_trees=20))
        cfg = tiny_config(k=2)
        for seed in range(5):
            rng = make_rng(seed, "rank")
            x = rng.standard_normal((120, 4))
            y = 3 * x[:, 0] + 0.5 * rng.standard_normal(120)
            ranked = rank_features(Dataset(x, y, y, "continuous"), method, cfg, seed)
            wins += ranked[0].index == 0
        assert wins >= 4

    def test_constant_columns(self):
        data = Dataset(np.ones((20, 3)), np.zeros(20), np.arange(20.0), "continuous")
        ranked = rank_features(data, MethodSpec("m", "dml", RF), tiny_config())
        assert [f.index for f in ranked] == [0, 1, 2]
        assert all(f.theta_hat == 0.0 and f.flag == "constant" for f in ranked)

    def test_matches_per_column_rerun(self):
        rng = make_rng(7)
        x = rng.standard_normal((60, 5))
        x[:, 2] = (x[:, 2] > 0).astype(float)
        y = x[:, 1] - 2 * x[:, 2] + rng.standard_normal(60)
        data = Dataset(x, y, y, "continuous")
        method = MethodSpec("m", "dml", RF)
        cfg = tiny_config()
        ranked = {f.index: f for f in rank_features(data, method, cfg, seed=3)}
        for j in range(5):
            kind = "binary" if j == 2 else "continuous"
            sub = Dataset(np.delete(x, j, axis=1), x[:, j], y, kind)
            assert ranked[j].theta_hat == run_method(sub, method, cfg, 3).theta_hat
            assert ranked[j].kind == kind


def test_diagnostics_grid_shape():
    report = run_diagnostics(tiny_config())
    grid = report.probe_grid[("Binary_10", "DDML-RF")]
    assert grid.shape == (3, 2)
    assert np.all((grid[:, 0] >= 0) & (grid[:, 0] <= 1)) and np.all(grid[:, 1] <= 1)
    assert len(report.residual_corr[("Binary_10", "DML-RF")]) == 2


class TestCli:
    def test_nemenyi(self, capsys):
        assert main(["nemenyi", "--methods", "7", "--tasks", "12"]) == 0
        assert json.loads(capsys.readouterr().out)["cd"] == pytest.approx(2.60, abs=0.01)

    def test_nemenyi_with_scores(self, tmp_path, capsys):
        path = tmp_path / "scores.csv"
        path.write_text("method,t1,t2\na,0.1,0.2\nb,0.3,0.4\n")
        assert main(["nemenyi", "--methods", "2", "--tasks", "2", "--scores", str(path)]) == 0
        assert json.loads(capsys.readouterr().out)["mean_ranks"] == {"a": 1.0, "b": 2.0}

    def test_error_record(self, capsys):
        assert main(["nemenyi", "--methods", "12", "--tasks", "3"]) == 1
        record = json.loads(capsys.readouterr().err)
        assert record["error"] == "InputError" and record["command"] == "nemenyi"

    def test_generate_and_run(self, tmp_path, capsys):
        csv_path = tmp_path / "b.csv"
        assert main(["generate", "--n", "40", "--d", "10", "--seed", "2", "--out", str(csv_path)]) == 0
        assert csv_path.read_text().splitlines()[0].endswith(",T,Y")
        cfg_path = tmp_path / "cfg.yaml"
        cfg_path.write_text(yaml.safe_dump(tiny_config(replications=1).to_dict()))
        out = tmp_path / "res"
        assert main(["run", "--config", str(cfg_path), "--out", str(out), "--seed", "4"]) == 0
        records = read_replications(out / "replications.json")
        assert [r["seed"] for r in records] == [4, 4]

    def test_rank_features_from_csv(self, tmp_path, capsys):
        csv_path = tmp_path / "b.csv"
        main(["generate", "--n", "40", "--d", "10", "--seed", "2", "--out", str(csv_path)])
        cfg_path = tmp_path / "cfg.yaml"
        cfg_path.write_text(yaml.safe_dump(tiny_config(replications=1).to_dict()))
        capsys.readouterr()
        assert main(["rank-features", "--config", str(cfg_path), "--data", str(csv_path),
                     "--method", "DML-RF", "--out", str(tmp_path / "rank")]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 11  # x0..x9 and T
        assert (tmp_path / "rank" / "feature_ranking.csv").exists()

    def test_missing_config(self, capsys):
        assert main(["run", "--config", "/nonexistent/cfg.yaml"]) == 1
        assert "error" in json.loads(capsys.readouterr().err)
