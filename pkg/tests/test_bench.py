import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from genforest.baselines import surrogate_proba
from genforest.bench import (
    ConsistencyConfig,
    CounterexampleConfig,
    ExperimentConfig,
    OutlierConfig,
    run_consistency_experiment,
    run_knn_counterexample,
    run_missing_benchmark,
)
from genforest.bench.config import bundled_datasets, load_dataset
from genforest.bench.experiments import ExperimentReport, leaf_masses, sample_gedt
from genforest.bench.metrics import auc_pairs, auc_roc, emit_histograms, histogram_table, mean_halfwidth
from genforest.bench.serialize import Corrupted, UnsupportedVersion, dumps, load_model, loads, save_model
from genforest.cli import main
from genforest.convert import dt_to_gedt, leaf_fitter, rf_to_gef
from genforest.forest import ForestParams, learn_forest, predict_forest
from genforest.inference import outlier_score, predict, predict_gedt
from genforest.synthetic import default_mixture

from oracles import u_statistic


# ---- metrics


def test_auc_examples():
    assert auc_roc([-1, -2], [-5, -6]) == 1.0
    assert auc_roc([1, 2, 3], [1, 2, 3]) == 0.5
    assert auc_roc([1, 3], [2, 4]) == 0.25 == u_statistic([1, 3], [2, 4])


def test_auc_empty_input():
    with pytest.raises(ValueError):
        auc_roc([], [1.0])


@given(st.lists(st.integers(-5, 5), min_size=1, max_size=50), st.lists(st.integers(-5, 5), min_size=1, max_size=50))
def test_auc_equals_pair_oracle(a, b):
    assert auc_roc(a, b) == u_statistic(a, b) == auc_pairs(a, b)


@given(st.lists(st.integers(-50, 50), min_size=1, max_size=30), st.lists(st.integers(-50, 50), min_size=1, max_size=30))
def test_auc_invariant_to_monotone_maps(a, b):
    f = lambda v: np.exp(np.asarray(v) / 10.0)
    assert auc_roc(a, b) == auc_roc(f(a), f(b))


def test_auc_handles_neg_inf():
    assert auc_roc([0.0, -1.0], [-np.inf, -np.inf]) == 1.0


def test_halfwidth_formula():
    v = [0.8, 0.9, 1.0]
    mean, hw = mean_halfwidth(v)
    assert mean == pytest.approx(0.9)
    assert hw == pytest.approx(1.96 * np.std(v, ddof=1) / np.sqrt(3))


def test_single_bin_density():
    centers, dens, edges = histogram_table({"a": [1.0, 1.2, 1.4]}, bins=[1.0, 1.5])
    assert dens["a"][0] == pytest.approx(1 / 0.5)


def test_histogram_empty_group_dropped(tmp_path, caplog):
    path = emit_histograms({"a": [0.0, 1.0], "b": []}, 4, tmp_path / "h.tsv")
    lines = path.read_text().splitlines()
    assert lines[0].split("\t") == ["bin_center", "a"]
    assert "omitted" in caplog.text


def test_histogram_two_groups_share_edges(tmp_path):
    path = emit_histograms({"in": [0.0, 1.0, 2.0], "out": [1.5, 3.0]}, 3, tmp_path / "h.tsv")
    rows = [r.split("\t") for r in path.read_text().splitlines()]
    assert rows[0] == ["bin_center", "in", "out"] and len(rows) == 4
    width = 1.0
    for col in (1, 2):
        assert sum(float(r[col]) for r in rows[1:]) * width == pytest.approx(1.0)


# ---- serialisation


def model_variants():
    mix = default_mixture().dataset(150, 2)
    f = learn_forest(mix, ForestParams(n_trees=4, surrogates=3), seed=0)
    out = {"forest": f}
    for leaf in ("factorized", "uniform", "learnspn", "constant"):
        gef = rf_to_gef(f, mix, leaf_fitter(leaf, mix), "gef", leaf)
        out[f"gef-{leaf}"] = gef
        out[f"gefplus-{leaf}"] = gef.with_mode("gefplus")
    return out, mix


def probes(n=100, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2)) * 2
    return X, rng.random((n, 2)) < 0.3


def test_roundtrip_bit_exact(tmp_path):
    models, _ = model_variants()
    X, miss = probes()
    for name, model in models.items():
        back = load_model(save_model(model, tmp_path / f"{name}.json"))
        if name == "forest":
            np.testing.assert_array_equal(predict_forest(back, X), predict_forest(model, X))
            np.testing.assert_array_equal(surrogate_proba(back, X, miss), surrogate_proba(model, X, miss))
            continue
        assert back.mode == model.mode and back.leaf == model.leaf
        np.testing.assert_array_equal(predict(back, X, miss).probs, predict(model, X, miss).probs)
        if model.mode == "gefplus":
            np.testing.assert_array_equal(outlier_score(back, X, miss), outlier_score(model, X, miss))


def test_toy_gedt_saved_as_forest(toy):
    _, _, g = toy
    back = loads(dumps(g))
    assert back.n_trees == 1
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.integers(0, 2, 100), rng.random(100)])
    miss = rng.random((100, 2)) < 0.5
    np.testing.assert_array_equal(predict(back, X, miss).probs, predict_gedt(g, X, miss).probs)


def test_truncated_file_is_corrupted(tmp_path):
    models, _ = model_variants()
    text = dumps(models["gef-factorized"])
    p = tmp_path / "m.json"
    p.write_text(text[: len(text) // 2])
    with pytest.raises(Corrupted):
        load_model(p)


def test_future_version_rejected():
    models, _ = model_variants()
    doc = json.loads(dumps(models["forest"]))
    doc["version"] = 99
    with pytest.raises(UnsupportedVersion):
        loads(json.dumps(doc))


def test_document_is_deterministic():
    models, _ = model_variants()
    assert dumps(models["gef-factorized"]) == dumps(loads(dumps(models["gef-factorized"])))


# ---- configs


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"trees": 3})


def test_config_validates_rates_and_methods():
    with pytest.raises(ValueError):
        ExperimentConfig(rates=(1.0,))
    with pytest.raises(ValueError):
        ExperimentConfig(methods=("missforest",))


def test_config_json_roundtrip(tmp_path):
    cfg = ExperimentConfig(datasets=("iris",), rates=(0.1, 0.3), n_trees=5)
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.from_json(p) == cfg


def test_bundled_datasets_present():
    names = bundled_datasets()
    assert len(names) >= 3
    for name in names:
        d = load_dataset(name)
        assert 100 <= d.n <= 5000 and d.complete


# ---- runners


SMALL = ExperimentConfig(datasets=("iris",), methods=("rf", "surrogate", "friedman", "mean", "knn", "gef", "gefplus"),
                         rates=(0.0, 0.3), n_trees=8, folds=3, repeats=1, seed=5)


def test_report_shape_and_rate_zero_identity():
    rep = run_missing_benchmark(SMALL)
    rows = rep.rows()
    assert len(rows) == len(SMALL.methods) * len(SMALL.rates)
    assert all(r["runs"] == 3 for r in rows)
    rf = rep.runs[("iris", "rf", 0.0)]
    for m in ("surrogate", "mean", "knn", "gef"):
        assert rep.runs[("iris", m, 0.0)] == rf


def test_report_reproducible():
    cfg = ExperimentConfig(datasets=("iris",), methods=("rf", "gef", "knn"), rates=(0.3,), n_trees=5, folds=2,
                           repeats=1)
    assert run_missing_benchmark(cfg).to_tsv() == run_missing_benchmark(cfg).to_tsv()


def test_report_halfwidth_column():
    rep = ExperimentReport()
    for a in (0.5, 0.7):
        rep.add("d", "gef", 0.3, a)
    row = rep.rows()[0]
    assert row["accuracy"] == pytest.approx(0.6)
    assert row["halfwidth"] == pytest.approx(1.96 * np.std([0.5, 0.7], ddof=1) / np.sqrt(2))


def test_consistency_small_run():
    rows = run_consistency_experiment(ConsistencyConfig(sizes=(100, 2000), seeds=1, mc_samples=4000,
                                                        test_samples=2000))
    assert rows[1]["l1"] < rows[0]["l1"]
    prior_err = 1 - default_mixture().prior.max()
    assert rows[1]["err[none]"] == pytest.approx(prior_err, abs=0.03)
    assert rows[1]["bayes[none]"] == pytest.approx(prior_err)


def test_leaf_masses_and_sampling(toy):
    _, _, g = toy
    _, mass = leaf_masses(g)
    assert sorted(mass.tolist()) == pytest.approx([0.2, 0.4, 0.4])
    mix = default_mixture().dataset(300, 0)
    from genforest.bench.experiments import consistency_tree
    gt = consistency_tree(mix, 0)
    X, y = sample_gedt(gt, 500, 1)
    from genforest.bench.experiments import gedt_log_joint
    assert np.isfinite(gedt_log_joint(gt, X, y)).all()


def test_counterexample_huge_eps_is_easy():
    rows = run_knn_counterexample(CounterexampleConfig(eps_factors=(8.0,), n_train=2000, n_test=300, n_trees=3,
                                                       knn_k=50, seeds=1))
    assert rows[0]["knn"] > 0.99 and rows[0]["gef"] > 0.99


def test_outlier_runner_writes_files(tmp_path):
    from genforest.bench import run_outlier_experiment
    res = run_outlier_experiment(OutlierConfig(n_train=300, n_test=100, n_trees=5, out=str(tmp_path)))
    assert 0.5 < res["auc"] <= 1.0
    assert (tmp_path / "outlier_histograms.tsv").exists() and (tmp_path / "outlier.tsv").exists()


# ---- command line


def test_cli_train_convert_predict(tmp_path, capsys):
    forest = tmp_path / "rf.json"
    gef = tmp_path / "gef.json"
    assert main(["train", "--data", "iris", "--trees", "5", "--out", str(forest)]) == 0
    assert main(["convert", "--model", str(forest), "--data", "iris", "--mode", "gefplus", "--out", str(gef)]) == 0
    csv = tmp_path / "q.csv"
    src = load_dataset("iris")
    names = [c.name for c in src.schema.columns]
    csv.write_text(",".join(names) + "\n" + ",".join(["5.1", "", "1.4", "", src.schema.target.categories[0]]) + "\n")
    (tmp_path / "q.schema.json").write_text(json.dumps(src.schema.to_dict()))
    capsys.readouterr()
    assert main(["predict", "--model", str(gef), "--data", str(csv), "--mode", "gef"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("row\t") and len(out) == 2


def test_cli_plain_forest_refuses_missing(tmp_path):
    forest = tmp_path / "rf.json"
    main(["train", "--data", "iris", "--trees", "2", "--out", str(forest)])
    src = load_dataset("iris")
    csv = tmp_path / "q.csv"
    csv.write_text(",".join(c.name for c in src.schema.columns) + "\n,,,,"
                   + src.schema.target.categories[0] + "\n")
    (tmp_path / "q.schema.json").write_text(json.dumps(src.schema.to_dict()))
    with pytest.raises(SystemExit):
        main(["predict", "--model", str(forest), "--data", str(csv)])


def test_cli_bench_missing(tmp_path, capsys):
    code = main(["bench-missing", "--datasets", "iris", "--methods", "rf", "gef", "--rate", "0.3", "--trees", "3",
                 "--folds", "2", "--repeats", "1", "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "missing_benchmark.tsv").exists()
    assert "gef" in capsys.readouterr().out


def test_cli_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"sizes": [100, 300], "seeds": 1, "mc_samples": 1000, "test_samples": 500}))
    assert main(["bench-consistency", "--config", str(cfg)]) == 0
    assert capsys.readouterr().out.startswith("n\tl1")


def test_cli_reports_bad_input(tmp_path, capsys):
    assert main(["convert", "--model", str(tmp_path / "nope.json"), "--data", "iris", "--out", "x"]) == 2
    assert "error" in capsys.readouterr().err
