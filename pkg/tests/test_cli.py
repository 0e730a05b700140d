import csv
import json

import numpy as np
import pytest

from ogclust import cli
from ogclust.errors import ValidationError


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return str(path)


@pytest.fixture
def toy_files(tmp_path):
    o = _write(tmp_path / "y.csv", ["id", "y"], [["S1", 1.0], ["S2", 2.5], ["S3", -0.5]])
    g = _write(tmp_path / "g.csv", ["id", "a", "b"], [["S3", 0.1, 0.2], ["S1", 1.0, 0.0], ["S2", -1.0, 3.0]])
    x = _write(tmp_path / "x.csv", ["id", "age"], [["S2", 40], ["S1", 50], ["S3", 60]])
    return o, x, g


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert cli.main(["simulate", "--out", str(out), "--n", "120", "--q", "30", "--seed", "5"]) == 0
    return out


def _sim_args(d):
    return ["--outcome", str(d / "outcome.csv"), "--covariates", str(d / "covariates.csv"),
            "--features", str(d / "features.csv")]


def test_ingest_aligns_by_id(toy_files):
    o, x, g = toy_files
    d = cli.ingest_csv(o, x, g)
    assert d.n == 3 and d.sample_ids == ("S1", "S2", "S3")
    assert np.array_equal(d.G[0], [1.0, 0.0]) and d.X[:, 0].tolist() == [50, 40, 60]
    assert d.feature_ids == ("a", "b")


def test_missing_id_is_named(tmp_path, toy_files):
    o, _, _ = toy_files
    g = _write(tmp_path / "g2.csv", ["id", "a"], [["S1", 1.0], ["S3", 2.0]])
    with pytest.raises(ValidationError, match="'S2'"):
        cli.ingest_csv(o, None, g)


def test_event_domain_error(tmp_path, toy_files):
    _, _, g = toy_files
    o = _write(tmp_path / "s.csv", ["id", "time", "event"], [["S1", 1.0, 1], ["S2", 2.0, 2], ["S3", 3.0, 0]])
    with pytest.raises(ValidationError, match="event value 2"):
        cli.ingest_csv(o, None, g)


def test_duplicate_and_nonnumeric(tmp_path, toy_files):
    o, _, _ = toy_files
    g = _write(tmp_path / "d.csv", ["id", "a"], [["S1", 1.0], ["S1", 2.0], ["S2", 0.0]])
    with pytest.raises(ValidationError, match="duplicate"):
        cli.ingest_csv(o, None, g)
    g = _write(tmp_path / "n.csv", ["id", "a"], [["S1", 1.0], ["S2", "abc"], ["S3", 0.0]])
    with pytest.raises(ValidationError, match="line 3"):
        cli.ingest_csv(o, None, g)


def test_exit_codes(tmp_path, toy_files):
    o, _, g = toy_files
    assert cli.main(["fit", "--outcome", str(tmp_path / "nope.csv"), "--features", g,
                     "--out", str(tmp_path / "o")]) == cli.EXIT_IO
    bad = _write(tmp_path / "s.csv", ["id", "time", "event"], [["S1", 1.0, 1], ["S2", 2.0, 2], ["S3", 3.0, 0]])
    assert cli.main(["fit", "--outcome", bad, "--features", g, "--out", str(tmp_path / "o")]) == \
        cli.EXIT_VALIDATION
    assert len({cli.EXIT_VALIDATION, cli.EXIT_FIT, cli.EXIT_IO, 0}) == 4


def test_config_precedence(tmp_path):
    cfgfile = tmp_path / "c.txt"
    cfgfile.write_text("k = 4\nrestarts = 2  # comment\npenalty = lasso\n")
    args = cli.build_parser().parse_args(["fit", "--config", str(cfgfile), "--k", "2"])
    cfg = cli.resolve(args)
    assert cfg["k"] == 2 and cfg["restarts"] == 2 and cfg["penalty"] == "lasso" and cfg["seed"] == 0
    cfgfile.write_text("kk = 4\n")
    with pytest.raises(ValidationError, match="unknown key"):
        cli.resolve(cli.build_parser().parse_args(["fit", "--config", str(cfgfile)]))


def test_full_shrinkage_has_empty_gamma(sim_dir, tmp_path):
    out = tmp_path / "fit"
    assert cli.main(["fit", *_sim_args(sim_dir), "--k", "3", "--lambda", "1e6", "--restarts", "1",
                     "--out", str(out)]) == 0
    d = json.loads((out / "theta.json").read_text())
    assert d["gamma"] == [] and d["selected_features"] == []


def test_theta_round_trip_predict_is_bit_identical(sim_dir, tmp_path):
    out = tmp_path / "fit"
    assert cli.main(["fit", *_sim_args(sim_dir), "--k", "3", "--lambda", "20", "--restarts", "2",
                     "--out", str(out)]) == 0
    pred = tmp_path / "pred"
    assert cli.main(["predict", "--theta", str(out / "theta.json"), "--features",
                     str(sim_dir / "features.csv"), "--covariates", str(sim_dir / "covariates.csv"),
                     "--out", str(pred)]) == 0
    assert (out / "assignments.csv").read_bytes() == (pred / "assignments.csv").read_bytes()
    theta, d = cli.load_theta(out / "theta.json")
    again = cli.theta_to_dict(theta, d["features"], d["covariates"], d["seed"], d["objective_trace"],
                              d["reference_cluster"])
    for key in again:
        assert again[key] == d[key]
    assert d["beta0"] == sorted(d["beta0"])


def test_fit_is_byte_deterministic(sim_dir, tmp_path):
    outs = []
    for r in range(2):
        out = tmp_path / f"run{r}"
        assert cli.main(["fit", *_sim_args(sim_dir), "--k", "3", "--lambda-grid", "40,20,10",
                         "--restarts", "2", "--seed", "3", "--out", str(out)]) == 0
        outs.append(out)
    for name in ("theta.json", "assignments.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_path_and_cv_outputs(sim_dir, tmp_path):
    out = tmp_path / "path"
    assert cli.main(["path", *_sim_args(sim_dir), "--k-grid", "2,3", "--n-lambda", "3", "--restarts", "1",
                     "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "path.csv")))
    assert len(rows) == 6 and sum(r["status"] == "winner" for r in rows) == 1
    cvo = tmp_path / "cv"
    assert cli.main(["cv", *_sim_args(sim_dir), "--k", "3", "--lambda", "20", "--folds", "3",
                     "--restarts", "1", "--truth", str(sim_dir / "truth.csv"), "--out", str(cvo)]) == 0
    m = list(csv.DictReader(open(cvo / "metrics.csv")))
    assert float(m[0]["ARI"]) > 0.3
    preds = list(csv.DictReader(open(cvo / "cv_predictions.csv")))
    assert len(preds) == 120


def test_bench_metrics_layout_and_determinism(tmp_path):
    outs = []
    for r in range(2):
        out = tmp_path / f"b{r}"
        assert cli.main(["bench", "--n", "100", "--q", "30", "--replicates", "1", "--folds", "3",
                         "--restarts", "1", "--out", str(out)]) == 0
        outs.append(out)
    header = (outs[0] / "metrics.csv").read_text().splitlines()[0]
    assert header == "method,model,estK,ARI,FP,FN,RMSE,R2"
    assert (outs[0] / "metrics.csv").read_bytes() == (outs[1] / "metrics.csv").read_bytes()


def test_survival_simulation_ingests(tmp_path):
    out = tmp_path / "surv"
    assert cli.main(["simulate", "--survival", "D", "--n", "60", "--q", "30", "--out", str(out)]) == 0
    d = cli.ingest_csv(out / "outcome.csv", out / "covariates.csv", out / "features.csv")
    assert d.is_survival and d.n == 60


def test_worker_count(monkeypatch):
    monkeypatch.delenv("OGCLUST_THREADS", raising=False)
    assert cli.worker_count() == 1
    monkeypatch.setenv("OGCLUST_THREADS", "2")
    assert 1 <= cli.worker_count() <= 2
    monkeypatch.setenv("OGCLUST_THREADS", "x")
    with pytest.raises(ValidationError):
        cli.worker_count()
