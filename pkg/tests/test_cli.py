import csv
import json

import numpy as np
import pytest

from condustat.cli import main
from condustat.harness import generate_sample


@pytest.fixture
def workdir(tmp_path):
    s = generate_sample("paper-sec4", 300, 4)
    with open(tmp_path / "data.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "z1"])
        for x, z in zip(s.xs[:, 0], s.zs[:, 0]):
            w.writerow([repr(float(x)), repr(float(z))])
    (tmp_path / "q.csv").write_text("z1,z2\n0.3,-0.3\n0,0\n")
    (tmp_path / "q1.csv").write_text("z1,z2\n0.3,-0.3\n")
    cfg = {
        "functional": "rank_prob", "h": 0.3, "kernel": "epanechnikov",
        "basis": {"family": "polynomial", "degree": 1, "include_constant": False},
        "link": "probit", "design_points": [-0.5, 0, 0.5],
        "penalty": {"lambda": 0.001}, "kappa": {"s": 1, "c0": 3},
    }
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    return tmp_path


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_estimate(workdir):
    out = workdir / "est.csv"
    rc = main(["estimate", "--data", str(workdir / "data.csv"), "--config", str(workdir / "cfg.json"),
               "--queries", str(workdir / "q.csv"), "--out", str(out)])
    assert rc == 0
    rows = _rows(out)
    assert len(rows) == 2
    assert abs(float(rows[1]["theta_hat"]) - 0.5) < 0.15
    assert float(rows[0]["nk"]) > 0


def test_fit_and_predict(workdir):
    fit_dir = workdir / "fit"
    rc = main(["fit", "--data", str(workdir / "data.csv"), "--config", str(workdir / "cfg.json"),
               "--out", str(fit_dir)])
    assert rc == 0
    fit = json.loads((fit_dir / "fit.json").read_text())
    assert len(fit["beta"]) == 2 and fit["kkt_residual"] <= 1e-6
    assert "kappa_report" in fit
    assert len(_rows(fit_dir / "tuples.csv")) == 6
    out = workdir / "pred.csv"
    assert main(["predict", "--fit", str(fit_dir / "fit.json"), "--queries", str(workdir / "q.csv"),
                 "--out", str(out)]) == 0
    preds = [float(r["theta_pred"]) for r in _rows(out)]
    assert all(0 < v < 1 for v in preds)
    assert preds[1] == pytest.approx(0.5, abs=1e-12)


def test_bounds_preset(workdir):
    out = workdir / "b.json"
    rc = main(["bounds", "--preset", "paper-sec4", "--h", "0.2", "--n", "651", "--out", str(out)])
    assert rc == 0
    rep = json.loads(out.read_text())
    assert rep["results"]["existence"]["raw"] == pytest.approx(0.9053573932, abs=1e-9)
    assert rep["results"]["min_sample_size"]["n"] == 1130


def test_bounds_error_exit(workdir):
    spec = {"preset": "paper-sec4", "requests": {"bad": {"kind": "nope"}}}
    (workdir / "bad.json").write_text(json.dumps(spec))
    assert main(["bounds", "--config", str(workdir / "bad.json"), "--out", str(workdir / "o.json")]) == 1


def test_asymvar_kinds(workdir):
    out = workdir / "a.json"
    assert main(["asymvar", "--queries", str(workdir / "q1.csv"), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["kind"] == "rho_sq"
    assert rep["rho_sq"] == pytest.approx(0.1548170464912135, rel=1e-9)
    assert main(["asymvar", "--queries", str(workdir / "q.csv"), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["kind"] == "H"
    (workdir / "av.json").write_text(json.dumps({"design_points": [-0.5, 0.5], "link": "logit"}))
    assert main(["asymvar", "--config", str(workdir / "av.json"), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["kind"] == "tilde_H" and np.asarray(rep["value"]).shape == (2, 2)


def test_simulate(workdir, capsys):
    out = workdir / "sim"
    rc = main(["simulate", "existence", "--reps", "20", "--out", str(out)])
    text = capsys.readouterr().out
    assert "existence_frequency" in text and rc in (0, 1)
    assert (out / "existence_records.csv").exists() and (out / "existence_report.json").exists()


def test_bad_inputs_exit_2(workdir):
    assert main(["estimate", "--data", str(workdir / "missing.csv"), "--config", str(workdir / "cfg.json"),
                 "--queries", str(workdir / "q.csv")]) == 2
    (workdir / "q3.csv").write_text("z1\n0.1\n")
    assert main(["estimate", "--data", str(workdir / "data.csv"), "--config", str(workdir / "cfg.json"),
                 "--queries", str(workdir / "q3.csv")]) == 2
