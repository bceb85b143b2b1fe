import json

import numpy as np
import pytest

from hydrofriction import io
from hydrofriction.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, run
from hydrofriction.errors import DataError, OrderingError, RateError, UnsupportedVersion
from hydrofriction.inverse import DEFAULT_EPS_V, StiffnessModel, label_dataset
from hydrofriction.lugre import LuGreParams
from hydrofriction.plant import CylinderGeometry, ScenarioConfig, generate_scenario
from hydrofriction.signals import TimeSeries, preprocess


def _series(n=60, f_true=False):
    rng = np.random.default_rng(0)
    t = np.arange(n) * 0.005
    return TimeSeries(t, rng.uniform(0, 0.2, n), rng.uniform(0, 1e7, n), rng.uniform(0, 1e7, n),
                      rng.normal(size=n) if f_true else None)


class TestCsv:
    @pytest.mark.parametrize("with_truth", [False, True])
    def test_dataset_round_trip_bytes(self, tmp_path, with_truth):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        io.write_dataset(_series(f_true=with_truth), a)
        s = io.read_dataset(a)
        io.write_dataset(s, b)
        assert a.read_bytes() == b.read_bytes()
        assert s.p1.tobytes() == _series(f_true=with_truth).p1.tobytes()

    def test_labeled_round_trip_bytes(self, tmp_path):
        s = _series(200)
        ds = label_dataset(preprocess(s), CylinderGeometry(),
                           StiffnessModel.from_geometry(CylinderGeometry()))
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        io.write_labeled(ds, a)
        back = io.read_labeled(a)
        io.write_labeled(back, b)
        assert a.read_bytes() == b.read_bytes()
        assert np.array_equal(back.regime, ds.regime)
        assert b"\r" not in a.read_bytes()

    def test_header_mismatch_names_expected(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("time,x,p1,p2\n0,0,0,0\n")
        with pytest.raises(DataError, match="t,x_p,p1,p2"):
            io.read_dataset(p)

    def test_out_of_order_names_line(self, tmp_path):
        s = _series(60)
        s.t[35] = s.t[34] - 0.001
        p = tmp_path / "o.csv"
        io.write_dataset(s, p)
        with pytest.raises(OrderingError, match="line 37"):
            io.read_dataset(p)

    def test_irregular_rate(self, tmp_path):
        s = _series(60)
        s.t[20:] += 0.002
        p = tmp_path / "r.csv"
        io.write_dataset(s, p)
        with pytest.raises(RateError, match="line 22"):
            io.read_dataset(p)

    @pytest.mark.parametrize("row, msg", [("0.005,1,2", "expected 4 fields"),
                                          ("0.005,abc,1,2", "cannot parse"),
                                          ("0.005,nan,1,2", "non-finite")])
    def test_malformed_rows(self, tmp_path, row, msg):
        p = tmp_path / "m.csv"
        p.write_text("t,x_p,p1,p2\n0,0,0,0\n" + row + "\n")
        with pytest.raises(DataError, match=f"line 3: {msg}"):
            io.read_dataset(p)


class TestModelFiles:
    P = LuGreParams(1e6, 300.0, 800.0, 150.0, 250.0, 0.01)

    def test_lugre_round_trip(self, tmp_path):
        p = tmp_path / "m.json"
        io.save_model(self.P, p, {"seed": 1})
        kind, model, doc = io.load_model(p)
        assert kind == "lugre" and model == self.P
        assert doc["provenance"]["seed"] == 1 and "toolkit_version" in doc["provenance"]

    def test_truncated(self, tmp_path):
        p = tmp_path / "m.json"
        io.save_model(self.P, p)
        text = p.read_text()
        p.write_text(text[: len(text) // 2])
        with pytest.raises(DataError):
            io.load_model(p)

    def test_future_version(self, tmp_path):
        p = tmp_path / "m.json"
        io.save_model(self.P, p)
        doc = json.loads(p.read_text())
        doc["format_version"] += 1
        p.write_text(json.dumps(doc))
        with pytest.raises(UnsupportedVersion):
            io.load_model(p)

    def test_malformed_payload(self, tmp_path):
        p = tmp_path / "m.json"
        io.save_model(self.P, p)
        doc = json.loads(p.read_text())
        doc["payload"]["params"]["f_s"] = 1.0  # below f_c
        p.write_text(json.dumps(doc))
        with pytest.raises(DataError):
            io.load_model(p)


class TestConfigs:
    def test_scenario_round_trip(self, tmp_path):
        cfg = ScenarioConfig(test_id=3, duration=12.5, seed=9)
        p = tmp_path / "s.ini"
        io.write_scenario_config(p, cfg, CylinderGeometry(moving_mass=30.0))
        got, geom = io.read_scenario_config(p)
        assert got == cfg and geom.moving_mass == 30.0

    def test_geometry_round_trip(self, tmp_path):
        p = tmp_path / "g.ini"
        io.write_geometry_config(p, CylinderGeometry(stroke=0.3), spring_term=False)
        geom, spring, eps = io.read_geometry_config(p)
        assert geom.stroke == 0.3 and spring is False and eps == DEFAULT_EPS_V


# ---------------------------------------------------------------- CLI


def test_usage_errors(tmp_path, capsys):
    assert run([]) == EXIT_USAGE
    assert run(["preprocess", "--out", str(tmp_path / "x.csv")]) == EXIT_USAGE
    assert run(["fit-lugre", "--in", "x", "--out", "y", "--holdout", "1.5"]) in (EXIT_USAGE,
                                                                                   EXIT_DATA)


def test_missing_file_is_data_error(tmp_path):
    assert run(["preprocess", "--in", str(tmp_path / "none.csv"),
                "--out", str(tmp_path / "o.csv")]) == EXIT_DATA


def test_bad_holdout_is_usage_error(tmp_path):
    p = tmp_path / "l.csv"
    s = _series(200)
    io.write_labeled(label_dataset(preprocess(s), CylinderGeometry(),
                                   StiffnessModel.from_geometry(CylinderGeometry())), p)
    assert run(["fit-lugre", "--in", str(p), "--out", str(tmp_path / "m.json"),
                "--holdout", "1.5"]) == EXIT_USAGE


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    geom_ini = d / "geom.ini"
    io.write_geometry_config(geom_ini, CylinderGeometry(), spring_term=False)
    labeled = []
    for tid in (1, 2, 3, 4):
        ini = d / f"s{tid}.ini"
        io.write_scenario_config(ini, ScenarioConfig(test_id=tid, duration=30.0))
        raw, lab = d / f"raw{tid}.csv", d / f"lab{tid}.csv"
        assert run(["--seed", "4", "simulate", "--config", str(ini), "--out", str(raw)]) == 0
        assert run(["label", "--in", str(raw), "--geom", str(geom_ini), "--out", str(lab)]) == 0
        labeled.append(lab)
    model, lug = d / "model.json", d / "lugre.json"
    assert run(["fit-lugre", "--in", str(labeled[0]), "--out", str(lug), "--budget", "20"]) == 0
    assert run(["train", "--in", *map(str, labeled), "--out", str(model), "--epochs", "1",
                "--stride", "12", "--seed", "2", "--curve", str(d / "curve.csv")]) == 0
    return d, labeled, model, lug


def test_pipeline_report(pipeline):
    d, labeled, model, lug = pipeline
    report = d / "report.json"
    assert run(["evaluate", "--model", str(model), "--lugre", str(lug), "--tests",
                ",".join(map(str, labeled)), "--report", str(report)]) == EXIT_OK
    rep = json.loads(report.read_text())
    assert set(rep["tests"]) == {"1", "2", "3", "4"}
    for r in rep["tests"].values():
        assert {"hybrid_mae_percent", "lugre_mae_percent", "hybrid_residuals",
                "parity"} <= set(r)
    assert rep["provenance"]["model_hash"] == io.file_hash(model)
    assert (d / "curve.csv").read_text().startswith("epoch,train_mae,val_mae\n")


def test_estimate_deterministic_and_stream_equal(pipeline):
    d, _, model, lug = pipeline
    raw = d / "raw2.csv"
    outs = []
    for name, extra in (("e1", []), ("e2", []), ("e3", ["--stream"])):
        out = d / f"{name}.csv"
        assert run(["estimate", "--model", str(model), "--in", str(raw), "--out", str(out),
                    *extra]) == 0
        outs.append(out)
    assert outs[0].read_bytes() == outs[1].read_bytes()
    a = np.loadtxt(outs[0], delimiter=",", skiprows=1)
    b = np.loadtxt(outs[2], delimiter=",", skiprows=1)
    assert a.shape == b.shape and np.max(np.abs(a - b)) <= 1e-9
    meta = json.loads((d / "e1.csv.meta.json").read_text())
    assert meta["command"] == "estimate" and str(model) in meta["inputs"]


def test_estimate_with_lugre_model(pipeline):
    d, _, _, lug = pipeline
    out = d / "lg.csv"
    assert run(["estimate", "--model", str(lug), "--in", str(d / "raw1.csv"),
                "--out", str(out)]) == 0
    assert out.read_text().startswith("t,f_hat\n")


def test_evaluate_needs_four_tests(pipeline):
    d, labeled, model, lug = pipeline
    assert run(["evaluate", "--model", str(model), "--lugre", str(lug), "--tests",
                ",".join(map(str, labeled[:3])), "--report", str(d / "r.json")]) == EXIT_USAGE


def test_wrong_model_kind(pipeline):
    d, labeled, model, lug = pipeline
    assert run(["evaluate", "--model", str(lug), "--lugre", str(lug), "--tests",
                ",".join(map(str, labeled)), "--report", str(d / "r.json")]) == EXIT_DATA
