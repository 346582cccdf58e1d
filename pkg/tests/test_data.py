import json

import numpy as np
import pytest
from scipy.spatial import cKDTree

from regimescan import (
    DatasetConfig,
    InputError,
    IoError,
    ModelSpec,
    Region,
    RunResult,
    SynthError,
    SynthSpec,
    build_knn_weights,
    fit_model,
    generate_synthetic,
    half_plane_regions,
    load_dataset,
    quadrant_regions,
    read_results,
    read_trace,
    trace_to_csv,
    write_dataset,
    write_results,
    write_trace,
)
from regimescan.detector import RegimePartition

COLS = DatasetConfig(response="y", x="lon", y="lat", regressors=["x1"])


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_four_row_csv(tmp_path):
    path = write(tmp_path, "y,x1,lon,lat\n1,2,0,0\n2,3,1,0\n3,5,0,1\n4,4,1,1\n")
    d = load_dataset(path, COLS)
    assert d.n == 4
    assert d.X.tolist() == [[1, 2], [1, 3], [1, 5], [1, 4]]
    assert d.names == ["intercept", "x1"]


def test_non_numeric_cell_cites_location(tmp_path):
    path = write(tmp_path, "y,x1,lon,lat\n1,2,0,0\n2,abc,1,0\n3,5,0,1\n4,4,1,1\n")
    with pytest.raises(InputError, match=r"row 2, column 'x1'"):
        load_dataset(path, COLS)


def test_missing_value(tmp_path):
    path = write(tmp_path, "y,x1,lon,lat\n1,2,0,0\n2,,1,0\n3,5,0,1\n4,4,1,1\n")
    with pytest.raises(InputError, match="row 2"):
        load_dataset(path, COLS)


def test_missing_column(tmp_path):
    path = write(tmp_path, "y,x2,lon,lat\n1,2,0,0\n")
    with pytest.raises(InputError, match="x1"):
        load_dataset(path, COLS)


def test_duplicate_coordinates_cite_rows(tmp_path):
    path = write(tmp_path, "y,x1,lon,lat\n1,2,0,0\n2,3,1,0\n3,5,0,0\n4,4,1,1\n")
    with pytest.raises(InputError, match="1&3"):
        load_dataset(path, COLS)


def test_too_few_rows(tmp_path):
    path = write(tmp_path, "y,x1,lon,lat\n1,2,0,0\n2,3,1,0\n3,5,0,1\n")
    with pytest.raises(InputError, match="p\\+3"):
        load_dataset(path, COLS)


def test_missing_file(tmp_path):
    with pytest.raises(IoError):
        load_dataset(tmp_path / "nope.csv", COLS)


def test_baltimore_shape(baltimore):
    assert baltimore.n == 211
    assert baltimore.p == 9
    assert baltimore.names == ["intercept", "dwell", "nbath", "patio", "firepl", "ac", "bment", "gar", "citcou", "lotsz"]


def test_dataset_round_trip(tmp_path, baltimore):
    cols = write_dataset(baltimore, tmp_path / "b.csv")
    again = load_dataset(tmp_path / "b.csv", cols)
    cols2 = write_dataset(again, tmp_path / "b2.csv")
    assert (tmp_path / "b.csv").read_bytes() == (tmp_path / "b2.csv").read_bytes()
    assert np.array_equal(again.X, baltimore.X) and np.array_equal(again.y, baltimore.y)
    assert np.array_equal(again.coords.points, baltimore.coords.points)
    assert cols == cols2


def test_noiseless_single_region_is_exact():
    beta = [1.5, -2.0, 0.25]
    d, truth = generate_synthetic(SynthSpec(50, [Region(beta, halfplane=(0, 0, 1))], noise_sd=0.0, seed=3))
    est = np.linalg.lstsq(d.X, d.y, rcond=None)[0]
    assert np.max(np.abs(est - beta)) < 1e-10
    assert truth.c == 1


def test_half_plane_labels_split_at_line():
    d, truth = generate_synthetic(SynthSpec(200, half_plane_regions([0, 0], [1, 1], split=0.4), seed=1))
    x = d.coords.points[:, 0]
    assert np.array_equal(truth.labels, np.where(x <= 0.4, 1, 2))


def test_quadrants():
    d, truth = generate_synthetic(SynthSpec(300, quadrant_regions([[0, 0], [1, 1], [2, 2], [3, 3]]), seed=2))
    x, y = d.coords.points.T
    ref = 1 + (x > 0.5) + 2 * (y > 0.5)
    assert np.array_equal(truth.labels, ref)


def morans_i(y, pts, k=10):
    _, idx = cKDTree(pts).query(pts, k + 1)
    z = y - y.mean()
    lag = np.array([z[row[1:]].mean() for row in idx])
    return float(z @ lag / (z @ z))


def test_spatial_rho_gives_positive_autocorrelation():
    positive = 0
    for seed in range(100):
        d, _ = generate_synthetic(SynthSpec(100, [Region([0.0, 0.0], halfplane=(0, 0, 1))], spatial_rho=0.5, seed=seed))
        positive += morans_i(d.y, d.coords.points) > 0
    assert positive >= 95


def test_bitwise_deterministic():
    spec = SynthSpec(80, half_plane_regions([1, 2, 3], [0, 0, 0]), spatial_rho=0.3, seed=9)
    a, ta = generate_synthetic(spec)
    b, tb = generate_synthetic(spec)
    assert a.y.tobytes() == b.y.tobytes() and a.X.tobytes() == b.X.tobytes()
    assert np.array_equal(ta.labels, tb.labels)


def test_synth_errors():
    with pytest.raises(SynthError):
        generate_synthetic(SynthSpec(50, [Region([1, 1], halfplane=(1, 0, 0.5))], seed=0))
    with pytest.raises(SynthError):
        generate_synthetic(SynthSpec(50, half_plane_regions([1, 1], [2, 2], split=0.01), seed=0))
    with pytest.raises(SynthError):
        generate_synthetic(SynthSpec(50, [Region([1, 1], halfplane=(0, 0, 1)), Region([1], halfplane=(0, 0, 1))]))


@pytest.fixture(scope="module")
def regime_fit(request):
    baltimore = request.getfixturevalue("baltimore")
    labels = np.where(baltimore.coords.points[:, 0] < np.median(baltimore.coords.points[:, 0]), 1, 2)
    spec = ModelSpec("sar", RegimePartition.from_labels(labels))
    return fit_model(baltimore, build_knn_weights(baltimore.coords, 10), spec), labels


def result_for(fit, labels):
    return RunResult(
        config={"tau": 0.001},
        labels=labels.tolist(),
        bandwidth=33,
        iterations=7,
        converged=True,
        fits=[fit.to_dict()],
        comparison=[{"rank": 1, "label": fit.label, "aic": fit.aic, "loglik": fit.loglik, "n_params": fit.n_params}],
        trace_file=None,
        timing={"detect_seconds": 1.5},
    )


def test_results_round_trip(tmp_path, regime_fit):
    fit, labels = regime_fit
    res = result_for(fit, labels)
    write_results(res, tmp_path / "result.json")
    back = read_results(tmp_path / "result.json")
    assert back["schema"] == 1
    assert back["labels"] == res.labels
    assert back["fits"][0]["aic"] == fit.aic
    assert back["fits"][0]["loglik"] == fit.loglik
    assert [r["estimate"] for r in back["fits"][0]["table"]] == [r["estimate"] for r in fit.table()]
    assert back["timing"] == {"detect_seconds": 1.5}
    assert "timing" not in json.loads((tmp_path / "result.json").read_text())


def test_coefficient_csv_layout(tmp_path, regime_fit):
    fit, labels = regime_fit
    write_results(result_for(fit, labels), tmp_path / "result.json")
    lines = (tmp_path / "result_esr-sar.csv").read_text().splitlines()
    assert lines[0] == "coefficient,estimate,se,pvalue,signif"
    names = [ln.split(",")[0] for ln in lines[1:]]
    assert names.index("nbath2") == names.index("nbath1") + 1
    assert names[-2:] == ["rho", "AIC"]
    for ln in lines[1:-1]:
        name, est, se, p, stars = ln.split(",")
        row = next(r for r in fit.table() if r["name"] == name)
        assert float(est) == row["estimate"]
        if p and float(p) < 0.001:
            assert stars == "***"


def test_nan_serialized_as_null(tmp_path, regime_fit):
    fit, labels = regime_fit
    d = fit.to_dict()
    d["table"][0]["se"] = None
    res = result_for(fit, labels)
    res.fits = [d]
    res.comparison[0]["aic"] = float("nan")
    write_results(res, tmp_path / "r.json")
    assert read_results(tmp_path / "r.json")["comparison"][0]["aic"] is None


def test_trace_files(tmp_path):
    recs = [{"iteration": i, "variation": 1.0 / i, "clusters": 1, "seconds": 0.1 * i} for i in range(1, 6)]
    write_trace(recs, tmp_path / "t.jsonl")
    back = read_trace(tmp_path / "t.jsonl")
    assert back == recs
    trace_to_csv(back, tmp_path / "t.csv")
    rows = (tmp_path / "t.csv").read_text().splitlines()
    assert rows[0] == "iteration,variation" and len(rows) == 6
    with pytest.raises(IoError):
        read_trace(tmp_path / "missing.jsonl")


def test_write_results_io_error(tmp_path, regime_fit):
    fit, labels = regime_fit
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IoError):
        write_results(result_for(fit, labels), blocker / "sub" / "r.json")
