import numpy as np
import pytest

from eknockoffs.exceptions import EmptyAfterCleaning, FileUnreadable, ResponseMissing
from eknockoffs.ingest import clean, load_csv, real_data_pipeline, write_pipeline_outputs


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


TOY = """m1,m2,m3,age,y
1,0,1,30,1.5
1,0,0,NA,0.2
0,1,1,41,2.0
1,0,1,35,
0,1,0,50,0.1
1,0,1,28,1.1
1,0,0,33,0.7
"""


class TestLoadCsv:
    def test_rules(self, tmp_path):
        ds = load_csv(write(tmp_path, TOY), "y")
        assert ds.X.shape == (5, 3)
        assert ds.feature_names == ["m1", "m3", "age"]
        assert "drop row 3: missing value" in ds.log
        assert "drop row 5: missing value" in ds.log
        assert any(entry.startswith("drop column m2: 2 occurrences") for entry in ds.log)
        np.testing.assert_array_equal(ds.y, [1.5, 2.0, 0.1, 1.1, 0.7])

    def test_standardized(self, tmp_path):
        ds = load_csv(write(tmp_path, TOY), "y")
        assert np.all(np.abs(ds.X.mean(axis=0)) < 1e-10)
        assert np.all(np.abs(ds.X.var(axis=0) - 1) < 1e-8)
        assert ds.log[-1].startswith("standardize")

    def test_min_occurrence(self, tmp_path):
        ds = load_csv(write(tmp_path, TOY), "y", min_occurrence=2)
        assert "m2" in ds.feature_names

    def test_zero_variance_dropped(self, tmp_path):
        ds = load_csv(write(tmp_path, "a,b,y\n1,5,1\n2,5,2\n3,5,4\n"), "y")
        assert ds.feature_names == ["a"]

    def test_idempotent(self, tmp_path):
        ds = load_csv(write(tmp_path, TOY), "y")
        header = ds.feature_names + ["y"]
        body = [[repr(float(v)) for v in row] + [repr(float(t))] for row, t in zip(ds.X, ds.y)]
        X, y, names, log, _ = clean(header, body, "y")
        assert names == ds.feature_names
        np.testing.assert_allclose(X, ds.X, atol=1e-12)
        assert not any(entry.startswith("drop") for entry in log)

    def test_errors(self, tmp_path):
        with pytest.raises(FileUnreadable):
            load_csv(tmp_path / "missing.csv", "y")
        with pytest.raises(ResponseMissing):
            load_csv(write(tmp_path, TOY), "outcome")
        with pytest.raises(EmptyAfterCleaning):
            load_csv(write(tmp_path, "a,y\nNA,1\n2,\n"), "y")

    def test_group_column(self):
        header = ["a", "b", "env", "y"]
        body = [["1", "2", "x", "0.5"], ["2", "1", "z", "1.5"], ["3", "NA", "x", "1"], ["4", "5", "z", "2"]]
        X, y, names, log, groups = clean(header, body, "y", group_column="env")
        assert names == ["a", "b"] and groups == ["x", "z", "z"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    rng = np.random.default_rng(0)
    n, p = 150, 12
    X = rng.standard_normal((n, p))
    y = X[:, :6] @ np.full(6, 1.0) + rng.standard_normal(n)
    rows = [",".join(f"f{j}" for j in range(p)) + ",y"]
    rows += [",".join(repr(float(v)) for v in X[i]) + f",{float(y[i])!r}" for i in range(n)]
    path = tmp_path_factory.mktemp("d") / "sim.csv"
    path.write_text("\n".join(rows) + "\n")
    return load_csv(path, "y")


class TestPipeline:

    def test_deterministic(self, dataset):
        from eknockoffs.stats import LcdStatistic
        stat = LcdStatistic(folds=5, grid=20)
        a = real_data_pipeline(dataset, 0.2, 0.2, M=2, reruns=2, master_seed=3, statistic=stat)
        b = real_data_pipeline(dataset, 0.2, 0.2, M=2, reruns=2, master_seed=3, statistic=stat)
        np.testing.assert_array_equal(a["freq_derandomized"], b["freq_derandomized"])
        assert a["selected_original"] == b["selected_original"]
        assert a["freq_original"].shape == (12,)

    def test_single_rerun(self, dataset, tmp_path):
        from eknockoffs.stats import LcdStatistic
        out = real_data_pipeline(dataset, 0.2, 0.2, M=2, reruns=1, statistic=LcdStatistic(folds=5, grid=20))
        assert set(np.unique(out["freq_original"])) <= {0.0, 1.0}
        write_pipeline_outputs(out, {"M": 2}, tmp_path)
        lines = (tmp_path / "frequencies.csv").read_text().splitlines()
        assert lines[0] == "feature_name,freq_original,freq_derandomized"
        assert len(lines) == 13
