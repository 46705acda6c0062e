import numpy as np
import pytest

from dirquant import config
from dirquant.errors import IngestionError, InvalidArgument
from dirquant.ingest import dummies, ingest, model_data
from dirquant.orchestrator import ModelSpec, SplineConfig


def _csv(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


# -- ingestion -------------------------------------------------------------

def test_three_rows(tmp_path):
    t = ingest(_csv(tmp_path, "y1,y2,x\n1,2,3\n4,5,6\n7,8,9\n"))
    assert t.n == 3 and t.names == ["y1", "y2", "x"]
    np.testing.assert_array_equal(t["y2"], [2.0, 5.0, 8.0])


def test_declared_schema_drops_other_columns(tmp_path):
    t = ingest(_csv(tmp_path, "y1,note,y2,edu\n1,a,2,1\n3,b,4,2\n"), numeric=["y1", "y2"], categorical=["edu"])
    assert set(t.names) == {"y1", "y2", "edu"}
    assert list(t["edu"]) == ["1", "2"]


def test_four_level_categorical_gives_three_dummies():
    names, M, ref, levels = dummies(["1", "3", "2", "4", "1", "4"], "edu", reference="1")
    assert names == ["edu2", "edu3", "edu4"] and ref == "1"
    assert M.shape == (6, 3)
    np.testing.assert_array_equal(M[0], 0.0)
    np.testing.assert_array_equal(M[3], [0.0, 0.0, 1.0])


def test_numeric_levels_sort_numerically():
    names, _, ref, levels = dummies(["10", "2", "9"], "g")
    assert levels == ["2", "9", "10"] and ref == "2" and names == ["g9", "g10"]


def test_unknown_reference_level():
    with pytest.raises(InvalidArgument, match="not observed"):
        dummies(["a", "b"], "g", reference="c")


def test_missing_column_is_named(tmp_path):
    with pytest.raises(IngestionError, match="'income'") as info:
        ingest(_csv(tmp_path, "y1,y2\n1,2\n"), numeric=["y1", "y2", "income"])
    assert info.value.column == "income"


def test_non_numeric_cell_location(tmp_path):
    with pytest.raises(IngestionError) as info:
        ingest(_csv(tmp_path, "y1,y2\n1,2\n3,abc\n"))
    assert (info.value.row, info.value.column) == (3, "y2")
    assert "row 3" in str(info.value) and "'abc'" in str(info.value)
    assert info.value.report()["error"] == "ingestion-error"


def test_non_finite_cell(tmp_path):
    with pytest.raises(IngestionError, match="non-finite"):
        ingest(_csv(tmp_path, "y1,y2\n1,nan\n"))


@pytest.mark.parametrize("text", ["", "\n\n", "y1,y2\n"])
def test_empty_file(tmp_path, text):
    with pytest.raises(IngestionError, match="empty|no data"):
        ingest(_csv(tmp_path, text))


def test_ragged_row(tmp_path):
    with pytest.raises(IngestionError, match="row 2"):
        ingest(_csv(tmp_path, "y1,y2\n1\n"))


def test_model_data_layout(tmp_path):
    t = ingest(_csv(tmp_path, "y1,y2,age,edu\n1,2,30,1\n2,1,40,2\n3,3,50,3\n0,1,60,1\n"),
               numeric=["y1", "y2", "age"], categorical=["edu"])
    spec = ModelSpec(responses=["y1", "y2"], taus=(0.5,), directions=4, categorical={"edu": "1"},
                     splines=[SplineConfig("age", n_knots=4)])
    data = model_data(t, spec)
    assert data.x_names == ["edu2", "edu3"] and data.dummy == [True, True]
    assert data.levels == {"edu": ("1", ["2", "3"])}
    np.testing.assert_array_equal(data.spline_inputs["age"], [30, 40, 50, 60])
    with pytest.raises(InvalidArgument):
        model_data(t, ModelSpec(responses=["y1", "edu"], taus=(0.5,), directions=4))


# -- configuration ---------------------------------------------------------

def test_defaults_resolve():
    cfg = config.load()
    assert cfg["mcmc"] == {"preset": "default", "iterations": 22000, "burn_in": 2000, "thin": 20}
    spec = config.model_spec(cfg)
    assert spec.taus == (0.1, 0.2, 0.3) and spec.directions == 64


def test_file_and_overrides(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text("""
[data]
path = "d.csv"
linear = ["x"]
[model]
taus = [0.25, 0.5]
[mcmc]
preset = "quick"
thin = 5
[[spline]]
variable = "age"
n_knots = 8
""")
    cfg = config.load(p, {"model": {"directions": 12}})
    assert cfg["data"]["path"] == str((tmp_path / "d.csv").resolve())
    assert cfg["mcmc"]["thin"] == 5 and cfg["mcmc"]["iterations"] == 2000
    assert cfg["spline"] == [{"variable": "age", "degree": 3, "n_knots": 8, "range": None}]
    spec = config.model_spec(cfg)
    assert spec.directions == 12 and spec.linear == ["x"]


@pytest.mark.parametrize("body", ["[model]\ncolour = 1\n", "[mcmc]\npreset = 'forever'\n",
                                  "[model]\ntaus = [0.5, 0.2]\n", "[[spline]]\nknots = 3\n",
                                  "[gp]\nmapping = 'other'\n", "[model\n"])
def test_invalid_config(tmp_path, body):
    p = tmp_path / "bad.toml"
    p.write_text(body)
    with pytest.raises(InvalidArgument):
        config.load(p)
