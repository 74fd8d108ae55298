import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from popmiss.data.fixture import FIXTURE_CONFIG, FIXTURE_CSV
from popmiss.errors import ConfigError, DataError
from popmiss.io import Report, RunConfig, ingest_csv, load_config, write_csv
from popmiss.model import CovariateSchema

from conftest import make_schema, random_dataset

TOY_SCHEMA = {
    "lists": ["hosp", "survey"],
    "v": [{"name": "sex", "levels": ["f", "m"]}],
    "x": [{"name": "age", "levels": ["young", "old"]}],
}


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def toy_schema():
    return CovariateSchema.from_dict(TOY_SCHEMA)


def test_three_row_toy_file(tmp_path, toy_schema):
    path = write(tmp_path, "hosp,survey,sex,age\n1,0,f,young\n1,1,m,old\n0,1,m,\n")
    ds = ingest_csv(path, toy_schema).dataset
    assert ds.r.tolist() == [True, True, False]
    assert ds.profile.tolist() == [1, 2, 0]


def test_bom_and_blank_lines(tmp_path, toy_schema):
    path = write(tmp_path, "﻿hosp,survey,sex,age\n\n1,0,f,young\n\n")
    assert ingest_csv(path, toy_schema).dataset.N == 1


def test_zero_profile_reports_file_line(tmp_path, toy_schema):
    path = write(tmp_path, "hosp,survey,sex,age\n1,0,f,young\n\n0,0,m,old\n")
    with pytest.raises(DataError, match="line 4") as info:
        ingest_csv(path, toy_schema)
    assert info.value.line == 4
    assert info.value.row == 1


def test_ragged_row(tmp_path, toy_schema):
    path = write(tmp_path, "hosp,survey,sex,age\n1,0,f\n")
    with pytest.raises(DataError, match="line 2"):
        ingest_csv(path, toy_schema)


def test_missing_header_column(tmp_path, toy_schema):
    path = write(tmp_path, "hosp,sex,age\n1,f,young\n")
    with pytest.raises(DataError, match="survey"):
        ingest_csv(path, toy_schema)


def test_missing_file(tmp_path, toy_schema):
    with pytest.raises(DataError, match="cannot read"):
        ingest_csv(tmp_path / "nope.csv", toy_schema)


def test_missing_v_drop_and_mode(tmp_path, toy_schema):
    path = write(tmp_path, "hosp,survey,sex,age\n1,0,f,young\n1,1,f,old\n0,1,,old\n1,0,m,young\n")
    dropped = ingest_csv(path, toy_schema)
    assert dropped.dataset.N == 3 and dropped.n_dropped_v == 1
    filled = ingest_csv(path, toy_schema, impute_v="mode")
    assert filled.dataset.N == 4 and filled.n_imputed_v == 1
    assert filled.dataset.v[2, 0] == 0


def test_partial_x_reject_or_blank(tmp_path):
    schema = CovariateSchema.from_dict({**TOY_SCHEMA, "x": TOY_SCHEMA["x"] + [{"name": "month", "levels": ["1", "2"]}]})
    path = write(tmp_path, "hosp,survey,sex,age,month\n1,0,f,young,1\n0,1,m,,2\n")
    with pytest.raises(DataError, match="line 3"):
        ingest_csv(path, schema)
    out = ingest_csv(path, schema, partial_x="blank")
    assert out.n_blanked_x == 1
    assert out.dataset.r.tolist() == [True, False]


def test_bad_options(tmp_path, toy_schema):
    path = write(tmp_path, "hosp,survey,sex,age\n1,0,f,young\n")
    with pytest.raises(ConfigError):
        ingest_csv(path, toy_schema, impute_v="guess")
    with pytest.raises(ConfigError):
        ingest_csv(path, toy_schema, partial_x="keep")


@settings(max_examples=25, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.integers(0, 2**31 - 1), st.sampled_from([2, 3]), st.floats(0, 0.8))
def test_csv_roundtrip(tmp_path, seed, K, p_missing):
    schema = make_schema(K, (2, 3))
    ds = random_dataset(np.random.default_rng(seed), 40, schema, p_missing)
    path = write_csv(ds, tmp_path / f"rt_{seed}_{K}.csv")
    assert ingest_csv(path, schema).dataset == ds


def test_config_roundtrip_and_overrides(tmp_path):
    config = load_config(FIXTURE_CONFIG)
    assert config.data == str(FIXTURE_CSV)
    again = RunConfig.from_dict(json.loads(json.dumps(config.to_dict())))
    assert again.to_dict() == config.to_dict()
    assert config.override(seed=9, k_folds=None).seed == 9
    assert config.override(seed=9, k_folds=None).k_folds == config.k_folds


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(write(tmp_path, "{nope", "c.json"))
    with pytest.raises(ConfigError, match="unknown configuration keys"):
        load_config(write(tmp_path, '{"foldz": 3}', "c.json"))
    with pytest.raises(ConfigError):
        RunConfig(k_folds=1)
    with pytest.raises(ConfigError, match="schema"):
        RunConfig.from_dict({"schema": {"lists": ["a", "b"]}})


def test_report_roundtrip():
    report = Report("estimate", "0.1.0")
    report.estimates["onestep"] = {"psi_inv": np.float64(1.25), "ci": [1.0, float("inf")]}
    report.metadata["counters"] = {"gamma_capped": np.int64(3)}
    report.metadata["warnings"] = ["w"]
    text = report.to_json()
    back = Report.from_json(text)
    assert back.to_dict() == report.to_dict()
    assert back.to_json() == text
