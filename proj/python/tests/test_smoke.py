import json

import numpy as np
import pytest

import elastrecon as er


def test_voigt_index_order():
    assert er.voigt_index(1, 1) == 1
    assert er.voigt_index(2, 3) == 4
    assert er.voigt_index(3, 1) == 5
    assert er.voigt_index(2, 1) == 6


def test_mehrabadi_determinant_factor():
    c = er.random_stable_stiffness(11)
    assert er.det6(er.mehrabadi(c)) == pytest.approx(8.0 * er.det6(c), rel=1e-10)
    rep = er.stability_check(c)
    assert rep["is_stable"]
    assert er.det6(c) >= rep["lambda_min"] ** 6 / 8.0


def test_cross21_orthogonal_and_matches_nullspace():
    rng = np.random.default_rng(5)
    mats = rng.standard_normal((20, 6, 6))
    mats = 0.5 * (mats + mats.transpose(0, 2, 1))
    n = er.cross21(mats)
    scale = np.linalg.norm(n) * max(np.linalg.norm(m) for m in mats)
    for m in mats:
        assert abs(np.sum(m * n)) <= 1e-10 * scale
    normal, rank = er.nullspace_normal(mats)
    assert rank == 20
    cos = abs(np.sum(n * normal)) / (np.linalg.norm(n) * np.linalg.norm(normal))
    assert cos == pytest.approx(1.0, abs=1e-12)


def test_field_roundtrip(tmp_path):
    data = np.arange(4 * 3 * 5 * 2, dtype=float).reshape(4, 3, 5, 2)
    path = str(tmp_path / "f.efld")
    er.write_field(path, data, 0.25, (1.0, 2.0, 3.0))
    back, h, origin = er.read_field(path)
    assert back.shape == data.shape
    assert np.array_equal(back, data)
    assert h == 0.25
    assert origin == (1.0, 2.0, 3.0)


def test_constant_scenario_exact():
    out = er.run_scenario(
        {"kind": "constant", "stiffness": {"random_seed": 3}, "grid": {"n": 5}, "fields": {"extra": "full"}}
    )
    rep = out["report"]
    assert rep["masked_fraction"] == 0.0
    assert rep["err_ctilde_p0"] <= 1e-8
    assert rep["err_tau_p0"] <= 1e-9
    assert out["ctilde"].shape == (5, 5, 5, 21)
    assert out["mask"].shape == (5, 5, 5)
    assert json.loads(json.dumps(rep["config"]))["kind"] == "constant"


def test_five_fields_all_masked():
    strains = np.zeros((5, 5, 5, 5, 6))
    for i in range(5):
        strains[i, ..., i] = 1.0
    rec = er.reconstruct(strains, 0.25)
    assert rec["report"]["masked_fraction"] == 1.0
    assert np.all(rec["tau"] == 0.0)
    assert np.all(rec["mask"] != 0)
    assert rec["report"]["err_tau_p0"] is None


def test_bad_scenario_raises():
    with pytest.raises(er.ConfigError):
        er.run_scenario({"kind": "constant", "stiffness": {"components": [1.0] * 20}})
