import json
import math

import numpy as np
import pytest

import flowkan


def wkv_direct(k, v, w, u):
    B, T, C = k.shape
    out = np.zeros_like(k)
    for b in range(B):
        for t in range(T):
            for c in range(C):
                wts = [math.exp(-(t - 1 - i) * w[c] + k[b, i, c]) for i in range(t)]
                num = sum(x * v[b, i, c] for i, x in enumerate(wts))
                den = sum(wts)
                cur = math.exp(u[c] + k[b, t, c])
                out[b, t, c] = (num + cur * v[b, t, c]) / (den + cur)
    return out


def test_wkv_matches_direct_sum():
    rng = np.random.default_rng(0)
    k, v = rng.normal(size=(2, 7, 3)), rng.normal(size=(2, 7, 3))
    w, u = rng.uniform(0, 3, size=3), rng.normal(size=3)
    got = flowkan.wkv_scan(k, v, w, u)
    assert got.shape == (2, 7, 3)
    np.testing.assert_allclose(got, wkv_direct(k, v, w, u), rtol=1e-10)
    both = flowkan.wkv_bidirectional(k, v, w, u, dedup=True)
    assert both.shape == k.shape


def test_bspline_partition_of_unity():
    for x in np.linspace(-1.1, 1.1, 23):
        basis = flowkan.bspline_basis(float(x))
        assert len(basis) == 8
        assert abs(sum(basis) - 1.0) < 1e-12
    with pytest.raises(Exception):
        flowkan.bspline_basis(0.0, intervals=0)


def test_config_defaults_and_errors():
    cfg = flowkan.config()
    assert cfg["train"]["batch"] == 64
    assert flowkan.config({"seed": 1})["seed"] == 1
    assert flowkan.config_hash({"seed": 1}) != flowkan.config_hash({"seed": 2})
    with pytest.raises(flowkan.ConfigError, match="unknown key"):
        flowkan.config({"train": {"bogus": 1}})


def test_grouping_divides_spline_coefficients():
    g1 = {"backbone": {"groups": 1}}
    g4 = {"backbone": {"groups": 4}}
    for stage in range(5):
        assert flowkan.count_stage_spline_coefficients(stage, g1) == 4 * flowkan.count_stage_spline_coefficients(stage, g4)
    assert flowkan.count_params(g4) < flowkan.count_params(g1)


def test_oracles():
    assert flowkan.wkv_oracle()["pass"]
    assert flowkan.spline_oracle()["pass"]


def test_pipeline(tmp_path):
    cfg = {
        "demos": 2,
        "train": {"max_steps": 3, "batch": 8},
        "eval": {"rounds": 1, "episodes_per_round": 2, "seeds": [0]},
    }
    corpus = tmp_path / "demos.jsonl"
    assert flowkan.gen_demos(corpus, cfg=cfg) == 2
    res = flowkan.train(corpus, tmp_path / "run", cfg=cfg)
    assert res["steps"] == 3
    lines = (tmp_path / "run" / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 3 and "total" in json.loads(lines[0])
    report = flowkan.evaluate(res["checkpoint"])
    assert 0.0 <= report["aggregate"]["mean"]["sr1"] <= 1.0
    rows = flowkan.bench(res["checkpoint"], steps=[1, 2], repeats=2)
    assert [r["nfe"] for r in rows if r["mode"] == "euler"] == [1, 2]
