"""Smoke test for the driftlab Python extension.

Build with `maturin develop -m crates/py/Cargo.toml` (or copy the cdylib to
`driftlab_py.so` on PYTHONPATH), then run `python python/smoke_test.py`.
"""

import json
import math
import os
import tempfile

import driftlab_py as dl


def test_params_and_field():
    p = dl.DriftParams(n=3, lam=0.5, alpha=0.1, epsilon=0.05, big_c=1.0)
    assert p.n == 3 and p.epsilon == 0.05
    ur, uz = dl.velocity(0.3, 0.2, p)
    assert math.isfinite(ur) and math.isfinite(uz)
    assert math.isfinite(dl.stream(0.3, 0.2, p))
    t = dl.h_inverse(0.1, 0.1)
    assert abs(dl.h_profile(t, 0.1) - 0.1) < 1e-10
    try:
        dl.DriftParams(alpha=0.3)
    except ValueError as e:
        assert "alpha" in str(e)
    else:
        raise AssertionError("alpha = 0.3 accepted")


def test_certificates():
    r = dl.certify_travel_beta(3, 0.1)
    assert r["pass"] and r["value"] == 0.5
    c = dl.certify_subsolution_f(3, 0.05, (100, 100))
    assert c["pass"]


def test_parabolic_and_elliptic():
    p = dl.DriftParams().with_epsilon(0.2)
    s = dl.run_parabolic(p, delta=0.5, grid=(12, 24, 8), model="ns_toy", records=3, t_final=0.01)
    assert len(s["rows"]) == 4
    assert not s["invariant_violations"]
    v = dl.estimate_v(0.5, dl.DriftParams().with_epsilon(0.05).with_big_c(0.0), paths=200, seed=1)
    assert v["ci_lo"] <= v["mean"] <= v["ci_hi"]
    c = dl.cone_statistics(0.25, dl.DriftParams().with_epsilon(0.0625).with_big_c(32.0), paths=200, seed=2)
    assert abs(c["p_lid"] + c["p_sphere"] + c["p_side"] + c["p_bottom"] - 1.0) < 1e-12


def test_cli():
    code, _, err = dl.main([])
    assert code == 2 and "Usage" in err
    with tempfile.TemporaryDirectory() as d:
        code, _, err = dl.main(["--out-dir", d, "verify", "hessian"])
        assert code == 0, err
        with open(os.path.join(d, "verify.json")) as f:
            doc = json.load(f)
        assert doc["reports"][0]["pass"]


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_"):
            fn()
            print(f"{name}: ok")
