import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvdiv.model import ModelParams, ParameterError, compute_roots, load_params, quadratic_roots, validate_params

params_st = st.builds(
    ModelParams,
    a=st.floats(-2, 2),
    b=st.floats(0.05, 3),
    rho=st.floats(1e-3, 1),
    d_bar=st.floats(1e-3, 3),
    gamma=st.floats(0, 5),
)


def test_validate_accepts_figure_parameters():
    p = validate_params({"a": 0.1, "b": 0.35, "rho": 0.05, "d_bar": 0.05, "gamma": 0.2, "extra": 1})
    assert p == ModelParams(0.1, 0.35, 0.05, 0.05, 0.2)


@pytest.mark.parametrize("bad, msg", [
    (dict(b=0.0), "b must be > 0"),
    (dict(rho=-1.0), "rho must be > 0"),
    (dict(d_bar=0.0), "d_bar must be > 0"),
    (dict(gamma=-0.1), "gamma must be >= 0"),
    (dict(a=float("nan")), "a must be finite"),
    (dict(b=float("inf")), "b must be finite"),
    (dict(gamma="0.2"), "gamma must be a real number"),
])
def test_validate_rejects(bad, msg):
    raw = dict(a=0.0, b=1.0, rho=0.5, d_bar=0.1, gamma=0.0) | bad
    with pytest.raises(ParameterError, match=msg):
        validate_params(raw)


def test_validate_missing_key():
    with pytest.raises(ParameterError, match="missing parameter"):
        validate_params({"a": 0.1})


def test_load_params(tmp_path):
    f = tmp_path / "p.json"
    f.write_text(json.dumps({"a": 0.1, "b": 0.35, "rho": 0.05, "d_bar": 0.03, "gamma": 0.3}))
    assert load_params(f).d_bar == 0.03
    f.write_text("[1, 2]")
    with pytest.raises(ParameterError):
        load_params(f)


def test_roots_symmetric_case():
    r = compute_roots(ModelParams(0.0, 1.0, 0.5, 0.2, 0.0))
    assert r.r1 == pytest.approx(1.0, abs=1e-15)
    assert r.r2 == pytest.approx(-1.0, abs=1e-15)
    assert r.r3 == pytest.approx(math.sqrt(2), abs=1e-15)
    assert r.r4 == pytest.approx(-math.sqrt(2), abs=1e-15)


def test_roots_figure_parameters():
    r = compute_roots(ModelParams(0.1, 0.35, 0.05, 0.03, 0.0))
    # frozen from the quadratic formula, cross-checked by substitution below
    assert r.r1 == pytest.approx(0.401342, abs=5e-7)
    assert r.r2 == pytest.approx(-2.0339946, abs=5e-7)
    assert r.r6 == pytest.approx(-1.640473, abs=1e-6)
    for root in (r.r1, r.r2):
        assert abs(0.5 * 0.35**2 * root**2 + 0.1 * root - 0.05) < 1e-15
    for root in (r.r5, r.r6):
        assert abs(0.5 * 0.35**2 * root**2 + 0.07 * root - 0.05) < 1e-15


@settings(max_examples=300, deadline=None)
@given(params_st)
def test_vieta_and_substitution(p):
    r = compute_roots(p)
    b2 = p.b * p.b
    assert r.r1 > 0 and r.r3 > 0 and r.r5 > 0 and r.r7 > 0
    assert r.r2 < 0 and r.r4 < 0 and r.r6 < 0 and r.r8 < 0
    for pos, neg, drift, k in ((r.r1, r.r2, p.a, 1), (r.r3, r.r4, p.a, 2),
                               (r.r5, r.r6, p.a - p.d_bar, 1), (r.r7, r.r8, p.a - p.d_bar, 2)):
        prod = -2 * k * p.rho / b2
        assert abs(pos * neg - prod) <= 1e-12 * abs(prod)
        s = -2 * drift / b2
        assert abs((pos + neg) - s) <= 1e-12 * max(abs(pos), abs(neg))
        for root in (pos, neg):
            poly = 0.5 * b2 * root**2 + drift * root - k * p.rho
            scale = max(0.5 * b2 * root**2, abs(drift * root), k * p.rho)
            assert abs(poly) <= 1e-12 * scale


def test_stable_against_cancellation():
    # a^2 >> 2 rho b^2: the naive formula loses the small root entirely
    pos, neg = quadratic_roots(1e4, 1.0, 1e-6)
    assert pos == pytest.approx(1e-10, rel=1e-12)
    assert pos * neg == pytest.approx(-2e-6, rel=1e-14)


def test_r6_monotone_in_d_bar():
    # a larger max rate lowers the drift a - d_bar, pulling the decaying root toward 0
    grid = np.linspace(0.005, 0.5, 200)
    r6 = [compute_roots(ModelParams(0.1, 0.35, 0.05, d, 0.0)).r6 for d in grid]
    assert np.all(np.diff(r6) > 0)
