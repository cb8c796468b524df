import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from nof1iv.errors import InvalidArgumentError
from nof1iv.seeding import derive_seed, stream
from nof1iv.sim_models import (
    SQRT3,
    ComplianceSpec,
    ErrorFamily,
    ModelSpec,
    ResponseFamily,
    ResponseModelSpec,
    SelectionMechanism,
    SelectionSpec,
    TrialSeries,
    apply_selection,
    simulate_compliance,
    simulate_instrument,
    simulate_response,
    simulate_trial,
)

from conftest import make_trial


def lag1(v):
    v = v - v.mean()
    return float(v[1:] @ v[:-1] / (v @ v))


# ---------------------------------------------------------------- errors and instrument

@pytest.mark.parametrize("family", list(ErrorFamily))
def test_error_family_unit_variance(family):
    draws = family.draw(stream(1), 200_000)
    assert abs(draws.var() - 1.0) < 0.05
    assert abs(draws.mean()) < 0.01


def test_uniform_support():
    draws = ErrorFamily.UNIFORM.draw(stream(2), 500_000)
    assert draws.min() >= -SQRT3 and draws.max() <= SQRT3


def test_instrument_reproducible_and_balanced():
    a = simulate_instrument(100_000, stream(5))
    b = simulate_instrument(100_000, stream(5))
    assert np.array_equal(a, b)
    assert set(np.unique(a)) == {0, 1}
    assert 0.49 <= a.mean() <= 0.51


def test_instrument_rejects_empty():
    with pytest.raises(InvalidArgumentError):
        simulate_instrument(0, stream(0))


def test_seed_streams_are_distinct():
    assert derive_seed(1, 2, 3) != derive_seed(1, 3, 2)
    assert stream(1, 0).random() != stream(1, 1).random()


# ---------------------------------------------------------------- compliance

def _inputs(n, seed=0):
    rng = stream(seed, 99)
    return (simulate_instrument(n, rng), rng.standard_normal(n), rng.standard_normal(n))


def test_huge_alpha_forces_uptake_when_encouraged():
    z, w, u = _inputs(1000)
    spec = ComplianceSpec("simple", alpha=1e6, omega=0.0, gamma=0.0)
    x = simulate_compliance(spec, z, w, u, 0.0, "gaussian", stream(1))
    assert np.all(x[z == 1] == 1)
    # with z = 0 the index is pure noise, so uptake is a fair coin
    assert stats.binomtest(int(x[z == 0].sum()), int((z == 0).sum())).pvalue > 1e-3


def test_weak_alpha_still_associates():
    z, w, u = _inputs(10_000)
    x = simulate_compliance(ComplianceSpec("simple", alpha=0.5), z, w, u, 0.0, "gaussian", stream(2))
    # oracle: exact test on the 2x2 table of (z, x)
    table = [[np.sum((z == 1) & (x == 1)), np.sum((z == 1) & (x == 0))],
             [np.sum((z == 0) & (x == 1)), np.sum((z == 0) & (x == 0))]]
    res = stats.fisher_exact(table, alternative="greater")
    assert np.corrcoef(z, x)[0, 1] > 0
    assert res.pvalue < 1e-6


def test_complex_without_h_and_rho_equals_simple():
    z, w, u = _inputs(500)
    kw = dict(alpha=1.2, omega=0.7, gamma=-1.1)
    a = simulate_compliance(ComplianceSpec("complex", rho=0.0, varphi=0.0, **kw), z, w, u, 2.5, "uniform", stream(3))
    b = simulate_compliance(ComplianceSpec("simple", **kw), z, w, u, 2.5, "uniform", stream(3))
    assert np.array_equal(a, b)


def test_complex_compliance_matches_recursion():
    z, w, u = _inputs(300)
    spec = ComplianceSpec("complex", alpha=1.0, omega=0.5, gamma=-0.5, varphi=0.8, rho=0.6)
    x = simulate_compliance(spec, z, w, u, 0.3, "gaussian", stream(4))
    eps = stream(4).standard_normal(300)
    e_star, prev = np.empty(300), 0.0
    for t in range(300):
        prev = 0.6 * prev + eps[t]
        e_star[t] = prev
    expected = (1.0 * z + 0.5 * w - 0.5 * u + 0.8 * 0.3 + e_star > 0).astype(float)
    assert np.array_equal(x, expected)


def test_compliance_length_mismatch():
    z, w, u = _inputs(10)
    with pytest.raises(InvalidArgumentError):
        simulate_compliance(ComplianceSpec("simple", alpha=1), z, w[:5], u, 0.0, "gaussian", stream(0))


def test_compliance_rejects_unit_root_rho():
    z, w, u = _inputs(10)
    with pytest.raises(InvalidArgumentError, match="rho"):
        simulate_compliance(ComplianceSpec("complex", alpha=1, rho=1.0), z, w, u, 0.0, "gaussian", stream(0))
    simulate_compliance(ComplianceSpec("complex", alpha=1, rho=1.0), z, w, u, 0.0, "gaussian", stream(0),
                        allow_nonstationary=True)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 99), st.sampled_from(["simple", "complex"]))
def test_flipping_one_z_touches_one_x(seed, t, kind):
    z, w, u = _inputs(100, seed)
    spec = ComplianceSpec(kind, alpha=2.0, omega=1.0, gamma=1.0, varphi=1.0, rho=0.5)
    x1 = simulate_compliance(spec, z, w, u, 0.4, "gaussian", stream(seed))
    z2 = z.copy()
    z2[t] = 1 - z2[t]
    x2 = simulate_compliance(spec, z2, w, u, 0.4, "gaussian", stream(seed))
    changed = np.flatnonzero(x1 != x2)
    assert set(changed) <= {t}


def test_simple_compliance_serially_independent():
    # lag-1 autocorrelation of x - P(x=1 | z, w, u) is tested by permutation
    spec = ComplianceSpec("simple", alpha=1.0, omega=1.0, gamma=1.0)
    quiet = 0
    for r in range(100):
        z, w, u = _inputs(300, r)
        x = simulate_compliance(spec, z, w, u, 0.0, "gaussian", stream(r, 1))
        resid = x - stats.norm.cdf(z + w + u)
        obs = abs(lag1(resid))
        rng = stream(r, 2)
        null = np.array([abs(lag1(rng.permutation(resid))) for _ in range(300)])
        quiet += np.mean(null >= obs) > 0.01
    assert quiet >= 97


# ---------------------------------------------------------------- response

def _resp_inputs(n, seed=0):
    rng = stream(seed, 98)
    x = rng.integers(0, 2, n).astype(float)
    return x, rng.standard_normal(n), rng.standard_normal(n)


def test_arma00_is_pure_noise():
    x, w, u = _resp_inputs(1000)
    y = simulate_response(ResponseModelSpec("ARMA00"), x, w, u, 0.7, "uniform", stream(6))
    assert np.array_equal(y, ErrorFamily.UNIFORM.draw(stream(6), 1000))


def test_arma00_lag1_near_zero():
    n = 20_000
    x, w, u = _resp_inputs(n)
    y = simulate_response(ResponseModelSpec("ARMA00"), x, w, u, 0.0, "gaussian", stream(7))
    assert abs(lag1(y)) < 4 / math.sqrt(n)


def test_ar1_autocorrelation():
    n = 100_000
    x, w, u = _resp_inputs(n)
    y = simulate_response(ResponseModelSpec("ARMA10", phi1=0.8), x, w, u, 0.0, "gaussian", stream(8))
    assert abs(lag1(y) - 0.8) < 0.02


def test_arma11_matches_loop():
    n = 400
    x, w, u = _resp_inputs(n)
    spec = ResponseModelSpec("ARMA11", phi1=0.6, theta1=-0.4, beta=1.5, delta1=0.5, lam=0.3, eta=-0.2, psi=2.0)
    y = simulate_response(spec, x, w, u, 0.9, "gaussian", stream(9))
    eps = stream(9).standard_normal(n)
    expected, y_prev, e_prev, x_prev = np.empty(n), 0.0, 0.0, 0.0
    for t in range(n):
        g = 0.3 * w[t] - 0.2 * u[t] + 2.0 * 0.9 + 1.5 * x[t] + 0.5 * x_prev
        y_prev = 0.6 * y_prev + g + eps[t] - 0.4 * e_prev
        expected[t] = y_prev
        e_prev, x_prev = eps[t], x[t]
    np.testing.assert_allclose(y, expected, rtol=1e-12, atol=1e-12)


def test_setar_with_equal_regimes_is_ar1():
    x, w, u = _resp_inputs(500)
    a = simulate_response(ResponseModelSpec("SETAR1", phi11=0.5, phi12=0.5, beta=1.0), x, w, u, 0.0, "gaussian", stream(10))
    b = simulate_response(ResponseModelSpec("ARMA10", phi1=0.5, beta=1.0), x, w, u, 0.0, "gaussian", stream(10))
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("family", ["TAR1", "LSTAR1", "ESTAR1"])
def test_threshold_families_match_loop(family):
    n = 300
    x, w, u = _resp_inputs(n)
    spec = ResponseModelSpec(family, phi11=0.7, phi12=-0.5, beta=1.0)
    y = simulate_response(spec, x, w, u, 0.0, "gaussian", stream(11))
    rng = stream(11)
    eps = rng.standard_normal(n)
    thr = rng.standard_normal(n)
    prev, expected = 0.0, np.empty(n)
    for t in range(n):
        if family == "TAR1":
            c = 0.7 if thr[t] <= 0 else -0.5
        else:
            G = 1 / (1 + math.exp(-thr[t])) if family == "LSTAR1" else 1 - math.exp(-thr[t] ** 2)
            c = 0.7 * G - 0.5 * (1 - G)
        prev = c * prev + x[t] + eps[t]
        expected[t] = prev
    np.testing.assert_allclose(y, expected, rtol=1e-12, atol=1e-12)


def test_arch_with_zero_a1_is_scaled_noise():
    x, w, u = _resp_inputs(200)
    y = simulate_response(ResponseModelSpec("ARCH1", a1=0.0, mu_sigma=4.0), x, w, u, 0.0, "gaussian", stream(12))
    np.testing.assert_allclose(y, 2.0 * stream(12).standard_normal(200))


def test_garch_b1_modes():
    assert ResponseModelSpec("GARCH11", a1=0.3).effective_b1 == pytest.approx(0.7)
    assert ResponseModelSpec("GARCH11", a1=0.3, garch_strict=True).effective_b1 == pytest.approx(0.693)


def test_stationarity_enforced():
    x, w, u = _resp_inputs(20)
    with pytest.raises(InvalidArgumentError, match="phi1"):
        simulate_response(ResponseModelSpec("ARMA10", phi1=1.2), x, w, u, 0.0, "gaussian", stream(0))
    # unused coefficients are never checked
    simulate_response(ResponseModelSpec("ARMA01", phi1=1.2), x, w, u, 0.0, "gaussian", stream(0))
    simulate_response(ResponseModelSpec("ARMA10", phi1=1.0), x, w, u, 0.0, "gaussian", stream(0),
                      allow_nonstationary=True)


@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from(list(ResponseFamily)),
    st.floats(-0.8, 0.8), st.floats(-0.8, 0.8), st.floats(-4, 4), st.floats(0, 0.99),
    st.floats(-4, 4), st.integers(0, 2**32),
)
def test_in_range_coefficients_stay_finite(family, p1, p2, th, a1, beta, seed):
    spec = ModelSpec(
        ResponseModelSpec(family, phi1=p1, phi11=p1, phi12=p2, theta1=th, a1=a1, beta=beta,
                          lam=4, eta=-4, psi=4, delta1=4),
        ComplianceSpec("complex", alpha=0.5, omega=4, gamma=-4, varphi=4, rho=0.8),
        n=800, seed=seed,
    )
    assert np.isfinite(simulate_trial(spec).y).all()


# ---------------------------------------------------------------- trials and selection

def test_trial_reproducible_and_shaped():
    a = make_trial(seed=3, n=50)
    b = make_trial(seed=3, n=50)
    for name in ("z", "x", "y", "w", "u", "observed"):
        assert getattr(a, name).shape == (50,)
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert a.latent == b.latent and set(a.latent) == {"L", "H", "C"}
    assert a.observed.all()


def test_trial_validation():
    with pytest.raises(InvalidArgumentError):
        TrialSeries(z=np.array([0, 2]), x=np.zeros(2), y=np.zeros(2))
    with pytest.raises(InvalidArgumentError):
        TrialSeries(z=np.array([0, 1]), x=np.zeros(3), y=np.zeros(2))
    with pytest.raises(InvalidArgumentError):
        ModelSpec(ResponseModelSpec("ARMA00"), ComplianceSpec("simple", alpha=1), n=5).validate()
    with pytest.raises(InvalidArgumentError):
        ComplianceSpec("simple", alpha=0.0).validate()


def test_selection_none_is_identity():
    t = make_trial(seed=1)
    out = apply_selection(t, SelectionSpec("none"), stream(0))
    assert out.observed.all()


@pytest.mark.parametrize("mech", [m for m in SelectionMechanism if m is not SelectionMechanism.NONE])
def test_selection_changes_mask_only(mech):
    t = make_trial(seed=2, n=400)
    out = apply_selection(t, SelectionSpec(mech), stream(1))
    assert 0 < out.n_observed < t.n
    for name in ("z", "x", "y", "w", "u"):
        assert np.array_equal(getattr(out, name), getattr(t, name))
    with pytest.raises(InvalidArgumentError):
        apply_selection(out, SelectionSpec(mech), stream(1))


def test_unknown_selection_mechanism():
    with pytest.raises(InvalidArgumentError):
        SelectionSpec("teleportation")
