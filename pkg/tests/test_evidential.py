import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from gradcheck import max_rel_error, numeric_grad
from revinr import evidential as ev
from revinr.exceptions import ConfigError, DomainError, InvariantError

# KL((0,1,2,1) || (1,2,3,2)), frozen from scipy dblquad of p * ln(p / q)
# over mu in (-inf, inf), sigma2 in (0, inf) before the closed form existed.
KL_QUAD_REFERENCE = 2.3443477134938573


def random_nig(rng, n=None):
    shape = () if n is None else (n,)
    return ev.NIGParams(
        rng.normal(0, 1, shape),
        rng.uniform(0.5, 5, shape),
        rng.uniform(1.5, 6, shape),
        rng.uniform(0.3, 3, shape),
    )


def quad_kl(p, q):
    # integrate over t = ln(sigma2) so heavy inverse-gamma tails stay inside the box
    def integrand(mu, t):
        s2 = math.exp(t)
        lp = ev.nig_logpdf(mu, s2, p)
        return math.exp(lp) * (lp - ev.nig_logpdf(mu, s2, q)) * s2

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.dblquad(integrand, -30.0, 30.0, -np.inf, np.inf, epsabs=1e-8, epsrel=1e-8)
    return val


# ---------------------------------------------------------------- link


def test_link_lower_limit():
    nig = ev.link(np.array([0.7, -800.0, 0.0, 0.0]))
    assert nig.gamma > 0 and nig.gamma == pytest.approx(1e-6, abs=1e-12)


def test_link_alpha_at_zero():
    nig = ev.link(np.array([0.0, 0.0, 0.0, 0.0]))
    assert nig.alpha == pytest.approx(math.log(2) + 1 + 1e-6, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-700, 700), min_size=4, max_size=4))
def test_link_always_valid(raw):
    nig = ev.link(np.array(raw)).check()
    assert nig.gamma > 0 and nig.alpha > 1 and nig.beta > 0


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1.01, 1e3), st.floats(1e-4, 1e3))
def test_inverse_link_roundtrip(g, a, b):
    nig = ev.link(np.r_[0.0, ev.inverse_link(g, a, b)])
    np.testing.assert_allclose([nig.gamma, nig.alpha, nig.beta], [g, a, b], rtol=1e-9)


def test_inverse_link_rejects_floor():
    with pytest.raises(ConfigError):
        ev.inverse_link(1.0, 1.0, 1.0)


def test_link_grad_matches_fd():
    rng = np.random.default_rng(0)
    raw = rng.normal(size=4)
    w = rng.normal(size=4)
    analytic = ev.link_grad(raw[None], [np.array([wi]) for wi in w])[0]
    numeric = numeric_grad(lambda r: float(np.dot(w, list(ev.link(r)))), raw)
    assert max_rel_error(analytic, numeric) < 1e-6


# ---------------------------------------------------------------- moments


@pytest.mark.parametrize(
    "nig,expect",
    [((0.0, 1.0, 2.0, 1.0), (0.0, 1.0, 1.0)), ((3.0, 4.0, 2.0, 1.0), (3.0, 1.0, 0.25))],
)
def test_moments_examples(nig, expect):
    assert ev.predictive_moments(ev.NIGParams(*nig)) == expect


def test_moments_identity_vectorized():
    rng = np.random.default_rng(1)
    nig = random_nig(rng, 10_000)
    _, au, eu = ev.predictive_moments(nig)
    assert np.array_equal(eu, au / nig.gamma)
    assert np.all(au > 0) and np.all(eu > 0)


def test_moments_gamma_limit():
    _, au1, eu1 = ev.predictive_moments(ev.NIGParams(0.0, 1.0, 3.0, 2.0))
    _, au2, eu2 = ev.predictive_moments(ev.NIGParams(0.0, 1e12, 3.0, 2.0))
    assert au1 == au2 and eu2 < 1e-11


def test_moments_invalid_alpha():
    with pytest.raises(InvariantError):
        ev.predictive_moments(ev.NIGParams(0.0, 1.0, 1.0, 1.0))


# ---------------------------------------------------------------- density


def test_pdf_integrates_to_one_reference():
    nig = ev.NIGParams(0.0, 2.0, 3.0, 2.0)
    val, _ = integrate.dblquad(lambda mu, s2: ev.nig_pdf(mu, s2, nig), 1e-9, np.inf, -np.inf, np.inf)
    assert abs(val - 1.0) < 1e-3


@pytest.mark.parametrize("seed", range(10))
def test_pdf_integrates_to_one_random(seed):
    nig = random_nig(np.random.default_rng(100 + seed))
    val, _ = integrate.dblquad(lambda mu, s2: ev.nig_pdf(mu, s2, nig), 1e-9, np.inf, -np.inf, np.inf)
    assert abs(val - 1.0) < 1e-3


def test_pdf_nonnegative_and_tail():
    rng = np.random.default_rng(2)
    nig = random_nig(rng, 500)
    assert np.all(ev.nig_pdf(rng.normal(size=500), rng.uniform(0.01, 10, 500), nig) >= 0)
    assert ev.nig_pdf(0.0, 1e12, ev.NIGParams(0.0, 1.0, 2.0, 1.0)) < 1e-30


def test_pdf_domain():
    with pytest.raises(DomainError):
        ev.nig_pdf(0.0, 0.0, ev.NIGParams(0.0, 1.0, 2.0, 1.0))


# ---------------------------------------------------------------- KL


def test_kl_reference_value():
    p = ev.NIGParams(0.0, 1.0, 2.0, 1.0)
    q = ev.NIGParams(1.0, 2.0, 3.0, 2.0)
    assert abs(ev.nig_kl(p, q) - KL_QUAD_REFERENCE) < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_kl_matches_quadrature(seed):
    rng = np.random.default_rng(200 + seed)
    p, q = random_nig(rng), random_nig(rng)
    assert abs(ev.nig_kl(p, q) - quad_kl(p, q)) < 1e-4


def test_kl_self_zero_and_nonnegative():
    rng = np.random.default_rng(3)
    p = random_nig(rng, 1000)
    assert np.max(np.abs(ev.nig_kl(p, p))) < 1e-9
    q = random_nig(rng, 1000)
    assert np.min(ev.nig_kl(p, q)) >= -1e-9


def test_kl_grad_matches_fd():
    rng = np.random.default_rng(4)
    for _ in range(30):
        p, q = random_nig(rng), random_nig(rng)
        analytic = np.array(ev.nig_kl_grad(p, q), dtype=float)
        numeric = numeric_grad(lambda x: float(ev.nig_kl(ev.NIGParams(*x), q)), np.array(p, dtype=float))
        assert max_rel_error(analytic, numeric) < 1e-4


# ---------------------------------------------------------------- penalty and target


def test_penalty_examples():
    assert ev.evidence_penalty(1.0, ev.NIGParams(0.0, 1.0, 2.0, 5.0)) == 4.0
    assert ev.evidence_penalty(0.3, ev.NIGParams(0.3, 7.0, 9.0, 1.0)) == 0.0
    nig = ev.NIGParams(0.0, 1.5, 2.5, 1.0)
    assert ev.evidence_penalty(0.8, nig) == pytest.approx(2 * ev.evidence_penalty(0.4, nig))


def test_penalty_grad():
    dv, dg, da, db = ev.evidence_penalty_grad(0.0, ev.NIGParams(0.0, 1.0, 2.0, 1.0))
    assert (dv, dg, da, db) == (0.0, 0.0, 0.0, 0.0)
    rng = np.random.default_rng(5)
    for _ in range(20):
        p = random_nig(rng)
        y = float(rng.normal())
        analytic = np.array(ev.evidence_penalty_grad(y, p), dtype=float)
        numeric = numeric_grad(lambda x: float(ev.evidence_penalty(y, ev.NIGParams(*x))), np.array(p, dtype=float))
        assert max_rel_error(analytic, numeric) < 1e-6


def test_target_defaults():
    t = ev.target_nig(0.3)
    assert (float(t.v), float(t.gamma), float(t.alpha), float(t.beta)) == (0.3, 10.0, 5.0, 0.01)
    _, au, eu = ev.predictive_moments(t)
    assert au == pytest.approx(0.0025) and eu == pytest.approx(0.00025)


def test_target_kl_zero_at_target():
    t = ev.target_nig(np.array([0.1, -0.4]))
    np.testing.assert_allclose(ev.nig_kl(t, t), 0.0, atol=1e-12)


def test_target_invalid():
    with pytest.raises(ConfigError):
        ev.target_nig(0.0, alpha_t=0.5)
