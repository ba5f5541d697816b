import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shallowiv import market as mk
from shallowiv import parity as pa
from shallowiv.errors import DomainError
from shallowiv.special import normal_pdf


def smile(tau, k, a=0.2, b=0.1, c=0.15):
    """Analytic total vol sqrt(tau) (a + b k + c k^2) and its jet."""
    st_ = math.sqrt(tau)
    w = st_ * (a + b * k + c * k * k)
    return pa.SurfaceJet(tau, k, w, d_tau=w / (2 * tau), d_kappa=st_ * (b + 2 * c * k), d_kappa2=st_ * 2 * c)


def smile_put(tau, k):
    return mk.bs_put(tau, k, smile(tau, k).omega)


@given(st.floats(0.2, 2.0), st.floats(-0.8, 0.8))
def test_pdf_identity_against_breeden_litzenberger(t, k):
    # psi(k) = e^{-k} (p'' - p') for the put as a function of log-strike
    h = 1e-3
    p = [smile_put(t, k + j * h) for j in (-2, -1, 0, 1, 2)]
    d1 = (p[0] - 8 * p[1] + 8 * p[3] - p[4]) / (12 * h)
    d2 = (-p[0] + 16 * p[1] - 30 * p[2] + 16 * p[3] - p[4]) / (12 * h * h)
    ref = math.exp(-k) * (d2 - d1)
    assert pa.implied_pdf(smile(t, k)) == pytest.approx(ref, rel=1e-5, abs=1e-8)


@given(st.floats(0.2, 2.0), st.floats(-0.8, 0.8))
def test_cdf_identity_against_put_slope(t, k):
    # Psi(k) = e^{-k} dp/dk
    h = 1e-3
    p = [smile_put(t, k + j * h) for j in (-2, -1, 1, 2)]
    d1 = (p[0] - 8 * p[1] + 8 * p[2] - p[3]) / (12 * h)
    assert pa.implied_cdf(smile(t, k)) == pytest.approx(math.exp(-k) * d1, rel=1e-6, abs=1e-9)


@given(st.floats(0.2, 2.0), st.floats(-0.8, 0.8))
def test_calendar_identity(t, k):
    h = 1e-5
    ref = (smile_put(t + h, k) - smile_put(t - h, k)) / (2 * h)
    assert pa.calendar_density(smile(t, k)) == pytest.approx(ref, rel=1e-6, abs=1e-10)


@given(st.floats(0.01, 3.0), st.floats(-1.5, 1.5), st.floats(0.05, 0.8), st.floats(0.0, 0.3))
def test_trivial_corrector_exact(t, k, sigma, slope):
    # constant in kappa, nondecreasing in tau: bitwise identities
    w = sigma * math.sqrt(t)
    jet = pa.SurfaceJet(t, k, w, d_tau=slope, d_kappa=0.0, d_kappa2=0.0)
    c = pa.correctors(jet)
    assert c.zeta == 0.0 and c.xi == 1.0
    assert pa.implied_pdf(jet) == c.quasi_pdf
    assert pa.implied_cdf(jet) == c.quasi_cdf
    assert all(e == 0.0 for e in pa.arbitrage_errors(jet))


@given(st.floats(0.05, 2.0), st.floats(-1.0, 1.0), st.floats(0.05, 0.6))
def test_flat_jet_recovers_black_scholes_density(t, k, sigma):
    m = mk.FlatBlackScholesMarket(sigma)
    w = m.omega(t)
    jet = pa.SurfaceJet(t, k, w, d_tau=sigma / (2 * math.sqrt(t)))
    assert pa.implied_pdf(jet) == pytest.approx(m.pdf(t, k), rel=1e-12)
    assert pa.implied_cdf(jet) == pytest.approx(m.cdf(t, k), rel=1e-12)
    h = 1e-5
    ref = (m.otm_price(t + h, k) - m.otm_price(t - h, k)) / (2 * h)
    assert pa.calendar_density(jet) == pytest.approx(ref, rel=1e-6)


@given(st.floats(-1.0, 1.0), st.floats(0.05, 2.0))
def test_tilt_identity(k, w):
    zp, zm = mk.pivots(k, w)
    assert math.exp(k) * normal_pdf(zp) == pytest.approx(normal_pdf(zm), rel=1e-13)


def test_arbitrage_errors_detect_each_violation():
    # calendar: decreasing in tau
    e = pa.arbitrage_errors(pa.SurfaceJet(1.0, 0.0, 0.2, d_tau=-0.05))
    assert e[0] == pytest.approx(0.05) and e[1] == 0 and e[2] == 0
    # butterfly: strongly concave smile
    e = pa.arbitrage_errors(pa.SurfaceJet(1.0, 0.0, 0.2, d_tau=0.1, d_kappa2=-10.0))
    assert e[2] == pytest.approx(1.0) and e[0] == 0
    # vertical: slope so negative the implied CDF goes below zero
    e = pa.arbitrage_errors(pa.SurfaceJet(1.0, -0.5, 0.2, d_tau=0.1, d_kappa=-20.0))
    assert e[1] > 0


def test_vectorized_jets():
    k = np.linspace(-0.5, 0.5, 11)
    jet = pa.SurfaceJet(np.ones(11), k, 0.2 + 0.1 * k * k, d_tau=0.1, d_kappa=0.2 * k, d_kappa2=0.2)
    assert pa.implied_pdf(jet).shape == (11,)
    assert np.all(pa.arbitrage_errors(jet)[2] == 0)


@pytest.mark.parametrize("kw", [{"omega": 0.0}, {"omega": -0.1}, {"d_kappa": np.nan}])
def test_invalid_jets_rejected(kw):
    args = {"tau": 1.0, "kappa": 0.0, "omega": 0.2, **kw}
    with pytest.raises(DomainError):
        pa.SurfaceJet(**args)


def test_audit_on_lb_market_passes():
    kappas = np.round(np.arange(-0.8, 0.8001, 0.05), 12)
    rep = pa.parity_audit(mk.LbMarket(), [0.5, 1.0, 2.0], kappas)
    assert rep.passed()
    assert not rep.skipped
    assert rep.rows.shape == (3 * kappas.size, len(pa.AUDIT_COLUMNS))
    # the market is arbitrage free, so no hinge fires beyond FD noise
    assert rep.column("eps_C").max() == 0.0
    assert rep.column("eps_B").max() == 0.0


def test_audit_coarse_step_fails():
    rep = pa.parity_audit(mk.LbMarket(), [1.0], np.round(np.arange(-0.8, 0.81, 0.1), 12), fd_step=0.1)
    assert not rep.passed()
    assert rep.max_errors["pdf"] > 1e-3


def test_audit_flat_market_fd_accuracy():
    # FD jets of the inverted vol: truncation and cancellation cap accuracy near 1e-6
    rep = pa.parity_audit(mk.FlatBlackScholesMarket(0.2), [0.5, 1.0, 2.0], np.round(np.arange(-0.8, 0.81, 0.1), 12))
    e = rep.max_errors
    assert max(e["pdf"], e["cdf"], e["calendar"]) < 1e-5
    assert e["tilt"] < 1e-13


def test_audit_csv(tmp_path):
    rep = pa.parity_audit(mk.LbMarket(), [1.0], [-0.1, 0.0, 0.1])
    rep.to_csv(tmp_path / "a.csv")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == ",".join(pa.AUDIT_COLUMNS)
    assert len(lines) == 4
