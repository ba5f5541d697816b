"""Density-volatility parity: implied CDF/PDF recovered from a total-volatility jet.

With omega = omega(tau, kappa) and its partials, the market quantities are

    d_tau p  = psi~_BS * omega * d_tau omega
    Psi      = Psi_BS + zeta,   zeta = psi_BS * omega * d_kappa omega
    psi      = psi_BS * xi,     xi   = (1 - kappa/omega d_kappa omega)^2
                                       - (omega d_kappa omega)^2 / 4
                                       + omega d_kappakappa omega

where psi_BS, psi~_BS, Psi_BS are the Black-Scholes quasi-densities evaluated
with the smile-varying omega.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from shallowiv.errors import DomainError
from shallowiv.market import attainable, bs_otm, implied_total_vol, pivots
from shallowiv.special import normal_cdf, normal_pdf

AUDIT_COLUMNS = ("tau", "kappa", "err_pdf", "err_cdf", "err_calendar", "eps_C", "eps_V", "eps_B")
REL_FLOOR = 1e-6


@dataclass(frozen=True)
class SurfaceJet:
    """omega and the partials the parity needs, at one point or broadcast arrays."""

    tau: object
    kappa: object
    omega: object
    d_tau: object = 0.0
    d_kappa: object = 0.0
    d_kappa2: object = 0.0

    def __post_init__(self):
        vals = [np.asarray(getattr(self, f), float) for f in ("tau", "kappa", "omega", "d_tau", "d_kappa", "d_kappa2")]
        if not all(np.all(np.isfinite(v)) for v in vals):
            raise DomainError("jet entries must be finite")
        if np.any(vals[2] <= 0):
            raise DomainError("jet needs omega > 0")


@dataclass(frozen=True)
class CorrectorBundle:
    zeta: object
    xi: object
    quasi_pdf: object
    quasi_cdf: object
    tilted_quasi_pdf: object


def quasi_density(tau, kappa, omega):
    """(psi_BS, tilted psi_BS, Psi_BS) with omega evaluated at x = kappa."""
    omega = np.asarray(omega, float)
    if np.any(omega <= 0):
        raise DomainError("quasi density needs omega > 0")
    zp, zm = pivots(np.asarray(kappa, float), omega)
    return normal_pdf(zp) / omega, normal_pdf(zm) / omega, normal_cdf(zp)


def corrector_terms(kappa, omega, d_kappa, d_kappa2):
    """zeta / psi_BS and xi; split out so training can differentiate them."""
    slope = omega * d_kappa
    a = 1.0 - kappa / omega * d_kappa
    xi = a * a - 0.25 * slope * slope + omega * d_kappa2
    return slope, xi


def correctors(jet: SurfaceJet) -> CorrectorBundle:
    psi, psi_t, cdf = quasi_density(jet.tau, jet.kappa, jet.omega)
    slope, xi = corrector_terms(
        np.asarray(jet.kappa, float), np.asarray(jet.omega, float), jet.d_kappa, jet.d_kappa2
    )
    return CorrectorBundle(zeta=psi * slope, xi=xi, quasi_pdf=psi, quasi_cdf=cdf, tilted_quasi_pdf=psi_t)


def implied_cdf(jet: SurfaceJet):
    c = correctors(jet)
    return c.quasi_cdf + c.zeta


def implied_pdf(jet: SurfaceJet):
    c = correctors(jet)
    return c.quasi_pdf * c.xi


def calendar_density(jet: SurfaceJet):
    """d_tau p = psi~_BS omega d_tau omega."""
    c = correctors(jet)
    return c.tilted_quasi_pdf * jet.omega * jet.d_tau


def arbitrage_errors(jet: SurfaceJet):
    """(eps_C, eps_V, eps_B): hinge violations of the three static-arbitrage inequalities."""
    c = correctors(jet)
    eps_c = np.maximum(0.0, -np.asarray(jet.d_tau, float))
    eps_v = np.maximum(0.0, -c.quasi_cdf - c.zeta)
    eps_b = np.maximum(0.0, -np.asarray(c.xi, float))
    return eps_c, eps_v, eps_b


# --------------------------------------------------------------------- audit


def _rel_err(value, reference):
    return np.abs(value - reference) / np.maximum(np.abs(reference), REL_FLOOR)


@dataclass
class AuditReport:
    rows: np.ndarray  # (n, 8) in AUDIT_COLUMNS order
    err_vega: float  # max relative error of d_omega p = phi(z-)
    err_tilt: float  # max relative error of e^kappa phi(z+) = phi(z-)
    skipped: list = field(default_factory=list)

    def column(self, name):
        return self.rows[:, AUDIT_COLUMNS.index(name)]

    @property
    def max_errors(self):
        return {
            "pdf": float(self.column("err_pdf").max(initial=0.0)),
            "cdf": float(self.column("err_cdf").max(initial=0.0)),
            "calendar": float(self.column("err_calendar").max(initial=0.0)),
            "vega": self.err_vega,
            "tilt": self.err_tilt,
        }

    def passed(self, tol=1e-3, intermediate_tol=1e-7):
        e = self.max_errors
        return (
            max(e["pdf"], e["cdf"], e["calendar"]) <= tol
            and max(e["vega"], e["tilt"]) <= intermediate_tol
        )

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(AUDIT_COLUMNS)
            for r in self.rows:
                w.writerow([f"{v:.17g}" for v in r])


def parity_audit(market, taus, kappas, fd_step=1e-4, vega_step=1e-6):
    """Check every parity identity on a (tau, kappa) grid against ``market``.

    ``market`` provides otm_price, pdf and cdf as functions of (tau, kappa).
    Jets come from central differences of the inverted implied volatility with
    step ``fd_step``; d_tau p is compared with a central difference of the
    market price. The total-vega identity uses its own step ``vega_step``.
    Points whose stencil cannot be inverted are skipped and listed.
    """
    tt, kk = np.meshgrid(np.asarray(taus, float), np.asarray(kappas, float), indexing="ij")
    tau, kappa = tt.ravel(), kk.ravel()
    h = fd_step
    # stencil: centre, tau+, tau-, kappa+, kappa-
    st_tau = np.stack([tau, tau + h, tau - h, tau, tau])
    st_kap = np.stack([kappa, kappa, kappa, kappa + h, kappa - h])
    with np.errstate(all="ignore"):
        prices = market.otm_price(st_tau, st_kap)
    ok = attainable(st_tau, st_kap, prices).all(axis=0) & (tau - h > 0)
    skipped = [(float(t), float(k)) for t, k in zip(tau[~ok], kappa[~ok])]
    tau, kappa = tau[ok], kappa[ok]
    st_tau, st_kap, prices = st_tau[:, ok], st_kap[:, ok], prices[:, ok]

    w = implied_total_vol(st_tau, st_kap, prices)
    w0, wtp, wtm, wkp, wkm = w
    jet = SurfaceJet(
        tau,
        kappa,
        w0,
        d_tau=(wtp - wtm) / (2 * h),
        d_kappa=(wkp - wkm) / (2 * h),
        d_kappa2=(wkp - 2 * w0 + wkm) / (h * h),
    )
    # market price is a function of (tau, kappa) only; d_tau of the OTM price
    # equals d_tau of the put by put-call parity
    dp_dtau = (prices[1] - prices[2]) / (2 * h)
    err_pdf = _rel_err(implied_pdf(jet), market.pdf(tau, kappa))
    err_cdf = _rel_err(implied_cdf(jet), market.cdf(tau, kappa))
    err_cal = _rel_err(calendar_density(jet), dp_dtau)
    eps_c, eps_v, eps_b = arbitrage_errors(jet)

    zp, zm = pivots(kappa, w0)
    vega_fd = (bs_otm(tau, kappa, w0 + vega_step) - bs_otm(tau, kappa, w0 - vega_step)) / (2 * vega_step)
    err_vega = _rel_err(vega_fd, normal_pdf(zm))
    err_tilt = _rel_err(np.exp(kappa) * normal_pdf(zp), normal_pdf(zm))

    rows = np.column_stack([tau, kappa, err_pdf, err_cdf, err_cal, eps_c, eps_v, eps_b])
    return AuditReport(
        rows=rows,
        err_vega=float(err_vega.max(initial=0.0)),
        err_tilt=float(err_tilt.max(initial=0.0)),
        skipped=skipped,
    )
