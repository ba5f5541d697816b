"""Dimensionless option pricing: Black-Scholes and the additive logistic market.

Prices are relative (divided by the dividend-adjusted spot), tenors are in
years and moneyness is log(K / F). All functions broadcast over numpy arrays.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from shallowiv import special
from shallowiv.errors import DomainError, ModelInvalidError, UnattainablePriceError
from shallowiv.special import log_beta, normal_cdf, normal_pdf, polygamma, reg_inc_beta_xy

TERM_KEYS = ("sigma0", "h0", "alpha0", "alpha1", "beta0", "beta1")

IV_LOWER = 1e-8
IV_UPPER = 10.0


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


# ---------------------------------------------------------------- coordinates


def to_moneyness(strike, forward):
    strike = np.asarray(strike, float)
    forward = np.asarray(forward, float)
    if np.any(strike <= 0) or np.any(forward <= 0):
        raise DomainError("strike and forward must be positive")
    return _scalar_or_array(np.log(strike / forward))


def to_relative_price(price, adjusted_spot):
    """Dollar option price divided by the dividend-adjusted spot."""
    price = np.asarray(price, float)
    adjusted_spot = np.asarray(adjusted_spot, float)
    if np.any(adjusted_spot <= 0):
        raise DomainError("adjusted spot must be positive")
    if np.any(price < 0):
        raise DomainError("price must be nonnegative")
    return _scalar_or_array(price / adjusted_spot)


# ------------------------------------------------------------- Black-Scholes


def pivots(kappa, omega):
    """(z_plus, z_minus) = (kappa +/- omega^2 / 2) / omega."""
    half = 0.5 * omega
    ratio = kappa / omega
    return ratio + half, ratio - half


def _bs_prices(kappa, omega):
    kappa = np.asarray(kappa, float)
    omega = np.asarray(omega, float)
    if np.any(omega < 0):
        raise DomainError("total volatility must be nonnegative")
    kappa, omega = np.broadcast_arrays(kappa, omega)
    zero = omega == 0.0
    safe = np.where(zero, 1.0, omega)
    zp, zm = pivots(kappa, safe)
    ek = np.exp(kappa)
    put = ek * normal_cdf(zp) - normal_cdf(zm)
    call = normal_cdf(-zm) - ek * normal_cdf(-zp)
    put = np.where(zero, np.maximum(ek - 1.0, 0.0), put)
    call = np.where(zero, np.maximum(1.0 - ek, 0.0), call)
    return kappa, put, call


def bs_put(tau, kappa, omega):
    """Relative put price e^k Phi(z+) - Phi(z-) in total volatility omega."""
    _, put, _ = _bs_prices(kappa, omega)
    return _scalar_or_array(put)


def bs_call(tau, kappa, omega):
    _, _, call = _bs_prices(kappa, omega)
    return _scalar_or_array(call)


def bs_otm(tau, kappa, omega):
    """Put for kappa <= 0, call for kappa > 0."""
    kappa, put, call = _bs_prices(kappa, omega)
    return _scalar_or_array(np.where(kappa <= 0, put, call))


def bs_total_vega(kappa, omega):
    """d price / d omega = phi(z-)."""
    _, zm = pivots(np.asarray(kappa, float), np.asarray(omega, float))
    return _scalar_or_array(normal_pdf(zm))


def bs_vega(tau, kappa, omega):
    """Black-Scholes vega d price / d sigma = phi(z-) sqrt(tau)."""
    omega = np.asarray(omega, float)
    if np.any(omega <= 0):
        raise DomainError("vega requires omega > 0")
    return _scalar_or_array(bs_total_vega(kappa, omega) * np.sqrt(tau))


def otm_upper_bound(kappa):
    kappa = np.asarray(kappa, float)
    return np.where(kappa <= 0, np.exp(kappa), 1.0)


def attainable(tau, kappa, price):
    """Mask of OTM prices that some omega in (0, 10] reproduces."""
    tau, kappa, price = np.broadcast_arrays(
        np.asarray(tau, float), np.asarray(kappa, float), np.asarray(price, float)
    )
    with np.errstate(invalid="ignore"):
        ok = np.isfinite(price) & (price > 0.0) & (price < otm_upper_bound(kappa))
        return ok & (price <= bs_otm(tau, kappa, np.full(price.shape, IV_UPPER)))


def implied_total_vol(tau, kappa, price, *, max_iter=200):
    """Total implied volatility omega in (0, 10] from a relative OTM price.

    Safeguarded Newton on omega: iterates leaving the current bracket are
    replaced by the bracket midpoint. The bracket starts at (1e-8, 10).
    """
    tau, kappa, price = np.broadcast_arrays(
        np.asarray(tau, float), np.asarray(kappa, float), np.asarray(price, float)
    )
    bad = ~attainable(tau, kappa, price)
    if bad.any():
        raise UnattainablePriceError(
            f"{int(bad.sum())} price(s) outside the attainable range, e.g. "
            f"price={price[bad].flat[0]!r} at kappa={kappa[bad].flat[0]!r}"
        )
    lo = np.full(price.shape, IV_LOWER)
    hi = np.full(price.shape, IV_UPPER)
    # vega is maximal at sqrt(2|kappa|); Newton started there is well behaved
    omega = np.clip(np.sqrt(2.0 * np.abs(kappa)), 0.05, 1.0)
    active = np.ones(price.shape, dtype=bool)
    for _ in range(max_iter):
        f = bs_otm(tau, kappa, omega) - price
        below = f < 0
        lo = np.where(active & below, omega, lo)
        hi = np.where(active & ~below, omega, hi)
        fprime = bs_total_vega(kappa, omega)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = f / fprime
        cand = omega - step
        ok = np.isfinite(cand) & (cand > lo) & (cand < hi)
        exact = f == 0.0
        new = np.where(exact, omega, np.where(ok, cand, 0.5 * (lo + hi)))
        done = exact | (np.abs(new - omega) <= 4e-16 * omega) | (hi - lo <= 4e-16 * hi)
        omega = np.where(active, new, omega)
        active &= ~done
        if not active.any():
            break
    return _scalar_or_array(omega)


# ------------------------------------------------------------ logistic-beta


@dataclass(frozen=True)
class LbMarginal:
    """LB(mu, sigma, alpha, beta); fields may be floats or equal-shape arrays."""

    mu: object
    sigma: object
    alpha: object
    beta: object

    @classmethod
    def martingale(cls, sigma, alpha, beta):
        return cls(lb_location(sigma, alpha, beta), sigma, alpha, beta)

    def tilted(self):
        """Shape parameters of the e^x-tilted law: (alpha + sigma, beta - sigma)."""
        return self.alpha + self.sigma, self.beta - self.sigma


def lb_location(sigma, alpha, beta):
    """Location making E[e^X] = 1: log B(alpha, beta) - log B(alpha + sigma, beta - sigma).

    The e^x tilt of LB(mu, sigma, alpha, beta) integrates to
    e^mu B(alpha + sigma, beta - sigma) / B(alpha, beta), which fixes the sign.
    """
    sigma = np.asarray(sigma, float)
    alpha = np.asarray(alpha, float)
    beta = np.asarray(beta, float)
    if np.any(sigma >= beta):
        raise DomainError("martingale location needs sigma < beta")
    if np.any(sigma < 0) or np.any(alpha <= 0):
        raise DomainError("martingale location needs sigma >= 0 and alpha > 0")
    return _scalar_or_array(log_beta(alpha, beta) - log_beta(alpha + sigma, beta - sigma))


def _log_logistic_cdfs(z):
    # log Phi_L(z) and log(1 - Phi_L(z)) without cancellation
    return -np.logaddexp(0.0, -z), -np.logaddexp(0.0, z)


def std_lb_pdf(z, alpha, beta):
    lc, lsc = _log_logistic_cdfs(np.asarray(z, float))
    return np.exp(alpha * lc + beta * lsc - log_beta(alpha, beta))


def std_lb_cdf(z, alpha, beta):
    z = np.asarray(z, float)
    return reg_inc_beta_xy(special.logistic_cdf(z), special.logistic_cdf(-z), alpha, beta)


def std_lb_sf(z, alpha, beta):
    """1 - Phi_LB(z; alpha, beta), computed as Phi_LB(-z; beta, alpha)."""
    return std_lb_cdf(-np.asarray(z, float), beta, alpha)


def _pivot(x, m):
    return (np.asarray(x, float) - m.mu) / m.sigma


def lb_pdf(x, m: LbMarginal):
    return _scalar_or_array(std_lb_pdf(_pivot(x, m), m.alpha, m.beta) / m.sigma)


def lb_cdf(x, m: LbMarginal):
    return _scalar_or_array(std_lb_cdf(_pivot(x, m), m.alpha, m.beta))


def lb_tilted_pdf(x, m: LbMarginal):
    a, b = m.tilted()
    return _scalar_or_array(std_lb_pdf(_pivot(x, m), a, b) / m.sigma)


def lb_tilted_cdf(x, m: LbMarginal):
    a, b = m.tilted()
    return _scalar_or_array(std_lb_cdf(_pivot(x, m), a, b))


def lb_moments(m: LbMarginal):
    """(mean, variance, skewness, excess kurtosis) of LB(mu, sigma, alpha, beta)."""
    a, b = m.alpha, m.beta
    trigamma_sum = polygamma(1, a) + polygamma(1, b)
    mean = m.sigma * (polygamma(0, a) - polygamma(0, b)) + m.mu
    var = m.sigma**2 * trigamma_sum
    skew = (polygamma(2, a) - polygamma(2, b)) / trigamma_sum**1.5
    kurt = (polygamma(3, a) + polygamma(3, b)) / trigamma_sum**2
    return mean, var, skew, kurt


def lb_dispersion_for_variance(variance, alpha, beta):
    return math.sqrt(variance / (polygamma(1, alpha) + polygamma(1, beta)))


# ----------------------------------------------------------- term structure


@dataclass(frozen=True)
class LbTermStructure:
    """sigma(t) = sigma0 t^h0, alpha(t) = alpha1 + (alpha0 - alpha1)/(1 + sigma(t)),
    beta(t) = beta1 + (beta0 - beta1)/(1 + sigma(t)) + sigma(t)."""

    sigma0: float = 0.15
    h0: float = 0.5
    alpha0: float = 0.5
    alpha1: float = 1.0
    beta0: float = 1.0
    beta1: float = 1.0

    def curves(self, tau):
        tau = np.asarray(tau, float)
        s = self.sigma0 * tau**self.h0
        a = self.alpha1 + (self.alpha0 - self.alpha1) / (1.0 + s)
        b = self.beta1 + (self.beta0 - self.beta1) / (1.0 + s) + s
        return s, a, b

    def to_kv(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_kv(cls, kv):
        missing = [k for k in TERM_KEYS if k not in kv]
        if missing:
            raise KeyError(f"term structure missing keys: {', '.join(missing)}")
        return cls(**{k: float(kv[k]) for k in TERM_KEYS})


DEFAULT_TERM_STRUCTURE = LbTermStructure()


def term_structure_eval(tau, ts: LbTermStructure) -> LbMarginal:
    tau = np.asarray(tau, float)
    if np.any(tau <= 0):
        raise DomainError("tenor must be positive")
    s, a, b = ts.curves(tau)
    if np.any(~(s > 0)):
        raise ModelInvalidError("dispersion sigma(tau) must be positive")
    if np.any(a <= 0) or np.any(b <= 0):
        raise ModelInvalidError("alpha(tau) and beta(tau) must be positive")
    if np.any(s >= b):
        raise ModelInvalidError("sigma(tau) < beta(tau) is violated")
    mu = lb_location(s, a, b)
    return LbMarginal(mu, _scalar_or_array(s), _scalar_or_array(a), _scalar_or_array(b))


@dataclass(frozen=True)
class Violation:
    condition: str  # "(i)".."(iv)"
    tau: float
    detail: str

    def __str__(self):
        return f"condition {self.condition} violated at tau={self.tau:.6g}: {self.detail}"


def check_term_structure(ts: LbTermStructure, tau_min=0.01, tau_max=2.0, step=1e-3, tol=1e-12):
    """Evaluate the four admissibility conditions on a dense tenor grid.

    (i) sigma < beta, (ii) alpha, beta > 0, (iii) sigma nondecreasing with
    sigma(0) = 0, (iv) alpha/sigma and beta/sigma nonincreasing. Returns a
    list of Violation, at most one per condition (the first offending tenor).
    """
    n = int(round((tau_max - tau_min) / step)) + 1
    tau = tau_min + step * np.arange(n)
    with np.errstate(all="ignore"):
        s, a, b = ts.curves(tau)
        s_at_zero = ts.sigma0 * 0.0**ts.h0 if ts.h0 > 0 else ts.sigma0 * (1.0 if ts.h0 == 0 else np.inf)
    out = []

    def first(mask, cond, detail):
        idx = np.flatnonzero(mask)
        if idx.size:
            out.append(Violation(cond, float(tau[idx[0]]), detail))

    first(~(s < b), "(i)", "sigma(tau) >= beta(tau)")
    first(~((a > 0) & (b > 0)), "(ii)", "alpha(tau) or beta(tau) is not positive")
    ds = np.diff(s)
    if s_at_zero != 0.0:
        out.append(Violation("(iii)", 0.0, f"sigma(0) = {s_at_zero} != 0"))
    else:
        first(np.concatenate([[s[0] < 0], ds < -tol * np.maximum(1.0, np.abs(s[1:]))]), "(iii)",
              "sigma(tau) is decreasing")
    with np.errstate(all="ignore"):
        ra = a / s
        rb = b / s
    da, db = np.diff(ra), np.diff(rb)
    scale = lambda r: tol * np.maximum(1.0, np.abs(r[1:]))  # noqa: E731
    first(np.concatenate([[False], ~(da <= scale(ra))]), "(iv)", "alpha/sigma is increasing")
    first(np.concatenate([[False], ~(db <= scale(rb))]), "(iv)", "beta/sigma is increasing")
    return out


def lb_marginal_price(kappa, m: LbMarginal):
    """(put, call, otm) relative prices when the log return is distributed as ``m``."""
    kappa = np.asarray(kappa, float)
    z = (kappa - m.mu) / m.sigma
    x = special.logistic_cdf(z)
    y = special.logistic_cdf(-z)
    at, bt = m.tilted()
    ek = np.exp(kappa)
    put = ek * reg_inc_beta_xy(x, y, m.alpha, m.beta) - reg_inc_beta_xy(x, y, at, bt)
    call = reg_inc_beta_xy(y, x, bt, at) - ek * reg_inc_beta_xy(y, x, m.beta, m.alpha)
    otm = np.where(kappa <= 0, put, call)
    return _scalar_or_array(put), _scalar_or_array(call), _scalar_or_array(otm)


def lb_price(tau, kappa, ts: LbTermStructure):
    """(put, call, otm) relative prices in the additive logistic market."""
    tau, kappa = np.broadcast_arrays(np.asarray(tau, float), np.asarray(kappa, float))
    return lb_marginal_price(kappa, term_structure_eval(tau, ts))


class LbMarket:
    """Additive logistic market exposing prices and the true density by (tau, kappa)."""

    def __init__(self, ts: LbTermStructure = DEFAULT_TERM_STRUCTURE):
        self.ts = ts

    def otm_price(self, tau, kappa):
        return lb_price(tau, kappa, self.ts)[2]

    def pdf(self, tau, kappa):
        return lb_pdf(kappa, term_structure_eval(tau, self.ts))

    def cdf(self, tau, kappa):
        return lb_cdf(kappa, term_structure_eval(tau, self.ts))


class FlatBlackScholesMarket:
    """Black-Scholes market with constant volatility, omega = sigma sqrt(tau)."""

    def __init__(self, sigma=0.2):
        self.sigma = sigma

    def omega(self, tau):
        return self.sigma * np.sqrt(tau)

    def otm_price(self, tau, kappa):
        return bs_otm(tau, kappa, self.omega(tau))

    def pdf(self, tau, kappa):
        w = self.omega(tau)
        return _scalar_or_array(normal_pdf(pivots(np.asarray(kappa, float), w)[0]) / w)

    def cdf(self, tau, kappa):
        return _scalar_or_array(normal_cdf(pivots(np.asarray(kappa, float), self.omega(tau))[0]))


# ------------------------------------------------------------------ datasets


def _uniform_grid(start, stop, step):
    if step <= 0 or stop < start:
        raise DomainError("grid needs step > 0 and stop >= start")
    n = int(round((stop - start) / step)) + 1
    return np.round(start + step * np.arange(n), 12)


@dataclass(frozen=True)
class GridSpec:
    tau_start: float
    tau_stop: float
    tau_step: float
    kappa_start: float
    kappa_stop: float
    kappa_step: float

    def tenors(self):
        return _uniform_grid(self.tau_start, self.tau_stop, self.tau_step)

    def moneyness(self):
        return _uniform_grid(self.kappa_start, self.kappa_stop, self.kappa_step)


TRAIN_GRID = GridSpec(0.1, 2.0, 0.1, -1.0, 1.0, 0.01)
# 2001 moneyness points; the 2010 quoted for this grid is not reproducible
VALID_GRID = GridSpec(0.1, 2.0, 0.01, -1.0, 1.0, 0.001)


def _grid_step(grid, name):
    if grid.size < 2:
        return 0.0
    d = np.diff(grid)
    if np.any(np.abs(d - d[0]) > 1e-12) or d[0] <= 0:
        raise ValueError(f"{name} grid is not uniform and increasing")
    return float(d[0])


@dataclass
class ChainDataset:
    """Relative OTM prices on a tenor x moneyness Cartesian grid.

    Flattened arrays are row-major: tenor-major, moneyness-minor.
    """

    tenors: np.ndarray
    moneyness: np.ndarray
    prices: np.ndarray  # (n_tenors, n_moneyness)

    def __post_init__(self):
        self.tenors = np.asarray(self.tenors, float)
        self.moneyness = np.asarray(self.moneyness, float)
        self.prices = np.asarray(self.prices, float).reshape(self.tenors.size, self.moneyness.size)
        self.d_tau = _grid_step(self.tenors, "tenor")
        self.d_kappa = _grid_step(self.moneyness, "moneyness")

    @property
    def size(self):
        return self.prices.size

    @property
    def tau(self):
        return np.repeat(self.tenors, self.moneyness.size)

    @property
    def kappa(self):
        return np.tile(self.moneyness, self.tenors.size)

    @property
    def otm(self):
        return self.prices.ravel()

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("tenor,moneyness,otm_price\n")
            for t, k, p in zip(self.tau, self.kappa, self.otm):
                fh.write(f"{t:.17g},{k:.17g},{p:.17g}\n")

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["tenor", "moneyness", "otm_price"]:
                raise ValueError(f"{path}: unexpected header {header}")
            rows = np.array([[float(v) for v in r] for r in reader if r], dtype=float)
        if rows.size == 0:
            raise ValueError(f"{path}: no data rows")
        tenors = np.unique(rows[:, 0])
        moneyness = np.unique(rows[:, 1])
        if tenors.size * moneyness.size != rows.shape[0]:
            raise ValueError(f"{path}: rows do not form a Cartesian grid")
        order = np.lexsort((rows[:, 1], rows[:, 0]))
        return cls(tenors, moneyness, rows[order, 2])


def generate_dataset(grid: GridSpec, ts: LbTermStructure = DEFAULT_TERM_STRUCTURE) -> ChainDataset:
    tenors = grid.tenors()
    moneyness = grid.moneyness()
    tt, kk = np.meshgrid(tenors, moneyness, indexing="ij")
    _, _, otm = lb_price(tt, kk, ts)
    return ChainDataset(tenors, moneyness, otm)
