"""Scalar special functions used by the pricing and parity layers.

Every function accepts floats or numpy arrays and evaluates in float64.

Algorithms
----------
* ``log_gamma``: Lanczos approximation with g = 7 and the nine
  coefficients below (Godfrey's set), reflection for x < 0.5.
  Relative accuracy is about 1e-15 on the positive axis.
* ``reg_inc_beta``: continued fraction for I_x(a, b) evaluated with the
  modified Lentz method. The tail swap I_x(a, b) = 1 - I_{1-x}(b, a) is
  used when x > a / (a + b).
* ``polygamma``: upward recurrence until the argument reaches 16, then the
  asymptotic expansion with Bernoulli numbers B_2 .. B_20.
* ``normal_cdf`` delegates to ``scipy.special.ndtr``.
"""

import math

import numpy as np
from scipy.special import ndtr

from shallowiv.errors import DomainError

__all__ = [
    "normal_pdf",
    "normal_cdf",
    "logistic_pdf",
    "logistic_cdf",
    "log_gamma",
    "log_beta",
    "reg_inc_beta",
    "polygamma",
]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

LANCZOS_G = 7.0
LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)

# B_2, B_4, ..., B_20
_BERNOULLI_EVEN = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
)
_ASYMPTOTIC_FROM = 16.0

_CF_MAXITER = 500
_CF_EPS = 1e-16
_CF_TINY = 1e-300


def _as_finite(x, name="z"):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


def _out(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def normal_pdf(z):
    z = _as_finite(z)
    return _out(_INV_SQRT_2PI * np.exp(-0.5 * z * z))


def normal_cdf(z):
    z = _as_finite(z)
    return _out(ndtr(z))


def logistic_pdf(z):
    z = _as_finite(z)
    e = np.exp(-np.abs(z))
    return _out(e / (1.0 + e) ** 2)


def logistic_cdf(z):
    """e^z / (1 + e^z), evaluated so that neither tail overflows."""
    z = _as_finite(z)
    e = np.exp(-np.abs(z))
    return _out(np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)))


def _lanczos_log_gamma(x):
    # valid for x >= 0.5
    xm = x - 1.0
    acc = np.full_like(xm, LANCZOS_COEF[0])
    for i, c in enumerate(LANCZOS_COEF[1:], start=1):
        acc = acc + c / (xm + i)
    t = xm + LANCZOS_G + 0.5
    return 0.5 * math.log(2.0 * math.pi) + (xm + 0.5) * np.log(t) - t + np.log(acc)


def log_gamma(x):
    """ln |Gamma(x)| for x > 0."""
    x = _as_finite(x, "x")
    if np.any(x <= 0):
        raise DomainError("log_gamma requires x > 0")
    small = x < 0.5
    safe = np.where(small, 1.0 - x, x)
    val = _lanczos_log_gamma(safe)
    # Gamma(x) Gamma(1 - x) = pi / sin(pi x)
    refl = math.log(math.pi) - np.log(np.abs(np.sin(math.pi * x))) - val
    return _out(np.where(small, refl, val))


def log_beta(a, b):
    a = _as_finite(a, "a")
    b = _as_finite(b, "b")
    if np.any(a <= 0) or np.any(b <= 0):
        raise DomainError("log_beta requires a > 0 and b > 0")
    return _out(log_gamma(a) + log_gamma(b) - log_gamma(a + b))


def _beta_cf(x, a, b):
    """Continued fraction of I_x(a, b) (modified Lentz), vectorized."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _CF_TINY, _CF_TINY, d)
    d = 1.0 / d
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)
    for m in range(1, _CF_MAXITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _CF_TINY, _CF_TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _CF_TINY, _CF_TINY, c)
        d = 1.0 / d
        h = np.where(active, h * d * c, h)
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _CF_TINY, _CF_TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _CF_TINY, _CF_TINY, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(active, h * delta, h)
        active &= np.abs(delta - 1.0) > _CF_EPS
        if not active.any():
            break
    return h


def _inc_beta_direct(x, y, a, b):
    # front * cf / a, where x is on the fast-converging side
    with np.errstate(divide="ignore"):
        log_front = a * np.log(x) + b * np.log(y) - log_beta(a, b)
    return np.exp(log_front) * _beta_cf(x, a, b) / a


def reg_inc_beta_xy(x, y, a, b):
    """I_x(a, b) given both x and y = 1 - x.

    Passing y separately keeps full precision when x is within rounding of 1,
    as happens when x comes from a logistic CDF deep in its right tail.
    """
    x, y, a, b = np.broadcast_arrays(
        np.asarray(x, float), np.asarray(y, float), np.asarray(a, float), np.asarray(b, float)
    )
    out = np.empty(x.shape)
    lo = x <= 0.0
    hi = y <= 0.0
    interior = ~(lo | hi)
    out[lo] = 0.0
    out[hi] = 1.0
    if interior.any():
        xi, yi, ai, bi = x[interior], y[interior], a[interior], b[interior]
        swap = xi > ai / (ai + bi)
        val = np.empty(xi.shape)
        keep = ~swap
        if keep.any():
            val[keep] = _inc_beta_direct(xi[keep], yi[keep], ai[keep], bi[keep])
        if swap.any():
            val[swap] = 1.0 - _inc_beta_direct(yi[swap], xi[swap], bi[swap], ai[swap])
        out[interior] = np.clip(val, 0.0, 1.0)
    return _out(out)


def reg_inc_beta(x, a, b):
    """Regularized incomplete beta function I_x(a, b)."""
    x = _as_finite(x, "x")
    a = _as_finite(a, "a")
    b = _as_finite(b, "b")
    if np.any(x < 0) or np.any(x > 1):
        raise DomainError("reg_inc_beta requires 0 <= x <= 1")
    if np.any(a <= 0) or np.any(b <= 0):
        raise DomainError("reg_inc_beta requires a > 0 and b > 0")
    return reg_inc_beta_xy(x, 1.0 - x, a, b)


def _polygamma_asymptotic(n, x):
    if n == 0:
        s = np.log(x) - 0.5 / x
        x2 = x * x
        xp = x2
        for k, b2k in enumerate(_BERNOULLI_EVEN, start=1):
            s = s - b2k / (2 * k * xp)
            xp = xp * x2
        return s
    # psi^(n)(x) ~ (-1)^(n+1) [ (n-1)!/x^n + n!/(2 x^(n+1)) + sum_k B_2k (2k+n-1)!/(2k)! / x^(2k+n) ]
    s = math.factorial(n - 1) / x**n + math.factorial(n) / (2.0 * x ** (n + 1))
    for k, b2k in enumerate(_BERNOULLI_EVEN, start=1):
        coef = b2k * math.factorial(2 * k + n - 1) / math.factorial(2 * k)
        s = s + coef / x ** (2 * k + n)
    return (-1) ** (n + 1) * s


def polygamma(n, x):
    """Polygamma function of order n in {0, 1, 2, 3} (n = 0 is digamma)."""
    if n not in (0, 1, 2, 3):
        raise DomainError("polygamma order must be 0, 1, 2 or 3")
    x = _as_finite(x, "x")
    if np.any(x <= 0):
        raise DomainError("polygamma requires x > 0")
    x = np.array(x, dtype=float)
    shift = np.zeros_like(x)
    sign = (-1) ** n * math.factorial(n)
    # psi^(n)(x) = psi^(n)(x + 1) - (-1)^n n! / x^(n+1)
    while True:
        low = x < _ASYMPTOTIC_FROM
        if not low.any():
            break
        shift = shift - np.where(low, sign / np.where(low, x, 1.0) ** (n + 1), 0.0)
        x = np.where(low, x + 1.0, x)
    return _out(_polygamma_asymptotic(n, x) + shift)
