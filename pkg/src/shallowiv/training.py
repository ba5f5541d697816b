"""Losses, Adam and the shuffled mini-batch training loop.

Total loss = L_P + L_C + L_V + L_B, each a root mean square over the points:

    L_P  = sqrt(mean((o_hat - o)^2 / v_hat^k))   k = 1 ("literal") or 2 ("squared")
    L_X  = sqrt(mean(eps_X^2))                   X in {C, V, B}

with o_hat the Black-Scholes OTM price at the network's omega and v_hat the
vega, floored at ``vega_floor``. The density loss is diagnostic only.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field

import numpy as np

from shallowiv.errors import NumericAbort
from shallowiv.market import ChainDataset, LbTermStructure, bs_otm, lb_pdf, pivots, term_structure_eval
from shallowiv.neural import VolNetwork, backward, forward_jet
from shallowiv.special import normal_cdf, normal_pdf

BPS = 1e4
VEGA_MODES = ("literal", "squared")
EVAL_CHUNK = 16384

_MASK64 = (1 << 64) - 1


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def epoch_seed(master, epoch):
    """Shuffle seed of one epoch: splitmix64(splitmix64(master) xor epoch)."""
    return splitmix64(splitmix64(master & _MASK64) ^ epoch)


def name_seed(master, name):
    """64-bit seed from a master seed and a string, via BLAKE2b."""
    digest = hashlib.blake2b(f"{master}:{name}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 256
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-16
    seed: int = 0
    vega_mode: str = "literal"
    vega_floor: float = 1e-8
    eval_every: int = 10

    def __post_init__(self):
        if self.vega_mode not in VEGA_MODES:
            raise ValueError(f"vega_mode must be one of {VEGA_MODES}")
        if self.epochs < 0 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and eval_every >= 1 required")
        if not (self.lr > 0 and self.vega_floor > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("lr and vega_floor must be positive and Adam betas in [0, 1)")


@dataclass
class LossBreakdown:
    price: float
    calendar: float
    vertical: float
    butterfly: float
    density: float | None = None

    @property
    def total(self):
        return self.price + self.calendar + self.vertical + self.butterfly

    @property
    def arbitrage(self):
        return self.calendar + self.vertical + self.butterfly

    def bps(self):
        d = None if self.density is None else self.density * BPS
        return LossBreakdown(self.price * BPS, self.calendar * BPS, self.vertical * BPS, self.butterfly * BPS, d)


# ----------------------------------------------------------- point terms


@dataclass
class PointTerms:
    """Per-point squared residuals and their derivatives w.r.t. the jet."""

    price_sq: np.ndarray
    eps_c: np.ndarray
    eps_v: np.ndarray
    eps_b: np.ndarray
    # d(price_sq)/d omega and d(eps_X)/d(jet entries)
    dprice_dw: np.ndarray | None = None
    deps_c_dt: np.ndarray | None = None
    deps_v_dw: np.ndarray | None = None
    deps_v_dk: np.ndarray | None = None
    deps_b_dw: np.ndarray | None = None
    deps_b_dk: np.ndarray | None = None
    deps_b_dkk: np.ndarray | None = None


def point_terms(tau, kappa, otm, w, w_t, w_k, w_kk, vega_mode="literal", vega_floor=1e-8, derivatives=True):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        zp, zm = pivots(kappa, w)
        phi_p = normal_pdf(zp)
        phi_m = normal_pdf(zm)
        sqrt_tau = np.sqrt(tau)
        o_hat = bs_otm(tau, kappa, w)
        raw_vega = phi_m * sqrt_tau
        floored = raw_vega < vega_floor
        vega = np.where(floored, vega_floor, raw_vega)
        r = o_hat - otm
        power = 1 if vega_mode == "literal" else 2
        price_sq = r * r / vega**power

        eps_c = np.maximum(0.0, -w_t)
        g_v = normal_cdf(zp) + phi_p * w_k
        eps_v = np.maximum(0.0, -g_v)
        a = 1.0 - kappa / w * w_k
        xi = a * a - 0.25 * (w * w_k) ** 2 + w * w_kk
        eps_b = np.maximum(0.0, -xi)
        terms = PointTerms(price_sq, eps_c, eps_v, eps_b)
        if not derivatives:
            return terms

        # d o_hat / d omega = phi(z-) for puts and calls alike
        dzm_dw = -kappa / (w * w) - 0.5
        dvega_dw = np.where(floored, 0.0, sqrt_tau * (-zm * phi_m) * dzm_dw)
        terms.dprice_dw = 2.0 * r * phi_m / vega**power - power * r * r * dvega_dw / vega ** (power + 1)

        terms.deps_c_dt = np.where(w_t < 0, -1.0, 0.0)

        active_v = g_v < 0
        dzp_dw = -kappa / (w * w) + 0.5
        terms.deps_v_dw = np.where(active_v, -phi_p * dzp_dw * (1.0 - zp * w_k), 0.0)
        terms.deps_v_dk = np.where(active_v, -phi_p, 0.0)

        active_b = xi < 0
        dxi_dw = 2.0 * a * kappa * w_k / (w * w) - 0.5 * w * w_k * w_k + w_kk
        dxi_dk = -2.0 * a * kappa / w - 0.5 * w * w * w_k
        terms.deps_b_dw = np.where(active_b, -dxi_dw, 0.0)
        terms.deps_b_dk = np.where(active_b, -dxi_dk, 0.0)
        terms.deps_b_dkk = np.where(active_b, -w, 0.0)
    return terms


def _rms(sq_sum, n):
    return math.sqrt(sq_sum / n) if n else 0.0


def _checked_jet(net, tau, kappa):
    jet = forward_jet(net, tau, kappa)
    parts = (jet.omega, jet.d_tau, jet.d_kappa, jet.d_kappa2)
    if not all(np.all(np.isfinite(p)) for p in parts):
        raise NumericAbort("non-finite volatility jet")
    if np.any(jet.omega <= 0):
        raise NumericAbort("output volatility underflowed to zero")
    return jet


def batch_loss(net: VolNetwork, tau, kappa, otm, cfg: TrainConfig, with_grad=True):
    """LossBreakdown of one batch and, optionally, parameter gradients of its total."""
    jet = _checked_jet(net, tau, kappa)
    t = point_terms(
        tau, kappa, otm, jet.omega, jet.d_tau, jet.d_kappa, jet.d_kappa2,
        cfg.vega_mode, cfg.vega_floor, derivatives=with_grad,
    )
    n = tau.shape[0]
    lp = _rms(t.price_sq.sum(), n)
    lc = _rms((t.eps_c**2).sum(), n)
    lv = _rms((t.eps_v**2).sum(), n)
    lb = _rms((t.eps_b**2).sum(), n)
    losses = LossBreakdown(lp, lc, lv, lb)
    if not math.isfinite(losses.total):
        raise NumericAbort("non-finite batch loss")
    if not with_grad:
        return losses, None
    # dL/dq_i for L = sqrt(mean q): 1 / (2 n L); for L = sqrt(mean eps^2): eps_i / (n L)
    cp = 1.0 / (2.0 * n * lp) if lp > 0 else 0.0
    cc = t.eps_c / (n * lc) if lc > 0 else 0.0
    cv = t.eps_v / (n * lv) if lv > 0 else 0.0
    cb = t.eps_b / (n * lb) if lb > 0 else 0.0
    g_w = cp * t.dprice_dw + cv * t.deps_v_dw + cb * t.deps_b_dw
    g_t = cc * t.deps_c_dt
    g_k = cv * t.deps_v_dk + cb * t.deps_b_dk
    g_kk = cb * t.deps_b_dkk
    grads = backward(net, jet, (g_w, g_t, g_k, g_kk))
    return losses, grads


# ------------------------------------------------------- full-dataset losses


def _implied_pdf(kappa, w, w_k, w_kk):
    zp, _ = pivots(kappa, w)
    a = 1.0 - kappa / w * w_k
    xi = a * a - 0.25 * (w * w_k) ** 2 + w * w_kk
    return normal_pdf(zp) / w * xi


def evaluate(net: VolNetwork, data: ChainDataset, cfg: TrainConfig, ts: LbTermStructure | None = None):
    """Full-dataset LossBreakdown; includes the density loss when ``ts`` is given."""
    tau, kappa, otm = data.tau, data.kappa, data.otm
    sums = np.zeros(4)
    dens_sq = 0.0
    true_pdf = None
    if ts is not None:
        true_pdf = lb_pdf(kappa, term_structure_eval(tau, ts))
    for lo in range(0, tau.size, EVAL_CHUNK):
        sl = slice(lo, lo + EVAL_CHUNK)
        jet = _checked_jet(net, tau[sl], kappa[sl])
        t = point_terms(tau[sl], kappa[sl], otm[sl], jet.omega, jet.d_tau, jet.d_kappa, jet.d_kappa2,
                        cfg.vega_mode, cfg.vega_floor, derivatives=False)
        sums += [t.price_sq.sum(), (t.eps_c**2).sum(), (t.eps_v**2).sum(), (t.eps_b**2).sum()]
        jet.cache.clear()
        if true_pdf is not None:
            psi_hat = _implied_pdf(kappa[sl], jet.omega, jet.d_kappa, jet.d_kappa2)
            dens_sq += ((psi_hat - true_pdf[sl]) ** 2).sum()
    n = tau.size
    out = LossBreakdown(*(_rms(s, n) for s in sums))
    if true_pdf is not None:
        out.density = density_loss_from_sq(dens_sq, data.tenors.size, data.d_kappa)
    return out


def density_loss_from_sq(sq_sum, n_tenors, d_kappa):
    """sqrt(sum (psi_hat - psi)^2 * d_kappa / |tenors|)."""
    return math.sqrt(sq_sum * d_kappa / n_tenors)


def price_loss(net, data: ChainDataset, mode="literal", vega_floor=1e-8):
    return evaluate(net, data, TrainConfig(vega_mode=mode, vega_floor=vega_floor)).price


def arbitrage_losses(net, data: ChainDataset):
    e = evaluate(net, data, TrainConfig())
    return e.calendar, e.vertical, e.butterfly


def density_loss(net, data: ChainDataset, ts: LbTermStructure):
    if data.moneyness.size > 1 and data.d_kappa <= 0:
        raise ValueError("density loss needs a uniform moneyness grid")
    return evaluate(net, data, TrainConfig(), ts).density


# ---------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    p <- p - lr * m_hat / (sqrt(v_hat) + eps)
    """
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValueError("parameter and gradient shapes differ")
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return params, state


# ------------------------------------------------------------------ training


def batch_partition(n, batch_size, seed):
    """Shuffled index batches of size ``batch_size``; the last holds the remainder."""
    perm = np.random.default_rng(seed).permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)  # LossBreakdown per epoch (mini-batch average)
    snapshots: dict = field(default_factory=dict)  # epoch -> full training-set LossBreakdown
    seconds: list = field(default_factory=list)
    final_train: LossBreakdown | None = None
    final_valid: LossBreakdown | None = None

    def arbitrage_zero_epoch(self):
        """First epoch from which the epoch-wise arbitrage losses stay exactly 0."""
        first = None
        for i, e in enumerate(self.epochs, start=1):
            if e.arbitrage == 0.0:
                first = first or i
            else:
                first = None
        return first

    def write_csv(self, path, timings=False):
        with open(path, "w", newline="") as fh:
            fh.write("epoch,loss_total_bps,loss_P_bps,loss_C_bps,loss_V_bps,loss_B_bps,loss_D_bps,seconds\n")
            for i, e in enumerate(self.epochs, start=1):
                b = e.bps()
                snap = self.snapshots.get(i)
                dens = "" if snap is None or snap.density is None else f"{snap.density * BPS:.17g}"
                secs = f"{self.seconds[i - 1]:.3f}" if timings and i <= len(self.seconds) else ""
                fh.write(
                    f"{i},{b.total:.17g},{b.price:.17g},{b.calendar:.17g},"
                    f"{b.vertical:.17g},{b.butterfly:.17g},{dens},{secs}\n"
                )


def train(net: VolNetwork, cfg: TrainConfig, train_set: ChainDataset, valid_set: ChainDataset | None = None,
          ts: LbTermStructure | None = None, progress=None):
    """Train ``net`` in place; returns (net, TrainHistory).

    Each epoch reshuffles the training points with ``epoch_seed(cfg.seed, epoch)``
    and takes one Adam step per mini-batch on the batch total loss. Full
    training-set losses (with density when ``ts`` is given) are recorded every
    ``cfg.eval_every`` epochs and at the last epoch.
    """
    history = TrainHistory()
    if cfg.epochs == 0:
        return net, history
    params = net.params()
    state = AdamState.zeros_like(params)
    tau, kappa, otm = train_set.tau, train_set.kappa, train_set.otm
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        batches = batch_partition(tau.size, cfg.batch_size, epoch_seed(cfg.seed, epoch))
        acc = np.zeros(4)
        for b, idx in enumerate(batches, start=1):
            try:
                losses, (d_w, d_b) = batch_loss(net, tau[idx], kappa[idx], otm[idx], cfg)
            except NumericAbort as exc:
                raise NumericAbort(f"epoch {epoch}, batch {b}: {exc}", epoch=epoch, batch=b, layer=exc.layer) from exc
            acc += [losses.price, losses.calendar, losses.vertical, losses.butterfly]
            grads = [g for pair in zip(d_w, d_b) for g in pair]
            adam_step(params, grads, state, cfg)
        history.epochs.append(LossBreakdown(*(acc / len(batches))))
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            snap = evaluate(net, train_set, cfg, ts)
            if not math.isfinite(snap.total):
                raise NumericAbort(f"epoch {epoch}: non-finite training loss", epoch=epoch)
            history.snapshots[epoch] = snap
        history.seconds.append(time.perf_counter() - start)
        if progress is not None:
            progress(epoch, history)
    history.final_train = history.snapshots[cfg.epochs]
    if valid_set is not None:
        history.final_valid = evaluate(net, valid_set, cfg, ts)
    return net, history
