"""Command line entry point: generate, train, sweep, audit, report.

Exit codes: 0 success, 1 I/O or parse error, 2 invalid model or config,
3 tolerance failure, 4 numeric abort.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from shallowiv import market as mk
from shallowiv.config import dataclass_from_kv, read_kv, write_kv
from shallowiv.errors import ModelInvalidError, NumericAbort
from shallowiv.neural import (
    DEPTHS,
    HIDDEN_ACTIVATIONS,
    WIDTHS,
    NetConfig,
    forward_jet,
    he_uniform_init,
    load_checkpoint,
    model_grid,
    save_checkpoint,
)
from shallowiv.parity import parity_audit
from shallowiv.training import BPS, TrainConfig, TrainHistory, evaluate, name_seed, train, _implied_pdf

log = logging.getLogger("shallowiv")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_TOLERANCE, EXIT_NUMERIC = 0, 1, 2, 3, 4
NOT_CONVERGED_BPS = 1000.0

GRID_KEYS = ("tau_start", "tau_stop", "tau_step", "kappa_start", "kappa_stop", "kappa_step")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# -------------------------------------------------------------------- helpers


def _read_config(path):
    if path is None:
        return {}
    try:
        return read_kv(path)
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}", EXIT_IO) from exc
    except ValueError as exc:
        raise CliError(str(exc), EXIT_IO) from exc


def _term_structure(kv):
    if not any(k in kv for k in mk.TERM_KEYS):
        return mk.DEFAULT_TERM_STRUCTURE
    merged = {**mk.DEFAULT_TERM_STRUCTURE.to_kv(), **{k: kv[k] for k in mk.TERM_KEYS if k in kv}}
    try:
        return mk.LbTermStructure.from_kv(merged)
    except (KeyError, ValueError) as exc:
        raise CliError(f"bad term structure: {exc}", EXIT_CONFIG) from exc


def _grid(kv, prefix, default: mk.GridSpec):
    vals = {k: float(kv.get(f"{prefix}_{k}", getattr(default, k))) for k in GRID_KEYS}
    return mk.GridSpec(**vals)


def _load_dataset(path):
    try:
        return mk.ChainDataset.from_csv(path)
    except OSError as exc:
        raise CliError(f"cannot read dataset: {exc}", EXIT_IO) from exc
    except ValueError as exc:
        raise CliError(str(exc), EXIT_IO) from exc


def _check_market(ts, tau_max=2.0):
    violations = mk.check_term_structure(ts, 0.01, max(2.0, tau_max), 1e-3)
    if violations:
        raise CliError("inadmissible term structure:\n  " + "\n  ".join(map(str, violations)), EXIT_CONFIG)


def _loss_row(label, loss):
    b = loss.bps()
    return [label, b.total, b.price, b.calendar, b.vertical, b.butterfly, "" if b.density is None else b.density]


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in r])


# ------------------------------------------------------------------- generate


def cmd_generate(args):
    kv = _read_config(args.config)
    ts = _term_structure(kv)
    train_grid = _grid(kv, "train", mk.TRAIN_GRID)
    valid_grid = _grid(kv, "valid", mk.VALID_GRID)
    _check_market(ts, max(train_grid.tau_stop, valid_grid.tau_stop))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sizes = {}
    for label, grid in (("train", train_grid), ("valid", valid_grid)):
        try:
            data = mk.generate_dataset(grid, ts)
        except ModelInvalidError as exc:
            raise CliError(str(exc), EXIT_CONFIG) from exc
        data.to_csv(out / f"{label}.csv")
        sizes[label] = (data.tenors.size, data.moneyness.size, data.size)
    for label, (nt, nk, n) in sizes.items():
        print(f"|D_{label[0].upper()}| = {n} ({nt} tenors x {nk} moneyness) -> {out / (label + '.csv')}")
    return EXIT_OK


# ---------------------------------------------------------------------- train


@dataclass
class RunSpec:
    model: NetConfig
    init_seed: int
    train_cfg: TrainConfig
    train_path: str
    valid_path: str | None
    market_kv: dict


def _run_metadata(spec: RunSpec):
    meta = {"model": spec.model.name, "init_seed": spec.init_seed}
    meta.update({f"train_{k}": v for k, v in asdict(spec.train_cfg).items()})
    meta["train_data"] = spec.train_path
    meta["valid_data"] = spec.valid_path or ""
    meta.update(spec.market_kv)
    return meta


def run_training(spec: RunSpec, out_dir, timings=False, progress=None):
    """Train one model and write its artifacts; returns (history, seconds, error)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ts = mk.LbTermStructure.from_kv(spec.market_kv) if spec.market_kv else mk.DEFAULT_TERM_STRUCTURE
    train_set = _load_dataset(spec.train_path)
    valid_set = _load_dataset(spec.valid_path) if spec.valid_path else None
    net = he_uniform_init(spec.model, spec.init_seed)
    write_kv(out / "run.cfg", _run_metadata(spec))
    start = time.perf_counter()
    error = None
    history = TrainHistory()
    try:
        net, history = train(net, spec.train_cfg, train_set, valid_set, ts, progress)
    except NumericAbort as exc:
        error = exc
    seconds = time.perf_counter() - start
    history.write_csv(out / "history.csv", timings=timings)
    if error is not None:
        return history, seconds, error
    save_checkpoint(net, out / "checkpoint.bin")
    if history.final_train is None:
        history.final_train = evaluate(net, train_set, spec.train_cfg, ts)
        if valid_set is not None:
            history.final_valid = evaluate(net, valid_set, spec.train_cfg, ts)
    rows = [_loss_row("train", history.final_train)]
    if history.final_valid is not None:
        rows.append(_loss_row("valid", history.final_valid))
    _write_rows(
        out / "summary.csv",
        ["dataset", "loss_total_bps", "loss_P_bps", "loss_C_bps", "loss_V_bps", "loss_B_bps", "loss_D_bps"],
        rows,
    )
    with open(out / "timing.log", "w") as fh:
        fh.write(f"total_seconds {seconds:.3f}\n")
        for i, s in enumerate(history.seconds, start=1):
            fh.write(f"epoch {i} {s:.4f}\n")
    return history, seconds, None


def _train_config(args, kv):
    try:
        return dataclass_from_kv(
            TrainConfig,
            kv,
            epochs=args.epochs,
            batch_size=args.batch_size,
            lr=args.lr,
            seed=args.seed,
            vega_mode=args.vega_mode,
            vega_floor=args.vega_floor,
            eval_every=args.eval_every,
        )
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad training config: {exc}", EXIT_CONFIG) from exc


def _model(args, kv):
    try:
        if args.model:
            return NetConfig.parse(args.model)
        return NetConfig(
            args.activation or kv.get("activation", "relu2"),
            int(args.width or kv.get("width", 128)),
            int(args.depth or kv.get("depth", 1)),
        )
    except ValueError as exc:
        raise CliError(f"bad model: {exc}", EXIT_CONFIG) from exc


def _market_kv(args):
    kv = _read_config(args.market)
    ts = _term_structure(kv)
    return {k: repr(v) for k, v in ts.to_kv().items()}


def _require_files(*paths):
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise CliError(f"missing file: {p}", EXIT_IO)


def cmd_train(args):
    _require_files(args.train, args.valid)
    kv = _read_config(args.config)
    model = _model(args, kv)
    cfg = _train_config(args, kv)
    init_seed = cfg.seed if args.init_seed is None else args.init_seed
    spec = RunSpec(model, init_seed, cfg, args.train, args.valid, _market_kv(args))

    def progress(epoch, history):
        if args.verbose and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            b = history.epochs[-1].bps()
            log.info("epoch %d  total %.3f bps  (P %.3f C %.3g V %.3g B %.3g)",
                     epoch, b.total, b.price, b.calendar, b.vertical, b.butterfly)

    history, seconds, error = run_training(spec, args.out, timings=args.timings, progress=progress)
    if error is not None:
        print(f"numeric abort: {error}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"{model.name}: trained {cfg.epochs} epochs in {seconds:.1f}s")
    for label, loss in (("train", history.final_train), ("valid", history.final_valid)):
        if loss is not None:
            b = loss.bps()
            dens = "n/a" if b.density is None else f"{b.density:.2f}"
            print(f"  {label}: P {b.price:.3f}  C {b.calendar:.3g}  V {b.vertical:.3g}  B {b.butterfly:.3g}  D {dens} (bps)")
    return EXIT_OK


# ---------------------------------------------------------------------- sweep

SWEEP_COLUMNS = (
    "name", "activation", "width", "depth", "seed",
    "loss_P_train_bps", "loss_P_valid_bps", "loss_D_train_bps", "loss_D_valid_bps",
    "loss_arb_train_bps", "loss_arb_valid_bps", "final_epoch_total_bps",
    "arbitrage_zero_epoch", "converged", "error",
)


def _sweep_one(job):
    spec, out_dir = job
    try:
        history, seconds, error = run_training(spec, out_dir)
    except Exception as exc:  # one bad model must not sink the sweep
        history, seconds, error = TrainHistory(), 0.0, exc
    ft, fv = history.final_train, history.final_valid
    last = history.epochs[-1].total * BPS if history.epochs else float("nan")
    zero = history.arbitrage_zero_epoch()
    converged = error is None and np.isfinite(last) and last <= NOT_CONVERGED_BPS
    if ft is not None and not np.isfinite(ft.total):
        converged = False

    def get(loss, attr):
        if loss is None:
            return ""
        v = getattr(loss, attr)
        return "" if v is None else v * BPS

    row = [
        spec.model.name, spec.model.activation, spec.model.width, spec.model.depth, spec.init_seed,
        get(ft, "price"), get(fv, "price"), get(ft, "density"), get(fv, "density"),
        get(ft, "arbitrage"), get(fv, "arbitrage"), last,
        zero if zero is not None else "unreached", int(converged), "" if error is None else str(error).replace(",", ";"),
    ]
    return row, seconds


def _split(text, conv=str):
    return [conv(t) for t in text.split(",") if t.strip()]


def cmd_sweep(args):
    _require_files(args.train, args.valid)
    kv = _read_config(args.config)
    base = _train_config(args, kv)
    models = model_grid(_split(args.activations), _split(args.widths, int), _split(args.depths, int))
    if args.subset is not None:
        wanted = set(_split(args.subset))
        unknown = wanted - {m.name for m in models}
        if unknown:
            raise CliError(f"unknown model(s) in subset: {', '.join(sorted(unknown))}", EXIT_CONFIG)
        models = [m for m in models if m.name in wanted]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    market_kv = _market_kv(args)
    jobs = []
    for m in models:
        seed = name_seed(args.master_seed, m.name)
        cfg = TrainConfig(**{**asdict(base), "seed": seed})
        jobs.append((RunSpec(m, seed, cfg, args.train, args.valid, market_kv), out / m.name))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_sweep_one(job))
            log.info("finished %s", job[0].model.name)
    _write_rows(out / "sweep.csv", SWEEP_COLUMNS, [r for r, _ in results])
    with open(out / "sweep_timing.log", "w") as fh:
        for (row, secs) in results:
            fh.write(f"{row[0]} {secs:.2f}\n")
    print(f"sweep: {len(results)} model(s), {sum(int(r[13]) for r, _ in results)} converged -> {out / 'sweep.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------- audit


def cmd_audit(args):
    if args.flat_sigma is not None:
        market = mk.FlatBlackScholesMarket(args.flat_sigma)
    else:
        ts = _term_structure(_read_config(args.market))
        _check_market(ts)
        market = mk.LbMarket(ts)
    taus = _split(args.taus, float)
    n = int(round((args.kappa_max - args.kappa_min) / args.kappa_step)) + 1
    kappas = np.round(args.kappa_min + args.kappa_step * np.arange(n), 12)
    report = parity_audit(market, taus, kappas, fd_step=args.fd_step, vega_step=args.vega_step)
    if args.out:
        report.to_csv(args.out)
    errs = report.max_errors
    print("max relative errors: " + "  ".join(f"{k} {v:.3e}" for k, v in errs.items()))
    if report.skipped:
        print(f"skipped {len(report.skipped)} point(s) where the implied volatility could not be inverted")
    ok = report.passed(args.tol, args.intermediate_tol)
    print("audit " + ("passed" if ok else "FAILED") + f" (tol {args.tol:g}, intermediate tol {args.intermediate_tol:g})")
    return EXIT_OK if ok else EXIT_TOLERANCE


# --------------------------------------------------------------------- report


def _surface_rows(run_dir, meta, grid):
    net = load_checkpoint(run_dir / "checkpoint.bin")
    ts = mk.LbTermStructure.from_kv(meta) if all(k in meta for k in mk.TERM_KEYS) else mk.DEFAULT_TERM_STRUCTURE
    data = mk.generate_dataset(grid, ts)
    tau, kappa = data.tau, data.kappa
    omega_true = mk.implied_total_vol(tau, kappa, data.otm)
    psi_true = mk.lb_pdf(kappa, mk.term_structure_eval(tau, ts))
    omega_hat = np.empty_like(tau)
    psi_hat = np.empty_like(tau)
    for lo in range(0, tau.size, 16384):
        sl = slice(lo, lo + 16384)
        jet = forward_jet(net, tau[sl], kappa[sl])
        omega_hat[sl] = jet.omega
        psi_hat[sl] = _implied_pdf(kappa[sl], jet.omega, jet.d_kappa, jet.d_kappa2)
    return np.column_stack([tau, kappa, omega_hat, omega_true, psi_hat, psi_true])


def cmd_report(args):
    out = Path(args.out)
    runs = []
    for d in map(Path, args.runs):
        if not (d / "history.csv").is_file() or not (d / "run.cfg").is_file():
            raise CliError(f"{d}: not a completed run directory (history.csv / run.cfg missing)", EXIT_IO)
        runs.append(d)
    out.mkdir(parents=True, exist_ok=True)
    grid = mk.VALID_GRID if args.surface_grid == "valid" else mk.TRAIN_GRID
    scatter = []
    for d in runs:
        meta = read_kv(d / "run.cfg")
        name = meta.get("model", d.name)
        with open(d / "history.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        _write_rows(out / f"learning_curve_{name}.csv", rows[0][:7], [r[:7] for r in rows[1:]])
        losses = {}
        if (d / "summary.csv").is_file():
            with open(d / "summary.csv", newline="") as fh:
                for r in csv.DictReader(fh):
                    losses[r["dataset"]] = r
        scatter.append([
            name,
            losses.get("train", {}).get("loss_P_bps", ""), losses.get("valid", {}).get("loss_P_bps", ""),
            losses.get("train", {}).get("loss_D_bps", ""), losses.get("valid", {}).get("loss_D_bps", ""),
        ])
        if (d / "checkpoint.bin").is_file():
            surf = _surface_rows(d, meta, grid)
            _write_rows(out / f"surface_{name}.csv",
                        ["tau", "kappa", "omega_hat", "omega_true", "psi_hat", "psi_true"], surf.tolist())
            print(f"{name}: max|omega_hat-omega| {np.abs(surf[:, 2] - surf[:, 3]).max():.3e}  "
                  f"max|psi_hat-psi| {np.abs(surf[:, 4] - surf[:, 5]).max():.3e}")
    _write_rows(out / "scatter.csv",
                ["name", "loss_P_train_bps", "loss_P_valid_bps", "loss_D_train_bps", "loss_D_valid_bps"], scatter)
    print(f"report for {len(runs)} run(s) -> {out}")
    return EXIT_OK


# ----------------------------------------------------------------------- main


def _add_train_flags(p):
    p.add_argument("--train", required=True, help="training dataset CSV")
    p.add_argument("--valid", help="validation dataset CSV")
    p.add_argument("--market", help="term-structure config (default: the built-in synthetic market)")
    p.add_argument("--config", help="key = value training config; flags override it")
    p.add_argument("--epochs", type=int, help="epochs (default 1000)")
    p.add_argument("--batch-size", type=int, help="mini-batch size (default 256)")
    p.add_argument("--lr", type=float, help="Adam learning rate (default 1e-4)")
    p.add_argument("--vega-mode", choices=("literal", "squared"), help="price-loss weight 1/vega or 1/vega^2")
    p.add_argument("--vega-floor", type=float, help="lower bound on vega in the price weight (default 1e-8)")
    p.add_argument("--eval-every", type=int, help="epochs between full-dataset evaluations (default 10)")
    p.add_argument("--out", required=True, help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="shallowiv",
        description="Arbitrage-free neural implied-volatility surfaces on a synthetic market.",
        epilog="exit codes: 0 ok, 1 I/O or parse error, 2 invalid model or config, 3 tolerance failure, "
        "4 numeric abort",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write train.csv and valid.csv from a synthetic market")
    g.add_argument("--config", help="term structure (sigma0,h0,alpha0,alpha1,beta0,beta1) and optional "
                   "train_/valid_ grid keys (tau_start, tau_stop, tau_step, kappa_start, kappa_stop, kappa_step)")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one volatility network")
    t.add_argument("--model", help="model name such as relu2-128x1 (overrides the three flags below)")
    t.add_argument("--activation", choices=HIDDEN_ACTIVATIONS)
    t.add_argument("--width", type=int)
    t.add_argument("--depth", type=int)
    t.add_argument("--seed", type=int, help="master seed for shuffling (and init unless --init-seed)")
    t.add_argument("--init-seed", type=int, help="seed of the He-uniform initialization")
    t.add_argument("--timings", action="store_true", help="fill the seconds column of history.csv")
    _add_train_flags(t)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="train the activation x width x depth model grid")
    s.add_argument("--activations", default=",".join(HIDDEN_ACTIVATIONS))
    s.add_argument("--widths", default=",".join(map(str, WIDTHS)))
    s.add_argument("--depths", default=",".join(map(str, DEPTHS)))
    s.add_argument("--subset", help="comma-separated model names to keep (empty string: none)")
    s.add_argument("--master-seed", type=int, default=0, help="per-model seeds derive from this and the name")
    s.add_argument("--jobs", type=int, default=1, help="models trained in parallel")
    s.add_argument("--seed", type=int, help=argparse.SUPPRESS)
    _add_train_flags(s)
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("audit", help="finite-difference audit of the density-volatility parity")
    a.add_argument("--market", help="term-structure config (default: the built-in synthetic market)")
    a.add_argument("--flat-sigma", type=float, help="audit a flat Black-Scholes market instead")
    a.add_argument("--taus", default="0.5,1,2")
    a.add_argument("--kappa-min", type=float, default=-0.8)
    a.add_argument("--kappa-max", type=float, default=0.8)
    a.add_argument("--kappa-step", type=float, default=0.01)
    a.add_argument("--fd-step", type=float, default=1e-4, help="central-difference step for the jets")
    a.add_argument("--vega-step", type=float, default=1e-6, help="step for the total-vega identity")
    a.add_argument("--tol", type=float, default=1e-3, help="tolerance on the parity identities")
    a.add_argument("--intermediate-tol", type=float, default=1e-7, help="tolerance on the vega and tilt identities")
    a.add_argument("--out", help="audit CSV path")
    a.set_defaults(func=cmd_audit)

    r = sub.add_parser("report", help="emit learning-curve, scatter and surface CSVs from run directories")
    r.add_argument("runs", nargs="+", help="run directories written by train or sweep")
    r.add_argument("--out", required=True)
    r.add_argument("--surface-grid", choices=("valid", "train"), default="valid")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
