"""Logistic-beta parameters and moments at fixed variance, plus the induced smiles.

For (alpha, beta) on a log grid the dispersion is set so that Var[X] = V and
the location so that E[e^X] = 1. Writes

    contours.csv   alpha, beta, sigma, mu, mean, skew, kurt on a fine grid
    fixvol.csv     the same on the 10^(-1 + 0.1 i) lattice
    smiles.csv     alpha, beta, kappa, total implied vol for the lattice
    densities.csv  alpha, beta, x, pdf for the lattice, plus the normal reference
"""

import argparse
from pathlib import Path

import numpy as np

from shallowiv import market as mk
from shallowiv.special import normal_pdf


def marginal(variance, a, b):
    s = mk.lb_dispersion_for_variance(variance, a, b)
    return mk.LbMarginal.martingale(s, a, b)


def contour_rows(variance, grid):
    rows = []
    for a in grid:
        for b in grid:
            m = marginal(variance, a, b)
            if m.sigma >= b:
                continue  # e^X not integrable
            mean, _, skew, kurt = mk.lb_moments(m)
            rows.append((a, b, m.sigma, m.mu, mean, skew, kurt))
    return np.array(rows)


def write(path, header, rows):
    np.savetxt(path, rows, delimiter=",", header=",".join(header), comments="", fmt="%.12g")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/moments")
    p.add_argument("--variance", type=float, default=0.16)
    p.add_argument("--n", type=int, default=81, help="points per axis of the contour grid")
    args = p.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["alpha", "beta", "sigma", "mu", "mean", "skew", "kurt"]

    write(out / "contours.csv", cols, contour_rows(args.variance, np.logspace(-1, 1, args.n)))
    lattice = np.round(10 ** np.arange(-1, 1.0001, 0.1), 12)
    fix = contour_rows(args.variance, lattice)
    write(out / "fixvol.csv", cols, fix)

    kappa = np.round(np.arange(-1, 1.0001, 0.01), 12)
    x = np.linspace(-3, 2, 501)
    smiles, dens = [], []
    for a, b, s, mu, *_ in fix:
        m = mk.LbMarginal(mu, s, a, b)
        otm = mk.lb_marginal_price(kappa, m)[2]
        ok = mk.attainable(1.0, kappa, otm)
        w = np.full(kappa.shape, np.nan)
        w[ok] = mk.implied_total_vol(1.0, kappa[ok], otm[ok])
        smiles.append(np.column_stack([np.full_like(kappa, a), np.full_like(kappa, b), kappa, w]))
        dens.append(np.column_stack([np.full_like(x, a), np.full_like(x, b), x, mk.lb_pdf(x, m)]))
    sd = np.sqrt(args.variance)
    dens.append(np.column_stack([np.full_like(x, np.nan), np.full_like(x, np.nan), x,
                                 normal_pdf((x + 0.5 * args.variance) / sd) / sd]))
    write(out / "smiles.csv", ["alpha", "beta", "kappa", "omega"], np.vstack(smiles))
    write(out / "densities.csv", ["alpha", "beta", "x", "pdf"], np.vstack(dens))
    print(f"{len(fix)} lattice distributions, skew in [{fix[:, 5].min():.2f}, {fix[:, 5].max():.2f}], "
          f"kurt in [{fix[:, 6].min():.2f}, {fix[:, 6].max():.2f}] -> {out}")


if __name__ == "__main__":
    main()
