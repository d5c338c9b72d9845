#!/usr/bin/env python3
"""Benchmark determinant sampling over a strip grid.

Three ways of tabulating |D(kappa)| on the same rectangular grid are
timed against each other:

  rebuild   call det_value per point, reconstructing the interaction
            family from the coin field every time
  loop      build one DeterminantFamily, then evaluate det_dlog point
            by point in a Python loop
  batch     build one DeterminantFamily, evaluate the whole grid with
            a single broadcast logdet call

The batch path is what winding contours and cut scoring use internally,
so the printed speedup is the figure that matters when sizing scans.
"""

import argparse
import time

import numpy as np

from qwres import (
    CoinField,
    DeterminantFamily,
    det_value,
    elastic_corner_coins,
    make_corner_family,
    random_coin_field,
)


def build_coin(args: argparse.Namespace) -> CoinField:
    if args.model == "corner":
        return CoinField(max(args.m0, args.n0), elastic_corner_coins(args.m0, args.n0))
    if args.model == "one-corner":
        return make_corner_family(args.m0, args.n0, args.eps, "one-corner").coin
    return random_coin_field(args.radius, args.seed)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--model",
        choices=("corner", "one-corner", "random"),
        default="one-corner",
        help="coin field to benchmark (default: one-corner)",
    )
    parser.add_argument("--m0", type=int, default=2, help="corner width (default 2)")
    parser.add_argument("--n0", type=int, default=2, help="corner height (default 2)")
    parser.add_argument("--eps", type=float, default=0.2, help="opening strength (default 0.2)")
    parser.add_argument("--radius", type=int, default=1, help="random model box radius")
    parser.add_argument("--seed", type=int, default=0, help="random model seed")
    parser.add_argument("--re", type=int, default=96, help="grid points along Re kappa")
    parser.add_argument("--im", type=int, default=24, help="grid points along Im kappa")
    parser.add_argument("--repeat", type=int, default=3, help="timing repetitions, best kept")
    args = parser.parse_args(argv)

    coin = build_coin(args)
    fam = DeterminantFamily(coin)
    res = np.linspace(0.0, 2.0 * np.pi, args.re, endpoint=False)
    ims = np.linspace(-1.5, -1e-3, args.im)
    grid = (res[:, None] + 1j * ims[None, :]).ravel()
    print(
        f"model {args.model}: interaction size {fam.m} x {fam.m}, "
        f"grid {args.re} x {args.im} = {grid.size} points"
    )

    def best(f):
        times = []
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            out = f()
            times.append(time.perf_counter() - t0)
        return out, min(times)

    batch_vals, t_batch = best(lambda: fam.logdet(grid)[0])

    def loop_eval():
        return np.array([fam.det_dlog(z)[0] for z in grid])

    loop_vals, t_loop = best(loop_eval)

    def rebuild_eval():
        return np.array([det_value(coin, z)[0] for z in grid])

    rebuild_vals, t_rebuild = best(rebuild_eval)

    # All three must tabulate the same function before the timings mean
    # anything; compare on log|D| where every path is overflow free.
    with np.errstate(divide="ignore"):
        drift = max(
            float(np.max(np.abs(np.log(np.abs(loop_vals)) - batch_vals))),
            float(np.max(np.abs(np.log(np.abs(rebuild_vals)) - batch_vals))),
        )
    print(f"cross-check: max |log|D|| drift between paths {drift:.2e}")

    rows = (
        ("batch", t_batch, 1.0),
        ("loop", t_loop, t_loop / t_batch),
        ("rebuild", t_rebuild, t_rebuild / t_batch),
    )
    width = max(len(name) for name, _, _ in rows)
    for name, t, factor in rows:
        rate = grid.size / t
        print(f"{name:<{width}}  {t * 1e3:9.2f} ms  {rate:11.0f} pts/s  x{factor:.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
