"""Cost of a shielded policy mixed with worst-case noise, against the noise bound."""
import argparse

import numpy as np

from probshield import augment, cost_value_iteration, make_loop
from probshield.augment import risk_bound
from probshield.policies import FixedProposer, Shielded, Unshielded
from probshield.verify import check_noise


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--xi", type=float, nargs="+", default=[0.0, 0.01, 0.1, 0.5, 1.0])
    ap.add_argument("--x0", type=float, default=2.0)
    ap.add_argument("--n", type=int, default=100_000)
    args = ap.parse_args()

    loop = make_loop((0.0, 1.0), rewards=(0.0, 1.0), gamma=0.9)
    q = cost_value_iteration(loop)
    env = augment(loop, q)
    base = Shielded(FixedProposer([[(1, 1.0, 1.0)]]), q)
    worst = Unshielded(FixedProposer([[(1, risk_bound(loop), 1.0)]]))
    print(f"{'xi':>6} {'mixture cost':>13} {'bound':>9}  result")
    for xi in args.xi:
        rep = check_noise(env, base, worst, xi, args.x0, args.n, np.random.default_rng(0))
        print(f"{xi:>6g} {rep.estimate.mean:>13.4f} {rep.bound:>9.4f}  {'PASS' if rep.passed else 'FAIL'}")


if __name__ == "__main__":
    main()
