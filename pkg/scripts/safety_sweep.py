"""Cost of trained shielded policies against the proved bound, over random CMDPs and critic errors.

Writes one CSV row per (environment, delta, seed) cell to stdout.
"""
import argparse
import csv
import sys

import numpy as np

from probshield import TrainConfig, augment, cost_value_iteration, make_random, perturb
from probshield import shielded_q_train
from probshield.policies import Shielded
from probshield.verify import check_safety


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--envs", type=int, default=5)
    ap.add_argument("--deltas", type=float, nargs="+", default=[0.0, 0.05, 0.2])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--episodes", type=int, default=600)
    ap.add_argument("--n", type=int, default=20_000)
    args = ap.parse_args()

    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["env", "delta", "seed", "measured_delta", "x0", "branch", "bound", "cost_mean",
                  "cost_ci95", "pass", "short_form_pass"])
    for e in range(args.envs):
        cmdp = make_random(e)
        exact = cost_value_iteration(cmdp)
        for delta in args.deltas:
            for seed in range(args.seeds):
                rng = np.random.default_rng([e, seed])
                q = perturb(exact, delta, rng)
                env = augment(cmdp, q)
                x0 = 0.25 + 0.5 * seed
                pol = shielded_q_train(env, q, TrainConfig(episodes=args.episodes, x0=x0), rng)
                rep = check_safety(env, Shielded(pol, q), x0, args.n, rng, q.sup_distance(exact))
                out.writerow([e, delta, seed, rep.params["delta_b"], x0, rep.params["branch"], rep.bound,
                              rep.estimate.mean, rep.estimate.ci95, rep.passed, rep.params["short_form_pass"]])


if __name__ == "__main__":
    main()
