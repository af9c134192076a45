"""Reward gap to the constrained optimum as the critic error shrinks (deterministic fixtures)."""
import argparse
import csv
import sys

import numpy as np

from probshield import TrainConfig, augment, brute_force_oracle, cost_value_iteration, perturb
from probshield import make_chain, make_m1, mc_estimate, shielded_q_train
from probshield.policies import Shielded
from probshield.verify import conservative_x0

FIXTURES = {
    "m1": lambda: make_m1(gamma=0.8, budget=0.8),
    "chain": lambda: make_chain(4, rewards=1.0, costs=0.0, gamma=0.8, shortcut=(4.0, 1.0), budget=0.7),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--fixture", choices=sorted(FIXTURES), default="chain")
    ap.add_argument("--deltas", type=float, nargs="+", default=[0.2, 0.1, 0.05, 0.0])
    ap.add_argument("--episodes", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cmdp = FIXTURES[args.fixture]()
    exact = cost_value_iteration(cmdp)
    r_star = brute_force_oracle(cmdp, cmdp.budget_d).r_star
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["delta", "measured_delta", "x0", "r_star", "reward", "reward_ci95", "cost", "gap"])
    for delta in args.deltas:
        rng = np.random.default_rng([args.seed, int(delta * 1000)])
        q = perturb(exact, delta, rng)
        env = augment(cmdp, q)
        measured = q.sup_distance(exact)
        x0 = max(conservative_x0(cmdp.budget_d, measured, cmdp.gamma_c), -env.c_max_bound)
        pol = shielded_q_train(env, q, TrainConfig(episodes=args.episodes, x0=x0), rng)
        cost, reward = mc_estimate(env, Shielded(pol, q), 50_000, None, rng, x0=x0)
        out.writerow([delta, measured, x0, r_star, reward.mean, reward.ci95, cost.mean, r_star - reward.mean])


if __name__ == "__main__":
    main()
