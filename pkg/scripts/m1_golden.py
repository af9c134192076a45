"""Train on the two-branch example and compare with the brute-force optimum."""
import argparse
import time

import numpy as np

from probshield import TrainConfig, augment, brute_force_oracle, cost_value_iteration, make_m1
from probshield import mc_estimate, shielded_q_train
from probshield.policies import Shielded


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--episodes", type=int, default=50_000)
    ap.add_argument("--x0", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    m1 = make_m1(budget=args.x0)
    oracle = brute_force_oracle(m1, args.x0)
    q = cost_value_iteration(m1)
    env = augment(m1, q)
    t0 = time.perf_counter()
    pol = shielded_q_train(env, q, TrainConfig(episodes=args.episodes, x0=args.x0),
                           np.random.default_rng(args.seed))
    cost, reward = mc_estimate(env, Shielded(pol, q), 100_000, None,
                               np.random.default_rng(args.seed + 1), x0=args.x0)
    print(f"oracle   R*={oracle.r_star:.4f}  C*={oracle.c_star:.4f}")
    print(f"trained  R={reward.mean:.4f}±{reward.ci95:.4f}  C={cost.mean:.4f}±{cost.ci95:.4f}  "
          f"({time.perf_counter() - t0:.1f}s)")
    print(f"proposal at (s0, {args.x0}): {pol.proposal(0, args.x0).atoms}")


if __name__ == "__main__":
    main()
