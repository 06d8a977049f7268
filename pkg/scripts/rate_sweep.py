"""Empirical estimator jump rate against Q as eps shrinks (qubit reference model).

Prints eps, window T, pooled rate with its Poisson standard error and the
relative error.  The finite-window bias shrinks only slowly (like 1/|log eps|).
"""

import argparse
import math

import numpy as np

from weakmeas import alpha0, build_path, build_Q, jump_statistics, qubit_bernoulli, sample_ensemble
from weakmeas.estimator import EstimatorConfig


def pooled_rate(m, eps, alpha, n, horizon, seed):
    me = m.replace(epsilon=eps)
    cfg = EstimatorConfig(alpha=alpha, epsilon=eps)
    n_win = int(math.floor(horizon / eps**2 / cfg.T)) + 1
    ens = sample_ensemble(me, np.full((2, 2), 0.5), n_win * cfg.T, n, seed)
    js = jump_statistics([build_path(me, r, cfg) for r in ens.records], cfg, d=2)
    k = js.counts[0, 1] + js.counts[1, 0]
    expo = js.exposure.sum()
    return cfg.T, k / expo, math.sqrt(k) / expo


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--eps", default="0.1,0.07,0.05,0.035")
    p.add_argument("--traj", type=int, default=500)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    m = qubit_bernoulli()
    alpha = args.alpha or alpha0(m, margin=0.0)
    q = build_Q(m).q[0, 1]
    print(f"alpha = {alpha:.4f}, Q(0,1) = {q:.7f}")
    print(f"{'eps':>7} {'T':>8} {'rate':>9} {'stderr':>8} {'rel-err':>8}")
    for eps in (float(x) for x in args.eps.split(",")):
        T, rate, se = pooled_rate(m, eps, alpha, args.traj, args.horizon, args.seed)
        print(f"{eps:7.3f} {T:8.2f} {rate:9.4f} {se:8.4f} {(rate - q) / q:+8.3f}")


if __name__ == "__main__":
    main()
