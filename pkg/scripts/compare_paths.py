"""Estimator paths next to paths of the limiting Markov chain.

Writes two CSVs of identical shape (trajectory-index, window-index,
window-start-time, value) on the estimator's window grid in rescaled time,
and prints occupation fractions and mean jump counts for both.
"""

import argparse
import csv
import io
import math
from pathlib import Path

import numpy as np

from weakmeas import alpha0, build_path, build_Q, qubit_bernoulli, sample_ensemble
from weakmeas.estimator import EstimatorConfig
from weakmeas.markov import MarkovChain, initial_distribution, sample_path
from weakmeas.markov import paths_csv as markov_csv


def rescaled_csv(paths, eps):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trajectory-index", "window-index", "window-start-time", "value"])
    for p in paths:
        for j, (t, v) in enumerate(zip(p.window_starts * eps**2, p.values)):
            w.writerow([p.trajectory_index, j, repr(float(t)), repr(float(v))])
    return buf.getvalue()


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--traj", type=int, default=200)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results/paths")
    args = p.parse_args()
    m = qubit_bernoulli().replace(epsilon=args.eps)
    rho0 = np.full((2, 2), 0.5)
    cfg = EstimatorConfig(alpha=alpha0(m, margin=0.0), epsilon=args.eps)
    n_win = int(math.floor(args.horizon / cfg.h)) + 1
    ens = sample_ensemble(m, rho0, n_win * cfg.T, args.traj, args.seed)
    est = [build_path(m, r, cfg) for r in ens.records]
    chain = MarkovChain.from_rates(build_Q(m), rho0)
    mc = [sample_path(chain, n_win * cfg.h, args.seed, k) for k in range(args.traj)]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "estimator.csv").write_text(rescaled_csv(est, args.eps))
    (out / "markov.csv").write_text(markov_csv(mc, cfg.h, m.spectrum))

    occ_est = np.mean([np.mean(p.indices == 0) for p in est])
    grid = cfg.h * np.arange(n_win)
    occ_mc = np.mean([np.mean(q.at(grid) == 0) for q in mc])
    jumps_est = np.mean([p.jump_times.size for p in est])
    jumps_mc = np.mean([np.count_nonzero(np.diff(q.at(grid))) for q in mc])
    print(f"window h = {cfg.h:.4f} (rescaled), {n_win} windows, {args.traj} paths each")
    print(f"fraction of windows in level 0: estimator {occ_est:.3f}, Markov {occ_mc:.3f}")
    print(f"mean jumps per path on the grid: estimator {jumps_est:.3f}, Markov {jumps_mc:.3f}")
    print(f"wrote {out / 'estimator.csv'} and {out / 'markov.csv'}")


if __name__ == "__main__":
    main()
