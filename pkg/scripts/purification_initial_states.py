"""Purification distance D(eps) for several initial states.

D(eps) is the ensemble mean of ||rho_t - P_nuhat||_2 at raw time t = s / eps^2,
with nuhat estimated from the window ending at t.  The scaled column divides
by eps |log eps|^(1/2); it should be roughly flat in eps and insensitive to
the initial state.
"""

import argparse

from weakmeas.harness import ExperimentSpec, run


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--eps", default="0.1,0.05,0.025")
    p.add_argument("--alpha", type=float, default=10.0)
    p.add_argument("--horizon", type=float, default=0.5)
    p.add_argument("--traj", type=int, default=1000)
    p.add_argument("--states", default="plus,mixed,P0,P1")
    args = p.parse_args()
    eps = tuple(float(x) for x in args.eps.split(","))
    print(f"{'rho0':>6} " + " ".join(f"{'D@' + str(e):>10}" for e in eps) + "  scaled band")
    for name in args.states.split(","):
        b = run(ExperimentSpec("verify-purification", eps=eps, alpha=args.alpha, horizon=args.horizon,
                               traj=args.traj, rho0=name))
        ds = [m["value"] for m in b.metrics if m["name"].startswith("D[")]
        band = next(m["value"] for m in b.metrics if m["name"] == "purification-band")
        print(f"{name:>6} " + " ".join(f"{d:10.4f}" for d in ds) + f"  {band:.3f}")


if __name__ == "__main__":
    main()
