"""Monte Carlo variance of N_n for symmetric QQ kernels across alpha.

For each p the empirical variance (with the regime's scaling) is printed
next to the series value; super-critical kernels report the residual
second moment instead, which should shrink with n.

    python3 scripts/regime_sweep.py --depth 14 --replicates 300
"""
import argparse

from bmctri import FunctionSequence, affine, analyze, qq_kernel, sigma_crit, sigma_sub, symmetric_two_state
from bmctri.kernel_core import CRITICAL, SUB_CRITICAL
from bmctri.stat_verify import moment_summary
from bmctri.tree_simulator import SimulationConfig, monte_carlo


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--depth", type=int, default=14)
    ap.add_argument("--replicates", type=int, default=300)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    seq = FunctionSequence([affine(2, 3, 1, 1)])
    crit = (1 + 2 ** -0.5) / 2
    for p in (0.55, 0.65, 0.75, crit, 0.9, 0.95):
        P = qq_kernel(symmetric_two_state(p))
        sd = analyze(P)
        if sd.regime == SUB_CRITICAL:
            stat, target = "N", sigma_sub(sd, P, seq).total
        elif sd.regime == CRITICAL:
            stat, target = "N_critical", sigma_crit(sd, P, seq).total
        else:
            stat, target = "supercritical_residual", 0.0
        cfg = SimulationConfig(P, sd.mu.real, args.depth, args.replicates, args.seed, seq, stat, args.threads)
        ms = moment_summary(monte_carlo(cfg, sd))
        obs, se = (ms.variance, ms.variance_se) if target else (ms.second_moment, ms.second_moment_se)
        print(f"p={p:.4f} alpha={sd.alpha:.4f} {sd.regime:15s} {stat:24s} "
              f"observed {obs:.4f} +- {se:.4f}  target {target:.4f}")


if __name__ == "__main__":
    main()
