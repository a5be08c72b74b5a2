"""Compare the regime variance series with the exact finite-depth variance.

Sub-critical and critical kernels: the exact Var N_n (moment recursion, no
sampling) should approach the series value as n grows; in the critical
case it is compared after the extra 1/n scaling.

    python3 scripts/series_vs_recursion.py [--depths 5 10 20 40 80]
"""
import argparse

from bmctri import FunctionSequence, affine, analyze, k1, k2, sigma_crit, sigma_sub
from bmctri.exact_oracle import exact_statistic_moments


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--depths", type=int, nargs="+", default=[5, 10, 20, 40, 80])
    args = ap.parse_args()

    P = k1()
    sd = analyze(P)
    seq = FunctionSequence([affine(2, 1, 2, 3), affine(2, -1, 1, 0.5), affine(2, 0.3, -2, 1)])
    target = sigma_sub(sd, P, seq).total
    print(f"sub-critical K1, series {target:.8f}")
    for n in args.depths:
        v = exact_statistic_moments(P, sd.mu.real, seq, n, sd, method="recursive")["variance"]
        print(f"  n={n:4d}  exact {v:.8f}  gap {v - target:+.2e}")

    P = k2()
    sd = analyze(P)
    seq = FunctionSequence([affine(2, 3, 1, 1)])
    target = sigma_crit(sd, P, seq).total
    print(f"critical K2, series {target:.8f}")
    for n in args.depths:
        v = exact_statistic_moments(P, sd.mu.real, seq, n, sd, method="recursive")["variance"] / n
        print(f"  n={n:4d}  exact/n {v:.8f}  gap {v - target:+.2e}")


if __name__ == "__main__":
    main()
