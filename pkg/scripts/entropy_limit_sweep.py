"""(1/n) entropy estimates against the diffusion limit for a state-dependent scheme.

Prints ell and Girsanov estimates per n with n * (estimate - oracle), which
stays roughly constant when the pre-limit bias is O(1/n).

    python3 scripts/entropy_limit_sweep.py --n 25 50 100 200 400 --paths 10000
"""

import argparse
import math

import numpy as np

from semot.cost import brownian_reference
from semot.poisson import entropy_estimate, euler_diffusion_expectation, girsanov_estimate, reference_scheme, trace_normalized_scheme


def schemes(n, amplitude):
    ref = brownian_reference(1)

    def sigma1(t, x):
        return (1 + amplitude * np.sin(2 * np.pi * x[:, 0]))[:, None, None]

    return trace_normalized_scheme(n, sigma1, ref, lambda_max=1 + amplitude), reference_scheme(n, ref)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, nargs="+", default=[25, 100, 400])
    ap.add_argument("--paths", type=int, default=10_000)
    ap.add_argument("--amplitude", type=float, default=0.5)
    ap.add_argument("--euler-steps", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    s1, s2 = schemes(1, args.amplitude)
    oracle, oracle_se = euler_diffusion_expectation(s1, s2, 0.0, args.euler_steps, args.paths, args.seed)
    print(f"euler oracle {oracle:.6f} +- {oracle_se:.6f}")
    print(f"{'n':>6} {'ell':>10} {'se':>9} {'girsanov':>10} {'se':>9} {'z(ell)':>7} {'n*bias':>8}")
    for n in args.n:
        s1, s2 = schemes(n, args.amplitude)
        ell, ell_se = entropy_estimate(s1, s2, args.paths, args.seed)
        gir, gir_se = girsanov_estimate(s1, s2, args.paths, args.seed)
        z = (ell - oracle) / math.hypot(ell_se, oracle_se)
        print(f"{n:6d} {ell:10.6f} {ell_se:9.6f} {gir:10.6f} {gir_se:9.6f} {z:7.2f} {n * (ell - oracle):8.4f}")


if __name__ == "__main__":
    main()
