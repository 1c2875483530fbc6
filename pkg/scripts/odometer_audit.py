"""Odometer of b_n at the origin: closed-form values, lower-bound slope and radial monotonicity.

    python3 scripts/odometer_audit.py --n 16 32 64
"""
import argparse

from sgidla.gasket import BETA
from sgidla.sandpile import closed_form_audit, odometer_lower_bound_audit


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, nargs="+", default=[16, 32, 64])
    p.add_argument("--kmax", type=int, default=5)
    args = p.parse_args(argv)

    for k in range(args.kmax + 1):
        rep = closed_form_audit(k)
        print(f"k={k}  u(o)={rep.origin_odometer:.9g}  expected {2 * 5**k}  rotation psi^{rep.rotation_power}  "
              f"{'ok' if rep.passed else 'FAILED'}")
    for n in args.n:
        deltas = [d for d in (1, 2, 4, 8, 16, 32) if 3 * d <= n]
        a = odometer_lower_bound_audit(n, deltas)
        print(f"n={n}  lower-bound slope {a.slope:.3f} (beta = {BETA:.3f})  "
              f"sphere minima nonincreasing: {a.sphere_minima_nonincreasing}  "
              f"outward edges where u increases: {len(a.monotonicity_violations)}")
        if a.monotonicity_violations:
            x, y, ux, uy = max(a.monotonicity_violations, key=lambda t: t[3] - t[2])
            print(f"    largest: u({x})={ux:.4f} < u({y})={uy:.4f}")


if __name__ == "__main__":
    main()
