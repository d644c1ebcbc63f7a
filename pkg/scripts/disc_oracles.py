"""Print the radial oracles of the disc example and write the profile table."""

import argparse
import math

from varelast import disc_example as d


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--csv", default="profile.csv")
    ap.add_argument("--basis", type=int, nargs="+", default=[2, 4, 8, 16])
    a = ap.parse_args(argv)
    o = d.oracle_values()
    print(f"J(w)        = {o.J:.15e}   (-pi/640 = {-math.pi / 640:.15e})")
    print(f"J+(w)       = {o.J_plus:.15e}   (-pi/960 = {-math.pi / 960:.15e})")
    print(f"2 int Lap^2 = {o.young_margin:.15e}   (pi/1920 = {math.pi / 1920:.15e})")
    print(f"biharmonic residual on [0.05, 0.95]: {d.biharmonic_residual():.3e}")
    for n in a.basis:
        j, jp = d.minimize_reduced("J", n), d.minimize_reduced("J+", n)
        print(f"basis {n:3d}: min J = {j.value:.10e}  min J+ = {jp.value:.10e}  rank deficit {j.size - j.rank}")
    d.write_profile_csv(a.csv)
    print(d.LAPLACIAN_NOTE)


if __name__ == "__main__":
    main()
