"""Terminal-state differences under dt halving, with and without switch splitting.

    python scripts/convergence_study.py --t-end 4
"""
import argparse

from cbfal.cli import convergence_table


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="case1")
    ap.add_argument("--t-end", type=float, default=4.0)
    ap.add_argument("--dts", default="8e-3,4e-3,2e-3,1e-3")
    args = ap.parse_args()
    dts = [float(s) for s in args.dts.split(",")]

    for split in (True, False):
        dts_sorted, finals, diffs, orders = convergence_table(
            args.scenario, dts, {"t_end": args.t_end, "split_at_switch": split})
        print(f"split_at_switch={split}")
        for dt, d in zip(dts_sorted[1:], diffs):
            print(f"  dt = {dt:8.1e}  |x_dt - x_2dt| = {d:.3e}")
        print("  observed orders: " + ", ".join(f"{o:.2f}" for o in orders))


if __name__ == "__main__":
    main()
