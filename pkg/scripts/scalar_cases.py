"""Run the scalar cases with and without the safety filter and write CSV traces.

    python scripts/scalar_cases.py --out out/scalar
"""
import argparse
from pathlib import Path

import numpy as np

from cbfal import scenarios as S
from cbfal.integrator import simulate_capture


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("out/scalar"))
    ap.add_argument("--t-end", type=float, default=50.0)
    ap.add_argument("--dt", type=float, default=1e-3)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    for name in ("case1", "case2", "case3"):
        for filtered in (False, True):
            sc = S.build(name, {"filter.enabled": filtered, "t_end": args.t_end, "dt": args.dt})
            traj = simulate_capture(sc.plant, sc.filter_spec, sc.initial, sc.sim, monitor=sc.monitor)
            tag = f"{name}_{'filtered' if filtered else 'free'}"
            traj.to_csv(args.out / f"{tag}.csv")
            H = traj.H
            end = f"escaped at t = {traj.t[-1]:.3f}" if traj.terminated_early else f"x(end) = {traj.x[-1, 0]:.6f}"
            print(f"{tag:18s} min H = {np.nanmin(H): .3e}  max x = {np.max(traj.x[:, 0]):.4g}  {end}")
            if filtered:
                print("  " + S.run_checks(sc, traj).text().replace("\n", "\n  "))

    demo = S.case4_demonstration()
    print(f"case4: {demo['classification']}; {demo['extend_error']}")


if __name__ == "__main__":
    main()
