"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 the filtered run broke down
(DegenerateConstraint or NonFiniteState), 3 a verification suite failed,
4 a scenario check failed.
"""
from __future__ import annotations

import argparse
import configparser
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import scenarios as S
from . import verification as V
from .errors import CbfalError, DegenerateConstraint, InvalidOverride, NonFiniteState, UnknownScenario
from .integrator import simulate

log = logging.getLogger("cbfal")

EXIT_OK, EXIT_CONFIG, EXIT_BREAKDOWN, EXIT_VERIFY, EXIT_CHECKS = 0, 1, 2, 3, 4
TEXT, STRUCTURED = "text", "structured"


@dataclass
class RunConfig:
    scenario: str
    overrides: Dict[str, str] = field(default_factory=dict)
    out: Path = Path("out")
    report: str = TEXT
    seed: int = 0

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["run"] = {"scenario": self.scenario, "report": self.report, "seed": str(self.seed),
                     "out": str(self.out)}
        cp["overrides"] = {k: _fmt(v) for k, v in self.overrides.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise InvalidOverride(f"malformed config file: {exc}") from None
        unknown = set(cp.sections()) - {"run", "overrides"}
        if unknown:
            raise InvalidOverride(f"unknown config sections {sorted(unknown)}")
        run = dict(cp["run"]) if cp.has_section("run") else {}
        extra = set(run) - {"scenario", "report", "seed", "out"}
        if extra:
            raise InvalidOverride(f"unknown keys in [run]: {sorted(extra)}")
        if "scenario" not in run:
            raise InvalidOverride("config file needs [run] scenario = NAME")
        overrides = dict(cp["overrides"]) if cp.has_section("overrides") else {}
        return cls(run["scenario"], overrides, Path(run.get("out", "out")), run.get("report", TEXT),
                   int(run.get("seed", 0)))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def defaults_config(name: str) -> RunConfig:
    """Config holding every default of ``name`` explicitly (round-trip helper)."""
    return RunConfig(name, {k: v for k, v in S.resolve_params(name).items()})


def _parse_set(items: List[str]) -> Dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise InvalidOverride(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------
def execute(cfg: RunConfig):
    """Build, simulate and check one scenario; returns ``(scenario, trajectory, report)``."""
    sc = S.build(cfg.scenario, cfg.overrides)
    if sc.sim is None:
        return sc, None, S.run_checks(sc, None)
    try:
        traj = simulate(sc.plant, sc.filter_spec, sc.initial, sc.sim, monitor=sc.monitor)
    except (NonFiniteState, DegenerateConstraint) as exc:
        traj = exc.trajectory
    return sc, traj, S.run_checks(sc, traj)


def exit_code(report: S.Report) -> int:
    """Exit status as a function of the report alone."""
    if report.passed:
        return EXIT_OK
    if any(c.name == "completed" and not c.passed for c in report.checks):
        return EXIT_BREAKDOWN
    return EXIT_CHECKS


def render(report: S.Report, fmt: str, params: Optional[dict] = None) -> str:
    if fmt == STRUCTURED:
        doc = {"scenario": report.scenario, "pass": report.passed, "exit_code": exit_code(report),
               "checks": report.as_records()}
        if params is not None:
            doc["parameters"] = {k: (_fmt(v) if isinstance(v, float) and not math.isfinite(v) else v)
                                 for k, v in params.items()}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    return report.text() + "\n"


def gnuplot_script(sc: S.Scenario, csv_name: str) -> str:
    n = sc.plant.n
    cols = ", ".join(f"'{csv_name}' using 1:{2 + i} with lines title 'x_{i}'" for i in range(n))
    h_col = 2 + n + sc.plant.m
    return "\n".join([
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set multiplot layout 3,1",
        f"plot {cols}",
        f"plot '{csv_name}' using 1:{2 + n} with lines title 'u'",
        f"plot '{csv_name}' using 1:{h_col} with lines title 'H', '' using 1:{h_col + 1} with lines title 'He'",
        "unset multiplot", ""])


def cmd_run(cfg: RunConfig, gnuplot: bool = False) -> int:
    sc, traj, report = execute(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    if traj is not None:
        traj.to_csv(cfg.out / f"{sc.name}.csv")
        if gnuplot:
            (cfg.out / f"{sc.name}.gp").write_text(gnuplot_script(sc, f"{sc.name}.csv"))
    text = render(report, cfg.report, S.public_params(sc))
    (cfg.out / f"{sc.name}.report").write_text(text)
    sys.stdout.write(text)
    for c in report.checks:
        if not c.passed:
            log.error("check %s failed: value %r, threshold %r", c.name, c.value, c.threshold)
    return exit_code(report)


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------
def cmd_verify(seed: int = 0, cases: int = 1000, corrupt: Optional[str] = None) -> int:
    if cases <= 0:
        log.warning("--cases %d: empty suite, nothing verified", cases)
        return EXIT_OK
    try:
        results = V.run_all(cases, seed, corrupt)
    except (KeyError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.cases} cases, {r.failures} failures, "
              f"worst {r.worst:.3g}")
    for r in results:
        if not r.passed:
            print("first failing case: " + json.dumps({"suite": r.name, **r.first_failure}, sort_keys=True))
            return EXIT_VERIFY
    return EXIT_OK


# ---------------------------------------------------------------------------
# convergence
# ---------------------------------------------------------------------------
def convergence_table(name: str, dts: List[float], overrides: Optional[dict] = None):
    """Terminal states for each ``dt`` plus successive differences and order estimates."""
    if len(dts) < 3:
        raise InvalidOverride("convergence needs at least three step sizes")
    dts = sorted(dts, reverse=True)
    finals = []
    for dt in dts:
        sc = S.build(name, dict(overrides or {}, dt=dt))
        if sc.sim is None:
            raise InvalidOverride(f"scenario {name!r} has nothing to simulate")
        finals.append(simulate(sc.plant, sc.filter_spec, sc.initial, sc.sim, monitor=sc.monitor).x[-1])
    diffs = [float(np.max(np.abs(finals[i + 1] - finals[i]))) for i in range(len(dts) - 1)]
    orders = []
    for i in range(len(diffs) - 1):
        ratio = dts[i] / dts[i + 1]
        orders.append(math.log(diffs[i] / diffs[i + 1]) / math.log(ratio)
                      if diffs[i] > 0 and diffs[i + 1] > 0 else float("nan"))
    return dts, finals, diffs, orders


def cmd_convergence(name: str, dts: List[float], overrides: Optional[dict] = None) -> int:
    dts, finals, diffs, orders = convergence_table(name, dts, overrides)
    print(f"{'dt':>12}  {'terminal state':>40}  {'diff to previous':>18}")
    for i, (dt, xf) in enumerate(zip(dts, finals)):
        d = f"{diffs[i - 1]:.6e}" if i else ""
        print(f"{dt:12.6g}  {np.array2string(xf, precision=12):>40}  {d:>18}")
    for o in orders:
        print(f"observed order: {o:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# batch
# ---------------------------------------------------------------------------
def _batch_worker(cfg: RunConfig):
    sc, traj, report = execute(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    if traj is not None:
        traj.to_csv(cfg.out / f"{sc.name}.csv")
    (cfg.out / f"{sc.name}.report").write_text(render(report, cfg.report, S.public_params(sc)))
    return sc.name, exit_code(report), report.passed


def cmd_batch(names: List[str], out: Path, report: str, overrides: dict, workers: Optional[int]) -> int:
    cfgs = [RunConfig(n, dict(overrides), out, report) for n in names]
    for c in cfgs:
        S.resolve_params(c.scenario, c.overrides)  # fail fast on config errors
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_batch_worker, cfgs))
    worst = EXIT_OK
    for name, code, ok in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name} (exit {code})")
        worst = max(worst, code)
    return worst


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cbfal", description="Safety filters for time-delay systems.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a registered scenario and check it")
    r.add_argument("--scenario")
    r.add_argument("--config", type=Path, help="INI file with [run] and [overrides] sections")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    r.add_argument("--dt", type=float)
    r.add_argument("--t-end", type=float)
    r.add_argument("--out", type=Path)
    r.add_argument("--report", choices=[TEXT, STRUCTURED])
    r.add_argument("--gnuplot-script", action="store_true")

    v = sub.add_parser("verify", help="run the oracle and property suites")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--cases", type=int, default=1000)
    v.add_argument("--corrupt", metavar="SPEC", help="scale the present-state weight of SPEC by 2")

    c = sub.add_parser("convergence", help="terminal-state differences under step refinement")
    c.add_argument("--scenario", required=True)
    c.add_argument("--dt", required=True, help="comma-separated step sizes")
    c.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    b = sub.add_parser("batch", help="run several scenarios in parallel")
    b.add_argument("--scenarios", default="case1,case2,case3,case4,predator_prey")
    b.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    b.add_argument("--out", type=Path, default=Path("out"))
    b.add_argument("--report", choices=[TEXT, STRUCTURED], default=TEXT)
    b.add_argument("--workers", type=int)
    return p


def _run_config(args) -> RunConfig:
    if args.config is not None:
        try:
            cfg = RunConfig.from_ini(args.config.read_text())
        except OSError as exc:
            raise InvalidOverride(f"cannot read config file: {exc}") from None
        if args.scenario and args.scenario != cfg.scenario:
            raise InvalidOverride("--scenario disagrees with the config file")
    elif args.scenario:
        cfg = RunConfig(args.scenario)
    else:
        raise InvalidOverride("run needs --scenario or --config")
    cfg.overrides.update(_parse_set(args.set))
    if args.dt is not None:
        cfg.overrides["dt"] = args.dt
    if args.t_end is not None:
        cfg.overrides["t_end"] = args.t_end
    if args.out is not None:
        cfg.out = args.out
    if args.report is not None:
        cfg.report = args.report
    if cfg.report not in (TEXT, STRUCTURED):
        raise InvalidOverride(f"unknown report format {cfg.report!r}")
    S.resolve_params(cfg.scenario, cfg.overrides)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(_run_config(args), args.gnuplot_script)
        if args.command == "verify":
            return cmd_verify(args.seed, args.cases, args.corrupt)
        if args.command == "convergence":
            try:
                dts = [float(s) for s in args.dt.split(",") if s.strip()]
            except ValueError:
                raise InvalidOverride(f"bad --dt list {args.dt!r}") from None
            return cmd_convergence(args.scenario, dts, _parse_set(args.set))
        if args.command == "batch":
            names = [s.strip() for s in args.scenarios.split(",") if s.strip()]
            return cmd_batch(names, args.out, args.report, _parse_set(args.set), args.workers)
    except (UnknownScenario, InvalidOverride, ValueError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
