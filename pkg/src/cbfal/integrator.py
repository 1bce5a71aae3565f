"""Fixed-step method-of-steps integration of filtered delay systems.

Each step of classical RK4 first evaluates the closed loop at the current
state; that value is committed to the history as the right-hand derivative
``xdot(t)``.  The remaining stages query delayed values from committed
history only, which is explicit as long as every point lag is at least one
step long.  Steps across a filter switch are optionally split at the switch.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Union

import numpy as np

from .errors import CbfalError, DegenerateConstraint, NonFiniteState
from .functionals import CbfalSpec, ExtendedSpec, eval_value
from .history import CUBIC_HERMITE, HistoryWindow, InitialHistory
from .safety_filter import FilterSpec, apply_filter, switching_surface

log = logging.getLogger(__name__)


@dataclass
class ControlAffinePlant:
    """``xdot = F(x_t) + G(x_t) u``.

    ``F`` and ``G`` receive a state-function view; neutral plants may read
    ``xt.xdot(lag)`` for strictly positive lags.  ``lags`` lists the point
    lags the plant reads (used to validate the step size).
    """

    n: int
    m: int
    F: Callable
    G: Callable
    neutral: bool = False
    lags: tuple = ()
    name: str = "plant"

    @property
    def max_lag(self) -> float:
        return max(self.lags, default=0.0)

    def rhs(self, xt, u) -> np.ndarray:
        G = np.asarray(self.G(xt), dtype=float).reshape(self.n, self.m)
        return np.asarray(self.F(xt), dtype=float) + G @ u


@dataclass
class SimConfig:
    """Step size, horizon and recording options.

    With ``split_at_switch`` a step during which the sign of ``phi`` changes is
    re-taken as two RK4 sub-steps meeting at the crossing, which keeps the
    kink of the filtered vector field off the interior of a step.  Committed
    samples stay on the ``dt`` grid.
    """

    dt: float = 1e-3
    t_end: float = 50.0
    record_stride: int = 1
    controller_on_at: float = 0.0
    interp: str = CUBIC_HERMITE
    keep_history: bool = True
    split_at_switch: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if int(self.record_stride) < 1:
            raise ValueError("record_stride must be a positive integer")

    def check_lags(self, lags) -> None:
        for lag in lags:
            k = round(lag / self.dt)
            if k < 1 or abs(lag - k * self.dt) > 1e-12 * lag:
                raise ValueError(f"dt={self.dt!r} does not divide lag {lag!r} (need lags >= dt on the grid)")


@dataclass
class SimRecord:
    t: float
    x: np.ndarray
    u: np.ndarray
    H: Optional[float]
    He: Optional[float]
    phi: Optional[float]
    active: bool


@dataclass
class Trajectory:
    records: List[SimRecord]
    window: HistoryWindow
    plant: ControlAffinePlant
    config: SimConfig
    filter_spec: Optional[FilterSpec] = None
    monitor: Optional[Union[CbfalSpec, ExtendedSpec]] = None
    error: Optional[CbfalError] = None

    @property
    def terminated_early(self) -> bool:
        return self.error is not None

    def column(self, name: str) -> np.ndarray:
        vals = [getattr(r, name) for r in self.records]
        if name in ("x", "u"):
            return np.array(vals)
        return np.array([np.nan if v is None else float(v) for v in vals])

    @property
    def t(self) -> np.ndarray:
        return self.column("t")

    @property
    def x(self) -> np.ndarray:
        return self.column("x")

    @property
    def u(self) -> np.ndarray:
        return self.column("u")

    @property
    def H(self) -> np.ndarray:
        return self.column("H")

    @property
    def He(self) -> np.ndarray:
        return self.column("He")

    @property
    def phi(self) -> np.ndarray:
        return self.column("phi")

    @property
    def active(self) -> np.ndarray:
        return np.array([r.active for r in self.records])

    def to_csv(self, path) -> None:
        """``t,x_0..,u_0..,H,He,phi,active`` with doubles at 17 significant digits."""
        n, m = self.plant.n, self.plant.m
        fmt = lambda v: "" if v is None else format(float(v), ".17g")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x_{i}" for i in range(n)] + [f"u_{i}" for i in range(m)]
                       + ["H", "He", "phi", "active"])
            for r in self.records:
                w.writerow([fmt(r.t)] + [fmt(v) for v in r.x] + [fmt(v) for v in r.u]
                           + [fmt(r.H), fmt(r.He), fmt(r.phi), int(r.active)])


def _monitor_values(monitor, xt):
    if monitor is None:
        return None, None
    if isinstance(monitor, ExtendedSpec):
        He, H, _ = monitor.parts(xt)
        return H, He
    return eval_value(monitor, xt), None


def simulate(plant: ControlAffinePlant, filter_spec: Optional[FilterSpec], initial: InitialHistory,
             cfg: SimConfig, monitor: Optional[Union[CbfalSpec, ExtendedSpec]] = None) -> Trajectory:
    """Integrate the (optionally filtered) closed loop from ``t = 0`` to ``cfg.t_end``.

    Before ``cfg.controller_on_at`` the input is zero.  ``monitor`` is the
    functional recorded in the ``H``/``He`` columns when no filter is given.
    On :class:`NonFiniteState` or :class:`DegenerateConstraint` the partial
    trajectory is attached to the exception as ``.trajectory``.
    """
    if filter_spec is not None and monitor is None:
        monitor = filter_spec.cbfal
    lags = set(plant.lags)
    max_lag = plant.max_lag
    for spec in (monitor, filter_spec):
        if spec is not None:
            max_lag = max(max_lag, spec.max_lag)
    if filter_spec is not None:
        lags |= set(filter_spec.lags)
    elif isinstance(monitor, CbfalSpec):
        lags |= set(monitor.lags)
    cfg.check_lags(sorted(lags))
    max_lag = max(max_lag, cfg.dt)

    if filter_spec is not None:
        # the filtered right-hand side inherits F's regularity only if u does; nothing checks that here
        log.info("%s: Lipschitz continuity of the filtered closed loop is assumed, not verified", plant.name)
    dt = cfg.dt
    window = HistoryWindow.seeded(initial, max_lag, dt, interp=cfg.interp, prune=not cfg.keep_history)
    n, m = plant.n, plant.m
    zero_u = np.zeros(m)
    traj = Trajectory([], window, plant, cfg, filter_spec, monitor)
    on_at = cfg.controller_on_at - 1e-9 * dt
    on_at_left = cfg.controller_on_at + 1e-9 * dt

    def closed_loop(t, x, want_record=False, left=False):
        """Closed-loop right-hand side; also returns ``u``, the record tuple and ``phi``.

        ``left`` evaluates the left limit in time: delayed derivatives hitting a
        sample use its left value and the filter is off at the activation instant.
        """
        xt = window.view(t, current=x, left=left)
        F = np.asarray(plant.F(xt), dtype=float)
        G = np.asarray(plant.G(xt), dtype=float).reshape(n, m)
        if filter_spec is not None and t >= (on_at_left if left else on_at):
            res = apply_filter(filter_spec, plant, xt, FG=(F, G))
            u, phi = res.u, res.phi
            rec = (res.H, res.He, res.phi, res.active) if want_record else None
        else:
            u, phi = zero_u, None
            if want_record:
                H, He = _monitor_values(monitor, xt)
                rec = (H, He, None, False)
            else:
                rec = None
        return F + G @ u, u, rec, phi

    def rk4(t0, x0, h, f1):
        th = t0 + 0.5 * h
        f2, _, _, p2 = closed_loop(th, x0 + 0.5 * h * f1)
        f3, _, _, p3 = closed_loop(th, x0 + 0.5 * h * f2)
        f4, _, _, p4 = closed_loop(t0 + h, x0 + h * f3, left=True)
        return x0 + (h / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4), (p2, p3, p4)

    def split_step(t0, x0, f1, phi1, x_full):
        """Re-take a step that crosses the switching surface as two sub-steps.

        The crossing is located by bisection on the end value of a shortened
        RK4 step; ``None`` if the full step shows no sign change.
        """
        phi_end = closed_loop(t0 + dt, x_full, left=True)[3]
        if phi_end is None or (phi_end < 0) == (phi1 < 0):
            return None
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            pm = closed_loop(t0 + mid * dt, rk4(t0, x0, mid * dt, f1)[0])[3]
            if (pm < 0) == (phi1 < 0):
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-13:
                break
        h1 = lo * dt
        xs = rk4(t0, x0, h1, f1)[0] if h1 > 0 else x0
        fs = closed_loop(t0 + h1, xs)[0]
        return rk4(t0 + h1, xs, dt - h1, fs)[0]

    x = initial.state(0.0).astype(float)
    x_left = initial.derivative(0.0)
    # left limits differ from committed right-hand values only for neutral
    # plants or where the input switches on
    track_left = plant.neutral or filter_spec is not None
    steps = int(round(cfg.t_end / dt))
    stride = int(cfg.record_stride)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps + 1):
            t = k * dt
            record = k % stride == 0 or k == steps
            try:
                f1, u, rec, phi1 = closed_loop(t, x, record)
                if not np.all(np.isfinite(f1)):
                    raise NonFiniteState(f"non-finite right-hand side at t={t:.6g}", t)
                window.append(t, x, f1, x_left)
                if record:
                    traj.records.append(SimRecord(t, x.copy(), np.array(u, dtype=float), *rec))
                if k == steps:
                    break
                x_new, phis = rk4(t, x, dt, f1)
                if (cfg.split_at_switch and phi1 is not None and np.all(np.isfinite(x_new))
                        and any(p is not None and (p < 0) != (phi1 < 0) for p in phis)):
                    x_split = split_step(t, x, f1, phi1, x_new)
                    if x_split is not None:
                        x_new = x_split
                x = x_new
                if not np.all(np.isfinite(x)):
                    raise NonFiniteState(f"state became non-finite at t={t + dt:.6g}", t + dt)
                t_next = (k + 1) * dt
                if plant.neutral or (track_left and abs(t_next - cfg.controller_on_at) <= 1e-9 * dt):
                    x_left = closed_loop(t_next, x, left=True)[0]
                else:
                    x_left = None
            except OverflowError as exc:
                err = NonFiniteState(f"overflow near t={t:.6g}: {exc}", t)
                err.trajectory = traj
                traj.error = err
                raise err from exc
            except (NonFiniteState, DegenerateConstraint) as exc:
                if exc.t is None:
                    exc.t = t
                exc.trajectory = traj
                traj.error = exc
                raise
    return traj


def simulate_capture(*args, **kwargs) -> Trajectory:
    """Like :func:`simulate` but returns the partial trajectory instead of raising."""
    try:
        return simulate(*args, **kwargs)
    except (NonFiniteState, DegenerateConstraint) as exc:
        return exc.trajectory


def locate_switch(traj: Trajectory, tol: float = 1e-9, max_iter: int = 200) -> list:
    """Sign changes of ``phi`` along the trajectory as ``(t, direction)`` pairs.

    ``direction`` is ``"on"`` when ``phi`` turns negative (the filter starts
    modifying the input) and ``"off"`` when it returns to non-negative.  With a
    full history the crossing is refined by bisection on the interpolated
    trajectory; otherwise recorded values are interpolated linearly.
    """
    if traj.filter_spec is None:
        return []
    t = traj.t
    phi = traj.phi
    window = traj.window
    full = traj.config.keep_history

    def phi_at(s):
        return switching_surface(traj.filter_spec, traj.plant, window.view(s))

    out = []
    for i in range(len(t) - 1):
        a, b = phi[i], phi[i + 1]
        if not (math.isfinite(a) and math.isfinite(b)) or (a >= 0) == (b >= 0):
            continue
        direction = "on" if a >= 0 else "off"
        lo, hi = t[i], t[i + 1]
        if not full:
            out.append((lo + (hi - lo) * a / (a - b), direction))
            continue
        flo = a
        mid = 0.5 * (lo + hi)
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            fm = phi_at(mid)
            if abs(fm) <= tol or hi - lo <= 1e-14 * max(1.0, abs(mid)):
                break
            if (fm >= 0) == (flo >= 0):
                lo, flo = mid, fm
            else:
                hi = mid
        out.append((mid, direction))
    return out
