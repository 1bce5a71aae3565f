"""Trajectory and derivative history for delay systems.

A :class:`HistoryWindow` stores committed samples ``(t, x(t), xdot(t))`` and
answers queries ``x(t - lag)`` / ``xdot(t - lag)`` for continuous lags.  The
state channel is interpolated (cubic Hermite by default, using the stored
derivatives as tangents); the derivative channel is always interpolated from
its own samples, never by differentiating the state interpolant, so that
right-continuity at switching instants survives.

Functionals and plants do not talk to the window directly.  They receive a
*state function* view (``x_t`` in the usual delay-equation notation) that
fixes the current time and, during Runge-Kutta stages, the current stage
state.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import MissingDerivativeHistory, NonMonotoneTime, QueryOutsideSpan

LINEAR = "linear"
CUBIC_HERMITE = "cubic_hermite"

# index-space tolerance for deciding that a query sits exactly on a sample
_ON_GRID = 1e-9


@dataclass
class InitialHistory:
    """Initial data on ``[-tau, 0]``.

    ``state_fn(theta)`` and ``derivative_fn(theta)`` take the lag coordinate
    ``theta <= 0``.  With ``vectorized=True`` they must also accept a 1-d
    array of thetas and return an array of shape ``(K, n)``.
    """

    state_fn: Callable
    derivative_fn: Optional[Callable] = None
    vectorized: bool = False

    @classmethod
    def constant(cls, x0, xdot0=None) -> "InitialHistory":
        x0 = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
        xd = np.zeros_like(x0) if xdot0 is None else np.atleast_1d(np.asarray(xdot0, dtype=float)).copy()

        def state(theta):
            if np.ndim(theta) == 0:
                return x0.copy()
            return np.broadcast_to(x0, (len(theta), len(x0))).copy()

        def deriv(theta):
            if np.ndim(theta) == 0:
                return xd.copy()
            return np.broadcast_to(xd, (len(theta), len(xd))).copy()

        return cls(state, deriv, vectorized=True)

    def state(self, theta: float) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.state_fn(theta), dtype=float))

    def derivative(self, theta: float) -> np.ndarray:
        if self.derivative_fn is None:
            return np.zeros_like(self.state(theta))
        return np.atleast_1d(np.asarray(self.derivative_fn(theta), dtype=float))

    def states(self, thetas) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        if self.vectorized:
            return np.asarray(self.state_fn(thetas), dtype=float).reshape(len(thetas), -1)
        return np.array([self.state(th) for th in thetas]).reshape(len(thetas), -1)

    def derivatives(self, thetas) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        if self.derivative_fn is None:
            return np.zeros_like(self.states(thetas))
        if self.vectorized:
            return np.asarray(self.derivative_fn(thetas), dtype=float).reshape(len(thetas), -1)
        return np.array([self.derivative(th) for th in thetas]).reshape(len(thetas), -1)


class HistoryWindow:
    """Growable store of ``(t, x, xdot)`` samples with delayed lookups.

    Parameters
    ----------
    n : state dimension.
    max_lag : largest lag that will be queried (``tau``).
    interp : ``"cubic_hermite"`` or ``"linear"`` for the state channel.
    prune : discard samples older than ``t - max_lag - stencil*dt`` on append.
    initial : optional :class:`InitialHistory`; queries strictly before ``t0``
        are answered by its functions instead of by interpolation.
    t0 : start time of the integration (the junction with the initial data).
    """

    def __init__(self, n: int, max_lag: float, interp: str = CUBIC_HERMITE, prune: bool = True,
                 initial: Optional[InitialHistory] = None, t0: float = 0.0, stencil: int = 2,
                 capacity: int = 1024):
        if max_lag <= 0:
            raise ValueError("max_lag must be positive")
        if interp not in (LINEAR, CUBIC_HERMITE):
            raise ValueError(f"unknown interpolation order {interp!r}")
        self.n = int(n)
        self.max_lag = float(max_lag)
        self.interp = interp
        self.prune = prune
        self.initial = initial
        self.t0 = float(t0)
        self.stencil = stencil
        self._t = np.empty(capacity)
        self._x = np.empty((capacity, self.n))
        self._xd = np.empty((capacity, self.n))
        self._xdl = np.empty((capacity, self.n))  # left limits of the derivative
        self._start = 0
        self._end = 0
        self.dt: Optional[float] = None
        self.uniform = True

    # -- construction -------------------------------------------------------
    @classmethod
    def seeded(cls, initial: InitialHistory, max_lag: float, dt: float, t0: float = 0.0,
               **kwargs) -> "HistoryWindow":
        """Window pre-filled with the initial history sampled on ``[t0-tau, t0)``.

        The sample at ``t0`` itself is left to the integrator, which commits it
        with the closed-loop right-hand side as its derivative.
        """
        nsteps = int(round(max_lag / dt))
        x_probe = initial.state(0.0)
        win = cls(len(x_probe), max_lag, initial=initial, t0=t0,
                  capacity=max(1024, 2 * nsteps + 8), **kwargs)
        thetas = -(nsteps - np.arange(nsteps)) * dt
        xs = initial.states(thetas)
        xds = initial.derivatives(thetas)
        for th, x, xd in zip(thetas, xs, xds):
            win.append(t0 + th, x, xd)
        return win

    def copy(self) -> "HistoryWindow":
        """Independent read-only-safe snapshot of the retained samples."""
        new = HistoryWindow(self.n, self.max_lag, self.interp, self.prune, self.initial, self.t0,
                            self.stencil, capacity=max(len(self), 16))
        k = len(self)
        new._t[:k] = self.times
        new._x[:k] = self.states
        new._xd[:k] = self.derivatives
        new._xdl[:k] = self.left_derivatives
        new._end = k
        new.dt, new.uniform = self.dt, self.uniform
        return new

    # -- storage ------------------------------------------------------------
    def __len__(self) -> int:
        return self._end - self._start

    @property
    def times(self) -> np.ndarray:
        return self._t[self._start:self._end]

    @property
    def states(self) -> np.ndarray:
        return self._x[self._start:self._end]

    @property
    def derivatives(self) -> np.ndarray:
        return self._xd[self._start:self._end]

    @property
    def left_derivatives(self) -> np.ndarray:
        return self._xdl[self._start:self._end]

    @property
    def first_time(self) -> float:
        if not len(self):
            raise QueryOutsideSpan("empty history window")
        return float(self._t[self._start])

    @property
    def last_time(self) -> float:
        if not len(self):
            raise QueryOutsideSpan("empty history window")
        return float(self._t[self._end - 1])

    @property
    def span(self) -> float:
        return self.last_time - self.first_time if len(self) else 0.0

    def append(self, t: float, x, xdot, xdot_left=None) -> "HistoryWindow":
        """Commit a sample; ``xdot`` is the right-hand derivative, ``xdot_left``
        the left limit (defaults to ``xdot``, i.e. no jump at ``t``)."""
        x = np.asarray(x, dtype=float).reshape(self.n)
        xdot = np.asarray(xdot, dtype=float).reshape(self.n)
        xdot_left = xdot if xdot_left is None else np.asarray(xdot_left, dtype=float).reshape(self.n)
        if len(self):
            last = self._t[self._end - 1]
            if not t > last:
                raise NonMonotoneTime(f"t={t!r} is not after last sample t={last!r}")
            step = t - last
            if self.dt is None:
                self.dt = step
            elif self.uniform and abs(step - self.dt) > 1e-9 * self.dt:
                self.uniform = False
        if self._end == len(self._t):
            self._make_room()
        i = self._end
        self._t[i] = t
        self._x[i] = x
        self._xd[i] = xdot
        self._xdl[i] = xdot_left
        self._end += 1
        if self.prune and self.dt is not None:
            cutoff = t - self.max_lag - self.stencil * self.dt * (1 - 1e-9)
            while self._end - self._start > 2 and self._t[self._start] < cutoff:
                self._start += 1
        return self

    def _make_room(self):
        k = len(self)
        if self._start > 0 and k <= len(self._t) // 2:
            self._t[:k] = self._t[self._start:self._end]
            self._x[:k] = self._x[self._start:self._end]
            self._xd[:k] = self._xd[self._start:self._end]
            self._xdl[:k] = self._xdl[self._start:self._end]
        else:
            cap = 2 * len(self._t)
            t, x, xd, xdl = np.empty(cap), np.empty((cap, self.n)), np.empty((cap, self.n)), np.empty((cap, self.n))
            t[:k] = self._t[self._start:self._end]
            x[:k] = self._x[self._start:self._end]
            xd[:k] = self._xd[self._start:self._end]
            xdl[:k] = self._xdl[self._start:self._end]
            self._t, self._x, self._xd, self._xdl = t, x, xd, xdl
        self._start, self._end = 0, k

    # -- lookup -------------------------------------------------------------
    def _use_initial(self, s: float) -> bool:
        return self.initial is not None and s < self.t0 - 1e-12 * max(1.0, abs(self.t0))

    def _check_span(self, s: float, exc=QueryOutsideSpan):
        if not len(self):
            raise exc("empty history window")
        tol = 1e-9 * (self.dt or 1.0)
        first, last = self._t[self._start], self._t[self._end - 1]
        if s < first - tol:
            raise exc(f"query time {s!r} precedes earliest retained sample {first!r}")
        if s > last + tol:
            raise exc(f"query time {s!r} is after latest committed sample {last!r}")

    def _cell(self, s: float):
        """Return ``(i, u)``: sample index and fractional position in the cell.

        ``u == 0`` means the query hits sample ``i`` exactly.
        """
        start, end = self._start, self._end
        if self.uniform and self.dt is not None:
            k = (s - self._t[start]) / self.dt
            kr = round(k)
            if abs(k - kr) <= _ON_GRID:
                return start + min(max(kr, 0), end - start - 1), 0.0
            i = start + int(math.floor(k))
        else:
            j = int(np.searchsorted(self._t[start:end], s, side="right")) - 1
            i = start + max(j, 0)
            if abs(s - self._t[i]) <= 1e-12 * max(1.0, abs(s)):
                return i, 0.0
        i = min(max(i, start), end - 2)
        h = self._t[i + 1] - self._t[i]
        return i, (s - self._t[i]) / h

    def _interp_state(self, i: int, u: float) -> np.ndarray:
        if u == 0.0:
            return self._x[i].copy()
        x0, x1 = self._x[i], self._x[i + 1]
        if self.interp == LINEAR:
            return x0 + u * (x1 - x0)
        h = self._t[i + 1] - self._t[i]
        u2, u3 = u * u, u * u * u
        h00 = 2 * u3 - 3 * u2 + 1
        h10 = u3 - 2 * u2 + u
        h01 = -2 * u3 + 3 * u2
        h11 = u3 - u2
        return h00 * x0 + h10 * h * self._xd[i] + h01 * x1 + h11 * h * self._xdl[i + 1]

    def state_at(self, s: float) -> np.ndarray:
        if self._use_initial(s):
            if len(self) and s < self._t[self._start] - 1e-9 * (self.dt or 1.0):
                raise QueryOutsideSpan(f"query time {s!r} precedes earliest retained sample")
            return self.initial.state(s - self.t0)
        self._check_span(s)
        return self._interp_state(*self._cell(s))

    def derivative_at(self, s: float, left: bool = False) -> np.ndarray:
        """Stored derivative at ``s``; at a sample, the right-hand value unless ``left``."""
        if self._use_initial(s):
            if len(self) and s < self._t[self._start] - 1e-9 * (self.dt or 1.0):
                raise MissingDerivativeHistory(f"query time {s!r} precedes earliest retained sample")
            return self.initial.derivative(s - self.t0)
        self._check_span(s, MissingDerivativeHistory)
        i, u = self._cell(s)
        if u == 0.0:
            return (self._xdl if left else self._xd)[i].copy()
        return self._xd[i] + u * (self._xdl[i + 1] - self._xd[i])

    def eval_state(self, t: float, lag: float) -> np.ndarray:
        """``x(t - lag)``; exact at sample points."""
        if lag < 0 or lag > self.max_lag * (1 + 1e-12) + 1e-15:
            raise ValueError(f"lag {lag!r} outside [0, {self.max_lag}]")
        return self.state_at(t - lag)

    def eval_derivative(self, t: float, lag: float, left: bool = False) -> np.ndarray:
        """``xdot(t - lag)`` from the stored derivative channel (right-continuous)."""
        if lag < 0 or lag > self.max_lag * (1 + 1e-12) + 1e-15:
            raise ValueError(f"lag {lag!r} outside [0, {self.max_lag}]")
        return self.derivative_at(t - lag, left)

    # vectorised variants used by quadrature
    def states_at(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = np.empty((len(s), self.n))
        mask = self._initial_mask(s)
        if mask.any():
            out[mask] = self.initial.states(s[mask] - self.t0)
        rest = ~mask
        if rest.any():
            out[rest] = self._vec_interp(s[rest], derivative=False)
        return out

    def derivatives_at(self, s, left: bool = False) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = np.empty((len(s), self.n))
        mask = self._initial_mask(s)
        if mask.any():
            out[mask] = self.initial.derivatives(s[mask] - self.t0)
        rest = ~mask
        if rest.any():
            out[rest] = self._vec_interp(s[rest], derivative=True, left=left)
        return out

    def _initial_mask(self, s: np.ndarray) -> np.ndarray:
        if self.initial is None:
            return np.zeros(len(s), dtype=bool)
        mask = s < self.t0 - 1e-12 * max(1.0, abs(self.t0))
        if mask.any() and len(self) and s[mask].min() < self._t[self._start] - 1e-9 * (self.dt or 1.0):
            raise QueryOutsideSpan("vector query precedes earliest retained sample")
        return mask

    def _vec_interp(self, s: np.ndarray, derivative: bool, left: bool = False) -> np.ndarray:
        exc = MissingDerivativeHistory if derivative else QueryOutsideSpan
        self._check_span(float(s.min()), exc)
        self._check_span(float(s.max()), exc)
        start, end = self._start, self._end
        t = self._t[start:end]
        src = (self._xdl if left else self._xd) if derivative else self._x
        if end - start == 1:
            return np.repeat(src[start:start + 1], len(s), axis=0)
        if self.uniform and self.dt is not None:
            k = (s - t[0]) / self.dt
            kr = np.rint(k)
            on = np.abs(k - kr) <= _ON_GRID
            i_on = np.clip(kr.astype(int), 0, len(t) - 1)
            if on.all():
                return src[start + i_on]
            i = np.floor(k).astype(int)
        else:
            i = np.searchsorted(t, s, side="right") - 1
            i_on = np.clip(i, 0, len(t) - 1)
            on = np.abs(s - t[i_on]) <= 1e-12 * np.maximum(1.0, np.abs(s))
        i = np.clip(i, 0, len(t) - 2)
        h = t[i + 1] - t[i]
        u = ((s - t[i]) / h)[:, None]
        x0, x1 = self._x[start + i], self._x[start + i + 1]
        d0, d1 = self._xd[start + i], self._xdl[start + i + 1]
        if derivative:
            out = d0 + u * (d1 - d0)
        elif self.interp == LINEAR:
            out = x0 + u * (x1 - x0)
        else:
            # Hermite basis in Horner form
            hh = h[:, None]
            dx = x1 - x0
            hd0, hd1 = hh * d0, hh * d1
            out = x0 + u * (hd0 + u * (3 * dx - 2 * hd0 - hd1 + u * (hd0 + hd1 - 2 * dx)))
        if on.any():
            out[on] = src[start + i_on[on]]
        return out

    # -- views & export -----------------------------------------------------
    def view(self, t: float, current=None, current_derivative=None, left: bool = False) -> "WindowView":
        return WindowView(self, t, current, current_derivative, left)

    def to_csv(self, path) -> None:
        """Write ``t,x_0..x_{n-1},xdot_0..xdot_{n-1}`` at 17 significant digits."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x_{i}" for i in range(self.n)] + [f"xdot_{i}" for i in range(self.n)])
            for t, x, xd in zip(self.times, self.states, self.derivatives):
                w.writerow([format(t, ".17g")] + [format(v, ".17g") for v in x]
                           + [format(v, ".17g") for v in xd])


class StateFunction:
    """Interface of an ``x_t`` view: values and derivatives at lags ``>= 0``."""

    t: float
    grid_step: float

    def x(self, lag: float = 0.0) -> np.ndarray:
        raise NotImplementedError

    def xdot(self, lag: float) -> np.ndarray:
        raise NotImplementedError

    def xs(self, lags) -> np.ndarray:
        return np.array([self.x(l) for l in lags])

    def xdots(self, lags) -> np.ndarray:
        return np.array([self.xdot(l) for l in lags])


class WindowView(StateFunction):
    """``x_t`` backed by a :class:`HistoryWindow`.

    ``current`` is the (uncommitted) state at time ``t`` during a Runge-Kutta
    stage; lookups that land between the last committed sample and ``t`` are
    interpolated linearly towards it.  ``current_derivative`` is only known
    for committed samples and is otherwise unavailable at lag 0.  With
    ``left`` derivative lookups that hit a sample return its left limit, as
    needed by a stage sitting at the end of a step.
    """

    __slots__ = ("window", "t", "current", "current_derivative", "grid_step", "left")

    def __init__(self, window: HistoryWindow, t: float, current=None, current_derivative=None,
                 left: bool = False):
        self.window = window
        self.t = t
        self.current = current
        self.current_derivative = current_derivative
        self.grid_step = window.dt or 1e-3
        self.left = left

    def _ahead(self, s: float) -> bool:
        return self.current is not None and s > self.window._t[self.window._end - 1] + 1e-12

    def x(self, lag: float = 0.0) -> np.ndarray:
        if lag == 0.0 and self.current is not None:
            return self.current
        s = self.t - lag
        if self._ahead(s):
            w = self.window
            t_last = w._t[w._end - 1]
            u = (s - t_last) / (self.t - t_last)
            return w._x[w._end - 1] + u * (self.current - w._x[w._end - 1])
        return self.window.state_at(s)

    def xdot(self, lag: float) -> np.ndarray:
        if lag == 0.0 and self.current_derivative is not None:
            return self.current_derivative
        s = self.t - lag
        if self._ahead(s):
            # hold the last committed derivative inside the step being taken
            w = self.window
            return w._xd[w._end - 1].copy()
        return self.window.derivative_at(s, self.left)

    def xs(self, lags) -> np.ndarray:
        s = self.t - np.asarray(lags, dtype=float)
        if self.current is None:
            return self.window.states_at(s)
        w = self.window
        t_last = w._t[w._end - 1]
        ahead = s > t_last + 1e-12
        out = np.empty((len(s), w.n))
        if (~ahead).any():
            out[~ahead] = w.states_at(s[~ahead])
        if ahead.any():
            u = ((s[ahead] - t_last) / (self.t - t_last))[:, None]
            out[ahead] = w._x[w._end - 1] + u * (self.current - w._x[w._end - 1])
        return out

    def xdots(self, lags) -> np.ndarray:
        s = self.t - np.asarray(lags, dtype=float)
        w = self.window
        t_last = w._t[w._end - 1]
        ahead = s > t_last + 1e-12
        if self.current_derivative is not None:
            ahead &= ~(np.asarray(lags) == 0.0)
        out = np.empty((len(s), w.n))
        if (~ahead).any():
            out[~ahead] = w.derivatives_at(s[~ahead], self.left)
        if ahead.any():
            out[ahead] = w._xd[w._end - 1]
        if self.current_derivative is not None:
            out[np.asarray(lags) == 0.0] = self.current_derivative
        return out


class AnalyticView(StateFunction):
    """``x_t`` backed by closed-form functions of absolute time.

    ``state_fn(s)`` / ``derivative_fn(s)`` must accept scalars and 1-d arrays
    (returning ``(n,)`` and ``(K, n)`` respectively).
    """

    def __init__(self, state_fn: Callable, derivative_fn: Callable, t: float, grid_step: float = 1e-3):
        self.state_fn = state_fn
        self.derivative_fn = derivative_fn
        self.t = t
        self.grid_step = grid_step

    def at(self, t: float) -> "AnalyticView":
        return AnalyticView(self.state_fn, self.derivative_fn, t, self.grid_step)

    def x(self, lag: float = 0.0) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.state_fn(self.t - lag), dtype=float))

    def xdot(self, lag: float) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.derivative_fn(self.t - lag), dtype=float))

    def xs(self, lags) -> np.ndarray:
        s = self.t - np.asarray(lags, dtype=float)
        return np.asarray(self.state_fn(s), dtype=float).reshape(len(s), -1)

    def xdots(self, lags) -> np.ndarray:
        s = self.t - np.asarray(lags, dtype=float)
        return np.asarray(self.derivative_fn(s), dtype=float).reshape(len(s), -1)


def initial_view(initial: InitialHistory, grid_step: float = 1e-3) -> AnalyticView:
    """View of the initial history at ``t = 0``."""

    def xf(s):
        return initial.state(s) if np.ndim(s) == 0 else initial.states(s)

    def df(s):
        return initial.derivative(s) if np.ndim(s) == 0 else initial.derivatives(s)

    return AnalyticView(xf, df, 0.0, grid_step)


@lru_cache(maxsize=64)
def _lag_grid(sigma1: float, sigma2: float, step: float) -> np.ndarray:
    n = max(1, int(round((sigma1 - sigma2) / step)))
    out = sigma2 + (sigma1 - sigma2) * np.arange(n + 1) / n
    out.flags.writeable = False
    return out


def sample_lags(sigma1: float, sigma2: float, step: float) -> np.ndarray:
    """Quadrature lags from ``sigma2`` up to ``sigma1`` on a grid of ``step`` (read-only, cached)."""
    return _lag_grid(float(sigma1), float(sigma2), float(step))


def window_from_arrays(times: Sequence[float], states, derivatives, max_lag: float,
                       interp: str = CUBIC_HERMITE, initial: Optional[InitialHistory] = None,
                       t0: float = 0.0) -> HistoryWindow:
    """Rebuild an unpruned window from recorded arrays."""
    states = np.asarray(states, dtype=float)
    states = states.reshape(len(states), -1)
    derivatives = np.asarray(derivatives, dtype=float).reshape(states.shape)
    win = HistoryWindow(states.shape[1], max_lag, interp, prune=False, initial=initial, t0=t0,
                        capacity=max(16, len(states)))
    for t, x, xd in zip(times, states, derivatives):
        win.append(float(t), x, xd)
    return win
