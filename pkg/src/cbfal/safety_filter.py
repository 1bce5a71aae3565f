"""Closed-form minimum-norm safety filters.

The quadratic program

    min ||u - u_des||^2   s.t.   phi + phi0 (u - u_des) >= 0

has the solution ``u_des`` when ``phi >= 0`` and
``u_des - phi phi0^T / (phi0 phi0^T)`` otherwise.  In standard mode
``phi = L_F H + L_G H u_des + alpha(H)`` and ``phi0 = L_G H``; in extended mode
the same structure is applied to ``He`` with ``alpha_e``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .errors import DegenerateConstraint
from .functionals import CbfalSpec, ClassKeFn, ExtendedSpec, eval_split_derivative, eval_value

log = logging.getLogger(__name__)

STANDARD = "standard"
EXTENDED = "extended"


@dataclass(frozen=True)
class FilterSpec:
    mode: str
    cbfal: Union[CbfalSpec, ExtendedSpec]
    alpha: Optional[ClassKeFn] = None
    alpha_e: Optional[ClassKeFn] = None
    k_des: Optional[Callable] = None
    epsilon_guard: float = 1e-10

    def __post_init__(self):
        if self.mode == EXTENDED:
            if self.alpha_e is None or not isinstance(self.cbfal, ExtendedSpec):
                raise ValueError("extended mode needs an ExtendedSpec and alpha_e")
        elif self.mode == STANDARD:
            if self.alpha is None or not isinstance(self.cbfal, CbfalSpec):
                raise ValueError("standard mode needs a CbfalSpec and alpha")
        else:
            raise ValueError(f"unknown filter mode {self.mode!r}")
        if self.epsilon_guard < 0:
            raise ValueError("epsilon_guard must be non-negative")

    @property
    def base(self) -> CbfalSpec:
        return self.cbfal.base if self.mode == EXTENDED else self.cbfal

    @property
    def max_lag(self) -> float:
        return self.cbfal.max_lag

    @property
    def lags(self) -> tuple:
        if self.mode == EXTENDED:
            return self.cbfal.base.lags + self.cbfal.lie_f.lags
        return self.cbfal.lags


@dataclass
class FilterResult:
    u: np.ndarray
    phi: float
    phi0: np.ndarray
    active: bool
    guarded: bool = False
    u_des: Optional[np.ndarray] = None
    H: Optional[float] = None
    He: Optional[float] = None


def min_norm_correction(phi: float, phi0, u_des, epsilon_guard: float = 1e-10, t=None):
    """Closed-form KKT solution; returns ``(u, active, guarded)``."""
    phi0 = np.atleast_1d(np.asarray(phi0, dtype=float))
    u_des = np.atleast_1d(np.asarray(u_des, dtype=float))
    norm = float(np.linalg.norm(phi0))
    guarded = norm <= epsilon_guard
    if phi >= 0:
        return u_des.copy(), False, guarded
    if guarded:
        raise DegenerateConstraint(
            f"constraint violated (phi={phi:.6g}) while |L_G H|={norm:.3g} <= {epsilon_guard:g}", t, phi, phi0)
    return u_des - phi * phi0 / (norm * norm), True, False


def constraint_terms(spec: FilterSpec, plant, xt, FG=None):
    """Return ``(phi, phi0, u_des, H, He)`` for the current state function."""
    u_des = np.zeros(plant.m) if spec.k_des is None else np.atleast_1d(np.asarray(spec.k_des(xt), dtype=float))
    if spec.mode == STANDARD:
        H = eval_value(spec.cbfal, xt)
        lf, lg = eval_split_derivative(spec.cbfal, plant, xt, FG=FG)
        return lf + float(lg @ u_des) + spec.alpha(H), lg, u_des, H, None
    drift, lglf, He, H = spec.cbfal.split(plant, xt, FG=FG)
    return drift + float(lglf @ u_des) + spec.alpha_e(He), lglf, u_des, H, He


def apply_filter(spec: FilterSpec, plant, xt, FG=None) -> FilterResult:
    """Filtered input for the state function ``xt``."""
    phi, phi0, u_des, H, He = constraint_terms(spec, plant, xt, FG)
    u, active, guarded = min_norm_correction(phi, phi0, u_des, spec.epsilon_guard, getattr(xt, "t", None))
    return FilterResult(u, phi, phi0, active, guarded, u_des, H, He)


def switching_surface(spec: FilterSpec, plant, xt) -> float:
    """``phi`` (or ``phi_e``): its sign change marks controller activation."""
    return constraint_terms(spec, plant, xt)[0]


def grid_search_1d(phi: float, phi0: float, u_des: float, levels: int = 12, points: int = 2001) -> float:
    """Minimise ``|u - u_des|`` over feasible grid points, zooming in level by level."""
    half = 1.0 + abs(phi) / max(abs(phi0), 1e-300)
    center = u_des
    best = u_des
    for _ in range(levels):
        grid = np.linspace(center - half, center + half, points)
        feasible = grid[phi + phi0 * (grid - u_des) >= 0]
        if feasible.size == 0:
            half *= 4
            continue
        best = feasible[np.argmin(np.abs(feasible - u_des))]
        center = best
        half = 4 * (2 * half / (points - 1))
    return float(best)


def brute_force_oracle(phi: float, phi0, u_des, grid_check: bool = True) -> np.ndarray:
    """Project ``u_des`` onto the half-space ``{u : a.u >= b}`` of admissible inputs.

    With ``a = phi0`` and ``b = a.u_des - phi``.  For scalar inputs the result
    is additionally confirmed by a zooming grid search.
    """
    a = np.atleast_1d(np.asarray(phi0, dtype=float))
    u_des = np.atleast_1d(np.asarray(u_des, dtype=float))
    b = float(a @ u_des) - phi
    slack = float(a @ u_des) - b
    if slack >= 0:
        u = u_des.copy()
    else:
        aa = float(a @ a)
        if aa == 0.0:
            raise DegenerateConstraint("empty admissible half-space", None, phi, a)
        # foot of the perpendicular from u_des onto the plane a.u = b
        u = u_des + ((b - float(a @ u_des)) / aa) * a
    if grid_check and len(a) == 1 and a[0] != 0.0:
        g = grid_search_1d(phi, float(a[0]), float(u_des[0]))
        scale = max(1.0, abs(g))
        if abs(g - u[0]) > 1e-9 * scale:
            raise AssertionError(f"grid search {g!r} disagrees with projection {u[0]!r}")
    return u
