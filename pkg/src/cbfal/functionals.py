"""Control barrier functionals through their weight decomposition.

A functional ``H(x_t)`` is represented by its value map together with the
weights of its time derivative::

    dH/dt = w0(x_t) xdot(t) + sum_j w_j(x_t) xdot(t - tau_j) + int w_d(x_t, th) xdot(t + th) dth

The present-state weight ``w0`` is contracted with the plant right-hand side,
so that ``L_F H = w0 F + ...`` and ``L_G H = w0 G``.  Weights declared zero are
stored as ``None`` and never evaluated.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import GradientMismatch, NotExtendable
from .history import AnalyticView, StateFunction, initial_view, sample_lags
from .quadrature import AUTO, composite_weights, integrate

DEGREE_ONE = "degree_one"
DEGREE_TWO_CANDIDATE = "degree_two_candidate"
INVALID_NO_DEGREE = "invalid_no_degree"
UNKNOWN = "unknown"

# |L_G H| below this counts as zero when probing
_PROBE_ZERO = 1e-12


# ---------------------------------------------------------------------------
# class-K^e_inf functions
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ClassKeFn:
    """Extended class-K-infinity function with its derivative."""

    eval: Callable[[float], float]
    derivative: Callable[[float], float]
    descriptor: str = "custom"
    gamma: Optional[float] = None

    @classmethod
    def linear(cls, gamma: float) -> "ClassKeFn":
        if not gamma > 0:
            raise ValueError("gamma must be positive")
        g = float(gamma)
        return cls(lambda r: g * r, lambda r: g, "linear", g)

    def __call__(self, r: float) -> float:
        return self.eval(r)

    def check(self, lo: float = -10.0, hi: float = 10.0, points: int = 1001) -> list:
        """Sampled invariant violations (empty list when all hold)."""
        problems = []
        if self.eval(0.0) != 0.0:
            problems.append(f"alpha(0) = {self.eval(0.0)!r}")
        grid = np.linspace(lo, hi, points)
        vals = np.array([self.eval(r) for r in grid])
        if np.any(np.diff(vals) <= 0):
            problems.append("not strictly increasing on sample grid")
        if np.any(np.sign(vals) != np.sign(grid)):
            problems.append("sign(alpha(r)) != sign(r)")
        return problems


# ---------------------------------------------------------------------------
# weight containers
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class DelayStructure:
    point_lags: tuple = ()
    distributed_interval: Optional[tuple] = None
    max_lag: float = 0.0

    def __post_init__(self):
        lags = tuple(float(l) for l in self.point_lags)
        if len(set(lags)) != len(lags):
            raise ValueError("point lags must be distinct")
        for l in lags:
            if not 0 < l <= self.max_lag + 1e-12:
                raise ValueError(f"point lag {l} outside (0, {self.max_lag}]")
        if self.distributed_interval is not None:
            s1, s2 = self.distributed_interval
            if not 0 <= s2 < s1 <= self.max_lag + 1e-12:
                raise ValueError(f"distributed interval {self.distributed_interval} invalid")


@dataclass(frozen=True)
class PointWeight:
    lag: float
    weight: Optional[Callable[[StateFunction], np.ndarray]]  # None: identically zero


class DistributedTerm:
    """Contribution ``int_{-sigma1}^{-sigma2} w_d(x_t, th) xdot_t(th) dth``."""

    sigma1: float
    sigma2: float
    rule: str = AUTO

    @property
    def has_by_parts(self) -> bool:
        return False

    def nodes(self, xt: StateFunction):
        lags = sample_lags(self.sigma1, self.sigma2, xt.grid_step)
        h = (self.sigma1 - self.sigma2) / (len(lags) - 1)
        return lags, composite_weights(len(lags) - 1, h, self.rule)

    def weight(self, xt: StateFunction, thetas) -> np.ndarray:
        raise NotImplementedError

    def direct(self, xt: StateFunction) -> float:
        """Quadrature of the weight against the interpolated derivative history."""
        lags, q = self.nodes(xt)
        w = self.weight(xt, -lags)
        return float(integrate(np.einsum("ki,ki->k", w, xt.xdots(lags)), q))

    def by_parts(self, xt: StateFunction) -> float:
        raise NotImplementedError

    def contribution(self, xt: StateFunction) -> float:
        return self.by_parts(xt) if self.has_by_parts else self.direct(xt)


class KernelTerm(DistributedTerm):
    """Distributed term with an explicit kernel ``w_d(x_t, th)``.

    When ``dweight`` (the theta-derivative of the kernel) is supplied the
    derivative history is eliminated by integration by parts::

        w_d(-s2) x(-s2) - w_d(-s1) x(-s1) - int w_d'(th) x(th) dth
    """

    def __init__(self, sigma1: float, sigma2: float, weight: Callable, dweight: Optional[Callable] = None,
                 rule: str = AUTO):
        self.sigma1, self.sigma2 = float(sigma1), float(sigma2)
        self._w, self._dw = weight, dweight
        self.rule = rule

    @property
    def has_by_parts(self) -> bool:
        return self._dw is not None

    def weight(self, xt, thetas):
        thetas = np.asarray(thetas, dtype=float)
        return np.asarray(self._w(xt, thetas), dtype=float).reshape(len(thetas), -1)

    def by_parts(self, xt):
        ends = np.array([-self.sigma2, -self.sigma1])
        w_end = self.weight(xt, ends)
        boundary = w_end[0] @ xt.x(self.sigma2) - w_end[1] @ xt.x(self.sigma1)
        lags, q = self.nodes(xt)
        dw = np.asarray(self._dw(xt, -lags), dtype=float).reshape(len(lags), -1)
        return float(boundary - integrate(np.einsum("ki,ki->k", dw, xt.xs(lags)), q))


def _as_mats(a, k: int, n: int) -> np.ndarray:
    return np.asarray(a, dtype=float).reshape(k, n, n)


class DensityTerm(DistributedTerm):
    """``g(x_t) . int rho(th) kappa(x(t+th)) dth`` in differentiated form.

    ``outer_grad`` returns the outer gradient ``g``; the kernel is
    ``g rho(th) Dkappa(x(t+th))``.  The by-parts form moves the time derivative
    onto ``rho`` and needs only ``drho``.
    """

    def __init__(self, sigma1, sigma2, n, outer_grad, rho, kappa, jac_kappa, drho=None, rule=AUTO):
        self.sigma1, self.sigma2, self.n = float(sigma1), float(sigma2), int(n)
        self.outer_grad, self.rho, self.drho = outer_grad, rho, drho
        self.kappa, self.jac_kappa = kappa, jac_kappa
        self.rule = rule

    @property
    def has_by_parts(self) -> bool:
        return self.drho is not None

    def _rho(self, thetas, fn=None):
        thetas = np.asarray(thetas, dtype=float)
        return _as_mats((fn or self.rho)(thetas), len(thetas), self.n)

    def _kappa(self, X):
        return np.asarray(self.kappa(X), dtype=float).reshape(len(X), self.n)

    def integral(self, xt) -> np.ndarray:
        lags, q = self.nodes(xt)
        vals = np.einsum("kij,kj->ki", self._rho(-lags), self._kappa(xt.xs(lags)))
        return integrate(vals, q)

    def weight(self, xt, thetas):
        thetas = np.asarray(thetas, dtype=float)
        X = xt.xs(-thetas)
        J = _as_mats(self.jac_kappa(X), len(thetas), self.n)
        g = np.asarray(self.outer_grad(xt), dtype=float).reshape(self.n)
        return np.einsum("i,kij,kjl->kl", g, self._rho(thetas), J)

    def by_parts(self, xt):
        g = np.asarray(self.outer_grad(xt), dtype=float).reshape(self.n)
        ends = np.array([-self.sigma2, -self.sigma1])
        R = self._rho(ends)
        K = self._kappa(np.array([xt.x(self.sigma2), xt.x(self.sigma1)]))
        boundary = R[0] @ K[0] - R[1] @ K[1]
        lags, q = self.nodes(xt)
        inner = integrate(np.einsum("kij,kj->ki", self._rho(-lags, self.drho), self._kappa(xt.xs(lags))), q)
        return float(g @ (boundary - inner))


class DoubleDensityTerm(DistributedTerm):
    """``g . int int omega(th, ch) (mu(x(t+th)) o nu(x(t+ch))) dth dch`` over ``[-tau, 0]^2``.

    ``omega(th, ch)`` is evaluated on broadcast arrays and returns ``n x n``
    blocks; ``o`` is the element-wise product.
    """

    def __init__(self, tau, n, outer_grad, omega, mu, jac_mu, nu, jac_nu,
                 omega_dtheta=None, omega_dchi=None, rule=AUTO):
        self.sigma1, self.sigma2, self.n = float(tau), 0.0, int(n)
        self.outer_grad, self.omega = outer_grad, omega
        self.omega_dtheta, self.omega_dchi = omega_dtheta, omega_dchi
        self.mu, self.jac_mu, self.nu, self.jac_nu = mu, jac_mu, nu, jac_nu
        self.rule = rule

    @property
    def has_by_parts(self) -> bool:
        return self.omega_dtheta is not None and self.omega_dchi is not None

    def _omega(self, th, ch, fn=None):
        th = np.asarray(th, dtype=float)
        ch = np.asarray(ch, dtype=float)
        out = np.asarray((fn or self.omega)(th[:, None], ch[None, :]), dtype=float)
        return out.reshape(len(th), len(ch), self.n, self.n)

    def _vec(self, fn, X):
        return np.asarray(fn(X), dtype=float).reshape(len(X), self.n)

    def _grid(self, xt):
        lags, q = self.nodes(xt)
        X = xt.xs(lags)
        return lags, q, X, self._vec(self.mu, X), self._vec(self.nu, X)

    def integral(self, xt) -> np.ndarray:
        lags, q, X, M, N = self._grid(xt)
        W = self._omega(-lags, -lags)
        return np.einsum("i,j,ijab,ib,jb->a", q, q, W, M, N)

    def weight(self, xt, thetas):
        lags, q, X, M, N = self._grid(xt)
        thetas = np.asarray(thetas, dtype=float)
        Xk = xt.xs(-thetas)
        Jm = _as_mats(self.jac_mu(Xk), len(thetas), self.n)
        Jn = _as_mats(self.jac_nu(Xk), len(thetas), self.n)
        # A(th) = int omega(th, ch) diag(nu(x(ch))) dch ;  B(th) = int omega(ch, th) diag(mu(x(ch))) dch
        A = np.einsum("j,ijab,jb->iab", q, self._omega(thetas, -lags), N)
        B = np.einsum("j,jiab,jb->iab", q, self._omega(-lags, thetas), M)
        g = np.asarray(self.outer_grad(xt), dtype=float).reshape(self.n)
        return np.einsum("a,kab,kbc->kc", g, A, Jm) + np.einsum("a,kab,kbc->kc", g, B, Jn)

    def by_parts(self, xt):
        lags, q, X, M, N = self._grid(xt)
        th = -lags
        tau = self.sigma1
        m0, mt = self._vec(self.mu, xt.x(0.0)[None, :])[0], self._vec(self.mu, xt.x(tau)[None, :])[0]
        n0, nt = self._vec(self.nu, xt.x(0.0)[None, :])[0], self._vec(self.nu, xt.x(tau)[None, :])[0]
        ends = np.array([0.0, -tau])
        Wt = self._omega(ends, th)          # omega(0, ch), omega(-tau, ch)
        Wc = self._omega(th, ends)          # omega(th, 0), omega(th, -tau)
        first = np.einsum("j,jab,jb->a", q, Wt[0], m0[None, :] * N) - np.einsum("j,jab,jb->a", q, Wt[1], mt[None, :] * N)
        second = np.einsum("i,iab,ib->a", q, Wc[:, 0], M * n0[None, :]) - np.einsum("i,iab,ib->a", q, Wc[:, 1], M * nt[None, :])
        D = self._omega(th, th, self.omega_dtheta) + self._omega(th, th, self.omega_dchi)
        interior = np.einsum("i,j,ijab,ib,jb->a", q, q, D, M, N)
        g = np.asarray(self.outer_grad(xt), dtype=float).reshape(self.n)
        return float(g @ (first + second - interior))


# ---------------------------------------------------------------------------
# the functional spec
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CbfalSpec:
    """A safety functional with its weight decomposition.

    ``lie_f`` optionally holds the decomposition of ``L_F H`` viewed as a
    functional in its own right; it is plant specific and only needed for the
    extended (relative degree two) construction.
    """

    name: str
    value: Callable[[StateFunction], float]
    w0: Optional[Callable[[StateFunction], np.ndarray]]
    point_weights: tuple = ()
    distributed: tuple = ()
    max_lag: float = 0.0
    lie_f: Optional["CbfalSpec"] = None
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def delays(self) -> DelayStructure:
        interval = None
        if self.distributed:
            interval = (max(d.sigma1 for d in self.distributed), min(d.sigma2 for d in self.distributed))
        return DelayStructure(tuple(p.lag for p in self.point_weights), interval, self.max_lag)

    @property
    def lags(self) -> tuple:
        return tuple(p.lag for p in self.point_weights)

    def nonzero_point_lags(self) -> list:
        return [p.lag for p in self.point_weights if p.weight is not None]

    def with_w0_scaled(self, factor: float) -> "CbfalSpec":
        """Copy whose present-state weight is multiplied by ``factor`` (fault injection)."""
        if self.w0 is None:
            return self
        w0 = self.w0
        return dataclasses.replace(self, name=f"{self.name}*w0x{factor:g}",
                                   w0=lambda xt: factor * np.asarray(w0(xt)))


def eval_value(spec: CbfalSpec, xt: StateFunction) -> float:
    """``H(x_t)``."""
    return float(spec.value(xt))


def _delay_terms(spec: CbfalSpec, xt: StateFunction, by_parts: bool) -> float:
    total = 0.0
    for pw in spec.point_weights:
        if pw.weight is not None:
            total += float(np.asarray(pw.weight(xt)) @ xt.xdot(pw.lag))
    for term in spec.distributed:
        total += term.by_parts(xt) if (by_parts and term.has_by_parts) else term.direct(xt)
    return total


def eval_split_derivative(spec: CbfalSpec, plant, xt: StateFunction, by_parts: bool = True, FG=None):
    """Return ``(L_F H, L_G H)`` along the control-affine plant.

    ``L_G H`` is a length-``m`` array.  Distributed terms use the by-parts
    form whenever it is available and ``by_parts`` is true.  ``FG`` may carry
    already evaluated ``(F(x_t), G(x_t))``.
    """
    lf = _delay_terms(spec, xt, by_parts)
    if spec.w0 is None:
        return lf, np.zeros(plant.m)
    F, G = FG if FG is not None else (plant.F(xt), plant.G(xt))
    w0 = np.asarray(spec.w0(xt), dtype=float)
    lf += float(w0 @ F)
    lg = w0 @ np.asarray(G, dtype=float).reshape(plant.n, plant.m)
    return lf, lg


def derivative_along(spec: CbfalSpec, xt: StateFunction, by_parts: bool = True) -> float:
    """``dH/dt`` along an arbitrary trajectory whose ``xdot(t)`` is known."""
    total = _delay_terms(spec, xt, by_parts)
    if spec.w0 is not None:
        total += float(np.asarray(spec.w0(xt)) @ xt.xdot(0.0))
    return total


def fd_consistency(spec: CbfalSpec, view_at: Callable[[float], StateFunction], times: Sequence[float],
                   h: float = 1e-5, by_parts: bool = True):
    """Compare assembled ``dH/dt`` with central differences of ``H``.

    Returns a list of ``(t, assembled, finite_difference)`` tuples.
    """
    rows = []
    for t in times:
        fd = (eval_value(spec, view_at(t + h)) - eval_value(spec, view_at(t - h))) / (2 * h)
        rows.append((t, derivative_along(spec, view_at(t), by_parts), fd))
    return rows


def ibp_residual(term: DistributedTerm, xt: StateFunction) -> float:
    """Difference between the by-parts and the direct form of a distributed term."""
    return term.by_parts(xt) - term.direct(xt)


# ---------------------------------------------------------------------------
# general functional family
# ---------------------------------------------------------------------------
@dataclass
class GeneralFunctionalSpec:
    """``H = h(x(t), x(t-tau_1), ..., x(t-tau_l), I, J)`` with optional integrals.

    ``I = int_{-s1}^{-s2} rho(th) kappa(x(t+th)) dth`` (when ``interval`` is set)
    and ``J = int int_{[-tau,0]^2} omega(th, ch) (mu(x(t+th)) o nu(x(t+ch)))``
    (when ``double_tau`` is set).  ``grads[k]`` is the gradient of ``h`` in its
    ``k``-th argument, or ``None`` if ``h`` does not depend on it.
    Vector-valued maps act row-wise on ``(K, n)`` arrays.
    """

    h: Callable[..., float]
    grads: Sequence[Optional[Callable]]
    n: int = 1
    point_lags: Sequence[float] = ()
    max_lag: Optional[float] = None
    interval: Optional[tuple] = None
    rho: Optional[Callable] = None
    drho: Optional[Callable] = None
    kappa: Optional[Callable] = None
    jac_kappa: Optional[Callable] = None
    double_tau: Optional[float] = None
    omega: Optional[Callable] = None
    omega_dtheta: Optional[Callable] = None
    omega_dchi: Optional[Callable] = None
    mu: Optional[Callable] = None
    jac_mu: Optional[Callable] = None
    nu: Optional[Callable] = None
    jac_nu: Optional[Callable] = None
    name: str = "general"
    rule: str = AUTO

    @property
    def n_args(self) -> int:
        return 1 + len(self.point_lags) + (self.interval is not None) + (self.double_tau is not None)


def _fd_grad(f, args, k, n, eps=1e-6):
    g = np.zeros(n)
    for i in range(n):
        up = [a.copy() for a in args]
        dn = [a.copy() for a in args]
        up[k][i] += eps
        dn[k][i] -= eps
        g[i] = (f(*up) - f(*dn)) / (2 * eps)
    return g


def _mismatch(a, b, rtol=1e-5, atol=1e-7) -> bool:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return bool(np.any(np.abs(a - b) > rtol * np.abs(b) + atol))


def check_gradients(g: GeneralFunctionalSpec, trials: int = 5, seed: int = 0) -> None:
    """Raise :class:`GradientMismatch` if supplied derivatives disagree with finite differences."""
    rng = np.random.default_rng(seed)
    n, eps = g.n, 1e-6
    if len(g.grads) != g.n_args:
        raise GradientMismatch(f"{g.name}: expected {g.n_args} gradients, got {len(g.grads)}")
    for _ in range(trials):
        args = [rng.uniform(-1, 1, n) for _ in range(g.n_args)]
        for k, grad in enumerate(g.grads):
            fd = _fd_grad(g.h, args, k, n)
            an = np.zeros(n) if grad is None else np.asarray(grad(*args), dtype=float).reshape(n)
            if _mismatch(an, fd):
                raise GradientMismatch(f"{g.name}: gradient of h in argument {k} is {an}, finite differences give {fd}")
        X = rng.uniform(-1, 1, (1, n))
        pairs = [("kappa", g.kappa, g.jac_kappa), ("mu", g.mu, g.jac_mu), ("nu", g.nu, g.jac_nu)]
        for label, f, jac in pairs:
            if f is None:
                continue
            J = np.asarray(jac(X), dtype=float).reshape(n, n)
            for i in range(n):
                e = np.zeros((1, n))
                e[0, i] = eps
                col = (np.asarray(f(X + e), dtype=float) - np.asarray(f(X - e), dtype=float)).reshape(n) / (2 * eps)
                if _mismatch(J[:, i], col):
                    raise GradientMismatch(f"{g.name}: Jacobian of {label} column {i} mismatch")
        if g.interval is not None and g.drho is not None:
            s1, s2 = g.interval
            th = np.array([rng.uniform(-s1, -s2)])
            fd = (np.asarray(g.rho(th + eps), dtype=float) - np.asarray(g.rho(th - eps), dtype=float)) / (2 * eps)
            if _mismatch(np.asarray(g.drho(th), dtype=float), fd):
                raise GradientMismatch(f"{g.name}: drho disagrees with finite differences of rho")
        if g.double_tau is not None:
            th = np.array([[rng.uniform(-g.double_tau, 0)]])
            ch = np.array([[rng.uniform(-g.double_tau, 0)]])
            for label, d, dth, dch in (("omega_dtheta", g.omega_dtheta, eps, 0.0),
                                       ("omega_dchi", g.omega_dchi, 0.0, eps)):
                if d is None:
                    continue
                fd = (np.asarray(g.omega(th + dth, ch + dch), dtype=float)
                      - np.asarray(g.omega(th - dth, ch - dch), dtype=float)) / (2 * eps)
                if _mismatch(np.asarray(d(th, ch), dtype=float), fd):
                    raise GradientMismatch(f"{g.name}: {label} disagrees with finite differences of omega")


class _ArgCache:
    """Remember the argument tuple of ``h`` for the most recent ``x_t`` view."""

    def __init__(self, compute):
        self.compute = compute
        self.key = None
        self.args = None

    def __call__(self, xt):
        if self.key is not xt:
            self.args = self.compute(xt)
            self.key = xt
        return self.args


def build_from_general(g: GeneralFunctionalSpec, lie_f: Optional[CbfalSpec] = None,
                       check: bool = True) -> CbfalSpec:
    """Assemble ``w0``, ``w_j`` and the distributed terms of a general functional."""
    if check:
        check_gradients(g)
    n = g.n
    lags = tuple(float(l) for l in g.point_lags)
    spans = list(lags)
    if g.interval is not None:
        spans.append(g.interval[0])
    if g.double_tau is not None:
        spans.append(g.double_tau)
    max_lag = float(g.max_lag if g.max_lag is not None else (max(spans) if spans else 0.0))

    holder = {}

    def compute_args(xt):
        args = [xt.x(0.0)] + [xt.x(l) for l in lags]
        if "single" in holder:
            args.append(holder["single"].integral(xt))
        if "double" in holder:
            args.append(holder["double"].integral(xt))
        return args

    cache = _ArgCache(compute_args)

    def grad_at(k):
        grad = g.grads[k]
        return lambda xt: np.asarray(grad(*cache(xt)), dtype=float).reshape(n)

    k = 1 + len(lags)
    distributed = []
    if g.interval is not None:
        if g.grads[k] is None:
            raise ValueError("integral argument declared but h does not depend on it")
        s1, s2 = g.interval
        holder["single"] = DensityTerm(s1, s2, n, grad_at(k), g.rho, g.kappa, g.jac_kappa, g.drho, g.rule)
        distributed.append(holder["single"])
        k += 1
    if g.double_tau is not None:
        if g.grads[k] is None:
            raise ValueError("double integral argument declared but h does not depend on it")
        holder["double"] = DoubleDensityTerm(g.double_tau, n, grad_at(k), g.omega, g.mu, g.jac_mu, g.nu,
                                             g.jac_nu, g.omega_dtheta, g.omega_dchi, g.rule)
        distributed.append(holder["double"])

    w0 = grad_at(0) if g.grads[0] is not None else None
    points = tuple(PointWeight(l, grad_at(1 + j) if g.grads[1 + j] is not None else None)
                   for j, l in enumerate(lags))
    return CbfalSpec(name=g.name, value=lambda xt: float(g.h(*cache(xt))), w0=w0, point_weights=points,
                     distributed=tuple(distributed), max_lag=max_lag, lie_f=lie_f)


# ---------------------------------------------------------------------------
# relative degree and extension
# ---------------------------------------------------------------------------
def probe_views(n: int, max_lag: float, count: int = 64, seed: int = 0, grid_step: float = 1e-2):
    """Pseudo-random smooth histories ``a + b sin(w th + c)`` inside the unit ball."""
    rng = np.random.default_rng(seed)
    views = []
    span = max(max_lag, 1e-3)
    for _ in range(count):
        a = rng.uniform(-1, 1, n)
        b = rng.uniform(-1, 1, n)
        scale = rng.uniform(0.1, 1.0) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
        a, b = a * scale, b * scale
        w = rng.uniform(0.5, 4.0) * 2 * np.pi / span
        c = rng.uniform(0, 2 * np.pi)

        def xf(s, a=a, b=b, w=w, c=c):
            s = np.asarray(s, dtype=float)
            return a + b * np.sin(w * s[..., None] + c)

        def df(s, b=b, w=w, c=c):
            s = np.asarray(s, dtype=float)
            return b * w * np.cos(w * s[..., None] + c)

        views.append(AnalyticView(xf, df, 0.0, grid_step))
    return views


def _lg_on_probes(spec: CbfalSpec, plant, views) -> np.ndarray:
    out = []
    for xt in views:
        w0 = np.asarray(spec.w0(xt), dtype=float)
        G = np.asarray(plant.G(xt), dtype=float).reshape(plant.n, plant.m)
        out.append(np.linalg.norm(w0 @ G))
    return np.array(out)


def classify_relative_degree(spec: CbfalSpec, plant, initial=None, probes=None, seed: int = 0) -> str:
    """Classify the relative degree of ``spec`` with respect to ``plant``.

    Non-zero checks are sampled on random probe histories (plus ``initial``),
    so ``degree_one`` is a sampled claim that the filter re-checks at run time.
    """
    if probes is None:
        probes = probe_views(plant.n, max(spec.max_lag, getattr(plant, "max_lag", 0.0)), seed=seed)
        if initial is not None:
            probes = list(probes) + [initial_view(initial)]
    point_nonzero = bool(spec.nonzero_point_lags())
    if spec.w0 is None:
        lg_zero, lg_all_nonzero = True, False
    else:
        norms = _lg_on_probes(spec, plant, probes)
        lg_zero = bool(np.all(norms <= _PROBE_ZERO))
        lg_all_nonzero = bool(np.all(norms > _PROBE_ZERO))
    if lg_all_nonzero:
        return DEGREE_ONE
    if lg_zero:
        if point_nonzero:
            return INVALID_NO_DEGREE
        if all(d.has_by_parts for d in spec.distributed) and not (plant.neutral and spec.w0 is not None):
            return DEGREE_TWO_CANDIDATE
    return UNKNOWN


class ExtendedSpec:
    """``He = L_F H + alpha(H)`` and its derivative split.

    The drift part of ``dHe/dt`` is ``L_F^2 H + alpha'(H) L_F H`` and the input
    part is ``L_G L_F H``, both assembled from the decomposition of ``L_F H``.
    """

    def __init__(self, base: CbfalSpec, lie_f: CbfalSpec, alpha: ClassKeFn):
        self.base = base
        self.lie_f = lie_f
        self.alpha = alpha
        self.name = f"{base.name}:extended"
        self.max_lag = max(base.max_lag, lie_f.max_lag)

    def value(self, xt) -> float:
        return self.parts(xt)[0]

    def parts(self, xt):
        """Return ``(He, H, L_F H)``."""
        H = eval_value(self.base, xt)
        lf = eval_value(self.lie_f, xt)
        return lf + self.alpha(H), H, lf

    def split(self, plant, xt, FG=None):
        """Return ``(drift, L_G L_F H, He, H)``."""
        He, H, lf = self.parts(xt)
        l2f, lglf = eval_split_derivative(self.lie_f, plant, xt, FG=FG)
        return l2f + self.alpha.derivative(H) * lf, lglf, He, H


def extend(spec: CbfalSpec, alpha: ClassKeFn, plant=None, lie_f: Optional[CbfalSpec] = None,
           initial=None) -> ExtendedSpec:
    """Build the extended functional, guarding against advanced-type closed loops."""
    bad = spec.nonzero_point_lags()
    if bad:
        err = NotExtendable(f"{spec.name}: nonzero point-delay weight at lag(s) {bad}; "
                            "L_F H depends on delayed derivatives and the extended derivative "
                            "would contain second derivatives of the past state")
        err.offending_lags = bad
        raise err
    for term in spec.distributed:
        if not term.has_by_parts:
            raise NotExtendable(f"{spec.name}: distributed term over [{-term.sigma1}, {-term.sigma2}] "
                                "has no by-parts form, so L_F H is not free of derivative history")
    if spec.w0 is not None:
        if plant is None:
            raise NotExtendable(f"{spec.name}: present-state weight is nonzero and no plant given to confirm L_G H = 0")
        cls = classify_relative_degree(spec, plant, initial=initial)
        if cls != DEGREE_TWO_CANDIDATE:
            raise NotExtendable(f"{spec.name}: classified {cls}, L_G H does not vanish")
    lie_f = lie_f or spec.lie_f
    if lie_f is None:
        raise NotExtendable(f"{spec.name}: no weight decomposition for L_F H supplied")
    return ExtendedSpec(spec, lie_f, alpha)
