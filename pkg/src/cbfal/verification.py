"""Oracle and property suites shared by the ``verify`` command and the tests.

Each suite returns a :class:`SuiteResult`; the first failing case is kept in
a JSON-serialisable form so it can be replayed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .errors import DegenerateConstraint
from .functionals import (CbfalSpec, ClassKeFn, DensityTerm, GeneralFunctionalSpec, KernelTerm,
                          build_from_general, fd_consistency, ibp_residual)
from .history import AnalyticView, window_from_arrays
from .safety_filter import brute_force_oracle, min_norm_correction
from . import scenarios as sc_mod

KKT_TOL = 1e-9
FD_RTOL = 1e-3
FD_STEP = 1e-5


@dataclass
class SuiteResult:
    name: str
    cases: int = 0
    failures: int = 0
    first_failure: Optional[dict] = None
    worst: float = 0.0

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def fail(self, case: dict):
        self.failures += 1
        if self.first_failure is None:
            self.first_failure = case


# ---------------------------------------------------------------------------
# smooth test trajectories
# ---------------------------------------------------------------------------
def smooth_view(n: int, seed: int = 0, grid_step: float = 1e-3, amplitude: float = 0.3) -> AnalyticView:
    """``x(s) = a + b sin(w s + c)`` component-wise, with its exact derivative."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(-0.5, 0.5, n)
    b = rng.uniform(0.5, 1.0, n) * amplitude
    w = rng.uniform(0.7, 2.0, n)
    c = rng.uniform(0, 2 * np.pi, n)

    def xf(s):
        s = np.asarray(s, dtype=float)
        return a + b * np.sin(w * s[..., None] + c) if s.ndim else a + b * np.sin(w * s + c)

    def df(s):
        s = np.asarray(s, dtype=float)
        return b * w * np.cos(w * s[..., None] + c) if s.ndim else b * w * np.cos(w * s + c)

    return AnalyticView(xf, df, 0.0, grid_step)


def double_integral_general(tau: float = 1.0, n: int = 2, with_double: bool = True) -> GeneralFunctionalSpec:
    """Functional with a single and a double integral of the state history.

    ``rho = I / tau``, ``kappa(s) = s``, ``omega(th, ch) = I exp(th + ch)``,
    ``mu = nu = identity`` and ``h(v, I, J) = 1 - |v|^2 - |I|^2 / 2 + sum(J) / 4``.
    """
    eye = np.eye(n)
    single = dict(interval=(tau, 0.0), rho=lambda th: np.broadcast_to(eye / tau, np.shape(th) + (n, n)),
                  drho=lambda th: np.zeros(np.shape(th) + (n, n)), kappa=lambda X: X,
                  jac_kappa=lambda X: np.broadcast_to(eye, X.shape[:1] + (n, n)))
    if not with_double:
        return GeneralFunctionalSpec(h=lambda v, I: 1.0 - v @ v - 0.5 * I @ I,
                                     grads=[lambda v, I: -2 * v, lambda v, I: -I], n=n, name="single_integral",
                                     **single)

    def omega(th, ch):
        return np.exp(th + ch)[..., None, None] * eye

    ident = lambda X: X
    jac_ident = lambda X: np.broadcast_to(eye, X.shape[:1] + (n, n))
    return GeneralFunctionalSpec(
        h=lambda v, I, J: 1.0 - v @ v - 0.5 * I @ I + 0.25 * J.sum(),
        grads=[lambda v, I, J: -2 * v, lambda v, I, J: -I, lambda v, I, J: np.full(n, 0.25)],
        n=n, double_tau=tau, omega=omega, omega_dtheta=omega, omega_dchi=omega,
        mu=ident, jac_mu=jac_ident, nu=ident, jac_nu=jac_ident, name="double_integral", **single)


def registered_specs() -> Dict[str, CbfalSpec]:
    """Every functional used by a registered scenario, plus the double-integral example."""
    out = {}
    for name in ("case1", "case2", "case3", "predator_prey"):
        spec = sc_mod.build(name).cbfal
        out[name] = spec
        if spec.lie_f is not None:
            out[f"{name}.lie_f"] = spec.lie_f
    out["case4"] = sc_mod.build("case4").cbfal
    out["double_integral"] = build_from_general(double_integral_general())
    return out


def _state_dim(name: str) -> int:
    return 2 if name.startswith(("predator_prey", "double_integral")) else 1


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------
def kkt_suite(cases: int = 1000, seed: int = 0) -> SuiteResult:
    """Closed-form filter against the half-space projection oracle."""
    res = SuiteResult("kkt_oracle")
    rng = np.random.default_rng(seed)
    for k in range(cases):
        m = int(rng.integers(1, 4))
        scale = 10.0 ** rng.uniform(-2, 2)
        phi = float(rng.normal() * scale)
        phi0 = rng.normal(size=m) * 10.0 ** rng.uniform(-2, 2)
        u_des = rng.normal(size=m)
        case = {"index": k, "phi": phi, "phi0": phi0.tolist(), "u_des": u_des.tolist()}
        res.cases += 1
        try:
            u, _, _ = min_norm_correction(phi, phi0, u_des)
        except DegenerateConstraint:
            res.fail(dict(case, reason="unexpected DegenerateConstraint"))
            continue
        ref = brute_force_oracle(phi, phi0, u_des)
        err = float(np.max(np.abs(u - ref)))
        res.worst = max(res.worst, err)
        if err > KKT_TOL:
            res.fail(dict(case, reason=f"max abs error {err:.3g} > {KKT_TOL:g}"))
    return res


def fd_suite(specs: Optional[Dict[str, CbfalSpec]] = None, seeds=(0, 1, 2), times=(1.3, 2.1, 3.7)) -> SuiteResult:
    """Assembled derivative against central differences along smooth histories."""
    res = SuiteResult("finite_difference")
    specs = registered_specs() if specs is None else specs
    for name, spec in specs.items():
        for seed in seeds:
            view = smooth_view(_state_dim(name), seed)
            for t, assembled, fd in fd_consistency(spec, view.at, times, h=FD_STEP):
                res.cases += 1
                err = abs(assembled - fd) / max(abs(fd), 1e-3)
                res.worst = max(res.worst, err)
                if not err <= FD_RTOL:
                    res.fail({"spec": name, "seed": seed, "t": t, "assembled": assembled, "finite_difference": fd,
                              "reason": f"finite-difference mismatch: relative error {err:.3g} > {FD_RTOL:g}"})
    return res


def ibp_suite(seed: int = 0, dt: float = 1e-3, tol: float = 1e-6) -> SuiteResult:
    """By-parts against direct quadrature on a stored (sampled) trajectory."""
    res = SuiteResult("integration_by_parts")
    rng = np.random.default_rng(seed)
    for k in range(4):
        n = 1 + k % 2
        view = smooth_view(n, seed + k, grid_step=dt)
        times = np.arange(0.0, 4.0 + dt / 2, dt)
        window = window_from_arrays(times, view.xs(-times), view.xdots(-times), max_lag=1.0)
        c = rng.uniform(0.5, 2.0, n)
        kernel = KernelTerm(1.0, 0.0, weight=lambda xt, th, c=c: np.exp(np.outer(th, np.ones(n))) * c,
                            dweight=lambda xt, th, c=c: np.exp(np.outer(th, np.ones(n))) * c)
        eye = np.eye(n)
        density = DensityTerm(0.8, 0.1, n, outer_grad=lambda xt: np.ones(n),
                              rho=lambda th: np.cos(th)[:, None, None] * eye,
                              drho=lambda th: -np.sin(th)[:, None, None] * eye,
                              kappa=lambda X: X ** 2, jac_kappa=lambda X: 2 * X[:, :, None] * eye)
        for term, label in ((kernel, "kernel"), (density, "density")):
            for t in (1.5, 2.75, 4.0):
                res.cases += 1
                r = abs(ibp_residual(term, window.view(t)))
                res.worst = max(res.worst, r)
                if r > tol:
                    res.fail({"term": label, "n": n, "t": t, "residual": r, "reason": f"residual {r:.3g} > {tol:g}"})
    return res


def class_k_suite(cases: int = 100, seed: int = 0) -> SuiteResult:
    res = SuiteResult("class_k")
    rng = np.random.default_rng(seed)
    fns = [ClassKeFn.linear(g) for g in rng.uniform(0.01, 10.0, max(cases, 0))]
    fns.append(ClassKeFn(lambda r: r + r ** 3, lambda r: 1 + 3 * r * r, "custom"))
    fns.append(ClassKeFn(np.sinh, np.cosh, "custom"))
    for fn in fns:
        res.cases += 1
        bad = fn.check()
        if bad:
            res.fail({"descriptor": fn.descriptor, "gamma": fn.gamma, "violations": [str(b) for b in bad[:3]]})
    return res


def corrupt(specs: Dict[str, CbfalSpec], name: str, factor: float = 2.0) -> Dict[str, CbfalSpec]:
    if name not in specs:
        raise KeyError(f"unknown spec {name!r}; known: {sorted(specs)}")
    if specs[name].w0 is None:
        raise ValueError(f"spec {name!r} has no present-state weight to corrupt")
    out = dict(specs)
    out[name] = specs[name].with_w0_scaled(factor)
    return out


def run_all(cases: int = 1000, seed: int = 0, corrupt_spec: Optional[str] = None) -> List[SuiteResult]:
    specs = registered_specs()
    if corrupt_spec:
        specs = corrupt(specs, corrupt_spec)
    return [kkt_suite(cases, seed), fd_suite(specs), ibp_suite(seed), class_k_suite(min(cases, 100), seed)]
