"""Numerical self-tests: analytic derivatives against central differences,
the tau equations, and the enumeration oracle.

The score check is taken at a point displaced from the estimate, because at
the maximiser the score is zero to optimiser precision and a relative
comparison would only measure rounding noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .likelihood import Params, log_likelihood, score_beta
from .model import BoundModel, ModelSpec
from .sim import enumerate_loglik, finite_diff
from .tau import hyperbola_residual, implicit_residual, solve_tau, solve_tau_scalar, tau_jacobian

FD_TOL = 1e-6
RESIDUAL_TOL = 1e-10
ORACLE_TOL = 1e-10


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tol: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - f| scaled by the larger of the two max-norms."""
    analytic, numeric = np.asarray(analytic, float), np.asarray(numeric, float)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-300)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def derivative_checks(dataset: Dataset, spec: ModelSpec, params: Params, bound: BoundModel | None = None,
                      offset: float = 0.1, seed: int = 0, step: float = 1e-5) -> list[CheckResult]:
    bound = bound or spec.bind(dataset)
    rng = np.random.default_rng(seed)
    beta = params.beta + rng.uniform(-offset, offset, params.beta.size)
    state = bound.state(beta)
    N = params.N
    counts = dataset.counts
    tau = solve_tau(state.phi, N, counts, tau0=params.tau).tau
    at = params.with_(beta=beta, tau=tau)
    out = []

    num = finite_diff(lambda b: log_likelihood(at.with_(beta=b), bound.state(b), dataset), beta, step)
    out.append(CheckResult("score_beta vs finite differences", relative_error(score_beta(at, state, dataset), num), FD_TOL))

    num = finite_diff(lambda b: bound.state(b).ptilde[:, 1:], beta, step)
    out.append(CheckResult("D_i vs finite differences", relative_error(state.D, num), FD_TOL))

    num = finite_diff(lambda b: bound.state(b).phi, beta, step)
    out.append(CheckResult("Phi vs finite differences", relative_error(state.Phi, num), FD_TOL))

    if dataset.s > 1 and N > dataset.n:
        jac = tau_jacobian(tau, state.phi, N, counts).Dphi
        h = step * max(float(state.phi.max()), 1e-3)
        num = finite_diff(lambda f: solve_tau_scalar(f, N, counts), state.phi, h)
        out.append(CheckResult("D_phi vs finite differences", relative_error(jac, num), FD_TOL))
    else:
        out.append(CheckResult("D_phi vs finite differences", 0.0, FD_TOL, "single stratum or N = n: D_phi = 0"))
    return out


def tau_checks(dataset: Dataset, params: Params, state) -> list[CheckResult]:
    phi, counts = state.phi, dataset.counts
    return [
        CheckResult("tau hyperbola residual", hyperbola_residual(params.tau, phi, params.N, counts), RESIDUAL_TOL),
        CheckResult("tau implicit-equation residual", implicit_residual(params.tau, phi, params.N, counts), RESIDUAL_TOL),
    ]


def oracle_check(dataset: Dataset, spec: ModelSpec, params: Params, state) -> CheckResult:
    name = "log-likelihood vs enumeration oracle"
    try:
        ref = enumerate_loglik(dataset, spec, params)
    except ValueError as exc:
        return CheckResult(name, 0.0, ORACLE_TOL, f"skipped: {exc}")
    ll = log_likelihood(params, state, dataset)
    return CheckResult(name, abs(ll - ref) / max(1.0, abs(ref)), ORACLE_TOL)
