"""Maximum likelihood by cycling three blocks: Fisher scoring for beta,
the tau fixed point, and a damped one-dimensional scoring step for N."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .data import Dataset
from .likelihood import (
    Params,
    expected_info_beta,
    log_likelihood,
    mean_phi,
    obs_info_N,
    profile_info_beta,
    score_beta,
    score_N,
)
from .model import BoundModel, ModelSpec, ModelState, NumericError
from .tau import solve_tau

log = logging.getLogger(__name__)


DIVERGE = 25.0  # |beta| beyond which a flat log-likelihood signals a boundary supremum


class StepFailure(RuntimeError):
    pass


def default_step(u: int) -> float:
    """a_1 = 0.5, then a_u = 1 - 0.5/u."""
    return 0.5 if u <= 1 else 1.0 - 0.5 / u


@dataclass
class FitOptions:
    tol_loglik: float = 1e-8
    tol_param: float = 1e-7
    max_outer: int = 500
    step_schedule: Callable[[int], float] = default_step
    seed: int = 0
    inits: Params | None = None
    init_scale: float = 0.1
    beta_steps: int = 1
    fixed_N: float | None = None
    max_halvings: int = 20
    scoring: str = "expected"

    def __post_init__(self):
        if self.tol_loglik <= 0 or self.tol_param <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class TraceRow:
    loglik: float
    score_norm: float
    N: float


@dataclass
class FitResult:
    params: Params
    loglik: float
    converged: bool
    reason: str
    trace: list[TraceRow]
    state: ModelState
    bound: BoundModel
    iterations: int
    warnings: list[str] = field(default_factory=list)
    boundary: list[str] = field(default_factory=list)
    start_logliks: list[float] = field(default_factory=list)
    seed: int = 0

    @property
    def spec(self) -> ModelSpec:
        return self.bound.spec

    @property
    def dataset(self) -> Dataset:
        return self.bound.dataset

    @property
    def N(self) -> float:
        return self.params.N

    @property
    def N_rounded(self) -> int:
        return int(round(self.params.N))

    @property
    def phi(self) -> float:
        return mean_phi(self.params.tau, self.state)


def initialize(dataset: Dataset, spec: ModelSpec, seed: int = 0, scale: float = 0.1,
               bound: BoundModel | None = None) -> Params:
    """tau = n_i/n, beta ~ U(-scale, scale), N = n / (1 - phi) floored at n + 1."""
    bound = bound or spec.bind(dataset)
    rng = np.random.default_rng(seed)
    beta = rng.uniform(-scale, scale, spec.dim_beta)
    tau = dataset.counts / dataset.n
    state = bound.state(beta)
    phi = mean_phi(tau, state)
    N = max(dataset.n / (1.0 - phi), dataset.n + 1.0)
    return Params.from_beta(N, beta, spec.dim_zeta, tau)


def solve_direction(F: np.ndarray, s: np.ndarray) -> tuple[np.ndarray, bool]:
    """F^-1 s by Cholesky; falls back to F + eps I with eps = 1e-8 tr(F)/dim."""
    try:
        return cho_solve(cho_factor(F), s), False
    except LinAlgError:
        pass
    eps = 1e-8 * max(np.trace(F), 1e-300) / len(s)
    try:
        return cho_solve(cho_factor(F + eps * np.eye(len(s))), s), True
    except LinAlgError:
        return np.linalg.lstsq(F + eps * np.eye(len(s)), s, rcond=None)[0], True


def fisher_step_beta(params: Params, bound: BoundModel, state: ModelState | None = None,
                     loglik: float | None = None, max_halvings: int = 20, max_step: float = 5.0,
                     scoring: str = "expected"):
    """One Fisher-scoring step with step halving.

    ``scoring="expected"`` uses the information with tau held fixed and
    accepts a step when the log-likelihood at fixed tau does not decrease.
    ``scoring="profile"`` uses the tau-profiled information, re-solves tau at
    each trial point and compares profile log-likelihoods; it falls back to
    the fixed-tau matrix when the profiled one is not positive definite.

    The direction is rescaled so no coordinate moves by more than
    ``max_step``. If halving fails, the matrix is damped (F + mu I, mu
    growing) which bends the direction toward the score. Returns
    ``(params, state, loglik, ridge_used)``; raises :class:`StepFailure`
    when nothing keeps the log-likelihood from decreasing.
    """
    dataset = bound.dataset
    counts = dataset.counts
    state = state if state is not None else bound.state(params.beta)
    if loglik is None:
        loglik = log_likelihood(params, state, dataset)
    s = score_beta(params, state, dataset)
    F = None
    if scoring == "profile":
        F = params.N * profile_info_beta(params, state, counts)
        if np.linalg.eigvalsh(F)[0] <= 1e-10 * max(np.trace(F), 1e-300):
            F = None
    if F is None:
        F = expected_info_beta(params, state)
    direction, ridge = solve_direction(F, s)
    scale = max(np.trace(F) / len(s), 1e-300)
    beta = params.beta
    for mu in (0.0, 1e-6, 1e-4, 1e-2, 1.0, 1e2):
        if mu > 0:
            direction = np.linalg.solve(F + mu * scale * np.eye(len(s)), s)
            ridge = True
        big = np.abs(direction).max(initial=0.0)
        if big > max_step:
            direction = direction * (max_step / big)
        alpha = 1.0
        for _ in range(max_halvings + 1):
            trial = beta + alpha * direction
            try:
                tstate = bound.state(trial)
                tparams = params.with_(beta=trial)
                if scoring == "profile":
                    tparams = tparams.with_(tau=solve_tau(tstate.phi, params.N, counts, tau0=params.tau).tau)
            except ArithmeticError:
                alpha *= 0.5
                continue
            tll = log_likelihood(tparams, tstate, dataset)
            if tll >= loglik:
                return tparams, tstate, tll, ridge
            alpha *= 0.5
    raise StepFailure(f"no non-decreasing step along the scoring direction (|s|={np.abs(s).max():.3e})")


def newton_step_N(params: Params, dataset: Dataset, phi: float, u: int,
                  schedule: Callable[[int], float] = default_step) -> float:
    """N + a_u s_N / oF_N, clamped at n."""
    n = dataset.n
    sN = score_N(params.N, n, phi)
    if sN == 0.0:
        return params.N
    return max(float(n), params.N + schedule(u) * sN / obs_info_N(params.N, n))


def fit(dataset: Dataset, spec: ModelSpec, options: FitOptions | None = None,
        bound: BoundModel | None = None) -> FitResult:
    options = options or FitOptions()
    bound = bound or spec.bind(dataset)
    n = dataset.n
    counts = dataset.counts
    params = options.inits or initialize(dataset, spec, options.seed, options.init_scale, bound)
    if options.fixed_N is not None:
        params = params.with_(N=float(options.fixed_N))
    if params.N < n:
        params = params.with_(N=float(n))
    state = bound.state(params.beta)
    warnings: list[str] = []

    sol = solve_tau(state.phi, params.N, counts, tau0=params.tau)
    params = params.with_(tau=sol.tau)
    ll = log_likelihood(params, state, dataset)
    trace: list[TraceRow] = []
    converged, reason = False, f"max_outer={options.max_outer} exceeded"
    ridge_warned = False
    u = 0
    for u in range(1, options.max_outer + 1):
        prev_params, prev_ll = params, ll

        try:
            for _ in range(options.beta_steps):
                params, state, ll, ridge = fisher_step_beta(params, bound, state, ll, options.max_halvings,
                                                               scoring=options.scoring)
                if ridge and not ridge_warned:
                    warnings.append("expected information not positive definite: ridge fallback used")
                    ridge_warned = True
        except StepFailure as exc:
            s = score_beta(params, state, dataset)
            if np.abs(s).max() <= 1e-5 * (1 + abs(ll)):
                converged, reason = True, "converged (beta step at numerical precision)"
            else:
                reason = f"beta step failure: {exc}"
            trace.append(TraceRow(ll, float(np.abs(s).max()), params.N))
            break

        sol = solve_tau(state.phi, params.N, counts, tau0=params.tau)
        tparams = params.with_(tau=sol.tau)
        tll = log_likelihood(tparams, state, dataset)
        if tll >= ll - 1e-12 * (1 + abs(ll)):
            params, ll = tparams, tll

        if options.fixed_N is None:
            phi = mean_phi(params.tau, state)
            N_new = newton_step_N(params, dataset, phi, u, options.step_schedule)
            for _ in range(options.max_halvings + 1):
                nparams = params.with_(N=N_new)
                nll = log_likelihood(nparams, state, dataset)
                if nll >= ll:
                    params, ll = nparams, nll
                    break
                N_new = 0.5 * (N_new + params.N)

        s = score_beta(params, state, dataset)
        trace.append(TraceRow(ll, float(np.abs(s).max()), params.N))
        change = max(
            float(np.abs(params.beta - prev_params.beta).max(initial=0.0)),
            float(np.abs(params.tau - prev_params.tau).max()),
            abs(params.N - prev_params.N) / max(params.N, 1.0),
        )
        if abs(ll - prev_ll) <= options.tol_loglik and change <= options.tol_param:
            converged, reason = True, "converged"
            break
        if abs(ll - prev_ll) <= options.tol_loglik and np.abs(params.beta).max() > DIVERGE:
            reason = (f"parameters diverging (max |beta| = {np.abs(params.beta).max():.1f}) while the "
                      "log-likelihood is flat: the supremum lies on the boundary")
            break

    # the last N step leaves tau one update behind; re-solve so the exit
    # point satisfies the tau equations at the reported N
    sol = solve_tau(state.phi, params.N, counts, tau0=params.tau)
    tparams = params.with_(tau=sol.tau)
    tll = log_likelihood(tparams, state, dataset)
    if tll >= ll - 1e-12 * (1 + abs(ll)):
        params, ll = tparams, tll

    boundary = _boundary_flags(params, state, dataset, options.fixed_N is None)
    return FitResult(
        params=params, loglik=ll, converged=converged, reason=reason, trace=trace, state=state,
        bound=bound, iterations=u, warnings=warnings, boundary=boundary, seed=options.seed,
    )


def _boundary_flags(params: Params, state: ModelState, dataset: Dataset, free_N: bool) -> list[str]:
    flags = []
    if free_N and params.N <= dataset.n + 1e-9:
        flags.append("N at its lower bound n")
    floor = dataset.counts / params.N
    hit = np.flatnonzero(params.tau <= floor * (1 + 1e-9))
    if params.N > dataset.n and hit.size:
        flags.append(f"tau at the 1/N floor for strata {hit.tolist()}")
    if state.xi.shape[1] > 1 and np.any(state.xi.max(axis=0) < 1e-6):
        flags.append("an empty latent class (weight < 1e-6 in every stratum)")
    return flags


def fit_multistart(dataset: Dataset, spec: ModelSpec, options: FitOptions | None = None,
                   starts: int = 5) -> FitResult:
    """Fits from ``starts`` consecutive seeds and returns the highest
    log-likelihood, preferring a converged fit among those tied with it."""
    options = options or FitOptions()
    bound = spec.bind(dataset)
    results = []
    for k in range(starts):
        opts = FitOptions(**{**options.__dict__, "seed": options.seed + k})
        try:
            results.append(fit(dataset, spec, opts, bound))
        except (StepFailure, NumericError, ArithmeticError) as exc:
            log.warning("start %d failed: %s", k, exc)
    if not results:
        raise StepFailure("every start failed")
    top = max(r.loglik for r in results)
    tied = [r for r in results if r.loglik >= top - 1e-6 * (1 + abs(top))]
    best = max(tied, key=lambda r: (r.converged, r.loglik))
    best.start_logliks = [r.loglik for r in results]
    return best


def profile_fit(dataset: Dataset, spec: ModelSpec, N: float, start: Params,
                bound: BoundModel | None = None, tol: float = 1e-9, max_outer: int = 2000) -> FitResult:
    """Maximise over (beta, tau) with N held fixed.

    Uses the tau-profiled information for the beta steps, which keeps the
    iteration count flat as N grows far above n.
    """
    opts = FitOptions(tol_loglik=tol, tol_param=math.sqrt(tol) * 1e-2, max_outer=max_outer,
                      inits=start.with_(N=float(N)), fixed_N=float(N), scoring="profile")
    return fit(dataset, spec, opts, bound)
