"""Post-fit inference: profile information, Wald errors, the profile
likelihood interval for N, identifiability probes, and a KL comparison of
two fits."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import chi2

from .estimate import FitResult, profile_fit
from .likelihood import Params, joint_info, profile_info_beta, score_beta
from .model import ModelState
from .tau import solve_tau

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class InfoMatrices:
    """Per-unit information blocks at the estimate.

    ``F_NN`` and ``F_bb`` are the N and beta blocks; ``F_Nb`` is the
    tau-profiled cross term and ``joint`` the full tau-profiled matrix in
    (N/N_0, beta) from which the Wald standard errors come. With
    ``cross_term=False`` the cross term is zeroed and the errors come from
    the block-diagonal matrix instead.
    """

    F_NN: float
    F_bb: np.ndarray
    F_Nb: np.ndarray
    se_N: float
    se_beta: np.ndarray | None
    positive_definite: bool
    warnings: tuple[str, ...] = ()
    joint: np.ndarray | None = None
    se_N_block: float = math.nan

    @property
    def wald_se(self) -> np.ndarray | None:
        if self.se_beta is None:
            return None
        return np.concatenate([[self.se_N], self.se_beta])


@dataclass
class ProfileCI:
    level: float
    lower: float
    upper: float
    N_hat: float
    quantile: float
    grid: list[tuple[float, float]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def upper_bounded(self) -> bool:
        return math.isfinite(self.upper)


def _is_pd(F: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(F)
    except np.linalg.LinAlgError:
        return False
    return True


def profile_expected_info(fit: FitResult, cross_term: bool = True) -> InfoMatrices:
    params, state = fit.params, fit.state
    phi = fit.phi
    N = params.N
    F_NN = (1.0 - phi) / phi
    F_bb = profile_info_beta(params, state, fit.dataset.counts)
    se_block = math.sqrt(N * phi / (1.0 - phi))
    joint = joint_info(params, state)
    warnings = []
    pd = _is_pd(F_bb)
    se_beta = None
    if not pd:
        se_N = se_block
        warnings.append("profile information for beta is not positive definite: model may not be identifiable")
    elif cross_term and _is_pd(joint):
        cov = np.linalg.inv(joint) / N
        se_N = N * math.sqrt(max(cov[0, 0], 0.0))
        se_beta = np.sqrt(np.clip(np.diag(cov)[1:], 0, None))
    else:
        if cross_term:
            warnings.append("joint (N, beta) information not positive definite: block-diagonal errors reported")
        se_N = se_block
        se_beta = np.sqrt(np.clip(np.diag(np.linalg.inv(F_bb)) / N, 0, None))
    F_Nb = joint[0, 1:].copy() if cross_term else np.zeros(len(params.beta))
    return InfoMatrices(F_NN=F_NN, F_bb=F_bb, F_Nb=F_Nb, se_N=se_N, se_beta=se_beta, positive_definite=pd,
                        warnings=tuple(warnings), joint=joint, se_N_block=se_block)


def profile_score_beta(fit: FitResult, beta: np.ndarray, N: float | None = None) -> np.ndarray:
    """s_beta at (N, beta, tau_hat(N, beta))."""
    N = fit.params.N if N is None else N
    state = fit.bound.state(beta)
    counts = fit.dataset.counts
    try:
        sol = solve_tau(state.phi, N, counts, tau0=fit.params.tau)
    except ArithmeticError as exc:
        raise ArithmeticError(f"tau solve failed at beta={beta}: {exc}") from exc
    params = fit.params.with_(beta=beta, N=N, tau=sol.tau)
    return score_beta(params, state, fit.dataset)


def profile_observed_info_beta(fit: FitResult, step: float = 1e-4) -> np.ndarray:
    """Minus the central-difference Jacobian of the profile score, symmetrised."""
    beta = fit.params.beta
    d = len(beta)
    jac = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        try:
            hi = profile_score_beta(fit, beta + e)
            lo = profile_score_beta(fit, beta - e)
        except ArithmeticError as exc:
            raise ArithmeticError(f"coordinate {j}: {exc}") from exc
        jac[:, j] = (hi - lo) / (2 * step)
    info = -jac
    return 0.5 * (info + info.T)


def wald_interval_N(fit: FitResult, level: float = 0.95, cross_term: bool = True) -> tuple[float, float]:
    info = profile_expected_info(fit, cross_term)
    z = math.sqrt(chi2.ppf(level, 1))
    return fit.N - z * info.se_N, fit.N + z * info.se_N


def profile_ci_N(fit: FitResult, level: float = 0.95, tol: float = 1e-9, expand: float = 1.5,
                 max_ratio: float = 100.0, xtol: float = 1e-6) -> ProfileCI:
    """Invert D_N = 2[L(N_hat) - L_profile(N)] against the chi-square(1) quantile."""
    dataset, spec, bound = fit.dataset, fit.spec, fit.bound
    n = dataset.n
    q = float(chi2.ppf(level, 1))
    L_hat = fit.loglik
    starts: dict[float, Params] = {fit.N: fit.params}
    ci = ProfileCI(level=level, lower=float(n), upper=math.inf, N_hat=fit.N, quantile=q)

    def D(N: float) -> float:
        near = min(starts, key=lambda v: abs(v - N))
        res = profile_fit(dataset, spec, N, starts[near], bound=bound, tol=tol)
        if not res.converged:
            ci.warnings.append(f"inner fit at N={N:.4f} did not converge: {res.reason}")
        starts[N] = res.params
        value = 2.0 * (L_hat - res.loglik)
        if value < 0:
            if value < -1e-6:
                ci.warnings.append(f"profile at N={N:.4f} exceeds the reported maximum by {-value / 2:.2e}")
            value = 0.0
        ci.grid.append((float(N), float(value)))
        return value

    def root(a: float, b: float) -> float:
        return brentq(lambda v: D(v) - q, a, b, xtol=xtol, rtol=1e-12)

    # upper endpoint
    below = fit.N
    trial = max(fit.N * expand, fit.N + 1.0)
    while True:
        if trial > max_ratio * max(fit.N, 1.0):
            ci.warnings.append(f"D_N stays below {q:.3f} up to N={below:.1f}: interval unbounded above")
            break
        if D(trial) > q:
            ci.upper = root(below, trial)
            break
        below, trial = trial, trial * expand

    # lower endpoint
    if fit.N - n > xtol:
        if D(float(n)) > q:
            ci.lower = root(float(n), fit.N)
    ci.grid.sort()
    return ci


@dataclass(frozen=True)
class IdentifiabilityReport:
    points: np.ndarray
    min_eig: np.ndarray
    max_eig: np.ndarray
    flagged: np.ndarray
    threshold: float

    @property
    def ok(self) -> bool:
        return not bool(self.flagged.any())


def identifiability_check(fit: FitResult, n_points: int = 20, radius: float = 0.1, seed: int = 0,
                          threshold: float = 1e-8) -> IdentifiabilityReport:
    """Probe positive definiteness of the profile information around beta_hat.

    Points are uniform in the Euclidean ball of the given radius; a point is
    flagged when min eigenvalue <= threshold * max eigenvalue.
    """
    rng = np.random.default_rng(seed)
    beta = fit.params.beta
    d = len(beta)
    counts = fit.dataset.counts
    pts, lo, hi = [], [], []
    for _ in range(n_points):
        u = rng.normal(size=d)
        u *= radius * rng.random() ** (1.0 / d) / np.linalg.norm(u)
        b = beta + u
        state = fit.bound.state(b)
        tau = solve_tau(state.phi, fit.N, counts, tau0=fit.params.tau).tau
        F = profile_info_beta(fit.params.with_(beta=b, tau=tau), state, counts)
        eig = np.linalg.eigvalsh(F)
        pts.append(b)
        lo.append(eig[0])
        hi.append(eig[-1])
    lo_a, hi_a = np.array(lo), np.array(hi)
    flagged = lo_a <= threshold * np.maximum(hi_a, 0)
    return IdentifiabilityReport(np.array(pts), lo_a, hi_a, flagged, threshold)


def kl_by_strata(fit_a: FitResult, fit_b: FitResult) -> float:
    """N_hat_A * sum_i tau_A,i KL(ptilde_A,i || ptilde_B,i) over all 2^J configurations."""
    if fit_a.dataset.s != fit_b.dataset.s or fit_a.dataset.J != fit_b.dataset.J:
        raise ValueError("fits do not share strata and lists")
    pa, pb = fit_a.state.ptilde, fit_b.state.ptilde
    if np.any((pb <= 0) & (pa > 0)):
        return math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pa > 0, pa * np.log(pa / pb), 0.0)
    return float(fit_a.N * fit_a.params.tau @ terms.sum(axis=1))


def likelihood_ratio(fit_full: FitResult, fit_reduced: FitResult) -> float:
    return 2.0 * (fit_full.loglik - fit_reduced.loglik)


def class_capture_probabilities(fit: FitResult) -> np.ndarray:
    """Per-class occasion capture probabilities by partition class, (s, C, dim delta).

    Only meaningful for the recursive family, where each delta coordinate is
    a logit shared by all partial histories in one class.
    """
    _, lam = fit.spec.split(fit.params.beta)
    return 1.0 / (1.0 + np.exp(-fit.bound.delta(lam)))
