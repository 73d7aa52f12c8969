"""Stratum weights tau as a function of the never-captured probabilities.

For fixed (N, beta) the tau-part of the log-likelihood is
``(N-n) log(phi'tau) + n'log(tau)`` on the simplex. Its maximiser satisfies

    tau_i = n_i phi / (N phi - (N-n) phi_i),    phi = tau'phi_vec,

which :func:`solve_tau` reaches by the multiplicative fixed-point update
and :func:`tau_jacobian` differentiates implicitly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

log = logging.getLogger(__name__)

TOL = 1e-12
MAX_ITER = 10_000


class TauError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TauSolution:
    tau: np.ndarray
    iterations: int
    residual: float
    hyperbola_residual: float
    method: str = "fixed_point"


@dataclass(frozen=True)
class TauJacobian:
    Dphi: np.ndarray
    d0: np.ndarray
    d1: np.ndarray
    a: np.ndarray
    g: float


def _check(phi, N, counts):
    phi = np.asarray(phi, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if phi.shape != counts.shape:
        raise TauError("phi and counts differ in length")
    if np.any(phi < 0) or np.any(phi >= 1):
        raise TauError("never-captured probabilities must lie in [0, 1)")
    n = counts.sum()
    if N < n - 1e-9:
        raise TauError(f"N={N} below n={n}")
    return phi, counts, float(n)


def update_tau(tau: np.ndarray, phi: np.ndarray, N: float, counts: np.ndarray) -> np.ndarray:
    """One step of tau <- [n + (N-n)/phi_bar * diag(phi) tau] / N."""
    phi, counts, n = _check(phi, N, counts)
    phibar = float(tau @ phi)
    if phibar <= 0:
        if N > n:
            raise TauError("average never-captured probability is 0 with N > n")
        return counts / N
    return (counts + (N - n) / phibar * phi * tau) / N


def hyperbola(phi: np.ndarray, phibar: float, N: float, counts: np.ndarray) -> np.ndarray:
    """Right-hand side n_i phi_bar / (N phi_bar - (N-n) phi_i)."""
    n = counts.sum()
    return counts * phibar / (N * phibar - (N - n) * phi)


def hyperbola_residual(tau, phi, N, counts) -> float:
    tau = np.asarray(tau, dtype=float)
    return float(np.max(np.abs(tau - hyperbola(phi, float(tau @ phi), N, np.asarray(counts, float)))))


def implicit_residual(tau, phi, N, counts) -> float:
    """max |N tau phi_bar - n phi_bar - (N-n) tau * phi|, the implicit equation."""
    tau = np.asarray(tau, dtype=float)
    counts = np.asarray(counts, dtype=float)
    phibar = float(tau @ phi)
    r = N * tau * phibar - counts * phibar - (N - counts.sum()) * tau * phi
    return float(np.max(np.abs(r)))


def solve_tau_scalar(phi: np.ndarray, N: float, counts: np.ndarray) -> np.ndarray:
    """Solve the hyperbola system through its one-dimensional equation in phi_bar.

    sum_i n_i t / (N t - (N-n) phi_i) = 1 has a unique root t in
    ((N-n) max(phi) / N, max(phi)].
    """
    phi, counts, n = _check(phi, N, counts)
    m = N - n
    if m <= 0:
        return counts / n
    top = float(phi.max())
    if top <= 0:
        raise TauError("all never-captured probabilities are 0 with N > n")

    def f(t):
        return float(np.sum(counts * t / (N * t - m * phi))) - 1.0

    lo = m * top / N
    lo = lo + max(lo * 1e-13, 1e-300)
    while f(lo) <= 0:  # pragma: no cover - only if lo sits on the root
        lo = lo + (top - lo) * 1e-6
    if f(top) >= 0:
        t = top
    else:
        t = brentq(f, lo, top, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    tau = counts * t / (N * t - m * phi)
    return tau / tau.sum()


def solve_tau(
    phi: np.ndarray,
    N: float,
    counts: np.ndarray,
    tol: float = TOL,
    max_iter: int = MAX_ITER,
    tau0: np.ndarray | None = None,
    switch_after: int | None = 200,
    residual_tol: float = TOL,
) -> TauSolution:
    """Iterate the fixed-point update until sum |delta tau| <= tol and the
    hyperbola residual is at most ``residual_tol``. A small step alone is not
    enough when the contraction ratio is close to one.

    With ``switch_after`` set, a slowly contracting iteration is finished
    by the exact scalar root (same fixed point); ``None`` forces pure
    iteration up to ``max_iter``.
    """
    phi, counts, n = _check(phi, N, counts)
    tau = counts / n if tau0 is None else np.asarray(tau0, dtype=float).copy()
    if np.any(tau <= 0):
        tau = counts / n
    method = "fixed_point"
    step = np.inf
    it = 0
    while it < max_iter:
        it += 1
        new = update_tau(tau, phi, N, counts)
        new /= new.sum()
        step = float(np.abs(new - tau).sum())
        tau = new
        if step <= tol and hyperbola_residual(tau, phi, N, counts) <= residual_tol:
            break
        if switch_after is not None and it >= switch_after:
            tau = solve_tau_scalar(phi, N, counts)
            tau = update_tau(tau, phi, N, counts)
            tau /= tau.sum()
            step = float(np.abs(tau - solve_tau_scalar(phi, N, counts)).sum())
            method = "fixed_point+scalar"
            break
    else:
        raise TauError(f"tau iteration did not converge in {max_iter} steps (last step {step:.3e})")
    hres = hyperbola_residual(tau, phi, N, counts)
    return TauSolution(tau=tau, iterations=it, residual=step, hyperbola_residual=hres, method=method)


def tau_jacobian(tau: np.ndarray, phi: np.ndarray, N: float, counts: np.ndarray) -> TauJacobian:
    """d tau / d phi' at a solution of the implicit equation.

    Differentiating ``N tau phi_bar - n phi_bar - (N-n) diag(tau) phi = 0``
    gives ``(diag(d0) + a phi') D = diag(d1) - a tau'`` with
    ``d0 = N phi_bar - (N-n) phi``, ``a = N tau - n``, ``d1 = (N-n) tau``;
    the rank-one left factor is inverted in closed form. With n = 1 these are
    the usual one-unit-per-stratum quantities; with ties the same system is
    the omega = tau/n form rescaled row-wise by n.
    """
    phi, counts, n = _check(phi, N, counts)
    tau = np.asarray(tau, dtype=float)
    phibar = float(tau @ phi)
    m = N - n
    d0 = N * phibar - m * phi
    if np.any(d0 <= 0):
        raise TauError("d0 has a non-positive element; (phi, tau) is not a solution pair")
    a = N * tau - counts
    d1 = m * tau
    w = phi / d0
    g = 1.0 + float(a @ w)
    # D = diag(1/d0) [diag(d1) - a (w * d1)'/g - a tau'/g]
    inner = np.diag(d1) - np.outer(a, w * d1) / g - np.outer(a, tau) / g
    Dphi = inner / d0[:, None]
    return TauJacobian(Dphi=Dphi, d0=d0, d1=d1, a=a, g=g)


def tau_jacobian_times(tau: np.ndarray, phi: np.ndarray, N: float, counts: np.ndarray,
                       rhs: np.ndarray) -> np.ndarray:
    """``D_phi @ rhs`` without forming the s x s Jacobian."""
    tau = np.asarray(tau, dtype=float)
    counts = np.asarray(counts, dtype=float)
    m = N - counts.sum()
    d0 = N * float(tau @ phi) - m * phi
    if np.any(d0 <= 0):
        raise TauError("d0 has a non-positive element; (phi, tau) is not a solution pair")
    a = N * tau - counts
    d1 = m * tau
    w = phi / d0
    g = 1.0 + float(a @ w)
    rhs = np.asarray(rhs, dtype=float)
    d1r = d1.reshape((-1,) + (1,) * (rhs.ndim - 1)) * rhs
    out = d1r - np.multiply.outer(a, (w @ d1r + tau @ rhs) / g)
    return out / d0.reshape((-1,) + (1,) * (rhs.ndim - 1))


def conditional_tau(phi: np.ndarray, counts: np.ndarray | None = None) -> np.ndarray:
    """Stratum weights implied by the conditional likelihood, n_i/(1-phi_i) normalised."""
    phi = np.asarray(phi, dtype=float)
    if np.any(phi >= 1) or np.any(phi < 0):
        raise TauError("never-captured probabilities must lie in [0, 1)")
    counts = np.ones_like(phi) if counts is None else np.asarray(counts, dtype=float)
    w = counts / (1.0 - phi)
    return w / w.sum()
