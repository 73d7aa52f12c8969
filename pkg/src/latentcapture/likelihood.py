"""Full log-likelihood in (N, beta, tau) and its derivatives.

    L = log G(N+1) - log G(N-n+1) + (N-n) log(tau'phi)
        + sum_i [ y_i' log p_i + n_i log tau_i ]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .model import ModelState
from .special import digamma, trigamma
from .tau import tau_jacobian_times

PROB_FLOOR = 1e-300


class BoundaryError(ArithmeticError):
    """A configuration with positive count has probability 0."""


@dataclass(frozen=True)
class Params:
    N: float
    zeta: np.ndarray
    lam: np.ndarray
    tau: np.ndarray

    @classmethod
    def from_beta(cls, N: float, beta: np.ndarray, dim_zeta: int, tau: np.ndarray) -> "Params":
        beta = np.asarray(beta, dtype=float)
        return cls(float(N), beta[:dim_zeta].copy(), beta[dim_zeta:].copy(), np.asarray(tau, dtype=float).copy())

    @property
    def beta(self) -> np.ndarray:
        return np.concatenate([self.zeta, self.lam])

    def with_(self, **changes) -> "Params":
        if "beta" in changes:
            beta = np.asarray(changes.pop("beta"), dtype=float)
            changes["zeta"] = beta[: len(self.zeta)].copy()
            changes["lam"] = beta[len(self.zeta) :].copy()
        return replace(self, **changes)


def mean_phi(tau: np.ndarray, state: ModelState) -> float:
    return float(tau @ state.phi)


def log_likelihood(params: Params, state: ModelState, dataset: Dataset) -> float:
    """Returns -inf when an observed configuration has zero probability."""
    N, n = params.N, dataset.n
    if N < n:
        raise ValueError(f"N={N} is below the number captured n={n}")
    Y = dataset.Y
    p = state.p
    if np.any((p <= 0) & (Y > 0)):
        return -math.inf
    tau = params.tau
    phi = mean_phi(tau, state)
    ll = math.lgamma(N + 1) - math.lgamma(N - n + 1)
    if N > n:
        if phi <= 0:
            return -math.inf
        ll += (N - n) * math.log(phi)
    ll += float(np.sum(np.where(Y > 0, Y * np.log(np.maximum(p, PROB_FLOOR)), 0.0)))
    counts = dataset.counts
    ll += float(np.sum(counts * np.log(tau)))
    return ll


def score_beta(params: Params, state: ModelState, dataset: Dataset) -> np.ndarray:
    """(N-n)/phi Phi'tau + sum_i D_i' diag(p_i)^-1 y_i."""
    Y = dataset.Y
    p = state.p
    if np.any((p <= 0) & (Y > 0)):
        raise BoundaryError("observed configuration with zero probability")
    ratio = np.where(Y > 0, Y / np.where(p > 0, p, 1.0), 0.0)
    s = np.einsum("skb,sk->b", state.D, ratio)
    excess = params.N - dataset.n
    if excess > 0:
        s = s + excess / mean_phi(params.tau, state) * (state.Phi.T @ params.tau)
    return s


def expected_info_beta(params: Params, state: ModelState) -> np.ndarray:
    """N [Phi'tau tau'Phi / phi + sum_i tau_i D_i' diag(p_i)^-1 D_i]."""
    tau = params.tau
    g = state.Phi.T @ tau
    W = tau[:, None] / state.p
    F = np.einsum("skb,sk,skc->bc", state.D, W, state.D) + np.outer(g, g) / mean_phi(tau, state)
    F = params.N * F
    return 0.5 * (F + F.T)


def profile_info_beta(params: Params, state: ModelState, counts: np.ndarray) -> np.ndarray:
    """Per-unit profile expected information for beta (tau profiled out).

        sum_i tau_i D_i' diag(p_i)^-1 D_i + Phi' [(tau phi'/phi - I) D_phi + tau tau'/phi] Phi

    ``D_phi @ Phi`` is formed through the rank-one structure of the tau
    Jacobian, so the cost is linear in the number of strata.
    """
    tau = params.tau
    phi_vec = state.phi
    phibar = float(tau @ phi_vec)
    W = tau[:, None] / state.p
    F = np.einsum("skb,sk,skc->bc", state.D, W, state.D)
    Phi = state.Phi
    DPhi = tau_jacobian_times(tau, phi_vec, params.N, counts, Phi)
    g = Phi.T @ tau
    F = F + np.outer(g, phi_vec @ DPhi) / phibar - Phi.T @ DPhi + np.outer(g, g) / phibar
    return 0.5 * (F + F.T)


def joint_info(params: Params, state: ModelState) -> np.ndarray:
    """Per-unit expected information for (N/N_0, beta) with tau profiled out.

    Built from the expected information in (N, beta, tau), with
    E n_i = N tau_i (1 - phi_i), followed by the Schur complement over tau
    on the simplex. The tau block ``N [diag((1-phi)/tau) + phi phi'/phi_bar]``
    is inverted by Sherman-Morrison and projected onto ``1'dtau = 0``; it maps
    tau to 1/N times ones, which gives the projection in closed form. Rows and
    columns are scaled so the first diagonal entry is comparable with
    (1-phi)/phi and the beta block with the per-unit information.
    """
    N, tau = params.N, params.tau
    phi, Phi = state.phi, state.Phi
    phibar = float(tau @ phi)
    g = Phi.T @ tau
    d = (1.0 - phi) / tau
    w = phi / d

    def a_inv(X):
        return (X / d[:, None] - np.outer(w, w @ X) / (phibar + phi @ w)) / N

    B = np.column_stack([-phi / phibar, -N * (Phi - np.outer(phi, g) / phibar)])
    AB = a_inv(B)
    # a_inv(1) = tau / N, so 1'A^-1 1 = 1/N
    PB = AB - np.outer(tau, tau @ B) / N
    top = np.empty((1 + g.size, 1 + g.size))
    top[0, 0] = (1.0 - phibar) / (N * phibar)
    top[0, 1:] = top[1:, 0] = -g / phibar
    top[1:, 1:] = expected_info_beta(params, state)
    S = top - B.T @ PB
    scale = np.concatenate([[math.sqrt(N)], np.full(g.size, 1.0 / math.sqrt(N))])
    S = S * np.outer(scale, scale)
    return 0.5 * (S + S.T)


def score_N(N: float, n: int, phi: float) -> float:
    """digamma(N+1) - digamma(N-n+1) + log(phi)."""
    if N < n:
        raise ValueError(f"N={N} is below n={n}")
    return digamma(N + 1) - digamma(N - n + 1) + math.log(phi)


def obs_info_N(N: float, n: int) -> float:
    """trigamma(N-n+1) - trigamma(N+1); strictly positive for n >= 1."""
    if N < n:
        raise ValueError(f"N={N} is below n={n}")
    return trigamma(N - n + 1) - trigamma(N + 1)
