"""Synthetic data from a model specification, plus brute-force oracles.

Random stream: ``numpy.random.Generator(PCG64(seed))``. Draw order is fixed:
(1) covariate-pool index of every unit, (2) one uniform per unit for the
latent class, (3) for the recursive family, one uniform per unit per
occasion, occasion by occasion; for the log-linear family, one uniform per
unit for the configuration. Unit u always consumes position u of each
vector, so the same seed reproduces the same population.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .data import CaptureRecord, DataError, Dataset, Stratum, decode_history, stratify
from .likelihood import Params
from .model import LogLinearDesign, ModelSpec, RecursiveDesign

RNG_NAME = "numpy.PCG64"


@dataclass(frozen=True)
class SimConfig:
    N_true: int
    beta: np.ndarray
    pool: np.ndarray  # (m, p) covariate vectors
    weights: np.ndarray  # (m,) population shares, the true tau
    covariate_names: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if self.N_true < 1:
            raise ValueError("N_true must be at least 1")
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise ValueError("pool weights must form a simplex")
        if np.asarray(self.pool).shape[0] != w.shape[0]:
            raise ValueError("pool and weights differ in length")


def pool_dataset(config: SimConfig, J: int) -> Dataset:
    """A dataset whose strata are the pool rows (all counts zero)."""
    pool = np.atleast_2d(np.asarray(config.pool, dtype=float))
    if pool.shape[0] == len(config.weights) and pool.ndim == 2 and pool.shape[1] == 0:
        pool = np.zeros((len(config.weights), 0))
    strata = tuple(Stratum(x=row.copy(), n=0, y=np.zeros(2**J - 1, dtype=np.int64)) for row in pool)
    names = config.covariate_names or tuple(f"x{i + 1}" for i in range(pool.shape[1]))
    return Dataset(strata=strata, J=J, covariate_names=tuple(names))


def simulate_histories(config: SimConfig, spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Histories (N_true, J) and pool indices (N_true,) for the whole population."""
    J = spec.J
    bound = spec.bind(pool_dataset(config, J))
    state = bound.state(config.beta)
    _, lam = spec.split(config.beta)
    delta = bound.delta(lam)  # (m, C, dd)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    N = int(config.N_true)
    cov = rng.choice(len(config.weights), size=N, p=np.asarray(config.weights, float))
    cls = _categorical(state.xi[cov], rng.random(N))
    design = spec.conditional
    if isinstance(design, RecursiveDesign):
        H = np.zeros((N, J), dtype=np.int8)
        prefix = np.zeros(N, dtype=np.int64)
        for j in range(J):
            rows = prefix << (J - j)
            v = np.argmax(design.Hv[:, rows, j], axis=0)
            eta = delta[cov, cls, v]
            H[:, j] = rng.random(N) < expit(eta)
            prefix = (prefix << 1) | H[:, j]
    else:
        idx = _categorical(state.qtilde[cov, cls], rng.random(N))
        H = ((idx[:, None] >> np.arange(J - 1, -1, -1)[None, :]) & 1).astype(np.int8)
    return H, cov


def generate(config: SimConfig, spec: ModelSpec) -> Dataset:
    """Simulate the population and keep the units captured at least once."""
    H, cov = simulate_histories(config, spec)
    pool = np.atleast_2d(np.asarray(config.pool, dtype=float))
    seen = H.any(axis=1)
    if not seen.any():
        raise DataError("no observable units: every simulated history is all-zero")
    records = [CaptureRecord(tuple(int(b) for b in H[u]), tuple(pool[cov[u]])) for u in np.flatnonzero(seen)]
    names = config.covariate_names or tuple(f"x{i + 1}" for i in range(pool.shape[1]))
    return stratify(records, names)


def _categorical(prob: np.ndarray, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(prob, axis=-1)
    idx = (u[:, None] > cum).sum(axis=-1)
    return np.minimum(idx, prob.shape[-1] - 1)


def true_tau(config: SimConfig, dataset: Dataset) -> np.ndarray:
    """Pool weights aligned to the dataset's strata order."""
    pool = np.atleast_2d(np.asarray(config.pool, dtype=float))
    out = np.empty(dataset.s)
    for i, st in enumerate(dataset.strata):
        match = np.flatnonzero(np.all(pool == np.atleast_1d(st.x)[None, :], axis=1))
        out[i] = np.asarray(config.weights, float)[match[0]]
    return out


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def enumerate_probs(dataset: Dataset, spec: ModelSpec, beta: np.ndarray) -> np.ndarray:
    """(s, k) manifest probabilities by explicit loops over strata, classes
    and configurations."""
    J, C = dataset.J, spec.C
    k = 2**J
    zeta, lam = spec.split(beta)
    lam_index = {name: i for i, name in enumerate(spec.restriction.lambda_names)}
    design = spec.conditional
    dd = design.dim_delta
    cov_names = list(dataset.covariate_names)
    nlat = 1 + len(spec.latent_covariates)
    out = np.zeros((dataset.s, k))
    for i, st in enumerate(dataset.strata):
        x = np.atleast_1d(st.x)
        z = [1.0] + [float(x[cov_names.index(c)]) for c in spec.latent_covariates]
        logits = [0.0]
        for c in range(1, C):
            logits.append(sum(zeta[(c - 1) * nlat + t] * z[t] for t in range(nlat)))
        top = max(logits)
        w = [math.exp(v - top) for v in logits]
        xi = [v / sum(w) for v in w]
        for c in range(C):
            delta = [0.0] * dd
            for (cc, v), terms in spec.restriction.rows.items():
                if cc != c:
                    continue
                for t in terms:
                    value = t.coef * lam[lam_index[t.param]]
                    if t.covariate is not None:
                        value *= float(x[cov_names.index(t.covariate)])
                    delta[v] += value
            q = _enumerate_q(design, delta, J)
            for h in range(k):
                out[i, h] += xi[c] * q[h]
    return out


def _enumerate_q(design, delta: Sequence[float], J: int) -> list[float]:
    k = 2**J
    if isinstance(design, RecursiveDesign):
        q = []
        for h in range(k):
            bits = decode_history(h, J)
            prob = 1.0
            for j in range(J):
                # partition class of the partial history before occasion j
                v = next(v for v in range(design.Hv.shape[0]) if design.Hv[v, h, j])
                pj = 1.0 / (1.0 + math.exp(-delta[v]))
                prob *= pj if bits[j] else 1.0 - pj
            q.append(prob)
        return q
    assert isinstance(design, LogLinearDesign)
    raw = [math.exp(sum(design.G[h, g] * delta[g] for g in range(len(delta)))) for h in range(k)]
    total = sum(raw)
    return [r / total for r in raw]


def enumerate_loglik(dataset: Dataset, spec: ModelSpec, params: Params,
                     max_J: int = 6, max_s: int = 200) -> float:
    """Log-likelihood as the unsimplified sum of its three parts: binomial
    count of captured units, configurations given capture and stratum, and
    strata given capture."""
    if dataset.J > max_J or dataset.s > max_s:
        raise ValueError(f"oracle limited to J <= {max_J}, s <= {max_s}")
    P = enumerate_probs(dataset, spec, params.beta)
    N, n = params.N, dataset.n
    phi_i = [P[i, 0] for i in range(dataset.s)]
    phi = sum(t * f for t, f in zip(params.tau, phi_i))
    part1 = math.lgamma(N + 1) - math.lgamma(N - n + 1) + n * math.log(1 - phi)
    if N > n:
        part1 += (N - n) * math.log(phi)
    part2 = 0.0
    for i, st in enumerate(dataset.strata):
        for h in range(1, 2**dataset.J):
            if st.y[h - 1]:
                part2 += st.y[h - 1] * math.log(P[i, h] / (1 - phi_i[i]))
    part3 = sum(st.n * math.log(params.tau[i] * (1 - phi_i[i]) / (1 - phi)) for i, st in enumerate(dataset.strata))
    return part1 + part2 + part3


def finite_diff(f: Callable[[np.ndarray], float | np.ndarray], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences; gradient for scalar f, Jacobian (m, len(x)) otherwise."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        hi, lo = np.asarray(f(x + e), dtype=float), np.asarray(f(x - e), dtype=float)
        if not (np.all(np.isfinite(hi)) and np.all(np.isfinite(lo))):
            raise ArithmeticError(f"non-finite function value at coordinate {j}")
        cols.append((hi - lo) / (2 * step))
    return np.stack(cols, axis=-1)
