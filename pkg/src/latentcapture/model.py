"""Design matrices and the map from structural parameters to probabilities.

Parameters are stacked as ``beta = (zeta, lam)``: ``zeta`` drives the
multinomial-logit latent weights (class 1 is the reference), ``lam`` drives
the class-conditional capture distributions through ``delta_ic = M_ic lam``.
Everything is vectorised over strata; arrays carry the stratum axis first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .data import MAX_LISTS, Dataset


class ModelError(ValueError):
    pass


class NumericError(ArithmeticError):
    """Non-finite intermediate while evaluating the model."""

    def __init__(self, message: str, stratum: int | None = None):
        super().__init__(message if stratum is None else f"stratum {stratum}: {message}")
        self.stratum = stratum


# ---------------------------------------------------------------------------
# history and partition matrices
# ---------------------------------------------------------------------------


def build_history_matrix(J: int) -> np.ndarray:
    """k x J binary matrix whose row r is the J-bit expansion of r."""
    if not 2 <= J <= MAX_LISTS:
        raise ModelError(f"J must lie in [2, {MAX_LISTS}], got {J}")
    r = np.arange(2**J)[:, None]
    shifts = np.arange(J - 1, -1, -1)[None, :]
    return ((r >> shifts) & 1).astype(np.int8)


Classifier = Callable[[tuple[int, ...]], int]


def _none(partial: tuple[int, ...]) -> int:
    return 1


def _captured_before(partial: tuple[int, ...]) -> int:
    return 2 if any(partial) else 1


def _example1(partial: tuple[int, ...]) -> int:
    # 1: <=1 prior capture, not previous; 2: first capture was previous;
    # 3: >1 prior, not previous; 4: previous and at least one earlier
    previous = bool(partial) and partial[-1] == 1
    return 1 + int(previous) + 2 * int(sum(partial) > 1)


def saturated_classifier(J: int) -> Classifier:
    """One class per partial history: V = 2^J - 1."""

    def classify(partial: tuple[int, ...]) -> int:
        # partial histories of length m occupy classes 2^m .. 2^(m+1)-1
        m = len(partial)
        return 2**m + int("".join(map(str, partial)) or "0", 2)

    return classify


def occasion_classifier(partial: tuple[int, ...]) -> int:
    """Time effects: the class is the occasion index (V = J)."""
    return len(partial) + 1


BUILTIN_PARTITIONS: dict[str, tuple[Callable[[int], Classifier], Callable[[int], int]]] = {
    "none": (lambda J: _none, lambda J: 1),
    "captured_before": (lambda J: _captured_before, lambda J: 2),
    "example1": (lambda J: _example1, lambda J: 4),
    "occasion": (lambda J: occasion_classifier, lambda J: J),
    "saturated": (saturated_classifier, lambda J: 2**J - 1),
}


def table_classifier(table: dict[tuple[int, ...], int]) -> Classifier:
    def classify(partial: tuple[int, ...]) -> int:
        try:
            return table[partial]
        except KeyError:
            raise ModelError(f"partition table has no entry for partial history {partial}") from None

    return classify


def build_partition_matrices(J: int, classify: Classifier, V: int | None = None) -> np.ndarray:
    """Stack of V binary k x J matrices; entry (v, r, j) = 1 iff the first
    j-1 bits of row r fall in partial-history class v+1."""
    H = build_history_matrix(J)
    labels = np.zeros((2**J, J), dtype=np.int64)
    cache: dict[tuple[int, ...], int] = {}
    for j in range(J):
        for r in range(2**J):
            partial = tuple(int(b) for b in H[r, :j])
            if partial not in cache:
                cache[partial] = int(classify(partial))
            labels[r, j] = cache[partial]
    if V is None:
        V = int(labels.max())
    if labels.min() < 1 or labels.max() > V:
        raise ModelError(f"classifier returned a class outside 1..{V}")
    return np.stack([(labels == v + 1).astype(np.int8) for v in range(V)])


def build_recursive_design(H: np.ndarray, Hv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """A[:, v] = (H * H_v) 1 and B[:, v] = H_v 1."""
    if Hv.shape[1:] != H.shape:
        raise ModelError("partition matrices are not conformable with H")
    A = np.einsum("rj,vrj->rv", H.astype(float), Hv.astype(float))
    B = Hv.sum(axis=2).T.astype(float)
    return A, B


def build_loglinear_design(H: np.ndarray, interactions: Sequence[tuple[int, int]] = ()) -> np.ndarray:
    """Main effects (columns of H) followed by the requested two-way products.

    ``interactions`` uses 1-based list indices.
    """
    J = H.shape[1]
    cols = [H[:, j].astype(float) for j in range(J)]
    seen = set()
    for pair in interactions:
        if len(pair) != 2:
            raise ModelError(f"only bivariate interactions are supported, got {pair}")
        a, b = sorted(int(v) for v in pair)
        if a == b or not (1 <= a <= J and 1 <= b <= J):
            raise ModelError(f"invalid interaction pair {pair} for J={J}")
        if (a, b) in seen:
            raise ModelError(f"duplicate interaction {a}:{b}")
        seen.add((a, b))
        cols.append(H[:, a - 1].astype(float) * H[:, b - 1])
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# probability maps
# ---------------------------------------------------------------------------


def latent_weights(X: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    """Multinomial-logit weights; ``X`` is (..., C, dim zeta)."""
    zeta = np.asarray(zeta, dtype=float)
    if X.shape[-1] == 0:
        logits = np.zeros(X.shape[:-1])
    else:
        logits = X @ zeta
    return softmax(logits, axis=-1)


def conditional_probs(design: "RecursiveDesign | LogLinearDesign", delta: np.ndarray) -> np.ndarray:
    """Full k-vector(s) of class-conditional configuration probabilities."""
    return np.exp(design.log_qtilde(np.asarray(delta, dtype=float)))


@dataclass(frozen=True)
class RecursiveDesign:
    Hv: np.ndarray
    A: np.ndarray
    B: np.ndarray
    partition: str = "custom"

    family = "recursive"

    @property
    def dim_delta(self) -> int:
        return self.A.shape[1]

    def log_qtilde(self, delta: np.ndarray) -> np.ndarray:
        return delta @ self.A.T - np.logaddexp(0.0, delta) @ self.B.T

    def dlog_qtilde(self, delta: np.ndarray, qtilde: np.ndarray) -> np.ndarray:
        """d qtilde / d delta' with shape (..., k, dim delta)."""
        sig = expit(delta)
        bracket = self.A - self.B * sig[..., None, :]
        return qtilde[..., :, None] * bracket


@dataclass(frozen=True)
class LogLinearDesign:
    G: np.ndarray
    interactions: tuple[tuple[int, int], ...] = ()

    family = "loglinear"

    @property
    def dim_delta(self) -> int:
        return self.G.shape[1]

    def log_qtilde(self, delta: np.ndarray) -> np.ndarray:
        return log_softmax(delta @ self.G.T, axis=-1)

    def dlog_qtilde(self, delta: np.ndarray, qtilde: np.ndarray) -> np.ndarray:
        # Omega(q) G = diag(q) G - q q'G
        mean = qtilde @ self.G
        return qtilde[..., :, None] * (self.G - mean[..., None, :])


def recursive_design(J: int, partition: str | Classifier = "captured_before", V: int | None = None) -> RecursiveDesign:
    if isinstance(partition, str):
        try:
            make, nclass = BUILTIN_PARTITIONS[partition]
        except KeyError:
            raise ModelError(f"unknown partition {partition!r}; built-ins: {sorted(BUILTIN_PARTITIONS)}") from None
        classify, V, name = make(J), nclass(J), partition
    else:
        classify, name = partition, "table"
    H = build_history_matrix(J)
    Hv = build_partition_matrices(J, classify, V)
    A, B = build_recursive_design(H, Hv)
    return RecursiveDesign(Hv=Hv, A=A, B=B, partition=name)


def loglinear_design(J: int, interactions: Sequence[tuple[int, int]] = ()) -> LogLinearDesign:
    H = build_history_matrix(J)
    G = build_loglinear_design(H, interactions)
    return LogLinearDesign(G=G, interactions=tuple(tuple(sorted(p)) for p in interactions))


# ---------------------------------------------------------------------------
# restrictions and the model specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Term:
    coef: float
    param: str
    covariate: str | None = None


@dataclass(frozen=True)
class Restriction:
    """delta[c, v] = sum of coef * lam[param] (* covariate value).

    ``rows`` maps 0-based (class, delta index) to its list of terms; a
    missing key means that coordinate is fixed at 0.
    """

    lambda_names: tuple[str, ...]
    rows: dict[tuple[int, int], tuple[Term, ...]]

    @classmethod
    def free(cls, C: int, dim_delta: int) -> "Restriction":
        names, rows = [], {}
        for c in range(C):
            for v in range(dim_delta):
                name = f"delta[{c + 1},{v + 1}]"
                names.append(name)
                rows[(c, v)] = (Term(1.0, name),)
        return cls(tuple(names), rows)

    def tensor(self, dataset: Dataset, C: int, dim_delta: int) -> np.ndarray:
        """(s, C, dim delta, dim lam) stack of M_ic."""
        index = {name: i for i, name in enumerate(self.lambda_names)}
        M = np.zeros((dataset.s, C, dim_delta, len(self.lambda_names)))
        for (c, v), terms in self.rows.items():
            if c >= C or v >= dim_delta:
                raise ModelError(f"restriction row delta[{c + 1},{v + 1}] outside C={C}, dim delta={dim_delta}")
            for t in terms:
                col = t.coef if t.covariate is None else t.coef * dataset.covariate(t.covariate)
                M[:, c, v, index[t.param]] += col
        return M


@dataclass(frozen=True)
class ModelSpec:
    C: int
    conditional: RecursiveDesign | LogLinearDesign
    latent_covariates: tuple[str, ...] = ()
    restriction: Restriction | None = None
    name: str = "model"

    def __post_init__(self):
        if self.C < 1:
            raise ModelError("C must be at least 1")
        if self.restriction is None:
            object.__setattr__(self, "restriction", Restriction.free(self.C, self.conditional.dim_delta))

    @property
    def J(self) -> int:
        k = (self.conditional.A if isinstance(self.conditional, RecursiveDesign) else self.conditional.G).shape[0]
        return int(k).bit_length() - 1

    @property
    def dim_zeta(self) -> int:
        return (self.C - 1) * (1 + len(self.latent_covariates))

    @property
    def dim_lambda(self) -> int:
        return len(self.restriction.lambda_names)

    @property
    def dim_beta(self) -> int:
        return self.dim_zeta + self.dim_lambda

    @property
    def param_names(self) -> list[str]:
        names = []
        for c in range(2, self.C + 1):
            names.append(f"zeta[{c}]:intercept")
            names.extend(f"zeta[{c}]:{cov}" for cov in self.latent_covariates)
        return names + [f"lambda:{n}" for n in self.restriction.lambda_names]

    def split(self, beta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.dim_beta,):
            raise ModelError(f"beta has shape {beta.shape}, expected ({self.dim_beta},)")
        return beta[: self.dim_zeta], beta[self.dim_zeta :]

    def latent_design(self, dataset: Dataset) -> np.ndarray:
        """(s, C, dim zeta) block design with a zero row for class 1."""
        p = len(self.latent_covariates)
        z = np.column_stack([np.ones(dataset.s)] + [dataset.covariate(c) for c in self.latent_covariates])
        X = np.zeros((dataset.s, self.C, self.dim_zeta))
        for c in range(1, self.C):
            X[:, c, (c - 1) * (1 + p) : c * (1 + p)] = z
        return X

    def bind(self, dataset: Dataset) -> "BoundModel":
        if dataset.J != self.J:
            raise ModelError(f"model built for J={self.J} but data has J={dataset.J}")
        return BoundModel(
            spec=self,
            dataset=dataset,
            X=self.latent_design(dataset),
            M=self.restriction.tensor(dataset, self.C, self.conditional.dim_delta),
        )


@dataclass(frozen=True)
class ModelState:
    """Probabilities and first derivatives at one value of beta.

    ``dptilde`` is the (s, k, dim beta) derivative of the full probability
    vectors; ``D`` drops its h = 0 row and ``Phi`` is that row.
    """

    beta: np.ndarray
    xi: np.ndarray  # (s, C)
    qtilde: np.ndarray  # (s, C, k)
    ptilde: np.ndarray  # (s, k)
    dptilde: np.ndarray  # (s, k, dim beta)

    @property
    def p(self) -> np.ndarray:
        return self.ptilde[:, 1:]

    @property
    def phi(self) -> np.ndarray:
        return self.ptilde[:, 0]

    @property
    def D(self) -> np.ndarray:
        return self.dptilde[:, 1:, :]

    @property
    def Phi(self) -> np.ndarray:
        return self.dptilde[:, 0, :]

    @property
    def Q(self) -> np.ndarray:
        return np.swapaxes(self.qtilde, 1, 2)[:, 1:, :]


@dataclass(frozen=True)
class BoundModel:
    """A ModelSpec paired with a dataset's covariate designs."""

    spec: ModelSpec
    dataset: Dataset
    X: np.ndarray
    M: np.ndarray
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def delta(self, lam: np.ndarray) -> np.ndarray:
        return self.M @ lam

    def state(self, beta: np.ndarray) -> ModelState:
        return model_state(self, beta)


def model_state(bound: BoundModel, beta: np.ndarray) -> ModelState:
    """Evaluate xi, qtilde, ptilde and their analytic derivatives."""
    spec = bound.spec
    zeta, lam = spec.split(beta)
    if not (np.all(np.isfinite(zeta)) and np.all(np.isfinite(lam))):
        raise NumericError("non-finite parameter vector")
    xi = latent_weights(bound.X, zeta)
    delta = bound.delta(lam)  # (s, C, dd)
    design = spec.conditional
    qtilde = np.exp(design.log_qtilde(delta))  # (s, C, k)
    ptilde = np.einsum("sc,sck->sk", xi, qtilde)

    # latent block: Qtilde Omega(xi) X
    omega_xi = _omega(xi)
    d_zeta = np.einsum("sck,scd,sdz->skz", qtilde, omega_xi, bound.X)
    # conditional block: sum_c xi_c (d qtilde_c / d delta') M_c
    dq = design.dlog_qtilde(delta, qtilde)  # (s, C, k, dd)
    d_lam = np.einsum("sc,sckd,scdl->skl", xi, dq, bound.M)
    dptilde = np.concatenate([d_zeta, d_lam], axis=2)

    bad = ~np.isfinite(ptilde).all(axis=1) | ~np.isfinite(dptilde).all(axis=(1, 2))
    if bad.any():
        raise NumericError("non-finite probability or derivative", int(np.argmax(bad)))
    return ModelState(beta=np.asarray(beta, dtype=float).copy(), xi=xi, qtilde=qtilde, ptilde=ptilde, dptilde=dptilde)


def _omega(v: np.ndarray) -> np.ndarray:
    """diag(v) - v v' applied along the last axis."""
    return np.einsum("...i,ij->...ij", v, np.eye(v.shape[-1])) - v[..., :, None] * v[..., None, :]
