"""Label contamination models.

A contamination process is described by a transition matrix ``T`` with
``T[k, l] = P[Y~ = k | Y = l]`` (columns sum to one).  Calibration works with
the mixture matrix ``M[k, l] = P[Y = l | Y~ = k]`` (rows sum to one) and its
inverse ``V``.  The two are linked through Bayes' rule,

    M[k, l] = T[k, l] * rho[l] / rho_tilde[k],   rho_tilde = T @ rho.

Besides the general constructor, closed forms are provided for the
randomized-response model (a label is resampled uniformly at random with
probability ``epsilon``) and for its two-level variant in which the resampled
label is more likely to stay within the same half of the label set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EpsilonOutOfRange,
    LabelOutOfRange,
    NonPositiveFrequency,
    NotColumnStochastic,
    NuOutOfRange,
    OddK,
    SingularM,
)

__all__ = [
    "ContaminationModel",
    "BlockStructure",
    "build_rr",
    "build_two_level_rr",
    "build_from_transition",
    "block_transition",
    "random_u_transition",
    "corrupt_labels",
    "rr_inverse",
    "two_level_rr_inverse",
]

COND_LIMIT = 1e10
_STOCHASTIC_TOL = 1e-9


@dataclass(frozen=True)
class BlockStructure:
    """Partition of ``range(K)`` into the first and second contiguous halves."""

    K: int

    def __post_init__(self):
        if self.K < 2 or self.K % 2:
            raise OddK(f"two-level structure needs an even K >= 2, got {self.K}")

    @property
    def blocks(self) -> tuple[np.ndarray, np.ndarray]:
        half = self.K // 2
        return np.arange(half), np.arange(half, self.K)

    def block_of(self, labels) -> np.ndarray:
        """Block index (0 or 1) of each label."""
        return (np.asarray(labels) >= self.K // 2).astype(int)

    def same_block(self) -> np.ndarray:
        """Boolean ``K x K`` mask, true where two labels share a block."""
        b = self.block_of(np.arange(self.K))
        return b[:, None] == b[None, :]


@dataclass(frozen=True, eq=False)
class ContaminationModel:
    """Immutable bundle of ``T``, ``M``, ``V`` and label frequencies.

    ``kind`` is one of ``"general"``, ``"rr"``, ``"two_level_rr"``,
    ``"block"`` or ``"random_u"``; ``params`` holds its parameters
    (``epsilon``, ``nu``, ``seed`` as applicable).
    """

    T: np.ndarray
    rho: np.ndarray
    rho_tilde: np.ndarray
    M: np.ndarray
    V: np.ndarray
    kind: str = "general"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("T", "rho", "rho_tilde", "M", "V"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def K(self) -> int:
        return self.T.shape[0]

    @property
    def epsilon(self) -> float | None:
        return self.params.get("epsilon")

    def offdiag_abs_sum(self) -> np.ndarray:
        """Row-wise ``sum_{l != k} |V[k, l]|``."""
        A = np.abs(self.V)
        return A.sum(axis=1) - np.diag(A)

    def to_text(self) -> str:
        """Serialize as a flat ``key=value`` block.

        Field order: ``K``, ``kind``, ``epsilon``, ``nu``, ``seed`` (blank when
        not applicable), ``T`` row-major, ``rho``.
        """
        def fmt(values) -> str:
            return ",".join(repr(float(v)) for v in np.ravel(values))

        p = self.params
        lines = [
            f"K={self.K}",
            f"kind={self.kind}",
            f"epsilon={'' if p.get('epsilon') is None else repr(float(p['epsilon']))}",
            f"nu={'' if p.get('nu') is None else repr(float(p['nu']))}",
            f"seed={'' if p.get('seed') is None else int(p['seed'])}",
            f"T={fmt(self.T)}",
            f"rho={fmt(self.rho)}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ContaminationModel":
        """Inverse of :meth:`to_text`.

        Parametric kinds are rebuilt through their closed-form constructors so
        that ``V`` is bit-identical to the original.
        """
        fields = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
        K = int(fields["K"])
        kind = fields.get("kind", "general")
        T = np.array([float(v) for v in fields["T"].split(",")]).reshape(K, K)
        rho = np.array([float(v) for v in fields["rho"].split(",")])
        eps = float(fields["epsilon"]) if fields.get("epsilon") else None
        nu = float(fields["nu"]) if fields.get("nu") else None
        seed = int(fields["seed"]) if fields.get("seed") else None
        if kind == "rr":
            return build_rr(K, eps, rho)
        if kind == "two_level_rr":
            return build_two_level_rr(K, eps, nu)
        params = {k: v for k, v in (("epsilon", eps), ("nu", nu), ("seed", seed)) if v is not None}
        return build_from_transition(T, rho, kind=kind, params=params)


def _check_rho(rho, K: int) -> np.ndarray:
    if rho is None:
        return np.full(K, 1.0 / K)
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (K,):
        raise NonPositiveFrequency(f"rho must have length {K}, got shape {rho.shape}")
    if np.any(rho <= 0):
        raise NonPositiveFrequency("all label frequencies must be strictly positive")
    if abs(rho.sum() - 1.0) > 1e-9:
        raise NonPositiveFrequency(f"label frequencies sum to {rho.sum()}, expected 1")
    return rho


def _check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if not 0.0 <= epsilon < 1.0:
        raise EpsilonOutOfRange(f"epsilon must lie in [0, 1), got {epsilon}")
    return epsilon


def _mixture_from_transition(T: np.ndarray, rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rho_tilde = T @ rho
    M = T * rho[None, :] / rho_tilde[:, None]
    return M, rho_tilde


def rr_inverse(epsilon: float, rho: np.ndarray) -> np.ndarray:
    """Closed-form ``V = M^{-1}`` under randomized response.

    Obtained from the Sherman-Morrison formula applied to
    ``T = (1 - eps) I + (eps / K) 1 1^T``:

        V[k, l] = (1 + eps / ((1 - eps) K rho[k])) 1{k = l}
                  - eps / ((1 - eps) K) * rho_tilde[l] / rho[k]
    """
    rho = np.asarray(rho, dtype=float)
    K = rho.size
    rho_tilde = (1.0 - epsilon) * rho + epsilon / K
    scale = epsilon / ((1.0 - epsilon) * K)
    V = -scale * rho_tilde[None, :] / rho[:, None]
    V[np.diag_indices(K)] += 1.0 + scale / rho
    return V


def two_level_rr_inverse(K: int, epsilon: float, nu: float) -> np.ndarray:
    """Closed-form ``V`` for the two-level model with uniform label frequencies."""
    e = epsilon
    a = e / (K * (1.0 - e))
    r = nu / (1.0 - e * (1.0 - nu))
    diag = (1.0 - e / K) / (1.0 - e) - e * nu / (K * (1.0 - e) * (1.0 - e * (1.0 - nu)))
    within = -a * (1.0 + r)
    cross = -a * (1.0 - r)
    same = BlockStructure(K).same_block()
    V = np.where(same, within, cross)
    V[np.diag_indices(K)] = diag
    return V


def build_rr(K: int, epsilon: float, rho=None) -> ContaminationModel:
    """Randomized-response model ``T = (1 - eps) I + eps / K``.

    ``M`` and ``V`` are filled in from their closed forms rather than by
    numerical inversion.
    """
    if K < 2:
        raise ValueError("K must be at least 2")
    epsilon = _check_epsilon(epsilon)
    rho = _check_rho(rho, K)
    T = (1.0 - epsilon) * np.eye(K) + epsilon / K
    rho_tilde = (1.0 - epsilon) * rho + epsilon / K
    M = ((1.0 - epsilon) * np.diag(rho) + (epsilon / K) * rho[None, :]) / rho_tilde[:, None]
    V = rr_inverse(epsilon, rho)
    return ContaminationModel(T, rho, rho_tilde, M, V, kind="rr", params={"epsilon": epsilon})


def build_two_level_rr(K: int, epsilon: float, nu: float) -> ContaminationModel:
    """Two-level randomized response with uniform label frequencies.

    With probability ``epsilon`` the label is resampled; the new label lands
    in the same half of ``range(K)`` with probability ``(1 + nu) / 2``.  At
    ``nu = 0`` this is plain randomized response, at ``nu = 1`` labels never
    leave their half.
    """
    structure = BlockStructure(K)
    epsilon = _check_epsilon(epsilon)
    nu = float(nu)
    if not 0.0 <= nu <= 1.0:
        raise NuOutOfRange(f"nu must lie in [0, 1], got {nu}")
    same = structure.same_block()
    T = np.where(same, epsilon * (1.0 + nu) / K, epsilon * (1.0 - nu) / K)
    T[np.diag_indices(K)] = 1.0 - epsilon + epsilon * (1.0 + nu) / K
    rho = np.full(K, 1.0 / K)
    # T is symmetric and doubly stochastic, so with uniform rho we get M = T.
    M, rho_tilde = _mixture_from_transition(T, rho)
    V = two_level_rr_inverse(K, epsilon, nu)
    return ContaminationModel(
        T, rho, rho_tilde, M, V, kind="two_level_rr", params={"epsilon": epsilon, "nu": nu}
    )


def build_from_transition(T, rho=None, *, kind: str = "general", params: dict | None = None) -> ContaminationModel:
    """General model from an arbitrary column-stochastic ``T``.

    ``V`` is computed by dense LU inversion of ``M``; the inversion is
    refused when the 2-norm condition number of ``M`` exceeds ``1e10``.
    """
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise NotColumnStochastic(f"T must be square, got shape {T.shape}")
    K = T.shape[0]
    if np.any(T < -_STOCHASTIC_TOL) or np.any(T > 1 + _STOCHASTIC_TOL):
        raise NotColumnStochastic("entries of T must lie in [0, 1]")
    col = T.sum(axis=0)
    if np.any(np.abs(col - 1.0) > _STOCHASTIC_TOL):
        raise NotColumnStochastic(f"columns of T sum to {col}, expected all ones")
    rho = _check_rho(rho, K)
    M, rho_tilde = _mixture_from_transition(T, rho)
    if np.any(rho_tilde <= 0):
        raise SingularM("some contaminated label has zero probability")
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularM(f"mixture matrix is ill-conditioned (cond = {cond:.3g})")
    V = np.linalg.inv(M)
    return ContaminationModel(T, rho, rho_tilde, M, V, kind=kind, params=dict(params or {}))


def block_transition(K: int, epsilon: float) -> np.ndarray:
    """``(1 - eps) I + eps P`` where ``P`` mixes within consecutive label pairs.

    ``P`` is block diagonal with ``K / 2`` blocks equal to ``J_2 / 2`` so that
    every column of the result sums to one.
    """
    if K % 2:
        raise OddK(f"pair blocks need an even K, got {K}")
    epsilon = _check_epsilon(epsilon)
    P = np.kron(np.eye(K // 2), np.full((2, 2), 0.5))
    return (1.0 - epsilon) * np.eye(K) + epsilon * P


def random_u_transition(K: int, epsilon: float, seed: int) -> np.ndarray:
    """``(1 - eps) I + eps U`` with ``U`` i.i.d. uniform, columns normalized."""
    epsilon = _check_epsilon(epsilon)
    U = np.random.default_rng(seed).uniform(size=(K, K))
    U /= U.sum(axis=0, keepdims=True)
    return (1.0 - epsilon) * np.eye(K) + epsilon * U


def corrupt_labels(y, model: ContaminationModel, rng: np.random.Generator) -> np.ndarray:
    """Draw ``Y~_i`` independently from column ``Y_i`` of ``T``."""
    y = np.asarray(y)
    K = model.K
    if y.size and (y.min() < 0 or y.max() >= K):
        raise LabelOutOfRange(f"labels must lie in [0, {K}), got range [{y.min()}, {y.max()}]")
    cdf = np.cumsum(model.T, axis=0)
    cdf[-1, :] = 1.0
    u = rng.uniform(size=y.shape)
    # first row index whose cumulative mass exceeds u, within column y_i
    return (u[..., None] >= cdf[:, y].T.reshape(*y.shape, K)).sum(axis=-1)
