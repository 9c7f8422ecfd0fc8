"""Synthetic data generators and simple probability models.

Every generator returns a :class:`LabeledDataset` together with an
:class:`OracleModel` exposing the exact conditional class probabilities, so
experiments can use either oracle scores or a trained classifier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import BadDimensions, EmptyTrainingSet

__all__ = [
    "LabeledDataset",
    "OracleModel",
    "LogisticModel",
    "gen_hypercube_mixture",
    "gen_logistic",
    "gen_decision_tree",
    "default_tree_leaves",
    "train_logistic",
    "logistic_loss_and_grad",
]


@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    y_noisy: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise BadDimensions(f"X has shape {self.X.shape} but y has {self.y.shape[0]} labels")
        if self.y_noisy is not None:
            self.y_noisy = np.asarray(self.y_noisy, dtype=int)
            if self.y_noisy.shape != self.y.shape:
                raise BadDimensions("y_noisy must match y")

    def __len__(self) -> int:
        return self.y.shape[0]

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.X[idx], self.y[idx], None if self.y_noisy is None else self.y_noisy[idx])


class OracleModel:
    """Exact ``P[Y = k | X = x]`` from a generator's parameters."""

    def __init__(self, kind: str, K: int, predict_fn):
        self.kind = kind
        self.K = K
        self._predict = predict_fn

    def predict_proba(self, X) -> np.ndarray:
        return self._predict(np.asarray(X, dtype=float))


@dataclass
class LogisticModel:
    """Multinomial logistic regression ``softmax(X W + b)``."""

    W: np.ndarray
    b: np.ndarray

    @property
    def K(self) -> int:
        return self.b.size

    def predict_proba(self, X) -> np.ndarray:
        return softmax(np.asarray(X, dtype=float) @ self.W + self.b, axis=1)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def gen_hypercube_mixture(n: int, K: int, d: int = 50, seed: int = 0, n_informative: int = 25, rng: np.random.Generator | None = None):
    """Gaussian clusters on hypercube vertices.

    ``2K`` distinct vertices of ``{-1, +1}^n_informative`` (side length 2)
    are drawn once from ``seed``; cluster ``c`` belongs to class ``c mod K``
    and every sample picks a cluster uniformly, so classes are balanced.
    Features beyond the informative ones are pure ``N(0, 1)`` noise.  The
    cluster layout is fixed by ``seed`` while ``rng`` (default: derived from
    ``seed``) drives the samples.
    """
    if d < n_informative or n_informative < 1:
        raise BadDimensions(f"need d >= n_informative >= 1, got d={d}, n_informative={n_informative}")
    if n_informative < 63 and 2 ** n_informative < 2 * K:
        raise BadDimensions("not enough hypercube vertices for 2K clusters")
    layout = np.random.default_rng([seed, 0])
    centers: list[np.ndarray] = []
    seen = set()
    while len(centers) < 2 * K:
        v = layout.choice([-1.0, 1.0], size=n_informative)
        key = v.tobytes()
        if key not in seen:
            seen.add(key)
            centers.append(v)
    C = np.array(centers)
    cluster_class = np.arange(2 * K) % K

    rng = rng if rng is not None else np.random.default_rng([seed, 1])
    cluster = rng.integers(0, 2 * K, size=n)
    X = rng.standard_normal(size=(n, d))
    X[:, :n_informative] += C[cluster]
    y = cluster_class[cluster]

    def predict(Z):
        sq = ((Z[:, None, :n_informative] - C[None, :, :]) ** 2).sum(axis=2)
        logp = -0.5 * sq
        out = np.empty((Z.shape[0], K))
        for k in range(K):
            out[:, k] = logsumexp(logp[:, cluster_class == k], axis=1)
        return softmax(out, axis=1)

    return LabeledDataset(X, y), OracleModel("hypercube", K, predict)


def gen_logistic(n: int, K: int, d: int = 50, seed: int = 0, W=None, rng: np.random.Generator | None = None):
    """``X ~ N(0, I_d)`` and ``Y | X ~ Multinomial(softmax(X^T W))``.

    ``W`` (``d x K``) is drawn from ``N(0, 1)`` using ``seed`` unless given.
    """
    if W is None:
        W = np.random.default_rng([seed, 0]).standard_normal(size=(d, K))
    W = np.asarray(W, dtype=float)
    if W.shape != (d, K):
        raise BadDimensions(f"W must have shape {(d, K)}, got {W.shape}")
    rng = rng if rng is not None else np.random.default_rng([seed, 1])
    X = rng.standard_normal(size=(n, d))
    P = softmax(X @ W, axis=1)
    y = _sample_rows(P, rng)
    return LabeledDataset(X, y), OracleModel("logistic", K, lambda Z: softmax(Z @ W, axis=1))


def _sample_rows(P: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(P, axis=1)
    cdf[:, -1] = 1.0
    u = rng.uniform(size=(P.shape[0], 1))
    return (u >= cdf).sum(axis=1)


X3_PROBS = (1.0 / 3.0, 2.0 / 3.0)


def default_tree_leaves(K: int = 4) -> np.ndarray:
    """Illustrative leaf distributions for :func:`gen_decision_tree`.

    Returned array has shape ``(2, 2, 2, 4, K)`` indexed by the category codes
    of ``(X1, X2, X3, X4)``.  These values are a placeholder with the intended
    qualitative shape (noise level varies across leaves); they are not taken
    from any published tree.
    """
    leaves = np.empty((2, 2, 2, 4, K))
    for a in range(2):
        for b in range(2):
            for c in range(2):
                for x4 in range(4):
                    main = x4 % K
                    if a == 1:
                        sharp = 0.0  # uninformative branch
                    elif b == 1:
                        sharp = 0.5
                    elif c == 0:
                        sharp = 0.9
                    else:
                        sharp = 0.7
                    p = np.full(K, (1.0 - sharp) / K)
                    p[main] += sharp
                    leaves[a, b, c, x4] = p
    return leaves


def gen_decision_tree(n: int, K: int = 4, d: int = 50, seed: int = 0, leaves=None, x3_probs=X3_PROBS, rng: np.random.Generator | None = None):
    """Heteroscedastic tree model on four categorical features.

    ``X1 in {+1, -1}`` w.p. ``(3/4, 1/4)``, ``X2 in {+1, -2}`` w.p.
    ``(3/4, 1/4)``, ``X3 in {+1, -2}`` w.p. ``x3_probs``, ``X4`` uniform on
    ``{1, ..., 4}`` and the remaining features ``N(0, 1)``.  ``Y | X`` is read
    from ``leaves[code(X1), code(X2), code(X3), X4 - 1]``.
    """
    if d < 4:
        raise BadDimensions("the tree model needs d >= 4")
    leaves = default_tree_leaves(K) if leaves is None else np.asarray(leaves, dtype=float)
    if leaves.shape != (2, 2, 2, 4, K):
        raise BadDimensions(f"leaves must have shape {(2, 2, 2, 4, K)}, got {leaves.shape}")
    x3_probs = np.asarray(x3_probs, dtype=float)
    x3_probs = x3_probs / x3_probs.sum()
    rng = rng if rng is not None else np.random.default_rng(seed)
    a = (rng.uniform(size=n) >= 0.75).astype(int)
    b = (rng.uniform(size=n) >= 0.75).astype(int)
    c = (rng.uniform(size=n) >= x3_probs[0]).astype(int)
    x4 = rng.integers(1, 5, size=n)
    X = rng.standard_normal(size=(n, d))
    X[:, 0] = np.where(a == 0, 1.0, -1.0)
    X[:, 1] = np.where(b == 0, 1.0, -2.0)
    X[:, 2] = np.where(c == 0, 1.0, -2.0)
    X[:, 3] = x4

    def predict(Z):
        ia = (Z[:, 0] < 0).astype(int)
        ib = (Z[:, 1] < 0).astype(int)
        ic = (Z[:, 2] < 0).astype(int)
        i4 = Z[:, 3].astype(int) - 1
        return leaves[ia, ib, ic, i4]

    y = _sample_rows(predict(X), rng)
    return LabeledDataset(X, y), OracleModel("tree", K, predict)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def logistic_loss_and_grad(W, b, X, y):
    """Mean cross-entropy of ``softmax(X W + b)`` and its gradient."""
    n = X.shape[0]
    logits = X @ W + b
    logp = logits - logsumexp(logits, axis=1, keepdims=True)
    loss = -logp[np.arange(n), y].mean()
    G = np.exp(logp)
    G[np.arange(n), y] -= 1.0
    G /= n
    return loss, X.T @ G, G.sum(axis=0)


def train_logistic(train: LabeledDataset, K: int | None = None, epochs: int = 200, lr: float = 0.5, seed: int = 0, use_noisy: bool = True) -> LogisticModel:
    """Full-batch gradient descent on the cross-entropy, starting from zero.

    The noisy labels are used when present (``use_noisy``), as a model would
    be trained in practice.  Full-batch updates make the fit deterministic;
    ``seed`` is accepted for interface symmetry with stochastic trainers.
    """
    if len(train) == 0:
        raise EmptyTrainingSet("cannot train on an empty dataset")
    y = train.y_noisy if (use_noisy and train.y_noisy is not None) else train.y
    K = K if K is not None else int(y.max()) + 1
    d = train.X.shape[1]
    W = np.zeros((d, K))
    b = np.zeros(K)
    for _ in range(epochs):
        _, gW, gb = logistic_loss_and_grad(W, b, train.X, y)
        W -= lr * gW
        b -= lr * gb
    return LogisticModel(W, b)
