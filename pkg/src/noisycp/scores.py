"""Conformity scores and threshold prediction sets.

Scores follow the convention that *smaller is more plausible*: a label ``k``
is included in the prediction set for ``x`` when ``s(x, k) <= tau[k]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch

__all__ = [
    "ScoreMatrix",
    "validate_probabilities",
    "hps_scores",
    "aps_scores",
    "prediction_set",
    "prediction_sets",
]

DEFAULT_JITTER = 1e-6


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    """``n x K`` conformity scores together with how they were built."""

    values: np.ndarray
    kind: str = "hps"
    randomized: bool = False
    jitter: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DimensionMismatch(f"scores must be a 2-d array, got shape {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def K(self) -> int:
        return self.values.shape[1]

    def __getitem__(self, idx) -> "ScoreMatrix":
        return ScoreMatrix(self.values[idx], self.kind, self.randomized, self.jitter)


def validate_probabilities(probs, tol: float = 1e-9) -> np.ndarray:
    """Check an ``n x K`` probability matrix and return it as floats."""
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2:
        raise DimensionMismatch(f"probabilities must be 2-d, got shape {probs.shape}")
    if np.any(probs < -tol) or np.any(probs > 1 + tol):
        raise ValueError("probabilities must lie in [0, 1]")
    sums = probs.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        raise ValueError(f"row {bad[0]} sums to {sums[bad[0]]}, expected 1")
    return probs


def hps_scores(probs, jitter: float = DEFAULT_JITTER, rng: np.random.Generator | None = None) -> ScoreMatrix:
    """Homogeneous scores ``s(x, k) = 1 - pi(x, k)``.

    A uniform perturbation on ``[-jitter/2, jitter/2]`` breaks ties so that
    score distributions are continuous; the result is clamped to ``[0, 1]``.
    With ``jitter=0`` the scores are exact.
    """
    probs = validate_probabilities(probs)
    s = 1.0 - probs
    if jitter > 0:
        rng = rng if rng is not None else np.random.default_rng()
        s = np.clip(s + jitter * (rng.uniform(size=s.shape) - 0.5), 0.0, 1.0)
    return ScoreMatrix(s, kind="hps", jitter=float(jitter))


def aps_scores(probs, randomized: bool = False, rng: np.random.Generator | None = None) -> ScoreMatrix:
    """Generalized inverse quantile (APS) scores.

    The deterministic score of label ``k`` is the total probability of all
    labels ranked at or above ``k`` when sorting by decreasing probability
    (ties go to the smaller label index).  The randomized variant subtracts
    ``U * pi(x, k)`` with one uniform ``U`` per row, the usual recipe for
    randomized adaptive prediction sets.
    """
    probs = validate_probabilities(probs)
    n, K = probs.shape
    order = np.argsort(-probs, axis=1, kind="stable")
    sorted_p = np.take_along_axis(probs, order, axis=1)
    cum = np.cumsum(sorted_p, axis=1)
    s = np.empty_like(probs)
    np.put_along_axis(s, order, cum, axis=1)
    if randomized:
        rng = rng if rng is not None else np.random.default_rng()
        s = s - rng.uniform(size=(n, 1)) * probs
    return ScoreMatrix(np.clip(s, 0.0, 1.0), kind="aps", randomized=randomized)


def prediction_set(score_row, tau) -> np.ndarray:
    """Labels ``k`` with ``score_row[k] <= tau[k]`` (``tau`` may be a scalar)."""
    score_row = np.asarray(score_row, dtype=float)
    tau = np.broadcast_to(np.asarray(tau, dtype=float), score_row.shape) if np.ndim(tau) == 0 else np.asarray(tau, dtype=float)
    if tau.shape != score_row.shape:
        raise DimensionMismatch(f"{score_row.size} scores but {tau.size} thresholds")
    return np.flatnonzero(score_row <= tau)


def prediction_sets(scores, tau) -> np.ndarray:
    """Boolean ``n x K`` membership matrix for a batch of score rows."""
    values = scores.values if isinstance(scores, ScoreMatrix) else np.asarray(scores, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if tau.ndim == 0:
        tau = np.full(values.shape[1], float(tau))
    if tau.shape != (values.shape[1],):
        raise DimensionMismatch(f"{values.shape[1]} labels but {tau.size} thresholds")
    return values <= tau[None, :]
