"""Threshold calibration for conformal classification with noisy labels.

All routines take an ``n x K`` score matrix for the calibration points and
their (possibly contaminated) labels ``y_noisy``.  Label-conditional methods
return a vector ``tau`` of length ``K``; marginal methods return a scalar.

The adaptive methods rely on the empirical distribution functions

    F_l^k(t) = #{i : y_noisy[i] = l, s(X_i, k) <= t} / n_l,

collected in :class:`EcdfFamily`, and on the finite-sample constant
``c(n) = E[max_i (i/n - U_(i))]`` for ``n`` sorted uniforms, which is
estimated by Monte Carlo and cached in :class:`CTable`.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyCalibration,
    EmptyLabelClass,
    GammaOutOfRange,
    MissingDensityBounds,
    NonPositiveFrequency,
    RegionInvariantViolation,
)
from .scores import ScoreMatrix

__all__ = [
    "CTable",
    "EcdfFamily",
    "NoiseRegion",
    "BoundReport",
    "monte_carlo_c",
    "standard_label_conditional",
    "standard_marginal",
    "empirical_inflation",
    "correction_delta",
    "correction_delta_ci",
    "correction_delta_cc",
    "cc_gamma_split",
    "dkw_factor",
    "dkw_deviation_bound",
    "adaptive_label_conditional",
    "adaptive_ci",
    "adaptive_marginal",
    "adaptive_calibration_conditional",
    "rr_region",
    "two_level_region",
    "brr_zeta_upp",
    "theoretical_bounds",
    "rr_worst_case_comparison",
]

# Slack used when comparing an integer rank with a real-valued cutoff, so that
# cutoffs which are integers in exact arithmetic are not pushed up by rounding.
_RANK_TOL = 1e-9
DEFAULT_C_REPS = 10_000


# ---------------------------------------------------------------------------
# c(n)
# ---------------------------------------------------------------------------


def monte_carlo_c(n: int, reps: int, rng: np.random.Generator, chunk_elems: int = 4_000_000) -> float:
    """Monte Carlo estimate of ``c(n) = E[max_i (i/n - U_(i))]``.

    Sorted uniforms are generated through normalized partial sums of
    exponential spacings, which is exact in distribution and avoids a sort.
    """
    if n < 1 or reps < 1:
        raise ValueError("n and reps must be positive")
    i_over_n = np.arange(1, n + 1) / n
    per_chunk = max(1, chunk_elems // (n + 1))
    total = 0.0
    done = 0
    while done < reps:
        m = min(per_chunk, reps - done)
        e = rng.standard_exponential(size=(m, n + 1))
        s = np.cumsum(e, axis=1)
        u = s[:, :n] / s[:, n:]
        total += float(np.max(i_over_n[None, :] - u, axis=1).sum())
        done += m
    return total / reps


class CTable:
    """Read-through cache of ``c(n)`` estimates.

    Each ``n`` gets its own random stream derived from ``(seed, n)``, so the
    cached value does not depend on the order in which entries are requested.
    Lookups are guarded by a lock, so one table can be shared between threads.
    """

    def __init__(self, reps: int = DEFAULT_C_REPS, seed: int = 0, values: dict[int, float] | None = None):
        self.reps = int(reps)
        self.seed = int(seed)
        self._values: dict[int, float] = dict(values or {})
        self._lock = threading.Lock()

    def __call__(self, n: int) -> float:
        return self.get(n)

    def __contains__(self, n: int) -> bool:
        return int(n) in self._values

    def __len__(self) -> int:
        return len(self._values)

    def get(self, n: int) -> float:
        n = int(n)
        with self._lock:
            value = self._values.get(n)
            if value is None:
                rng = np.random.default_rng([self.seed, n])
                value = monte_carlo_c(n, self.reps, rng)
                self._values[n] = value
            return value

    def items(self) -> list[tuple[int, float]]:
        with self._lock:
            return sorted(self._values.items())

    def to_text(self) -> str:
        lines = ["n,c,reps"]
        lines += [f"{n},{value!r},{self.reps}" for n, value in self.items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, seed: int = 0) -> "CTable":
        rows = [line.split(",") for line in text.strip().splitlines()[1:] if line.strip()]
        values = {int(r[0]): float(r[1]) for r in rows}
        reps = int(rows[0][2]) if rows else DEFAULT_C_REPS
        return cls(reps=reps, seed=seed, values=values)


def _c_value(c_table, n: int) -> float:
    if c_table is None:
        c_table = _default_ctable()
    if callable(c_table):
        return float(c_table(n))
    return float(c_table)


_DEFAULT_CTABLE: CTable | None = None


def _default_ctable() -> CTable:
    global _DEFAULT_CTABLE
    if _DEFAULT_CTABLE is None:
        _DEFAULT_CTABLE = CTable()
    return _DEFAULT_CTABLE


# ---------------------------------------------------------------------------
# Empirical CDFs
# ---------------------------------------------------------------------------


def _as_values(scores) -> np.ndarray:
    return scores.values if isinstance(scores, ScoreMatrix) else np.asarray(scores, dtype=float)


class EcdfFamily:
    """Sorted score columns grouped by noisy label.

    ``sorted[l][k]`` holds the ascending scores ``s(X_i, k)`` over the
    calibration points with ``y_noisy[i] == l``.
    """

    def __init__(self, scores, y_noisy, K: int | None = None, require_all: bool = True):
        values = _as_values(scores)
        y = np.asarray(y_noisy, dtype=int)
        if values.shape[0] != y.shape[0]:
            raise ValueError(f"{values.shape[0]} score rows but {y.shape[0]} labels")
        self.K = int(K if K is not None else values.shape[1])
        if values.shape[1] != self.K:
            raise ValueError(f"scores have {values.shape[1]} columns, expected {self.K}")
        if y.size and (y.min() < 0 or y.max() >= self.K):
            raise ValueError("noisy labels out of range")
        self.n = np.bincount(y, minlength=self.K)
        if require_all:
            for l in range(self.K):
                if self.n[l] == 0:
                    raise EmptyLabelClass(l)
        self.sorted = [np.sort(values[y == l], axis=0).T.copy() for l in range(self.K)]

    @property
    def n_star(self) -> int:
        return int(self.n.min())

    def F(self, l: int, k: int, t) -> np.ndarray:
        """``F_l^k(t)``, right-continuous."""
        counts = np.searchsorted(self.sorted[l][k], np.asarray(t, dtype=float), side="right")
        return counts / self.n[l]

    def column(self, k: int, t) -> np.ndarray:
        """All ``F_l^k(t)`` stacked into a ``K x len(t)`` array."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.vstack([self.F(l, k, t) for l in range(self.K)])


# ---------------------------------------------------------------------------
# Standard calibration
# ---------------------------------------------------------------------------


def _conformal_rank(n: int, alpha: float) -> int:
    # ceil((n + 1)(1 - alpha)), written as n(1-a) + (1-a) to match the
    # adaptive cutoff arithmetic bit for bit.
    return math.ceil(n * (1.0 - alpha) + (1.0 - alpha) - _RANK_TOL)


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def _quantile_threshold(sorted_scores: np.ndarray, alpha: float) -> float:
    n = sorted_scores.size
    rank = _conformal_rank(n, alpha)
    return 1.0 if rank > n else float(sorted_scores[rank - 1])


def standard_label_conditional(scores, y_noisy, alpha: float) -> np.ndarray:
    """Per-label split-conformal thresholds.

    ``tau[k]`` is the ``ceil((1 + n_k)(1 - alpha))``-th smallest score
    ``s(X_i, k)`` among the points labelled ``k``, or 1 when that rank
    exceeds ``n_k``.
    """
    alpha = _check_alpha(alpha)
    ecdf = EcdfFamily(scores, y_noisy)
    return np.array([_quantile_threshold(ecdf.sorted[k][k], alpha) for k in range(ecdf.K)])


def _pooled_scores(values: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.sort(values[np.arange(y.size), y])


def standard_marginal(scores, y_noisy, alpha: float) -> float:
    """Single threshold from the pooled scores ``s(X_i, y_noisy[i])``."""
    alpha = _check_alpha(alpha)
    values = _as_values(scores)
    y = np.asarray(y_noisy, dtype=int)
    if y.size == 0:
        raise EmptyCalibration("calibration set is empty")
    return _quantile_threshold(_pooled_scores(values, y), alpha)


# ---------------------------------------------------------------------------
# Adaptive calibration with known V
# ---------------------------------------------------------------------------


def _offdiag(K: int, k: int) -> np.ndarray:
    return np.delete(np.arange(K), k)


def _weighted_gaps(weights: np.ndarray, F: np.ndarray, k: int) -> np.ndarray:
    """``sum_{l != k} weights[l'] * (F_l - F_k)`` with ``weights`` over ``l != k``."""
    others = _offdiag(F.shape[0], k)
    return weights @ (F[others] - F[k][None, :])


def empirical_inflation(ecdf: EcdfFamily, V, k: int, t) -> np.ndarray:
    """Plug-in coverage inflation ``Delta_k(t)``.

    Defined as ``(V_kk - 1) F_k^k(t) + sum_{l != k} V_kl F_l^k(t)``.  Since
    the rows of ``V`` sum to one this is evaluated as
    ``sum_{l != k} V_kl (F_l^k(t) - F_k^k(t))``, which is exactly zero past
    the largest score.
    """
    V = np.asarray(V, dtype=float)
    F = ecdf.column(k, t)
    return _weighted_gaps(V[k, _offdiag(ecdf.K, k)], F, k)


def dkw_factor(K: int, n_star: int) -> float:
    """``min{K sqrt(pi/2), 1/sqrt(n*) + sqrt((log 2K + log n*) / 2)}``."""
    return min(K * math.sqrt(math.pi / 2), 1.0 / math.sqrt(n_star) + math.sqrt((math.log(2 * K) + math.log(n_star)) / 2))


def correction_delta(n_k: int, n_star: int, offdiag_abs_sum: float, c_table=None, K: int = 2) -> float:
    """Finite-sample correction ``delta(n_k, n*)`` for the adaptive method.

    ``c_table`` is a :class:`CTable`, any callable ``n -> c(n)``, or a number
    used directly as ``c(n_k)``.
    """
    c = _c_value(c_table, n_k)
    return c + (2.0 * offdiag_abs_sum / math.sqrt(n_star)) * dkw_factor(K, n_star)


def dkw_deviation_bound(offdiag_abs_sum: float, K: int, n_star: int, eta: float) -> float:
    """Radius ``r`` with ``P[sup_t |Delta_hat_k - Delta_k| > r] <= eta``."""
    return 2.0 * offdiag_abs_sum * math.sqrt((math.log(2 * K) + math.log(1.0 / eta)) / (2 * n_star))


def _first_admissible(sorted_scores: np.ndarray, cutoff: np.ndarray) -> float:
    """``S_(i)`` for the smallest rank ``i`` with ``i >= cutoff[i]``, else 1."""
    ranks = np.arange(1, sorted_scores.size + 1)
    ok = ranks >= cutoff - _RANK_TOL
    if not ok.any():
        return 1.0
    return float(sorted_scores[int(np.argmax(ok))])


def _adaptive_threshold(sorted_scores, inflation, alpha, delta, floor_count=None) -> float:
    """Threshold from ``i/n >= 1 - alpha - Delta_hat(S_(i)) + delta``.

    Both sides are multiplied by ``n``.  With ``floor_count`` set, the
    optimistic rule ``i/n >= 1 - alpha - max{Delta_hat - delta, -floor}`` is
    used, where ``floor_count = n * floor``.
    """
    n = sorted_scores.size
    slack = n * (delta - inflation)
    if floor_count is not None:
        slack = np.minimum(slack, floor_count)
    return _first_admissible(sorted_scores, n * (1.0 - alpha) + slack)


def adaptive_label_conditional(scores, y_noisy, V, alpha: float, c_table=None, optimistic: bool = False) -> np.ndarray:
    """Label-conditional thresholds adapted to a known contamination model.

    For each label ``k`` the sorted scores ``S_(1) <= ... <= S_(n_k)`` are
    scanned for the smallest rank ``i`` with
    ``i/n_k >= 1 - alpha - Delta_hat_k(S_(i)) + delta(n_k, n*)``.  The
    optimistic variant replaces ``-Delta_hat + delta`` by
    ``min{delta - Delta_hat, (1 - alpha)/n_k}``, so it never returns a larger
    threshold than :func:`standard_label_conditional`.
    """
    alpha = _check_alpha(alpha)
    V = np.asarray(V, dtype=float)
    ecdf = EcdfFamily(scores, y_noisy, K=V.shape[0])
    K, n_star = ecdf.K, ecdf.n_star
    tau = np.empty(K)
    for k in range(K):
        S = ecdf.sorted[k][k]
        others = _offdiag(K, k)
        inflation = _weighted_gaps(V[k, others], ecdf.column(k, S), k)
        delta = correction_delta(S.size, n_star, np.abs(V[k, others]).sum(), c_table, K)
        floor = (1.0 - alpha) if optimistic else None
        tau[k] = _adaptive_threshold(S, inflation, alpha, delta, floor)
    return tau


# ---------------------------------------------------------------------------
# Bounded-noise calibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NoiseRegion:
    """Joint confidence box ``[V_low, V_upp]`` for the off-diagonal of ``V``.

    ``V_bar`` holds a-priori absolute bounds on the off-diagonal entries,
    ``alpha_V`` is the miscoverage level of the box and ``zeta_upp`` an upper
    bound on the non-uniformity of ``V_upp - V`` within each row.  Diagonal
    entries of the matrices are ignored.  When ``zeta_upp`` is omitted it
    defaults to the widest interval in each row, which is always valid.
    """

    V_low: np.ndarray
    V_upp: np.ndarray
    V_bar: np.ndarray
    alpha_V: float
    zeta_upp: np.ndarray | None = None

    def __post_init__(self):
        V_low = np.array(self.V_low, dtype=float)
        V_upp = np.array(self.V_upp, dtype=float)
        V_bar = np.abs(np.array(self.V_bar, dtype=float))
        K = V_low.shape[0]
        if V_low.shape != (K, K) or V_upp.shape != (K, K) or V_bar.shape != (K, K):
            raise RegionInvariantViolation("region matrices must all be K x K")
        for arr in (V_low, V_upp, V_bar):
            np.fill_diagonal(arr, 0.0)
        tol = 1e-12
        if np.any(V_low > V_upp + tol):
            raise RegionInvariantViolation("V_low must not exceed V_upp")
        if np.any(np.abs(V_low) > V_bar + tol) or np.any(np.abs(V_upp) > V_bar + tol):
            raise RegionInvariantViolation("|V_low| and |V_upp| must be bounded by |V_bar|")
        if not 0.0 <= self.alpha_V < 1.0:
            raise RegionInvariantViolation(f"alpha_V must lie in [0, 1), got {self.alpha_V}")
        width = V_upp - V_low
        if self.zeta_upp is None:
            zeta = _row_offdiag_max(width)
        else:
            zeta = np.array(self.zeta_upp, dtype=float).reshape(K)
            if np.any(zeta < 0):
                raise RegionInvariantViolation("zeta_upp must be nonnegative")
        for name, value in (("V_low", V_low), ("V_upp", V_upp), ("V_bar", V_bar), ("zeta_upp", zeta)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def K(self) -> int:
        return self.V_low.shape[0]

    @property
    def delta_V(self) -> np.ndarray:
        """Interval widths ``V_upp - V_low`` (zero diagonal)."""
        return self.V_upp - self.V_low

    @property
    def delta_star(self) -> np.ndarray:
        """Widest off-diagonal interval in each row."""
        return _row_offdiag_max(self.delta_V)

    def contains(self, V) -> bool:
        """True when every off-diagonal entry of ``V`` lies in the box."""
        V = np.asarray(V, dtype=float)
        off = ~np.eye(self.K, dtype=bool)
        return bool(np.all(V[off] >= self.V_low[off]) and np.all(V[off] <= self.V_upp[off]))

    @classmethod
    def degenerate(cls, V) -> "NoiseRegion":
        """Zero-width region pinned at a known ``V`` (``alpha_V = 0``)."""
        V = np.asarray(V, dtype=float)
        return cls(V, V, np.abs(V), 0.0, np.zeros(V.shape[0]))


def _row_offdiag_max(A: np.ndarray) -> np.ndarray:
    K = A.shape[0]
    return np.array([A[k, _offdiag(K, k)].max() if K > 1 else 0.0 for k in range(K)])


def _ci_inflation(region: NoiseRegion, F: np.ndarray, k: int) -> np.ndarray:
    K = region.K
    others = _offdiag(K, k)
    term = _weighted_gaps(region.V_upp[k, others], F, k)
    gaps = F[others] - F[k][None, :]
    spread = region.delta_star[k] * (K - 1) * np.abs(F[k] - F[others].mean(axis=0))
    uniformity = abs(region.zeta_upp[k]) * np.abs(gaps).sum(axis=0)
    return term - spread - uniformity


def correction_delta_ci(region: NoiseRegion, k: int, n_k: int, n_star: int, c_table=None) -> float:
    """Finite-sample correction for the bounded-noise method."""
    K = region.K
    others = _offdiag(K, k)
    row = np.abs(region.V_upp[k, others]) + region.delta_V[k, others]
    base = correction_delta(n_k, n_star, row.sum(), c_table, K)
    return base + 2.0 * region.alpha_V * region.V_bar[k, others].sum()


def adaptive_ci(scores, y_noisy, region: NoiseRegion, alpha: float, c_table=None, optimistic: bool = False) -> np.ndarray:
    """Label-conditional thresholds when ``V`` is only known up to a region.

    Same scan as :func:`adaptive_label_conditional`, with the inflation
    replaced by its pessimistic version over the region and the correction
    inflated by the region widths and by ``2 alpha_V sum_l |V_bar_kl|``.
    """
    alpha = _check_alpha(alpha)
    if not isinstance(region, NoiseRegion):
        raise RegionInvariantViolation("region must be a NoiseRegion")
    ecdf = EcdfFamily(scores, y_noisy, K=region.K)
    K, n_star = ecdf.K, ecdf.n_star
    tau = np.empty(K)
    for k in range(K):
        S = ecdf.sorted[k][k]
        inflation = _ci_inflation(region, ecdf.column(k, S), k)
        delta = correction_delta_ci(region, k, S.size, n_star, c_table)
        floor = (1.0 - alpha) if optimistic else None
        tau[k] = _adaptive_threshold(S, inflation, alpha, delta, floor)
    return tau


def _rr_offdiag(xi: float, rho_tilde: np.ndarray, denom_xi: np.ndarray | float | None = None) -> np.ndarray:
    """``-xi rho~_l / (K rho~_k + xi' (K rho~_k - 1))`` for all ``(k, l)``."""
    K = rho_tilde.size
    Kr = K * rho_tilde
    xi_d = xi if denom_xi is None else denom_xi
    V = -xi * rho_tilde[None, :] / (Kr + xi_d * (Kr - 1.0))[:, None]
    np.fill_diagonal(V, 0.0)
    return V


def rr_region(eps_low: float, eps_upp: float, rho_tilde=None, K: int | None = None, eps_bar: float | None = None, alpha_V: float = 0.01) -> NoiseRegion:
    """Confidence region for ``V`` implied by ``epsilon in [eps_low, eps_upp]``.

    Under randomized response with ``xi = eps / (1 - eps)``,
    ``V_kl = -xi rho~_l / (K rho~_k + xi (K rho~_k - 1))`` for ``l != k``.
    Numerator and denominator are bounded separately over the interval; the
    end of the interval used in the denominator depends on the sign of
    ``K rho~_k - 1``.  ``V_bar`` is evaluated at ``eps_bar`` (defaults to
    ``eps_upp``).  Frequencies with ``rho~_k <= eps_bar / K`` cannot arise
    from randomized response and are rejected.
    """
    if rho_tilde is None:
        if K is None:
            raise ValueError("give either rho_tilde or K")
        rho_tilde = np.full(K, 1.0 / K)
    rho_tilde = np.asarray(rho_tilde, dtype=float)
    if np.any(rho_tilde <= 0):
        raise NonPositiveFrequency("contaminated label frequencies must be positive")
    if not 0.0 <= eps_low <= eps_upp < 1.0:
        raise RegionInvariantViolation(f"need 0 <= eps_low <= eps_upp < 1, got [{eps_low}, {eps_upp}]")
    eps_bar = eps_upp if eps_bar is None else eps_bar
    if eps_bar < eps_upp or eps_bar >= 1.0:
        raise RegionInvariantViolation("eps_bar must lie in [eps_upp, 1)")
    K = rho_tilde.size
    if np.any(K * rho_tilde <= eps_bar):
        # rho~_k = (1 - eps) rho_k + eps / K > eps / K under this model
        raise RegionInvariantViolation(
            f"frequencies {rho_tilde} are incompatible with epsilon up to {eps_bar}; "
            "every rho~_k must exceed epsilon / K (lower eps_bar or eps_upp)"
        )
    xl, xu, xb = (e / (1.0 - e) for e in (eps_low, eps_upp, eps_bar))
    grows = (K * rho_tilde - 1.0) >= 0  # denominator increasing in xi
    V_upp = _rr_offdiag(xl, rho_tilde, np.where(grows, xu, xl))
    V_low = _rr_offdiag(xu, rho_tilde, np.where(grows, xl, xu))
    V_bar = np.abs(_rr_offdiag(xb, rho_tilde, np.where(grows, 0.0, xb)))
    uniform = np.allclose(rho_tilde, 1.0 / K, rtol=0, atol=1e-12)
    zeta = np.zeros(K) if uniform else None
    return NoiseRegion(V_low, V_upp, V_bar, alpha_V, zeta)


def _brr_within(xi, nu, K):
    return -(xi / K) * (1.0 + nu * (1.0 + 2.0 * xi)) / (1.0 + nu * xi)


def _brr_cross(xi, nu, K):
    return -(xi / K) * (1.0 - nu) / (1.0 + nu * xi)


def brr_zeta_upp(K: int, eps_low: float, eps_upp: float, nu_low: float, nu_upp: float) -> float:
    """Upper bound on ``max_l (V_upp - V)_kl - min_l (V_upp - V)_kl`` (two-level model).

    The first term is ``g(xi_upp, nu_upp) - g(xi_low, nu_low)`` for
    ``g(xi, nu) = 2 xi nu (1 + xi) / (K (1 + nu xi))``, expanded over a common
    denominator; its leading numerator term is ``nu_upp xi_upp - nu_low xi_low``.
    """
    xl, xu = eps_low / (1.0 - eps_low), eps_upp / (1.0 - eps_upp)
    nl, nu_ = nu_low, nu_upp
    first = (2.0 / K) * ((nu_ * xu - nl * xl) + (nu_ * xu**2 - nl * xl**2) + nl * nu_ * xl * xu * (xu - xl)) / (
        (1.0 + nu_ * xu) * (1.0 + nl * xl)
    )
    second = (xl / K) * (nu_ - nl) * (1.0 + xl) / ((1.0 + nl * xl) * (1.0 + nu_ * xl))
    return first + second


def two_level_region(
    K: int,
    eps_low: float,
    eps_upp: float,
    nu_low: float,
    nu_upp: float,
    eps_bar: float | None = None,
    alpha_V: float = 0.01,
) -> NoiseRegion:
    """Region for the two-level model from intervals on ``epsilon`` and ``nu``.

    Within-block entries of ``V`` decrease in both parameters; cross-block
    entries decrease in ``epsilon`` and increase in ``nu``, which fixes which
    end of each interval produces each bound.
    """
    from .contamination import BlockStructure

    same = BlockStructure(K).same_block()
    if not (0.0 <= eps_low <= eps_upp < 1.0 and 0.0 <= nu_low <= nu_upp <= 1.0):
        raise RegionInvariantViolation("invalid epsilon or nu interval")
    eps_bar = eps_upp if eps_bar is None else eps_bar
    if eps_bar < eps_upp or eps_bar >= 1.0:
        raise RegionInvariantViolation("eps_bar must lie in [eps_upp, 1)")
    xl, xu, xb = (e / (1.0 - e) for e in (eps_low, eps_upp, eps_bar))
    V_upp = np.where(same, _brr_within(xl, nu_low, K), _brr_cross(xl, nu_upp, K))
    V_low = np.where(same, _brr_within(xu, nu_upp, K), _brr_cross(xu, nu_low, K))
    V_bar = np.where(same, np.abs(_brr_within(xb, 1.0, K)), np.abs(_brr_cross(xb, 0.0, K)))
    zeta = np.full(K, brr_zeta_upp(K, eps_low, eps_upp, nu_low, nu_upp))
    return NoiseRegion(V_low, V_upp, V_bar, alpha_V, zeta)


# ---------------------------------------------------------------------------
# Marginal and calibration-conditional variants
# ---------------------------------------------------------------------------


def adaptive_marginal(
    scores,
    y_noisy,
    V,
    rho_tilde,
    alpha: float,
    c_table=None,
    optimistic: bool = False,
) -> float:
    """Single threshold with marginal coverage under a known ``V``.

    The clean label frequencies are recovered as ``rho = M^T rho~`` with
    ``M = V^{-1}``.
    """
    alpha = _check_alpha(alpha)
    V = np.asarray(V, dtype=float)
    K = V.shape[0]
    rho_tilde = np.asarray(rho_tilde, dtype=float)
    if rho_tilde.shape != (K,) or np.any(rho_tilde <= 0):
        raise NonPositiveFrequency("rho_tilde must be a strictly positive K-vector")
    values = _as_values(scores)
    y = np.asarray(y_noisy, dtype=int)
    if y.size == 0:
        raise EmptyCalibration("calibration set is empty")
    ecdf = EcdfFamily(values, y, K=K)
    rho = np.linalg.inv(V).T @ rho_tilde
    S = _pooled_scores(values, y)
    n_cal = S.size
    inflation = np.zeros(n_cal)
    for k in range(K):
        F = ecdf.column(k, S)
        others = _offdiag(K, k)
        inflation += (rho[k] * V[k, k] - rho_tilde[k]) * F[k] + rho[k] * (V[k, others] @ F[others])
    A = np.abs(V)
    max_off = float((A.sum(axis=1) - np.diag(A)).max())
    n_star = ecdf.n_star
    factor = min(K**2 * math.sqrt(math.pi / 2), 1.0 / math.sqrt(n_star) + math.sqrt((math.log(2 * K**2) + math.log(n_star)) / 2))
    delta = _c_value(c_table, n_cal) + (2 * max_off + np.abs(rho - rho_tilde).sum()) / math.sqrt(n_star) * factor
    floor = (1.0 - alpha) if optimistic else None
    return _adaptive_threshold(S, inflation, alpha, delta, floor)


def cc_gamma_split(V_row, k: int, gamma: float) -> tuple[float, float]:
    """Split ``gamma`` into ``(gamma_1, gamma_2)`` for row ``k`` of ``V``."""
    A = np.abs(np.asarray(V_row, dtype=float))
    s_all = A.sum()
    s_off = s_all - A[k]
    share = s_off / s_all if s_all > 0 else 0.0
    return gamma * (1.0 - 0.5 * share), 0.5 * gamma * share


def correction_delta_cc(n_k: int, n_star: int, V_row, k: int, gamma: float) -> float:
    """Calibration-conditional correction ``delta^cc(n_k, n*, gamma)``."""
    if not 0.0 < gamma < 1.0:
        raise GammaOutOfRange(f"gamma must lie in (0, 1), got {gamma}")
    V_row = np.asarray(V_row, dtype=float)
    K = V_row.size
    g1, g2 = cc_gamma_split(V_row, k, gamma)
    s_off = np.abs(V_row).sum() - abs(V_row[k])
    delta = math.sqrt(math.log(1.0 / g1) / (2 * n_k))
    if s_off > 0:
        delta += 2.0 * s_off * math.sqrt((math.log(2 * K) + math.log(1.0 / g2)) / (2 * n_star))
    return delta


def adaptive_calibration_conditional(scores, y_noisy, V, alpha: float, gamma: float, optimistic: bool = False) -> np.ndarray:
    """Thresholds holding with probability ``1 - gamma`` over the calibration draw.

    The optimistic floor is ``sqrt(log(1/gamma) / (2 n_k))``, the usual
    clean-data adjustment of the nominal level.
    """
    alpha = _check_alpha(alpha)
    if not 0.0 < gamma < 1.0:
        raise GammaOutOfRange(f"gamma must lie in (0, 1), got {gamma}")
    V = np.asarray(V, dtype=float)
    ecdf = EcdfFamily(scores, y_noisy, K=V.shape[0])
    K, n_star = ecdf.K, ecdf.n_star
    tau = np.empty(K)
    for k in range(K):
        S = ecdf.sorted[k][k]
        n_k = S.size
        others = _offdiag(K, k)
        inflation = _weighted_gaps(V[k, others], ecdf.column(k, S), k)
        delta = correction_delta_cc(n_k, n_star, V[k], k, gamma)
        floor = n_k * math.sqrt(math.log(1.0 / gamma) / (2 * n_k)) if optimistic else None
        tau[k] = _adaptive_threshold(S, inflation, alpha, delta, floor)
    return tau


# ---------------------------------------------------------------------------
# Theoretical bounds
# ---------------------------------------------------------------------------


@dataclass
class BoundReport:
    """Coverage bounds per label; ``None`` marks a bound that was not requested."""

    worst_lower: np.ndarray
    worst_upper: np.ndarray
    worst_lower_raw: np.ndarray
    worst_upper_raw: np.ndarray
    worst_gap: np.ndarray
    phi: np.ndarray | None = None
    phi_ci: np.ndarray | None = None
    phi_marg: float | None = None
    phi_cc: np.ndarray | None = None
    f_max: float | None = None
    f_min: float | None = None

    def to_text(self) -> str:
        cols = ["label", "worst_lower", "worst_upper", "worst_gap", "phi", "phi_ci", "phi_cc"]
        lines = [",".join(cols)]
        for k in range(self.worst_lower.size):
            row = [str(k)]
            for arr in (self.worst_lower, self.worst_upper, self.worst_gap, self.phi, self.phi_ci, self.phi_cc):
                row.append("" if arr is None else repr(float(arr[k])))
            lines.append(",".join(row))
        if self.phi_marg is not None:
            lines.append(f"# phi_marg={self.phi_marg!r}")
        return "\n".join(lines) + "\n"


def _harmonic(n: int) -> float:
    return float(np.sum(1.0 / np.arange(1, n + 1)))


def theoretical_bounds(
    model,
    n_k,
    n_star: int,
    alpha: float,
    *,
    gamma: float | None = None,
    f_max: float | None = None,
    f_min: float | None = None,
    c_table=None,
    V_true=None,
    rho_tilde=None,
    n_cal: int | None = None,
    with_phi: bool = False,
) -> BoundReport:
    """Evaluate the coverage bound formulas for a model or a noise region.

    ``model`` is ``V``, a contamination model or a :class:`NoiseRegion`.  The worst-case
    interval for standard calibration is always reported (using ``|V_bar|``
    for a region).  The upper-bound sequences ``phi`` need ``f_max`` and
    ``f_min``; they are computed when both are supplied, and
    ``with_phi=True`` makes their absence an error.  ``phi_marg`` also needs
    ``rho_tilde`` and ``n_cal``; ``phi_cc`` also needs ``gamma``.
    """
    alpha = _check_alpha(alpha)
    have_density = f_max is not None and f_min is not None
    if with_phi and not have_density:
        raise MissingDensityBounds("f_max and f_min are required for the phi bounds")
    if have_density and not (f_max >= f_min > 0):
        raise MissingDensityBounds("need f_max >= f_min > 0")

    region = model if isinstance(model, NoiseRegion) else None
    model = getattr(model, "V", model)
    if region is not None:
        V = np.asarray(V_true, dtype=float) if V_true is not None else None
        off_abs = region.V_bar.sum(axis=1)
        K = region.K
    else:
        V = np.asarray(model, dtype=float)
        K = V.shape[0]
        A = np.abs(V)
        off_abs = A.sum(axis=1) - np.diag(A)
    n_k = np.broadcast_to(np.asarray(n_k, dtype=float), (K,))

    lower_raw = 1.0 - alpha - off_abs
    upper_raw = 1.0 - alpha + 1.0 / (n_k + 1) + off_abs
    report = BoundReport(
        worst_lower=np.clip(lower_raw, 0.0, 1.0),
        worst_upper=np.clip(upper_raw, 0.0, 1.0),
        worst_lower_raw=lower_raw,
        worst_upper_raw=upper_raw,
        worst_gap=1.0 / (n_k + 1) + 2.0 * off_abs,
        f_max=f_max,
        f_min=f_min,
    )
    if not have_density:
        return report
    ratio = f_max / f_min

    if region is None:
        phi = np.empty(K)
        for k in range(K):
            nk = int(n_k[k])
            delta = correction_delta(nk, n_star, off_abs[k], c_table, K)
            phi[k] = (
                2 * delta
                + 1.0 / n_star
                + (1.0 + 2.0 * off_abs[k] * ratio * _harmonic(nk + 1)) / nk
                + (V[k, k] + off_abs[k]) / (nk + 1)
            )
        report.phi = phi
        if rho_tilde is not None and n_cal is not None:
            report.phi_marg = _phi_marg(V, np.asarray(rho_tilde, dtype=float), n_cal, n_star, ratio, c_table)
        if gamma is not None:
            report.phi_cc = np.array([_phi_cc(V[k], k, int(n_k[k]), n_star, gamma, ratio) for k in range(K)])
    else:
        if V is None:
            # without the true V, its off-diagonal mass is bounded by V_bar
            true_off = region.V_bar.sum(axis=1)
        else:
            A = np.abs(V)
            true_off = A.sum(axis=1) - np.diag(A)
        phi_ci = np.empty(K)
        for k in range(K):
            nk = int(n_k[k])
            others = _offdiag(K, k)
            row = (np.abs(region.V_upp[k, others]) + region.delta_V[k, others]).sum()
            phi_ci[k] = (
                1.0 / n_star
                + (1.0 + 4.0 * region.V_bar[k, others].sum()) * region.alpha_V
                + 2.0 * _c_value(c_table, nk)
                + (K - 1) * (2.0 * region.delta_star[k] + abs(region.zeta_upp[k]))
                + 4.0 * row / math.sqrt(n_star) * dkw_factor(K, n_star)
                + (2.0 / nk) * (1.0 + true_off[k] + true_off[k] * ratio * _harmonic(nk + 1))
            )
        report.phi_ci = phi_ci
    return report


def _phi_marg(V, rho_tilde, n_cal, n_star, ratio, c_table) -> float:
    K = V.shape[0]
    rho = np.linalg.inv(V).T @ rho_tilde
    A = np.abs(V)
    off = A.sum(axis=1) - np.diag(A)
    factor = min(K**2 * math.sqrt(math.pi / 2), 1.0 / math.sqrt(n_star) + math.sqrt((math.log(2 * K**2) + math.log(n_star)) / 2))
    delta = _c_value(c_table, n_cal) + (2 * off.max() + np.abs(rho - rho_tilde).sum()) / math.sqrt(n_star) * factor
    w = rho / rho_tilde
    signed_off = V.sum(axis=1) - np.diag(V)
    return float(
        2 * delta
        + 1.0 / n_cal
        + 1.0 / n_star
        + (w * A.sum(axis=1)).max() / n_cal
        + _harmonic(n_cal + 1) / n_cal * (((rho * np.diag(V) - rho_tilde) / rho_tilde).max() + ratio * (w * signed_off).max())
    )


def _phi_cc(V_row, k, n_k, n_star, gamma, ratio) -> float:
    A = np.abs(V_row)
    K = A.size
    s_all = A.sum()
    s_off = s_all - A[k]
    v_bar = 0.5 * (1.0 - 0.5 * s_off / s_all)
    g = 3.0 / (gamma * v_bar)
    return (
        correction_delta_cc(n_k, n_star, V_row, k, gamma)
        + (1.0 / n_k) * (1.0 + (V_row[k] + s_off) / (gamma * v_bar))
        + math.sqrt(math.log(g) / (2 * n_k))
        + 2.0 * s_off * math.sqrt((math.log(2 * K) + math.log(g)) / (2 * n_star))
        + 2.0 * s_off * ratio / n_k * (math.log(n_k + 1) + g * _harmonic(n_k + 1))
    )


def rr_worst_case_comparison(K: int, epsilon: float, alpha: float, n_k: int) -> dict[str, float]:
    """Worst-case lower bounds under randomized response with uniform labels.

    Returns the bound from the inverse-mixture argument
    (``1 - alpha - eps/(1-eps) (1 - 1/K)``) next to the Huber-contamination
    bounds with ``eps' = eps (1 - 1/K)``: additive ``1 - alpha - eps'`` and
    multiplicative ``1 - alpha / (1 - eps')``.
    """
    eps_h = epsilon * (1.0 - 1.0 / K)
    ours = epsilon / (1.0 - epsilon) * (1.0 - 1.0 / K)
    return {
        "ours_lower": 1.0 - alpha - ours,
        "ours_upper": 1.0 - alpha + 1.0 / (n_k + 1) + ours,
        "huber_lower": 1.0 - alpha - eps_h,
        "huber_upper": 1.0 - alpha + 1.0 / (n_k + 1) + eps_h,
        "huber_mult_lower": 1.0 - alpha / (1.0 - eps_h),
    }
