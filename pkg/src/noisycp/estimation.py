"""Fitting the contamination model from a small clean sample.

The inputs are classifier outputs on two datasets:

* ``clean = (probs0, y0)``: a small sample with true labels,
* ``noisy_b = (probs1, y_noisy1)``: a large sample with contaminated labels.

Writing ``f(x)`` for the most likely label, the accuracy matrices
``Q~[l, k] = P[f = k | Y~ = l]`` and ``Q[l, k] = P[f = k | Y = l]`` satisfy
``Q~ = M Q``, hence ``V = Q Q~^{-1}``.  ``Q~`` is estimated from the large
noisy sample and treated as exact.  The uncertainty in ``Q`` is propagated by
a parametric bootstrap over the multinomial joint frequencies
``lambda[l, k] = P[Y = l, f = k]`` of the clean sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calibration import NoiseRegion, rr_region, two_level_region
from .contamination import BlockStructure, two_level_rr_inverse
from .errors import (
    ClassifierAtChance,
    DegenerateDenominator,
    EmptyCleanClass,
    EpsilonOutOfRange,
    OddK,
    SingularQtilde,
)

__all__ = [
    "FitSummary",
    "confusion_frequencies",
    "fit_general",
    "fit_rr",
    "fit_two_level_rr",
    "rr_epsilon",
    "two_level_forward",
    "two_level_solve",
    "epsilon_from_mismatch",
]

COND_LIMIT = 1e10
_CHANCE_TOL = 1e-6
_DENOM_TOL = 1e-6


@dataclass
class FitSummary:
    """Result of a contamination-model fit.

    ``estimates`` maps parameter names (``epsilon``, ``nu``) to point
    estimates and ``intervals`` maps them to ``(low, upp)`` bootstrap
    intervals.  ``V_hat`` is the plug-in estimate of ``V`` and ``region`` the
    joint confidence region at level ``1 - alpha_V``.
    """

    kind: str
    K: int
    Q_tilde: np.ndarray
    Q: np.ndarray
    lam: np.ndarray
    psi: float
    psi_tilde: float
    V_hat: np.ndarray
    region: NoiseRegion
    alpha_V: float
    B: int
    n_clean: int
    phi: float | None = None
    phi_tilde: float | None = None
    estimates: dict = field(default_factory=dict)
    intervals: dict = field(default_factory=dict)
    n_valid_boot: int = 0

    def to_text(self) -> str:
        lines = [
            f"kind={self.kind}",
            f"K={self.K}",
            f"n_clean={self.n_clean}",
            f"B={self.B}",
            f"n_valid_boot={self.n_valid_boot}",
            f"alpha_V={self.alpha_V!r}",
            f"psi={self.psi!r}",
            f"psi_tilde={self.psi_tilde!r}",
        ]
        if self.phi is not None:
            lines += [f"phi={self.phi!r}", f"phi_tilde={self.phi_tilde!r}"]
        for name, value in self.estimates.items():
            lo, hi = self.intervals.get(name, (float("nan"), float("nan")))
            lines += [f"{name}={value!r}", f"{name}_low={lo!r}", f"{name}_upp={hi!r}"]
        lines.append("V_hat=" + ",".join(repr(float(v)) for v in self.V_hat.ravel()))
        lines.append("V_low=" + ",".join(repr(float(v)) for v in self.region.V_low.ravel()))
        lines.append("V_upp=" + ",".join(repr(float(v)) for v in self.region.V_upp.ravel()))
        return "\n".join(lines) + "\n"


def _predictions(outputs) -> np.ndarray:
    arr = np.asarray(outputs)
    return np.argmax(arr, axis=1) if arr.ndim == 2 else arr.astype(int)


def confusion_frequencies(outputs, labels, K: int) -> np.ndarray:
    """Joint frequencies ``lam[l, k] = #{label = l, f = k} / n``."""
    pred = _predictions(outputs)
    labels = np.asarray(labels, dtype=int)
    counts = np.zeros((K, K))
    np.add.at(counts, (labels, pred), 1.0)
    return counts / max(labels.size, 1)


def _infer_K(*samples) -> int:
    K = 0
    for outputs, labels in samples:
        outputs = np.asarray(outputs)
        K = max(K, outputs.shape[1] if outputs.ndim == 2 else int(outputs.max()) + 1, int(np.max(labels)) + 1)
    return K


def _row_normalize(lam: np.ndarray) -> np.ndarray:
    return lam / lam.sum(axis=-1, keepdims=True)


def _clean_lambda(clean, K: int) -> tuple[np.ndarray, int]:
    outputs, y = clean
    y = np.asarray(y, dtype=int)
    lam = confusion_frequencies(outputs, y, K)
    for l in range(K):
        if lam[l].sum() == 0:
            raise EmptyCleanClass(l)
    return lam, y.size


def _resample(lam: np.ndarray, n: int, B: int, rng: np.random.Generator) -> np.ndarray:
    K = lam.shape[0]
    draws = rng.multinomial(n, lam.ravel(), size=B)
    return draws.reshape(B, K, K) / n


def _percentile(values: np.ndarray, level: float) -> tuple[float, float]:
    lo, hi = np.quantile(values, [level / 2, 1 - level / 2], axis=0)
    return lo, hi


def fit_general(clean, noisy_b, alpha_V: float = 0.01, B: int = 1000, rng: np.random.Generator | None = None, K: int | None = None, V_bar=None) -> FitSummary:
    """Unstructured fit ``V = Q Q~^{-1}`` with a Bonferroni bootstrap box.

    Each of the ``K(K-1)`` off-diagonal entries gets a percentile interval at
    level ``alpha_V / (K(K-1))``.  ``V_bar`` defaults to the entrywise
    largest magnitude in the box, since no structural bound is available.
    """
    rng = rng if rng is not None else np.random.default_rng()
    K = K if K is not None else _infer_K(clean, noisy_b)
    lam, n0 = _clean_lambda(clean, K)
    lam_tilde = confusion_frequencies(noisy_b[0], noisy_b[1], K)
    if np.any(lam_tilde.sum(axis=1) == 0):
        raise SingularQtilde("a noisy label class is missing from the evaluation sample")
    Q_tilde = _row_normalize(lam_tilde)
    cond = np.linalg.cond(Q_tilde)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularQtilde(f"Q_tilde is ill-conditioned (cond = {cond:.3g})")
    Qt_inv = np.linalg.inv(Q_tilde)
    Q = _row_normalize(lam)
    V_hat = Q @ Qt_inv

    boot = _resample(lam, n0, B, rng)
    valid = np.all(boot.sum(axis=2) > 0, axis=1)
    V_boot = _row_normalize(boot[valid]) @ Qt_inv
    m = K * (K - 1)
    V_low, V_upp = _percentile(V_boot, alpha_V / m)
    V_low = np.minimum(V_low, V_hat)
    V_upp = np.maximum(V_upp, V_hat)
    if V_bar is None:
        V_bar = np.maximum(np.abs(V_low), np.abs(V_upp))
    region = NoiseRegion(V_low, V_upp, V_bar, alpha_V)
    return FitSummary(
        kind="general",
        K=K,
        Q_tilde=Q_tilde,
        Q=Q,
        lam=lam,
        psi=float(np.trace(lam)),
        psi_tilde=float(np.trace(lam_tilde)),
        V_hat=V_hat,
        region=region,
        alpha_V=alpha_V,
        B=B,
        n_clean=n0,
        n_valid_boot=int(valid.sum()),
    )


def rr_epsilon(psi, psi_tilde, K: int):
    """``epsilon = (psi - psi~) / (psi - 1/K)`` (vectorized, unclamped)."""
    psi = np.asarray(psi, dtype=float)
    return (psi - psi_tilde) / (psi - 1.0 / K)


def epsilon_from_mismatch(rate: float, K: int) -> float:
    """``epsilon`` whose expected label mismatch rate ``eps (1 - 1/K)`` equals ``rate``."""
    eps = rate / (1.0 - 1.0 / K)
    if not 0.0 <= eps < 1.0:
        raise EpsilonOutOfRange(f"mismatch rate {rate} implies epsilon = {eps}")
    return eps


def _check_eps_bar(eps_bar: float) -> float:
    if not 0.0 < eps_bar < 1.0:
        raise EpsilonOutOfRange(f"eps_bar must lie in (0, 1), got {eps_bar}")
    return float(eps_bar)


def _rr_V(eps: float, rho_tilde: np.ndarray) -> np.ndarray:
    V = rr_region(eps, eps, rho_tilde).V_upp.copy()
    V[np.diag_indices_from(V)] = 1.0 - V.sum(axis=1)
    return V


def fit_rr(
    clean,
    noisy_b,
    K: int,
    alpha_V: float = 0.01,
    B: int = 1000,
    eps_bar: float = 0.5,
    rng: np.random.Generator | None = None,
    rho_tilde=None,
) -> FitSummary:
    """Randomized-response fit of ``epsilon`` from top-1 accuracies.

    ``psi`` is the accuracy of ``f`` on the clean sample and ``psi~`` its
    agreement with the noisy labels; ``epsilon = (psi - psi~)/(psi - 1/K)``.
    The interval is a percentile bootstrap at level ``alpha_V``, clamped to
    ``[0, eps_bar]``.  ``rho_tilde`` defaults to the noisy label frequencies
    of ``noisy_b``.
    """
    rng = rng if rng is not None else np.random.default_rng()
    eps_bar = _check_eps_bar(eps_bar)
    lam, n0 = _clean_lambda(clean, K)
    lam_tilde = confusion_frequencies(noisy_b[0], noisy_b[1], K)
    psi = float(np.trace(lam))
    psi_tilde = float(np.trace(lam_tilde))
    if psi - 1.0 / K < _CHANCE_TOL:
        raise ClassifierAtChance(f"clean accuracy {psi:.4f} does not exceed chance 1/K = {1 / K:.4f}")
    eps_hat = float(np.clip(rr_epsilon(psi, psi_tilde, K), 0.0, eps_bar))

    boot = _resample(lam, n0, B, rng)
    psi_b = np.trace(boot, axis1=1, axis2=2)
    valid = psi_b - 1.0 / K >= _CHANCE_TOL
    eps_b = np.clip(rr_epsilon(psi_b[valid], psi_tilde, K), 0.0, eps_bar)
    lo, hi = _percentile(eps_b, alpha_V)
    lo, hi = float(min(lo, eps_hat)), float(max(hi, eps_hat))

    if rho_tilde is None:
        rho_tilde = np.bincount(np.asarray(noisy_b[1], dtype=int), minlength=K) / len(noisy_b[1])
    rho_tilde = np.asarray(rho_tilde, dtype=float)
    region = rr_region(lo, hi, rho_tilde, eps_bar=eps_bar, alpha_V=alpha_V)
    lam_rows = lam_tilde.sum(axis=1, keepdims=True)
    return FitSummary(
        kind="rr",
        K=K,
        Q_tilde=np.divide(lam_tilde, lam_rows, out=np.zeros_like(lam_tilde), where=lam_rows > 0),
        Q=_row_normalize(lam),
        lam=lam,
        psi=psi,
        psi_tilde=psi_tilde,
        V_hat=_rr_V(eps_hat, rho_tilde),
        region=region,
        alpha_V=alpha_V,
        B=B,
        n_clean=n0,
        estimates={"epsilon": eps_hat},
        intervals={"epsilon": (lo, hi)},
        n_valid_boot=int(valid.sum()),
    )


def _block_accuracy(lam: np.ndarray) -> np.ndarray:
    K = lam.shape[-1]
    same = BlockStructure(K).same_block()
    return (lam * same).sum(axis=(-2, -1))


def two_level_forward(epsilon: float, nu: float, psi: float, phi: float, K: int) -> tuple[float, float]:
    """Noisy accuracies ``(psi~, phi~)`` implied by the two-level model.

    ``psi~ = (1 - eps) psi + eps/K + (eps nu / K)(2 phi - 1)`` and
    ``phi~ = phi - eps (1 - nu)(phi - 1/2)``.
    """
    psi_t = (1.0 - epsilon) * psi + epsilon / K + (epsilon * nu / K) * (2.0 * phi - 1.0)
    phi_t = phi - epsilon * (1.0 - nu) * (phi - 0.5)
    return psi_t, phi_t


def two_level_solve(psi, psi_tilde, phi, phi_tilde, K: int, strict: bool = True):
    """Invert :func:`two_level_forward` for ``(epsilon, nu)`` (vectorized).

    Where the implied ``epsilon`` is zero, ``nu`` is not identified and is
    reported as 0.  With ``strict`` a degenerate denominator raises
    :class:`DegenerateDenominator`; otherwise the entry becomes ``nan``.
    """
    psi, psi_tilde, phi, phi_tilde = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (psi, psi_tilde, phi, phi_tilde)))
    half = K / 2.0
    den_eps = half * psi - phi
    den_phi = phi - 0.5
    bad = (np.abs(den_eps) < _DENOM_TOL) | (np.abs(den_phi) < _DENOM_TOL)
    if strict and np.any(bad):
        raise DegenerateDenominator("(K/2) psi - phi or phi - 1/2 is numerically zero")
    num = half * (psi - psi_tilde) - (phi - phi_tilde)
    with np.errstate(divide="ignore", invalid="ignore"):
        eps = num / den_eps
        nu = 1.0 - (phi - phi_tilde) * den_eps / (den_phi * num)
    nu = np.where(np.abs(num) < 1e-15, 0.0, nu)
    eps = np.where(bad, np.nan, eps)
    nu = np.where(bad, np.nan, nu)
    if eps.ndim == 0:
        return float(eps), float(nu)
    return eps, nu


def fit_two_level_rr(
    clean,
    noisy_b,
    K: int,
    alpha_V: float = 0.01,
    B: int = 1000,
    eps_bar: float = 0.5,
    rng: np.random.Generator | None = None,
) -> FitSummary:
    """Two-level fit of ``(epsilon, nu)`` from top-1 and block accuracies.

    ``alpha_V`` is split evenly between the two parameters so that the two
    percentile intervals hold jointly.
    """
    if K % 2:
        raise OddK(f"two-level model needs an even K, got {K}")
    rng = rng if rng is not None else np.random.default_rng()
    eps_bar = _check_eps_bar(eps_bar)
    lam, n0 = _clean_lambda(clean, K)
    lam_tilde = confusion_frequencies(noisy_b[0], noisy_b[1], K)
    psi, phi = float(np.trace(lam)), float(_block_accuracy(lam))
    psi_t, phi_t = float(np.trace(lam_tilde)), float(_block_accuracy(lam_tilde))
    eps, nu = two_level_solve(psi, psi_t, phi, phi_t, K)
    eps_hat = float(np.clip(eps, 0.0, eps_bar))
    nu_hat = float(np.clip(nu, 0.0, 1.0))

    boot = _resample(lam, n0, B, rng)
    eps_b, nu_b = two_level_solve(np.trace(boot, axis1=1, axis2=2), psi_t, _block_accuracy(boot), phi_t, K, strict=False)
    valid = np.isfinite(eps_b) & np.isfinite(nu_b)
    eps_b = np.clip(eps_b[valid], 0.0, eps_bar)
    nu_b = np.clip(nu_b[valid], 0.0, 1.0)
    e_lo, e_hi = _percentile(eps_b, alpha_V / 2)
    n_lo, n_hi = _percentile(nu_b, alpha_V / 2)
    e_lo, e_hi = float(min(e_lo, eps_hat)), float(max(e_hi, eps_hat))
    n_lo, n_hi = float(min(n_lo, nu_hat)), float(max(n_hi, nu_hat))
    region = two_level_region(K, e_lo, e_hi, n_lo, n_hi, eps_bar=eps_bar, alpha_V=alpha_V)
    lam_rows = lam_tilde.sum(axis=1, keepdims=True)
    return FitSummary(
        kind="two_level_rr",
        K=K,
        Q_tilde=np.divide(lam_tilde, lam_rows, out=np.zeros_like(lam_tilde), where=lam_rows > 0),
        Q=_row_normalize(lam),
        lam=lam,
        psi=psi,
        psi_tilde=psi_t,
        phi=phi,
        phi_tilde=phi_t,
        V_hat=two_level_rr_inverse(K, eps_hat, nu_hat),
        region=region,
        alpha_V=alpha_V,
        B=B,
        n_clean=n0,
        estimates={"epsilon": eps_hat, "nu": nu_hat},
        intervals={"epsilon": (e_lo, e_hi), "nu": (n_lo, n_hi)},
        n_valid_boot=int(valid.sum()),
    )
