"""Recover the randomized-response level from a small clean set and a large noisy one.

A logistic oracle plays the role of a pre-trained classifier.  Its accuracy
on clean labels and its agreement with noisy labels pin down epsilon, and a
multinomial bootstrap gives the interval.
"""

import numpy as np

from noisycp.contamination import build_rr, corrupt_labels
from noisycp.estimation import fit_general, fit_rr
from noisycp.synth import gen_logistic


def main(epsilon: float = 0.2, K: int = 4) -> None:
    rng = np.random.default_rng(0)
    clean, oracle = gen_logistic(10_000, K, d=10, seed=21, rng=rng)
    noisy, _ = gen_logistic(300_000, K, d=10, seed=21, rng=rng)
    rho = np.bincount(noisy.y, minlength=K) / len(noisy)
    model = build_rr(K, epsilon, rho=rho)
    y_noisy = corrupt_labels(noisy.y, model, rng)

    pred_clean = oracle.predict_proba(clean.X).argmax(axis=1)
    pred_noisy = oracle.predict_proba(noisy.X).argmax(axis=1)

    fit = fit_rr((pred_clean, clean.y), (pred_noisy, y_noisy), K, B=500, rng=rng)
    lo, hi = fit.intervals["epsilon"]
    print(f"true epsilon {epsilon}; estimate {fit.estimates['epsilon']:.4f}; 99% interval [{lo:.4f}, {hi:.4f}]")

    general = fit_general((pred_clean, clean.y), (pred_noisy, y_noisy), B=500, rng=rng, K=K)
    print("unstructured estimate of V:")
    print(np.array2string(general.V_hat, precision=3, suppress_small=True))
    print("true V:")
    print(np.array2string(model.V, precision=3, suppress_small=True))
    print(f"box contains the true off-diagonal entries: {general.region.contains(model.V)}")


if __name__ == "__main__":
    main()
