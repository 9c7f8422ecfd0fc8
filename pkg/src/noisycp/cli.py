"""Command-line front end (``noisycp`` / ``python -m noisycp``).

Subcommands::

    simulate   run a Monte Carlo experiment from a key=value config file
    calibrate  compute thresholds from a score/probability file
    predict    turn thresholds plus scores into prediction sets
    fit-noise  estimate the contamination model from clean + noisy files
    ctable     precompute c(n) Monte Carlo constants
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import calibration as cal
from .contamination import (
    ContaminationModel,
    block_transition,
    build_from_transition,
    build_rr,
    build_two_level_rr,
    random_u_transition,
)
from .errors import ConfigError, NoisyCPError
from .estimation import epsilon_from_mismatch, fit_general, fit_rr, fit_two_level_rr
from .harness import (
    METHODS,
    MARGINAL_METHODS,
    calibrate,
    evaluate,
    format_metrics,
    ingest_scores,
    load_config,
    make_scores,
    run_experiment,
)
from .scores import ScoreMatrix, prediction_sets


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_ctable(path: str | None, reps: int, seed: int) -> cal.CTable:
    if path and Path(path).exists():
        table = cal.CTable.from_text(Path(path).read_text(encoding="utf-8"), seed=seed)
        table.reps = reps if len(table) == 0 else table.reps
        return table
    return cal.CTable(reps=reps, seed=seed)


def _score_matrix(data, args) -> ScoreMatrix:
    if data.is_scores:
        return ScoreMatrix(data.values, kind="external")
    return make_scores(data.values, args.score_kind, args.jitter, np.random.default_rng(args.seed))


def _noise_model(args, K: int, y_noisy) -> ContaminationModel | None:
    if args.model_file:
        return ContaminationModel.from_text(Path(args.model_file).read_text(encoding="utf-8"))
    if args.noise == "none":
        return build_from_transition(np.eye(K))
    rho_tilde = np.bincount(y_noisy, minlength=K) / len(y_noisy)
    if args.noise == "rr":
        rho = np.clip((rho_tilde - args.epsilon / K) / (1.0 - args.epsilon), 1e-6, None)
        return build_rr(K, args.epsilon, rho / rho.sum())
    if args.noise == "two_level_rr":
        return build_two_level_rr(K, args.epsilon, args.nu)
    T = block_transition(K, args.epsilon) if args.noise == "block" else random_u_transition(K, args.epsilon, args.seed)
    rho = np.clip(np.linalg.solve(T, rho_tilde), 1e-6, None)
    return build_from_transition(T, rho / rho.sum(), kind=args.noise, params={"epsilon": args.epsilon})


def _region(args, model, K: int, rho_tilde) -> cal.NoiseRegion:
    if args.eps_low is None and args.eps_upp is None:
        return cal.NoiseRegion.degenerate(model.V)
    lo = 0.0 if args.eps_low is None else args.eps_low
    hi = args.epsilon if args.eps_upp is None else args.eps_upp
    eps_bar = max(args.eps_bar, hi)
    if args.noise == "two_level_rr":
        return cal.two_level_region(K, lo, hi, args.nu_low, args.nu_upp, eps_bar=eps_bar, alpha_V=args.alpha_V)
    return cal.rr_region(lo, hi, rho_tilde, eps_bar=eps_bar, alpha_V=args.alpha_V)


def _delta_terms(method, scores, y_noisy, model, region, args, ctable) -> list[str]:
    K = scores.K
    n = np.bincount(y_noisy, minlength=K)
    n_star = int(n.min())
    if method in MARGINAL_METHODS or method == "standard-lc":
        return [""] * K
    out = []
    for k in range(K):
        if method in ("adaptive", "adaptive+"):
            off = np.abs(np.delete(model.V[k], k)).sum()
            out.append(repr(float(cal.correction_delta(int(n[k]), n_star, off, ctable, K))))
        elif method in ("adaptive-ci", "adaptive-ci+"):
            out.append(repr(float(cal.correction_delta_ci(region, k, int(n[k]), n_star, ctable))))
        else:
            out.append(repr(float(cal.correction_delta_cc(int(n[k]), n_star, model.V[k], k, args.gamma))))
    return out


def cmd_simulate(args) -> int:
    overrides = dict(item.split("=", 1) for item in args.set or [])
    if args.workers is not None:
        overrides["workers"] = str(args.workers)
    config = load_config(args.config, overrides)
    ctable = _load_ctable(args.ctable, config.c_reps, 0) if args.ctable else None
    rows = run_experiment(config, c_table=ctable)
    _write(format_metrics(rows), args.out)
    return 0


def cmd_calibrate(args) -> int:
    data = ingest_scores(args.file, scores=args.scores, renormalize=args.renormalize)
    scores = _score_matrix(data, args)
    K = data.K
    model = _noise_model(args, K, data.y_noisy)
    rho_tilde = np.bincount(data.y_noisy, minlength=K) / len(data.y_noisy)
    region = _region(args, model, K, rho_tilde) if args.method.startswith("adaptive-ci") else None
    ctable = _load_ctable(args.ctable, args.c_reps, args.seed)
    tau = calibrate(
        args.method,
        scores,
        data.y_noisy,
        alpha=args.alpha,
        V=model.V,
        region=region,
        rho_tilde=rho_tilde,
        gamma=args.gamma,
        c_table=ctable,
    )
    tau = np.full(K, float(tau)) if np.ndim(tau) == 0 else tau
    deltas = _delta_terms(args.method, scores, data.y_noisy, model, region, args, ctable)
    lines = ["label,tau,method,alpha,delta"]
    lines += [f"{k},{float(tau[k])!r},{args.method},{args.alpha!r},{deltas[k]}" for k in range(K)]
    _write("\n".join(lines) + "\n", args.out)
    if args.ctable:
        Path(args.ctable).write_text(ctable.to_text(), encoding="utf-8")
    return 0


def _read_thresholds(path: str) -> np.ndarray:
    rows = [line.split(",") for line in Path(path).read_text(encoding="utf-8").strip().splitlines()[1:]]
    tau = np.empty(len(rows))
    for row in rows:
        tau[int(row[0])] = float(row[1])
    return tau


def cmd_predict(args) -> int:
    data = ingest_scores(args.file, scores=args.scores, renormalize=args.renormalize)
    scores = _score_matrix(data, args)
    tau = _read_thresholds(args.thresholds)
    sets = prediction_sets(scores, tau)
    lines = ["id,set"]
    lines += [f"{i}," + " ".join(str(k) for k in np.flatnonzero(row)) for i, row in zip(data.ids, sets)]
    _write("\n".join(lines) + "\n", args.out)
    known = data.known
    if known.any():
        report = evaluate(sets[known], data.y_true[known], data.K)
        print(f"coverage={report.coverage:.4f} avg_size={report.avg_size:.4f} n={report.n}", file=sys.stderr)
    return 0


def cmd_fit_noise(args) -> int:
    if args.mismatch_rate is not None:
        if args.K is None:
            raise ConfigError("--mismatch-rate needs --K")
        print(f"epsilon={epsilon_from_mismatch(args.mismatch_rate, args.K)!r}")
        return 0
    if not (args.clean and args.noisy):
        raise ConfigError("fit-noise needs --clean and --noisy (or --mismatch-rate)")
    clean = ingest_scores(args.clean, renormalize=args.renormalize)
    noisy = ingest_scores(args.noisy, renormalize=args.renormalize)
    if clean.y_true is None or not clean.known.all():
        raise ConfigError("every row of the clean file needs y_true")
    K = clean.K
    rng = np.random.default_rng(args.seed)
    clean_pair = (clean.values, clean.y_true)
    noisy_pair = (noisy.values, noisy.y_noisy)
    if args.model == "rr":
        fit = fit_rr(clean_pair, noisy_pair, K, args.alpha_V, args.B, args.eps_bar, rng)
    elif args.model == "two_level_rr":
        fit = fit_two_level_rr(clean_pair, noisy_pair, K, args.alpha_V, args.B, args.eps_bar, rng)
    else:
        fit = fit_general(clean_pair, noisy_pair, args.alpha_V, args.B, rng, K=K)
    _write(fit.to_text(), args.out)
    return 0


def cmd_ctable(args) -> int:
    table = _load_ctable(args.cache, args.reps, args.seed)
    for n in args.n:
        table.get(n)
    text = table.to_text()
    if args.cache:
        Path(args.cache).write_text(text, encoding="utf-8")
    _write(text, args.out)
    return 0


def _add_score_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("file", help="score or probability file")
    p.add_argument("--scores", action="store_true", help="columns are scores s0.. rather than probabilities p0..")
    p.add_argument("--renormalize", action="store_true", help="rescale probability rows that do not sum to 1")
    p.add_argument("--score-kind", choices=("hps", "aps", "aps-rand"), default="hps")
    p.add_argument("--jitter", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", "-o")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noisycp", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    p.add_argument("config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--workers", type=int)
    p.add_argument("--ctable", help="c(n) table file to seed the cache")
    p.add_argument("--out", "-o")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="compute thresholds from a score file")
    _add_score_flags(p)
    p.add_argument("--method", choices=METHODS, default="standard-lc")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--noise", choices=("none", "rr", "two_level_rr", "block", "random_u"), default="none")
    p.add_argument("--model-file", help="serialized contamination model (overrides --noise)")
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--nu", type=float, default=0.0)
    p.add_argument("--eps-low", type=float)
    p.add_argument("--eps-upp", type=float)
    p.add_argument("--eps-bar", type=float, default=0.5)
    p.add_argument("--nu-low", type=float, default=0.0)
    p.add_argument("--nu-upp", type=float, default=1.0)
    p.add_argument("--alpha-V", dest="alpha_V", type=float, default=0.01)
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--ctable", help="read-through c(n) cache file")
    p.add_argument("--c-reps", type=int, default=cal.DEFAULT_C_REPS)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("predict", help="prediction sets from thresholds")
    _add_score_flags(p)
    p.add_argument("--thresholds", required=True, help="output of `calibrate`")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("fit-noise", help="estimate the contamination model")
    p.add_argument("--clean", help="probability file with y_true")
    p.add_argument("--noisy", help="probability file with y_noisy")
    p.add_argument("--model", choices=("rr", "two_level_rr", "general"), default="rr")
    p.add_argument("--alpha-V", dest="alpha_V", type=float, default=0.01)
    p.add_argument("--B", type=int, default=1000)
    p.add_argument("--eps-bar", type=float, default=0.5)
    p.add_argument("--mismatch-rate", type=float, help="pick epsilon matching an observed mismatch rate")
    p.add_argument("--K", type=int)
    p.add_argument("--renormalize", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", "-o")
    p.set_defaults(func=cmd_fit_noise)

    p = sub.add_parser("ctable", help="precompute c(n)")
    p.add_argument("--n", type=int, nargs="+", required=True)
    p.add_argument("--reps", type=int, default=cal.DEFAULT_C_REPS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cache", help="read-through cache file, updated in place")
    p.add_argument("--out", "-o")
    p.set_defaults(func=cmd_ctable)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NoisyCPError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
