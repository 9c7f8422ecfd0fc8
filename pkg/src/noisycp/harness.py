"""Seeded Monte Carlo experiments, score-file ingestion and evaluation.

An experiment repetition runs generate -> corrupt -> (train) -> score ->
calibrate -> evaluate.  All of its randomness comes from streams derived by
hashing ``(master seed, repetition, stage name)``, see :func:`derive_seed`,
so every repetition can be reproduced on its own and the metrics table is
byte-identical across runs and worker counts.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import calibration as cal
from .contamination import (
    ContaminationModel,
    block_transition,
    build_from_transition,
    build_rr,
    build_two_level_rr,
    corrupt_labels,
    random_u_transition,
)
from .errors import (
    BadLabel,
    ConfigError,
    EmptyTestSet,
    NoisyCPError,
    NonNormalizedRow,
    SchemaMismatch,
)
from .estimation import fit_general, fit_rr, fit_two_level_rr
from .scores import ScoreMatrix, aps_scores, hps_scores, prediction_sets
from .synth import gen_decision_tree, gen_hypercube_mixture, gen_logistic, train_logistic

__all__ = [
    "METHODS",
    "METRICS_HEADER",
    "ExperimentConfig",
    "CoverageReport",
    "ScoreData",
    "derive_seed",
    "derive_rng",
    "parse_config",
    "load_config",
    "build_noise_model",
    "make_scores",
    "calibrate",
    "evaluate",
    "run_repetition",
    "run_experiment",
    "format_metrics",
    "ingest_scores",
]

METHODS = (
    "standard-lc",
    "standard-marg",
    "adaptive",
    "adaptive+",
    "adaptive-ci",
    "adaptive-ci+",
    "adaptive-marg",
    "adaptive-marg+",
    "adaptive-cc",
    "adaptive-cc+",
)
MARGINAL_METHODS = {"standard-marg", "adaptive-marg", "adaptive-marg+"}
METRICS_HEADER = "method,alpha,rep,label,coverage,avg_size,n_cal,seed"


# ---------------------------------------------------------------------------
# seeds
# ---------------------------------------------------------------------------


def derive_seed(master: int, rep: int, stage: str) -> int:
    """64-bit seed from ``blake2b("{master}:{rep}:{stage}")``."""
    digest = hashlib.blake2b(f"{master}:{rep}:{stage}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_rng(master: int, rep: int, stage: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, rep, stage))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Flat experiment description; field names are the config-file keys."""

    generator: str = "logistic"
    n_train: int = 0
    n_cal: int = 1000
    n_test: int = 1000
    K: int = 4
    d: int = 50
    noise: str = "rr"
    epsilon: float = 0.1
    nu: float = 0.0
    transition_file: str = ""
    rho: str = "empirical"
    score: str = "hps"
    model: str = "oracle"
    jitter: float = 1e-6
    methods: tuple = ("standard-lc", "adaptive", "adaptive+")
    alpha: float = 0.1
    alpha_V: float = 0.01
    gamma: float = 0.1
    fit: str = "none"
    n_clean: int = 1000
    B: int = 1000
    eps_bar: float = 0.5
    ci_eps_low: float = math.nan
    ci_eps_upp: float = math.nan
    ci_nu_low: float = math.nan
    ci_nu_upp: float = math.nan
    rho_tilde: str = "model"
    reps: int = 10
    seed: int = 0
    c_reps: int = cal.DEFAULT_C_REPS
    epochs: int = 200
    lr: float = 0.5
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.methods, str):
            self.methods = tuple(m.strip() for m in self.methods.split(",") if m.strip())
        self.methods = tuple(self.methods)
        self.validate()

    def validate(self) -> None:
        for name in ("n_cal", "n_test", "K", "d", "reps", "c_reps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.model == "logistic" and self.n_train < 1:
            raise ConfigError("a trained model needs n_train >= 1")
        if self.fit != "none" and self.n_clean < 1:
            raise ConfigError("fitting the noise model needs n_clean >= 1")
        for name in ("alpha", "alpha_V", "gamma"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if not self.methods:
            raise ConfigError("methods must be nonempty")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {', '.join(METHODS)}")
        choices = {
            "generator": ("logistic", "hypercube", "tree"),
            "noise": ("rr", "two_level_rr", "block", "random_u", "none", "file"),
            "rho": ("empirical", "uniform"),
            "score": ("hps", "aps", "aps-rand"),
            "model": ("oracle", "logistic"),
            "fit": ("none", "rr", "two_level_rr", "general"),
            "rho_tilde": ("model", "empirical"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.noise == "file" and not self.transition_file:
            raise ConfigError("noise=file needs transition_file")

    def replace(self, **changes) -> "ExperimentConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return ExperimentConfig(**values)


def _coerce(name: str, raw: str):
    template = {f.name: f for f in fields(ExperimentConfig)}[name]
    default = template.default
    if name == "methods":
        return raw
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw) if raw else math.nan
    return raw


def parse_config(text: str, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Parse ``key=value`` lines (``#`` starts a comment).  Unknown keys are errors."""
    known = {f.name for f in fields(ExperimentConfig)}
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    values.update(overrides or {})
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return ExperimentConfig(**{k: _coerce(k, v) for k, v in values.items()})
    except ValueError as err:
        if isinstance(err, NoisyCPError):
            raise
        raise ConfigError(str(err)) from err


def load_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), overrides)


# ---------------------------------------------------------------------------
# pipeline pieces
# ---------------------------------------------------------------------------


def _generate(config: ExperimentConfig, n: int, rep: int):
    seed = derive_seed(config.seed, rep, "params")
    rng = derive_rng(config.seed, rep, "data")
    if config.generator == "logistic":
        return gen_logistic(n, config.K, config.d, seed=seed, rng=rng)
    if config.generator == "hypercube":
        return gen_hypercube_mixture(n, config.K, config.d, seed=seed, n_informative=min(25, config.d), rng=rng)
    return gen_decision_tree(n, config.K, config.d, seed=seed, rng=rng)


def _transition(config: ExperimentConfig, rep: int) -> tuple[np.ndarray, str, dict]:
    K, eps = config.K, config.epsilon
    if config.noise == "none":
        return np.eye(K), "general", {}
    if config.noise == "rr":
        return (1.0 - eps) * np.eye(K) + eps / K, "rr", {"epsilon": eps}
    if config.noise == "two_level_rr":
        return build_two_level_rr(K, eps, config.nu).T, "two_level_rr", {"epsilon": eps, "nu": config.nu}
    if config.noise == "block":
        return block_transition(K, eps), "block", {"epsilon": eps}
    if config.noise == "random_u":
        seed = derive_seed(config.seed, rep, "random_u")
        return random_u_transition(K, eps, seed), "random_u", {"epsilon": eps, "seed": seed}
    model = ContaminationModel.from_text(Path(config.transition_file).read_text(encoding="utf-8"))
    return model.T, "general", {}


def build_noise_model(config: ExperimentConfig, rep: int, y_noisy_cal=None) -> ContaminationModel:
    """Contamination model for one repetition.

    The transition matrix comes from the config.  The clean label frequencies
    are either uniform or recovered from the noisy calibration frequencies by
    solving ``T rho = rho~`` (``rho=empirical``).
    """
    T, kind, params = _transition(config, rep)
    K = config.K
    if config.rho == "uniform" or y_noisy_cal is None:
        rho = np.full(K, 1.0 / K)
    else:
        rho_tilde = np.bincount(y_noisy_cal, minlength=K) / len(y_noisy_cal)
        rho = np.linalg.solve(T, rho_tilde)
        rho = np.clip(rho, 1e-6, None)
        rho /= rho.sum()
    if kind == "rr":
        return build_rr(K, config.epsilon, rho)
    if kind == "two_level_rr" and config.rho == "uniform":
        return build_two_level_rr(K, config.epsilon, config.nu)
    return build_from_transition(T, rho, kind=kind, params=params)


def make_scores(probs, kind: str, jitter: float, rng: np.random.Generator) -> ScoreMatrix:
    if kind == "hps":
        return hps_scores(probs, jitter=jitter, rng=rng)
    return aps_scores(probs, randomized=(kind == "aps-rand"), rng=rng)


def calibrate(method: str, scores, y_noisy, *, alpha: float, V=None, region=None, rho_tilde=None, gamma: float = 0.1, c_table=None):
    """Dispatch a method name to its calibration routine."""
    if method == "standard-lc":
        return cal.standard_label_conditional(scores, y_noisy, alpha)
    if method == "standard-marg":
        return cal.standard_marginal(scores, y_noisy, alpha)
    if method in ("adaptive", "adaptive+"):
        return cal.adaptive_label_conditional(scores, y_noisy, V, alpha, c_table, optimistic=method.endswith("+"))
    if method in ("adaptive-ci", "adaptive-ci+"):
        return cal.adaptive_ci(scores, y_noisy, region, alpha, c_table, optimistic=method.endswith("+"))
    if method in ("adaptive-marg", "adaptive-marg+"):
        return cal.adaptive_marginal(scores, y_noisy, V, rho_tilde, alpha, c_table, optimistic=method.endswith("+"))
    if method in ("adaptive-cc", "adaptive-cc+"):
        return cal.adaptive_calibration_conditional(scores, y_noisy, V, alpha, gamma, optimistic=method.endswith("+"))
    raise ConfigError(f"unknown method {method!r}")


@dataclass
class CoverageReport:
    """Coverage and set-size summary over a test sample."""

    coverage: float
    avg_size: float
    label_coverage: np.ndarray
    label_size: np.ndarray
    label_count: np.ndarray
    n: int


def evaluate(sets, y_true, K: int | None = None) -> CoverageReport:
    """Marginal and per-label coverage and mean set size.

    ``sets`` is a boolean ``n x K`` membership matrix.  Labels without test
    points get ``nan`` coverage and size.
    """
    sets = np.asarray(sets, dtype=bool)
    y = np.asarray(y_true, dtype=int)
    if y.size == 0:
        raise EmptyTestSet("no test points to evaluate")
    K = K if K is not None else sets.shape[1]
    covered = sets[np.arange(y.size), y]
    size = sets.sum(axis=1)
    counts = np.bincount(y, minlength=K)
    with np.errstate(invalid="ignore", divide="ignore"):
        label_cov = np.bincount(y, weights=covered, minlength=K) / counts
        label_size = np.bincount(y, weights=size, minlength=K) / counts
    return CoverageReport(
        coverage=float(covered.mean()),
        avg_size=float(size.mean()),
        label_coverage=label_cov,
        label_size=label_size,
        label_count=counts,
        n=int(y.size),
    )


@dataclass
class _RepInputs:
    cal_scores: ScoreMatrix
    y_cal_noisy: np.ndarray
    test_scores: ScoreMatrix
    y_test: np.ndarray
    V: np.ndarray
    region: cal.NoiseRegion
    rho_tilde: np.ndarray
    model: ContaminationModel
    fit: object = None
    extras: dict = field(default_factory=dict)


def prepare_repetition(config: ExperimentConfig, rep: int) -> _RepInputs:
    """Everything one repetition needs before calibration."""
    n_clean = config.n_clean if config.fit != "none" else 0
    sizes = (config.n_train, config.n_cal, config.n_test, n_clean)
    data, oracle = _generate(config, sum(sizes), rep)
    bounds = np.cumsum((0,) + sizes)
    parts = [data.subset(slice(bounds[i], bounds[i + 1])) for i in range(4)]
    train, cal_set, test, clean = parts

    # label corruption only depends on T, so rho can be settled afterwards
    T, _, _ = _transition(config, rep)
    probe = build_from_transition(T, None)
    noise_rng = derive_rng(config.seed, rep, "noise")
    train.y_noisy = corrupt_labels(train.y, probe, noise_rng)
    cal_set.y_noisy = corrupt_labels(cal_set.y, probe, noise_rng)
    model = build_noise_model(config, rep, cal_set.y_noisy)

    if config.model == "oracle":
        predictor = oracle
    else:
        predictor = train_logistic(train, K=config.K, epochs=config.epochs, lr=config.lr, seed=derive_seed(config.seed, rep, "train"))
    score_rng = derive_rng(config.seed, rep, "scores")
    cal_probs = predictor.predict_proba(cal_set.X)
    cal_scores = make_scores(cal_probs, config.score, config.jitter, score_rng)
    test_scores = make_scores(predictor.predict_proba(test.X), config.score, config.jitter, score_rng)

    if config.rho_tilde == "empirical":
        rho_tilde = np.bincount(cal_set.y_noisy, minlength=config.K) / config.n_cal
    else:
        rho_tilde = model.rho_tilde

    fit = None
    if config.fit == "none":
        V = model.V
        region = _config_region(config, model, rho_tilde)
    else:
        clean_pair = (predictor.predict_proba(clean.X), clean.y)
        noisy_pair = (cal_probs, cal_set.y_noisy)
        fit_rng = derive_rng(config.seed, rep, "fit")
        if config.fit == "rr":
            fit = fit_rr(clean_pair, noisy_pair, config.K, config.alpha_V, config.B, config.eps_bar, fit_rng, rho_tilde=rho_tilde)
        elif config.fit == "two_level_rr":
            fit = fit_two_level_rr(clean_pair, noisy_pair, config.K, config.alpha_V, config.B, config.eps_bar, fit_rng)
        else:
            fit = fit_general(clean_pair, noisy_pair, config.alpha_V, config.B, fit_rng, K=config.K)
        V, region = fit.V_hat, fit.region
    return _RepInputs(cal_scores, cal_set.y_noisy, test_scores, test.y, V, region, rho_tilde, model, fit)


def _config_region(config: ExperimentConfig, model: ContaminationModel, rho_tilde) -> cal.NoiseRegion:
    if math.isnan(config.ci_eps_low) and math.isnan(config.ci_eps_upp):
        return cal.NoiseRegion.degenerate(model.V)
    lo = 0.0 if math.isnan(config.ci_eps_low) else config.ci_eps_low
    hi = config.epsilon if math.isnan(config.ci_eps_upp) else config.ci_eps_upp
    eps_bar = max(config.eps_bar, hi)
    if config.noise == "two_level_rr":
        n_lo = 0.0 if math.isnan(config.ci_nu_low) else config.ci_nu_low
        n_hi = 1.0 if math.isnan(config.ci_nu_upp) else config.ci_nu_upp
        return cal.two_level_region(config.K, lo, hi, n_lo, n_hi, eps_bar=eps_bar, alpha_V=config.alpha_V)
    return cal.rr_region(lo, hi, rho_tilde, eps_bar=eps_bar, alpha_V=config.alpha_V)


def _fmt(x: float) -> str:
    return "nan" if not np.isfinite(x) else repr(float(x))


def run_repetition(config: ExperimentConfig, rep: int, c_table=None) -> list[dict]:
    """Metrics rows for one repetition (marginal row first, then labels)."""
    if c_table is None:
        c_table = cal.CTable(reps=config.c_reps, seed=derive_seed(config.seed, -1, "ctable"))
    try:
        inputs = prepare_repetition(config, rep)
        rows = []
        for method in config.methods:
            tau = calibrate(
                method,
                inputs.cal_scores,
                inputs.y_cal_noisy,
                alpha=config.alpha,
                V=inputs.V,
                region=inputs.region,
                rho_tilde=inputs.rho_tilde,
                gamma=config.gamma,
                c_table=c_table,
            )
            report = evaluate(prediction_sets(inputs.test_scores, tau), inputs.y_test, config.K)
            base = {"method": method, "alpha": config.alpha, "rep": rep, "n_cal": config.n_cal, "seed": config.seed}
            rows.append({**base, "label": -1, "coverage": report.coverage, "avg_size": report.avg_size})
            for k in range(config.K):
                rows.append({**base, "label": k, "coverage": report.label_coverage[k], "avg_size": report.label_size[k]})
        return rows
    except NoisyCPError as err:
        err.args = (f"repetition {rep}: {err}",)
        raise


def _run_chunk(args) -> list[dict]:
    config, reps = args
    c_table = cal.CTable(reps=config.c_reps, seed=derive_seed(config.seed, -1, "ctable"))
    out = []
    for rep in reps:
        out.extend(run_repetition(config, rep, c_table))
    return out


def run_experiment(config: ExperimentConfig, c_table=None) -> list[dict]:
    """Run all repetitions and return metrics rows in repetition order."""
    if config.workers <= 1:
        if c_table is None:
            c_table = cal.CTable(reps=config.c_reps, seed=derive_seed(config.seed, -1, "ctable"))
        rows = []
        for rep in range(config.reps):
            rows.extend(run_repetition(config, rep, c_table))
        return rows
    chunks = [(config, list(range(r, config.reps, config.workers))) for r in range(config.workers)]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        results = list(pool.map(_run_chunk, chunks))
    rows = [row for chunk in results for row in chunk]
    order = {m: i for i, m in enumerate(config.methods)}
    rows.sort(key=lambda r: (r["rep"], order[r["method"]], r["label"]))
    return rows


def format_metrics(rows: list[dict]) -> str:
    lines = [METRICS_HEADER]
    for r in rows:
        lines.append(
            f"{r['method']},{r['alpha']!r},{r['rep']},{r['label']},{_fmt(r['coverage'])},{_fmt(r['avg_size'])},{r['n_cal']},{r['seed']}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# score files
# ---------------------------------------------------------------------------


@dataclass
class ScoreData:
    """Parsed score or probability file."""

    ids: list[str]
    values: np.ndarray
    y_noisy: np.ndarray
    y_true: np.ndarray | None
    is_scores: bool

    @property
    def K(self) -> int:
        return self.values.shape[1]

    @property
    def known(self) -> np.ndarray:
        """Mask of rows whose true label is available."""
        if self.y_true is None:
            return np.zeros(len(self.ids), dtype=bool)
        return self.y_true >= 0


def ingest_scores(path, scores: bool = False, renormalize: bool = False, tol: float = 1e-6) -> ScoreData:
    """Read ``id,y_noisy,y_true,p0..p{K-1}`` (or ``s0..`` with ``scores``).

    ``y_true = -1`` marks an unknown clean label; when every row is unknown
    ``y_true`` is ``None``.  Probability rows must sum to one within ``tol``
    unless ``renormalize`` is set.
    """
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaMismatch(f"{path}: empty file") from None
    prefix = "s" if scores else "p"
    K = len(header) - 3
    expected = ["id", "y_noisy", "y_true"] + [f"{prefix}{k}" for k in range(K)]
    if K < 2 or header != expected:
        raise SchemaMismatch(f"{path}: header must be {','.join(expected[:3])},{prefix}0,...,{prefix}{{K-1}}; got {','.join(header)}")
    ids, y_noisy, y_true, rows = [], [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != K + 3:
            raise SchemaMismatch(f"{path}: line {lineno} has {len(row)} columns, expected {K + 3}")
        try:
            yn, yt = int(row[1]), int(row[2])
            vals = [float(v) for v in row[3:]]
        except ValueError as err:
            raise SchemaMismatch(f"{path}: line {lineno}: {err}") from None
        if not 0 <= yn < K:
            raise BadLabel(f"{path}: line {lineno}: y_noisy={yn} outside [0, {K})")
        if not -1 <= yt < K:
            raise BadLabel(f"{path}: line {lineno}: y_true={yt} outside [-1, {K})")
        vals = np.array(vals)
        if not scores:
            total = vals.sum()
            if abs(total - 1.0) > tol:
                if not renormalize:
                    raise NonNormalizedRow(lineno, total)
                vals = vals / total
        ids.append(row[0])
        y_noisy.append(yn)
        y_true.append(yt)
        rows.append(vals)
    if not rows:
        raise SchemaMismatch(f"{path}: no data rows")
    y_true_arr = np.array(y_true, dtype=int)
    return ScoreData(
        ids=ids,
        values=np.vstack(rows),
        y_noisy=np.array(y_noisy, dtype=int),
        y_true=None if np.all(y_true_arr < 0) else y_true_arr,
        is_scores=scores,
    )
