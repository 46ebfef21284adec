"""Simulated many-trial experiments and the Monte Carlo benchmark harness.

Every replication draws from its own counter-based (Philox) streams keyed by
``(seed, replication_index, purpose)``, so results do not depend on the order
or process in which replications run.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from collections import Counter
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import estimators as est
from .drf import modal_order, order_from_tests, wald_battery
from .errors import CmmaError, DataError
from .model import Dataset, TrialRegistry, summarize_trials

log = logging.getLogger(__name__)

DEFAULT_SEED = 20200823
VIOLATIONS = ("none", "A2", "A3", "A4")
ALL_ESTIMATORS = (est.LIML, est.CMMA, est.FULL_2SLS, est.SOBEL, est.LSEM)

_PURPOSE_TRIALS = 0
_PURPOSE_UNITS = 1
_PURPOSE_NOISE = 2


@dataclass(frozen=True)
class SimulationConfig:
    n_per_trial: int = 1000
    n_trials: int = 50
    n_types: int = 3
    beta: tuple[float, ...] = (4.0,)
    pi: tuple[float, ...] = (0.0, 1.5, 3.0)
    rho: float = 0.95
    sigma_m: float = 3.0
    sigma_y: float = 3.0
    theta_range: tuple[float, float] = (-2.0, 2.0)
    phi_range: tuple[float, float] = (-2.0, 2.0)
    tau_range: tuple[float, float] = (-3.0, 3.0)
    tau_loading: tuple[float, ...] = (0.5, 1.0, 2.5)
    innovation_sd: float = 0.5
    # draw unit-level innovations for beta_2..beta_P too, not only beta_1
    innovate_higher_powers: bool = False
    violation: str = "none"
    seed: int = DEFAULT_SEED
    fixed_trial_sizes: bool = False
    # slope of beta_i on M*/sigma_m under A2
    a2_strength: float = 0.5
    # loading of gamma_k on the H-orthogonal part of tau_k under A3
    a3_strength: float = 0.5

    def __post_init__(self):
        for name in ("beta", "pi", "tau_loading", "theta_range", "phi_range", "tau_range"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        if self.n_per_trial < 1 or self.n_trials < 1 or self.n_types < 1:
            raise DataError("n_per_trial, n_trials and n_types must be positive")
        if self.n_types > self.n_trials:
            raise DataError("n_types cannot exceed n_trials")
        if len(self.pi) != self.n_types or len(self.tau_loading) != self.n_types:
            raise DataError("pi and tau_loading need one entry per trial type")
        if not self.beta:
            raise DataError("beta needs at least one coefficient")
        if not abs(self.rho) < 1:
            raise DataError("|rho| must be < 1")
        if min(self.sigma_m, self.sigma_y, self.innovation_sd) < 0:
            raise DataError("standard deviations must be nonnegative")
        for name in ("theta_range", "phi_range", "tau_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise DataError(f"{name} must be (low, high) with low <= high")
        if self.violation not in VIOLATIONS:
            raise DataError(f"violation must be one of {VIOLATIONS}")
        if self.fixed_trial_sizes and self.n_per_trial < 2:
            raise DataError("fixed trial sizes need n_per_trial >= 2")
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def order(self) -> int:
        return len(self.beta)

    def replace(self, **changes) -> SimulationConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def stream(seed: int, replication: int, purpose: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replication), int(purpose)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SimulatedDraw:
    dataset: Dataset
    types: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    tau: np.ndarray
    gamma_mean: np.ndarray
    m_star: np.ndarray = field(repr=False)
    y_star: np.ndarray = field(repr=False)


def _uniform(rng, bounds, size):
    lo, hi = bounds
    return rng.uniform(lo, hi, size) if hi > lo else np.full(size, lo)


def _assign_units(cfg: SimulationConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    K, N = cfg.n_trials, cfg.n_per_trial
    if cfg.fixed_trial_sizes:
        trial = np.repeat(np.arange(K), N)
        arm = np.zeros(N, dtype=np.int8)
        arm[: N // 2] = 1
        treat = np.concatenate([rng.permutation(arm) for _ in range(K)])
        return trial, treat
    while True:
        trial = rng.integers(0, K, K * N)
        treat = rng.integers(0, 2, K * N).astype(np.int8)
        counts = np.zeros((K, 2), dtype=np.int64)
        np.add.at(counts, (trial, treat), 1)
        if counts.min() > 0:
            return trial, treat


def draw(config: SimulationConfig, replication_index: int = 0) -> SimulatedDraw:
    """One dataset from the many-trial data-generating process, with latents."""
    cfg = config
    K, L = cfg.n_trials, cfg.n_types
    rng = stream(cfg.seed, replication_index, _PURPOSE_TRIALS)
    while True:
        types = rng.integers(0, L, K)
        if np.unique(types).size == L:
            break
    H = np.eye(L)[types]
    theta = _uniform(rng, cfg.theta_range, K)
    phi = _uniform(rng, cfg.phi_range, K)
    u = _uniform(rng, cfg.tau_range, K)
    base_tau = H @ np.array(cfg.tau_loading)
    tau = base_tau if cfg.violation == "A4" else base_tau + u
    gamma_mean = H @ np.array(cfg.pi)
    if cfg.violation == "A3":
        gamma_mean = gamma_mean + cfg.a3_strength * (tau - base_tau)

    trial, T = _assign_units(cfg, stream(cfg.seed, replication_index, _PURPOSE_UNITS))
    n = trial.shape[0]

    rng = stream(cfg.seed, replication_index, _PURPOSE_NOISE)
    z = rng.standard_normal((n, 2))
    m_star = cfg.sigma_m * z[:, 0]
    y_star = cfg.sigma_y * (cfg.rho * z[:, 0] + np.sqrt(1.0 - cfg.rho**2) * z[:, 1])
    sd = cfg.innovation_sd
    tau_i = tau[trial] + sd * rng.standard_normal(n)
    gamma_i = gamma_mean[trial] + sd * rng.standard_normal(n)
    beta_noise = sd * rng.standard_normal((n, cfg.order))
    if not cfg.innovate_higher_powers:
        beta_noise[:, 1:] = 0.0
    beta_i = np.array(cfg.beta) + beta_noise
    if cfg.violation == "A2" and cfg.sigma_m > 0:
        beta_i = beta_i + cfg.a2_strength * (m_star / cfg.sigma_m)[:, None]

    t = T.astype(float)
    M = tau_i * t + phi[trial] + m_star
    powers = M[:, None] ** np.arange(1, cfg.order + 1)
    Y = np.sum(beta_i * powers, axis=1) + theta[trial] + gamma_i * t + y_star

    registry = TrialRegistry(
        H,
        tuple(str(k + 1) for k in range(K)),
        tuple(f"type{j + 1}" for j in range(L)),
    )
    data = Dataset(np.arange(1, n + 1), trial, T, M, Y, registry)
    return SimulatedDraw(data, types, theta, phi, tau, gamma_mean, m_star, y_star)


def generate(config: SimulationConfig, replication_index: int = 0) -> Dataset:
    return draw(config, replication_index).dataset


# --- Monte Carlo harness -------------------------------------------------


@dataclass(frozen=True)
class EstimatorRow:
    estimator: str
    mean_bias: float
    coverage: float
    n_ok: int
    n_failed: int
    replications: int


@dataclass(frozen=True)
class BenchmarkReport:
    label: str
    n_per_trial: int
    replications: int
    rows: tuple[EstimatorRow, ...]
    config_digest: str
    seed: int
    wall_time: float = field(default=0.0, compare=False)
    failures: tuple[tuple[int, str, str], ...] = ()

    @property
    def n_failed(self) -> int:
        return sum(r.n_failed for r in self.rows)

    def row(self, estimator: str) -> EstimatorRow:
        for r in self.rows:
            if r.estimator == estimator:
                return r
        raise KeyError(estimator)


def _run_estimator(name: str, data: Dataset, order: int) -> est.DrfEstimate:
    if name == est.CMMA:
        return est.cmma(summarize_trials(data, order), order, require_relevance=False)
    return est.UNIT_ESTIMATORS[name](data, order)


def _replicate(args) -> tuple[int, dict]:
    config, rep, names = args
    data = generate(config, rep)
    truth = config.beta[0]
    out = {}
    for name in names:
        try:
            fit = _run_estimator(name, data, config.order)
        except (CmmaError, np.linalg.LinAlgError, ArithmeticError, ValueError) as exc:
            out[name] = (None, None, f"{type(exc).__name__}: {exc}")
            continue
        out[name] = (float(fit.beta[0] - truth), fit.covers(truth), None)
    return rep, out


def _map(func, jobs: list, n_jobs: int) -> list:
    if n_jobs <= 1 or len(jobs) <= 1:
        return [func(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(func, jobs, chunksize=max(1, len(jobs) // (4 * n_jobs))))


def run_benchmark(
    config: SimulationConfig,
    estimators: Iterable[str] = ALL_ESTIMATORS,
    replications: int = 100,
    n_jobs: int = 1,
    label: str | None = None,
) -> BenchmarkReport:
    """Bias of beta_1 and 95% interval coverage for each estimator over R draws."""
    if replications < 1:
        raise ValueError("replications must be >= 1")
    names = tuple(estimators)
    unknown = [n for n in names if n != est.CMMA and n not in est.UNIT_ESTIMATORS]
    if unknown:
        raise ValueError(f"unknown estimators: {unknown}")
    start = time.perf_counter()
    results = dict(_map(_replicate, [(config, r, names) for r in range(replications)], n_jobs))
    rows, failures = [], []
    for name in names:
        biases, covered = [], []
        for rep in range(replications):
            bias, cov, err = results[rep][name]
            if err is not None:
                failures.append((rep, name, err))
                continue
            biases.append(bias)
            covered.append(cov)
        n_ok = len(biases)
        rows.append(
            EstimatorRow(
                name,
                float(np.mean(biases)) if n_ok else float("nan"),
                float(np.mean(covered)) if n_ok else float("nan"),
                n_ok,
                replications - n_ok,
                replications,
            )
        )
    for rep, name, err in failures:
        log.warning("replication %d, %s failed: %s", rep, name, err)
    return BenchmarkReport(
        label=label or config.violation,
        n_per_trial=config.n_per_trial,
        replications=replications,
        rows=tuple(rows),
        config_digest=config.digest(),
        seed=config.seed,
        wall_time=time.perf_counter() - start,
        failures=tuple(failures),
    )


def run_size_sweep(
    config: SimulationConfig,
    sizes: Sequence[int] = (200, 500, 1000),
    estimators: Iterable[str] = ALL_ESTIMATORS,
    replications: int = 100,
    n_jobs: int = 1,
) -> list[BenchmarkReport]:
    names = tuple(estimators)
    return [
        run_benchmark(config.replace(n_per_trial=n), names, replications, n_jobs, label=f"N_per={n}")
        for n in sizes
    ]


def run_violation_suite(
    base: SimulationConfig,
    replications: int = 100,
    violations: Sequence[str] = VIOLATIONS,
    n_jobs: int = 1,
) -> dict[str, BenchmarkReport]:
    """CMMA under each assumption-violation scenario."""
    return {
        v: run_benchmark(base.replace(violation=v), (est.CMMA,), replications, n_jobs, label=v)
        for v in violations
    }


# --- order selection study ---------------------------------------------------


@dataclass(frozen=True)
class SelectionReport:
    label: str
    true_beta: tuple[float, ...]
    max_order: int
    alpha: float
    replications: int
    # rejection rate of H0: beta_p..beta_P = 0, keyed by p (P down to 1)
    rejection_rate: dict[int, float]
    order_counts: dict[int, int]
    selected_order: int
    mean_beta: tuple[float, ...]
    n_failed: int
    config_digest: str
    seed: int
    wall_time: float = field(default=0.0, compare=False)


def _select_once(args):
    config, rep, max_order, alpha = args
    data = generate(config, rep)
    summaries = summarize_trials(data, max_order)
    try:
        full = est.cmma(summaries, max_order, require_relevance=False)
        tests = wald_battery(full, alpha)
        betas = {
            p: tuple(float(b) for b in est.cmma(summaries, p, require_relevance=False).beta)
            for p in range(1, max_order + 1)
        }
    except (CmmaError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        return rep, None, f"{type(exc).__name__}: {exc}"
    rejected = {row.lowest_power: row.rejected for row in tests}
    return rep, (rejected, order_from_tests(tests), betas), None


def run_selection(
    config: SimulationConfig,
    replications: int = 100,
    max_order: int = 3,
    alpha: float = 0.05,
    n_jobs: int = 1,
    label: str | None = None,
) -> SelectionReport:
    """Wald-test battery and selected order of CMMA fits over R draws.

    Mean coefficients are reported for fits at the modal selected order.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    start = time.perf_counter()
    results = sorted(_map(_select_once, [(config, r, max_order, alpha) for r in range(replications)], n_jobs))
    ok = [res for _, res, err in results if err is None]
    for rep, _, err in results:
        if err is not None:
            log.warning("replication %d failed: %s", rep, err)
    if not ok:
        raise CmmaError("every replication failed")
    rates = {p: float(np.mean([r[0][p] for r in ok])) for p in range(max_order, 0, -1)}
    orders = [r[1] for r in ok]
    chosen = modal_order(orders)
    mean_beta = (
        tuple(float(x) for x in np.mean([r[2][chosen] for r in ok], axis=0)) if chosen > 0 else ()
    )
    return SelectionReport(
        label=label or " + ".join(f"{b:g}m^{p + 1}" for p, b in enumerate(config.beta)),
        true_beta=config.beta,
        max_order=max_order,
        alpha=alpha,
        replications=replications,
        rejection_rate=rates,
        order_counts=dict(sorted(Counter(orders).items())),
        selected_order=chosen,
        mean_beta=mean_beta,
        n_failed=replications - len(ok),
        config_digest=config.digest(),
        seed=config.seed,
        wall_time=time.perf_counter() - start,
    )


TABLE4_SCENARIOS = {
    "4m": (4.0,),
    "4m + 2m^2": (4.0, 2.0),
    "4m + 0m^2 + 5m^3": (4.0, 0.0, 5.0),
}


def run_table4(
    config: SimulationConfig,
    replications: int = 100,
    alpha: float = 0.05,
    n_jobs: int = 1,
    n_per_trial: int = 1000,
    n_trials: int = 100,
) -> list[SelectionReport]:
    """The three true-DRF scenarios, by default at N_per=1000 and 100 trials."""
    base = config.replace(n_per_trial=n_per_trial, n_trials=n_trials)
    return [
        run_selection(base.replace(beta=beta), replications, 3, alpha, n_jobs, label=name)
        for name, beta in TABLE4_SCENARIOS.items()
    ]
