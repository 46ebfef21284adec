"""Domain types and per-trial summarization.

Unit-level data are stored column-wise. Trials are re-indexed densely: unit
arrays carry a 0-based ``trial`` index, while :class:`TrialSummary` and all
reports use the 1-based ``trial_id``. Original trial labels stay on the
registry for display.
"""

from __future__ import annotations

from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, InsufficientTrialsError
from .regress import chi2_sf, ols


@dataclass(frozen=True)
class UnitRecord:
    unit_id: str
    trial_id: int
    treatment: int
    mediator: float
    outcome: float


@dataclass(frozen=True)
class TrialRegistry:
    covariates: np.ndarray
    labels: tuple[str, ...] = ()
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        H = np.array(self.covariates, dtype=float, ndmin=2)
        if H.ndim != 2 or H.shape[0] == 0 or H.shape[1] == 0:
            raise DataError("covariate matrix must be K x J with K, J >= 1")
        if not np.all(np.isfinite(H)):
            raise DataError("trial covariates must be finite")
        zero = np.flatnonzero(~H.any(axis=1))
        K, J = H.shape
        labels = tuple(str(x) for x in self.labels) or tuple(str(k + 1) for k in range(K))
        names = tuple(self.covariate_names) or tuple(f"h{j + 1}" for j in range(J))
        if zero.size:
            raise DataError(f"trial {labels[zero[0]]} has an all-zero covariate row")
        if np.linalg.matrix_rank(H) < J:
            raise DataError("trial covariate columns are linearly dependent; drop redundant encodings")
        if len(labels) != K or len(names) != J:
            raise DataError("label counts do not match the covariate matrix")
        H.setflags(write=False)
        object.__setattr__(self, "covariates", H)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n_trials(self) -> int:
        return self.covariates.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]


@dataclass(frozen=True)
class TrialSummary:
    trial_id: int
    n_treat: int
    n_control: int
    ate_y: float
    ate_m: tuple[float, ...]
    covariates: tuple[float, ...]
    var_ate_y: float | None = None
    var_ate_m: tuple[float, ...] | None = None
    label: str | None = None

    def __post_init__(self):
        if self.n_treat < 1 or self.n_control < 1:
            raise DataError(f"trial {self.label or self.trial_id} needs at least one treated and one control unit")
        if len(self.ate_m) < 1:
            raise DataError("ate_m must hold at least one power")
        if self.var_ate_m is not None and len(self.var_ate_m) != len(self.ate_m):
            raise DataError("var_ate_m must match ate_m in length")

    @property
    def order(self) -> int:
        return len(self.ate_m)


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Unit-level observations of many two-arm trials.

    ``trial`` holds 0-based dense trial indices into ``registry``.
    """

    unit_id: np.ndarray
    trial: np.ndarray
    treatment: np.ndarray
    mediator: np.ndarray
    outcome: np.ndarray
    registry: TrialRegistry
    _counts: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.unit_id)
        trial = _frozen(self.trial, np.int64)
        treatment = np.asarray(self.treatment)
        mediator = _frozen(self.mediator, float)
        outcome = _frozen(self.outcome, float)
        if not (trial.shape == treatment.shape == mediator.shape == outcome.shape == (n,)):
            raise DataError("unit columns must have equal length")
        if not np.all((treatment == 0) | (treatment == 1)):
            raise DataError("treatment must be 0 or 1")
        if not (np.all(np.isfinite(mediator)) and np.all(np.isfinite(outcome))):
            raise DataError("mediator and outcome must be finite")
        K = self.registry.n_trials
        if n and (trial.min() < 0 or trial.max() >= K):
            raise DataError("unit references a trial missing from the registry")
        treatment = _frozen(treatment, np.int8)
        counts = np.zeros((K, 2), dtype=np.int64)
        np.add.at(counts, (trial, treatment), 1)
        for k in range(K):
            for arm, name in ((1, "treatment"), (0, "control")):
                if counts[k, arm] == 0:
                    raise DataError(f"trial {self.registry.labels[k]} has empty {name} arm")
        ids = np.asarray(self.unit_id)
        uniq, first, cnt = np.unique(ids, return_index=True, return_counts=True)
        if np.any(cnt > 1):
            dup = uniq[np.flatnonzero(cnt > 1)[0]]
            trials = sorted({self.registry.labels[t] for t in trial[ids == dup]})
            if len(trials) > 1:
                raise DataError(f"unit {dup} appears in multiple trials ({', '.join(trials)}); not supported")
            raise DataError(f"duplicate unit id {dup}")
        ids = ids.copy()
        ids.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "unit_id", ids)
        object.__setattr__(self, "trial", trial)
        object.__setattr__(self, "treatment", treatment)
        object.__setattr__(self, "mediator", mediator)
        object.__setattr__(self, "outcome", outcome)
        object.__setattr__(self, "_counts", counts)

    @property
    def n_units(self) -> int:
        return int(self.trial.shape[0])

    @property
    def n_trials(self) -> int:
        return self.registry.n_trials

    @property
    def arm_counts(self) -> np.ndarray:
        """K x 2 array of (control, treated) counts."""
        return self._counts

    def units(self) -> Iterator[UnitRecord]:
        for i in range(self.n_units):
            yield UnitRecord(
                str(self.unit_id[i]),
                int(self.trial[i]) + 1,
                int(self.treatment[i]),
                float(self.mediator[i]),
                float(self.outcome[i]),
            )

    def __len__(self) -> int:
        return self.n_units


def _arm_moments(values: np.ndarray, cell: np.ndarray, counts: np.ndarray):
    """Per-(trial, arm) mean and unbiased variance of ``values``."""
    ncell = counts.size
    sums = np.bincount(cell, weights=values, minlength=ncell).reshape(counts.shape)
    means = sums / counts
    dev = values - means.ravel()[cell]
    ss = np.bincount(cell, weights=dev * dev, minlength=ncell).reshape(counts.shape)
    return means, ss


def summarize_trials(data: Dataset, order: int) -> list[TrialSummary]:
    """Per-trial ATEs on the outcome and on each mediator power 1..order.

    ``ate_m[p-1]`` is the difference in arm means of M**p, not the p-th power
    of the ATE on M.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    counts = data.arm_counts.astype(float)
    cell = data.trial * 2 + data.treatment
    n1, n0 = counts[:, 1], counts[:, 0]
    dof = n1 + n0 - 2
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(dof > 0, (1.0 / n1 + 1.0 / n0) / dof, np.nan)

    def ate(values):
        means, ss = _arm_moments(values, cell, counts)
        return means[:, 1] - means[:, 0], (ss[:, 0] + ss[:, 1]) * scale

    ate_y, var_y = ate(data.outcome)
    ate_m, var_m = [], []
    power = np.ones_like(data.mediator)
    for _ in range(order):
        power = power * data.mediator
        a, v = ate(power)
        ate_m.append(a)
        var_m.append(v)
    ate_m = np.column_stack(ate_m)
    var_m = np.column_stack(var_m)
    reg = data.registry
    return [
        TrialSummary(
            trial_id=k + 1,
            n_treat=int(n1[k]),
            n_control=int(n0[k]),
            ate_y=float(ate_y[k]),
            ate_m=tuple(float(x) for x in ate_m[k]),
            covariates=tuple(float(x) for x in reg.covariates[k]),
            var_ate_y=None if np.isnan(var_y[k]) else float(var_y[k]),
            var_ate_m=None if np.any(np.isnan(var_m[k])) else tuple(float(x) for x in var_m[k]),
            label=reg.labels[k],
        )
        for k in range(reg.n_trials)
    ]


def summary_arrays(summaries: Sequence[TrialSummary], order: int | None = None):
    """Stack summaries into (ate_y, ate_m[:, :order], H) arrays."""
    if not summaries:
        raise InsufficientTrialsError("no trial summaries supplied")
    order = order or min(s.order for s in summaries)
    if any(s.order < order for s in summaries):
        raise DataError(f"summaries carry fewer than {order} mediator powers")
    ate_y = np.array([s.ate_y for s in summaries], dtype=float)
    ate_m = np.array([s.ate_m[:order] for s in summaries], dtype=float)
    H = np.array([s.covariates for s in summaries], dtype=float)
    if H.ndim != 2 or H.shape[1] == 0:
        raise DataError("summaries must carry at least one trial covariate")
    return ate_y, ate_m, H


@dataclass(frozen=True)
class RelevanceReport:
    passed: bool
    residual_variance: float
    threshold: float
    n_trials: int
    n_covariates: int
    sampling_variance: float | None
    f_statistic: float | None
    p_value: float | None

    @property
    def status(self) -> str:
        return "PASS" if self.passed else "FAIL"


def check_relevance(summaries: Sequence[TrialSummary], threshold: float | None = None) -> RelevanceReport:
    """Check that ATEs on the mediator still vary after conditioning on H.

    Regresses ``ate_m[0]`` on the trial covariates; PASS when the residual
    variance exceeds ``threshold``. When the summaries carry sampling
    variances, the F-style statistic is residual variance over mean sampling
    variance, and the default threshold is twice the mean sampling variance
    (pure sampling noise gives F near 1). Without sampling variances the
    default threshold is 0.
    """
    _, ate_m, H = summary_arrays(summaries, 1)
    K, J = H.shape
    if K <= J + 1:
        raise InsufficientTrialsError("insufficient trials to verify relevance")
    fit = ols(H, ate_m[:, 0])
    resid_var = fit.residual_variance
    # an exact fit leaves only rounding error behind
    if resid_var <= 1e-24 * max(float(np.mean(ate_m[:, 0] ** 2)), np.finfo(float).tiny):
        resid_var = 0.0
    variances = [s.var_ate_m[0] for s in summaries if s.var_ate_m is not None]
    if len(variances) == K:
        samp = float(np.mean(variances))
        f_stat = resid_var / samp if samp > 0 else float("inf")
        p = chi2_sf(f_stat * (K - J), K - J) if np.isfinite(f_stat) else 0.0
    else:
        samp = f_stat = p = None
    if threshold is None:
        threshold = 2.0 * samp if samp is not None else 0.0
    return RelevanceReport(
        passed=bool(resid_var > threshold),
        residual_variance=resid_var,
        threshold=float(threshold),
        n_trials=K,
        n_covariates=J,
        sampling_variance=samp,
        f_statistic=f_stat,
        p_value=p,
    )
