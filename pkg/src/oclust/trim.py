"""Iterative outlier trimming for Gaussian mixture clustering.

Each iteration fits a mixture to the current data, computes the leave-one-out
subset delta for every row, and measures the KL divergence between those
deltas and the beta-mixture reference implied by the current cluster
statistics.  The row whose removal raises the subset log-likelihood the most
is then trimmed and the loop repeats.  Contaminated data produce a divergence
trace that falls while genuine outliers are being removed and rises again
once trimming starts eating into the good points; the number of outliers is
chosen at the global minimum of that trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .divergence import BinMethod, KlEstimate, build_bins, default_num_bins, kl_divergence
from .errors import DegenerateFitError, InsufficientPointsError, SingularCovarianceError
from .gmm import FitConfig, MixtureModel, cluster_stats, em_fit, validate_data
from .rng import derive_seed
from .subset import DeltaMode, beta_mixture_reference, subset_deltas


@dataclass(frozen=True)
class OclustConfig:
    """Configuration of a trimming run.

    Attributes:
        n_clusters: number of mixture components.
        max_outliers: most points the loop may remove (the trace then has
            ``max_outliers + 1`` entries).  ``None`` selects ceil(0.125 * n).
        fit: EM settings used for every refit.
        delta_mode: how subset deltas are produced (``refit`` or ``frozen``).
        num_bins: histogram bins for the divergence; ``None`` selects
            max(10, ceil(sqrt(n_current))) per iteration.
        bin_method: histogram binning rule.
        refit_max_iter: EM sweep cap for each warm-started leave-one-out refit.
        n_threads: worker threads for the batched leave-one-out refits.
    """

    n_clusters: int
    max_outliers: int | None = None
    fit: FitConfig = field(default_factory=FitConfig)
    delta_mode: DeltaMode = DeltaMode.REFIT
    num_bins: int | None = None
    bin_method: BinMethod = BinMethod.EQUAL_PROBABILITY
    refit_max_iter: int = 100
    n_threads: int = 1

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if self.max_outliers is not None and self.max_outliers < 1:
            raise ValueError("max_outliers must be >= 1")
        if self.num_bins is not None and self.num_bins < 2:
            raise ValueError("num_bins must be >= 2")


@dataclass(frozen=True)
class IterationRecord:
    """State of the loop after ``iteration`` removals.

    ``removed_point`` is the original row trimmed immediately before this
    iteration's measurement (``None`` for iteration 0).
    """

    iteration: int
    removed_point: int | None
    kl: KlEstimate
    loglik: float
    model: MixtureModel


@dataclass(frozen=True)
class OclustResult:
    """Outcome of a trimming run."""

    trace: tuple
    chosen_num_outliers: int
    outlier_indices: tuple
    retained_indices: np.ndarray
    final_labels: np.ndarray
    final_model: MixtureModel
    alpha_hat: float


def default_max_outliers(n: int) -> int:
    """Default trimming budget for n rows: ceil(0.125 * n)."""
    return int(np.ceil(0.125 * n))


def most_likely_outlier(subset_logliks) -> int:
    """Index whose removal leaves the highest subset log-likelihood.

    Ties go to the lowest index.
    """
    values = np.asarray(subset_logliks, dtype=float).reshape(-1)
    if values.size == 0:
        raise ValueError("need at least one subset log-likelihood")
    return int(np.argmax(values))


def oclust_run(data, config: OclustConfig) -> OclustResult:
    """Trim likely outliers one at a time and pick the count that best matches
    the beta-mixture reference.

    Raises ``DegenerateFitError`` (with the partial trace attached) if a
    mid-run fit collapses, and ``ValueError`` if the trimming budget leaves
    too few points to keep the mixture identifiable.
    """
    arr = validate_data(data)
    n, p = arr.shape
    budget = config.max_outliers
    if budget is None:
        budget = default_max_outliers(n)
    if not 1 <= budget < n - config.n_clusters * (p + 2):
        raise ValueError(
            f"max_outliers={budget} is outside [1, {n - config.n_clusters * (p + 2) - 1}] "
            f"for n={n}, n_clusters={config.n_clusters}, p={p}"
        )
    current = arr
    original_rows = np.arange(n)
    removed: list[int] = []
    records: list[IterationRecord] = []
    try:
        for m in range(budget + 1):
            fit_cfg = replace(config.fit, seed=derive_seed(config.fit.seed, 101, m))
            model, labels, loglik = em_fit(current, config.n_clusters, fit_cfg)
            stats = cluster_stats(current, labels, config.n_clusters)
            deltas = subset_deltas(
                current, model, labels, loglik, stats, config.delta_mode,
                rel_tol=config.fit.rel_tol, reg_eps=config.fit.reg_eps,
                refit_max_iter=config.refit_max_iter, n_threads=config.n_threads,
            )
            reference = beta_mixture_reference(stats)
            num_bins = config.num_bins
            if num_bins is None:
                num_bins = default_num_bins(current.shape[0])
            bins = build_bins(reference, num_bins, config.bin_method)
            kl = kl_divergence(deltas, reference, bins)
            records.append(
                IterationRecord(
                    iteration=m,
                    removed_point=removed[m - 1] if m > 0 else None,
                    kl=kl,
                    loglik=loglik,
                    model=model,
                )
            )
            if m < budget:
                local = most_likely_outlier(deltas.values)
                removed.append(int(original_rows[local]))
                current = np.delete(current, local, axis=0)
                original_rows = np.delete(original_rows, local)
    except (DegenerateFitError, SingularCovarianceError, InsufficientPointsError) as exc:
        raise DegenerateFitError(
            f"trimming aborted after {len(records)} of {budget + 1} iterations: {exc}",
            partial_trace=records,
        ) from exc
    kl_values = [record.kl.value for record in records]
    chosen = int(np.argmin(kl_values))  # first minimum: ties favor fewer outliers
    outliers = tuple(removed[:chosen])
    retained = np.setdiff1d(np.arange(n), np.asarray(outliers, dtype=int))
    final_cfg = replace(config.fit, seed=derive_seed(config.fit.seed, 202))
    final_model, final_labels, _ = em_fit(arr[retained], config.n_clusters, final_cfg)
    return OclustResult(
        trace=tuple(records),
        chosen_num_outliers=chosen,
        outlier_indices=outliers,
        retained_indices=retained,
        final_labels=final_labels,
        final_model=final_model,
        alpha_hat=chosen / n,
    )


def outlier_mask(result: OclustResult) -> np.ndarray:
    """Boolean mask over the original rows: True where a row was called an outlier."""
    n = result.retained_indices.shape[0] + len(result.outlier_indices)
    mask = np.zeros(n, dtype=bool)
    mask[list(result.outlier_indices)] = True
    return mask


def error_rates(predicted_outliers, true_outliers):
    """Outlier classification error rates.

    Returns ``(prop_good_as_outlier, prop_outlier_as_good,
    misclassification_rate)`` where the first two are relative to the counts
    of truly good points and true outliers respectively (0.0 when the
    denominator is empty) and the last is relative to all points.
    """
    pred = np.asarray(predicted_outliers, dtype=bool).reshape(-1)
    truth = np.asarray(true_outliers, dtype=bool).reshape(-1)
    if pred.shape != truth.shape:
        raise ValueError("predicted and true outlier masks must have the same length")
    n = pred.shape[0]
    if n == 0:
        raise ValueError("need at least one point")
    n_good = int((~truth).sum())
    n_out = int(truth.sum())
    good_as_outlier = float((pred & ~truth).sum() / n_good) if n_good else 0.0
    outlier_as_good = float((~pred & truth).sum() / n_out) if n_out else 0.0
    misclassified = float((pred != truth).sum() / n)
    return good_as_outlier, outlier_as_good, misclassified


def classify_errors(result: OclustResult, true_outliers):
    """Error rates of a trimming run against ground-truth outlier flags."""
    return error_rates(outlier_mask(result), true_outliers)
