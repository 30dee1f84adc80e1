"""Gaussian mixture core: densities, likelihoods, EM fitting, cluster statistics.

The fitting path is deliberately plain maximum-likelihood EM:

* means are seeded from data points with a k-means++ style weighted draw,
* covariances start at the pooled covariance of the whole sample,
* mixing weights start uniform,
* several independent restarts are run and the best log-likelihood wins.

Seeding draws are keyed by row *content* (a keyed hash of the row bytes feeds
an exponential race), so a fit is reproducible for a given seed and
equivariant under row reordering.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DegenerateFitError, InsufficientPointsError, SingularCovarianceError
from .rng import derive_seed

LOG_2PI = float(np.log(2.0 * np.pi))

# Soft cluster mass below which an EM component is considered collapsed.
_MIN_SOFT_COUNT = 1e-9


def validate_data(data) -> np.ndarray:
    """Coerce input to a C-contiguous float64 matrix of shape (n, p).

    One-dimensional input is treated as a single feature column.  Empty or
    non-finite input raises ``ValueError``.
    """
    arr = np.ascontiguousarray(data, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-d data matrix, got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"data matrix must be non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("data matrix contains non-finite values")
    return arr


@dataclass(frozen=True)
class MixtureModel:
    """Parameters of a Gaussian mixture: weights (G,), means (G, p), covariances (G, p, p)."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "means", np.atleast_2d(np.asarray(self.means, dtype=float)))
        cov = np.asarray(self.covariances, dtype=float)
        if cov.ndim == 2:
            cov = cov[None, :, :]
        object.__setattr__(self, "covariances", cov)
        g = self.weights.shape[0]
        if self.means.shape[0] != g or self.covariances.shape[0] != g:
            raise ValueError("weights, means and covariances disagree on the number of components")
        p = self.means.shape[1]
        if self.covariances.shape[1:] != (p, p):
            raise ValueError("covariance blocks must be (p, p)")
        if np.any(self.weights <= 0):
            raise ValueError("mixing weights must be strictly positive")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ValueError("mixing weights must sum to 1 within 1e-12")

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def validate(self) -> None:
        """Check symmetry and positive definiteness of every covariance block."""
        for g in range(self.n_components):
            cov = self.covariances[g]
            if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
                raise ValueError(f"covariance of component {g} is not symmetric")
            _cholesky_strict(cov)


@dataclass(frozen=True)
class FitConfig:
    """Knobs for :func:`em_fit`.

    Attributes:
        restarts: number of independently seeded EM runs; the best wins.
        max_iter: cap on EM update sweeps per run.
        rel_tol: relative log-likelihood change that counts as converged.
        reg_eps: diagonal ridge factor used when a covariance loses positive
            definiteness (scaled by trace/p before being added).
        seed: master seed; every random draw derives from it.
    """

    restarts: int = 3
    max_iter: int = 1000
    rel_tol: float = 1e-8
    reg_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.reg_eps < 0:
            raise ValueError("reg_eps must be nonnegative")


@dataclass(frozen=True)
class ClusterStats:
    """Per-cluster sample statistics under a hard assignment.

    counts (G,) holds n_g, weights (G,) holds n_g / n, means (G, p) the sample
    means, covariances (G, p, p) the sample covariances with divisor n_g - 1.
    """

    counts: np.ndarray
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    @property
    def n_clusters(self) -> int:
        return self.counts.shape[0]

    @property
    def n_total(self) -> int:
        return int(self.counts.sum())

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class EmRun:
    """One EM run: final model, its log-likelihood, and the per-sweep history."""

    model: MixtureModel
    loglik: float
    history: tuple


def _cholesky_strict(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, raising ``SingularCovarianceError`` on failure."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(f"covariance is not positive definite: {exc}") from exc


def _cholesky_ridged(cov: np.ndarray, reg_eps: float):
    """Cholesky with one regularized retry.

    If the factorization fails, ``reg_eps * trace(cov)/p`` is added to the
    diagonal and the factorization is attempted once more.  Returns the factor
    together with the (possibly ridged) covariance actually factored.
    """
    try:
        return np.linalg.cholesky(cov), cov
    except np.linalg.LinAlgError:
        pass
    p = cov.shape[0]
    ridge = reg_eps * float(np.trace(cov)) / p
    ridged = cov + ridge * np.eye(p)
    try:
        return np.linalg.cholesky(ridged), ridged
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(
            "covariance is not positive definite even after regularization"
        ) from exc


def log_gaussian_density(x, mean, cov) -> float:
    """Log density of a multivariate Gaussian at a single point.

    Example:
        >>> log_gaussian_density([0.0], [0.0], [[1.0]])  # doctest: +ELLIPSIS
        -0.918938...
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    mean = np.asarray(mean, dtype=float).reshape(-1)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    p = x.shape[0]
    if mean.shape[0] != p or cov.shape != (p, p):
        raise ValueError("dimension mismatch between point, mean and covariance")
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
        raise ValueError("covariance must be symmetric")
    chol = _cholesky_strict(cov)
    logdet = 2.0 * float(np.log(np.diag(chol)).sum())
    z = solve_triangular(chol, x - mean, lower=True)
    return -0.5 * (p * LOG_2PI + logdet + float(z @ z))


def _component_log_densities(data: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """Per-point, per-component Gaussian log densities, shape (n, G)."""
    n, p = data.shape
    n_comp = means.shape[0]
    out = np.empty((n, n_comp))
    for g in range(n_comp):
        chol = _cholesky_strict(covs[g])
        logdet = 2.0 * float(np.log(np.diag(chol)).sum())
        z = solve_triangular(chol, (data - means[g]).T, lower=True)
        out[:, g] = -0.5 * (p * LOG_2PI + logdet + np.einsum("ij,ij->j", z, z))
    return out


def _weighted_log_densities(data: np.ndarray, model: MixtureModel) -> np.ndarray:
    if data.shape[1] != model.dim:
        raise ValueError(
            f"data has dimension {data.shape[1]} but the model expects {model.dim}"
        )
    return np.log(model.weights)[None, :] + _component_log_densities(
        data, model.means, model.covariances
    )


def mixture_log_likelihood(data, model: MixtureModel) -> float:
    """Total mixture log-likelihood of the data, accumulated via log-sum-exp."""
    arr = validate_data(data)
    logp = _weighted_log_densities(arr, model)
    top = logp.max(axis=1)
    return float((top + np.log(np.exp(logp - top[:, None]).sum(axis=1))).sum())


def approx_log_likelihood(data, model: MixtureModel, labels) -> float:
    """Hard-assignment log-likelihood.

    Each point contributes only its assigned component's weighted log density,
    which approximates the mixture log-likelihood increasingly well as the
    clusters separate.
    """
    arr = validate_data(data)
    lab = np.asarray(labels, dtype=int)
    if lab.shape != (arr.shape[0],):
        raise ValueError("labels must be one integer per data row")
    if lab.min() < 0 or lab.max() >= model.n_components:
        raise ValueError("labels refer to components outside the model")
    logp = _weighted_log_densities(arr, model)
    return float(logp[np.arange(arr.shape[0]), lab].sum())


def cluster_stats(data, labels, n_clusters: int | None = None) -> ClusterStats:
    """Sample counts, proportions, means and covariances for a hard clustering.

    Every cluster index in ``[0, n_clusters)`` must hold at least two points;
    otherwise an ``InsufficientPointsError`` naming the cluster is raised.
    """
    arr = validate_data(data)
    lab = np.asarray(labels, dtype=int)
    if lab.shape != (arr.shape[0],):
        raise ValueError("labels must be one integer per data row")
    n_comp = int(lab.max()) + 1 if n_clusters is None else int(n_clusters)
    if lab.min() < 0 or lab.max() >= n_comp:
        raise ValueError("labels out of range for the requested cluster count")
    n, p = arr.shape
    counts = np.bincount(lab, minlength=n_comp)
    means = np.empty((n_comp, p))
    covs = np.empty((n_comp, p, p))
    for g in range(n_comp):
        if counts[g] < 2:
            raise InsufficientPointsError(
                f"cluster {g} has {counts[g]} points; at least 2 are required",
                cluster=g,
            )
        block = arr[lab == g]
        means[g] = block.mean(axis=0)
        centered = block - means[g]
        covs[g] = centered.T @ centered / (counts[g] - 1)
    return ClusterStats(
        counts=counts,
        weights=counts / n,
        means=means,
        covariances=covs,
    )


def hard_labels(data, model: MixtureModel) -> np.ndarray:
    """Maximum-posterior component per row; ties go to the lower index."""
    arr = validate_data(data)
    logp = _weighted_log_densities(arr, model)
    return np.argmax(logp, axis=1)


def _rel_change(a: float, b: float) -> float:
    """Relative log-likelihood change used by every convergence check."""
    return abs(a - b) / max(1.0, abs(a), abs(b))


def _e_step(data, weights, means, covs, reg_eps):
    """One E-step.  Returns (loglik, responsibilities, covariances actually used)."""
    n = data.shape[0]
    n_comp = len(weights)
    used = covs.copy()
    logp = np.empty((n, n_comp))
    p = data.shape[1]
    for g in range(n_comp):
        chol, used[g] = _cholesky_ridged(covs[g], reg_eps)
        logdet = 2.0 * float(np.log(np.diag(chol)).sum())
        z = solve_triangular(chol, (data - means[g]).T, lower=True)
        logp[:, g] = np.log(weights[g]) - 0.5 * (p * LOG_2PI + logdet + np.einsum("ij,ij->j", z, z))
    top = logp.max(axis=1)
    row_ll = top + np.log(np.exp(logp - top[:, None]).sum(axis=1))
    resp = np.exp(logp - row_ll[:, None])
    return float(row_ll.sum()), resp, used


def _m_step(data, resp):
    """Maximum-likelihood update from responsibilities."""
    soft = resp.sum(axis=0)
    if np.any(soft < _MIN_SOFT_COUNT):
        g = int(np.argmin(soft))
        raise DegenerateFitError(f"component {g} collapsed to zero responsibility mass")
    weights = soft / soft.sum()
    means = (resp.T @ data) / soft[:, None]
    n_comp, p = means.shape
    covs = np.empty((n_comp, p, p))
    for g in range(n_comp):
        centered = data - means[g]
        weighted = centered * resp[:, g][:, None]
        cov = weighted.T @ centered / soft[g]
        covs[g] = 0.5 * (cov + cov.T)
    return weights, means, covs


def em_refine(data, model: MixtureModel, *, max_iter: int = 1000,
              rel_tol: float = 1e-8, reg_eps: float = 1e-8) -> EmRun:
    """Run EM updates from explicit starting parameters.

    The log-likelihood history is monotone nondecreasing up to float rounding;
    iteration stops once its relative change drops below ``rel_tol`` or after
    ``max_iter`` update sweeps.  The returned log-likelihood is always that of
    the returned parameters.
    """
    arr = validate_data(data)
    weights = model.weights.copy()
    means = model.means.copy()
    covs = model.covariances.copy()
    loglik, resp, covs = _e_step(arr, weights, means, covs, reg_eps)
    history = [loglik]
    for _ in range(max_iter):
        weights, means, covs = _m_step(arr, resp)
        new_ll, resp, covs = _e_step(arr, weights, means, covs, reg_eps)
        history.append(new_ll)
        if new_ll < loglik - 1e-7 * max(1.0, abs(loglik)):
            raise DegenerateFitError(
                f"log-likelihood decreased from {loglik} to {new_ll}; EM update is inconsistent"
            )
        converged = _rel_change(new_ll, loglik) < rel_tol
        loglik = new_ll
        if converged:
            break
    return EmRun(
        model=MixtureModel(weights=weights, means=means, covariances=covs),
        loglik=loglik,
        history=tuple(history),
    )


def _content_uniforms(data: np.ndarray, key_seed: int, draw: int) -> np.ndarray:
    """One uniform in (0, 1] per row, derived from a keyed hash of the row bytes.

    Keying by content rather than position keeps seeding decisions stable
    under row permutation.
    """
    key = int(key_seed).to_bytes(8, "little") + int(draw).to_bytes(8, "little")
    out = np.empty(data.shape[0])
    for i in range(data.shape[0]):
        digest = hashlib.blake2b(data[i].tobytes(), key=key, digest_size=8).digest()
        out[i] = (int.from_bytes(digest, "little") + 1) / 18446744073709551616.0
    return out


def _seed_mean_indices(data: np.ndarray, n_clusters: int, key_seed: int) -> list[int]:
    """k-means++ style center selection via deterministic exponential races."""
    n = data.shape[0]
    uniforms = _content_uniforms(data, key_seed, 0)
    chosen = [int(np.argmin(-np.log(uniforms)))]
    dist_sq = ((data - data[chosen[0]]) ** 2).sum(axis=1)
    for draw in range(1, n_clusters):
        weights = dist_sq.copy()
        if weights.max() <= 0.0:
            # all remaining points coincide with a chosen center; fall back to
            # the lowest unchosen row
            mask = np.ones(n, dtype=bool)
            mask[chosen] = False
            chosen.append(int(np.flatnonzero(mask)[0]) if mask.any() else chosen[-1])
            continue
        uniforms = _content_uniforms(data, key_seed, draw)
        with np.errstate(divide="ignore"):
            race = -np.log(uniforms) / weights
        pick = int(np.argmin(race))
        chosen.append(pick)
        dist_sq = np.minimum(dist_sq, ((data - data[pick]) ** 2).sum(axis=1))
    return chosen


def _initial_model(data: np.ndarray, n_clusters: int, key_seed: int, reg_eps: float) -> MixtureModel:
    n, p = data.shape
    centers = data[_seed_mean_indices(data, n_clusters, key_seed)].copy()
    if n >= 2:
        pooled = np.atleast_2d(np.cov(data, rowvar=False, ddof=1))
    else:
        pooled = np.eye(p)
    _, pooled = _cholesky_ridged(pooled, max(reg_eps, 1e-10))
    covs = np.broadcast_to(pooled, (n_clusters, p, p)).copy()
    weights = np.full(n_clusters, 1.0 / n_clusters)
    return MixtureModel(weights=weights, means=centers, covariances=covs)


def em_fit(data, n_clusters: int, config: FitConfig = FitConfig()):
    """Fit a Gaussian mixture by restarted EM.

    Returns ``(model, labels, loglik)`` for the restart with the highest
    log-likelihood (ties keep the lowest restart index).  Labels are hard
    maximum-posterior assignments with ties to the lower component.  A restart
    whose solution leaves any hard cluster with fewer than two points is
    discarded as degenerate; if every restart degenerates a
    ``DegenerateFitError`` is raised.
    """
    arr = validate_data(data)
    n, p = arr.shape
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    if n < n_clusters:
        raise ValueError(f"cannot fit {n_clusters} clusters to {n} points")
    if n <= n_clusters * (p + 1):
        warnings.warn(
            f"only {n} points for {n_clusters} clusters in dimension {p}; "
            "the fit is ill-posed",
            stacklevel=2,
        )
    best: tuple[float, int, EmRun, np.ndarray] | None = None
    first_failure: Exception | None = None
    first_failure_run = -1
    for restart in range(config.restarts):
        key_seed = derive_seed(config.seed, 11, restart)
        try:
            start = _initial_model(arr, n_clusters, key_seed, config.reg_eps)
            run = em_refine(
                arr,
                start,
                max_iter=config.max_iter,
                rel_tol=config.rel_tol,
                reg_eps=config.reg_eps,
            )
            labels = hard_labels(arr, run.model)
            counts = np.bincount(labels, minlength=n_clusters)
            if np.any(counts < 2):
                g = int(np.argmin(counts))
                raise DegenerateFitError(
                    f"restart {restart}: hard cluster {g} retained {counts[g]} points",
                    run_index=restart,
                )
        except (DegenerateFitError, SingularCovarianceError) as exc:
            if first_failure is None:
                first_failure = exc
                first_failure_run = restart
            continue
        if best is None or run.loglik > best[0]:
            best = (run.loglik, restart, run, labels)
    if best is None:
        raise DegenerateFitError(
            f"all {config.restarts} restarts degenerated; first failure "
            f"(restart {first_failure_run}): {first_failure}",
            run_index=first_failure_run,
        ) from first_failure
    _, _, run, labels = best
    return run.model, labels, run.loglik
