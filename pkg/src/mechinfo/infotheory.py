"""k-nearest-neighbour estimators of entropy and mutual information.

Mutual information uses the Kraskov-Stoegbauer-Grassberger construction with
max-norm distances in the joint space. Marginal and joint entropies are the
coordinate-independent (limiting density of discrete points) variants that
share the KSG neighbour statistics, so that

    h_r(X) + h_r(Y) - h_r(X, Y) == I(X; Y)

holds up to floating-point rounding.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma

from .errors import InvalidInputError

DEFAULT_K = 5
ZERO_THRESHOLD = 1e-9
TIE_JITTER = 1e-12
KDTREE_MAX_DIM = 12


@dataclass(frozen=True)
class EntropyEstimate:
    value: float
    kind: str  # "marginal_x" | "marginal_y" | "joint"
    k: int
    n: int


@dataclass(frozen=True)
class MIEstimate:
    value: float
    k: int
    n: int
    est_variance: float

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class NeighborStats:
    """Per-sample statistics shared by every estimator in this module."""

    n_x: np.ndarray
    n_y: np.ndarray
    rho: np.ndarray  # twice the max-norm distance to the k-th joint neighbour
    k: int
    d_x: int
    d_y: int

    @property
    def n(self):
        return len(self.rho)


def as_samples(a):
    """Coerce to an ``(N, d)`` float array; 1-D input becomes one column."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise InvalidInputError(f"expected a 2-D sample matrix, got shape {a.shape}")
    if a.shape[0] == 0 or a.shape[1] == 0:
        raise InvalidInputError("empty sample matrix")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("sample matrix contains non-finite values")
    return a


def standardize(samples):
    """Zero-mean, unit-variance columns with tiny entries flushed to zero.

    Constant columns map to all zeros. Entries with magnitude below 1e-9
    after scaling are set to exactly 0.
    """
    a = as_samples(samples)
    if a.shape[0] < 2:
        raise InvalidInputError("standardize needs at least two samples")
    out = a - a.mean(axis=0)
    scale = out.std(axis=0)
    constant = scale <= 1e-14 * np.maximum(np.abs(a).max(axis=0), 1e-300)
    scale[constant] = 1.0
    out /= scale
    out[:, constant] = 0.0
    out[np.abs(out) < ZERO_THRESHOLD] = 0.0
    return out


def _tie_jitter(shape, rows):
    # deterministic pseudo-random offsets in [-0.5, 0.5) from the sample index
    i = rows[:, None].astype(float) + 1.0
    j = np.arange(shape[1], dtype=float)[None, :] + 1.0
    return np.modf(i * 0.6180339887498949 + j * 0.4142135623730951)[0] - 0.5


def _kth_neighbor_distance(z, k, workers=1):
    if z.shape[1] <= KDTREE_MAX_DIM:
        dist, _ = cKDTree(z).query(z, k + 1, p=np.inf, workers=workers)
        return dist[:, -1]
    out = np.empty(len(z))
    block = max(1, 2_000_000 // (len(z) * z.shape[1]))
    for start in range(0, len(z), block):
        d = np.abs(z[start:start + block, None, :] - z[None, :, :]).max(axis=-1)
        out[start:start + block] = np.partition(d, k, axis=1)[:, k]
    return out


def _strict_counts(points, radius, workers=1):
    # points strictly closer than `radius`, excluding the point itself
    inner = np.nextafter(radius, 0.0)
    if points.shape[1] <= KDTREE_MAX_DIM:
        tree = cKDTree(points)
        counts = tree.query_ball_point(points, inner, p=np.inf,
                                       return_length=True, workers=workers)
        return np.asarray(counts) - 1
    out = np.empty(len(points), dtype=int)
    block = max(1, 2_000_000 // (len(points) * points.shape[1]))
    for start in range(0, len(points), block):
        d = np.abs(points[start:start + block, None, :] - points[None, :, :]).max(axis=-1)
        out[start:start + block] = (d <= inner[start:start + block, None]).sum(axis=1) - 1
    return out


def neighbor_statistics(x, y, k=DEFAULT_K, standardized=False, workers=1):
    """Joint-space k-NN radii and strict marginal counts.

    Parameters
    ----------
    x, y : array_like, shape (N, d_x) and (N, d_y)
    k : int
        Neighbour order in the joint space.
    standardized : bool
        Skip :func:`standardize` when the inputs are already scaled.
    """
    x = as_samples(x)
    y = as_samples(y)
    if len(x) != len(y):
        raise InvalidInputError(f"sample count mismatch: {len(x)} vs {len(y)}")
    n = len(x)
    if k < 1 or k >= n:
        raise InvalidInputError(f"neighbour count k={k} needs 1 <= k < N={n}")
    if not standardized:
        x = standardize(x)
        y = standardize(y)
    z = np.hstack([x, y])
    eps = _kth_neighbor_distance(z, k, workers)
    zero = eps <= 0.0
    if np.any(zero):
        rows = np.flatnonzero(zero)
        z = z.copy()
        z[rows] += TIE_JITTER * _tie_jitter(z.shape, rows)
        eps = _kth_neighbor_distance(z, k, workers)
        if np.any(eps <= 0.0):
            # fully degenerate sample (e.g. all rows equal); jitter everything
            z += TIE_JITTER * _tie_jitter(z.shape, np.arange(n))
            eps = _kth_neighbor_distance(z, k, workers)
    d_x = x.shape[1]
    n_x = _strict_counts(z[:, :d_x], eps, workers)
    n_y = _strict_counts(z[:, d_x:], eps, workers)
    return NeighborStats(n_x=n_x, n_y=n_y, rho=2.0 * eps, k=k, d_x=d_x, d_y=y.shape[1])


def mi_from_stats(stats):
    terms = digamma(stats.n_x + 1.0) + digamma(stats.n_y + 1.0)
    value = digamma(stats.k) + digamma(stats.n) - terms.mean()
    var = terms.var(ddof=1) / stats.n if stats.n > 1 else float("inf")
    return MIEstimate(float(value), stats.k, stats.n, float(var))


def ksg_mutual_information(x, y, k=DEFAULT_K, standardized=False, workers=1):
    """KSG estimate of I(X; Y) in nats.

    ``est_variance`` is the plug-in variance of the per-sample digamma terms
    divided by N; it carries the O(1/N) scaling and is only a noise scale.
    Small negative values are returned as-is.
    """
    return mi_from_stats(neighbor_statistics(x, y, k, standardized, workers))


def _log_rho_normalized(stats):
    d = stats.d_x + stats.d_y
    log_rho = np.log(stats.rho)
    # <rho^d>^(1/d) computed in log space to avoid underflow for large d
    shift = log_rho.max()
    log_norm = shift + np.log(np.mean(np.exp(d * (log_rho - shift)))) / d
    return log_rho - log_norm


def entropies_from_stats(stats):
    mean_log = _log_rho_normalized(stats).mean()
    psi_n = digamma(stats.n)
    h_x = -digamma(stats.n_x + 1.0).mean() + psi_n + stats.d_x * mean_log
    h_y = -digamma(stats.n_y + 1.0).mean() + psi_n + stats.d_y * mean_log
    h_xy = -digamma(stats.k) + psi_n + (stats.d_x + stats.d_y) * mean_log
    return (
        EntropyEstimate(float(h_x), "marginal_x", stats.k, stats.n),
        EntropyEstimate(float(h_y), "marginal_y", stats.k, stats.n),
        EntropyEstimate(float(h_xy), "joint", stats.k, stats.n),
    )


def lddp_entropies(x, y, k=DEFAULT_K, standardized=False, workers=1):
    """Coordinate-independent entropies ``(h_r(X), h_r(Y), h_r(X,Y))``.

    The invariant measure factorizes over the marginals and is estimated
    from the joint neighbour radii, which are rescaled by
    ``<rho^(d_x+d_y)>^(1/(d_x+d_y))``. Strong dependence between X and Y
    biases these entropies low; no correction is applied.
    """
    return entropies_from_stats(neighbor_statistics(x, y, k, standardized, workers))


def ksg_entropies(x, y, k=DEFAULT_K, standardized=False, workers=1):
    """Classical (coordinate-dependent) KSG entropies with max-norm cubes.

    Same neighbour statistics as :func:`lddp_entropies` but without the
    invariant-measure rescaling, so values are differential entropies in
    the standardized coordinates.
    """
    stats = neighbor_statistics(x, y, k, standardized, workers)
    mean_log = np.log(stats.rho).mean()
    psi_n = digamma(stats.n)
    h_x = -digamma(stats.n_x + 1.0).mean() + psi_n + stats.d_x * mean_log
    h_y = -digamma(stats.n_y + 1.0).mean() + psi_n + stats.d_y * mean_log
    h_xy = -digamma(stats.k) + psi_n + (stats.d_x + stats.d_y) * mean_log
    return (
        EntropyEstimate(float(h_x), "marginal_x", k, stats.n),
        EntropyEstimate(float(h_y), "marginal_y", k, stats.n),
        EntropyEstimate(float(h_xy), "joint", k, stats.n),
    )


def conditional_mi_gain(x, y_selected, y_candidate, k=DEFAULT_K, workers=1):
    """Information gain I(X; Y_c | Y_s) = I(X; Y_s, Y_c) - I(X; Y_s).

    With an empty selection this is plain I(X; Y_c).
    """
    x = as_samples(x)
    y_candidate = as_samples(y_candidate)
    if y_selected is None or np.size(y_selected) == 0:
        return ksg_mutual_information(x, y_candidate, k, workers=workers)
    y_selected = as_samples(y_selected)
    if not (len(x) == len(y_selected) == len(y_candidate)):
        raise InvalidInputError("inputs must share the sample count")
    both = ksg_mutual_information(x, np.hstack([y_selected, y_candidate]), k, workers=workers)
    base = ksg_mutual_information(x, y_selected, k, workers=workers)
    return MIEstimate(both.value - base.value, k, both.n, both.est_variance + base.est_variance)
