"""Encoder/decoder channel evaluation.

Greedy sensor selection by conditional mutual information, normalized
mutual information against the source entropy, a least-squares decoder, and
rate-distortion bookkeeping against the Shannon lower bound for a
standardized uniform source.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateSourceError, DomainError, InvalidInputError
from .infotheory import (DEFAULT_K, as_samples, entropies_from_stats,
                         ksg_mutual_information, mi_from_stats, neighbor_statistics,
                         standardize)

log = logging.getLogger(__name__)

SLB_TOLERANCE = 0.1


@dataclass
class SensorSet:
    indices: list
    gains: list
    cumulative_mi: float
    mi_path: list = field(default_factory=list)
    step_gains: list = field(default_factory=list, repr=False)
    status: str = "complete"


def _valid_candidates(y):
    return np.flatnonzero(np.any(y != 0.0, axis=0))


def greedy_select(x, candidates, k, knn_k=DEFAULT_K, workers=1, keep_maps=False):
    """Pick ``k`` sensors greedily by conditional MI gain.

    ``candidates`` is ``(N, P)``: one column of readings per candidate
    sensor, computed on the same load samples as ``x``. Ties go to the lowest
    index. Constant candidates carry no information and are never chosen; if
    fewer than ``k`` remain the returned set is partial.

    With ``keep_maps`` the full gain vector (NaN for ineligible candidates)
    of every step is stored in ``step_gains``.
    """
    if k < 1:
        raise InvalidInputError("sensor count must be >= 1")
    xs = standardize(x)
    ys = standardize(candidates)
    if len(xs) != len(ys):
        raise InvalidInputError("x and candidates must share the sample count")
    valid = set(_valid_candidates(ys).tolist())
    selected, gains, path, maps = [], [], [], []
    current = 0.0
    for step in range(k):
        pool = sorted(valid.difference(selected))
        if not pool:
            log.warning("only %d informative candidates for k=%d", len(selected), k)
            break
        totals = np.full(ys.shape[1], np.nan)
        base = ys[:, selected]
        for j in pool:
            y = np.hstack([base, ys[:, j:j + 1]]) if selected else ys[:, j:j + 1]
            stats = neighbor_statistics(xs, y, knn_k, standardized=True, workers=workers)
            totals[j] = mi_from_stats(stats).value
        step_gain = totals - current
        best = int(np.nanargmax(totals))  # first maximum -> lowest index
        if keep_maps:
            maps.append(step_gain)
        gains.append(float(step_gain[best]))
        current = float(totals[best])
        path.append(current)
        selected.append(best)
    status = "complete" if len(selected) == k else "partial"
    return SensorSet(indices=selected, gains=gains, cumulative_mi=current, mi_path=path,
                     step_gains=maps, status=status)


def nmi(x, y, knn_k=DEFAULT_K, return_raw=False):
    """Normalized mutual information I(X;Y) / h_r(X), clamped at zero."""
    stats = neighbor_statistics(x, y, knn_k)
    h_x, _, _ = entropies_from_stats(stats)
    if h_x.value <= 0:
        raise DegenerateSourceError(f"source entropy estimate {h_x.value:.4g} is not positive")
    mi = mi_from_stats(stats).value
    raw = mi / h_x.value
    clamped = max(raw, 0.0)
    if return_raw:
        return clamped, raw, mi, h_x.value
    return clamped


@dataclass
class LinearDecoder:
    W: np.ndarray
    b: np.ndarray
    rank: int
    condition: float
    deficient: bool

    def predict(self, y):
        y = np.asarray(y, dtype=float)
        if self.W.shape[0] == 0:
            return np.repeat(self.b[None, :], len(y), axis=0)
        return as_samples(y) @ self.W + self.b


def fit_linear_decoder(y_train, x_train):
    """Minimum-norm least-squares decoder ``x_hat = y @ W + b``.

    Uses an SVD-based solve on centred data. A rank-deficient ``y`` still
    yields the minimum-norm map; ``deficient`` records it.
    """
    x_train = as_samples(x_train)
    y_train = np.asarray(y_train, dtype=float)
    if y_train.ndim == 1:
        y_train = y_train[:, None]
    n = len(x_train)
    if len(y_train) != n:
        raise InvalidInputError("decoder inputs must share the sample count")
    x_mean = x_train.mean(axis=0)
    k = y_train.shape[1] if y_train.ndim == 2 else 0
    if k == 0:
        return LinearDecoder(W=np.zeros((0, x_train.shape[1])), b=x_mean, rank=0,
                             condition=1.0, deficient=False)
    if n <= k:
        raise InvalidInputError("decoder needs more samples than sensors")
    y_mean = y_train.mean(axis=0)
    yc = y_train - y_mean
    W, _, rank, sv = np.linalg.lstsq(yc, x_train - x_mean, rcond=None)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    return LinearDecoder(W=W, b=x_mean - y_mean @ W, rank=int(rank), condition=cond,
                         deficient=bool(rank < k))


def mse_distortion(x, x_hat):
    """Mean squared error normalized by sample count and dimension."""
    x = as_samples(x)
    x_hat = as_samples(x_hat)
    if x.shape != x_hat.shape:
        raise InvalidInputError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    return float(np.mean((x - x_hat) ** 2))


def shannon_lower_bound(d):
    """R_SLB(D) = max(0, 0.5 log(6 / (pi e D))) in nats per dimension."""
    if not d > 0:
        raise DomainError("distortion must be positive")
    return max(0.0, 0.5 * math.log(6.0 / (math.pi * math.e * d)))


@dataclass
class ChannelReport:
    k: int
    rate: float
    distortion: float
    nmi: float
    nmi_raw: float
    selection_mode: str
    sensors: list
    slb: float
    decoder: str = "linear-least-squares"
    condition: float = 1.0

    @property
    def slb_gap(self):
        return self.rate - self.slb

    @property
    def below_slb(self):
        return self.slb_gap < -SLB_TOLERANCE

    def to_json(self):
        d = asdict(self)
        d["slb_gap"] = self.slb_gap
        d["below_slb"] = self.below_slb
        return json.dumps(d, sort_keys=True, indent=2, default=float)


def evaluate_channel(x, y, sensors, split=(4000, 1000), knn_k=DEFAULT_K, selection_mode="greedy"):
    """Fit the decoder on the first ``split[0]`` samples, score on the next
    ``split[1]``.

    ``x`` is standardized over all samples; ``y`` holds every candidate
    column and ``sensors`` picks the channel inputs. The rate is the KSG
    estimate of I(X; X_hat) on the held-out samples.
    """
    xs = standardize(x)
    y = np.asarray(y, dtype=float)
    n_train, n_test = split
    if n_train + n_test > len(xs):
        raise InvalidInputError("split exceeds the number of samples")
    sensors = list(sensors)
    ys = standardize(y[:, sensors]) if sensors else np.zeros((len(xs), 0))
    train = slice(0, n_train)
    test = slice(n_train, n_train + n_test)
    dec = fit_linear_decoder(ys[train], xs[train])
    x_hat = dec.predict(ys[test])
    mse = mse_distortion(xs[test], x_hat)
    rate = ksg_mutual_information(xs[test], x_hat, knn_k).value
    if sensors:
        n_clamped, n_raw, _, _ = nmi(xs, ys, knn_k, return_raw=True)
    else:
        n_clamped, n_raw = 0.0, 0.0
    slb = shannon_lower_bound(mse) if mse > 0 else math.inf
    return ChannelReport(k=len(sensors), rate=rate, distortion=mse, nmi=n_clamped,
                         nmi_raw=n_raw, selection_mode=selection_mode, sensors=sensors,
                         slb=slb, condition=dec.condition)


def rate_distortion_sweep(x, y, greedy_order, k_values, knn_k=DEFAULT_K, split=(4000, 1000),
                          random_seed=0, n_random=1):
    """Reports for greedy prefixes and random subsets of each size ``k``."""
    rng = np.random.default_rng(random_seed)
    valid = _valid_candidates(standardize(y))
    reports = []
    for k in k_values:
        reports.append(evaluate_channel(x, y, list(greedy_order[:k]), split, knn_k, "greedy"))
        for _ in range(n_random):
            pick = sorted(rng.choice(valid, size=k, replace=False).tolist())
            reports.append(evaluate_channel(x, y, pick, split, knn_k, "random"))
    return reports
