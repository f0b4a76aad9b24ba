"""Source-recovery and denoising metrics.

The headline recovery number is the mean absolute Pearson correlation
between true and estimated components under an optimal one-to-one
assignment; denoising quality is the mean per-channel correlation between
decoded posterior means and the true noise-free observations.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from .errors import MissingGroundTruth, ShapeMismatch
from .inference import mean_field_cycle
from .model import Dataset
from .nets import MlpWeights, decoder_forward
from .training import TrainConfig, TrainResult, train


@dataclass
class MccReport:
    """Mean absolute correlation under the best one-to-one matching."""

    score: float
    assignment: np.ndarray  # column j of s_est matched to true column assignment[j]? see mcc()
    per_pair: np.ndarray  # (N,) matched absolute correlations
    corr_matrix: np.ndarray  # (N, N) |r| between true (rows) and estimated (cols)


def _abs_corr(a: np.ndarray, b: np.ndarray) -> float:
    sa, sb = a.std(), b.std()
    # constant columns (up to rounding) contribute zero by convention
    if sa <= 1e-15 * (np.max(np.abs(a)) + 1.0) or sb <= 1e-15 * (np.max(np.abs(b)) + 1.0):
        return 0.0
    r = float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))
    return abs(r)


def _lexicographic_optimal_assignment(cost: np.ndarray) -> np.ndarray:
    """Min-cost row->col assignment; ties broken lexicographically.

    Greedy over rows: fix the smallest column for which an optimal
    completion of the remaining rows still exists.
    """
    n = cost.shape[0]
    rows, cols = linear_sum_assignment(cost)
    best = cost[rows, cols].sum()
    chosen: list[int] = []
    free = list(range(n))
    for i in range(n):
        for c in sorted(free):
            fixed = cost[np.arange(i), chosen].sum() + cost[i, c]
            rest_rows = np.arange(i + 1, n)
            rest_cols = [j for j in free if j != c]
            if rest_rows.size:
                sub = cost[np.ix_(rest_rows, rest_cols)]
                r2, c2 = linear_sum_assignment(sub)
                fixed += sub[r2, c2].sum()
            if fixed <= best + 1e-12:
                chosen.append(c)
                free.remove(c)
                break
    return np.array(chosen)


def mcc(
    s_true: np.ndarray, s_est: np.ndarray, method: str = "pearson"
) -> MccReport:
    """Mean absolute correlation coefficient under optimal matching.

    ``assignment[i]`` is the estimated column matched to true column i.
    Zero-variance columns contribute r = 0.  ``method="spearman"`` ranks
    both sides first.
    """
    s_true = np.asarray(s_true, dtype=np.float64)
    s_est = np.asarray(s_est, dtype=np.float64)
    if s_true.shape != s_est.shape:
        raise ShapeMismatch(f"shapes differ: {s_true.shape} vs {s_est.shape}")
    if s_true.shape[0] < 3:
        raise ShapeMismatch("need at least 3 samples for a correlation")
    if method == "spearman":
        s_true = rankdata(s_true, axis=0).astype(np.float64)
        s_est = rankdata(s_est, axis=0).astype(np.float64)
    elif method != "pearson":
        raise ValueError(f"unknown correlation method {method!r}")
    n = s_true.shape[1]
    corr = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            corr[i, j] = _abs_corr(s_true[:, i], s_est[:, j])
    assignment = _lexicographic_optimal_assignment(-corr)
    per_pair = corr[np.arange(n), assignment]
    return MccReport(
        score=float(per_pair.mean()),
        assignment=assignment,
        per_pair=per_pair,
        corr_matrix=corr,
    )


def posterior_component_means(
    dataset: Dataset, params, encoder: MlpWeights, inner_iters: int = 8
) -> np.ndarray:
    """Posterior means of every component's observable coordinate."""
    res = mean_field_cycle(dataset.x, params, encoder, inner_iters=inner_iters)
    return np.stack([c.q_y.means[:, 0] for c in res.components], axis=1)


def denoise_score(dataset: Dataset, params, encoder: MlpWeights) -> float:
    """Correlation between decoded posterior means and true noise-free data.

    Runs inference, pushes posterior component means through the fitted
    decoder, and averages the per-channel Pearson correlation against the
    simulated f(s).  Constant channels contribute 0.
    """
    if dataset.f_s is None:
        raise MissingGroundTruth("dataset has no noise-free ground truth")
    s_hat = posterior_component_means(dataset, params, encoder)
    f_hat = decoder_forward(params.decoder, s_hat)
    scores = [
        _abs_corr(f_hat[:, m], dataset.f_s[:, m]) for m in range(dataset.M)
    ]
    return float(np.mean(scores))


@dataclass
class DataSizeRow:
    T: int
    mcc: float
    per_seed: list[float] = field(default_factory=list)


def data_size_study(
    base_dataset_factory,
    sizes: list[int],
    config: TrainConfig,
    seeds: Optional[list[int]] = None,
) -> list[DataSizeRow]:
    """Train with an equal step budget at several lengths and report MCC.

    ``base_dataset_factory(T, seed)`` must return a simulated Dataset of
    length T.  One model is trained per (size, seed); rows carry the mean
    and the per-seed scores.
    """
    seeds = seeds if seeds is not None else [config.seed]
    rows: list[DataSizeRow] = []
    for size in sizes:
        per_seed = []
        for seed in seeds:
            data = base_dataset_factory(size, seed)
            cfg = TrainConfig(**{**config.__dict__, "seed": seed})
            result = train(data, cfg)
            s_hat = posterior_component_means(data, result.params, result.encoder)
            per_seed.append(mcc(data.s, s_hat).score)
        rows.append(DataSizeRow(T=size, mcc=float(np.mean(per_seed)), per_seed=per_seed))
    return rows


def brute_force_assignment(corr: np.ndarray) -> tuple[np.ndarray, float]:
    """Reference optimal matching by enumeration (tests and small N)."""
    n = corr.shape[0]
    best_perm = None
    best_val = -np.inf
    for perm in itertools.permutations(range(n)):
        val = sum(corr[i, perm[i]] for i in range(n))
        if val > best_val + 1e-15:
            best_val = val
            best_perm = perm
    return np.array(best_perm), best_val / n
