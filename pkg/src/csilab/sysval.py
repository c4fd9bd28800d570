"""System-level evaluation: feedback pipelines, ZF precoding and sum rate.

Channel matrices hold one user per row, and the rows are used exactly as they
are fed back.  The gain of user ``k`` on stream ``i`` is ``(H @ V)[k, i]``, so
zero forcing on ``H_hat`` removes inter-user interference whenever
``H_hat == H``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .codebook import Codebook, quantize_batch
from .errors import EvaluationFailedError, InvalidInputError, SingularMatrixError

__all__ = [
    "SimilarityStats",
    "SumRatePoint",
    "zf_precoder",
    "sum_rate",
    "pipeline_scores",
    "eval_cosine",
    "feedback_channels",
    "eval_sumrate",
    "sumrate_per_drop",
    "draw_drops",
    "paired_bootstrap_ci",
    "unpaired_bootstrap_ci",
]

MAX_CONDITION = 1e12


@dataclass(frozen=True)
class SimilarityStats:
    mean: float
    median: float
    p5: float
    count: int
    scores: np.ndarray = field(repr=False, compare=False, default=None)


@dataclass(frozen=True)
class SumRatePoint:
    snr_db: float
    rate: float
    drops_averaged: int
    drops_skipped: int = 0


def zf_precoder(H_hat, total_power: float = 1.0) -> np.ndarray:
    """Zero-forcing precoder ``c H^H (H H^H)^-1`` with ``||V||_F^2 = total_power``.

    Raises
    ------
    SingularMatrixError
        If the condition number of ``H_hat`` exceeds 1e12.
    """
    H_hat = np.atleast_2d(np.asarray(H_hat, dtype=np.complex128))
    if total_power <= 0:
        raise InvalidInputError("total power must be positive")
    k, n = H_hat.shape
    if k > n:
        raise SingularMatrixError(f"{k} users exceed {n} transmit dimensions")
    cond = np.linalg.cond(H_hat)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularMatrixError(f"channel estimate is rank deficient (condition number {cond:.3g})")
    gram = H_hat @ H_hat.conj().T
    W = H_hat.conj().T @ np.linalg.solve(gram, np.eye(k))
    c = np.sqrt(total_power / np.sum(np.abs(W) ** 2))
    return c * W


def sum_rate(H_true, V, noise_power: float) -> float:
    """``sum_k log2(1 + |g_kk|^2 / (sum_{i != k} |g_ki|^2 + noise))`` with ``G = H V``."""
    if noise_power <= 0:
        raise InvalidInputError("noise power must be positive")
    G = np.abs(np.atleast_2d(H_true) @ np.atleast_2d(V)) ** 2
    signal = np.diag(G)
    interference = G.sum(axis=1) - signal
    return float(np.sum(np.log2(1.0 + signal / (interference + noise_power))))


def _check_pair(cb_ue: Codebook, cb_bs: Codebook):
    if cb_ue.size != cb_bs.size or cb_ue.n_c != cb_bs.n_c:
        raise InvalidInputError(
            f"UE codebook {cb_ue.size}x{cb_ue.n_c} and BS codebook {cb_bs.size}x{cb_bs.n_c} differ in shape")


def feedback_channels(channels, cb_ue: Codebook, cb_bs: Codebook) -> np.ndarray:
    """Channels as reconstructed at the BS: ``cb_bs[quantize(h, cb_ue)]``."""
    _check_pair(cb_ue, cb_bs)
    idx, _ = quantize_batch(channels, cb_ue)
    return cb_bs.entries[idx]


def pipeline_scores(channels, cb_ue: Codebook, cb_bs: Codebook) -> np.ndarray:
    """Per-sample cosine similarity between each channel and its BS reconstruction."""
    _check_pair(cb_ue, cb_bs)
    H = np.asarray(channels, dtype=np.complex128)
    idx, sim = quantize_batch(H, cb_ue)
    if cb_bs is cb_ue:
        return sim
    G = cb_bs.entries[idx]
    s = np.abs(np.sum(G.conj() * H, axis=1)) / np.linalg.norm(H, axis=1)
    return np.minimum(s, 1.0)


def eval_cosine(channels, cb_ue: Codebook, cb_bs: Codebook) -> SimilarityStats:
    """Mean / median / 5th-percentile similarity of a feedback pipeline."""
    scores = pipeline_scores(channels, cb_ue, cb_bs)
    if scores.size == 0:
        raise EvaluationFailedError("empty test split")
    return SimilarityStats(float(np.mean(scores)), float(np.median(scores)),
                           float(np.percentile(scores, 5)), int(scores.size), scores)


def draw_drops(n_samples: int, users: int, drops: int, seed: int) -> np.ndarray:
    """``(drops, users)`` sample indices; users within a drop are distinct."""
    if users < 1 or drops < 1:
        raise InvalidInputError("users and drops must be >= 1")
    if users * drops > n_samples:
        raise InvalidInputError(f"{drops} drops of {users} users need more than {n_samples} test samples")
    rng = np.random.default_rng(seed)
    return np.stack([rng.choice(n_samples, users, replace=False) for _ in range(drops)])


def sumrate_per_drop(channels, cb_ue: Optional[Codebook], cb_bs: Optional[Codebook], users: int,
                     snr_db: Sequence[float], drops: int, seed: int) -> np.ndarray:
    """Sum rate of every drop at every SNR, ``(drops, len(snr_db))``; NaN marks singular drops.

    Passing ``None`` for both codebooks evaluates perfect CSI at the BS.
    """
    H = np.asarray(channels, dtype=np.complex128)
    if (cb_ue is None) != (cb_bs is None):
        raise InvalidInputError("give both codebooks or neither (perfect CSI)")
    H_hat = H if cb_ue is None else feedback_channels(H, cb_ue, cb_bs)
    picks = draw_drops(len(H), users, drops, seed)
    noise = 10.0 ** (-np.asarray(snr_db, dtype=float) / 10.0)
    rates = np.full((drops, len(noise)), np.nan)
    for d, sel in enumerate(picks):
        try:
            V = zf_precoder(H_hat[sel], 1.0)
        except SingularMatrixError:
            continue
        for j, sigma2 in enumerate(noise):
            rates[d, j] = sum_rate(H[sel], V, sigma2)
    return rates


def eval_sumrate(channels, cb_ue: Optional[Codebook], cb_bs: Optional[Codebook], users: int = 4,
                 snr_db: Sequence[float] = (0.0, 10.0, 20.0), drops: int = 200, seed: int = 0) -> list:
    """Average ZF sum rate over random multi-user drops, one point per SNR."""
    rates = sumrate_per_drop(channels, cb_ue, cb_bs, users, snr_db, drops, seed)
    ok = ~np.isnan(rates[:, 0])
    if not ok.any():
        raise EvaluationFailedError("every drop produced a singular ZF problem")
    return [SumRatePoint(float(s), float(np.mean(rates[ok, j])), int(ok.sum()), int((~ok).sum()))
            for j, s in enumerate(snr_db)]


def paired_bootstrap_ci(a, b, n_boot: int = 2000, level: float = 0.95, seed: int = 0):
    """Percentile bootstrap interval of ``mean(a - b)`` over paired samples.

    Returns ``(point, low, high)``.
    """
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    diff = diff[~np.isnan(diff)]
    if diff.size == 0:
        raise EvaluationFailedError("no paired samples")
    rng = np.random.default_rng(seed)
    means = np.empty(n_boot)
    for i in range(n_boot):
        means[i] = diff[rng.integers(0, diff.size, diff.size)].mean()
    tail = 100 * (1 - level) / 2
    return float(diff.mean()), float(np.percentile(means, tail)), float(np.percentile(means, 100 - tail))


def unpaired_bootstrap_ci(a, b, n_boot: int = 2000, level: float = 0.95, seed: int = 0):
    """Bootstrap interval of ``mean(a) - mean(b)`` for independent samples."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    rng = np.random.default_rng(seed)
    means = np.empty(n_boot)
    for i in range(n_boot):
        means[i] = a[rng.integers(0, a.size, a.size)].mean() - b[rng.integers(0, b.size, b.size)].mean()
    tail = 100 * (1 - level) / 2
    return float(a.mean() - b.mean()), float(np.percentile(means, tail)), float(np.percentile(means, 100 - tail))
