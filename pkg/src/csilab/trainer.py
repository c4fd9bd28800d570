"""Offline codebook enhancement: neural refiner training and closed-form oracles.

``train_ss`` fits the refiner to (conventional codeword, channel) pairs built
once against a fixed codebook.  ``train_ds`` periodically turns the current
network into a candidate codebook, keeps it only if it lowers the dual-side
validation loss, then restarts the network on pairs rebuilt against the
kept codebook.

``oracle_ss`` / ``oracle_ds`` solve the same problem cell by cell with the
top eigenvector of each quantization cell's normalized covariance (a
generalized Lloyd iteration in the dual-side case).  They share no code with
the neural path beyond quantization.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import refiner
from .codebook import Codebook, CodebookKind, quantize_batch
from .errors import DegenerateOutputError, InvalidInputError, NumericFailureError
from .refiner import RefinerConfig

__all__ = [
    "TrainingConfig",
    "TrainRunReport",
    "AdamState",
    "TrainPairs",
    "build_pairs",
    "adam_step",
    "train_ss",
    "train_ds",
    "enhance_codebook",
    "ds_validation_loss",
    "eigen_centroid",
    "oracle_ss",
    "oracle_ds",
    "LloydTrace",
    "snap_params",
]


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 512
    epochs: int = 200
    learning_rate: float = 1e-3
    decay_rate: float = 0.99
    update_interval: int = 40
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if self.epochs < 1:
            raise InvalidInputError("epochs must be >= 1")
        if not 0 < self.decay_rate <= 1:
            raise InvalidInputError("decay_rate must lie in (0, 1]")
        if self.update_interval < 1:
            raise InvalidInputError("update_interval must be >= 1")
        if self.learning_rate < 0:
            raise InvalidInputError("learning_rate must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainRunReport:
    epoch_loss: list = field(default_factory=list)
    gate_epochs: list = field(default_factory=list)
    gate_val_loss: list = field(default_factory=list)
    gate_accepted: list = field(default_factory=list)
    initial_val_loss: Optional[float] = None
    codebook_id: str = ""
    wall_clock: float = 0.0

    @property
    def accepted_epochs(self) -> list:
        return [e for e, ok in zip(self.gate_epochs, self.gate_accepted) if ok]

    @property
    def accepted_val_loss(self) -> list:
        """Validation loss of the stored codebook after each accepted update."""
        return [v for v, ok in zip(self.gate_val_loss, self.gate_accepted) if ok]

    def to_dict(self, timing: bool = True) -> dict:
        out = dataclasses.asdict(self)
        out["accepted_epochs"] = self.accepted_epochs
        if not timing:
            out.pop("wall_clock")
        return out


@dataclass(frozen=True)
class TrainPairs:
    """Training pairs stored column-wise: ``codewords[n]`` pairs with ``channels[n]``."""

    codewords: np.ndarray
    channels: np.ndarray
    indices: np.ndarray

    def __len__(self):
        return len(self.channels)


def build_pairs(channels, cb: Codebook) -> TrainPairs:
    """Pair every channel with its nearest codeword in ``cb``."""
    channels = np.asarray(channels)
    if len(channels) == 0:
        raise InvalidInputError("cannot build pairs from an empty split")
    idx, _ = quantize_batch(channels, cb)
    return TrainPairs(cb.entries[idx], channels.astype(np.complex128), idx)


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns ``(params, state)``.

    Arrays are updated in place.
    """
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            raise NumericFailureError("non-finite gradient")
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def snap_params(params) -> dict:
    """Round parameters to single precision (checkpoint precision), kept as float64."""
    return {k: v.astype(np.float32).astype(np.float64) for k, v in params.items()}


def _epoch(params, state, pairs: TrainPairs, cfg: RefinerConfig, tcfg: TrainingConfig, lr, rng):
    order = rng.permutation(len(pairs))
    total = 0.0
    for start in range(0, len(order), tcfg.batch_size):
        b = order[start:start + tcfg.batch_size]
        loss, grads = refiner.backward(params, pairs.codewords[b], pairs.channels[b], cfg)
        adam_step(params, grads, state, lr, tcfg.adam_beta1, tcfg.adam_beta2, tcfg.adam_eps)
        total += loss * len(b)
    return total / len(order)


def _epoch_rng(seed, *tags):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tags))


def train_ss(channels, cb_conventional: Codebook, cfg: RefinerConfig, tcfg: TrainingConfig,
             params=None, log=None):
    """Single-side training; returns ``(params, report)``.

    The returned parameters are rounded to checkpoint precision.
    """
    t0 = time.perf_counter()
    pairs = build_pairs(channels, cb_conventional)
    params = refiner.init_params(cfg) if params is None else {k: v.copy() for k, v in params.items()}
    state = AdamState.zeros_like(params)
    report = TrainRunReport()
    for epoch in range(tcfg.epochs):
        lr = tcfg.learning_rate * tcfg.decay_rate ** epoch
        try:
            loss = _epoch(params, state, pairs, cfg, tcfg, lr, _epoch_rng(tcfg.seed, 0, epoch))
        except NumericFailureError as exc:
            report.wall_clock = time.perf_counter() - t0
            raise NumericFailureError(f"epoch {epoch + 1}: {exc}", report) from exc
        report.epoch_loss.append(loss)
        if log is not None:
            log(f"epoch {epoch + 1}/{tcfg.epochs} loss {loss:.6f}")
    report.wall_clock = time.perf_counter() - t0
    return snap_params(params), report


def enhance_codebook(params, cb: Codebook, cfg: RefinerConfig,
                     kind=CodebookKind.ENHANCED_SS, provenance: str = "") -> Codebook:
    """Refine every codeword of ``cb`` and renormalize, preserving order."""
    g = refiner.refine_batch(cb.entries, params, cfg)
    norms = np.linalg.norm(g, axis=1)
    bad = np.flatnonzero(~(norms >= 1e-9))
    if bad.size:
        raise DegenerateOutputError(f"refined codeword {int(bad[0])} has norm {norms[bad[0]]:.3g}", int(bad[0]))
    return Codebook.from_vectors(g, kind, provenance)


def ds_validation_loss(channels, cb: Codebook) -> float:
    """Mean pair loss when ``cb`` both quantizes and reconstructs."""
    _, sim = quantize_batch(channels, cb)
    return -float(np.mean(sim))


def train_ds(train, val, cb_initial: Codebook, cfg: RefinerConfig, tcfg: TrainingConfig, log=None):
    """Dual-side training with gated periodic codebook updates.

    A gate runs after every ``update_interval``-th epoch.  The candidate is
    accepted only if its dual-side validation loss is strictly below the best
    stored so far (initially the loss of ``cb_initial``).  After each gate the
    network, its optimizer state and the learning-rate schedule restart from a
    fresh per-gate seed, and pairs are rebuilt against the stored codebook.

    Returns ``(codebook, report)``.
    """
    if tcfg.update_interval > tcfg.epochs:
        raise InvalidInputError("update_interval exceeds the number of epochs; no gate would run")
    t0 = time.perf_counter()
    report = TrainRunReport()
    current = cb_initial
    best = ds_validation_loss(val, current)
    report.initial_val_loss = best
    gate = 0

    def fresh(g):
        p = refiner.init_params(dataclasses.replace(cfg, seed=int(np.random.SeedSequence(
            cfg.seed, spawn_key=(1, g)).generate_state(1)[0])))
        return p, AdamState.zeros_like(p)

    params, state = fresh(gate)
    pairs = build_pairs(train, current)
    since_reset = 0
    for epoch in range(1, tcfg.epochs + 1):
        lr = tcfg.learning_rate * tcfg.decay_rate ** since_reset
        try:
            loss = _epoch(params, state, pairs, cfg, tcfg, lr, _epoch_rng(tcfg.seed, 1, epoch))
        except NumericFailureError as exc:
            report.wall_clock = time.perf_counter() - t0
            raise NumericFailureError(f"epoch {epoch}: {exc}", report) from exc
        report.epoch_loss.append(loss)
        since_reset += 1
        if epoch % tcfg.update_interval:
            continue
        gate += 1
        try:
            candidate = enhance_codebook(snap_params(params), current, cfg, CodebookKind.ENHANCED_DS,
                                         f"{current.provenance} | ds gate {gate} epoch {epoch}")
            val_loss = ds_validation_loss(val, candidate)
        except DegenerateOutputError:
            candidate, val_loss = None, float("inf")
        accepted = val_loss < best
        if accepted:
            current, best = candidate, val_loss
        report.gate_epochs.append(epoch)
        report.gate_val_loss.append(val_loss)
        report.gate_accepted.append(bool(accepted))
        if log is not None:
            log(f"gate {gate} epoch {epoch}: val loss {val_loss:.6f} "
                f"{'accepted' if accepted else 'rejected'} (best {best:.6f})")
        if epoch < tcfg.epochs:
            params, state = fresh(gate)
            pairs = build_pairs(train, current)
            since_reset = 0
    report.wall_clock = time.perf_counter() - t0
    if current is cb_initial:
        current = cb_initial.replace(kind=CodebookKind.ENHANCED_DS,
                                     provenance=f"{cb_initial.provenance} | ds: all candidates rejected")
    return current, report


# ------------------------------------------------------------------ oracles

def eigen_centroid(channels) -> np.ndarray:
    """Unit top eigenvector of ``sum_n u_n u_n^H`` with ``u_n = h_n / ||h_n||``.

    The phase is fixed so that the largest-magnitude entry is real positive.
    """
    U = np.asarray(channels, dtype=np.complex128)
    U = U / np.linalg.norm(U, axis=1, keepdims=True)
    cov = U.T @ U.conj()
    _, vecs = np.linalg.eigh(cov)
    g = vecs[:, -1]
    k = int(np.argmax(np.abs(g)))
    return g * (abs(g[k]) / g[k])


def _recenter(channels, idx, cb: Codebook) -> np.ndarray:
    new = cb.entries.copy()
    order = np.argsort(idx, kind="stable")
    cells, starts = np.unique(idx[order], return_index=True)
    bounds = list(starts[1:]) + [len(order)]
    for cell, lo, hi in zip(cells, starts, bounds):
        new[cell] = eigen_centroid(channels[order[lo:hi]])
    return new


def oracle_ss(channels, cb_conventional: Codebook) -> Codebook:
    """Per-cell eigen-centroids of the partition induced by ``cb_conventional``."""
    channels = np.asarray(channels, dtype=np.complex128)
    if len(channels) == 0:
        raise InvalidInputError("oracle needs a nonempty split")
    idx, _ = quantize_batch(channels, cb_conventional)
    return Codebook.from_vectors(_recenter(channels, idx, cb_conventional), CodebookKind.ORACLE_SS,
                                 f"{cb_conventional.provenance} | oracle-ss n={len(channels)}")


@dataclass
class LloydTrace:
    objective: list = field(default_factory=list)  # mean similarity of each iterate
    objective_sq: list = field(default_factory=list)  # mean squared similarity
    changed: list = field(default_factory=list)  # assignments that moved per iteration


def oracle_ds(channels, cb_initial: Codebook, max_iters: int = 20, return_trace: bool = False):
    """Generalized Lloyd iteration with eigen-centroids.

    ``trace.objective[t]`` is the dual-side mean training similarity of the
    ``t``-th codebook (``t = 0`` is ``cb_initial``).
    """
    if max_iters < 1:
        raise InvalidInputError("max_iters must be >= 1")
    channels = np.asarray(channels, dtype=np.complex128)
    if len(channels) == 0:
        raise InvalidInputError("oracle needs a nonempty split")
    trace = LloydTrace()
    cb = cb_initial
    idx, sim = quantize_batch(channels, cb)
    trace.objective.append(float(np.mean(sim)))
    trace.objective_sq.append(float(np.mean(sim ** 2)))
    for it in range(max_iters):
        cb = Codebook.from_vectors(_recenter(channels, idx, cb), CodebookKind.ORACLE_DS,
                                   f"{cb_initial.provenance} | oracle-ds n={len(channels)}")
        new_idx, sim = quantize_batch(channels, cb)
        trace.objective.append(float(np.mean(sim)))
        trace.objective_sq.append(float(np.mean(sim ** 2)))
        changed = int(np.count_nonzero(new_idx != idx))
        trace.changed.append(changed)
        idx = new_idx
        if changed == 0:
            break
    cb = cb.replace(provenance=f"{cb_initial.provenance} | oracle-ds n={len(channels)} iters={len(trace.changed)}")
    return (cb, trace) if return_trace else cb
