"""Training losses and the maximum-class-probability confidence.

Every loss takes per-sample quantities and reduces over the batch with an
arithmetic mean.  Losses on logits are normalised by ``log n`` so they are
comparable across class counts.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import ops
from .errors import ConfigError, InvalidInputError
from .tensor import Tensor, as_tensor, clamp_min, log, mean, tabs

PROB_FLOOR = 1e-12


def _n_classes(logits):
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise InvalidInputError(f"logits must be [batch, n>=2], got {logits.shape}")
    return logits.shape[1]


def loss_task(logits, labels):
    """Cross-entropy against integer labels (the classifier's task loss)."""
    logits = as_tensor(logits)
    n = _n_classes(logits)
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise InvalidInputError(f"expected {logits.shape[0]} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise InvalidInputError(f"labels must lie in [0, {n}), got range "
                                f"[{labels.min()}, {labels.max()}]")
    logp = ops.log_softmax(logits)
    picked = logp[np.arange(len(labels)), labels.astype(np.int64)]
    return -mean(picked)


def loss_confidence(logits):
    """Soft cross-entropy towards the uniform distribution.

    Per sample ``(1/log n) (1/n) sum_i [-(1/n) log s_i]``; its minimum over
    the simplex is ``1/n``, reached at the uniform prediction.
    """
    logits = as_tensor(logits)
    n = _n_classes(logits)
    logp = ops.log_softmax(logits)
    per_sample = logp.sum(axis=1) * (-1.0 / (n * n * math.log(n)))
    return mean(per_sample)


def loss_attack(logits):
    """``(1/log n)(logsumexp(l) - max l)``: zero for one-hot scores, one for uniform."""
    logits = as_tensor(logits)
    n = _n_classes(logits)
    per_sample = (ops.logsumexp(logits) - logits.max(axis=1)) * (1.0 / math.log(n))
    return mean(per_sample)


@dataclass
class DiversityConfig:
    """Norm order ``m`` and comparison-set size ``N`` of the diversity losses.

    ``set_size=None`` means "use the number of classes".
    """

    m: int = 2
    set_size: int | None = None

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ConfigError(f"norm order m must be a positive integer, got {self.m}")
        if self.set_size is not None and self.set_size < 2:
            raise ConfigError(f"comparison set needs N >= 2, got {self.set_size}")

    def resolve(self, n_classes, batch):
        size = self.set_size if self.set_size is not None else n_classes
        return max(2, min(size, batch))


def _pairs(count):
    j, k = np.tril_indices(count, -1)
    return j, k


def _mean_abs_pow(diff, m):
    if m == 2:
        powered = diff * diff
    elif m == 1:
        powered = tabs(diff)
    else:
        powered = tabs(diff) ** m
    return powered


def _seed_weights(seeds, m, count):
    seeds = np.asarray(seeds.data if isinstance(seeds, Tensor) else seeds, dtype=np.float64)
    if len(seeds) != count:
        raise InvalidInputError(f"{len(seeds)} seeds for {count} samples")
    j, k = _pairs(count)
    flat = seeds.reshape(count, -1)
    w = np.mean(np.abs(flat[j] - flat[k]) ** m, axis=1)
    total = w.sum()
    if total == 0.0:
        raise InvalidInputError("all seeds are identical; diversity weights vanish")
    return w, total, j, k


def _check_set(samples):
    count = samples.shape[0]
    if count < 2:
        raise ConfigError(f"diversity losses need N >= 2 samples, got {count}")
    return count


def loss_sample_diversity(seeds, samples, cfg=None):
    """Seed-weighted mean of ``1 / (1 + d_jk)`` over pairs ``j > k``.

    ``d_jk`` is the mean over elements of ``|a_j - a_k|^m``; the weights are
    the same statistic on the seeds.  Falls to 0 as generated samples spread
    apart and equals 1 when they coincide.
    """
    cfg = cfg or DiversityConfig()
    samples = as_tensor(samples)
    count = _check_set(samples)
    if np.shape(seeds) != samples.shape:
        raise InvalidInputError(f"seed shape {np.shape(seeds)} does not match samples {samples.shape}")
    w, total, j, k = _seed_weights(seeds, cfg.m, count)
    flat = samples.reshape(count, -1)
    d = _mean_abs_pow(flat[j] - flat[k], cfg.m).mean(axis=1)
    return (Tensor(w) / (d + 1.0)).sum() * (1.0 / total)


def loss_output_diversity(seeds, scores, cfg=None):
    """Seed-weighted mean of ``1 / (1 + CE_jk)`` over pairs ``j > k``.

    ``CE_jk = sum_o -s_jo log s_ko`` compares the classifier's score rows on
    generated samples; log arguments are floored at 1e-12.
    """
    cfg = cfg or DiversityConfig()
    scores = as_tensor(scores)
    if scores.ndim != 2:
        raise InvalidInputError(f"score rows must be [N, n], got {scores.shape}")
    count = _check_set(scores)
    w, total, j, k = _seed_weights(seeds, cfg.m, count)
    logs = log(clamp_min(scores, PROB_FLOOR))
    ce = -(scores[j] * logs[k]).sum(axis=1)
    return (Tensor(w) / (ce + 1.0)).sum() * (1.0 / total)


def loss_gan(attack, sample_div, output_div):
    """Equal-weight mean of the attacker's three objectives."""
    return (as_tensor(attack) + as_tensor(sample_div) + as_tensor(output_div)) * (1.0 / 3.0)


# names matching the loss labels used in training logs
loss_task_L00 = loss_task
loss_conf_L01 = loss_confidence
loss_attack_L10 = loss_attack
loss_sample_diversity_L11 = loss_sample_diversity
loss_output_diversity_L12 = loss_output_diversity
loss_gan_L13 = loss_gan


class ConfidenceValue(NamedTuple):
    class_index: int
    mcp: float
    confidence: float


@dataclass
class Confidences:
    """Vectorised per-row decisions, maximum class probabilities and confidences."""

    class_index: np.ndarray
    mcp: np.ndarray
    confidence: np.ndarray

    def __len__(self):
        return len(self.class_index)

    def __getitem__(self, i):
        return ConfidenceValue(int(self.class_index[i]), float(self.mcp[i]),
                               float(self.confidence[i]))


def renormalize(mcp, n):
    """Map a maximum class probability from [1/n, 1] onto [0, 1]."""
    return np.clip((np.asarray(mcp) - 1.0 / n) / (1.0 - 1.0 / n), 0.0, 1.0)


def confidence_of(scores):
    """Decision (argmax, lowest index on ties), MCP and renormalised confidence."""
    scores = np.asarray(scores.data if isinstance(scores, Tensor) else scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] < 2:
        raise InvalidInputError(f"scores must be [batch, n>=2], got {scores.shape}")
    idx = np.argmax(scores, axis=1)
    mcp = scores[np.arange(len(scores)), idx]
    return Confidences(idx, mcp, renormalize(mcp, scores.shape[1]))
