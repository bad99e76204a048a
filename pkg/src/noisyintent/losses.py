"""Training objectives: contrastive pair loss, mixup, and the two combined losses.

Everything here is a pure function from tensors to a scalar tensor, so the
autodiff graph carries gradients for whichever phase is running.  The
``*_batch`` variants average over a batch and are what the training steps
call; the single-pair forms exist for direct use and testing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, InvalidInputError, ShapeError


@dataclass
class LossHyperparams:
    m_pos: float = 0.8
    m_neg: float = 1.2
    alpha: float = 0.4
    beta_weight: float = 0.5
    eta: float = 1.0
    epsilon_halluc: float = 0.3

    def __post_init__(self):
        if self.m_neg <= self.m_pos:
            raise ConfigError("m_neg must exceed m_pos")
        if self.alpha <= 0.0:
            raise ConfigError("alpha must be positive")
        if not 0.0 <= self.beta_weight <= 1.0:
            raise ConfigError("beta_weight must lie in [0, 1]")
        if self.eta < 0.0:
            raise ConfigError("eta must be non-negative")
        if not 0.0 <= self.epsilon_halluc <= 1.0:
            raise ConfigError("epsilon_halluc is a probability")


def _as_2d(r) -> Tensor:
    t = r if isinstance(r, Tensor) else Tensor(r)
    if t.data.ndim == 1:
        t = t.reshape(1, -1)
    if t.data.ndim != 2:
        raise ShapeError("representations must be vectors or (batch, dim) matrices")
    return t


def _contrastive_per_pair(r_i: Tensor, r_j: Tensor, y_pair: np.ndarray,
                          hp: LossHyperparams) -> Tensor:
    if r_i.shape != r_j.shape:
        raise ShapeError(f"pair shapes differ: {r_i.shape} vs {r_j.shape}")
    norm_i = (r_i * r_i).sum(axis=1, keepdims=True).sqrt()
    norm_j = (r_j * r_j).sum(axis=1, keepdims=True).sqrt()
    if np.any(norm_i.data < 1e-12) or np.any(norm_j.data < 1e-12):
        raise InvalidInputError("contrastive loss needs nonzero-norm representations")
    diff = r_i / norm_i - r_j / norm_j
    distance = (diff * diff).sum(axis=1, keepdims=True).sqrt()
    pos = (distance - hp.m_pos).relu()
    neg = (hp.m_neg - distance).relu()
    y = np.asarray(y_pair, dtype=np.float64).reshape(-1, 1)
    return 0.5 * (y * pos * pos + (1.0 - y) * neg * neg)


def contrastive_loss(r_i, r_j, y_pair: int, hp: LossHyperparams) -> Tensor:
    """Margin loss on the unit-normalized euclidean distance of one pair."""
    per_pair = _contrastive_per_pair(_as_2d(r_i), _as_2d(r_j),
                                     np.array([y_pair]), hp)
    return per_pair.sum()


def contrastive_loss_batch(r_i, r_j, y_pair, hp: LossHyperparams) -> Tensor:
    """Mean contrastive loss over a batch of pairs."""
    return _contrastive_per_pair(_as_2d(r_i), _as_2d(r_j),
                                 np.asarray(y_pair), hp).mean()


def sample_lambda(alpha: float, rng: np.random.Generator) -> float:
    """One Beta(alpha, alpha) interpolation weight."""
    if alpha <= 0.0:
        raise ConfigError("alpha must be positive")
    return float(rng.beta(alpha, alpha))


def mixup(r_i, r_j, y_i: int, y_j: int, num_classes: int,
          lam: float) -> tuple[Tensor, np.ndarray]:
    """Interpolate one pair of representations and their one-hot labels."""
    if not 0.0 <= lam <= 1.0:
        raise InvalidInputError("lambda must lie in [0, 1]")
    if not (0 <= y_i < num_classes and 0 <= y_j < num_classes):
        raise IndexError("class index out of range")
    t_i = r_i if isinstance(r_i, Tensor) else Tensor(r_i)
    t_j = r_j if isinstance(r_j, Tensor) else Tensor(r_j)
    r_mix = lam * t_i + (1.0 - lam) * t_j
    y_mix = np.zeros(num_classes)
    y_mix[y_i] += lam
    y_mix[y_j] += 1.0 - lam
    return r_mix, y_mix


def mixup_batch(r_i, r_j, y_i, y_j, num_classes: int,
                lam) -> tuple[Tensor, np.ndarray]:
    """Batched mixup; ``lam`` holds one interpolation weight per pair."""
    lam = np.asarray(lam, dtype=np.float64).reshape(-1, 1)
    if np.any(lam < 0.0) or np.any(lam > 1.0):
        raise InvalidInputError("lambda must lie in [0, 1]")
    t_i, t_j = _as_2d(r_i), _as_2d(r_j)
    r_mix = lam * t_i + (1.0 - lam) * t_j
    batch = lam.shape[0]
    y_mix = np.zeros((batch, num_classes))
    rows = np.arange(batch)
    np.add.at(y_mix, (rows, np.asarray(y_i, dtype=np.intp)), lam[:, 0])
    np.add.at(y_mix, (rows, np.asarray(y_j, dtype=np.intp)), 1.0 - lam[:, 0])
    return r_mix, y_mix


def _kl_target_vs_logits(y: np.ndarray, logits: Tensor) -> Tensor:
    """KL(y || softmax(logits)) summed per row, as a (batch,) tensor."""
    if y.shape != logits.shape:
        raise ShapeError(f"target shape {y.shape} != logits shape {logits.shape}")
    log_probs = ad.log_softmax(logits, axis=1)
    positive = y > 0.0
    entropy_part = np.where(positive, y * np.log(np.where(positive, y, 1.0)), 0.0)
    return entropy_part.sum(axis=1) - (Tensor(y) * log_probs).sum(axis=1)


def mixup_loss(y_mix, logits) -> Tensor:
    """KL between a mixed label distribution and the classifier's softmax."""
    y = np.asarray(y_mix, dtype=np.float64).reshape(1, -1)
    t = logits if isinstance(logits, Tensor) else Tensor(logits)
    return _kl_target_vs_logits(y, t.reshape(1, -1)).sum()


def mixup_loss_batch(y_mix, logits) -> Tensor:
    return _kl_target_vs_logits(np.asarray(y_mix, dtype=np.float64),
                                _as_2d(logits)).mean()


def pairwise_loss_L1(l_con, l_mix, beta_weight: float):
    """Convex combination of the contrastive and mixup losses."""
    if not 0.0 <= beta_weight <= 1.0:
        raise ConfigError("beta_weight must lie in [0, 1]")
    return beta_weight * l_con + (1.0 - beta_weight) * l_mix


def _finetune_per_row(logits_clean: Tensor, logits_err: Tensor,
                      labels: np.ndarray, eta: float) -> Tensor:
    if logits_clean.shape != logits_err.shape:
        raise ShapeError(
            f"clean/errorful logits differ: {logits_clean.shape} vs {logits_err.shape}")
    if eta < 0.0:
        raise ConfigError("eta must be non-negative")
    log_p = ad.log_softmax(logits_clean, axis=1)
    log_q = ad.log_softmax(logits_err, axis=1)
    ce_clean = -ad.gather_rows(log_p, labels)
    ce_err = -ad.gather_rows(log_q, labels)
    kl = (log_p.exp() * (log_p - log_q)).sum(axis=1)
    return ce_clean + eta * (ce_err + kl)


def finetune_loss_L2(logits_clean, logits_err, y: int, eta: float) -> Tensor:
    """Clean CE plus eta-weighted errorful CE and clean/errorful KL."""
    lc = _as_2d(logits_clean)
    le = _as_2d(logits_err)
    return _finetune_per_row(lc, le, np.array([y], dtype=np.intp), eta).sum()


def finetune_loss_L2_batch(logits_clean, logits_err, labels, eta: float) -> Tensor:
    return _finetune_per_row(_as_2d(logits_clean), _as_2d(logits_err),
                             np.asarray(labels, dtype=np.intp), eta).mean()
