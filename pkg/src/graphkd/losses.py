"""Teacher/student discrepancy losses."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

LOSS_KINDS = ("L-MAE", "S-MAE", "MSE", "KLD", "CE")


class NonFiniteError(ValueError):
    """Logits contain NaN or inf."""


def discrepancy_loss(kind: str, teacher_logits: Tensor, student_logits: Tensor) -> Tensor:
    """Scalar discrepancy between (B, C) teacher and student logits.

    L-MAE  mean |q_t - q_s| over all B*C logits
    S-MAE  the same on softmax outputs
    MSE    mean squared logit difference
    KLD    batch mean of KL(softmax(q_t) || softmax(q_s))
    CE     batch mean cross-entropy of the student against argmax(q_t)
    """
    qt, qs = teacher_logits, student_logits
    if qt.shape != qs.shape or qt.ndim != 2:
        raise ValueError(f"logit shapes differ or are not (B, C): {qt.shape} vs {qs.shape}")
    if not (np.all(np.isfinite(qt.data)) and np.all(np.isfinite(qs.data))):
        raise NonFiniteError("non-finite logits")
    batch = qt.shape[0]
    if kind == "L-MAE":
        return T.mean(T.absolute(T.sub(qt, qs)))
    if kind == "S-MAE":
        return T.mean(T.absolute(T.sub(T.softmax(qt), T.softmax(qs))))
    if kind == "MSE":
        diff = T.sub(qt, qs)
        return T.mean(T.mul(diff, diff))
    if kind == "KLD":
        log_pt = T.log_softmax(qt)
        kl = T.mul(T.exp(log_pt), T.sub(log_pt, T.log_softmax(qs)))
        return T.scalar_mul(T.sum(kl), 1.0 / batch)
    if kind == "CE":
        onehot = np.zeros(qt.shape)
        onehot[np.arange(batch), qt.data.argmax(axis=1)] = 1.0
        picked = T.sum(T.mul(T.log_softmax(qs), Tensor(onehot)))
        return T.scalar_mul(picked, -1.0 / batch)
    raise ValueError(f"unknown loss kind {kind!r}; choose from {LOSS_KINDS}")


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row-softmax(logits)."""
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return T.scalar_mul(T.sum(T.mul(T.log_softmax(logits), Tensor(onehot))), -1.0 / len(labels))
