"""Linear-chain CRF over per-timestep room scores.

Scores live in log space: a path is worth its start score plus emission and
transition scores, the partition function is computed by the forward algorithm
with log-sum-exp, and decoding is Viterbi. Forbidden transitions carry a large
negative surrogate score so arithmetic stays finite.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .errors import DimensionError, DomainError

NEG_INF = -1.0e4  # surrogate for -inf; keeps masked paths numerically unreachable


@dataclass
class TransitionMatrix:
    """Learned start and from->to transition scores, with an optional ban mask."""

    scores: torch.Tensor  # (n, n), scores[i, j] = cost of moving from room i to j
    start_scores: torch.Tensor  # (n,)
    forbidden_mask: Optional[torch.Tensor] = None  # bool (n, n), True = banned

    def __post_init__(self):
        n = self.scores.shape[0]
        if self.scores.shape != (n, n):
            raise DimensionError("TransitionMatrix: scores must be square")
        if self.start_scores.shape != (n,):
            raise DimensionError("TransitionMatrix: start_scores length mismatch")
        if self.forbidden_mask is not None and self.forbidden_mask.shape != (n, n):
            raise DimensionError("TransitionMatrix: mask shape mismatch")

    @property
    def n(self):
        return self.scores.shape[0]

    def effective_scores(self):
        """Transition scores with banned entries forced to the -inf surrogate."""
        if self.forbidden_mask is None:
            return self.scores
        return torch.where(
            self.forbidden_mask,
            torch.full_like(self.scores, NEG_INF),
            self.scores,
        )


def _check_emissions(e, tm):
    if e.ndim != 2:
        raise DimensionError(f"emissions must be (T, n), got shape {tuple(e.shape)}")
    if e.shape[1] != tm.n:
        raise DimensionError(
            f"emissions have {e.shape[1]} labels, transition matrix has {tm.n}"
        )
    if e.shape[0] < 1:
        raise DimensionError("emissions must cover at least one timestep")


def path_score(e, y, tm):
    """Score of one label sequence: start + emissions + transitions.

    e: (T, n) emission scores, y: length-T label ids, tm: TransitionMatrix.
    """
    _check_emissions(e, tm)
    y = torch.as_tensor(y, dtype=torch.long)
    if y.shape != (e.shape[0],):
        raise DimensionError(f"labels must have length {e.shape[0]}")
    if bool((y < 0).any()) or bool((y >= tm.n).any()):
        raise DomainError(f"label id outside [0, {tm.n})")
    trans = tm.effective_scores()
    score = tm.start_scores[y[0]] + e[0, y[0]]
    for t in range(1, e.shape[0]):
        score = score + trans[y[t - 1], y[t]] + e[t, y[t]]
    return score


def log_partition(e, tm):
    """log sum over all n^T label sequences of exp(path_score), by the forward algorithm."""
    _check_emissions(e, tm)
    trans = tm.effective_scores()
    alpha = tm.start_scores + e[0]
    for t in range(1, e.shape[0]):
        # alpha[j] <- logsumexp_i(alpha[i] + trans[i, j]) + e[t, j]
        alpha = torch.logsumexp(alpha.unsqueeze(1) + trans, dim=0) + e[t]
    return torch.logsumexp(alpha, dim=0)


def nll(e, y, tm):
    """Negative log-likelihood of the gold path: log_partition - path_score."""
    return log_partition(e, tm) - path_score(e, y, tm)


def nll_batch(emissions, labels, tm):
    """Mean NLL over a batch. emissions (B, T, n), labels (B, T)."""
    if emissions.ndim != 3:
        raise DimensionError("nll_batch: emissions must be (B, T, n)")
    B, T, n = emissions.shape
    if n != tm.n:
        raise DimensionError("nll_batch: label-count mismatch with transition matrix")
    if labels.shape != (B, T):
        raise DimensionError("nll_batch: labels must be (B, T)")
    trans = tm.effective_scores()
    rows = torch.arange(B)
    # gold path scores
    gold = tm.start_scores[labels[:, 0]] + emissions[rows, 0, labels[:, 0]]
    for t in range(1, T):
        gold = gold + trans[labels[:, t - 1], labels[:, t]]
        gold = gold + emissions[rows, t, labels[:, t]]
    # partition
    alpha = tm.start_scores.unsqueeze(0) + emissions[:, 0]
    for t in range(1, T):
        alpha = torch.logsumexp(alpha.unsqueeze(2) + trans.unsqueeze(0), dim=1)
        alpha = alpha + emissions[:, t]
    log_z = torch.logsumexp(alpha, dim=1)
    return (log_z - gold).mean()


def viterbi(e, tm):
    """Best label sequence and its score under path_score.

    Ties are broken toward the lower label id at every maximization. Returns
    (labels, score) with labels a length-T numpy int array; the score equals
    path_score(e, labels, tm) exactly.
    """
    _check_emissions(e, tm)
    scores = tm.effective_scores().detach().numpy().astype(np.float64)
    start = tm.start_scores.detach().numpy().astype(np.float64)
    em = e.detach().numpy().astype(np.float64)
    T, n = em.shape
    delta = start + em[0]
    backptr = np.zeros((T, n), dtype=np.int64)
    for t in range(1, T):
        cand = delta[:, None] + scores  # (from, to)
        backptr[t] = cand.argmax(axis=0)  # argmax returns the first (lowest) index on ties
        delta = cand[backptr[t], np.arange(n)] + em[t]
    last = int(delta.argmax())
    best = np.empty(T, dtype=np.int64)
    best[-1] = last
    for t in range(T - 1, 0, -1):
        best[t - 1] = backptr[t, best[t]]
    score = float(delta[last])
    return best, score


def viterbi_batch(emissions, tm):
    """Viterbi decode each window of a (B, T, n) batch; returns (B, T) labels."""
    if emissions.ndim != 3:
        raise DimensionError("viterbi_batch: emissions must be (B, T, n)")
    out = np.stack([viterbi(emissions[b], tm)[0] for b in range(emissions.shape[0])])
    return out
