"""Final relation matrix, transductive query prediction, and training losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .comparison import ADJ_EPS, RelationMapParams, relation_matrix
from .episodes import Episode
from .errors import ConfigError, NumericError


def final_adjacency(v_final: ad.Value, params: RelationMapParams) -> ad.Value:
    """Same pairwise squared-difference recipe, on the fused representations."""
    return relation_matrix(v_final, params)


def predict(adj_final: ad.Value, episode: Episode) -> ad.Value:
    """Per-query class probabilities from labeled-support votes.

    Each labeled support contributes its relation weight to its own class
    logit; probabilities are a row softmax over the logits.
    """
    voters = np.flatnonzero(episode.is_support & episode.is_labeled)
    queries = np.flatnonzero(~episode.is_support)
    present = set(episode.labels[voters].tolist())
    missing = [c for c in range(episode.n_way) if c not in present]
    if missing:
        raise ConfigError(f"classes {missing} have no labeled support to vote")
    onehot = np.zeros((len(voters), episode.n_way))
    onehot[np.arange(len(voters)), episode.labels[voters]] = 1.0
    support_rows = ad.gather_rows(adj_final, voters)
    query_cols = ad.gather_rows(ad.transpose(support_rows), queries)
    logits = ad.matmul(query_cols, ad.constant(onehot))
    return ad.row_softmax(logits)


def predicted_labels(probs: np.ndarray) -> np.ndarray:
    """Argmax per row; ties break to the lowest class index."""
    return probs.argmax(axis=1)


def episode_accuracy(probs: np.ndarray, episode: Episode) -> float:
    truth = episode.labels[~episode.is_support]
    return float((predicted_labels(probs) == truth).mean())


@dataclass
class LossMasks:
    query_mask: np.ndarray    # r x r, support rows zeroed
    same_label: np.ndarray    # r x r ground-truth indicator


def build_loss_masks(episode: Episode) -> LossMasks:
    """Query mask and same-label indicator from meta-train ground truth."""
    r = episode.size
    query_mask = np.ones((r, r))
    query_mask[episode.is_support, :] = 0.0
    same = (episode.labels[:, None] == episode.labels[None, :]).astype(float)
    return LossMasks(query_mask=query_mask, same_label=same)


def adjacency_loss(matrices: list, masks: LossMasks) -> ad.Value:
    """Binary log loss on query-row entries of every relation matrix.

    Positive and negative terms are normalized by their own mask mass;
    a term whose mask is empty is skipped.
    """
    pos_mask = masks.query_mask * masks.same_label
    neg_mask = masks.query_mask * (1.0 - masks.same_label)
    pos_den = float(pos_mask.sum())
    neg_den = float(neg_mask.sum())

    total = None
    for a in matrices:
        if not np.isfinite(a.data).all():
            raise NumericError("non-finite relation matrix in adjacency loss")
        term = None
        if pos_den > 0:
            pos = ad.scale(ad.sum_all(ad.mask(ad.log(a), pos_mask)), 1.0 / pos_den)
            term = pos
        if neg_den > 0:
            ones = ad.constant(np.ones_like(a.data))
            neg = ad.scale(ad.sum_all(ad.mask(ad.log(ad.sub(ones, a)), neg_mask)),
                           1.0 / neg_den)
            term = neg if term is None else ad.add(term, neg)
        if term is not None:
            total = term if total is None else ad.add(total, term)
    if total is None:
        return ad.constant(np.zeros((1, 1)))
    return ad.scale(total, -1.0)


def assignment_loss(assignment: ad.Value, episode: Episode) -> ad.Value:
    """Mean cross-entropy of assignment rows against ground-truth classes."""
    r = episode.size
    onehot = np.zeros((r, episode.n_way))
    onehot[np.arange(r), episode.labels] = 1.0
    logs = ad.log(ad.clamp(assignment, ADJ_EPS, 1.0))
    return ad.scale(ad.sum_all(ad.mask(logs, onehot)), -1.0 / r)


def classification_loss(probs: ad.Value, episode: Episode) -> ad.Value:
    """Summed cross-entropy over the queries (a sum, not a mean)."""
    truth = episode.labels[~episode.is_support]
    onehot = np.zeros((len(truth), episode.n_way))
    onehot[np.arange(len(truth)), truth] = 1.0
    logs = ad.log(ad.clamp(probs, ADJ_EPS, 1.0))
    return ad.scale(ad.sum_all(ad.mask(logs, onehot)), -1.0)


@dataclass
class LossBreakdown:
    adjacency: ad.Value
    assignment: ad.Value
    classification: ad.Value
    total: ad.Value
    weights: tuple[float, float, float]

    def numbers(self) -> dict:
        return {
            "loss_adj": float(self.adjacency.data[0, 0]),
            "loss_assign": float(self.assignment.data[0, 0]),
            "loss_cls": float(self.classification.data[0, 0]),
            "loss_total": float(self.total.data[0, 0]),
        }


def total_loss(adjacency: ad.Value, assignment: ad.Value, classification: ad.Value,
               weights: tuple[float, float, float] = (1.0, 0.5, 1.0)) -> LossBreakdown:
    w0, w1, w2 = (float(w) for w in weights)
    combined = ad.add(ad.add(ad.scale(adjacency, w0), ad.scale(assignment, w1)),
                      ad.scale(classification, w2))
    return LossBreakdown(
        adjacency=adjacency,
        assignment=assignment,
        classification=classification,
        total=combined,
        weights=(w0, w1, w2),
    )
