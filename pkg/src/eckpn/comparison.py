"""Instance-level message passing with one global and K chunked relation heads.

Each relation head scores every ordered sample pair from the elementwise
square of the pair's feature difference, so all relation matrices are
symmetric by construction and sigmoid-bounded into (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .episodes import Episode
from .errors import NumericError, ShapeError

ADJ_EPS = 1e-7


@dataclass
class RelationMapParams:
    """Linear score -> pair normalization -> LeakyReLU -> sigmoid.

    No bias ahead of the normalization: mean subtraction would cancel it
    exactly, leaving a dead parameter. The shift lives in norm_beta.
    """

    weight: ad.ParamTensor      # in_dim x 1
    norm_gamma: ad.ParamTensor  # 1 x 1
    norm_beta: ad.ParamTensor   # 1 x 1
    slope: float = 0.2

    def tensors(self):
        return [self.weight, self.norm_gamma, self.norm_beta]


@dataclass
class TransformParams:
    """Linear 2d -> d with column normalization and LeakyReLU.

    Bias-free for the same reason as RelationMapParams.
    """

    weight: ad.ParamTensor      # 2d x d
    norm_gamma: ad.ParamTensor  # 1 x d
    norm_beta: ad.ParamTensor   # 1 x d
    slope: float = 0.2

    def tensors(self):
        return [self.weight, self.norm_gamma, self.norm_beta]

    def apply(self, x: ad.Value) -> ad.Value:
        pre = ad.matmul(x, self.weight.value)
        return ad.leaky_relu(
            ad.batch_norm(pre, self.norm_gamma.value, self.norm_beta.value),
            self.slope,
        )


@dataclass
class ComparisonLayerParams:
    global_map: RelationMapParams
    head_maps: list
    transform: TransformParams

    def tensors(self):
        out = self.global_map.tensors()
        for head in self.head_maps:
            out.extend(head.tensors())
        out.extend(self.transform.tensors())
        return out


@dataclass
class ComparisonParams:
    layers: list
    heads: int

    def tensors(self):
        out = []
        for layer in self.layers:
            out.extend(layer.tensors())
        return out


@dataclass
class RelationSet:
    """One layer's relation matrices: full-feature plus one per head chunk."""

    global_adj: ad.Value
    heads: list
    layer_index: int

    def all_matrices(self):
        return [self.global_adj] + list(self.heads)


def build_pair_mask(episode: Episode) -> np.ndarray:
    """Entries are -1 for labeled support pairs with different labels, else +1.

    Supports whose labels are hidden count as label-unknown and stay +1.
    """
    visible = episode.is_support & episode.is_labeled
    labels = episode.labels
    differs = labels[:, None] != labels[None, :]
    blocked = visible[:, None] & visible[None, :] & differs
    return np.where(blocked, -1.0, 1.0)


def relation_matrix(v: ad.Value, params: RelationMapParams) -> ad.Value:
    """Score every ordered pair of rows of v; returns an r x r matrix."""
    r, k = v.data.shape
    if params.weight.shape != (k, 1):
        raise ShapeError("relation_matrix", v.data.shape, params.weight.shape)
    idx_m = np.repeat(np.arange(r), r)
    idx_n = np.tile(np.arange(r), r)
    diffs = ad.square(ad.sub(ad.gather_rows(v, idx_m), ad.gather_rows(v, idx_n)))
    raw = ad.matmul(diffs, params.weight.value)
    normed = ad.batch_norm(raw, params.norm_gamma.value, params.norm_beta.value)
    act = ad.sigmoid(ad.leaky_relu(normed, params.slope))
    return ad.reshape(ad.clamp(act, ADJ_EPS, 1.0 - ADJ_EPS), r, r)


def compute_relations(v: ad.Value, layer: ComparisonLayerParams,
                      layer_index: int = 0) -> RelationSet:
    """Global relation on full rows plus one relation per contiguous chunk."""
    d = v.data.shape[1]
    n_heads = len(layer.head_maps)
    if d % n_heads != 0:
        raise ShapeError("compute_relations", v.data.shape, (n_heads,))
    chunk = d // n_heads
    global_adj = relation_matrix(v, layer.global_map)
    heads = [
        relation_matrix(ad.slice_cols(v, i * chunk, (i + 1) * chunk),
                        layer.head_maps[i])
        for i in range(n_heads)
    ]
    return RelationSet(global_adj=global_adj, heads=heads, layer_index=layer_index)


def message_pass_layer(v: ad.Value, relations: RelationSet, pair_mask: np.ndarray,
                       transform) -> ad.Value:
    """Masked per-head and global propagation, concatenated, then transformed."""
    d = v.data.shape[1]
    n_heads = len(relations.heads)
    chunk = d // n_heads
    parts = [
        ad.matmul(ad.mask(relations.heads[i], pair_mask),
                  ad.slice_cols(v, i * chunk, (i + 1) * chunk))
        for i in range(n_heads)
    ]
    parts.append(ad.matmul(ad.mask(relations.global_adj, pair_mask), v))
    return transform.apply(ad.concat_cols(*parts))


def run_comparison(v0: ad.Value, pair_mask: np.ndarray,
                   params: ComparisonParams) -> tuple[ad.Value, list]:
    """Alternate relation computation and propagation over all layers.

    Returns the final node features and every layer's RelationSet (the
    adjacency loss needs the whole trace).
    """
    v = v0
    trace = []
    for index, layer in enumerate(params.layers, start=1):
        relations = compute_relations(v, layer, layer_index=index)
        v = message_pass_layer(v, relations, pair_mask, layer.transform)
        if not np.isfinite(v.data).all():
            raise NumericError(f"non-finite node features after layer {index}")
        trace.append(relations)
    return v, trace
