"""Class-level message passing over fused visual and semantic class knowledge."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ShapeError


@dataclass
class CalibrationParams:
    sem_weight: ad.ParamTensor  # semantic_dim x node_dim
    sem_bias: ad.ParamTensor    # 1 x node_dim
    mix_weight: ad.ParamTensor  # 2d x 2d
    slope: float = 0.2

    def tensors(self):
        return [self.sem_weight, self.sem_bias, self.mix_weight]


def map_semantics(embeddings: np.ndarray, params: CalibrationParams) -> ad.Value:
    """Map per-class embeddings into the node feature space."""
    if embeddings.shape[1] != params.sem_weight.shape[0]:
        raise ShapeError("map_semantics", embeddings.shape, params.sem_weight.shape)
    e = ad.constant(embeddings)
    return ad.leaky_relu(
        ad.add(ad.matmul(e, params.sem_weight.value),
               ad.broadcast_rows(params.sem_bias.value, embeddings.shape[0])),
        params.slope,
    )


def calibrate_classes(assignment: ad.Value, global_adj: ad.Value,
                      pair_mask: np.ndarray, visual: ad.Value, semantic: ad.Value,
                      params: CalibrationParams) -> tuple[ad.Value, ad.Value]:
    """Class adjacency plus calibrated multi-modal class knowledge.

    The class adjacency is the assignment-congruence of the masked
    instance relation; calibration is a single linear message pass.
    """
    fused = ad.concat_cols(visual, semantic)
    masked = ad.mask(global_adj, pair_mask)
    p_t = ad.transpose(assignment)
    class_adj = ad.matmul(ad.matmul(p_t, masked), assignment)
    calibrated = ad.matmul(ad.matmul(class_adj, fused), params.mix_weight.value)
    return class_adj, calibrated


def broadcast_class_knowledge(assignment: ad.Value, class_features: ad.Value,
                              v_last: ad.Value) -> ad.Value:
    """Send class rows back to their samples and append to instance features."""
    refined = ad.matmul(assignment, class_features)
    return ad.concat_cols(v_last, refined)
