"""Collapse the instance graph to one node per class via a soft assignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass
class SqueezeParams:
    weight: ad.ParamTensor  # node_dim x ways; tied to the episode way count

    def tensors(self):
        return [self.weight]


def compute_assignment(v_last: ad.Value, global_adj: ad.Value,
                       pair_mask: np.ndarray, params: SqueezeParams) -> ad.Value:
    """Row-stochastic sample-to-class assignment from the masked final relation."""
    propagated = ad.matmul(ad.mask(global_adj, pair_mask), v_last)
    return ad.row_softmax(ad.matmul(propagated, params.weight.value))


def squeeze_classes(assignment: ad.Value, v_last: ad.Value) -> ad.Value:
    """Class-level features: each row is the assignment-weighted sample sum."""
    return ad.matmul(ad.transpose(assignment), v_last)
