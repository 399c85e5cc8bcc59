"""Parameter container and the full episode forward pass, with ablations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .calibration import (CalibrationParams, broadcast_class_knowledge,
                          calibrate_classes, map_semantics)
from .comparison import (ComparisonLayerParams, ComparisonParams,
                         RelationMapParams, TransformParams, build_pair_mask,
                         run_comparison)
from .config import TrainConfig
from .episodes import Episode, EncoderParams, init_node_features
from .errors import ConfigError
from .inference import (LossBreakdown, adjacency_loss, assignment_loss,
                        build_loss_masks, classification_loss, final_adjacency,
                        predict, total_loss)
from .squeeze import SqueezeParams, compute_assignment, squeeze_classes


class _Init:
    """Uniform +-1/sqrt(fan_in) weights; unit scale and zero shift for norms."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))

    def affine(self, rows: int, cols: int) -> np.ndarray:
        bound = 1.0 / math.sqrt(rows)
        return self.rng.uniform(-bound, bound, size=(rows, cols))

    def bias(self, fan_in: int, cols: int) -> np.ndarray:
        bound = 1.0 / math.sqrt(fan_in)
        return self.rng.uniform(-bound, bound, size=(1, cols))


@dataclass
class ModelParams:
    config: TrainConfig
    encoder: EncoderParams
    comparison: ComparisonParams
    squeeze: SqueezeParams
    calibration: CalibrationParams
    final: RelationMapParams
    version: str = "ECKPN-CKPT v1"
    _by_name: dict = field(default_factory=dict, repr=False)

    def tensors(self) -> list[ad.ParamTensor]:
        out = self.encoder.tensors()
        out.extend(self.comparison.tensors())
        out.extend(self.squeeze.tensors())
        out.extend(self.calibration.tensors())
        out.extend(self.final.tensors())
        return out

    def __post_init__(self):
        for t in self.tensors():
            if t.name in self._by_name:
                raise ConfigError(f"duplicate parameter name {t.name}")
            self._by_name[t.name] = t

    def __getitem__(self, name: str) -> ad.ParamTensor:
        return self._by_name[name]

    def names(self) -> list[str]:
        return [t.name for t in self.tensors()]

    def zero_grads(self):
        for t in self.tensors():
            t.zero_grad()

    def grads(self) -> dict:
        """Gradient map keyed by name; missing grads come back as zeros."""
        return {
            t.name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
            for t in self.tensors()
        }

    def arrays(self) -> dict:
        return {t.name: t.data for t in self.tensors()}


def _relation_map(init: _Init, prefix: str, in_dim: int, slope: float) -> RelationMapParams:
    return RelationMapParams(
        weight=ad.ParamTensor(f"{prefix}.weight", init.affine(in_dim, 1)),
        norm_gamma=ad.ParamTensor(f"{prefix}.norm_gamma", np.ones((1, 1))),
        norm_beta=ad.ParamTensor(f"{prefix}.norm_beta", np.zeros((1, 1))),
        slope=slope,
    )


def init_model_params(cfg: TrainConfig) -> ModelParams:
    """Create every trainable tensor in a fixed, seed-determined order."""
    cfg.validate()
    init = _Init(cfg.seed)
    d = cfg.node_dim
    slope = cfg.leaky_slope
    chunk = d // cfg.heads

    encoder = EncoderParams(
        weight=ad.ParamTensor("encoder.weight", init.affine(cfg.raw_dim, d)),
        bias=ad.ParamTensor("encoder.bias", init.bias(cfg.raw_dim, d)),
        proj_weight=ad.ParamTensor("encoder.proj_weight", init.affine(d + cfg.ways, d)),
        proj_bias=ad.ParamTensor("encoder.proj_bias", init.bias(d + cfg.ways, d)),
        slope=slope,
    )

    layers = []
    for layer in range(1, cfg.layers + 1):
        base = f"comparison.layer{layer}"
        head_maps = [
            _relation_map(init, f"{base}.head{i}", chunk, slope)
            for i in range(1, cfg.heads + 1)
        ]
        global_map = _relation_map(init, f"{base}.global", d, slope)
        transform = TransformParams(
            weight=ad.ParamTensor(f"{base}.transform.weight", init.affine(2 * d, d)),
            norm_gamma=ad.ParamTensor(f"{base}.transform.norm_gamma", np.ones((1, d))),
            norm_beta=ad.ParamTensor(f"{base}.transform.norm_beta", np.zeros((1, d))),
            slope=slope,
        )
        layers.append(ComparisonLayerParams(
            global_map=global_map, head_maps=head_maps, transform=transform,
        ))

    squeeze = SqueezeParams(
        weight=ad.ParamTensor("squeeze.weight", init.affine(d, cfg.ways)),
    )
    calibration = CalibrationParams(
        sem_weight=ad.ParamTensor("calibration.semantic.weight",
                                  init.affine(cfg.semantic_dim, d)),
        sem_bias=ad.ParamTensor("calibration.semantic.bias",
                                init.bias(cfg.semantic_dim, d)),
        mix_weight=ad.ParamTensor("calibration.mix.weight",
                                  init.affine(2 * d, 2 * d)),
        slope=slope,
    )
    final_dim = d if cfg.ablation == "none_class" else 3 * d
    final = _relation_map(init, "final", final_dim, slope)

    return ModelParams(
        config=cfg,
        encoder=encoder,
        comparison=ComparisonParams(layers=layers, heads=cfg.heads),
        squeeze=squeeze,
        calibration=calibration,
        final=final,
    )


@dataclass
class ForwardOutputs:
    """Everything downstream consumers need from one episode pass."""

    pair_mask: np.ndarray
    v0: ad.Value
    v_last: ad.Value
    trace: list
    assignment: ad.Value | None
    class_visual: ad.Value | None
    class_semantic: ad.Value | None
    class_adj: ad.Value | None
    v_final: ad.Value
    adj_final: ad.Value
    probs: ad.Value

    def relation_matrices(self) -> list:
        """All matrices the adjacency loss supervises, in a fixed order."""
        out = [rel.global_adj for rel in self.trace]
        out.append(self.adj_final)
        for rel in self.trace:
            out.extend(rel.heads)
        return out


def _zeros_like(v: ad.Value) -> ad.Value:
    return ad.constant(np.zeros_like(v.data))


def forward_episode(params: ModelParams, episode: Episode,
                    ablation: str | None = None) -> ForwardOutputs:
    """Run comparison, squeeze, calibration, and inference on one episode.

    Ablations: none_class drops the class-level path entirely,
    none_calibrate broadcasts uncalibrated class knowledge, and
    none_z / none_v zero one half of the fused class representation.
    """
    cfg = params.config
    if ablation is None:
        ablation = cfg.ablation
    if episode.n_way != cfg.ways:
        raise ConfigError(
            f"episode has {episode.n_way} ways, model was built for {cfg.ways}"
        )

    pair_mask = build_pair_mask(episode)
    v0 = init_node_features(episode, params.encoder)
    v_last, trace = run_comparison(v0, pair_mask, params.comparison)
    global_last = trace[-1].global_adj

    assignment = class_visual = class_semantic = class_adj = None
    if ablation == "none_class":
        v_final = v_last
    else:
        assignment = compute_assignment(v_last, global_last, pair_mask, params.squeeze)
        class_visual = squeeze_classes(assignment, v_last)
        class_semantic = map_semantics(episode.class_semantics, params.calibration)
        visual_block = _zeros_like(class_visual) if ablation == "none_v" else class_visual
        semantic_block = _zeros_like(class_semantic) if ablation == "none_z" else class_semantic
        if ablation == "none_calibrate":
            fused = ad.concat_cols(visual_block, semantic_block)
            v_final = broadcast_class_knowledge(assignment, fused, v_last)
        else:
            class_adj, calibrated = calibrate_classes(
                assignment, global_last, pair_mask, visual_block, semantic_block,
                params.calibration,
            )
            v_final = broadcast_class_knowledge(assignment, calibrated, v_last)

    adj_final = final_adjacency(v_final, params.final)
    probs = predict(adj_final, episode)

    return ForwardOutputs(
        pair_mask=pair_mask,
        v0=v0,
        v_last=v_last,
        trace=trace,
        assignment=assignment,
        class_visual=class_visual,
        class_semantic=class_semantic,
        class_adj=class_adj,
        v_final=v_final,
        adj_final=adj_final,
        probs=probs,
    )


def episode_losses(outputs: ForwardOutputs, episode: Episode,
                   weights: tuple[float, float, float]) -> LossBreakdown:
    """The three supervised losses; the assignment term is zero when the
    class-level path was ablated away."""
    masks = build_loss_masks(episode)
    adj = adjacency_loss(outputs.relation_matrices(), masks)
    if outputs.assignment is None:
        assign = ad.constant(np.zeros((1, 1)))
    else:
        assign = assignment_loss(outputs.assignment, episode)
    cls = classification_loss(outputs.probs, episode)
    return total_loss(adj, assign, cls, weights)
