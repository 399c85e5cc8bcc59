"""Synthetic class-structured datasets and N-way K-shot episode sampling.

A dataset is a bank of per-class samples drawn around Gaussian prototypes,
plus one semantic embedding per class whose informativeness is controlled
by a coupling coefficient alpha (1 = deterministic function of the
prototype, 0 = independent noise).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .config import DataConfig
from .errors import ConfigError, DataFormatError

DATA_MAGIC = "ECKPN-DATA v1"
SPLITS = ("train", "val", "test")


def derive_seed(*keys: int) -> int:
    """Mix integer keys into one reproducible 32-bit seed."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


@dataclass
class SyntheticDataset:
    prototypes: np.ndarray            # class_count x raw_dim
    semantics: np.ndarray             # class_count x semantic_dim
    features: np.ndarray              # total_samples x raw_dim
    feature_labels: np.ndarray        # total_samples, global class ids
    splits: dict                      # split name -> sorted class id array
    sigma_w: float = 0.0
    prototype_scale: float = 1.0
    alpha: float = 0.0
    seed: int = 0
    class_rows: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.class_rows:
            for c in range(self.class_count):
                self.class_rows[c] = np.flatnonzero(self.feature_labels == c)

    @property
    def class_count(self) -> int:
        return self.prototypes.shape[0]

    @property
    def raw_dim(self) -> int:
        return self.prototypes.shape[1]

    @property
    def semantic_dim(self) -> int:
        return self.semantics.shape[1]

    def split_classes(self, split: str) -> np.ndarray:
        if split not in self.splits:
            raise ConfigError(f"unknown split {split!r}; expected one of {SPLITS}")
        return self.splits[split]


@dataclass
class Episode:
    """One transductive task: support and query rows over n_way classes."""

    n_way: int
    k_shot: int
    t_queries: int
    features: np.ndarray       # r x raw_dim
    labels: np.ndarray         # r, episode-local ids in [0, n_way)
    is_support: np.ndarray     # r bools
    is_labeled: np.ndarray     # r bools, true only for visible support labels
    class_semantics: np.ndarray  # n_way x semantic_dim, ordered by local label

    @property
    def size(self) -> int:
        return self.features.shape[0]

    def permuted(self, perm: np.ndarray) -> "Episode":
        """Row-reordered view; class identities are untouched."""
        return Episode(
            n_way=self.n_way,
            k_shot=self.k_shot,
            t_queries=self.t_queries,
            features=self.features[perm],
            labels=self.labels[perm],
            is_support=self.is_support[perm],
            is_labeled=self.is_labeled[perm],
            class_semantics=self.class_semantics,
        )


def _split_counts(class_count: int, fractions) -> list[int]:
    n_train = int(round(fractions[0] * class_count))
    n_val = int(round(fractions[1] * class_count))
    n_train = min(n_train, class_count)
    n_val = min(n_val, class_count - n_train)
    return [n_train, n_val, class_count - n_train - n_val]


def gen_synthetic_dataset(cfg: DataConfig) -> SyntheticDataset:
    """Build a dataset fully determined by cfg.seed.

    Draw order is fixed (prototypes, semantic map, semantic noise, sample
    noise, split shuffle) so any change here is a format break.
    """
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed]))
    c, d, d1 = cfg.class_count, cfg.raw_dim, cfg.semantic_dim

    prototypes = cfg.prototype_scale * rng.normal(size=(c, d))
    semantic_map = rng.normal(size=(d, d1)) / math.sqrt(d)
    semantic_noise = rng.normal(size=(c, d1))
    semantics = cfg.alpha * (prototypes @ semantic_map) + (1.0 - cfg.alpha) * semantic_noise

    s = cfg.samples_per_class
    noise = rng.normal(size=(c, s, d))
    bank = prototypes[:, None, :] + cfg.sigma_w * noise
    features = bank.reshape(c * s, d)
    labels = np.repeat(np.arange(c), s)

    order = rng.permutation(c)
    counts = _split_counts(c, cfg.split_fractions)
    splits = {}
    start = 0
    for name, count in zip(SPLITS, counts):
        splits[name] = np.sort(order[start:start + count])
        start += count

    return SyntheticDataset(
        prototypes=prototypes,
        semantics=semantics,
        features=features,
        feature_labels=labels,
        splits=splits,
        sigma_w=cfg.sigma_w,
        prototype_scale=cfg.prototype_scale,
        alpha=cfg.alpha,
        seed=cfg.seed,
    )


def _query_counts(n_way: int, t_queries: int) -> np.ndarray:
    """Balanced queries; the remainder goes round-robin to the first classes."""
    counts = np.full(n_way, t_queries // n_way)
    counts[: t_queries % n_way] += 1
    return counts


def sample_episode(dataset: SyntheticDataset, split: str, n_way: int, k_shot: int,
                   t_queries: int, label_ratio: float, rng_seed: int) -> Episode:
    """Draw one episode; identical arguments and seed give identical output."""
    if t_queries < 1:
        raise ConfigError("t_queries must be >= 1")
    if not 0.0 < label_ratio <= 1.0:
        raise ConfigError("label_ratio must lie in (0, 1]")
    pool = dataset.split_classes(split)
    if len(pool) < n_way:
        raise ConfigError(
            f"split {split!r} has {len(pool)} classes, episode needs {n_way}"
        )
    n_labeled = math.ceil(label_ratio * n_way * k_shot)
    if n_labeled < n_way:
        raise ConfigError(
            f"label_ratio {label_ratio} yields {n_labeled} labeled supports for "
            f"{n_way} classes; every class needs at least one labeled support"
        )

    rng = np.random.default_rng(np.random.SeedSequence([rng_seed]))
    chosen = rng.choice(pool, size=n_way, replace=False)
    q_counts = _query_counts(n_way, t_queries)

    support_feats, query_feats = [], []
    support_labels, query_labels = [], []
    for local, cls in enumerate(chosen):
        rows = dataset.class_rows[int(cls)]
        need = k_shot + q_counts[local]
        if len(rows) < need:
            raise ConfigError(
                f"class {int(cls)} has {len(rows)} samples, episode needs {need}"
            )
        picked = rng.choice(rows, size=need, replace=False)
        support_feats.append(dataset.features[picked[:k_shot]])
        query_feats.append(dataset.features[picked[k_shot:]])
        support_labels.extend([local] * k_shot)
        query_labels.extend([local] * q_counts[local])

    features = np.concatenate(support_feats + query_feats, axis=0)
    labels = np.array(support_labels + query_labels, dtype=np.int64)
    r = len(labels)
    is_support = np.zeros(r, dtype=bool)
    is_support[: n_way * k_shot] = True

    is_labeled = np.zeros(r, dtype=bool)
    support_idx = np.arange(n_way * k_shot)
    if n_labeled >= n_way * k_shot:
        is_labeled[support_idx] = True
    else:
        # one guaranteed labeled support per class, then fill uniformly
        picked = []
        for local in range(n_way):
            members = support_idx[labels[support_idx] == local]
            picked.append(rng.choice(members))
        picked = np.array(picked)
        remaining = np.setdiff1d(support_idx, picked)
        extra = rng.choice(remaining, size=n_labeled - n_way, replace=False)
        is_labeled[picked] = True
        is_labeled[extra] = True

    return Episode(
        n_way=n_way,
        k_shot=k_shot,
        t_queries=t_queries,
        features=features,
        labels=labels,
        is_support=is_support,
        is_labeled=is_labeled,
        class_semantics=dataset.semantics[chosen],
    )


def label_block(episode: Episode) -> np.ndarray:
    """One-hot rows for labeled supports, uniform 1/N elsewhere."""
    n = episode.n_way
    block = np.full((episode.size, n), 1.0 / n)
    visible = episode.is_support & episode.is_labeled
    rows = np.flatnonzero(visible)
    block[rows] = 0.0
    block[rows, episode.labels[rows]] = 1.0
    return block


def init_node_features(episode: Episode, encoder: "EncoderParams") -> ad.Value:
    """Initial node matrix: encoded features plus the label block, projected."""
    feats = ad.constant(episode.features)
    if episode.features.shape[1] != encoder.weight.shape[0]:
        raise ConfigError(
            f"encoder expects raw dim {encoder.weight.shape[0]}, "
            f"episode has {episode.features.shape[1]}"
        )
    r = episode.size
    enc = ad.leaky_relu(
        ad.add(ad.matmul(feats, encoder.weight.value),
               ad.broadcast_rows(encoder.bias.value, r)),
        encoder.slope,
    )
    combined = ad.concat_cols(enc, ad.constant(label_block(episode)))
    return ad.add(
        ad.matmul(combined, encoder.proj_weight.value),
        ad.broadcast_rows(encoder.proj_bias.value, r),
    )


@dataclass
class EncoderParams:
    weight: ad.ParamTensor       # raw_dim x node_dim
    bias: ad.ParamTensor         # 1 x node_dim
    proj_weight: ad.ParamTensor  # (node_dim + ways) x node_dim
    proj_bias: ad.ParamTensor    # 1 x node_dim
    slope: float = 0.2

    def tensors(self):
        return [self.weight, self.bias, self.proj_weight, self.proj_bias]


def nearest_centroid_accuracy(dataset: SyntheticDataset, split: str, n_way: int,
                              k_shot: int, t_queries: int, episodes: int,
                              seed: int) -> float:
    """Accuracy of classifying each query by its nearest support centroid.

    Non-learned baseline used to calibrate how hard a synthetic config is.
    """
    correct = 0
    total = 0
    for i in range(episodes):
        ep = sample_episode(dataset, split, n_way, k_shot, t_queries, 1.0,
                            derive_seed(seed, i))
        centroids = np.stack([
            ep.features[ep.is_support & (ep.labels == c)].mean(axis=0)
            for c in range(n_way)
        ])
        queries = ep.features[~ep.is_support]
        truth = ep.labels[~ep.is_support]
        dists = ((queries[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        correct += int((dists.argmin(axis=1) == truth).sum())
        total += len(truth)
    return correct / total


# ------------------------------------------------------------------- file I/O

def _write_matrix(lines: list[str], name: str, mat: np.ndarray):
    lines.append(f"{name} {mat.shape[0]} {mat.shape[1]}")
    for row in mat:
        lines.append(",".join(repr(float(v)) for v in row))


def save_dataset(dataset: SyntheticDataset, path):
    """Write the versioned text container (see README for the layout)."""
    lines = [DATA_MAGIC]
    lines.append(f"classes={dataset.class_count}")
    lines.append(f"raw_dim={dataset.raw_dim}")
    lines.append(f"semantic_dim={dataset.semantic_dim}")
    lines.append(f"sigma_w={dataset.sigma_w!r}")
    lines.append(f"prototype_scale={dataset.prototype_scale!r}")
    lines.append(f"alpha={dataset.alpha!r}")
    lines.append(f"seed={dataset.seed}")
    _write_matrix(lines, "PROTOTYPES", dataset.prototypes)
    _write_matrix(lines, "SEMANTICS", dataset.semantics)
    _write_matrix(lines, "SAMPLES", dataset.features)
    lines.append(f"LABELS {len(dataset.feature_labels)}")
    lines.extend(str(int(v)) for v in dataset.feature_labels)
    for name in SPLITS:
        ids = dataset.splits[name]
        lines.append(f"SPLIT {name} {len(ids)}")
        lines.append(",".join(str(int(v)) for v in ids) if len(ids) else "")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


class _LineReader:
    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.pos = 0

    def next(self) -> str:
        if self.pos >= len(self.lines):
            raise DataFormatError("dataset file truncated")
        line = self.lines[self.pos]
        self.pos += 1
        return line


def _read_matrix(reader: _LineReader, name: str) -> np.ndarray:
    header = reader.next().split()
    if len(header) != 3 or header[0] != name:
        raise DataFormatError(f"expected '{name} rows cols' header, got {header}")
    rows, cols = int(header[1]), int(header[2])
    out = np.empty((rows, cols))
    for i in range(rows):
        parts = reader.next().split(",")
        if len(parts) != cols:
            raise DataFormatError(f"{name} row {i}: expected {cols} values")
        out[i] = [float(v) for v in parts]
    return out


def load_dataset(path) -> SyntheticDataset:
    """Read a dataset container, either generated here or produced externally."""
    with open(path) as fh:
        reader = _LineReader(fh.read())
    if reader.next() != DATA_MAGIC:
        raise DataFormatError(f"bad magic; expected {DATA_MAGIC!r}")
    meta = {}
    while True:
        line = reader.next()
        if line.startswith("PROTOTYPES"):
            reader.pos -= 1
            break
        if "=" not in line:
            raise DataFormatError(f"expected key=value metadata, got {line!r}")
        key, value = line.split("=", 1)
        meta[key] = value
    for key in ("classes", "raw_dim", "semantic_dim"):
        if key not in meta:
            raise DataFormatError(f"missing metadata key {key}")

    prototypes = _read_matrix(reader, "PROTOTYPES")
    semantics = _read_matrix(reader, "SEMANTICS")
    features = _read_matrix(reader, "SAMPLES")
    header = reader.next().split()
    if len(header) != 2 or header[0] != "LABELS":
        raise DataFormatError("expected 'LABELS count' header")
    count = int(header[1])
    if count != features.shape[0]:
        raise DataFormatError("LABELS count does not match SAMPLES rows")
    labels = np.array([int(reader.next()) for _ in range(count)], dtype=np.int64)

    splits = {}
    for name in SPLITS:
        header = reader.next().split()
        if len(header) != 3 or header[0] != "SPLIT" or header[1] != name:
            raise DataFormatError(f"expected 'SPLIT {name} count' header")
        n = int(header[2])
        raw = reader.next()
        ids = np.array([int(v) for v in raw.split(",")] if raw else [], dtype=np.int64)
        if len(ids) != n:
            raise DataFormatError(f"SPLIT {name}: expected {n} ids")
        splits[name] = ids

    classes = int(meta["classes"])
    if prototypes.shape != (classes, int(meta["raw_dim"])):
        raise DataFormatError("PROTOTYPES shape does not match metadata")
    if semantics.shape != (classes, int(meta["semantic_dim"])):
        raise DataFormatError("SEMANTICS shape does not match metadata")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= classes:
        raise DataFormatError("LABELS contain out-of-range class ids")

    return SyntheticDataset(
        prototypes=prototypes,
        semantics=semantics,
        features=features,
        feature_labels=labels,
        splits=splits,
        sigma_w=float(meta.get("sigma_w", 0.0)),
        prototype_scale=float(meta.get("prototype_scale", 1.0)),
        alpha=float(meta.get("alpha", 0.0)),
        seed=int(meta.get("seed", 0)),
    )
