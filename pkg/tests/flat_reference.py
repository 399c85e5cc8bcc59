"""Straight-line numpy recomputation of the full forward pass.

This file is the independent oracle for the model: one flat function per
stage, explicit loops over sample pairs, no imports from the package under
test. Tests compare the modular implementation against these functions.
Keep this file free of any eckpn imports.
"""

import numpy as np

BN_EPS = 1e-5
ADJ_EPS = 1e-7


def leaky(x, slope):
    return np.where(x >= 0, x, slope * x)


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def flat_batchnorm(x, gamma, beta, eps=BN_EPS):
    """Normalize each column over the rows, then scale/shift."""
    mu = x.mean(axis=0, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=0, keepdims=True)
    return gamma * (x - mu) / np.sqrt(var + eps) + beta


def flat_row_softmax(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def flat_relation(v, w, gamma, beta, slope):
    """Pairwise squared-difference relation matrix, one scalar per pair.

    Loops over every ordered pair so it cannot share vectorization bugs
    with the implementation under test.
    """
    r = v.shape[0]
    raw = np.zeros((r * r, 1))
    for m in range(r):
        for n in range(r):
            diff = v[m] - v[n]
            raw[m * r + n, 0] = float(diff @ (diff * w[:, 0]))
    normed = flat_batchnorm(raw, gamma, beta)
    act = sigmoid(leaky(normed, slope))
    return np.clip(act, ADJ_EPS, 1.0 - ADJ_EPS).reshape(r, r)


def flat_pair_mask(labels, is_support, is_labeled):
    r = len(labels)
    m = np.ones((r, r))
    for a in range(r):
        for b in range(r):
            if (
                is_support[a]
                and is_support[b]
                and is_labeled[a]
                and is_labeled[b]
                and labels[a] != labels[b]
            ):
                m[a, b] = -1.0
    return m


def flat_node_init(features, labels, is_support, is_labeled, n_way, p, slope):
    """Encoder + one-hot block + input projection."""
    enc = leaky(features @ p["encoder.weight"] + p["encoder.bias"], slope)
    r = features.shape[0]
    block = np.full((r, n_way), 1.0 / n_way)
    for i in range(r):
        if is_support[i] and is_labeled[i]:
            block[i] = 0.0
            block[i, labels[i]] = 1.0
    both = np.concatenate([enc, block], axis=1)
    return both @ p["encoder.proj_weight"] + p["encoder.proj_bias"]


def flat_forward(p, episode, cfg):
    """Recompute every stage of the forward pass with plain numpy.

    p: dict of parameter name -> array.
    episode: dict with features, labels, is_support, is_labeled, semantics.
    cfg: dict with ways, node_dim, heads, layers, slope, ablation.
    Returns a dict of intermediates.
    """
    ways = cfg["ways"]
    d = cfg["node_dim"]
    heads = cfg["heads"]
    layers = cfg["layers"]
    slope = cfg["slope"]
    ablation = cfg.get("ablation", "full")
    chunk = d // heads

    labels = episode["labels"]
    is_support = episode["is_support"]
    is_labeled = episode["is_labeled"]

    mask = flat_pair_mask(labels, is_support, is_labeled)
    v = flat_node_init(
        episode["features"], labels, is_support, is_labeled, ways, p, slope
    )
    out = {"M": mask, "V0": v.copy(), "A_g": [], "A_heads": []}

    for layer in range(1, layers + 1):
        base = f"comparison.layer{layer}"
        a_g = flat_relation(
            v,
            p[f"{base}.global.weight"],
            p[f"{base}.global.norm_gamma"],
            p[f"{base}.global.norm_beta"],
            slope,
        )
        a_heads = []
        for h in range(1, heads + 1):
            cols = slice((h - 1) * chunk, h * chunk)
            a_heads.append(
                flat_relation(
                    v[:, cols],
                    p[f"{base}.head{h}.weight"],
                    p[f"{base}.head{h}.norm_gamma"],
                    p[f"{base}.head{h}.norm_beta"],
                    slope,
                )
            )
        out["A_g"].append(a_g)
        out["A_heads"].append(a_heads)

        parts = []
        for h in range(1, heads + 1):
            cols = slice((h - 1) * chunk, h * chunk)
            parts.append((a_heads[h - 1] * mask) @ v[:, cols])
        parts.append((a_g * mask) @ v)
        cat = np.concatenate(parts, axis=1)
        pre = cat @ p[f"{base}.transform.weight"]
        v = leaky(
            flat_batchnorm(
                pre,
                p[f"{base}.transform.norm_gamma"],
                p[f"{base}.transform.norm_beta"],
            ),
            slope,
        )

    out["V_L"] = v
    a_g_last = out["A_g"][-1] * mask

    if ablation == "none_class":
        v_f = v
    else:
        assign = flat_row_softmax(a_g_last @ v @ p["squeeze.weight"])
        v_c = assign.T @ v
        z = leaky(
            episode["semantics"] @ p["calibration.semantic.weight"]
            + p["calibration.semantic.bias"],
            slope,
        )
        out["P"] = assign
        out["V_c"] = v_c
        out["Z"] = z
        v_block = np.zeros_like(v_c) if ablation == "none_v" else v_c
        z_block = np.zeros_like(z) if ablation == "none_z" else z
        v_mm = np.concatenate([v_block, z_block], axis=1)
        out["V_mm"] = v_mm
        if ablation == "none_calibrate":
            refined = assign @ v_mm
        else:
            a_c = assign.T @ a_g_last @ assign
            out["A_c"] = a_c
            refined = assign @ (a_c @ v_mm @ p["calibration.mix.weight"])
        v_f = np.concatenate([v, refined], axis=1)

    out["V_f"] = v_f
    a_f = flat_relation(
        v_f,
        p["final.weight"],
        p["final.norm_gamma"],
        p["final.norm_beta"],
        slope,
    )
    out["A_f"] = a_f

    query_idx = np.flatnonzero(~is_support)
    voter_idx = np.flatnonzero(is_support & is_labeled)
    logits = np.zeros((len(query_idx), ways))
    for qi, q in enumerate(query_idx):
        for u in voter_idx:
            logits[qi, labels[u]] += a_f[u, q]
    out["logits"] = logits
    out["probs"] = flat_row_softmax(logits)
    return out


def flat_losses(out, episode, ways, lambdas=(1.0, 0.5, 1.0), eps=ADJ_EPS):
    """Adjacency, assignment, and classification losses from intermediates."""
    labels = episode["labels"]
    is_support = episode["is_support"]
    r = len(labels)
    h = np.ones((r, r))
    h[is_support, :] = 0.0
    g_t = (labels[:, None] == labels[None, :]).astype(float)

    matrices = list(out["A_g"]) + [out["A_f"]]
    for per_layer in out["A_heads"]:
        matrices.extend(per_layer)
    l0 = 0.0
    for a in matrices:
        pos_den = (h * g_t).sum()
        neg_den = (h * (1.0 - g_t)).sum()
        term = 0.0
        if pos_den > 0:
            term += (np.log(a) * h * g_t).sum() / pos_den
        if neg_den > 0:
            term += (np.log(1.0 - a) * h * (1.0 - g_t)).sum() / neg_den
        l0 -= term

    if "P" in out:
        onehot = np.zeros((r, ways))
        onehot[np.arange(r), labels] = 1.0
        l1 = -(np.log(np.clip(out["P"], eps, 1.0)) * onehot).sum() / r
    else:
        l1 = 0.0

    probs = out["probs"]
    q_labels = labels[~is_support]
    l2 = -np.log(np.clip(probs[np.arange(len(q_labels)), q_labels], eps, 1.0)).sum()

    total = lambdas[0] * l0 + lambdas[1] * l1 + lambdas[2] * l2
    return {"l0": l0, "l1": l1, "l2": l2, "total": total}
