"""Independent reference implementations used to pin expected values.

Everything here is deliberately written as plain scalar loops in float64,
with no shared code paths with the package: brute-force DFT sums, pairwise
metric counting, and scalar re-implementations of the small neural blocks.
"""

import math

import numpy as np


def naive_dft2_centered(image: np.ndarray) -> np.ndarray:
    """O(N^4) double-loop DFT, then recentered so DC sits at (H//2, W//2)."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    out = np.zeros((h, w), dtype=np.complex128)
    for u in range(h):
        for v in range(w):
            acc = 0.0 + 0.0j
            for m in range(h):
                for n in range(w):
                    angle = -2.0 * math.pi * (u * m / h + v * n / w)
                    acc += image[m, n] * complex(math.cos(angle), math.sin(angle))
            out[u, v] = acc
    return np.roll(np.roll(out, h // 2, axis=0), w // 2, axis=1)


def naive_frequency_distance(x, x_hat, alpha=1.0) -> float:
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.ndim == 2:
        x, x_hat = x[:, :, None], x_hat[:, :, None]
    total = 0.0
    for c in range(x.shape[2]):
        diff = naive_dft2_centered(x[:, :, c]) - naive_dft2_centered(x_hat[:, :, c])
        total += float(np.mean(np.abs(diff) ** alpha))
    return total / x.shape[2]


def disc_lattice_count(height: int, width: int, radius: float) -> int:
    """Number of lattice points strictly inside the disc around the centered
    DC coefficient."""
    cy, cx = height // 2, width // 2
    count = 0
    for u in range(height):
        for v in range(width):
            if math.sqrt((u - cy) ** 2 + (v - cx) ** 2) < radius:
                count += 1
    return count


def cosine_rows(za: np.ndarray, zb: np.ndarray) -> np.ndarray:
    """Per-row cosine similarity via explicit scalar sums."""
    za = np.asarray(za, dtype=np.float64)
    zb = np.asarray(zb, dtype=np.float64)
    out = np.zeros(za.shape[0])
    for i in range(za.shape[0]):
        dot = sum(float(a) * float(b) for a, b in zip(za[i], zb[i]))
        na = math.sqrt(sum(float(a) ** 2 for a in za[i]))
        nb = math.sqrt(sum(float(b) ** 2 for b in zb[i]))
        out[i] = 0.0 if na == 0.0 or nb == 0.0 else dot / (na * nb)
    return out


def mean_and_population_std(values) -> tuple[float, float]:
    values = [float(v) for v in values]
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


def gelu_scalar(x: float) -> float:
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def layer_norm_scalar(row, gamma, beta, eps=1e-5):
    mean, std = mean_and_population_std(row)
    var = std * std
    return [
        (float(x) - mean) / math.sqrt(var + eps) * float(g) + float(b)
        for x, g, b in zip(row, gamma, beta)
    ]


def linear_scalar(row, weight, bias):
    """weight laid out (out_dim, in_dim) as torch stores it."""
    out = []
    for o in range(weight.shape[0]):
        acc = float(bias[o])
        for i in range(weight.shape[1]):
            acc += float(weight[o, i]) * float(row[i])
        out.append(acc)
    return out


def softmax_scalar(row):
    m = max(float(v) for v in row)
    exps = [math.exp(float(v) - m) for v in row]
    total = sum(exps)
    return [e / total for e in exps]


def projection_operator_scalar(tokens, ln1, lin1, lin2, ln2):
    """Mirror of the projection operator: LN -> Linear -> GELU -> Linear -> LN.

    Each of ln1/ln2 is (gamma, beta); each of lin1/lin2 is (weight, bias).
    """
    out = []
    for row in tokens:
        x = layer_norm_scalar(row, *ln1)
        x = linear_scalar(x, *lin1)
        x = [gelu_scalar(v) for v in x]
        x = linear_scalar(x, *lin2)
        out.append(layer_norm_scalar(x, *ln2))
    return np.asarray(out)


def context_projector_scalar(row, lin1, lin2, ln):
    x = linear_scalar(row, *lin1)
    x = [gelu_scalar(v) for v in x]
    x = linear_scalar(x, *lin2)
    x = [gelu_scalar(v) for v in x]
    return layer_norm_scalar(x, *ln)


def spectral_context_scalar(stats, c_map, p1, p2, axis="features"):
    """stats (N, 2D), c_map (N, D); p1/p2 are (lin1, lin2, ln) triples."""
    n_blocks, dim = c_map.shape
    if axis == "features":
        soft = [softmax_scalar(c_map[n]) for n in range(n_blocks)]
    else:
        cols = [softmax_scalar(c_map[:, j]) for j in range(dim)]
        soft = [[cols[j][n] for j in range(dim)] for n in range(n_blocks)]
    z_c = [0.0] * dim
    for n in range(n_blocks):
        projected = context_projector_scalar(stats[n], *p1)
        gated = [s * p for s, p in zip(soft[n], projected)]
        out_row = context_projector_scalar(gated, *p2)
        z_c = [a + b for a, b in zip(z_c, out_row)]
    return np.asarray(z_c)


def single_query_attention_scalar(vectors, query, w_k, w_v, w_o):
    """vectors (K, dim); w_k/w_v (attn, dim) torch layout; w_o (dim, attn)."""
    k_count = vectors.shape[0]
    attn_dim = len(query)
    logits = []
    for k in range(k_count):
        key = linear_scalar(vectors[k], w_k, [0.0] * attn_dim)
        logits.append(sum(q * kk for q, kk in zip(query, key)) / math.sqrt(attn_dim))
    weights = softmax_scalar(logits)
    pooled = [0.0] * attn_dim
    for k in range(k_count):
        value = linear_scalar(vectors[k], w_v, [0.0] * attn_dim)
        for j in range(attn_dim):
            pooled[j] += weights[k] * value[j]
    fused = linear_scalar(pooled, w_o, [0.0] * w_o.shape[0])
    return np.asarray(fused), np.asarray(weights)


def bce_scalar(y_hat, y) -> float:
    total = 0.0
    for p, t in zip(y_hat, y):
        total += -(float(t) * math.log(float(p)) + (1.0 - float(t)) * math.log(1.0 - float(p)))
    return total / len(y_hat)


def auc_pairwise(scores, labels) -> float:
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def balanced_accuracy_confusion(scores, labels, threshold=0.5) -> float:
    tp = fn = tn = fp = 0
    for s, l in zip(scores, labels):
        predicted = 1 if s > threshold else 0
        if l == 1 and predicted == 1:
            tp += 1
        elif l == 1:
            fn += 1
        elif predicted == 0:
            tn += 1
        else:
            fp += 1
    return 0.5 * (tp / (tp + fn) + tn / (tn + fp))


def average_precision_sweep(scores, labels) -> float:
    n_pos = sum(1 for l in labels if l == 1)
    thresholds = sorted(set(scores), reverse=True)
    total = 0.0
    prev_recall = 0.0
    for t in thresholds:
        tp = sum(1 for s, l in zip(scores, labels) if s >= t and l == 1)
        predicted = sum(1 for s in scores if s >= t)
        precision = tp / predicted
        recall = tp / n_pos
        total += (recall - prev_recall) * precision
        prev_recall = recall
    return total
