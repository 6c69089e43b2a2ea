"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here shares code with the package beyond plain numpy.
"""

from __future__ import annotations

import math

import numpy as np


# ------------------------------------------------------------------ Wu-Palmer


def _upward_paths(parents, node):
    """Every path from ``node`` up to a root, as lists of nodes."""
    ps = parents.get(node, ())
    if not ps:
        return [[node]]
    out = []
    for p in ps:
        for path in _upward_paths(parents, p):
            out.append([node] + path)
    return out


def brute_depth(parents, node):
    return min(len(p) for p in _upward_paths(parents, node))


def brute_subsumers(parents, node):
    return {n for path in _upward_paths(parents, node) for n in path}


def brute_wu_palmer(entries, a, b):
    parents = {}
    for child, parent in entries:
        parents.setdefault(child, set()).add(parent)
    if a == b:
        return 1.0
    common = brute_subsumers(parents, a) & brute_subsumers(parents, b)
    if not common:
        return None
    lcs_depth = max(brute_depth(parents, c) for c in common)
    return min(1.0, 2.0 * lcs_depth / (brute_depth(parents, a) + brute_depth(parents, b)))


def random_taxonomy(rng, n_nodes):
    """Random DAG over ``t0..t{n-1}`` where parents always have a lower index."""
    names = [f"t{i}" for i in range(n_nodes)]
    n_roots = int(rng.integers(1, 3))
    entries = []
    for i in range(n_roots, n_nodes):
        k = int(rng.integers(1, 3))
        for j in sorted(set(int(x) for x in rng.integers(0, i, size=k))):
            entries.append((names[i], names[j]))
    return names, entries


# ------------------------------------------------------------- message passing


def leaky(x, alpha):
    return np.where(x > 0, x, alpha * x)


def _neighbors(n, edges):
    nb = [set() for _ in range(n)]
    for s, d, _ in edges:
        if s != d:
            nb[s].add(d)
            nb[d].add(s)
    return nb


def gcn_layer(n, edges, H, W):
    nb = _neighbors(n, edges)
    deg = [len(x) + 1 for x in nb]
    out = np.zeros((n, W.shape[1]))
    for i in range(n):
        for j in nb[i] | {i}:
            out[i] += (H[j] @ W) / math.sqrt(deg[i] * deg[j])
    return out


def rgcn_layer(n, edges, num_rel, H, params, l):
    W0 = params[f"self{l}"]
    din, dout = W0.shape
    if f"bases{l}" in params:
        stacked = params[f"coef{l}"] @ params[f"bases{l}"]
    else:
        stacked = params.get(f"rel{l}")
    out = np.zeros((n, dout))
    for i in range(n):
        out[i] = H[i] @ W0
        if stacked is None:
            continue
        for r in range(num_rel):
            incoming = [s for s, d, rr in edges if rr == r and d == i]
            outgoing = [d for s, d, rr in edges if rr == r and s == i]
            for k, group in ((r, incoming), (r + num_rel, outgoing)):
                if not group:
                    continue
                Wr = stacked[k].reshape(din, dout)
                for j in group:
                    out[i] += (H[j] @ Wr) / len(group)
    return out


def trgcn_layer(n, edges, H, params, l, alpha):
    nb = _neighbors(n, edges)
    hidden = leaky(H @ params[f"mlp1_{l}"] + params[f"mlp1b_{l}"], alpha)
    P = hidden @ params[f"mlp2_{l}"] + params[f"mlp2b_{l}"]
    Q = P @ params[f"query{l}"]
    K = P @ params[f"key{l}"]
    d = P.shape[1]
    pooled = np.zeros((n, d))
    for i in range(n):
        members = sorted(nb[i] | {i})
        acc = np.zeros(d)
        for a in members:
            logits = np.array([Q[a] @ K[b] / math.sqrt(d) for b in members])
            w = np.exp(logits - logits.max())
            w /= w.sum()
            acc += sum(wk * P[b] for wk, b in zip(w, members))
        pooled[i] = acc / len(members)
    return np.hstack([H, pooled]) @ params[f"out{l}"] + params[f"outb{l}"]


def gnn_forward(arch, n, edges, num_rel, H, params, num_layers, alpha=0.2, normalize=True):
    out = H
    for l in range(num_layers):
        if arch == "gcn":
            out = gcn_layer(n, edges, out, params[f"W{l}"])
        elif arch == "rgcn":
            out = rgcn_layer(n, edges, num_rel, out, params, l)
        elif arch == "trgcn":
            out = trgcn_layer(n, edges, out, params, l, alpha)
        else:
            raise ValueError(arch)
        if l < num_layers - 1:
            out = leaky(out, alpha)
    if normalize:
        norms = np.sqrt((out * out).sum(axis=1, keepdims=True))
        out = np.where(norms > 0, out / np.where(norms > 0, norms, 1.0), out)
    return out


def random_graph(rng, max_nodes=10, max_rel=3):
    n = int(rng.integers(2, max_nodes + 1))
    num_rel = int(rng.integers(1, max_rel + 1))
    edges = set()
    for _ in range(int(rng.integers(1, 2 * n + 1))):
        s, d = (int(x) for x in rng.choice(n, size=2, replace=False))
        edges.add((s, d, int(rng.integers(num_rel))))
    return n, sorted(edges), num_rel


# ------------------------------------------------------------------- sweeps


def dense_grid_pairs(scores, labels, unseen_mask, n_points=10_000, lo=None, hi=None):
    """(seen_acc, unseen_acc) pairs on a uniform bias grid, by direct argmax."""
    scores = np.asarray(scores, float)
    unseen_mask = np.asarray(unseen_mask, bool)
    labels = np.asarray(labels)
    span = np.abs(scores).max() * 2 + 1.0
    lo = -span if lo is None else lo
    hi = span if hi is None else hi
    seen_rows = ~unseen_mask[labels]
    unseen_rows = unseen_mask[labels]
    pairs = set()
    for b in np.linspace(lo, hi, n_points):
        pred = np.argmax(scores + b * unseen_mask, axis=1)
        ok = pred == labels
        pairs.add((float(ok[seen_rows].mean()), float(ok[unseen_rows].mean())))
    return pairs


def hm(s, u):
    return 0.0 if s + u == 0 else 2 * s * u / (s + u)


def trapezoid_auc(pairs):
    pairs = set(pairs)
    pairs.add((max(s for s, _ in pairs), 0.0))
    pairs.add((0.0, max(u for _, u in pairs)))
    # walk from unseen=0 to unseen=max; within equal unseen take higher seen first
    pts = sorted(pairs, key=lambda p: (p[1], -p[0]))
    total = 0.0
    for i in range(1, len(pts)):
        total += (pts[i][1] - pts[i - 1][1]) * (pts[i][0] + pts[i - 1][0]) / 2
    return total


# ----------------------------------------------------------- finite differences


def central_difference(f, x, eps=1e-5):
    """Gradient of scalar ``f`` at array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f(x)
        x[i] = old - eps
        lo = f(x)
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def relative_error(a, b):
    """Norm-wise relative error, robust to arrays with near-zero entries."""
    a, b = np.asarray(a), np.asarray(b)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)
