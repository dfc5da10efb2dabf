"""Numeric inner-loop kernels with numba and pure-numpy implementations.

Every kernel exists twice: a vectorized numpy version (``*_np``) and a
loop-style numba ``@njit`` version. The module-level public names bind to
the numba versions when numba imports cleanly, otherwise to the numpy
fallbacks. Set ``TRUSTREC_NO_NUMBA=1`` to force the numpy path regardless.
``benchmarks/bench_kernels.py`` times the two side by side.

All kernels are single-threaded so results are deterministic for a fixed
backend. Callers guarantee non-empty inputs unless noted.
"""

from __future__ import annotations

import os

import numpy as np

_FORCE_NUMPY = os.environ.get("TRUSTREC_NO_NUMBA", "").strip().lower() in (
    "1",
    "true",
    "yes",
)

try:
    if _FORCE_NUMPY:
        raise ImportError("numba disabled via TRUSTREC_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    njit = None
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy implementations


def consistency_scores_np(query, cand_h):
    """Shifted similarity scores exp(-(D_i - D_min)) from squared distances.

    The shift by D_min keeps exp() in range; downstream normalization is
    invariant to it. cand_h is (k, d) with k >= 1.
    """
    diff = cand_h - query[None, :]
    dist = np.einsum("ij,ij->i", diff, diff)
    return np.exp(dist.min() - dist)


def attention_weights_np(att_w, neigh_h, rel_e):
    """Softmax over per-neighbor logits att_w . (h_i ++ e_ri), max-shifted."""
    d = neigh_h.shape[1]
    logits = neigh_h @ att_w[:d] + rel_e @ att_w[d:]
    logits = logits - logits.max()
    e = np.exp(logits)
    return e / e.sum()


def weighted_sum_np(weights, vecs):
    """Convex combination sum_i w_i * vecs[i] for (k,) weights and (k, d) vecs."""
    return weights @ vecs


def weighted_pick_np(scores, uniforms):
    """Sequential weighted draws without replacement.

    Each draw picks index i with probability proportional to the remaining
    scores, then zeroes that slot. If all remaining mass is zero (scores can
    underflow to 0.0), remaining picks fall back to ascending index order.
    Returns len(uniforms) distinct indices.
    """
    s = scores.astype(np.float64).copy()
    k = s.shape[0]
    q = uniforms.shape[0]
    out = np.empty(q, dtype=np.int64)
    taken = np.zeros(k, dtype=np.bool_)
    for j in range(q):
        total = s.sum()
        if total > 0.0:
            cum = np.cumsum(s)
            r = uniforms[j] * total
            idx = int(np.searchsorted(cum, r, side="right"))
            if idx >= k:
                idx = k - 1
            while idx > 0 and s[idx] == 0.0:
                idx -= 1
            if taken[idx] or s[idx] == 0.0:
                idx = int(np.flatnonzero(~taken)[0])
        else:
            idx = int(np.flatnonzero(~taken)[0])
        out[j] = idx
        taken[idx] = True
        s[idx] = 0.0
    return out


def adam_dense_np(param, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):
    """In-place Adam update with bias correction, then decoupled decay.

    All arrays are flat views over one parameter group; step is the
    post-increment global step count.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    param -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    if weight_decay > 0.0:
        param -= lr * weight_decay * param


def adam_columns_np(param, m, v, cols, grads, step, lr, beta1, beta2, eps, weight_decay):
    """Adam update restricted to the given columns of a (d, N) parameter.

    cols are unique column indices; grads is (k, d) with row i the gradient
    of column cols[i]. Untouched columns keep their moments and skip decay.
    """
    g = grads.T
    m[:, cols] = beta1 * m[:, cols] + (1.0 - beta1) * g
    v[:, cols] = beta2 * v[:, cols] + (1.0 - beta2) * (g * g)
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    upd = param[:, cols] - lr * (m[:, cols] / c1) / (np.sqrt(v[:, cols] / c2) + eps)
    if weight_decay > 0.0:
        upd -= lr * weight_decay * upd
    param[:, cols] = upd


def co_rating_pairs_np(num_items, item_ptr, item_users, user_ptr, user_items, threshold):
    """Item pairs (i < j) whose rater sets overlap with Jaccard > threshold.

    item_ptr/item_users is the item -> raters CSR, user_ptr/user_items the
    inverse. Only pairs with at least one common rater are scored.
    """
    out_i = []
    out_j = []
    for i in range(num_items):
        raters = item_users[item_ptr[i] : item_ptr[i + 1]]
        if raters.size == 0:
            continue
        co = np.concatenate(
            [user_items[user_ptr[u] : user_ptr[u + 1]] for u in raters]
        )
        co = co[co > i]
        if co.size == 0:
            continue
        counts = np.bincount(co, minlength=num_items)
        js = np.flatnonzero(counts)
        shared = counts[js].astype(np.float64)
        deg_i = float(raters.size)
        deg_j = (item_ptr[js + 1] - item_ptr[js]).astype(np.float64)
        jac = shared / (deg_i + deg_j - shared)
        keep = js[jac > threshold]
        out_i.extend([i] * keep.size)
        out_j.extend(keep.tolist())
    return (
        np.asarray(out_i, dtype=np.int64),
        np.asarray(out_j, dtype=np.int64),
    )


NUMPY_IMPLS = {
    "consistency_scores": consistency_scores_np,
    "attention_weights": attention_weights_np,
    "weighted_sum": weighted_sum_np,
    "weighted_pick": weighted_pick_np,
    "adam_dense": adam_dense_np,
    "adam_columns": adam_columns_np,
    "co_rating_pairs": co_rating_pairs_np,
}


# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    @njit(cache=True)
    def consistency_scores_nb(query, cand_h):
        k, d = cand_h.shape
        dist = np.empty(k, dtype=np.float64)
        dmin = np.inf
        for i in range(k):
            acc = 0.0
            for j in range(d):
                diff = cand_h[i, j] - query[j]
                acc += diff * diff
            dist[i] = acc
            if acc < dmin:
                dmin = acc
        for i in range(k):
            dist[i] = np.exp(dmin - dist[i])
        return dist

    @njit(cache=True)
    def attention_weights_nb(att_w, neigh_h, rel_e):
        k, d = neigh_h.shape
        logits = np.empty(k, dtype=np.float64)
        for i in range(k):
            acc = 0.0
            for j in range(d):
                acc += att_w[j] * neigh_h[i, j]
            for j in range(d):
                acc += att_w[d + j] * rel_e[i, j]
            logits[i] = acc
        mx = logits[0]
        for i in range(1, k):
            if logits[i] > mx:
                mx = logits[i]
        total = 0.0
        for i in range(k):
            logits[i] = np.exp(logits[i] - mx)
            total += logits[i]
        for i in range(k):
            logits[i] /= total
        return logits

    @njit(cache=True)
    def weighted_sum_nb(weights, vecs):
        k, d = vecs.shape
        out = np.zeros(d, dtype=np.float64)
        for i in range(k):
            w = weights[i]
            for j in range(d):
                out[j] += w * vecs[i, j]
        return out

    @njit(cache=True)
    def weighted_pick_nb(scores, uniforms):
        k = scores.shape[0]
        q = uniforms.shape[0]
        s = scores.astype(np.float64).copy()
        out = np.empty(q, dtype=np.int64)
        taken = np.zeros(k, dtype=np.bool_)
        for j in range(q):
            total = 0.0
            for i in range(k):
                total += s[i]
            if total > 0.0:
                r = uniforms[j] * total
                cum = 0.0
                idx = k - 1
                for i in range(k):
                    cum += s[i]
                    if cum > r:
                        idx = i
                        break
                while idx > 0 and s[idx] == 0.0:
                    idx -= 1
                if taken[idx] or s[idx] == 0.0:
                    for i in range(k):
                        if not taken[i]:
                            idx = i
                            break
            else:
                idx = 0
                for i in range(k):
                    if not taken[i]:
                        idx = i
                        break
            out[j] = idx
            taken[idx] = True
            s[idx] = 0.0
        return out

    @njit(cache=True)
    def adam_dense_nb(param, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):
        n = param.shape[0]
        c1 = 1.0 - beta1**step
        c2 = 1.0 - beta2**step
        for i in range(n):
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i]
            v[i] = beta2 * v[i] + (1.0 - beta2) * (grad[i] * grad[i])
            param[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)
            if weight_decay > 0.0:
                param[i] -= lr * weight_decay * param[i]

    @njit(cache=True)
    def adam_columns_nb(param, m, v, cols, grads, step, lr, beta1, beta2, eps, weight_decay):
        k = cols.shape[0]
        d = param.shape[0]
        c1 = 1.0 - beta1**step
        c2 = 1.0 - beta2**step
        for i in range(k):
            c = cols[i]
            for r in range(d):
                g = grads[i, r]
                m[r, c] = beta1 * m[r, c] + (1.0 - beta1) * g
                v[r, c] = beta2 * v[r, c] + (1.0 - beta2) * (g * g)
                param[r, c] -= lr * (m[r, c] / c1) / (np.sqrt(v[r, c] / c2) + eps)
                if weight_decay > 0.0:
                    param[r, c] -= lr * weight_decay * param[r, c]

    @njit(cache=True)
    def co_rating_pairs_nb(num_items, item_ptr, item_users, user_ptr, user_items, threshold):
        counts = np.zeros(num_items, dtype=np.int64)
        touched = np.empty(num_items, dtype=np.int64)
        cap = 1024
        out_i = np.empty(cap, dtype=np.int64)
        out_j = np.empty(cap, dtype=np.int64)
        n_out = 0
        for i in range(num_items):
            deg_i = item_ptr[i + 1] - item_ptr[i]
            if deg_i == 0:
                continue
            n_touched = 0
            for p in range(item_ptr[i], item_ptr[i + 1]):
                u = item_users[p]
                for q in range(user_ptr[u], user_ptr[u + 1]):
                    j = user_items[q]
                    if j > i:
                        if counts[j] == 0:
                            touched[n_touched] = j
                            n_touched += 1
                        counts[j] += 1
            for p in range(n_touched):
                j = touched[p]
                shared = counts[j]
                deg_j = item_ptr[j + 1] - item_ptr[j]
                jac = shared / (deg_i + deg_j - shared)
                if jac > threshold:
                    if n_out == cap:
                        cap *= 2
                        grown_i = np.empty(cap, dtype=np.int64)
                        grown_j = np.empty(cap, dtype=np.int64)
                        grown_i[:n_out] = out_i[:n_out]
                        grown_j[:n_out] = out_j[:n_out]
                        out_i = grown_i
                        out_j = grown_j
                    out_i[n_out] = i
                    out_j[n_out] = j
                    n_out += 1
                counts[j] = 0
        return out_i[:n_out].copy(), out_j[:n_out].copy()

    NUMBA_IMPLS = {
        "consistency_scores": consistency_scores_nb,
        "attention_weights": attention_weights_nb,
        "weighted_sum": weighted_sum_nb,
        "weighted_pick": weighted_pick_nb,
        "adam_dense": adam_dense_nb,
        "adam_columns": adam_columns_nb,
        "co_rating_pairs": co_rating_pairs_nb,
    }
else:
    NUMBA_IMPLS = None


_ACTIVE = NUMBA_IMPLS if HAVE_NUMBA else NUMPY_IMPLS

consistency_scores = _ACTIVE["consistency_scores"]
attention_weights = _ACTIVE["attention_weights"]
weighted_sum = _ACTIVE["weighted_sum"]
weighted_pick = _ACTIVE["weighted_pick"]
adam_dense = _ACTIVE["adam_dense"]
adam_columns = _ACTIVE["adam_columns"]
co_rating_pairs = _ACTIVE["co_rating_pairs"]
