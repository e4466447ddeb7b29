"""Pure numpy implementations of the pipeline kernels.

Used when the compiled extension is unavailable, and as the reference the
compiled path is tested against.
"""

import numpy as np


def fuse_topk(scores, weights, cand, k):
    cand = np.asarray(cand, dtype=np.int64)
    fused = np.zeros(len(cand))
    for h in range(len(weights)):
        fused = fused + weights[h] * scores[cand, h]
    k = max(0, min(int(k), len(cand)))
    order = np.lexsort((cand, -fused))[:k]
    return cand[order], fused[order]


def greedy_rerank(ids, fused, topics, penalty, cap, N):
    ids = np.asarray(ids, dtype=np.int64)
    fused = np.asarray(fused, dtype=np.float64)
    item_topics = np.asarray(topics, dtype=np.int64)[ids]
    counts = {}
    used = np.zeros(len(ids), dtype=bool)
    out_ids, out_scores = [], []
    for _ in range(max(0, min(int(N), len(ids)))):
        best = -1
        best_adj = 0.0
        for i in range(len(ids)):
            if used[i]:
                continue
            c = counts.get(item_topics[i], 0)
            if c >= cap:
                continue
            adj = fused[i] - penalty * c
            if best < 0 or adj > best_adj or (adj == best_adj and ids[i] < ids[best]):
                best, best_adj = i, adj
        if best < 0:
            break
        used[best] = True
        counts[item_topics[best]] = counts.get(item_topics[best], 0) + 1
        out_ids.append(ids[best])
        out_scores.append(best_adj)
    return np.array(out_ids, dtype=np.int64), np.array(out_scores, dtype=np.float64)


def evaluate_batch(pre, rank, topics, click_appeal, heart_appeal, u_click, u_heart,
                   w_pre, w_rank, K1, K2, penalty, cap, N, pos_bias, num_topics):
    R, P = pre.shape[0], pre.shape[1]
    K1 = min(K1, P)
    K2 = min(K2, K1)
    N = min(N, K2)
    out = np.zeros((R, 4))
    all_ids = np.arange(P, dtype=np.int64)
    for r in range(R):
        c1, _ = fuse_topk(pre[r], w_pre, all_ids, K1)
        c2, s2 = fuse_topk(rank[r], w_rank, c1, K2)
        final, _ = greedy_rerank(c2, s2, topics[r], penalty, cap, N)
        m = len(final)
        clicked = u_click[r, final] < pos_bias[:m] * click_appeal[r, final]
        hearted = clicked & (u_heart[r, final] < heart_appeal[r, final])
        out[r] = (clicked.sum(), hearted.sum(), len(np.unique(topics[r, final])), m)
    return out
