"""Hot loops for tree growing and prediction.

The functions here are written in plain array-oriented Python and compiled
with numba when it is importable; without numba the same source runs
interpreted (slow, but bit-identical: the arithmetic and traversal order
are the same either way).

Conventions shared with :mod:`oobcurves.cart`:

* features live in a float64 matrix; categorical columns hold level codes;
* classification trees maximize the sum-of-squared-class-counts form of the
  Gini criterion, regression trees the sum-of-squared-group-sums form of
  the residual-sum-of-squares criterion (both are affine to the usual
  impurity decrease, with fewer operations);
* numeric thresholds are midpoints of adjacent distinct sorted values;
* categorical splits order levels by mean response and scan prefixes
  (binary classification / regression) or try one-level-vs-rest
  (multiclass);
* ties in the split score keep the first candidate in scan order, i.e.
  lowest feature index, then lowest threshold / earliest prefix / lowest
  level;
* a split must strictly reduce impurity: for classification this test is
  done in exact int64 arithmetic, for regression with a relative epsilon.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    NUMBA_ENABLED = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_ENABLED = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


LEAF = -1
# Exact int64 gain test needs m**4 < 2**63; beyond that fall back to floats.
_EXACT_GAIN_LIMIT = 55_000


@njit(cache=True)
def _grow_tree(X, y_cls, y_reg, is_cat, card, classification, n_classes,
               mtry, min_node, u_draws):
    """Grow one unpruned CART tree on the materialized sample (X, y).

    ``u_draws`` is a pre-generated uniform[0,1) stream consumed by the
    per-node feature subsampling (at most (2m+1)*mtry values), so the
    kernel itself is a pure function and the caller owns all randomness.

    Returns (feature, threshold, left, right, leaf_value, routes, depth,
    has_routes).  ``feature[v] == -1`` marks leaves; ``routes`` maps
    (node, level code) -> 0 (left) / 1 (right) for categorical split
    nodes, with unseen-at-node levels pre-routed towards the child that
    received more training rows.
    """
    m, p = X.shape

    max_card = 1
    has_cat = False
    for j in range(p):
        if is_cat[j]:
            has_cat = True
            if card[j] > max_card:
                max_card = card[j]

    cap = 2 * m + 1
    feature = np.full(cap, LEAF, np.int64)
    threshold = np.zeros(cap, np.float64)
    left = np.zeros(cap, np.int64)
    right = np.zeros(cap, np.int64)
    leaf_value = np.zeros(cap, np.float64)
    depth = np.zeros(cap, np.int64)
    routes = np.zeros((cap if has_cat else 1, max_card), np.int8)

    samples = np.arange(m)
    part_buf = np.empty(m, np.int64)

    stack_node = np.empty(m + 2, np.int64)
    stack_lo = np.empty(m + 2, np.int64)
    stack_hi = np.empty(m + 2, np.int64)
    stack_depth = np.empty(m + 2, np.int64)

    k = n_classes if classification else 1
    cnt = np.empty(k, np.int64)
    cnt_l = np.empty(k, np.int64)
    cnt_r = np.empty(k, np.int64)

    vbuf = np.empty(m, np.float64)
    labbuf = np.empty(m, np.int64)
    ybuf = np.empty(m, np.float64)

    feat_pool = np.empty(p, np.int64)
    lvl_cnt = np.empty(max_card, np.int64)
    lvl_stat = np.empty(max_card, np.float64)
    lvl_cls = np.empty(max_card * k, np.int64)
    lvl_key = np.empty(max_card, np.float64)
    best_route = np.empty(max_card, np.int8)

    exact_gain = m < _EXACT_GAIN_LIMIT
    draw_at = 0

    n_nodes = 1
    top = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = m
    stack_depth[0] = 0

    while top >= 0:
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        d = stack_depth[top]
        top -= 1
        mn = hi - lo
        depth[node] = d

        # node statistics and purity check
        pure = True
        node_sum = 0.0
        node_sumsq = 0.0
        if classification:
            for c in range(k):
                cnt[c] = 0
            for i in range(lo, hi):
                cnt[y_cls[samples[i]]] += 1
            seen = 0
            for c in range(k):
                if cnt[c] > 0:
                    seen += 1
            pure = seen <= 1
        else:
            y0 = y_reg[samples[lo]]
            for i in range(lo, hi):
                yv = y_reg[samples[i]]
                node_sum += yv
                node_sumsq += yv * yv
                if yv != y0:
                    pure = False

        make_leaf = mn < 2 or mn < min_node or pure
        best_score = -1.0
        best_feat = -1
        best_thr = 0.0
        best_is_cat = False
        best_ssl = 0
        best_nl = 0
        best_ssr = 0
        best_nr = 0
        best_gain_f = 0.0

        if not make_leaf:
            ss_parent = 0
            if classification:
                for c in range(k):
                    ss_parent += cnt[c] * cnt[c]
            parent_score = (float(ss_parent) / mn if classification
                            else node_sum * node_sum / mn)
            parent_rss = node_sumsq - node_sum * node_sum / mn

            # draw mtry distinct features, evaluate in ascending index order
            for j in range(p):
                feat_pool[j] = j
            n_try = mtry if mtry < p else p
            if n_try < p:
                for i in range(n_try):
                    j = i + int(u_draws[draw_at] * (p - i))
                    draw_at += 1
                    tmp = feat_pool[i]
                    feat_pool[i] = feat_pool[j]
                    feat_pool[j] = tmp
                for i in range(1, n_try):
                    key = feat_pool[i]
                    j = i - 1
                    while j >= 0 and feat_pool[j] > key:
                        feat_pool[j + 1] = feat_pool[j]
                        j -= 1
                    feat_pool[j + 1] = key

            for fi in range(n_try):
                f = feat_pool[fi]
                for i in range(mn):
                    vbuf[i] = X[samples[lo + i], f]

                if not is_cat[f]:
                    order = np.argsort(vbuf[:mn], kind="mergesort")
                    if vbuf[order[0]] == vbuf[order[mn - 1]]:
                        continue
                    if classification:
                        for c in range(k):
                            cnt_l[c] = 0
                            cnt_r[c] = cnt[c]
                        ssl = 0
                        ssr = ss_parent
                        for i in range(mn - 1):
                            c = y_cls[samples[lo + order[i]]]
                            ssl += 2 * cnt_l[c] + 1
                            cnt_l[c] += 1
                            ssr -= 2 * cnt_r[c] - 1
                            cnt_r[c] -= 1
                            vi = vbuf[order[i]]
                            vj = vbuf[order[i + 1]]
                            if vi < vj:
                                nl = i + 1
                                nr = mn - nl
                                score = float(ssl) / nl + float(ssr) / nr
                                if score > best_score:
                                    best_score = score
                                    best_feat = f
                                    best_thr = vi + (vj - vi) / 2
                                    best_is_cat = False
                                    best_ssl = ssl
                                    best_nl = nl
                                    best_ssr = ssr
                                    best_nr = nr
                    else:
                        suml = 0.0
                        for i in range(mn - 1):
                            suml += y_reg[samples[lo + order[i]]]
                            vi = vbuf[order[i]]
                            vj = vbuf[order[i + 1]]
                            if vi < vj:
                                nl = i + 1
                                nr = mn - nl
                                sumr = node_sum - suml
                                score = suml * suml / nl + sumr * sumr / nr
                                if score > best_score:
                                    best_score = score
                                    best_feat = f
                                    best_thr = vi + (vj - vi) / 2
                                    best_is_cat = False
                else:
                    cf = card[f]
                    for c in range(cf):
                        lvl_cnt[c] = 0
                        lvl_stat[c] = 0.0
                    if classification and k > 2:
                        for c in range(cf * k):
                            lvl_cls[c] = 0
                        for i in range(mn):
                            c = int(vbuf[i])
                            lvl_cnt[c] += 1
                            lvl_cls[c * k + y_cls[samples[lo + i]]] += 1
                        # one-level-vs-rest, levels in ascending code order
                        for c in range(cf):
                            nl = lvl_cnt[c]
                            if nl == 0 or nl == mn:
                                continue
                            ssl = 0
                            ssr = 0
                            for cc in range(k):
                                a = lvl_cls[c * k + cc]
                                b = cnt[cc] - a
                                ssl += a * a
                                ssr += b * b
                            nr = mn - nl
                            score = float(ssl) / nl + float(ssr) / nr
                            if score > best_score:
                                best_score = score
                                best_feat = f
                                best_is_cat = True
                                best_ssl = ssl
                                best_nl = nl
                                best_ssr = ssr
                                best_nr = nr
                                dflt = np.int8(0) if nl >= nr else np.int8(1)
                                for cc in range(cf):
                                    if lvl_cnt[cc] > 0:
                                        best_route[cc] = np.int8(1)
                                    else:
                                        best_route[cc] = dflt
                                best_route[c] = np.int8(0)
                    else:
                        # order levels by mean response, scan as if ordinal
                        for i in range(mn):
                            c = int(vbuf[i])
                            lvl_cnt[c] += 1
                            if classification:
                                lvl_stat[c] += y_cls[samples[lo + i]]
                            else:
                                lvl_stat[c] += y_reg[samples[lo + i]]
                        n_present = 0
                        for c in range(cf):
                            if lvl_cnt[c] > 0:
                                lvl_key[c] = lvl_stat[c] / lvl_cnt[c]
                                n_present += 1
                            else:
                                lvl_key[c] = np.inf
                        if n_present < 2:
                            continue
                        lvl_order = np.argsort(lvl_key[:cf], kind="mergesort")
                        nl = 0
                        s1l = 0
                        suml = 0.0
                        for oi in range(n_present - 1):
                            c = lvl_order[oi]
                            nl += lvl_cnt[c]
                            nr = mn - nl
                            if classification:
                                s1l += int(lvl_stat[c])
                                s0l = nl - s1l
                                ssl = s0l * s0l + s1l * s1l
                                s1r = cnt[1] - s1l
                                s0r = nr - s1r
                                ssr = s0r * s0r + s1r * s1r
                                score = float(ssl) / nl + float(ssr) / nr
                            else:
                                suml += lvl_stat[c]
                                sumr = node_sum - suml
                                score = suml * suml / nl + sumr * sumr / nr
                                ssl = 0
                                ssr = 0
                            if score > best_score:
                                best_score = score
                                best_feat = f
                                best_is_cat = True
                                best_ssl = ssl
                                best_nl = nl
                                best_ssr = ssr
                                best_nr = nr
                                dflt = np.int8(0) if nl >= nr else np.int8(1)
                                for cc in range(cf):
                                    if lvl_cnt[cc] > 0:
                                        best_route[cc] = np.int8(1)
                                    else:
                                        best_route[cc] = dflt
                                for oj in range(oi + 1):
                                    best_route[lvl_order[oj]] = np.int8(0)

            if best_feat >= 0:
                if classification:
                    if exact_gain:
                        lhs = mn * (best_ssl * best_nr + best_ssr * best_nl)
                        rhs = ss_parent * best_nl * best_nr
                        if lhs <= rhs:
                            best_feat = -1
                    else:
                        if best_score <= parent_score * (1.0 + 1e-12):
                            best_feat = -1
                else:
                    gain = best_score - parent_score
                    if gain <= 1e-12 * parent_rss:
                        best_feat = -1
            make_leaf = best_feat < 0

        if make_leaf:
            if classification:
                arg = 0
                top_cnt = cnt[0]
                for c in range(1, k):
                    if cnt[c] > top_cnt:
                        top_cnt = cnt[c]
                        arg = c
                leaf_value[node] = float(arg)
            else:
                leaf_value[node] = node_sum / mn
            continue

        # materialize the split: stable partition of samples[lo:hi]
        f = best_feat
        feature[node] = f
        n_left = 0
        if best_is_cat:
            for c in range(card[f]):
                routes[node, c] = best_route[c]
            n_right = 0
            for i in range(lo, hi):
                s = samples[i]
                if routes[node, int(X[s, f])] == 0:
                    part_buf[n_left] = s
                    n_left += 1
                else:
                    n_right += 1
                    part_buf[mn - n_right] = s
        else:
            threshold[node] = best_thr
            n_right = 0
            for i in range(lo, hi):
                s = samples[i]
                if X[s, f] <= best_thr:
                    part_buf[n_left] = s
                    n_left += 1
                else:
                    n_right += 1
                    part_buf[mn - n_right] = s
        for i in range(n_left):
            samples[lo + i] = part_buf[i]
        for i in range(mn - n_left):
            samples[lo + n_left + i] = part_buf[mn - 1 - i]

        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        top += 1
        stack_node[top] = rc
        stack_lo[top] = lo + n_left
        stack_hi[top] = hi
        stack_depth[top] = d + 1
        top += 1
        stack_node[top] = lc
        stack_lo[top] = lo
        stack_hi[top] = lo + n_left
        stack_depth[top] = d + 1

    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes],
            right[:n_nodes], leaf_value[:n_nodes],
            routes[:n_nodes] if has_cat else routes,
            depth[:n_nodes], has_cat)


@njit(cache=True)
def _predict_rows(X, rows, feature, threshold, left, right, leaf_value,
                  routes, is_cat, has_routes):
    out = np.empty(rows.shape[0], np.float64)
    for i in range(rows.shape[0]):
        r = rows[i]
        node = 0
        while feature[node] >= 0:
            f = feature[node]
            v = X[r, f]
            if has_routes and is_cat[f]:
                go_left = routes[node, int(v)] == 0
            else:
                go_left = v <= threshold[node]
            node = left[node] if go_left else right[node]
        out[i] = leaf_value[node]
    return out
