"""Brute-force reference implementations shared by the unit and acceptance tests."""

import math

import numpy as np


def ranks_oracle(xs):
    """Average rank: 1 + #smaller + (#equal - 1) / 2, counted pairwise."""
    return np.array([1 + sum(y < x for y in xs) + (sum(y == x for y in xs) - 1) / 2 for x in xs])


def spearman_oracle(xs, ys):
    rx, ry = ranks_oracle(xs), ranks_oracle(ys)
    mx, my = sum(rx) / len(rx), sum(ry) / len(ry)
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))
    return num / den


def auc_oracle(labels, scores):
    pos = [s for l, s in zip(labels, scores) if l == 1]
    neg = [s for l, s in zip(labels, scores) if l == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def ap_oracle(labels, scores):
    """Recount at every distinct threshold: sum of recall increments times precision."""
    n_pos = sum(labels)
    ap, prev_recall = 0.0, 0.0
    for t in sorted(set(scores), reverse=True):
        chosen = [l for l, s in zip(labels, scores) if s >= t]
        recall = sum(chosen) / n_pos
        ap += (recall - prev_recall) * (sum(chosen) / len(chosen))
        prev_recall = recall
    return ap


def precision_oracle(ids, model, binding, wt, k, fold):
    ordered = sorted(zip(ids, model, binding), key=lambda r: (-r[1], r[0]))[:k]
    return sum(10 ** (b - wt) >= fold for _, _, b in ordered) / len(ordered)


def pareto_oracle(points):
    """Indices not dominated by any other point (all columns larger-is-better)."""
    keep = []
    for i, a in enumerate(points):
        if not any(all(b >= a) and any(b > a) for j, b in enumerate(points) if j != i):
            keep.append(i)
    return keep


def stage1_oracle(values_p, values_q, percent):
    """Survive when fewer than ceil(percent * n / 100) candidates are strictly better on each channel.

    ``values_p`` is larger-is-better, ``values_q`` smaller-is-better.
    """
    n = len(values_p)
    k = -(-percent * n // 100)
    out = []
    for i in range(n):
        better_p = sum(v > values_p[i] for v in values_p)
        better_q = sum(v < values_q[i] for v in values_q)
        if better_p < k and better_q < k:
            out.append(i)
    return out
