"""Pure-Python Chu-Liu-Edmonds. Mirrors ``_cle_ext.pyx`` step for step."""

from __future__ import annotations

import math

import numpy as np


def _find_cycle(parents, alive, n1):
    visited = [False] * n1
    for start in range(1, n1):
        if not alive[start] or visited[start]:
            continue
        on_path = {}
        path = []
        v = start
        while v != 0 and not visited[v]:
            if v in on_path:
                return path[on_path[v]:]
            on_path[v] = len(path)
            path.append(v)
            v = parents[v]
        for u in path:
            visited[u] = True
    return None


def max_arborescence(scores):
    """Maximum spanning arborescence rooted at node 0.

    ``scores[h, d]`` is the weight of the arc h -> d. Returns an int array of
    length n+1 with ``heads[0] == -1``. Ties go to the lower head index.
    """
    score = np.array(scores, dtype=np.float64)
    n1 = score.shape[0]
    heads = np.full(n1, -1, dtype=np.int64)
    if n1 <= 1:
        return heads
    idx = np.arange(n1)
    old_in = np.repeat(idx[:, None], n1, axis=1)
    old_out = np.repeat(idx[None, :], n1, axis=0)
    alive = [True] * n1
    reps = [{i} for i in range(n1)]
    final = {}
    stack = []

    while True:
        parents = [-1] * n1
        for d in range(1, n1):
            if not alive[d]:
                continue
            best, arg = score[0, d], 0
            for h in range(1, n1):
                if h != d and alive[h] and score[h, d] > best:
                    best, arg = score[h, d], h
            parents[d] = arg
        cycle = _find_cycle(parents, alive, n1)
        if cycle is None:
            for d in range(1, n1):
                if alive[d]:
                    p = parents[d]
                    final[int(old_out[p, d])] = int(old_in[p, d])
            break

        in_cycle = set(cycle)
        cycle_weight = 0.0
        for v in cycle:
            cycle_weight += score[parents[v], v]
        rep = cycle[0]
        for node in range(n1):
            if not alive[node] or node in in_cycle:
                continue
            out_w, out_v = -math.inf, -1
            in_w, in_v = -math.inf, -1
            for v in cycle:
                if score[v, node] > out_w:
                    out_w, out_v = score[v, node], v
                w = cycle_weight + score[node, v] - score[parents[v], v]
                if w > in_w:
                    in_w, in_v = w, v
            if out_v >= 0:
                score[rep, node] = out_w
                old_in[rep, node] = old_in[out_v, node]
                old_out[rep, node] = old_out[out_v, node]
            else:
                score[rep, node] = -math.inf
            if in_v >= 0:
                score[node, rep] = in_w
                old_in[node, rep] = old_in[node, in_v]
                old_out[node, rep] = old_out[node, in_v]
            else:
                score[node, rep] = -math.inf
        members = []
        edges = {}
        for i, v in enumerate(cycle):
            members.append(set(reps[v]))
            edges[v] = (parents[v], int(old_in[parents[v], v]), int(old_out[parents[v], v]))
            if i > 0:
                alive[v] = False
                reps[rep] |= reps[v]
        stack.append((cycle, members, edges))

    while stack:
        cycle, members, edges = stack.pop()
        key = cycle[0]
        for v, mem in zip(cycle, members):
            if any(m in final for m in mem):
                key = v
                break
        prev = edges[key][0]
        while prev != key:
            parent_prev, head, dep = edges[prev]
            final[dep] = head
            prev = parent_prev

    for d, h in final.items():
        heads[d] = h
    heads[0] = -1
    return heads
