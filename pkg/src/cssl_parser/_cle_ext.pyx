# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Chu-Liu-Edmonds. Same contraction order and tie rules as ``_cle.py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


cdef Py_ssize_t _find_cycle(Py_ssize_t[::1] parents, char[::1] alive, Py_ssize_t n1,
                            Py_ssize_t[::1] cycle, Py_ssize_t[::1] pos,
                            char[::1] visited) noexcept:
    """Writes the first cycle into ``cycle`` and returns its length (0 if none)."""
    cdef Py_ssize_t start, v, u, length, k, i
    for i in range(n1):
        visited[i] = 0
        pos[i] = -1
    for start in range(1, n1):
        if not alive[start] or visited[start]:
            continue
        length = 0
        v = start
        while v != 0 and not visited[v]:
            if pos[v] >= 0:
                k = 0
                for i in range(pos[v], length):
                    cycle[k] = cycle[i]
                    k += 1
                return k
            pos[v] = length
            cycle[length] = v
            length += 1
            v = parents[v]
        for i in range(length):
            u = cycle[i]
            visited[u] = 1
            pos[u] = -1
    return 0


def max_arborescence(scores):
    """Maximum spanning arborescence rooted at node 0; ``heads[0] == -1``."""
    cdef double[:, ::1] score = np.array(scores, dtype=np.float64, order="C")
    cdef Py_ssize_t n1 = score.shape[0]
    heads_arr = np.full(n1, -1, dtype=np.intp)
    if n1 <= 1:
        return heads_arr.astype(np.int64)
    cdef Py_ssize_t[::1] heads = heads_arr
    cdef Py_ssize_t[:, ::1] old_in = np.repeat(np.arange(n1, dtype=np.intp)[:, None], n1, axis=1)
    cdef Py_ssize_t[:, ::1] old_out = np.repeat(np.arange(n1, dtype=np.intp)[None, :], n1, axis=0)
    cdef char[::1] alive = np.ones(n1, dtype=np.byte)
    cdef Py_ssize_t[::1] parents = np.full(n1, -1, dtype=np.intp)
    cdef Py_ssize_t[::1] cycle = np.zeros(n1, dtype=np.intp)
    cdef Py_ssize_t[::1] pos = np.zeros(n1, dtype=np.intp)
    cdef char[::1] visited = np.zeros(n1, dtype=np.byte)
    cdef char[::1] in_cycle = np.zeros(n1, dtype=np.byte)
    # group[v] = current representative of original node v
    cdef Py_ssize_t[::1] group = np.arange(n1, dtype=np.intp)
    cdef Py_ssize_t[::1] final = np.full(n1, -1, dtype=np.intp)

    cdef Py_ssize_t d, h, node, v, i, clen, rep, out_v, in_v, p
    cdef double best, cycle_weight, out_w, in_w, w

    # per contraction: cycle nodes, their parents, the original arc of each cycle edge,
    # and which original nodes each cycle member stood for
    records = []

    while True:
        for d in range(1, n1):
            parents[d] = -1
            if not alive[d]:
                continue
            best = score[0, d]
            parents[d] = 0
            for h in range(1, n1):
                if h != d and alive[h] and score[h, d] > best:
                    best = score[h, d]
                    parents[d] = h
        clen = _find_cycle(parents, alive, n1, cycle, pos, visited)
        if clen == 0:
            for d in range(1, n1):
                if alive[d]:
                    p = parents[d]
                    final[old_out[p, d]] = old_in[p, d]
            break

        cycle_weight = 0.0
        for i in range(clen):
            v = cycle[i]
            in_cycle[v] = 1
            cycle_weight += score[parents[v], v]
        rep = cycle[0]
        for node in range(n1):
            if not alive[node] or in_cycle[node]:
                continue
            out_w = -INFINITY
            out_v = -1
            in_w = -INFINITY
            in_v = -1
            for i in range(clen):
                v = cycle[i]
                if score[v, node] > out_w:
                    out_w = score[v, node]
                    out_v = v
                w = cycle_weight + score[node, v] - score[parents[v], v]
                if w > in_w:
                    in_w = w
                    in_v = v
            if out_v >= 0:
                score[rep, node] = out_w
                old_in[rep, node] = old_in[out_v, node]
                old_out[rep, node] = old_out[out_v, node]
            else:
                score[rep, node] = -INFINITY
            if in_v >= 0:
                score[node, rep] = in_w
                old_in[node, rep] = old_in[node, in_v]
                old_out[node, rep] = old_out[node, in_v]
            else:
                score[node, rep] = -INFINITY

        cyc = np.empty(clen, dtype=np.intp)
        par = np.empty(clen, dtype=np.intp)
        arc_h = np.empty(clen, dtype=np.intp)
        arc_d = np.empty(clen, dtype=np.intp)
        for i in range(clen):
            v = cycle[i]
            cyc[i] = v
            par[i] = parents[v]
            arc_h[i] = old_in[parents[v], v]
            arc_d[i] = old_out[parents[v], v]
        owner = np.asarray(group).copy()
        records.append((cyc, par, arc_h, arc_d, owner))
        for i in range(clen):
            v = cycle[i]
            in_cycle[v] = 0
            if i > 0:
                alive[v] = 0
        for v in range(n1):
            for i in range(1, clen):
                if group[v] == cycle[i]:
                    group[v] = rep

    cdef Py_ssize_t[::1] cyc_v, par_v, arc_h_v, arc_d_v, owner_v
    cdef Py_ssize_t key, prev, k, j
    for rec in reversed(records):
        cyc_v, par_v, arc_h_v, arc_d_v, owner_v = rec
        clen = cyc_v.shape[0]
        key = 0
        # the member whose region already received an incoming arc
        for i in range(clen):
            for j in range(n1):
                if owner_v[j] == cyc_v[i] and final[j] >= 0:
                    key = i
                    break
            else:
                continue
            break
        # walk the cycle backwards from the key member, restoring every other edge
        k = key
        while True:
            prev = -1
            for i in range(clen):
                if cyc_v[i] == par_v[k]:
                    prev = i
                    break
            if prev == key:
                break
            final[arc_d_v[prev]] = arc_h_v[prev]
            k = prev

    for d in range(1, n1):
        heads[d] = final[d]
    heads[0] = -1
    return heads_arr.astype(np.int64)
