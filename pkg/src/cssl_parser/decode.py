"""Turning arc scores into trees.

``mst_decode`` runs Chu-Liu-Edmonds from the compiled ``_cle_ext`` kernel when
it has been built and from the pure-Python ``_cle`` otherwise. Set
``CSSL_PARSER_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _cle

if os.environ.get("CSSL_PARSER_PURE_PYTHON"):
    _ext = None
else:
    try:
        from . import _cle_ext as _ext
    except ImportError:  # extension not compiled
        _ext = None

BACKEND = "cython" if _ext is not None else "python"

__all__ = [
    "BACKEND",
    "assign_labels",
    "greedy_decode",
    "is_tree",
    "max_arborescence",
    "mst_decode",
    "tree_score",
]


def max_arborescence(scores, backend: str | None = None) -> np.ndarray:
    """Unconstrained maximum arborescence (ROOT may get several children)."""
    backend = backend or BACKEND
    if backend == "cython":
        if _ext is None:
            raise RuntimeError("compiled extension _cle_ext is not available")
        return _ext.max_arborescence(scores)
    return _cle.max_arborescence(scores)


def _as_matrix(scores) -> np.ndarray:
    if hasattr(scores, "detach"):
        scores = scores.detach().cpu().numpy()
    s = np.array(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"arc scores must be square, got shape {s.shape}")
    return s


def tree_score(scores, heads) -> float:
    """Sum of ``scores[heads[d], d]`` over d = 1..n, added left to right."""
    s = _as_matrix(scores)
    total = 0.0
    for d in range(1, s.shape[0]):
        total += float(s[heads[d - 1], d])
    return total


def is_tree(heads) -> bool:
    """True when 1-based ``heads`` form an arborescence with exactly one root child."""
    n = len(heads)
    if sum(1 for h in heads if h == 0) != 1:
        return False
    for start in range(1, n + 1):
        v, steps = start, 0
        while v != 0:
            h = heads[v - 1]
            if not 0 <= h <= n or h == v:
                return False
            v = h
            steps += 1
            if steps > n:
                return False
    return True


def greedy_decode(scores) -> tuple[list[int], bool]:
    """Column-wise argmax heads and whether they happen to form a valid tree.

    Ties go to the smaller head index. The diagonal is ignored.
    """
    s = _as_matrix(scores)
    n1 = s.shape[0]
    s[np.arange(n1), np.arange(n1)] = -np.inf
    heads = [int(np.argmax(s[:, d])) for d in range(1, n1)]
    return heads, is_tree(heads)


def mst_decode(scores, backend: str | None = None) -> list[int]:
    """Highest-scoring tree in which ROOT has exactly one child.

    The unconstrained arborescence is computed first. If ROOT ends up with
    several children, every word is tried in turn as the only ROOT child and
    the best of those trees is kept (ties to the lower word index).
    """
    s = _as_matrix(scores)
    n1 = s.shape[0]
    if n1 < 2:
        raise ValueError("need at least one word")
    s[np.arange(n1), np.arange(n1)] = -np.inf
    s[:, 0] = -np.inf
    heads = max_arborescence(s, backend)[1:].tolist()
    if sum(1 for h in heads if h == 0) == 1:
        return heads
    best, best_score = None, -np.inf
    for c in range(1, n1):
        forced = s.copy()
        keep = forced[0, c]
        forced[0, :] = -np.inf
        forced[0, c] = keep
        cand = max_arborescence(forced, backend)[1:].tolist()
        sc = tree_score(s, cand)
        if sc > best_score:
            best, best_score = cand, sc
    return best


def assign_labels(model, reps, heads) -> list[int]:
    """Argmax label index per word under the given heads; ties to the lower index.

    ``reps`` are the token representations of a single sentence, ROOT
    included, as returned by ``ParserModel.encode``.
    """
    import torch

    with torch.no_grad():
        scores = model.score_labels(reps, heads)
    return [int(i) for i in torch.argmax(scores, dim=-1).tolist()]
