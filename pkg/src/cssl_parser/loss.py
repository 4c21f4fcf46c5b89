"""Parsing cross-entropy, the permutation-contrastive loss, and their sum."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

__all__ = ["contrastive_loss", "cross_entropy_loss", "cssl_loss", "joint_loss"]


def cross_entropy_loss(arc_scores: torch.Tensor, label_scores: torch.Tensor,
                       gold_heads, gold_labels, lengths=None) -> torch.Tensor:
    """Mean over words of head NLL plus label NLL.

    ``arc_scores`` is (n+1, n+1) or (B, n+1, n+1) with ``[h, d]`` the score of
    head h for word d. ``label_scores`` is (n, L) or (B, n, L), computed under
    the gold heads. ``lengths`` gives the word count per batch row; words
    beyond it are padding.
    """
    if arc_scores.dim() == 2:
        arc_scores, label_scores = arc_scores[None], label_scores[None]
    gold_heads = torch.as_tensor(gold_heads, dtype=torch.long, device=arc_scores.device)
    gold_labels = torch.as_tensor(gold_labels, dtype=torch.long, device=arc_scores.device)
    if gold_heads.dim() == 1:
        gold_heads, gold_labels = gold_heads[None], gold_labels[None]
    b, n1, _ = arc_scores.shape
    n = n1 - 1
    if lengths is None:
        lengths = [n] * b
    words = torch.arange(n, device=arc_scores.device)[None, :] < torch.as_tensor(lengths)[:, None]
    gh = gold_heads[:, :n]
    if (gh[words] < 0).any() or (gh[words] > n).any():
        raise IndexError("gold head out of range")
    gh = gh.masked_fill(~words, 0)

    # column d holds the head distribution of word d
    arc_logp = torch.log_softmax(arc_scores[:, :, 1:], dim=1)
    arc_nll = -torch.gather(arc_logp, 1, gh[:, None, :])[:, 0, :]
    lab_logp = torch.log_softmax(label_scores, dim=-1)
    gl = gold_labels[:, :n].masked_fill(~words, 0)
    lab_nll = -torch.gather(lab_logp, -1, gl[..., None])[..., 0]
    total = (arc_nll + lab_nll).masked_fill(~words, 0.0).sum()
    return total / words.sum()


def cssl_loss(anchors: torch.Tensor, positives: torch.Tensor, tau: float = 0.1) -> torch.Tensor:
    """Contrastive loss pairing each anchor with its own permuted positive.

    For anchor i the softmax runs over its similarity with every positive in
    the batch, so the positives of the other rows act as negatives and the
    anchor is never compared with itself.
    """
    if anchors.shape != positives.shape or anchors.dim() != 2:
        raise ValueError("anchors and positives must both be (N, d)")
    if anchors.shape[0] < 2:
        raise ValueError("contrastive loss needs a batch of at least 2 (in-batch negatives)")
    if not tau > 0:
        raise ValueError("temperature must be positive")
    logits = anchors @ positives.T / tau
    target = torch.arange(anchors.shape[0], device=anchors.device)
    return F.cross_entropy(logits, target)


def contrastive_loss(anchors: torch.Tensor, positives: torch.Tensor, negatives: torch.Tensor,
                     tau: float = 0.1) -> torch.Tensor:
    """Variant with one explicitly sampled negative per anchor.

    The denominator for anchor i covers its positive, the in-batch
    positives and the sampled negatives of every row.
    """
    if negatives.shape != anchors.shape:
        raise ValueError("negatives must match anchors in shape")
    if anchors.shape[0] < 2:
        raise ValueError("contrastive loss needs a batch of at least 2")
    if not tau > 0:
        raise ValueError("temperature must be positive")
    candidates = torch.cat([positives, negatives], dim=0)
    logits = anchors @ candidates.T / tau
    target = torch.arange(anchors.shape[0], device=anchors.device)
    return F.cross_entropy(logits, target)


def joint_loss(ce, cssl, weight: float = 1.0):
    """``ce + weight * cssl``; refuses non-finite components."""
    for name, v in (("cross-entropy", ce), ("contrastive", cssl)):
        val = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        if not math.isfinite(val):
            raise FloatingPointError(f"non-finite {name} loss: {val}")
    return ce + weight * cssl
