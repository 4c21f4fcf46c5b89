"""Word-order permutations and rotation augmentation over dependency trees.

Every transformation here moves words around without touching any
(head, dependent, relation) triple, so the permuted sentence carries the same
tree as the original.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .conllu import InvalidTreeError, Sentence, Treebank, validate_tree

logger = logging.getLogger(__name__)

MAX_COPIES = 5

__all__ = [
    "AugmentConfig",
    "PermutationMap",
    "apply_permutation",
    "build_augmented_corpus",
    "dependency_triples",
    "permute_sentence",
    "reorder_dependents",
    "rotate_sentence",
    "sample_negative",
    "sentence_rng",
]


@dataclass(frozen=True)
class PermutationMap:
    """Bijection old position -> new position over 1..n; ROOT (0) stays put.

    ``mapping[i - 1]`` is the new position of the word that was at ``i``.
    """

    mapping: tuple[int, ...]

    def __post_init__(self):
        n = len(self.mapping)
        if sorted(self.mapping) != list(range(1, n + 1)):
            raise ValueError(f"not a permutation of 1..{n}: {self.mapping}")

    def __len__(self) -> int:
        return len(self.mapping)

    def __call__(self, old: int) -> int:
        return 0 if old == 0 else self.mapping[old - 1]

    @property
    def order(self) -> list[int]:
        """Old positions listed in their new linear order."""
        inv = [0] * len(self.mapping)
        for old, new in enumerate(self.mapping, start=1):
            inv[new - 1] = old
        return inv

    @classmethod
    def from_order(cls, order: Sequence[int]) -> "PermutationMap":
        mapping = [0] * len(order)
        for new, old in enumerate(order, start=1):
            mapping[old - 1] = new
        return cls(tuple(mapping))

    @classmethod
    def identity(cls, n: int) -> "PermutationMap":
        return cls(tuple(range(1, n + 1)))


@dataclass
class AugmentConfig:
    copies_per_sentence: int = 1
    rotation_probability: float = 1.0
    # None means every relation except the excluded ones
    eligible_relations: frozenset[str] | None = None
    excluded_relations: frozenset[str] = field(default_factory=lambda: frozenset({"punct"}))
    seed: int = 0
    max_copies: int = MAX_COPIES

    def __post_init__(self):
        if not 0 <= self.copies_per_sentence <= self.max_copies:
            raise ValueError(f"copies_per_sentence must be in 0..{self.max_copies}")
        if not 0.0 <= self.rotation_probability <= 1.0:
            raise ValueError("rotation_probability must be in [0, 1]")

    def eligible(self, deprel: str) -> bool:
        base = deprel.split(":")[0]
        if self.eligible_relations is not None:
            return deprel in self.eligible_relations or base in self.eligible_relations
        return deprel not in self.excluded_relations and base not in self.excluded_relations


def sentence_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for one sentence, derived from (seed, index)."""
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, index, stream])


def dependency_triples(sentence: Sentence) -> list[tuple[str, str, str]]:
    """Sorted (head_form, dependent_form, deprel) triples; ROOT's form is ``<root>``."""
    forms = ["<root>"] + sentence.forms
    return sorted((forms[t.head], t.form, t.deprel) for t in sentence.tokens)


def _require_valid(sentence: Sentence) -> None:
    report = validate_tree(sentence)
    if report:
        raise InvalidTreeError(report, sentence.sent_id)


def apply_permutation(sentence: Sentence, perm: PermutationMap) -> Sentence:
    """Reorder tokens so the word at old position i lands at ``perm(i)``."""
    if len(perm) != len(sentence):
        raise ValueError("permutation length does not match sentence length")
    tokens = []
    for new, old in enumerate(perm.order, start=1):
        tok = sentence.tokens[old - 1]
        tokens.append(tok.replace(id=new, head=perm(tok.head)))
    return Sentence(tokens, sentence.sent_id, list(sentence.comments))


def permute_sentence(sentence: Sentence, rng: np.random.Generator) -> tuple[Sentence, PermutationMap]:
    """Uniformly random reordering of the words of a valid sentence."""
    _require_valid(sentence)
    n = len(sentence)
    order = [int(i) + 1 for i in rng.permutation(n)]
    perm = PermutationMap.from_order(order)
    return apply_permutation(sentence, perm), perm


def _subtrees(sentence: Sentence) -> tuple[list[list[int]], list[set[int]]]:
    n = len(sentence)
    children: list[list[int]] = [[] for _ in range(n + 1)]
    for t in sentence.tokens:
        children[t.head].append(t.id)
    members: list[set[int]] = [set() for _ in range(n + 1)]

    def collect(v):
        acc = {v} if v else set()
        for c in children[v]:
            acc |= collect(c)
        members[v] = acc
        return acc

    collect(0)
    return children, members


def _reorder_in_place(order: list[int], head: int, children: list[int], members: list[set[int]],
                      movable: set[int], block_order: Sequence[int] | None,
                      rng: np.random.Generator | None) -> None:
    domain = members[head]
    slots = [i for i, w in enumerate(order) if w in domain]
    owner = {head: head}
    for c in children:
        for w in members[c]:
            owner[w] = c
    blocks: dict[int, list[int]] = {}
    for i in slots:
        blocks.setdefault(owner[order[i]], []).append(order[i])
    keys = list(blocks)  # by first appearance
    moving = [k for k in keys if k in movable]
    if block_order is None:
        shuffled = [moving[i] for i in rng.permutation(len(moving))]
    else:
        if sorted(block_order) != sorted(moving):
            raise ValueError(f"block order {list(block_order)} must permute {moving}")
        shuffled = list(block_order)
    it = iter(shuffled)
    new_keys = [next(it) if k in movable else k for k in keys]
    refill = [w for k in new_keys for w in blocks[k]]
    for i, w in zip(slots, refill):
        order[i] = w


def reorder_dependents(sentence: Sentence, head: int, block_order: Sequence[int]) -> Sentence:
    """Rearrange ``head`` and its dependent subtrees into ``block_order``.

    ``block_order`` lists the head's own id and the ids of the dependents
    whose subtrees move; each subtree keeps its internal word order.
    """
    _require_valid(sentence)
    children, members = _subtrees(sentence)
    order = list(range(1, len(sentence) + 1))
    _reorder_in_place(order, head, children[head], members, set(block_order), block_order, None)
    return apply_permutation(sentence, PermutationMap.from_order(order))


def rotate_sentence(sentence: Sentence, cfg: AugmentConfig, rng: np.random.Generator) -> Sentence:
    """Shuffle the sibling subtrees of heads with eligible dependents.

    Each selected head is treated as a one-word block shuffled together with
    its eligible dependent subtrees. Heads are visited top-down and each one
    is selected with probability ``cfg.rotation_probability``.
    """
    _require_valid(sentence)
    if cfg.rotation_probability == 0.0:
        return Sentence(list(sentence.tokens), sentence.sent_id, list(sentence.comments))
    children, members = _subtrees(sentence)
    deprel = {t.id: t.deprel for t in sentence.tokens}
    order = list(range(1, len(sentence) + 1))
    stack = list(children[0])
    while stack:
        h = stack.pop(0)
        stack.extend(children[h])
        eligible = [c for c in children[h] if cfg.eligible(deprel[c])]
        if not eligible:
            continue
        if rng.random() >= cfg.rotation_probability:
            continue
        _reorder_in_place(order, h, children[h], members, {h, *eligible}, None, rng)
    return apply_permutation(sentence, PermutationMap.from_order(order))


def _copy_comments(comments: list[str], new_id: str, origin: str, text: str) -> list[str]:
    out = []
    for c in comments:
        key = c[1:].split("=", 1)[0].strip()
        if key == "sent_id":
            out.append(f"# sent_id = {new_id}")
        elif key == "text":
            out.append(f"# text = {text}")
        else:
            out.append(c)
    if not any(c[1:].split("=", 1)[0].strip() == "sent_id" for c in comments):
        out.insert(0, f"# sent_id = {new_id}")
    out.append(f"# augmented_from = {origin}")
    return out


def build_augmented_corpus(treebank: Treebank, cfg: AugmentConfig) -> Treebank:
    """Originals followed, per sentence, by up to ``copies_per_sentence`` rotated copies.

    Copies identical in order to the original or to an earlier copy are not
    emitted. Invalid sentences are kept as-is and get no copies.
    """
    out = []
    for i, sent in enumerate(treebank.sentences):
        out.append(sent)
        if cfg.copies_per_sentence == 0:
            continue
        if validate_tree(sent):
            logger.warning("skipping augmentation of invalid sentence %s", sent.sent_id or i + 1)
            continue
        rng = sentence_rng(cfg.seed, i)
        origin = sent.sent_id if sent.sent_id is not None else str(i + 1)
        seen = {tuple(sent.forms)}
        k = 0
        for _ in range(cfg.copies_per_sentence):
            rotated = rotate_sentence(sent, cfg, rng)
            key = tuple(rotated.forms)
            if key in seen:
                continue
            seen.add(key)
            k += 1
            new_id = f"{origin}.aug{k}"
            rotated.comments = _copy_comments(sent.comments, new_id, origin, " ".join(rotated.forms))
            rotated.sent_id = new_id
            out.append(rotated)
    return Treebank(out, treebank.source_path)


def sample_negative(anchor: Sentence, treebank: Treebank | Sequence[Sentence],
                    rng: np.random.Generator) -> Sentence:
    """A random sentence whose word multiset differs from the anchor's."""
    sentences = treebank.sentences if isinstance(treebank, Treebank) else list(treebank)
    key = sorted(anchor.forms)
    eligible = [s for s in sentences if sorted(s.forms) != key]
    if not eligible:
        raise ValueError("no sentence in the treebank differs from the anchor's word multiset")
    return eligible[int(rng.integers(len(eligible)))]
