from collections import Counter

import numpy as np
import pytest

from cssl_parser.augment import (AugmentConfig, PermutationMap, apply_permutation, build_augmented_corpus,
                                 dependency_triples, permute_sentence, reorder_dependents, rotate_sentence,
                                 sample_negative, sentence_rng)
from cssl_parser.conllu import InvalidTreeError, Treebank, serialize_conllu, validate_tree

from conftest import make_sentence, random_sentence


def brute_triples(s):
    """Triples read straight off the token list, independent of the library helper."""
    by_id = {t.id: t.form for t in s.tokens}
    return Counter((by_id.get(t.head, "<root>"), t.form, t.deprel) for t in s.tokens)


def test_permutation_map_example():
    s = make_sentence([2, 0, 2], forms=["A", "B", "C"])
    out = apply_permutation(s, PermutationMap((2, 3, 1)))
    assert out.forms == ["C", "A", "B"]
    assert out.heads == [3, 3, 0]
    assert [t.id for t in out.tokens] == [1, 2, 3]


def test_single_token_identity():
    s = make_sentence([0], forms=["solo"])
    out, perm = permute_sentence(s, np.random.default_rng(0))
    assert perm == PermutationMap.identity(1)
    assert out.tokens == s.tokens


def test_permutation_map_rejects_non_bijection():
    with pytest.raises(ValueError):
        PermutationMap((1, 1, 2))


def test_invalid_sentence_refused_with_violations():
    with pytest.raises(InvalidTreeError, match="cycle"):
        permute_sentence(make_sentence([2, 1]), np.random.default_rng(0))
    with pytest.raises(InvalidTreeError, match="multiple roots"):
        rotate_sentence(make_sentence([0, 0]), AugmentConfig(), np.random.default_rng(0))


def test_permute_preserves_triples_1000():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        s = random_sentence(rng, int(rng.integers(1, 13)))
        out, perm = permute_sentence(s, rng)
        assert brute_triples(out) == brute_triples(s)
        assert validate_tree(out).ok
        # tree isomorphic under the map
        for old in s.tokens:
            assert out.tokens[perm(old.id) - 1].head == perm(old.head)


def test_permutations_roughly_uniform():
    s = make_sentence([0, 1, 1], forms=["a", "b", "c"])
    rng = np.random.default_rng(5)
    counts = Counter(tuple(permute_sentence(s, rng)[0].forms) for _ in range(6000))
    assert len(counts) == 6
    assert all(abs(c - 1000) < 3 * np.sqrt(6000 * (1 / 6) * (5 / 6)) for c in counts.values())


def test_rotation_swaps_subtree_blocks():
    # [det S1n] V [det S2n]: subtrees of 2 and 5 around the root verb 3
    s = make_sentence([2, 3, 0, 5, 3], forms=["the", "dog", "bit", "a", "man"],
                      deprels=["det", "nsubj", "root", "det", "obj"])
    out = reorder_dependents(s, 3, [5, 3, 2])
    assert out.forms == ["a", "man", "bit", "the", "dog"]
    assert out.heads == [2, 3, 0, 5, 3]
    assert brute_triples(out) == brute_triples(s)


def test_rotation_probability_zero_is_identity():
    rng = np.random.default_rng(2)
    cfg = AugmentConfig(rotation_probability=0.0)
    for _ in range(50):
        s = random_sentence(rng, int(rng.integers(1, 10)))
        assert rotate_sentence(s, cfg, rng).tokens == s.tokens


def test_rotation_preserves_triples_500():
    rng = np.random.default_rng(4)
    cfg = AugmentConfig()
    changed = 0
    for _ in range(500):
        s = random_sentence(rng, int(rng.integers(1, 13)))
        out = rotate_sentence(s, cfg, rng)
        assert brute_triples(out) == brute_triples(s)
        assert validate_tree(out).ok
        changed += out.forms != s.forms
    assert changed > 100


def test_rotation_keeps_subtrees_contiguous_on_projective_input():
    # chain-like projective tree: every subtree a contiguous span
    s = make_sentence([2, 0, 4, 2, 4, 2], forms=list("abcdef"))
    rng = np.random.default_rng(0)
    for _ in range(100):
        out = rotate_sentence(s, AugmentConfig(), rng)
        heads = [0] + out.heads
        for v in range(1, len(out) + 1):
            span = [u for u in range(1, len(out) + 1) if _dominates(heads, v, u)]
            assert span == list(range(min(span), max(span) + 1))


def _dominates(heads, v, u):
    while u != 0:
        if u == v:
            return True
        u = heads[u]
    return False


def test_punct_not_rotated_by_default():
    s = make_sentence([2, 0, 2, 2], forms=["x", "V", "y", "."], deprels=["nsubj", "root", "obj", "punct"])
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert rotate_sentence(s, AugmentConfig(), rng).forms[-1] == "."


def test_eligible_relations_restrict_rotation():
    s = make_sentence([2, 0, 2], forms=["x", "V", "y"], deprels=["nsubj", "root", "obj"])
    cfg = AugmentConfig(eligible_relations=frozenset({"iobj"}))
    rng = np.random.default_rng(0)
    assert all(rotate_sentence(s, cfg, rng).forms == ["x", "V", "y"] for _ in range(20))


def test_augmented_corpus_bounds_and_provenance(small_treebank):
    tb = Treebank(small_treebank.sentences[:10])
    out = build_augmented_corpus(tb, AugmentConfig(copies_per_sentence=2, seed=9))
    assert 10 <= len(out) <= 30
    copies = [s for s in out if any(c.startswith("# augmented_from") for c in s.comments)]
    assert len(copies) == len(out) - 10
    for c in copies:
        origin = next(x for x in c.comments if x.startswith("# augmented_from")).split("=")[1].strip()
        src = next(s for s in tb if s.sent_id == origin)
        assert dependency_triples(c) == dependency_triples(src)


def test_zero_copies_identity(small_treebank):
    out = build_augmented_corpus(small_treebank, AugmentConfig(copies_per_sentence=0))
    assert serialize_conllu(out) == serialize_conllu(small_treebank)


def test_copies_cap():
    with pytest.raises(ValueError):
        AugmentConfig(copies_per_sentence=6)


def test_augmentation_deterministic(small_treebank):
    cfg = AugmentConfig(copies_per_sentence=3, seed=123)
    a = serialize_conllu(build_augmented_corpus(small_treebank, cfg))
    b = serialize_conllu(build_augmented_corpus(small_treebank, cfg))
    c = serialize_conllu(build_augmented_corpus(small_treebank, AugmentConfig(copies_per_sentence=3, seed=124)))
    assert a == b
    assert a != c


def test_sentence_rng_independent_streams():
    assert sentence_rng(1, 2).integers(1 << 30) == sentence_rng(1, 2).integers(1 << 30)
    assert sentence_rng(1, 2).integers(1 << 30) != sentence_rng(1, 3).integers(1 << 30)


class TestNegatives:
    def test_two_sentences(self):
        a = make_sentence([0, 1], forms=["a", "b"])
        b = make_sentence([0, 1], forms=["c", "d"])
        assert sample_negative(a, Treebank([a, b]), np.random.default_rng(0)) is b

    def test_permutation_rejected(self):
        a = make_sentence([0, 1], forms=["a", "b"])
        perm = make_sentence([2, 0], forms=["b", "a"])
        other = make_sentence([0], forms=["z"])
        rng = np.random.default_rng(0)
        assert all(sample_negative(a, [a, perm, other], rng) is other for _ in range(20))
        with pytest.raises(ValueError):
            sample_negative(a, [a, perm], rng)

    def test_uniform_over_eligible(self):
        sents = [make_sentence([0], forms=[w]) for w in "abcde"]
        rng = np.random.default_rng(42)
        draws = Counter(sample_negative(sents[0], sents, rng).forms[0] for _ in range(10_000))
        assert set(draws) == set("bcde")
        sigma = np.sqrt(10_000 * 0.25 * 0.75)
        for c in draws.values():
            assert abs(c - 2500) < 3 * sigma
        chi2 = sum((c - 2500) ** 2 / 2500 for c in draws.values())
        assert chi2 < 16.27  # 3 dof, p = 0.001
