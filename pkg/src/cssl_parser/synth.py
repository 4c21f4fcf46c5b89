"""Synthetic free-word-order treebanks with case-marked nouns.

Each sentence has one verb as root. Noun dependents carry a case suffix
that alone fixes their relation to the verb, and adjectives repeat the
suffix of the noun they modify. Since no two nouns in a sentence share a
case, the whole tree can be read off the word forms and word order carries
no information at all.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .conllu import Sentence, Token, Treebank

__all__ = ["GrammarSpec", "generate_corpus", "split_corpus"]

DEFAULT_CASES = (
    ("ka", "Nom", "nsubj"),
    ("mo", "Acc", "obj"),
    ("ne", "Ins", "obl"),
    ("su", "Dat", "iobj"),
)

_ONSETS = "ptkbdgmnslrvjh"
_VOWELS = "aeiou"


@dataclass
class GrammarSpec:
    nouns: int = 100
    verbs: int = 30
    adjectives: int = 30
    # (suffix, feature value, relation) per case
    cases: tuple[tuple[str, str, str], ...] = DEFAULT_CASES
    min_dependents: int = 1
    max_dependents: int = 4
    adjective_probability: float = 0.4
    max_adjectives_per_noun: int = 2
    min_length: int = 3
    max_length: int = 9
    # share of sentences in canonical order: nouns by case order, each adjective
    # before its noun, verb last; the rest are uniformly shuffled
    canonical_order_probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if len(self.cases) < 2:
            raise ValueError("need at least 2 case markers")
        if len({c[0] for c in self.cases}) != len(self.cases):
            raise ValueError("case suffixes must be distinct")
        if not 1 <= self.min_dependents <= self.max_dependents <= len(self.cases):
            raise ValueError("need 1 <= min_dependents <= max_dependents <= number of cases")
        if self.min_length > self.max_length or self.max_length < self.min_dependents + 1:
            raise ValueError("sentence length bounds cannot be met")
        if self.min_length > 1 + self.max_dependents * (1 + self.max_adjectives_per_noun):
            raise ValueError("min_length is unreachable with these dependent limits")

    @property
    def labels(self) -> list[str]:
        return sorted({c[2] for c in self.cases} | {"amod", "root"})

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "GrammarSpec":
        kwargs = {}
        known = {f.name: f for f in fields(cls)}
        for key, raw in values.items():
            if key not in known:
                raise ValueError(f"unknown grammar setting {key!r}")
            if key == "cases":
                # "ka:Nom:nsubj,mo:Acc:obj"
                kwargs[key] = tuple(tuple(part.split(":")) for part in raw.split(","))
            elif key in ("adjective_probability", "canonical_order_probability"):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = int(raw)
        return cls(**kwargs)


def _stems(rng: np.random.Generator, count: int, syllables: int, taken: set[str]) -> list[str]:
    out = []
    while len(out) < count:
        stem = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                       for _ in range(syllables))
        if stem not in taken:
            taken.add(stem)
            out.append(stem)
    return out


@dataclass
class _Lexicon:
    nouns: list[str]
    verbs: list[str]
    adjectives: list[str]


def _lexicon(g: GrammarSpec) -> _Lexicon:
    rng = np.random.default_rng([g.seed, 0x1E])
    taken: set[str] = set()
    return _Lexicon(_stems(rng, g.nouns, 3, taken), _stems(rng, g.verbs, 2, taken),
                    _stems(rng, g.adjectives, 4, taken))


def _sentence(g: GrammarSpec, lex: _Lexicon, rng: np.random.Generator, sent_id: str) -> Sentence:
    while True:
        k = int(rng.integers(g.min_dependents, g.max_dependents + 1))
        n_adj = [int(rng.binomial(g.max_adjectives_per_noun, g.adjective_probability)) for _ in range(k)]
        length = 1 + k + sum(n_adj)
        if g.min_length <= length <= g.max_length:
            break
    case_ids = rng.choice(len(g.cases), size=k, replace=False)

    # words as (form, lemma, upos, feats, head_word_index, deprel); word 0 is the verb
    verb = lex.verbs[rng.integers(len(lex.verbs))]
    words = [(verb, verb, "VERB", "_", -1, "root")]
    for c, adj_count in zip(case_ids, n_adj):
        suffix, value, rel = g.cases[c]
        noun = lex.nouns[rng.integers(len(lex.nouns))]
        noun_idx = len(words)
        words.append((noun + suffix, noun, "NOUN", f"Case={value}", 0, rel))
        for _ in range(adj_count):
            adj = lex.adjectives[rng.integers(len(lex.adjectives))]
            words.append((adj + suffix, adj, "ADJ", f"Case={value}", noun_idx, "amod"))

    if rng.random() < g.canonical_order_probability:
        order = []
        # nouns in case-inventory order, each preceded by its adjectives, verb last
        nouns = sorted((i for i, w in enumerate(words) if w[2] == "NOUN"),
                       key=lambda i: [c[2] for c in g.cases].index(words[i][5]))
        for i in nouns:
            order.extend(j for j, w in enumerate(words) if w[2] == "ADJ" and w[4] == i)
            order.append(i)
        order.append(0)
    else:
        order = rng.permutation(len(words))
    position = {int(w): p + 1 for p, w in enumerate(order)}
    tokens = []
    for p, w in enumerate(order, start=1):
        form, lemma, upos, feats, head, rel = words[int(w)]
        tokens.append(Token(id=p, form=form, lemma=lemma, upos=upos, feats=feats,
                            head=0 if head < 0 else position[head], deprel=rel))
    text = " ".join(t.form for t in tokens)
    return Sentence(tokens, sent_id, [f"# sent_id = {sent_id}", f"# text = {text}"])


def generate_corpus(g: GrammarSpec, n_sentences: int) -> Treebank:
    """Deterministic in ``g.seed``; sentence i depends only on (seed, i)."""
    lex = _lexicon(g)
    sentences = []
    for i in range(n_sentences):
        rng = np.random.default_rng([g.seed, 0x5E, i])
        sentences.append(_sentence(g, lex, rng, f"synth-{i + 1}"))
    return Treebank(sentences, f"<synth seed={g.seed}>")


def split_corpus(treebank: Treebank, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[Treebank, Treebank, Treebank]:
    """Seeded disjoint sentence-level split into train/dev/test."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be three non-negative numbers summing to 1")
    n = len(treebank)
    idx = np.random.default_rng([seed, 0x5B]).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_dev = int(round(ratios[1] * n))
    parts = (idx[:n_train], idx[n_train:n_train + n_dev], idx[n_train + n_dev:])
    for name, part in zip(("train", "dev", "test"), parts):
        if len(part) == 0:
            raise ValueError(f"{name} split is empty")
    src = treebank.source_path
    return tuple(Treebank([treebank.sentences[i] for i in sorted(part)], f"{src}:{name}")
                 for name, part in zip(("train", "dev", "test"), parts))
