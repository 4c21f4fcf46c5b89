"""Reading, validating and writing CoNLL-U treebanks.

Only basic syntactic words are kept. Multiword-token ranges (``3-4``) and
empty nodes (``3.1``) are dropped and counted, because reordering words is
only well defined over the basic dependency tree.
"""

from __future__ import annotations

import dataclasses
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

logger = logging.getLogger(__name__)

__all__ = [
    "ConlluError",
    "InvalidTreeError",
    "Sentence",
    "Token",
    "Treebank",
    "ValidationReport",
    "load_conllu",
    "parse_conllu",
    "save_conllu",
    "serialize_conllu",
    "validate_tree",
]


class ConlluError(ValueError):
    """Malformed CoNLL-U input. ``lineno`` is 1-based."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class InvalidTreeError(ValueError):
    """Raised when an operation that needs a well-formed tree gets something else."""

    def __init__(self, report: "ValidationReport", sent_id: str | None = None):
        self.report = report
        where = f"sentence {sent_id!r}" if sent_id is not None else "sentence"
        super().__init__(f"{where} is not a valid tree: {'; '.join(report.messages())}")


@dataclass(frozen=True)
class Token:
    id: int
    form: str
    lemma: str = "_"
    upos: str = "_"
    feats: str = "_"
    head: int | None = None
    deprel: str = "_"
    # XPOS, DEPS and MISC are carried through untouched
    xpos: str = "_"
    deps: str = "_"
    misc: str = "_"

    def replace(self, **changes) -> "Token":
        return dataclasses.replace(self, **changes)


@dataclass
class Sentence:
    tokens: list[Token]
    sent_id: str | None = None
    comments: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def forms(self) -> list[str]:
        return [t.form for t in self.tokens]

    @property
    def heads(self) -> list[int]:
        return [t.head if t.head is not None else -1 for t in self.tokens]

    @property
    def deprels(self) -> list[str]:
        return [t.deprel for t in self.tokens]

    def with_heads(self, heads: Iterable[int], deprels: Iterable[str] | None = None) -> "Sentence":
        heads = list(heads)
        labels = list(deprels) if deprels is not None else self.deprels
        tokens = [t.replace(head=int(h), deprel=l) for t, h, l in zip(self.tokens, heads, labels)]
        return Sentence(tokens, self.sent_id, list(self.comments))


@dataclass
class Treebank:
    sentences: list[Sentence]
    source_path: str = "<memory>"
    dropped_lines: int = 0

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def __getitem__(self, i):
        return self.sentences[i]


@dataclass
class ValidationReport:
    out_of_range: list[int] = field(default_factory=list)
    self_loops: list[int] = field(default_factory=list)
    missing_head: list[int] = field(default_factory=list)
    roots: list[int] = field(default_factory=list)
    cycles: list[frozenset[int]] = field(default_factory=list)
    bad_ids: bool = False

    @property
    def ok(self) -> bool:
        return not self.messages()

    def __bool__(self) -> bool:
        # truthy when there is something to report
        return not self.ok

    def messages(self) -> list[str]:
        msgs = []
        if self.bad_ids:
            msgs.append("token ids are not 1..n in order")
        if self.missing_head:
            msgs.append(f"tokens without head: {self.missing_head}")
        if self.out_of_range:
            msgs.append(f"head out of range for tokens {self.out_of_range}")
        if self.self_loops:
            msgs.append(f"self-loop on tokens {self.self_loops}")
        if len(self.roots) == 0:
            msgs.append("no root (no token has head 0)")
        elif len(self.roots) > 1:
            msgs.append(f"multiple roots: tokens {self.roots}")
        for cyc in self.cycles:
            msgs.append(f"cycle among tokens {sorted(cyc)}")
        return msgs


def validate_tree(sentence: Sentence) -> ValidationReport:
    """Check that the heads of ``sentence`` form a single-rooted arborescence."""
    report = ValidationReport()
    n = len(sentence.tokens)
    report.bad_ids = any(t.id != i for i, t in enumerate(sentence.tokens, start=1))
    heads = [0] * (n + 1)
    usable = [False] * (n + 1)
    for i, tok in enumerate(sentence.tokens, start=1):
        h = tok.head
        if h is None:
            report.missing_head.append(i)
        elif h < 0 or h > n:
            report.out_of_range.append(i)
        elif h == i:
            report.self_loops.append(i)
        else:
            heads[i] = h
            usable[i] = True
            if h == 0:
                report.roots.append(i)

    # colour walk: 0 unvisited, 1 on current path, 2 done
    state = [0] * (n + 1)
    state[0] = 2
    for start in range(1, n + 1):
        path = []
        v = start
        while state[v] == 0 and usable[v]:
            state[v] = 1
            path.append(v)
            v = heads[v]
        if state[v] == 1:
            cyc = path[path.index(v):]
            report.cycles.append(frozenset(cyc))
        for u in path:
            state[u] = 2
    return report


def _check_int(value: str, what: str, lineno: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConlluError(f"non-integer {what} {value!r}", lineno) from None


def parse_conllu(text: str | TextIO, source_path: str = "<memory>") -> Treebank:
    """Parse CoNLL-U text (a string or an open text stream) into a Treebank.

    Raises ConlluError naming the line for wrong column counts, non-integer
    ids or heads and heads outside ``0..n``.
    """
    if not isinstance(text, str):
        text = text.read()
    sentences: list[Sentence] = []
    dropped = 0
    comments: list[str] = []
    tokens: list[Token] = []
    head_lines: list[int] = []

    def flush():
        nonlocal comments, tokens, head_lines
        if tokens:
            n = len(tokens)
            for tok, ln in zip(tokens, head_lines):
                if tok.head is not None and not 0 <= tok.head <= n:
                    raise ConlluError(f"head {tok.head} out of range 0..{n}", ln)
            sent_id = None
            for c in comments:
                body = c[1:].strip()
                if body.startswith("sent_id"):
                    key, _, value = body.partition("=")
                    if key.strip() == "sent_id":
                        sent_id = value.strip()
            sentences.append(Sentence(tokens, sent_id, comments))
        elif comments:
            logger.warning("comment block without tokens ignored")
        comments, tokens, head_lines = [], [], []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            comments.append(line)
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ConlluError(f"expected 10 tab-separated columns, got {len(cols)}", lineno)
        tid = cols[0]
        if "-" in tid or "." in tid:
            dropped += 1
            continue
        idx = _check_int(tid, "id", lineno)
        if idx != len(tokens) + 1:
            raise ConlluError(f"token id {idx} out of sequence (expected {len(tokens) + 1})", lineno)
        head = None if cols[6] == "_" else _check_int(cols[6], "head", lineno)
        if head is not None and head < 0:
            raise ConlluError(f"negative head {head}", lineno)
        tokens.append(Token(
            id=idx, form=cols[1], lemma=cols[2], upos=cols[3], xpos=cols[4],
            feats=cols[5], head=head, deprel=cols[7], deps=cols[8], misc=cols[9],
        ))
        head_lines.append(lineno)
    flush()

    if dropped:
        logger.warning("%s: dropped %d multiword-token/empty-node lines", source_path, dropped)
    return Treebank(sentences, source_path, dropped)


def serialize_conllu(treebank: Treebank | Iterable[Sentence]) -> str:
    """Render sentences as CoNLL-U text with Unix line endings."""
    sentences = treebank.sentences if isinstance(treebank, Treebank) else treebank
    out = io.StringIO()
    for sent in sentences:
        for c in sent.comments:
            out.write(c + "\n")
        for t in sent.tokens:
            head = "_" if t.head is None else str(t.head)
            cols = [str(t.id), t.form, t.lemma, t.upos, t.xpos, t.feats, head, t.deprel, t.deps, t.misc]
            out.write("\t".join(c if c != "" else "_" for c in cols) + "\n")
        out.write("\n")
    return out.getvalue()


def load_conllu(path: str | Path) -> Treebank:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as f:
        return parse_conllu(f.read(), str(path))


def save_conllu(treebank: Treebank | Iterable[Sentence], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(serialize_conllu(treebank))
