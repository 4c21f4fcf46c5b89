"""Attachment scores, permuted-order robustness and paired t-tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import betainc

from .augment import apply_permutation, PermutationMap, sentence_rng
from .conllu import Sentence, Treebank

__all__ = [
    "AlignmentError",
    "EvalResult",
    "RobustnessReport",
    "TTestResult",
    "format_summary",
    "paired_t_test",
    "robustness_report",
    "score",
]


class AlignmentError(ValueError):
    pass


@dataclass
class EvalResult:
    uas: float
    las: float
    per_sentence_las: list[float]
    token_count: int
    per_sentence_uas: list[float] = field(default_factory=list)

    def summary(self) -> dict[str, str]:
        return {"UAS": f"{self.uas:.2f}", "LAS": f"{self.las:.2f}", "tokens": str(self.token_count)}


def _is_punct(tok) -> bool:
    return tok.upos == "PUNCT" or tok.deprel.split(":")[0] == "punct"


def score(gold: Treebank | Sequence[Sentence], pred: Treebank | Sequence[Sentence],
          ignore_punct: bool = False) -> EvalResult:
    """UAS and LAS in percent over all (or all non-punctuation) tokens.

    Sentences with no scored tokens get a per-sentence LAS of 100.
    """
    gold = list(gold)
    pred = list(pred)
    if len(gold) != len(pred):
        raise AlignmentError(f"gold has {len(gold)} sentences, prediction has {len(pred)}")
    total = heads_ok = both_ok = 0
    per_las, per_uas = [], []
    for i, (g, p) in enumerate(zip(gold, pred)):
        name = g.sent_id if g.sent_id is not None else str(i + 1)
        if len(g) != len(p):
            raise AlignmentError(f"sentence {name}: gold has {len(g)} tokens, prediction has {len(p)}")
        for gt, pt in zip(g.tokens, p.tokens):
            if gt.form != pt.form:
                raise AlignmentError(f"sentence {name}: token {gt.id} form {gt.form!r} != {pt.form!r}")
        n = h = b = 0
        for gt, pt in zip(g.tokens, p.tokens):
            if ignore_punct and _is_punct(gt):
                continue
            n += 1
            if gt.head == pt.head:
                h += 1
                if gt.deprel == pt.deprel:
                    b += 1
        total += n
        heads_ok += h
        both_ok += b
        per_uas.append(100.0 * h / n if n else 100.0)
        per_las.append(100.0 * b / n if n else 100.0)
    if total == 0:
        return EvalResult(100.0, 100.0, per_las, 0, per_uas)
    return EvalResult(100.0 * heads_ok / total, 100.0 * both_ok / total, per_las, total, per_uas)


@dataclass
class RobustnessReport:
    original: EvalResult
    permuted: EvalResult | None
    k: int
    delta_uas: float | None = None
    delta_las: float | None = None

    @property
    def deltas_defined(self) -> bool:
        return self.permuted is not None

    def summary(self) -> dict[str, str]:
        out = {
            "k": str(self.k),
            "original_UAS": f"{self.original.uas:.2f}",
            "original_LAS": f"{self.original.las:.2f}",
        }
        if self.permuted is None:
            out["deltas"] = "undefined (k=0)"
        else:
            out.update({
                "permuted_UAS": f"{self.permuted.uas:.2f}",
                "permuted_LAS": f"{self.permuted.las:.2f}",
                "delta_UAS": f"{self.delta_uas:.2f}",
                "delta_LAS": f"{self.delta_las:.2f}",
            })
        return out


def permuted_test_set(gold: Treebank | Sequence[Sentence], k: int, seed: int) -> list[list[Sentence]]:
    """k uniformly permuted copies of every sentence, gold trees remapped.

    Returned as ``copies[j][i]``: the j-th permutation of sentence i.
    """
    gold = list(gold)
    copies = [[] for _ in range(k)]
    for i, sent in enumerate(gold):
        rng = sentence_rng(seed, i, stream=7)
        for j in range(k):
            order = [int(x) + 1 for x in rng.permutation(len(sent))]
            copies[j].append(apply_permutation(sent, PermutationMap.from_order(order)))
    return copies


def robustness_report(model, gold: Treebank | Sequence[Sentence], k: int = 3, seed: int = 0,
                      decoder: str = "mst", ignore_punct: bool = False) -> RobustnessReport:
    """Scores on the original order and averaged over k random reorderings.

    The permuted score pools tokens across all k copies, and per-sentence
    LAS is averaged over the copies of each sentence.
    """
    gold = list(gold)
    original = score(gold, model.parse(gold, decoder=decoder), ignore_punct)
    if k <= 0:
        return RobustnessReport(original, None, 0)
    results = []
    for copy in permuted_test_set(gold, k, seed):
        results.append(score(copy, model.parse(copy, decoder=decoder), ignore_punct))
    per_las = np.mean([r.per_sentence_las for r in results], axis=0).tolist()
    per_uas = np.mean([r.per_sentence_uas for r in results], axis=0).tolist()
    permuted = EvalResult(
        uas=float(np.mean([r.uas for r in results])),
        las=float(np.mean([r.las for r in results])),
        per_sentence_las=per_las,
        token_count=sum(r.token_count for r in results),
        per_sentence_uas=per_uas,
    )
    return RobustnessReport(original, permuted, k, original.uas - permuted.uas, original.las - permuted.las)


@dataclass
class TTestResult:
    t: float
    p: float
    df: int
    mean_difference: float
    degenerate: str | None = None  # "no-difference" or "zero-variance"

    def __iter__(self):
        yield self.t
        yield self.p


def t_two_sided_p(t: float, df: int) -> float:
    """Two-sided tail probability of Student's t via the regularized incomplete beta."""
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return float(betainc(df / 2.0, 0.5, x))


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test on the per-item differences a - b.

    All-zero differences give p = 1 and a ``no-difference`` flag. A constant
    non-zero difference has zero variance; t is reported as +/-inf with p = 0
    and a ``zero-variance`` flag.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-d and of equal length")
    n = a.shape[0]
    if n < 2:
        raise ValueError("need at least 2 pairs")
    diff = a - b
    mean = float(diff.mean())
    df = n - 1
    if np.all(diff == 0):
        return TTestResult(float("nan"), 1.0, df, 0.0, "no-difference")
    sd = float(diff.std(ddof=1))
    if sd == 0.0:
        return TTestResult(math.copysign(math.inf, mean), 0.0, df, mean, "zero-variance")
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t, t_two_sided_p(t, df), df, mean)


def format_summary(pairs: dict[str, str]) -> str:
    return "".join(f"{k}={v}\n" for k, v in pairs.items())
