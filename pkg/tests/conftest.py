import numpy as np
import pytest

from cssl_parser.conllu import Sentence, Token, Treebank


def make_sentence(heads, forms=None, deprels=None, sent_id=None, upos=None):
    n = len(heads)
    forms = forms or [f"w{i}" for i in range(1, n + 1)]
    deprels = deprels or ["root" if h == 0 else "dep" for h in heads]
    upos = upos or ["X"] * n
    tokens = [Token(id=i, form=f, lemma=f.lower(), upos=u, head=h, deprel=r)
              for i, (f, h, r, u) in enumerate(zip(forms, heads, deprels, upos), start=1)]
    comments = [f"# sent_id = {sent_id}"] if sent_id is not None else []
    return Sentence(tokens, sent_id, comments)


def random_heads(rng, n):
    """A random single-root tree over 1..n, projective or not."""
    order = [int(x) + 1 for x in rng.permutation(n)]
    heads = [0] * (n + 1)
    attached = [order[0]]
    for v in order[1:]:
        heads[v] = attached[int(rng.integers(len(attached)))]
        attached.append(v)
    return heads[1:]


RELS = ["nsubj", "obj", "obl", "amod", "punct", "det", "advmod"]
WORDS = ["ka", "mo", "tu", "ri", "lo", "pe", "sa", "ne", "vi", "da", "ho", "zu"]


def random_sentence(rng, n, sent_id=None):
    heads = random_heads(rng, n)
    forms = [WORDS[int(rng.integers(len(WORDS)))] + str(int(rng.integers(3))) for _ in range(n)]
    deprels = ["root" if h == 0 else RELS[int(rng.integers(len(RELS)))] for h in heads]
    return make_sentence(heads, forms, deprels, sent_id)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_treebank():
    rng = np.random.default_rng(7)
    return Treebank([random_sentence(rng, int(rng.integers(1, 9)), sent_id=str(i)) for i in range(20)])


_TREES = {}


def all_trees(n):
    """Every single-root dependency tree over n words as an (M, n) array of 1-based heads."""
    if n not in _TREES:
        cand = np.stack(np.unravel_index(np.arange((n + 1) ** n), (n + 1,) * n), axis=1).astype(np.int64)
        ok = (cand == 0).sum(axis=1) == 1
        ok &= ~(cand == np.arange(1, n + 1)).any(axis=1)
        cand = cand[ok]
        parent = np.concatenate([np.zeros((len(cand), 1), dtype=np.int64), cand], axis=1)
        rows = np.arange(len(cand))[:, None]
        v = np.broadcast_to(np.arange(1, n + 1), cand.shape).copy()
        for _ in range(n):
            v = parent[rows, v]
        _TREES[n] = cand[(v == 0).all(axis=1)]
    return _TREES[n]


def brute_best(scores):
    """(best tree score, all argmax trees) by exhaustive enumeration."""
    n = scores.shape[0] - 1
    trees = all_trees(n)
    total = np.zeros(len(trees))
    for d in range(n):  # left to right, like tree_score
        total = total + scores[trees[:, d], d + 1]
    best = total.max()
    return best, trees[total == best]


def tiny_model(seed=0, use_position_encoding=True):
    """d=8, one layer, float64: small enough for finite differences on every weight."""
    import torch
    from cssl_parser.model import ModelConfig, ParserModel, Vocabulary

    sents = [make_sentence([2, 0, 2], ["a", "b", "c"], ["nsubj", "root", "obj"], upos=["NOUN", "VERB", "NOUN"]),
             make_sentence([0, 1], ["d", "a"], ["root", "amod"], upos=["VERB", "ADJ"]),
             make_sentence([3, 3, 0, 3], ["c", "e", "b", "d"], ["amod", "obj", "root", "obl"],
                           upos=["ADJ", "NOUN", "VERB", "NOUN"])]
    cfg = ModelConfig(d=8, arc_dim=4, label_dim=4, layers=1, heads=2, ff=16, max_len=16,
                      use_position_encoding=use_position_encoding, seed=seed)
    model = ParserModel(Vocabulary.build(sents), cfg).double()
    torch.manual_seed(seed)
    return model, sents


def finite_difference_errors(model, loss_fn, eps=1e-4):
    """Relative error ||g - g_fd|| / max(||g||, ||g_fd||) per parameter tensor."""
    import torch

    model.zero_grad()
    loss_fn().backward()
    errors = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            analytic = p.grad.detach().clone().reshape(-1)
            numeric = torch.zeros_like(analytic)
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
                numeric[i] = (up - down) / (2 * eps)
            scale = max(analytic.norm().item(), numeric.norm().item())
            errors[name] = 0.0 if scale < 1e-10 else (analytic - numeric).norm().item() / scale
    return errors


def tiny_objective(model, sents, tau=0.5):
    """CE on the sentences plus CSSL against fixed permutations of them."""
    import torch
    from cssl_parser.augment import permute_sentence
    from cssl_parser.loss import cross_entropy_loss, cssl_loss

    positives = [permute_sentence(s, np.random.default_rng(i))[0] for i, s in enumerate(sents)]
    n = max(len(s) for s in sents)
    heads = torch.zeros(len(sents), n, dtype=torch.long)
    labels = torch.zeros(len(sents), n, dtype=torch.long)
    for b, s in enumerate(sents):
        heads[b, :len(s)] = torch.tensor(s.heads)
        labels[b, :len(s)] = torch.tensor([model.vocab.label_index(r) for r in s.deprels])
    batch = model.tensorize(sents)
    pos_batch = model.tensorize(positives)
    lengths = [len(s) for s in sents]

    def loss():
        reps, pooled = model.encode_batch(*batch)
        _, pooled_pos = model.encode_batch(*pos_batch)
        arcs = model.score_arcs(reps, batch[2])
        ce = cross_entropy_loss(arcs, model.score_labels(reps, heads), heads, labels, lengths)
        return ce + cssl_loss(pooled, pooled_pos, tau)

    return loss


# acceptance criteria: one line each in the terminal summary
_CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    _CRITERIA[number] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
