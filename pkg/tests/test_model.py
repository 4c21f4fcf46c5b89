import math

import numpy as np
import pytest
import torch

from cssl_parser.augment import PermutationMap, apply_permutation, permute_sentence
from cssl_parser.loss import cross_entropy_loss
from cssl_parser.model import (ModelConfig, NonFiniteGradientError, ParserModel, SentenceTooLongError, Vocabulary,
                               backward, load_checkpoint, save_checkpoint)

from conftest import finite_difference_errors, make_sentence, random_sentence, tiny_model, tiny_objective


def model_for(sents, **kw):
    return ParserModel(Vocabulary.build(sents), ModelConfig(**kw))


@pytest.fixture(scope="module")
def corpus():
    rng = np.random.default_rng(0)
    return [random_sentence(rng, int(rng.integers(1, 10))) for _ in range(30)]


def test_vocabulary_specials_and_oov(corpus):
    v = Vocabulary.build(corpus)
    assert v.forms.itos[:3] == ["<pad>", "<unk>", "<root>"]
    assert v.forms["never-seen"] == v.forms.stoi["<unk>"]
    assert sorted(v.forms.stoi.values()) == list(range(len(v.forms)))
    assert sorted(v.labels.stoi.values()) == list(range(len(v.labels)))


def test_single_word_pooled_is_normalized_token():
    s = make_sentence([0], ["x"])
    m = model_for([s])
    reps, pooled = m.encode(s)
    assert torch.allclose(pooled, reps[1] / reps[1].norm(), atol=1e-7)


def test_pooled_unit_norm(corpus):
    m = model_for(corpus)
    _, pooled = m.encode_batch(*m.tensorize(corpus))
    assert torch.allclose(pooled.norm(dim=-1), torch.ones(len(corpus)), atol=1e-6)


def test_nopos_equivariance(corpus):
    m = model_for(corpus, use_position_encoding=False, seed=3)
    rng = np.random.default_rng(1)
    with torch.no_grad():
        for s in corpus:
            t, perm = permute_sentence(s, rng)
            reps, pooled = m.encode(s)
            reps_p, pooled_p = m.encode(t)
            assert torch.allclose(pooled, pooled_p, atol=1e-5)
            # row perm(i) of the permuted output is row i of the original
            assert torch.allclose(reps_p[[perm(i) for i in range(len(s) + 1)]], reps, atol=1e-5)


def test_positions_break_invariance():
    s = make_sentence([2, 0, 2], ["a", "b", "c"])
    m = model_for([s], use_position_encoding=True, seed=1)
    t = apply_permutation(s, PermutationMap((3, 2, 1)))
    with torch.no_grad():
        assert not torch.allclose(m.encode(s)[1], m.encode(t)[1], atol=1e-5)


def test_padding_does_not_leak(corpus):
    m = model_for(corpus)
    with torch.no_grad():
        _, batched = m.encode_batch(*m.tensorize(corpus[:5]))
        for i, s in enumerate(corpus[:5]):
            assert torch.allclose(batched[i], m.encode(s)[1], atol=1e-5)


def test_max_len_error():
    s = make_sentence([0] + [1] * 9)
    m = model_for([s], max_len=8)
    with pytest.raises(SentenceTooLongError):
        m.encode(s)


class TestArcScores:
    def test_zero_parameters_give_zero(self, corpus):
        m = model_for(corpus)
        with torch.no_grad():
            m.arc_U.zero_(); m.arc_u.zero_(); m.arc_head.bias.zero_(); m.arc_dep.bias.zero_()
            s = m.score_arcs(m.encode(corpus[0])[0])
        off = ~torch.eye(s.shape[0], dtype=torch.bool)
        assert (s[off] == 0).all()
        assert torch.isneginf(s.diagonal()).all()

    def test_hand_computation(self):
        s = make_sentence([0, 1], ["a", "b"])
        m = model_for([s], d=1, arc_dim=1, label_dim=1, heads=1, ff=2).double()
        with torch.no_grad():
            m.arc_head.weight.fill_(0.5); m.arc_head.bias.fill_(0.25)
            m.arc_dep.weight.fill_(2.0); m.arc_dep.bias.fill_(-1.0)
            m.arc_U.fill_(1.5); m.arc_u.fill_(0.5)
            r = [1.0, 2.0, -1.0]
            out = m.score_arcs(torch.tensor(r, dtype=torch.float64)[:, None])
        for h in range(3):
            for d in range(3):
                ph, pd = 0.5 * r[h] + 0.25, 2.0 * r[d] - 1.0
                want = -math.inf if h == d else ph * 1.5 * pd + 0.5 * ph
                assert out[h, d].item() == want

    @pytest.mark.parametrize("n", range(1, 11))
    def test_shape(self, n):
        s = make_sentence([0] + [1] * (n - 1))
        m = model_for([s])
        assert m.score_arcs(m.encode(s)[0]).shape == (n + 1, n + 1)

    def test_deterministic(self, corpus):
        m = model_for(corpus)
        reps = m.encode(corpus[1])[0]
        assert torch.equal(m.score_arcs(reps), m.score_arcs(reps))


class TestLabelScores:
    def test_single_label(self):
        s = make_sentence([0, 1, 1], deprels=["dep", "dep", "dep"])
        m = model_for([s])
        reps = m.encode(s)[0]
        assert torch.argmax(m.score_labels(reps, s.heads), -1).tolist() == [0, 0, 0]

    def test_zero_parameters_uniform(self, corpus):
        m = model_for(corpus)
        with torch.no_grad():
            for p in (m.label_U, m.label_W, m.label_b):
                p.zero_()
            reps = m.encode(corpus[2])[0]
            ls = m.score_labels(reps, corpus[2].heads)
        assert (ls == 0).all()
        L = len(m.vocab.labels)
        lp = torch.log_softmax(ls, -1)
        assert torch.allclose(-lp[:, 0], torch.full((ls.shape[0],), math.log(L)))

    def test_hand_computation(self):
        s = make_sentence([0, 1], ["a", "b"], ["root", "amod"])
        m = model_for([s], d=1, arc_dim=1, label_dim=1, heads=1, ff=2).double()
        with torch.no_grad():
            m.label_head.weight.fill_(2.0); m.label_head.bias.fill_(0.5)
            m.label_dep.weight.fill_(-1.0); m.label_dep.bias.fill_(0.25)
            m.label_U.copy_(torch.tensor([[[1.0]], [[-0.5]]]))
            m.label_W.copy_(torch.tensor([[1.0, 2.0], [0.5, -1.0]]))
            m.label_b.copy_(torch.tensor([0.125, -0.25]))
            r = [0.5, 1.0, -2.0]
            out = m.score_labels(torch.tensor(r, dtype=torch.float64)[:, None], [0, 1])
        U, W, b = [1.0, -0.5], [[1.0, 2.0], [0.5, -1.0]], [0.125, -0.25]
        for d, h in ((1, 0), (2, 1)):
            lh, ld = 2.0 * r[h] + 0.5, -r[d] + 0.25
            for l in range(2):
                assert out[d - 1, l].item() == lh * U[l] * ld + W[l][0] * lh + W[l][1] * ld + b[l]

    def test_head_out_of_range(self, corpus):
        m = model_for(corpus)
        reps = m.encode(corpus[0])[0]
        with pytest.raises(IndexError):
            m.score_labels(reps, [len(corpus[0]) + 1] * len(corpus[0]))


class TestGradients:
    def test_sum_of_parameter_vector(self):
        p = torch.nn.Parameter(torch.randn(7))
        p.sum().backward()
        assert torch.equal(p.grad, torch.ones(7))

    def test_normalization_gradient_orthogonal(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = torch.tensor(rng.normal(size=5), dtype=torch.float64)
            x = (x / x.norm()).requires_grad_()
            w = torch.tensor(rng.normal(size=5), dtype=torch.float64)
            ((x / x.norm()) @ w).backward()
            assert abs(float(x.grad @ x.detach())) < 1e-12

    def test_finite_differences_every_parameter(self):
        model, sents = tiny_model(seed=1)
        errors = finite_difference_errors(model, tiny_objective(model, sents))
        assert set(errors) == {n for n, _ in model.named_parameters()}
        bad = {k: v for k, v in errors.items() if not v < 1e-3}
        assert not bad

    def test_non_finite_gradient_named(self, corpus):
        m = model_for(corpus)
        reps = m.encode(corpus[0])[0]
        loss = (m.score_arcs(reps)[0, 1:] * float("nan")).sum()
        with pytest.raises(NonFiniteGradientError, match="arc_"):
            backward(loss, m)


def test_checkpoint_round_trip(tmp_path, corpus):
    m = model_for(corpus, seed=5, use_position_encoding=False)
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, path)
    m2 = load_checkpoint(path)
    assert m2.config == m.config
    assert m2.vocab.forms.itos == m.vocab.forms.itos
    for (k, a), (k2, b) in zip(m.state_dict().items(), m2.state_dict().items()):
        assert k == k2 and torch.equal(a, b)
    assert [s.tokens for s in m.parse(corpus)] == [s.tokens for s in m2.parse(corpus)]


def test_checkpoint_rejects_garbage(tmp_path):
    from cssl_parser.model import CheckpointError
    p = tmp_path / "bad"
    p.write_bytes(b"nope")
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_parse_returns_valid_trees(corpus):
    from cssl_parser.conllu import validate_tree
    m = model_for(corpus)
    for s in m.parse(corpus, decoder="mst"):
        assert validate_tree(s).ok
    out = m.parse(corpus[:3], decoder="greedy")
    assert [x.forms for x in out] == [x.forms for x in corpus[:3]]


def test_ce_through_model_finite(corpus):
    m = model_for(corpus)
    s = corpus[4]
    reps = m.encode(s)[0]
    ce = cross_entropy_loss(m.score_arcs(reps), m.score_labels(reps, s.heads), s.heads,
                            [m.vocab.label_index(r) for r in s.deprels])
    assert torch.isfinite(ce)
