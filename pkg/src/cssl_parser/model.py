"""Self-attention encoder with mean pooling and biaffine arc/label scorers."""

from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .conllu import Sentence, Treebank

PAD, UNK, ROOT = "<pad>", "<unk>", "<root>"

CHECKPOINT_MAGIC = b"CSSLPRS\x00"
CHECKPOINT_VERSION = 1

__all__ = [
    "CheckpointError",
    "ModelConfig",
    "NonFiniteGradientError",
    "ParserModel",
    "SentenceTooLongError",
    "Vocabulary",
    "backward",
    "load_checkpoint",
    "save_checkpoint",
    "sinusoidal_table",
]


class SentenceTooLongError(ValueError):
    pass


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"non-finite gradient in parameter {name!r}")


class CheckpointError(ValueError):
    pass


class _Index:
    def __init__(self, items: Iterable[str], specials: Sequence[str]):
        self.itos: list[str] = list(specials)
        for it in items:
            if it not in specials:
                self.itos.append(it)
        self.stoi = {s: i for i, s in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate vocabulary entries")

    def __len__(self):
        return len(self.itos)

    def __getitem__(self, key: str) -> int:
        return self.stoi.get(key, self.stoi.get(UNK, 0))


class Vocabulary:
    """Form, UPOS and label indices built from a training treebank.

    Forms and UPOS tags get ``<pad>``, ``<unk>`` and ``<root>`` at indices
    0, 1 and 2. Labels are dense from 0 with no specials.
    """

    def __init__(self, forms: Iterable[str], upos: Iterable[str], labels: Iterable[str]):
        self.forms = _Index(forms, (PAD, UNK, ROOT))
        self.upos = _Index(upos, (PAD, UNK, ROOT))
        self.labels = _Index(labels, ())
        if len(self.labels) == 0:
            raise ValueError("label vocabulary is empty")

    @classmethod
    def build(cls, treebank: Treebank | Iterable[Sentence]) -> "Vocabulary":
        forms, upos, labels = {}, {}, {}
        for sent in treebank:
            for t in sent.tokens:
                forms.setdefault(t.form, None)
                upos.setdefault(t.upos, None)
                labels.setdefault(t.deprel, None)
        return cls(sorted(forms), sorted(upos), sorted(labels))

    def label_index(self, label: str) -> int:
        try:
            return self.labels.stoi[label]
        except KeyError:
            raise KeyError(f"label {label!r} not in vocabulary") from None


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64
    arc_dim: int = 32
    label_dim: int = 32
    layers: int = 2
    heads: int = 4
    ff: int = 128
    max_len: int = 128
    use_position_encoding: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError("d must be divisible by the number of attention heads")


def sinusoidal_table(max_len: int, d: int) -> torch.Tensor:
    pos = torch.arange(max_len, dtype=torch.float64)[:, None]
    i = torch.arange(0, d, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / d)
    table = torch.zeros(max_len, d, dtype=torch.float64)
    table[:, 0::2] = torch.sin(angle)
    table[:, 1::2] = torch.cos(angle[:, : d // 2])
    return table


class EncoderBlock(nn.Module):
    """Pre-norm multi-head self-attention and feed-forward, both residual."""

    def __init__(self, d: int, heads: int, ff: int):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(d)
        self.qkv = nn.Linear(d, 3 * d)
        self.out = nn.Linear(d, d)
        self.norm2 = nn.LayerNorm(d)
        self.ff1 = nn.Linear(d, ff)
        self.ff2 = nn.Linear(ff, d)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        dh = d // self.heads
        q, k, v = self.qkv(self.norm1(x)).split(d, dim=-1)
        q = q.view(b, n, self.heads, dh).transpose(1, 2)
        k = k.view(b, n, self.heads, dh).transpose(1, 2)
        v = v.view(b, n, self.heads, dh).transpose(1, 2)
        att = q @ k.transpose(-2, -1) / math.sqrt(dh)
        att = att.masked_fill(~mask[:, None, None, :], float("-inf"))
        att = torch.softmax(att, dim=-1)
        h = (att @ v).transpose(1, 2).reshape(b, n, d)
        x = x + self.out(h)
        x = x + self.ff2(F.gelu(self.ff1(self.norm2(x))))
        return x


class ParserModel(nn.Module):
    """Biaffine dependency parser over a small self-attention encoder.

    Arc scores follow the Dozat & Manning form
    ``s[h, d] = p_h^T U p_d + u . p_h`` with linear head/dependent
    projections ``p``. Labels use one bilinear form per label plus a linear
    term on the concatenated projections.
    """

    def __init__(self, vocab: Vocabulary, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.vocab = vocab
        self.config = c = config
        self.form_emb = nn.Embedding(len(vocab.forms), c.d)
        self.upos_emb = nn.Embedding(len(vocab.upos), c.d)
        self.register_buffer("pos_table", sinusoidal_table(c.max_len + 1, c.d).float(), persistent=False)
        self.blocks = nn.ModuleList(EncoderBlock(c.d, c.heads, c.ff) for _ in range(c.layers))
        self.final_norm = nn.LayerNorm(c.d)

        n_labels = len(vocab.labels)
        self.arc_head = nn.Linear(c.d, c.arc_dim)
        self.arc_dep = nn.Linear(c.d, c.arc_dim)
        self.arc_U = nn.Parameter(torch.empty(c.arc_dim, c.arc_dim))
        self.arc_u = nn.Parameter(torch.empty(c.arc_dim))
        self.label_head = nn.Linear(c.d, c.label_dim)
        self.label_dep = nn.Linear(c.d, c.label_dim)
        self.label_U = nn.Parameter(torch.empty(n_labels, c.label_dim, c.label_dim))
        self.label_W = nn.Parameter(torch.empty(n_labels, 2 * c.label_dim))
        self.label_b = nn.Parameter(torch.empty(n_labels))
        self.reset_parameters(c.seed)

    def reset_parameters(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith("bias") or name == "label_b":
                    p.zero_()
                elif "norm" in name:
                    p.fill_(1.0)
                elif p.dim() == 1:
                    p.normal_(0.0, 0.1, generator=g)
                elif "emb" in name:
                    p.normal_(0.0, 1.0, generator=g)
                else:
                    fan_in, fan_out = p.shape[-1], p.shape[-2]
                    bound = math.sqrt(6.0 / (fan_in + fan_out))
                    p.uniform_(-bound, bound, generator=g)

    # -- input ------------------------------------------------------------

    def tensorize(self, sentences: Sequence[Sentence]):
        """Index tensors with ROOT prepended: forms, upos, mask of shape (B, n+1)."""
        n1 = max(len(s) for s in sentences) + 1
        if n1 - 1 > self.config.max_len:
            raise SentenceTooLongError(f"sentence of length {n1 - 1} exceeds max_len {self.config.max_len}")
        forms = torch.zeros(len(sentences), n1, dtype=torch.long)
        upos = torch.zeros(len(sentences), n1, dtype=torch.long)
        mask = torch.zeros(len(sentences), n1, dtype=torch.bool)
        fv, uv = self.vocab.forms, self.vocab.upos
        for b, s in enumerate(sentences):
            forms[b, 0] = fv.stoi[ROOT]
            upos[b, 0] = uv.stoi[ROOT]
            forms[b, 1:len(s) + 1] = torch.tensor([fv[t.form] for t in s.tokens])
            upos[b, 1:len(s) + 1] = torch.tensor([uv[t.upos] for t in s.tokens])
            mask[b, : len(s) + 1] = True
        return forms, upos, mask

    # -- encoder ----------------------------------------------------------

    def encode_batch(self, forms, upos, mask):
        """Token representations (B, n+1, d) and unit-norm pooled vectors (B, d)."""
        x = self.form_emb(forms) + self.upos_emb(upos)
        if self.config.use_position_encoding:
            x = x + self.pos_table[: x.shape[1]].to(x.dtype)
        for block in self.blocks:
            x = block(x, mask)
        x = self.final_norm(x)
        words = mask.clone()
        words[:, 0] = False
        w = words.to(x.dtype)[..., None]
        mean = (x * w).sum(1) / w.sum(1).clamp_min(1.0)
        pooled = mean / mean.norm(dim=-1, keepdim=True)
        return x, pooled

    def encode(self, sentence: Sentence):
        """(token representations (n+1, d), pooled (d,)) for a single sentence."""
        reps, pooled = self.encode_batch(*self.tensorize([sentence]))
        return reps[0], pooled[0]

    # -- scorers ----------------------------------------------------------

    def score_arcs(self, reps: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        """``scores[..., h, d]`` for head h of dependent d; diagonal and padding at -inf."""
        single = reps.dim() == 2
        if single:
            reps = reps[None]
        ph = self.arc_head(reps)
        pd = self.arc_dep(reps)
        s = ph @ self.arc_U @ pd.transpose(-1, -2) + (ph @ self.arc_u)[..., :, None]
        n1 = s.shape[-1]
        eye = torch.eye(n1, dtype=torch.bool, device=s.device)
        s = s.masked_fill(eye, float("-inf"))
        if mask is not None:
            if mask.dim() == 1:
                mask = mask[None]
            s = s.masked_fill(~mask[:, :, None], float("-inf"))
        return s[0] if single else s

    def score_labels(self, reps: torch.Tensor, heads) -> torch.Tensor:
        """Label scores (..., n, |labels|) for each word given its head."""
        single = reps.dim() == 2
        if single:
            reps = reps[None]
        heads = torch.as_tensor(heads, dtype=torch.long, device=reps.device)
        if heads.dim() == 1:
            heads = heads[None]
        n1 = reps.shape[1]
        if heads.shape[1] > n1 - 1 or (heads < 0).any() or (heads >= n1).any():
            raise IndexError(f"head index out of range 0..{n1 - 1}")
        lh = self.label_head(reps)
        ld = self.label_dep(reps[:, 1: heads.shape[1] + 1])
        idx = heads[..., None].expand(-1, -1, lh.shape[-1])
        lh = torch.gather(lh, 1, idx)
        bil = torch.einsum("bni,lij,bnj->bnl", lh, self.label_U, ld)
        lin = torch.cat([lh, ld], dim=-1) @ self.label_W.T
        s = bil + lin + self.label_b
        return s[0] if single else s

    # -- parsing ----------------------------------------------------------

    @torch.no_grad()
    def parse(self, sentences: Sequence[Sentence], decoder: str = "mst", batch_size: int = 64) -> list[Sentence]:
        """Predicted trees and labels; the input sentences are not modified."""
        from .decode import greedy_decode, mst_decode

        if decoder not in ("mst", "greedy"):
            raise ValueError(f"unknown decoder {decoder!r}")
        sentences = list(sentences)
        out = []
        for start in range(0, len(sentences), batch_size):
            chunk = sentences[start:start + batch_size]
            forms, upos, mask = self.tensorize(chunk)
            reps, _ = self.encode_batch(forms, upos, mask)
            arcs = self.score_arcs(reps, mask)
            for b, sent in enumerate(chunk):
                n1 = len(sent) + 1
                if decoder == "mst":
                    heads = mst_decode(arcs[b, :n1, :n1])
                else:
                    heads, _ = greedy_decode(arcs[b, :n1, :n1])
                labels = torch.argmax(self.score_labels(reps[b, :n1], heads), dim=-1).tolist()
                out.append(sent.with_heads(heads, [self.vocab.labels.itos[i] for i in labels]))
        return out


def backward(loss: torch.Tensor, model: nn.Module) -> None:
    """Reverse-mode pass from ``loss``; raises if any parameter gradient is not finite."""
    loss.backward()
    for name, p in model.named_parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise NonFiniteGradientError(name)


# -- checkpoints ------------------------------------------------------------

def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _read(f, fmt):
    size = struct.calcsize(fmt)
    buf = f.read(size)
    if len(buf) != size:
        raise CheckpointError("truncated checkpoint")
    return struct.unpack(fmt, buf)


def _read_str(f) -> str:
    (n,) = _read(f, "<I")
    b = f.read(n)
    if len(b) != n:
        raise CheckpointError("truncated checkpoint")
    return b.decode("utf-8")


def save_checkpoint(model: ParserModel, path: str | Path) -> None:
    """Write the model as header + vocabulary + little-endian float32 parameter blocks."""
    c = model.config
    v = model.vocab
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<8I", c.d, c.arc_dim, c.label_dim, c.layers, c.heads, c.ff, c.max_len,
                            int(c.use_position_encoding)))
        f.write(struct.pack("<Q", c.seed & 0xFFFFFFFFFFFFFFFF))
        f.write(struct.pack("<3I", len(v.forms), len(v.upos), len(v.labels)))
        for index in (v.forms, v.upos, v.labels):
            for s in index.itos:
                f.write(_pack_str(s))
        params = list(model.state_dict().items())
        f.write(struct.pack("<I", len(params)))
        for name, t in params:
            arr = t.detach().cpu().numpy().astype("<f4")
            f.write(_pack_str(name))
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes(order="C"))


def load_checkpoint(path: str | Path) -> ParserModel:
    with open(path, "rb") as f:
        if f.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a parser checkpoint")
        (version,) = _read(f, "<I")
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        d, arc_dim, label_dim, layers, heads, ff, max_len, flags = _read(f, "<8I")
        (seed,) = _read(f, "<Q")
        sizes = _read(f, "<3I")
        lists = [[_read_str(f) for _ in range(n)] for n in sizes]
        vocab = Vocabulary(lists[0][3:], lists[1][3:], lists[2])
        if [len(vocab.forms), len(vocab.upos), len(vocab.labels)] != list(sizes):
            raise CheckpointError(f"{path}: vocabulary does not round-trip")
        config = ModelConfig(d=d, arc_dim=arc_dim, label_dim=label_dim, layers=layers, heads=heads, ff=ff,
                             max_len=max_len, use_position_encoding=bool(flags & 1), seed=seed)
        model = ParserModel(vocab, config)
        (count,) = _read(f, "<I")
        state = {}
        for _ in range(count):
            name = _read_str(f)
            (ndim,) = _read(f, "<I")
            shape = _read(f, f"<{ndim}I") if ndim else ()
            nbytes = 4 * int(np.prod(shape, dtype=np.int64))
            buf = f.read(nbytes)
            if len(buf) != nbytes:
                raise CheckpointError(f"{path}: truncated parameter {name}")
            state[name] = torch.from_numpy(np.frombuffer(buf, dtype="<f4").reshape(shape).copy())
    model.load_state_dict(state)
    return model


def config_dict(config: ModelConfig) -> dict:
    return asdict(config)
