"""Training: batching with permuted positives, SGD updates, checkpoint selection."""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .augment import AugmentConfig, PermutationMap, build_augmented_corpus, permute_sentence, sample_negative
from .conllu import InvalidTreeError, Sentence, Treebank, validate_tree
from .config import from_mapping, read_kv
from .evaluate import score
from .loss import contrastive_loss, cross_entropy_loss, cssl_loss, joint_loss
from .model import ModelConfig, ParserModel, Vocabulary, backward, save_checkpoint

logger = logging.getLogger(__name__)

__all__ = [
    "Batch",
    "EpochStats",
    "Example",
    "TrainConfig",
    "TrainReport",
    "TrainingDivergedError",
    "fit",
    "make_batches",
    "train_epoch",
]

LOSS_MODES = ("ce", "ce+cssl")
AUGMENTATIONS = ("none", "rotation")
NEGATIVES = ("in-batch", "sampled")


class TrainingDivergedError(FloatingPointError):
    def __init__(self, batch_index: int, ce: float, cssl: float):
        self.batch_index, self.ce, self.cssl = batch_index, ce, cssl
        super().__init__(f"non-finite loss at batch {batch_index}: ce={ce} cssl={cssl}")


@dataclass
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 40
    seed: int = 0
    loss_mode: str = "ce"
    augmentation: str = "none"
    copies: int = 1
    tau: float = 0.1
    lam: float = 1.0
    negatives: str = "in-batch"
    no_position_encoding: bool = False
    fresh_positives_per_epoch: bool = True
    dev_eval_every: int = 1
    clip: float = 1.0
    decoder: str = "mst"
    d: int = 64
    arc_dim: int = 32
    label_dim: int = 32
    layers: int = 2
    heads: int = 4
    ff: int = 128
    max_len: int = 128

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
        if self.augmentation not in AUGMENTATIONS:
            raise ValueError(f"augmentation must be one of {AUGMENTATIONS}")
        if self.negatives not in NEGATIVES:
            raise ValueError(f"negatives must be one of {NEGATIVES}")
        if self.loss_mode == "ce+cssl" and self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 with loss ce+cssl: the contrastive loss needs in-batch negatives")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.dev_eval_every < 1:
            raise ValueError("dev_eval_every must be at least 1")

    @property
    def contrastive(self) -> bool:
        return self.loss_mode == "ce+cssl"

    def model_config(self) -> ModelConfig:
        return ModelConfig(d=self.d, arc_dim=self.arc_dim, label_dim=self.label_dim, layers=self.layers,
                           heads=self.heads, ff=self.ff, max_len=self.max_len,
                           use_position_encoding=not self.no_position_encoding, seed=self.seed)

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        values: dict = read_kv(path)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return from_mapping(cls, values)


@dataclass
class Example:
    original: Sentence
    positive: Sentence | None = None
    permutation: PermutationMap | None = None
    negative: Sentence | None = None


Batch = list[Example]


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng([k & 0xFFFFFFFFFFFFFFFF for k in key])


def make_batches(treebank: Treebank | Sequence[Sentence], cfg: TrainConfig, epoch: int) -> list[Batch]:
    """Shuffled batches for one epoch; positives are attached in ce+cssl mode.

    Shuffling depends on (seed, epoch) only, so both loss modes see the same
    batch composition. A trailing batch of one sentence is folded into the
    previous batch.
    """
    sentences = list(treebank)
    if cfg.contrastive and len(sentences) < 2:
        raise ValueError("contrastive training needs at least 2 training sentences")
    order = _rng(cfg.seed, 0xBA7C, epoch).permutation(len(sentences))
    batches: list[Batch] = []
    for start in range(0, len(order), cfg.batch_size):
        batches.append([Example(sentences[i]) for i in order[start:start + cfg.batch_size]])
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2].extend(batches.pop())

    if cfg.contrastive:
        perm_epoch = epoch if cfg.fresh_positives_per_epoch else 0
        for batch, idx in zip(batches, _batch_indices(order, batches)):
            for ex, i in zip(batch, idx):
                rng = _rng(cfg.seed, 0x9057, perm_epoch, int(i))
                ex.positive, ex.permutation = permute_sentence(ex.original, rng)
                if cfg.negatives == "sampled":
                    ex.negative = sample_negative(ex.original, sentences, _rng(cfg.seed, 0x4E6, epoch, int(i)))
    return batches


def _batch_indices(order, batches):
    pos = 0
    for batch in batches:
        yield order[pos:pos + len(batch)]
        pos += len(batch)


@dataclass
class EpochStats:
    epoch: int
    ce: float
    cssl: float
    dev_uas: float | None = None
    dev_las: float | None = None
    max_grad_norm: float = 0.0


def _gold_tensors(model: ParserModel, sentences: Sequence[Sentence]):
    n = max(len(s) for s in sentences)
    heads = torch.zeros(len(sentences), n, dtype=torch.long)
    labels = torch.zeros(len(sentences), n, dtype=torch.long)
    for b, s in enumerate(sentences):
        heads[b, : len(s)] = torch.tensor(s.heads)
        labels[b, : len(s)] = torch.tensor([model.vocab.label_index(l) for l in s.deprels])
    return heads, labels


def batch_losses(model: ParserModel, batch: Batch, cfg: TrainConfig):
    """(cross-entropy on the originals, contrastive loss or None) for one batch."""
    originals = [ex.original for ex in batch]
    forms, upos, mask = model.tensorize(originals)
    reps, pooled = model.encode_batch(forms, upos, mask)
    heads, labels = _gold_tensors(model, originals)
    arcs = model.score_arcs(reps, mask)
    label_scores = model.score_labels(reps, heads)
    ce = cross_entropy_loss(arcs, label_scores, heads, labels, [len(s) for s in originals])
    if not cfg.contrastive:
        return ce, None
    _, pooled_pos = model.encode_batch(*model.tensorize([ex.positive for ex in batch]))
    if cfg.negatives == "sampled":
        _, pooled_neg = model.encode_batch(*model.tensorize([ex.negative for ex in batch]))
        cl = contrastive_loss(pooled, pooled_pos, pooled_neg, cfg.tau)
    else:
        cl = cssl_loss(pooled, pooled_pos, cfg.tau)
    return ce, cl


def train_epoch(model: ParserModel, batches: Sequence[Batch], cfg: TrainConfig,
                optimizer: torch.optim.Optimizer, epoch: int = 0,
                grad_norms: list[float] | None = None) -> EpochStats:
    """One pass over ``batches``: loss, backward, clip to ``cfg.clip``, SGD step."""
    model.train()
    ce_sum = cl_sum = 0.0
    max_norm = 0.0
    params = [p for p in model.parameters() if p.requires_grad]
    for i, batch in enumerate(batches):
        ce, cl = batch_losses(model, batch, cfg)
        ce_val = float(ce.detach())
        cl_val = float(cl.detach()) if cl is not None else 0.0
        if not (math.isfinite(ce_val) and math.isfinite(cl_val)):
            raise TrainingDivergedError(i, ce_val, cl_val)
        loss = joint_loss(ce, cl, cfg.lam) if cl is not None else ce
        optimizer.zero_grad(set_to_none=True)
        backward(loss, model)
        if cfg.clip > 0:
            torch.nn.utils.clip_grad_norm_(params, cfg.clip)
        norm = float(torch.sqrt(sum((p.grad.detach() ** 2).sum() for p in params if p.grad is not None)))
        max_norm = max(max_norm, norm)
        if grad_norms is not None:
            grad_norms.append(norm)
        optimizer.step()
        ce_sum += ce_val
        cl_sum += cl_val
    n = max(len(batches), 1)
    return EpochStats(epoch, ce_sum / n, cl_sum / n, max_grad_norm=max_norm)


@dataclass
class TrainReport:
    config: dict
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_las: float | None = None
    checkpoint: str | None = None
    seconds: float = field(default=0.0, compare=False)

    def summary(self) -> dict[str, str]:
        out = {k: str(v) for k, v in self.config.items()}
        out.update({
            "epochs_run": str(len(self.epochs)),
            "best_epoch": str(self.best_epoch),
            "best_dev_LAS": "nan" if self.best_dev_las is None else f"{self.best_dev_las:.2f}",
            "checkpoint": str(self.checkpoint),
            "seconds": f"{self.seconds:.1f}",
        })
        return out

    def table(self) -> str:
        lines = ["epoch\tce\tcssl\tdev_UAS\tdev_LAS"]
        for e in self.epochs:
            uas = "-" if e.dev_uas is None else f"{e.dev_uas:.2f}"
            las = "-" if e.dev_las is None else f"{e.dev_las:.2f}"
            lines.append(f"{e.epoch}\t{e.ce:.6f}\t{e.cssl:.6f}\t{uas}\t{las}")
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        """key=value summary, a blank line, then the per-epoch table."""
        with open(path, "w", encoding="utf-8") as f:
            for k, v in self.summary().items():
                f.write(f"{k}={v}\n")
            f.write("\n")
            f.write(self.table())


def _require_valid(treebank, name):
    for s in treebank:
        report = validate_tree(s)
        if report:
            raise InvalidTreeError(report, f"{name}:{s.sent_id}")


def fit(train: Treebank, dev: Treebank | None, cfg: TrainConfig, out_dir: str | Path | None = None,
        model: ParserModel | None = None, checkpoint: str | Path | None = None,
        log_path: str | Path | None = None, summary_path: str | Path | None = None,
        ) -> tuple[ParserModel, TrainReport]:
    """Train and return the best-dev-LAS model together with its report.

    The best epoch is the first one reaching the highest dev LAS; epoch 0
    is the untrained model. Without a dev set the last epoch wins.
    ``out_dir`` is shorthand for ``model.ckpt``, ``train.log`` and
    ``summary.txt`` inside that directory; explicit paths take precedence.
    """
    started = time.perf_counter()
    _require_valid(train, "train")
    if dev is not None:
        _require_valid(dev, "dev")
    if cfg.augmentation == "rotation":
        train = build_augmented_corpus(train, AugmentConfig(copies_per_sentence=cfg.copies, seed=cfg.seed))
    if model is None:
        model = ParserModel(Vocabulary.build(train), cfg.model_config())
    optimizer = torch.optim.SGD(model.parameters(), lr=cfg.learning_rate, momentum=cfg.momentum)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        checkpoint = checkpoint or out / "model.ckpt"
        log_path = log_path or out / "train.log"
        summary_path = summary_path or out / "summary.txt"
    log = None
    if log_path is not None:
        try:
            log = open(log_path, "w", encoding="utf-8")
        except OSError as e:
            raise OSError(f"cannot write training log {log_path}: {e}") from e

    report = TrainReport(config=asdict(cfg))

    def evaluate(epoch):
        if dev is None:
            return None
        model.eval()
        return score(dev, model.parse(dev, decoder=cfg.decoder))

    best_state = copy.deepcopy(model.state_dict())
    res = evaluate(0)
    report.best_dev_las = res.las if res is not None else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            batches = make_batches(train, cfg, epoch)
            stats = train_epoch(model, batches, cfg, optimizer, epoch)
            if epoch % cfg.dev_eval_every == 0 or epoch == cfg.epochs:
                res = evaluate(epoch)
                if res is not None:
                    stats.dev_uas, stats.dev_las = res.uas, res.las
            report.epochs.append(stats)
            improved = (dev is None) or (stats.dev_las is not None and stats.dev_las > report.best_dev_las)
            if improved:
                report.best_epoch = epoch
                report.best_dev_las = stats.dev_las
                best_state = copy.deepcopy(model.state_dict())
            line = (f"epoch={epoch} ce={stats.ce:.6f} cssl={stats.cssl:.6f} "
                    f"dev_uas={stats.dev_uas} dev_las={stats.dev_las}")
            logger.info(line)
            if log is not None:
                log.write(line + "\n")
                log.flush()
    finally:
        if log is not None:
            log.close()

    model.load_state_dict(best_state)
    model.eval()
    report.seconds = time.perf_counter() - started
    if checkpoint is not None:
        try:
            save_checkpoint(model, checkpoint)
        except OSError as e:
            raise OSError(f"cannot write checkpoint {checkpoint}: {e}") from e
        report.checkpoint = str(checkpoint)
    if summary_path is not None:
        try:
            report.write(summary_path)
        except OSError as e:
            raise OSError(f"cannot write training summary {summary_path}: {e}") from e
    return model, report
