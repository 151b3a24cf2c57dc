"""Phase-two training: fit the shadow tower on per-prefix labels while the
language tower stays frozen.

Labels come from synthetic tasks whose ground truth is an exact, pure
function of the token prefix, so every supervision target is verifiable
by recomputation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import parameter_checksum
from .doppelganger import BicameralModel, doppel_forward, parameters as doppel_parameters
from .language import FrozenModelError, forward, named_parameters as lm_named
from .optim import OptimConfig
from .tensor import Tensor


@dataclass
class SupervisedSequence:
    """Token ids plus one label row per prefix.

    labels[t][i] is ground-truth signal i for the prefix tokens[0..t],
    always in [0, 1].
    """

    tokens: list[int]
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.labels.ndim != 2 or self.labels.shape[0] != len(self.tokens):
            raise ValueError(f"labels shape {self.labels.shape} does not give one "
                             f"row per token ({len(self.tokens)})")
        if self.labels.size and (self.labels.min() < 0.0 or self.labels.max() > 1.0):
            raise ValueError("labels must lie in [0, 1]")

    @property
    def n_objectives(self) -> int:
        return self.labels.shape[1]


TASK_KINDS = ("forbidden-token", "prefix-parity", "sentiment-lexicon")


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """A labelled-data stand-in whose labels are exact prefix functions.

    kinds:
      forbidden-token   label 1 once any forbidden id has appeared
      prefix-parity     label = parity of how often a marked id appeared
      sentiment-lexicon label = (1 + mean lexicon polarity so far) / 2,
                        0.5 before any lexicon token
    """

    kind: str
    vocab_size: int
    n_sequences: int = 256
    val_fraction: float = 0.25
    min_len: int = 12
    max_len: int = 28
    seed: int = 0
    forbidden_ids: tuple[int, ...] = ()
    parity_ids: tuple[int, ...] = ()
    positive_ids: tuple[int, ...] = ()
    negative_ids: tuple[int, ...] = ()
    corpus_tokens: tuple[int, ...] | None = None
    balance: float = 0.5

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; choose from {TASK_KINDS}")
        if self.n_sequences < 1:
            raise ValueError("n_sequences must be >= 1")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ValueError("val_fraction must be in [0, 1)")
        if not (1 <= self.min_len <= self.max_len):
            raise ValueError("need 1 <= min_len <= max_len")
        if self.corpus_tokens is not None and len(self.corpus_tokens) == 0:
            raise ValueError("corpus is empty")
        for name in ("forbidden_ids", "parity_ids", "positive_ids", "negative_ids"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.corpus_tokens is not None:
            object.__setattr__(self, "corpus_tokens", tuple(self.corpus_tokens))

    def label_fn(self):
        """The task's pure prefix-label function, tokens -> [T, 1] floats."""
        if self.kind == "forbidden-token":
            forbidden = frozenset(self.forbidden_ids)

            def fn(tokens):
                hit = np.fromiter((t in forbidden for t in tokens), dtype=np.float64)
                return np.maximum.accumulate(hit)[:, None]
        elif self.kind == "prefix-parity":
            marked = frozenset(self.parity_ids)

            def fn(tokens):
                hits = np.fromiter((t in marked for t in tokens), dtype=np.float64)
                return (np.cumsum(hits) % 2.0)[:, None]
        else:
            pos, neg = frozenset(self.positive_ids), frozenset(self.negative_ids)

            def fn(tokens):
                p = np.cumsum([t in pos for t in tokens]).astype(np.float64)
                n = np.cumsum([t in neg for t in tokens]).astype(np.float64)
                total = p + n
                polarity = np.divide(p - n, total, out=np.zeros_like(total),
                                     where=total > 0)
                return ((1.0 + polarity) / 2.0)[:, None]
        return fn


def _draw_tokens(spec: SyntheticTaskSpec, rng: np.random.Generator) -> list[int]:
    length = int(rng.integers(spec.min_len, spec.max_len + 1))
    if spec.corpus_tokens is not None:
        corpus = spec.corpus_tokens
        if len(corpus) < length:
            length = len(corpus)
        start = int(rng.integers(0, len(corpus) - length + 1))
        return list(corpus[start:start + length])
    tokens = rng.integers(0, spec.vocab_size, size=length)
    if spec.kind == "forbidden-token" and spec.forbidden_ids:
        # keep both label classes present: half the sequences are scrubbed
        # clean, the rest get at least one forbidden token at a random spot
        forbidden = np.asarray(sorted(spec.forbidden_ids))
        if rng.uniform() < spec.balance:
            clean = np.setdiff1d(np.arange(spec.vocab_size), forbidden)
            tokens = clean[rng.integers(0, len(clean), size=length)]
        elif not np.isin(tokens, forbidden).any():
            tokens[rng.integers(0, length)] = forbidden[rng.integers(0, len(forbidden))]
    return [int(t) for t in tokens]


def generate_synthetic_dataset(spec: SyntheticTaskSpec
                               ) -> tuple[list[SupervisedSequence], list[SupervisedSequence]]:
    """Draw sequences and label every prefix with the task's exact function."""
    rng = np.random.default_rng(spec.seed)
    label = spec.label_fn()
    data = []
    for _ in range(spec.n_sequences):
        tokens = _draw_tokens(spec, rng)
        data.append(SupervisedSequence(tokens=tokens, labels=label(tokens)))
    n_val = int(round(spec.n_sequences * spec.val_fraction))
    n_train = spec.n_sequences - n_val
    return data[:n_train], data[n_train:]


def save_dataset(path: str | Path, data: list[SupervisedSequence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in data:
            fh.write(json.dumps({"tokens": list(seq.tokens),
                                 "labels": seq.labels.tolist()}) + "\n")


def load_dataset(path: str | Path) -> list[SupervisedSequence]:
    data = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            data.append(SupervisedSequence(tokens=obj["tokens"],
                                           labels=np.asarray(obj["labels"])))
    return data


@dataclass
class TrainLogEntry:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: list[float]

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss,
                "val_loss": self.val_loss, "val_acc": self.val_acc}


def _cached_taps(bm: BicameralModel, data: list[SupervisedSequence]):
    # the language tower is frozen, so taps per sequence are constants
    # and one pass per sequence serves every epoch
    return [forward(bm.language, seq.tokens)[1] for seq in data]


def _check_labels(data: list[SupervisedSequence], n_objectives: int, name: str):
    if not data:
        raise ValueError(f"{name} dataset is empty")
    for seq in data:
        if seq.n_objectives != n_objectives:
            raise ValueError(f"{name} labels have {seq.n_objectives} objectives, "
                             f"model predicts {n_objectives}")


def _loss_and_metrics(model, taps, data, n_objectives):
    total_loss = 0.0
    correct = np.zeros(n_objectives)
    positions = 0
    for tap, seq in zip(taps, data):
        scores = doppel_forward(model, tap)
        total_loss += T.binary_cross_entropy(scores, Tensor(seq.labels)).item() * len(seq.tokens)
        correct += np.sum((scores.data >= 0.5) == (seq.labels >= 0.5), axis=0)
        positions += len(seq.tokens)
    return total_loss / positions, (correct / positions).tolist()


def train_doppelganger(bm: BicameralModel, train: list[SupervisedSequence],
                       val: list[SupervisedSequence], opt: OptimConfig) -> list[dict]:
    """Minimize mean BCE over all positions and objectives, updating only the
    shadow tower.

    Early-stops when validation BCE fails to improve for ``opt.patience``
    epochs and restores the best-validation parameters. Epoch 0 in the
    returned log is the untouched baseline.
    """
    if not bm.language.frozen:
        raise FrozenModelError("the language component must be frozen before "
                               "training the shadow tower")
    n = bm.doppel.config.n_objectives
    _check_labels(train, n, "train")
    _check_labels(val, n, "val")

    checksum_before = parameter_checksum(lm_named(bm.language))
    params = doppel_parameters(bm.doppel)
    state = T.AdamState.for_params(params)
    rng = np.random.default_rng(opt.seed)

    train_taps = _cached_taps(bm, train)
    val_taps = _cached_taps(bm, val)

    base_train, _ = _loss_and_metrics(bm.doppel, train_taps, train, n)
    base_val, base_acc = _loss_and_metrics(bm.doppel, val_taps, val, n)
    log = [TrainLogEntry(0, base_train, base_val, base_acc)]

    best_val = base_val
    best_params = [p.data.copy() for p in params]
    since_best = 0
    for epoch in range(1, opt.epochs + 1):
        order = rng.permutation(len(train))
        epoch_loss = 0.0
        epoch_positions = 0
        for start in range(0, len(order), opt.batch_size):
            batch = order[start:start + opt.batch_size]
            T.zero_grads(params)
            for i in batch:
                seq = train[i]
                scores = doppel_forward(bm.doppel, train_taps[i])
                loss = T.binary_cross_entropy(scores, Tensor(seq.labels))
                epoch_loss += loss.item() * len(seq.tokens)
                epoch_positions += len(seq.tokens)
                T.scale(loss, 1.0 / len(batch)).backward()
            T.adam_step(params, [p.grad for p in params], state,
                        lr=opt.lr, beta1=opt.beta1, beta2=opt.beta2, eps=opt.eps)
        val_loss, val_acc = _loss_and_metrics(bm.doppel, val_taps, val, n)
        log.append(TrainLogEntry(epoch, epoch_loss / epoch_positions, val_loss, val_acc))
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_params = [p.data.copy() for p in params]
            since_best = 0
        else:
            since_best += 1
            if since_best >= opt.patience:
                break
    for p, best in zip(params, best_params):
        p.data = best
    T.zero_grads(params)

    if parameter_checksum(lm_named(bm.language)) != checksum_before:
        raise FrozenModelError("language parameters changed during shadow training")
    return [entry.to_dict() for entry in log]


def evaluate(bm: BicameralModel, data: list[SupervisedSequence],
             n_buckets: int = 10) -> dict:
    """Pure evaluation: per-objective accuracy, mean BCE, and calibration
    buckets of predicted score vs mean label."""
    n = bm.doppel.config.n_objectives
    _check_labels(data, n, "eval")
    taps = _cached_taps(bm, data)
    bce, acc = _loss_and_metrics(bm.doppel, taps, data, n)

    edges = np.linspace(0.0, 1.0, n_buckets + 1)
    counts = np.zeros(n_buckets, dtype=int)
    pred_sum = np.zeros(n_buckets)
    label_sum = np.zeros(n_buckets)
    for tap, seq in zip(taps, data):
        scores = doppel_forward(bm.doppel, tap).data
        idx = np.clip(np.digitize(scores, edges) - 1, 0, n_buckets - 1)
        for b in range(n_buckets):
            sel = idx == b
            counts[b] += int(sel.sum())
            pred_sum[b] += float(scores[sel].sum())
            label_sum[b] += float(seq.labels[sel].sum())
    calibration = []
    for b in range(n_buckets):
        calibration.append({
            "bucket": [float(edges[b]), float(edges[b + 1])],
            "count": int(counts[b]),
            "mean_score": float(pred_sum[b] / counts[b]) if counts[b] else None,
            "mean_label": float(label_sum[b] / counts[b]) if counts[b] else None,
        })
    return {"bce": bce, "accuracy": acc, "calibration": calibration,
            "n_positions": int(sum(len(s.tokens) for s in data))}
