"""Decoder-only transformer whose per-module outputs are exposed as taps.

Blocks are pre-norm residual (norm -> attention -> add, norm -> FFN ->
add). The tap recorded for module k is its post-residual output, i.e.
exactly the tensor the next module receives; tap 0 is the positionally
encoded token embeddings. Once frozen, the tower's parameters stop
tracking gradients, so its taps enter downstream graphs as plain values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import parameter_checksum
from .optim import OptimConfig
from .tensor import Tensor


class FrozenModelError(RuntimeError):
    """A training step was asked to mutate a frozen model."""


class SequenceError(ValueError):
    """Token sequence violates a forward-pass precondition."""


@dataclass(frozen=True)
class LMConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 256
    max_seq_len: int = 256

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"LMConfig.{name} must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model={self.d_model} is not divisible by "
                             f"n_heads={self.n_heads}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return {"vocab_size": self.vocab_size, "d_model": self.d_model,
                "n_layers": self.n_layers, "n_heads": self.n_heads,
                "d_ff": self.d_ff, "max_seq_len": self.max_seq_len}


@dataclass
class AttentionModuleParams:
    """One attention module: per-head projections, output mix, FFN, norms."""

    wq: list[Tensor]
    wk: list[Tensor]
    wv: list[Tensor]
    wo: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = []
        for h, (q, k, v) in enumerate(zip(self.wq, self.wk, self.wv)):
            out += [(f"{prefix}.head{h}.wq", q), (f"{prefix}.head{h}.wk", k),
                    (f"{prefix}.head{h}.wv", v)]
        out += [(f"{prefix}.wo", self.wo),
                (f"{prefix}.ffn.w1", self.w1), (f"{prefix}.ffn.b1", self.b1),
                (f"{prefix}.ffn.w2", self.w2), (f"{prefix}.ffn.b2", self.b2),
                (f"{prefix}.ln1.gain", self.ln1_gain), (f"{prefix}.ln1.bias", self.ln1_bias),
                (f"{prefix}.ln2.gain", self.ln2_gain), (f"{prefix}.ln2.bias", self.ln2_bias)]
        return out


@dataclass
class LanguageModel:
    config: LMConfig
    embedding: Tensor
    blocks: list[AttentionModuleParams]
    lnf_gain: Tensor
    lnf_bias: Tensor
    head: Tensor
    frozen: bool = False
    checksum: int | None = None
    forward_calls: int = 0


@dataclass
class LayerTaps:
    """Per-module probe values for one sequence.

    ``tensors[0]`` is the positionally encoded embeddings; ``tensors[k]``
    for k >= 1 is the output of attention module k. All entries are
    [T, d_model].
    """

    tensors: list[Tensor]
    d_model: int = field(init=False)

    def __post_init__(self):
        widths = {t.shape[-1] for t in self.tensors}
        if len(widths) != 1:
            raise ValueError(f"mixed tap widths: {sorted(widths)}")
        self.d_model = widths.pop()

    def __len__(self) -> int:
        return len(self.tensors)

    def __getitem__(self, k: int) -> Tensor:
        return self.tensors[k]


def _init_matrix(rng: np.random.Generator | None, rows: int, cols: int,
                 std: float = 0.02) -> Tensor:
    if rng is None:
        data = np.zeros((rows, cols))
    else:
        data = rng.normal(0.0, std, size=(rows, cols))
    return Tensor(data, requires_grad=True)


def init_attention_module(d: int, n_heads: int, d_ff: int,
                          rng: np.random.Generator | None) -> AttentionModuleParams:
    dh = d // n_heads
    ones = lambda n: Tensor(np.ones(n), requires_grad=True)
    zeros = lambda n: Tensor(np.zeros(n), requires_grad=True)
    return AttentionModuleParams(
        wq=[_init_matrix(rng, d, dh) for _ in range(n_heads)],
        wk=[_init_matrix(rng, d, dh) for _ in range(n_heads)],
        wv=[_init_matrix(rng, d, dh) for _ in range(n_heads)],
        wo=_init_matrix(rng, d, d),
        w1=_init_matrix(rng, d, d_ff), b1=zeros(d_ff),
        w2=_init_matrix(rng, d_ff, d), b2=zeros(d),
        ln1_gain=ones(d), ln1_bias=zeros(d),
        ln2_gain=ones(d), ln2_bias=zeros(d),
    )


def init_language_model(config: LMConfig,
                        rng: np.random.Generator | None = None) -> LanguageModel:
    """Fresh model: normal(0, 0.02) projections, zero biases, unit norm gains.

    The embedding table starts at unit scale so token identity is not
    drowned out by the unit-scale positional table; a frozen tower's
    probes must carry the token signal as-is.

    ``rng=None`` zero-initializes, for models about to be loaded from a
    checkpoint.
    """
    return LanguageModel(
        config=config,
        embedding=_init_matrix(rng, config.vocab_size, config.d_model, std=1.0),
        blocks=[init_attention_module(config.d_model, config.n_heads, config.d_ff, rng)
                for _ in range(config.n_layers)],
        lnf_gain=Tensor(np.ones(config.d_model), requires_grad=True),
        lnf_bias=Tensor(np.zeros(config.d_model), requires_grad=True),
        head=_init_matrix(rng, config.d_model, config.vocab_size),
    )


def named_parameters(model: LanguageModel) -> list[tuple[str, Tensor]]:
    out = [("embedding", model.embedding)]
    for k, block in enumerate(model.blocks):
        out += block.named(f"block{k}")
    out += [("lnf.gain", model.lnf_gain), ("lnf.bias", model.lnf_bias),
            ("head", model.head)]
    return out


def parameters(model: LanguageModel) -> list[Tensor]:
    return [p for _, p in named_parameters(model)]


def load_parameters(model: LanguageModel, values: dict[str, np.ndarray],
                    prefix: str = "") -> None:
    for name, param in named_parameters(model):
        key = prefix + name
        if key not in values:
            raise KeyError(f"checkpoint is missing parameter {key!r}")
        arr = values[key]
        if arr.shape != param.shape:
            raise ValueError(f"parameter {key!r} has shape {arr.shape}, "
                             f"expected {param.shape}")
        param.data = arr.astype(np.float64).copy()


def freeze(model: LanguageModel) -> None:
    """Mark the tower immutable and record its parameter checksum.

    Frozen parameters stop requiring gradients, so every downstream
    graph sees the tower's outputs as constants.
    """
    model.frozen = True
    for p in parameters(model):
        p.requires_grad = False
    model.checksum = parameter_checksum(named_parameters(model))


def positional_encode(embeddings: Tensor, max_seq_len: int) -> Tensor:
    """Add the fixed sinusoidal position table to [T, d] embeddings.

    pe[pos, 2i] = sin(pos / 10000^(2i/d)), pe[pos, 2i+1] = cos(same).
    The table is a pure function of position, independent of the tokens.
    """
    t, d = embeddings.shape
    if t > max_seq_len:
        raise SequenceError(f"sequence of length {t} exceeds max_seq_len={max_seq_len}")
    pe = sinusoid_table(t, d)
    return T.add(embeddings, Tensor(pe))


def sinusoid_table(t: int, d: int) -> np.ndarray:
    pos = np.arange(t, dtype=np.float64)[:, None]
    pe = np.zeros((t, d))
    half = (d + 1) // 2
    div = np.power(10000.0, (2.0 * np.arange(half)) / d)
    angles = pos / div[None, :]
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : d // 2])
    return pe


def causal_mask(t: int) -> np.ndarray:
    """Boolean [T, T] mask, true where position i must not see position j > i."""
    return np.triu(np.ones((t, t), dtype=bool), k=1)


def attention_module(params: AttentionModuleParams, x: Tensor,
                     mask: np.ndarray) -> Tensor:
    """Pre-norm residual block: masked multi-head attention then FFN."""
    dh = params.wq[0].shape[1]
    inv_sqrt = 1.0 / math.sqrt(dh)

    h = T.layer_norm(x, params.ln1_gain, params.ln1_bias)
    heads: list[Tensor] = []
    for wq, wk, wv in zip(params.wq, params.wk, params.wv):
        q = T.matmul(h, wq)
        k = T.matmul(h, wk)
        v = T.matmul(h, wv)
        scores = T.scale(T.matmul(q, T.transpose(k)), inv_sqrt)
        scores = T.masked_fill(scores, mask, float("-inf"))
        heads.append(T.matmul(T.softmax(scores, axis=-1), v))
    merged = heads[0]
    for extra in heads[1:]:
        merged = T.concat_last(merged, extra)
    x = T.add(x, T.matmul(merged, params.wo))

    f = T.layer_norm(x, params.ln2_gain, params.ln2_bias)
    f = T.add(T.matmul(f, params.w1), params.b1)
    f = T.add(T.matmul(T.gelu(f), params.w2), params.b2)
    return T.add(x, f)


def _validate_ids(tokens, vocab_size: int, max_seq_len: int) -> np.ndarray:
    ids = np.asarray(tokens)
    if ids.ndim != 1 or ids.size == 0:
        raise SequenceError("token sequence must be non-empty and 1-d")
    if not np.issubdtype(ids.dtype, np.integer):
        raise SequenceError("token ids must be integers")
    if ids.min() < 0 or ids.max() >= vocab_size:
        bad = int(ids[(ids < 0) | (ids >= vocab_size)][0])
        raise SequenceError(f"token id {bad} out of range for vocabulary "
                            f"of {vocab_size}")
    if ids.size > max_seq_len:
        raise SequenceError(f"sequence of length {ids.size} exceeds "
                            f"max_seq_len={max_seq_len}")
    return ids


def forward(model: LanguageModel, tokens) -> tuple[Tensor, LayerTaps]:
    """Causal forward pass: next-token logits plus the tap stack.

    logits[t] depends only on tokens[0..t]; so do all taps at position t.
    """
    cfg = model.config
    ids = _validate_ids(tokens, cfg.vocab_size, cfg.max_seq_len)
    model.forward_calls += 1

    x = positional_encode(T.embedding_lookup(model.embedding, ids), cfg.max_seq_len)
    taps = [x]
    mask = causal_mask(ids.size)
    for block in model.blocks:
        x = attention_module(block, x, mask)
        taps.append(x)
    h = T.layer_norm(x, model.lnf_gain, model.lnf_bias)
    logits = T.matmul(h, model.head)
    return logits, LayerTaps(taps)


def pretrain(model: LanguageModel, corpus: list, opt: OptimConfig) -> list[dict]:
    """Next-token training on a list of token sequences.

    Gradients are averaged over each batch of sequences before the Adam
    step. Returns one record per epoch: {"epoch", "train_loss"}.
    """
    if model.frozen:
        raise FrozenModelError("cannot pretrain a frozen language model")
    sequences = [np.asarray(s) for s in corpus]
    if not sequences:
        raise ValueError("pretraining corpus is empty")
    for s in sequences:
        if s.size < 2:
            raise ValueError("next-token training needs sequences of length >= 2")

    params = parameters(model)
    state = T.AdamState.for_params(params)
    rng = np.random.default_rng(opt.seed)
    log: list[dict] = []
    for epoch in range(1, opt.epochs + 1):
        order = rng.permutation(len(sequences))
        losses = []
        for start in range(0, len(order), opt.batch_size):
            batch = order[start:start + opt.batch_size]
            T.zero_grads(params)
            for i in batch:
                seq = sequences[i]
                logits, _ = forward(model, seq[:-1])
                loss = T.cross_entropy(logits, seq[1:])
                losses.append(loss.item())
                T.scale(loss, 1.0 / len(batch)).backward()
            T.adam_step(params, [p.grad for p in params], state,
                        lr=opt.lr, beta1=opt.beta1, beta2=opt.beta2, eps=opt.eps)
        log.append({"epoch": epoch, "train_loss": float(np.mean(losses))})
    T.zero_grads(params)
    return log


# ---------------------------------------------------------------------------
# character tokenizer
# ---------------------------------------------------------------------------

_ALPHABET_ESCAPES = {"\\n": "\n", "\\t": "\t", "\\\\": "\\"}


class CharTokenizer:
    """Character-level tokenizer over a fixed alphabet.

    The alphabet file holds one character per line; the line index is
    the token id. The escape lines ``\\n``, ``\\t`` and ``\\\\`` stand
    for newline, tab and backslash.
    """

    def __init__(self, chars: list[str]):
        if not chars:
            raise ValueError("alphabet is empty")
        if any(len(c) != 1 for c in chars):
            bad = next(c for c in chars if len(c) != 1)
            raise ValueError(f"alphabet entries must be single characters, got {bad!r}")
        if len(set(chars)) != len(chars):
            raise ValueError("alphabet contains duplicate characters")
        self.chars = list(chars)
        self._to_id = {c: i for i, c in enumerate(chars)}

    @classmethod
    def from_file(cls, path: str | Path) -> "CharTokenizer":
        chars = []
        for line in Path(path).read_text(encoding="utf-8").split("\n"):
            if line == "":
                continue
            chars.append(_ALPHABET_ESCAPES.get(line, line))
        return cls(chars)

    @property
    def vocab_size(self) -> int:
        return len(self.chars)

    def encode(self, text: str) -> list[int]:
        try:
            return [self._to_id[c] for c in text]
        except KeyError as exc:
            raise ValueError(f"character {exc.args[0]!r} is not in the alphabet") from exc

    def decode(self, ids) -> str:
        return "".join(self.chars[int(i)] for i in ids)

    def to_lines(self) -> list[str]:
        reverse = {v: k for k, v in _ALPHABET_ESCAPES.items()}
        return [reverse.get(c, c) for c in self.chars]
