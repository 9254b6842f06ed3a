"""The hierarchical sequence-to-sequence network and its multi-task loss.

All computations are row-batched: ``u``/``v``/hidden states are ``(B, d)``.
Weight matrices are stored ``(out, in)`` and applied with :func:`linear`.
GRU weights stack the reset, update and candidate gates along the rows.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import Batch
from .errors import ConfigError, ContractError


@dataclass
class ModelConfig:
    n_users: int
    n_items: int
    vocab_size: int
    feature_indices: tuple[int, ...]
    d: int = 300
    rating_layers: int = 4
    gen_layers: int = 3
    dropout: float = 0.1
    init_std: float = 0.05

    def __post_init__(self):
        self.feature_indices = tuple(sorted(int(i) for i in self.feature_indices))
        if not self.feature_indices:
            raise ConfigError("the feature lexicon is empty after vocabulary filtering")
        if self.rating_layers < 1:
            raise ConfigError("rating_layers must be at least 1")
        if self.gen_layers < 2:
            raise ConfigError("gen_layers must be at least 2")
        if max(self.feature_indices) >= self.vocab_size:
            raise ConfigError("feature index outside the vocabulary")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["feature_indices"] = list(self.feature_indices)
        return out


@dataclass
class ForwardOutput:
    predicted_rating: np.ndarray  # (B,)
    log_probs: list[np.ndarray] = field(default_factory=list)  # per slot, (T, B, |V|)
    attention: list[np.ndarray] = field(default_factory=list)  # per slot, (B, |K|)
    sentence_nll: list[np.ndarray] = field(default_factory=list)  # per slot, (B,)


@dataclass
class LossTerms:
    joint: Tensor
    rating: Tensor
    generation: Tensor
    output: ForwardOutput


GRU_CTX = ("ctx.W_x", "ctx.W_h", "ctx.b")
GRU_WRD = ("wrd.W_x", "wrd.W_h", "wrd.b")


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Linear layers and embeddings ~ normal(0, std); GRU gate blocks orthogonal; biases zero."""
    rng = np.random.default_rng(seed)
    d = cfg.d
    p: dict[str, Tensor] = {}

    def normal(name, shape):
        p[name] = ad.init(shape, "normal", rng, cfg.init_std, name=name)

    def zeros(name, shape):
        p[name] = ad.init(shape, "zeros", name=name)

    def gru(prefix, d_in):
        wx = np.concatenate([ad.init((d, d_in), "orthogonal", rng).value for _ in range(3)])
        wh = np.concatenate([ad.init((d, d), "orthogonal", rng).value for _ in range(3)])
        p[f"{prefix}.W_x"] = Tensor(wx, requires_grad=True, name=f"{prefix}.W_x")
        p[f"{prefix}.W_h"] = Tensor(wh, requires_grad=True, name=f"{prefix}.W_h")
        zeros(f"{prefix}.b", 3 * d)

    normal("emb.U", (cfg.n_users, d))
    normal("emb.V", (cfg.n_items, d))
    normal("emb.E", (cfg.vocab_size, d))

    normal("rating.W_uh", (d, d))
    normal("rating.W_vh", (d, d))
    zeros("rating.b_h", d)
    for layer in range(1, cfg.rating_layers):
        normal(f"rating.W_{layer}", (d, d))
        zeros(f"rating.b_{layer}", d)
    normal("rating.W_out", (1, d))
    zeros("rating.b_out", 1)

    normal("attn.W1", (d, 2 * d))
    zeros("attn.b1", d)
    normal("attn.w2", (1, d))
    zeros("attn.b2", 1)

    gru("ctx", d)
    normal("ctx.W_u0", (d, d))
    normal("ctx.W_v0", (d, d))
    zeros("ctx.b0", d)

    gru("wrd", d)

    normal("fuse.W_s", (d, 3 * d))
    zeros("fuse.b_s", d)
    for layer in range(1, cfg.gen_layers - 1):
        normal(f"fuse.W_{layer}", (d, d))
        zeros(f"fuse.b_{layer}", d)
    normal("fuse.W_L", (d, d))
    zeros("fuse.b_L", d)

    normal("init.W1", (d, 4 * d))
    zeros("init.b1", d)
    normal("init.W2", (d, d))
    zeros("init.b2", d)

    normal("out.W", (cfg.vocab_size, d))
    zeros("out.b", cfg.vocab_size)
    return p


def _rows(x) -> Tensor:
    """Promote a vector to a single-row matrix."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    return ad.reshape(x, (1, -1)) if x.ndim == 1 else x


class HSSModel:
    """Parameters plus the forward equations of the rating head and the
    hierarchical explanation decoder."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)
        self.features = np.array(cfg.feature_indices, dtype=np.int64)
        self.dropout_rng = np.random.default_rng(seed)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    @property
    def clip_groups(self) -> list[tuple[str, ...]]:
        return [GRU_CTX, GRU_WRD]

    # -- rating regression -------------------------------------------------------------

    def embed(self, users, items) -> tuple[Tensor, Tensor]:
        return (
            ad.embedding_lookup(self["emb.U"], np.atleast_1d(users)),
            ad.embedding_lookup(self["emb.V"], np.atleast_1d(items)),
        )

    def rating_from_embeddings(self, u: Tensor, v: Tensor, training: bool = False) -> Tensor:
        h = ad.tanh(ad.linear(u, self["rating.W_uh"]) + ad.linear(v, self["rating.W_vh"], self["rating.b_h"]))
        for layer in range(1, self.cfg.rating_layers):
            h = ad.dropout(h, self.cfg.dropout, training, self.dropout_rng)
            h = ad.tanh(ad.linear(h, self[f"rating.W_{layer}"], self[f"rating.b_{layer}"]))
        h = ad.dropout(h, self.cfg.dropout, training, self.dropout_rng)
        r = ad.linear(h, self["rating.W_out"], self["rating.b_out"])
        return ad.reshape(r, (-1,))

    def rating_forward(self, users, items, training: bool = False) -> Tensor:
        u, v = self.embed(users, items)
        return self.rating_from_embeddings(u, v, training)

    # -- explanation generation -----------------------------------------------------------

    def feature_embeddings(self) -> Tensor:
        return ad.embedding_lookup(self["emb.E"], self.features)

    def feature_attention(self, h) -> tuple[Tensor, Tensor]:
        """Score every feature word against each state row; return ``(o, alpha)``."""
        h = _rows(h)
        b, n_k = h.shape[0], len(self.features)
        k = self.feature_embeddings()
        x = ad.concat(
            [
                ad.embedding_lookup(h, np.repeat(np.arange(b), n_k)),
                ad.embedding_lookup(k, np.tile(np.arange(n_k), b)),
            ],
            axis=1,
        )
        hidden = ad.relu(ad.linear(x, self["attn.W1"], self["attn.b1"]))
        scores = ad.reshape(ad.linear(hidden, self["attn.w2"], self["attn.b2"]), (b, n_k))
        alpha = ad.softmax(scores)
        return ad.matmul(alpha, k), alpha

    def context_init(self, u, v) -> Tensor:
        u, v = _rows(u), _rows(v)
        return ad.relu(ad.linear(u, self["ctx.W_u0"]) + ad.linear(v, self["ctx.W_v0"], self["ctx.b0"]))

    def context_step(self, c_prev, h_last, mask=None) -> Tensor:
        return ad.gru_cell(_rows(h_last), _rows(c_prev), self["ctx.W_x"], self["ctx.W_h"], self["ctx.b"], mask)

    def word_input(self, words, u, v, training: bool = False) -> Tensor:
        """Fuse word, user and item embeddings into the word-GRU input (one row per word)."""
        e = ad.embedding_lookup(self["emb.E"], np.atleast_1d(words))
        s = ad.concat([e, _rows(u), _rows(v)], axis=1)
        h = ad.relu(ad.linear(s, self["fuse.W_s"], self["fuse.b_s"]))
        for layer in range(1, self.cfg.gen_layers - 1):
            h = ad.relu(ad.linear(h, self[f"fuse.W_{layer}"], self[f"fuse.b_{layer}"]))
        w = ad.linear(h, self["fuse.W_L"], self["fuse.b_L"])
        return ad.dropout(w, self.cfg.dropout, training, self.dropout_rng)

    def sentence_init(self, c, u, v, o) -> Tensor:
        x = ad.concat([_rows(c), _rows(u), _rows(v), _rows(o)], axis=1)
        hidden = ad.relu(ad.linear(x, self["init.W1"], self["init.b1"]))
        return ad.linear(hidden, ad.transpose(self["init.W2"]), self["init.b2"])

    def word_step(self, h_prev, w, mask=None) -> Tensor:
        return ad.gru_cell(_rows(w), _rows(h_prev), self["wrd.W_x"], self["wrd.W_h"], self["wrd.b"], mask)

    def output_logits(self, h) -> Tensor:
        return ad.linear(_rows(h), self["out.W"], self["out.b"])

    def output_distribution(self, h) -> Tensor:
        return ad.softmax(self.output_logits(h))

    def output_log_distribution(self, h) -> Tensor:
        return ad.log_softmax(self.output_logits(h))

    # -- full teacher-forced pass ---------------------------------------------------------------

    def decode_slot(self, c: Tensor, u: Tensor, v: Tensor, inputs: np.ndarray, targets: np.ndarray,
                    mask: np.ndarray, training: bool = False):
        """Teacher-forced pass over one sentence slot.

        Returns ``(nll per row, last hidden state, log-probs, alpha)``.
        """
        b, t_len = inputs.shape
        o, alpha = self.feature_attention(c)
        h = self.sentence_init(c, u, v, o)
        time_major = inputs.T.reshape(-1)
        row_of = np.tile(np.arange(b), t_len)
        w_all = self.word_input(
            time_major, ad.embedding_lookup(u, row_of), ad.embedding_lookup(v, row_of), training
        )
        states = []
        for t in range(t_len):
            h = self.word_step(h, w_all[t * b : (t + 1) * b], mask[:, t])
            states.append(h)
        logp = self.output_log_distribution(ad.concat(states, axis=0))
        picked = ad.reshape(ad.pick(logp, targets.T.reshape(-1)), (t_len, b))
        nll = -ad.sum(picked * mask.T, axis=0)
        return nll, h, logp, alpha

    def forward_loss(self, batch: Batch, training: bool = False) -> LossTerms:
        """J = mean squared rating error + (1/B) * sum over rows and sentences of beta * NLL."""
        u, v = self.embed(batch.users, batch.items)
        pred = self.rating_from_embeddings(u, v, training)
        b = len(batch)
        rating = ad.mean((pred - batch.ratings) * (pred - batch.ratings))
        out = ForwardOutput(pred.value.copy())
        c = self.context_init(u, v)
        gen = None
        for slot in batch.slots:
            nll, h_last, logp, alpha = self.decode_slot(c, u, v, slot.inputs, slot.targets, slot.mask, training)
            weighted = ad.sum(nll * (slot.beta * slot.present))
            gen = weighted if gen is None else gen + weighted
            out.log_probs.append(logp.value.reshape(slot.inputs.shape[1], b, -1))
            out.attention.append(alpha.value)
            out.sentence_nll.append(nll.value * slot.present)
            c = self.context_step(c, h_last, slot.present)
        gen = ad.mul(gen, 1.0 / b) if gen is not None else Tensor(0.0)
        return LossTerms(rating + gen, rating, gen, out)

    def joint_loss(self, batch: Batch, training: bool = False) -> Tensor:
        return self.forward_loss(batch, training).joint

    def forward(self, batch: Batch) -> ForwardOutput:
        return self.forward_loss(batch, training=False).output


def rating_loss(predicted: Sequence[float], target: Sequence[float]) -> float:
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.size == 0:
        raise ContractError("rating_loss of an empty batch")
    return float(np.mean((p - t) ** 2))


def sentence_nll(log_probs: np.ndarray, targets: Sequence[int], mask: Sequence[float] | None = None) -> float:
    """Summed negative log-likelihood of ``targets`` under per-step ``log_probs`` (T x |V|)."""
    log_probs = np.asarray(log_probs)
    targets = np.asarray(targets, dtype=np.int64)
    if log_probs.shape[0] != targets.shape[0]:
        raise ContractError(f"{log_probs.shape[0]} steps of log-probs for {targets.shape[0]} targets")
    m = np.ones(len(targets)) if mask is None else np.asarray(mask, dtype=np.float64)
    return float(-np.sum(log_probs[np.arange(len(targets)), targets] * m))

