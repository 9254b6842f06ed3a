"""Test-time explanation generation: greedy and beam-search decoding."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

import numpy as np

from .corpus import BOS_ID, EOS_ID, UNK_ID, Vocabulary, detokenize
from .errors import ConfigError, ContractError


@dataclass
class GenerationConfig:
    beam_size: int = 4
    max_tokens: int = 100
    keep_sentences: int = 2
    n_sentences_model: int | None = None  # sentence slots to decode; defaults to keep_sentences
    allow_unk: bool = True

    def __post_init__(self):
        if self.beam_size < 1:
            raise ConfigError("beam_size must be at least 1")
        if self.max_tokens < 1:
            raise ConfigError("max_tokens must be at least 1")
        if self.keep_sentences < 1:
            raise ConfigError("keep_sentences must be at least 1")

    @property
    def slots(self) -> int:
        return self.n_sentences_model or self.keep_sentences


@dataclass
class Hypothesis:
    token_ids: list[int]
    log_likelihood: float
    word_state: Any  # state that produced the last prediction
    finished: bool = False
    last_input: int = BOS_ID

    def key(self):
        return (-self.log_likelihood, tuple(self.token_ids))


class Scorer(Protocol):
    """Next-token log-probabilities for a batch of hypotheses.

    ``step(states, inputs)`` consumes one input token per state and returns
    ``(log_probs (k, |V|), new_states)``.
    """

    vocab_size: int

    def step(self, states: Sequence[Any], inputs: Sequence[int]) -> tuple[np.ndarray, list]: ...


def _expand(scorer: Scorer, open_beams: list[Hypothesis], banned: Sequence[int]):
    logp, states = scorer.step([h.word_state for h in open_beams], [h.last_input for h in open_beams])
    logp = np.array(logp, dtype=np.float64, copy=True)
    if banned:
        logp[:, list(banned)] = -np.inf
    return logp, states


def beam_step(beams: list[Hypothesis], scorer: Scorer, beam_size: int, max_len: int,
              eos: int = EOS_ID, banned: Sequence[int] = ()) -> list[Hypothesis]:
    """Extend every unfinished beam by one token and keep the best ``beam_size``.

    Finished beams carry over unchanged and compete on total log-likelihood.
    """
    open_beams = [h for h in beams if not h.finished]
    if not open_beams:
        return list(beams)
    logp, states = _expand(scorer, open_beams, banned)
    candidates = [h for h in beams if h.finished]
    for row, h in enumerate(open_beams):
        scores = h.log_likelihood + logp[row]
        # only the top beam_size continuations of one beam can survive
        top = np.argsort(-scores, kind="stable")[:beam_size]
        for tok in top:
            tok = int(tok)
            if not np.isfinite(scores[tok]):
                continue
            ids = h.token_ids + [tok]
            candidates.append(
                Hypothesis(ids, float(scores[tok]), states[row], tok == eos or len(ids) >= max_len, tok)
            )
    candidates.sort(key=Hypothesis.key)
    return candidates[:beam_size]


def beam_search(scorer: Scorer, state, beam_size: int, max_len: int, eos: int = EOS_ID,
                banned: Sequence[int] = ()) -> Hypothesis:
    beams = [Hypothesis([], 0.0, state)]
    while any(not h.finished for h in beams):
        beams = beam_step(beams, scorer, beam_size, max_len, eos, banned)
    return min(beams, key=Hypothesis.key)


def greedy_decode(scorer: Scorer, state, max_len: int, eos: int = EOS_ID, banned: Sequence[int] = ()) -> Hypothesis:
    h = Hypothesis([], 0.0, state)
    while not h.finished:
        logp, states = _expand(scorer, [h], banned)
        tok = int(np.argmax(logp[0]))
        ids = h.token_ids + [tok]
        h = Hypothesis(ids, h.log_likelihood + float(logp[0, tok]), states[0], tok == eos or len(ids) >= max_len, tok)
    return h


class ModelScorer:
    """Adapts an :class:`~hss.model.HSSModel` to the scorer protocol for one (user, item)."""

    def __init__(self, model, u: np.ndarray, v: np.ndarray):
        self.model = model
        self.u = u
        self.v = v
        self.vocab_size = model.cfg.vocab_size

    def step(self, states, inputs):
        k = len(states)
        h = np.vstack(states)
        u = np.repeat(self.u, k, axis=0)
        v = np.repeat(self.v, k, axis=0)
        w = self.model.word_input(np.asarray(inputs, dtype=np.int64), u, v)
        h_new = self.model.word_step(h, w).value
        logp = self.model.output_log_distribution(h_new).value
        return logp, [h_new[i : i + 1] for i in range(k)]


@dataclass
class Generation:
    sentences: list[list[int]] = field(default_factory=list)  # each ends in EOS unless cut by the budget
    log_likelihoods: list[float] = field(default_factory=list)

    def tokens(self) -> list[int]:
        return [t for s in self.sentences for t in s]

    def text(self, vocab: Vocabulary) -> str:
        return " ".join(detokenize(vocab.decode(s)) for s in self.sentences if vocab.decode(s))


def generate(model, user_index: int, item_index: int, cfg: GenerationConfig | None = None) -> Generation:
    """Decode sentence by sentence, chaining the context GRU through each chosen beam."""
    cfg = cfg or GenerationConfig()
    if model is None or not getattr(model, "params", None):
        raise ContractError("generate needs a model with parameters")
    u_t, v_t = model.embed(user_index, item_index)
    u, v = u_t.value, v_t.value
    c = model.context_init(u, v).value
    scorer = ModelScorer(model, u, v)
    banned = () if cfg.allow_unk else (UNK_ID,)
    remaining = cfg.max_tokens
    out = Generation()
    for _ in range(cfg.slots):
        if remaining <= 0:
            break
        o, _ = model.feature_attention(c)
        h0 = model.sentence_init(c, u, v, o.value).value
        best = beam_search(scorer, h0, cfg.beam_size, remaining, banned=banned)
        out.sentences.append(best.token_ids)
        out.log_likelihoods.append(best.log_likelihood)
        remaining -= len(best.token_ids)
        c = model.context_step(c, best.word_state).value
    return truncate_sentences(out, cfg.keep_sentences)


def truncate_sentences(gen: Generation, keep: int) -> Generation:
    """Keep the first ``keep`` EOS-delimited sentences."""
    flat = gen.tokens()
    sentences, cur = [], []
    for tok in flat:
        cur.append(tok)
        if tok == EOS_ID:
            sentences.append(cur)
            cur = []
    if cur:
        sentences.append(cur)
    return Generation(sentences[:keep], gen.log_likelihoods[:keep])
