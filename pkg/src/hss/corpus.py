"""Review corpus ingestion, filtering, splitting, vocabulary and batching."""

from __future__ import annotations

import difflib
import json
import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DataIOError, UnknownIdError

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = range(4)

TERMINATORS = frozenset(".!?")
_TOKEN_RE = re.compile(r"\d+(?:[.,]\d+)+|\w+(?:'\w+)*|[^\w\s]")

DATASET_MAGIC = b"HSSDATA"
DATASET_VERSION = 1


@dataclass(frozen=True)
class RawRecord:
    user_id: str
    item_id: str
    rating: float
    review_text: str
    timestamp: int | None = None


@dataclass(frozen=True)
class SentenceRecord:
    token_ids: tuple[int, ...]  # ends with EOS
    beta: float
    n_feature_words: int
    n_words: int


@dataclass
class Interaction:
    user_index: int
    item_index: int
    rating: float
    sentences: list[SentenceRecord]


@dataclass
class DatasetSplit:
    train: list[Interaction]
    validation: list[Interaction]
    test: list[Interaction]
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __iter__(self):
        return iter((self.train, self.validation, self.test))


class Vocabulary:
    """Token/index map with the four special tokens at indices 0-3."""

    def __init__(self, tokens: Sequence[str], feature_words: Iterable[str] = ()):
        if tuple(tokens[:4]) != SPECIALS:
            raise ContractError("vocabulary must start with the special tokens")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ContractError("duplicate tokens in vocabulary")
        self.feature_indices = frozenset(self.stoi[w] for w in feature_words if w in self.stoi and w not in SPECIALS)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    @property
    def feature_words(self) -> list[str]:
        return [self.itos[i] for i in sorted(self.feature_indices)]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int], strip_specials: bool = True) -> list[str]:
        out = [self.itos[i] for i in ids]
        if strip_specials:
            out = [t for t in out if t not in SPECIALS or t == UNK]
        return out

    def to_dict(self) -> dict:
        return {"tokens": self.itos, "feature_words": self.feature_words}

    @classmethod
    def from_dict(cls, data: dict) -> "Vocabulary":
        return cls(data["tokens"], data["feature_words"])

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos and self.feature_indices == other.feature_indices


# -- reading --------------------------------------------------------------------------


def read_corpus(path) -> list[RawRecord]:
    """Load a JSON-lines corpus."""
    path = Path(path)
    if not path.is_file():
        raise DataIOError(f"corpus file not found: {path}")
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rating = float(obj["rating"])
                rec = RawRecord(
                    str(obj["user_id"]),
                    str(obj["item_id"]),
                    rating,
                    obj.get("review_text") or "",
                    obj.get("timestamp"),
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise DataIOError(f"{path}:{lineno}: bad record ({exc})") from None
            if not np.isfinite(rating):
                raise DataIOError(f"{path}:{lineno}: non-finite rating")
            records.append(rec)
    return records


def read_lexicon(path) -> list[str]:
    path = Path(path)
    if not path.is_file():
        raise DataIOError(f"lexicon file not found: {path}")
    words = []
    for line in path.read_text(encoding="utf-8").splitlines():
        w = line.strip().lower()
        if w and w not in words:
            words.append(w)
    return words


# -- preprocessing -------------------------------------------------------------------------


def filter_users(records: Sequence[RawRecord], min_records: int) -> list[RawRecord]:
    if min_records < 1:
        raise ConfigError("min_records must be at least 1")
    counts = Counter(r.user_id for r in records)
    return [r for r in records if counts[r.user_id] >= min_records]


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def sentence_split_and_tokenize(text: str) -> list[list[str]]:
    """Lowercase, detach punctuation, and split after runs of ``.``, ``!`` or ``?``."""
    tokens = tokenize(text)
    sentences: list[list[str]] = []
    current: list[str] = []
    for i, tok in enumerate(tokens):
        current.append(tok)
        nxt = tokens[i + 1] if i + 1 < len(tokens) else None
        if tok in TERMINATORS and nxt not in TERMINATORS:
            sentences.append(current)
            current = []
    if current:
        sentences.append(current)
    return sentences


def detokenize(tokens: Iterable[str]) -> str:
    return " ".join(tokens)


def build_vocab(sentences: Iterable[Sequence[str]], min_freq: int = 10, feature_words: Iterable[str] = ()) -> Vocabulary:
    """Keep tokens seen at least ``min_freq`` times; order by frequency then spelling."""
    counts = Counter(t for s in sentences for t in s)
    kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in SPECIALS), key=lambda t: (-counts[t], t))
    if not kept:
        raise ConfigError(f"empty vocabulary (no token reaches min_freq={min_freq})")
    return Vocabulary(list(SPECIALS) + kept, feature_words)


def compute_beta(sentence: Sequence, feature_indices) -> float:
    """Fraction of feature tokens among the sentence tokens, BOS/EOS excluded."""
    words = [t for t in sentence if t not in (BOS_ID, EOS_ID, BOS, EOS)]
    if not words:
        raise ContractError("compute_beta needs a non-empty sentence")
    n_feat = sum(1 for t in words if t in feature_indices)
    return n_feat / len(words)


def make_sentence_record(token_ids: Sequence[int], feature_indices) -> SentenceRecord:
    words = [t for t in token_ids if t not in (BOS_ID, EOS_ID)]
    n_feat = sum(1 for t in words if t in feature_indices)
    return SentenceRecord(tuple(words) + (EOS_ID,), compute_beta(words, feature_indices), n_feat, len(words))


def random_split(items: Sequence, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[list, list, list]:
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be three non-negatives summing to 1, got {fractions}")
    n = len(items)
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * fractions[1]))
    n_test = int(round(n * fractions[2]))
    n_train = n - n_val - n_test
    pick = [items[i] for i in order]
    return pick[:n_train], pick[n_train : n_train + n_val], pick[n_train + n_val :]


def cold_start_shield(splits: DatasetSplit, item_of=lambda r: r.item_index) -> DatasetSplit:
    """Move validation/test records whose item never occurs in train into train."""
    train = list(splits.train)
    seen = {item_of(r) for r in train}
    kept = []
    for part in (splits.validation, splits.test):
        stay = []
        for r in part:
            if item_of(r) in seen:
                stay.append(r)
            else:
                train.append(r)
                seen.add(item_of(r))
        kept.append(stay)
    return DatasetSplit(train, kept[0], kept[1], splits.fractions)


# -- dataset ----------------------------------------------------------------------------------


@dataclass
class Dataset:
    vocab: Vocabulary
    users: list[str]
    items: list[str]
    split: DatasetSplit
    meta: dict = field(default_factory=dict)

    def user_index(self, user_id: str) -> int:
        return self._lookup(self.users, user_id, "user")

    def item_index(self, item_id: str) -> int:
        return self._lookup(self.items, item_id, "item")

    @staticmethod
    def _lookup(ids: list[str], key: str, kind: str) -> int:
        try:
            return ids.index(key)
        except ValueError:
            near = difflib.get_close_matches(key, ids, n=3, cutoff=0.0)
            raise UnknownIdError(f"unknown {kind} id {key!r}; nearest known: {', '.join(near)}") from None

    def stats(self) -> dict:
        n_reviews = sum(len(p) for p in self.split)
        cells = {(x.user_index, x.item_index) for p in self.split for x in p}
        n_u, n_i = len(self.users), len(self.items)
        return {
            "users": n_u,
            "items": n_i,
            "reviews": n_reviews,
            "features": len(self.vocab.feature_indices),
            "vocab": len(self.vocab),
            # a user can review the same item twice, so count distinct cells
            "sparsity": 1.0 - len(cells) / (n_u * n_i) if n_u and n_i else 0.0,
        }


def preprocess(records: Sequence[RawRecord], feature_words: Sequence[str], min_user_records: int = 10,
               min_word_freq: int = 10, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> Dataset:
    """Filter users, tokenize, split, shield cold-start items, build the vocabulary
    from the training split and encode every sentence with its supervised factor."""
    kept = filter_users(records, min_user_records)
    tokenized = []
    for rec in kept:
        sents = sentence_split_and_tokenize(rec.review_text)
        if sents:
            tokenized.append((rec, sents))
    if not tokenized:
        raise ConfigError("empty dataset after filtering")
    users = sorted({r.user_id for r, _ in tokenized})
    items = sorted({r.item_id for r, _ in tokenized})
    tr, va, te = random_split(tokenized, fractions, seed)
    raw_split = cold_start_shield(DatasetSplit(tr, va, te, tuple(fractions)), item_of=lambda x: x[0].item_id)

    vocab = build_vocab((s for _, sents in raw_split.train for s in sents), min_word_freq, feature_words)
    u_index = {u: i for i, u in enumerate(users)}
    i_index = {it: i for i, it in enumerate(items)}

    def encode(pair):
        rec, sents = pair
        records_ = [make_sentence_record(vocab.encode(s), vocab.feature_indices) for s in sents]
        return Interaction(u_index[rec.user_id], i_index[rec.item_id], rec.rating, records_)

    split = DatasetSplit(*([encode(p) for p in part] for part in raw_split), tuple(fractions))
    return Dataset(vocab, users, items, split)


def save_dataset(path, dataset: Dataset) -> None:
    def enc(part):
        return [
            [x.user_index, x.item_index, x.rating, [list(s.token_ids) for s in x.sentences]] for x in part
        ]

    payload = {
        "vocab": dataset.vocab.to_dict(),
        "users": dataset.users,
        "items": dataset.items,
        "fractions": list(dataset.split.fractions),
        "train": enc(dataset.split.train),
        "validation": enc(dataset.split.validation),
        "test": enc(dataset.split.test),
        "meta": dataset.meta,
    }
    body = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    Path(path).write_bytes(DATASET_MAGIC + struct.pack("<I", DATASET_VERSION) + body)


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise DataIOError(f"dataset file not found: {path}")
    raw = path.read_bytes()
    if raw[: len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise DataIOError(f"{path} is not a dataset file")
    (version,) = struct.unpack_from("<I", raw, len(DATASET_MAGIC))
    if version != DATASET_VERSION:
        raise DataIOError(f"unsupported dataset format version {version}")
    payload = json.loads(raw[len(DATASET_MAGIC) + 4 :].decode("utf-8"))
    vocab = Vocabulary.from_dict(payload["vocab"])

    def dec(part):
        return [
            Interaction(u, i, r, [make_sentence_record(s, vocab.feature_indices) for s in sents])
            for u, i, r, sents in part
        ]

    split = DatasetSplit(dec(payload["train"]), dec(payload["validation"]), dec(payload["test"]), tuple(payload["fractions"]))
    return Dataset(vocab, payload["users"], payload["items"], split, payload.get("meta", {}))


# -- batching -------------------------------------------------------------------------------------


@dataclass
class SentenceSlot:
    """The n-th sentence of every row in a batch, padded to a common length.

    ``inputs`` starts with BOS; ``targets`` ends with EOS; ``mask`` is 0 on PAD.
    ``present`` is 0 for rows whose review has fewer than n+1 sentences.
    """

    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray
    beta: np.ndarray
    present: np.ndarray


@dataclass
class Batch:
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    slots: list[SentenceSlot]

    def __len__(self):
        return len(self.users)


def collate(rows: Sequence[Interaction], n_sentences: int | None = None) -> Batch:
    if not rows:
        raise ContractError("cannot collate an empty batch")
    sents = [x.sentences if n_sentences is None else x.sentences[:n_sentences] for x in rows]
    n_slots = max(len(s) for s in sents)
    b = len(rows)
    slots = []
    for n in range(n_slots):
        length = max((len(s[n].token_ids) for s in sents if len(s) > n), default=1)
        inputs = np.full((b, length), PAD_ID, dtype=np.int64)
        targets = np.full((b, length), PAD_ID, dtype=np.int64)
        mask = np.zeros((b, length))
        beta = np.zeros(b)
        present = np.zeros(b)
        for row, s in enumerate(sents):
            if len(s) <= n:
                inputs[row, 0] = BOS_ID
                continue
            ids = s[n].token_ids
            inputs[row, 0] = BOS_ID
            inputs[row, 1 : len(ids)] = ids[:-1]
            targets[row, : len(ids)] = ids
            mask[row, : len(ids)] = 1.0
            beta[row] = s[n].beta
            present[row] = 1.0
        slots.append(SentenceSlot(inputs, targets, mask, beta, present))
    return Batch(
        np.array([x.user_index for x in rows], dtype=np.int64),
        np.array([x.item_index for x in rows], dtype=np.int64),
        np.array([x.rating for x in rows], dtype=np.float64),
        slots,
    )


def make_batches(split: Sequence[Interaction], batch_size: int, n_sentences: int | None = None,
                 seed: int | None = 0, epoch: int = 0, shuffle: bool = True) -> Iterator[Batch]:
    """Yield padded batches; the shuffle order depends only on ``(seed, epoch)``."""
    if batch_size < 1:
        raise ConfigError("batch_size must be at least 1")
    if n_sentences is not None and n_sentences < 1:
        raise ConfigError("n_sentences must be at least 1")
    order = np.arange(len(split))
    if shuffle:
        order = np.random.default_rng([seed or 0, epoch]).permutation(len(split))
    for start in range(0, len(split), batch_size):
        yield collate([split[i] for i in order[start : start + batch_size]], n_sentences)


def truncate(interactions: Sequence[Interaction], n_sentences: int | None) -> list[Interaction]:
    if n_sentences is None:
        return list(interactions)
    return [Interaction(x.user_index, x.item_index, x.rating, x.sentences[:n_sentences]) for x in interactions]

