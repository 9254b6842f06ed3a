"""Small deterministic corpora used by tests, the acceptance suite and the benchmark."""

from __future__ import annotations

import itertools
import json
from pathlib import Path

import numpy as np

from .corpus import RawRecord

FIXTURE_FEATURES = ("battery", "screen", "price", "sound")
FIXTURE_ADJECTIVES = ("great", "bad", "fair", "poor")
# every review uses each of these words, so the vocabulary is known in advance
FIXTURE_WORDS = ("the", "is", "and", "but", ".") + FIXTURE_FEATURES + FIXTURE_ADJECTIVES


def fixture_records(n_users: int = 8, per_user: int = 10, n_items: int = 6, seed: int = 0,
                    stragglers: int = 3, sentences: int = 2) -> list[RawRecord]:
    """``n_users`` users with ``per_user`` reviews each plus one user with only ``stragglers``.

    Reviews have two sentences, or three when ``sentences == 3``.
    """
    rng = np.random.default_rng(seed)
    feats = list(itertools.permutations(FIXTURE_FEATURES))
    adjs = list(itertools.permutations(FIXTURE_ADJECTIVES))
    records = []

    def review(u, k):
        a, b, c, d = feats[rng.integers(len(feats))]
        w, x, y, z = adjs[rng.integers(len(adjs))]
        text = f"The {a} is {w} and the {b} is {x}. The {c} is {y} but the {d} is {z}."
        if sentences == 3:
            text += f" The {b} is {y}!"
        return RawRecord(f"u{u}", f"i{(u + k) % n_items}", float(rng.integers(1, 6)), text, k)

    for u in range(n_users):
        records.extend(review(u, k) for k in range(per_user))
    records.extend(review(n_users, k) for k in range(stragglers))
    return records


MEMO_FEATURES = ("battery", "screen", "price", "sound", "lens", "strap", "case", "cable")
MEMO_ADJECTIVES = ("great", "awful", "solid", "flimsy", "cheap", "sturdy", "bright", "loud", "tiny", "sleek")
MEMO_VERBS = ("love", "hate", "like", "enjoy", "dislike", "trust", "doubt", "praise", "prefer", "mind")


def memorization_records(n_users: int = 10, n_items: int = 15, per_user: int = 5, seed: int = 0) -> list[RawRecord]:
    """Distinct (user, item) pairs whose two review sentences each name one feature word."""
    rng = np.random.default_rng(seed)
    records = []
    for u in range(n_users):
        for k in range(per_user):
            i = (3 * u + k) % n_items
            fa = MEMO_FEATURES[i % len(MEMO_FEATURES)]
            fb = MEMO_FEATURES[(3 * i + 1) % len(MEMO_FEATURES)]  # differs from fa: 2i+1 is odd
            text = f"the {fa} is {MEMO_ADJECTIVES[u]} . i {MEMO_VERBS[(u + i) % len(MEMO_VERBS)]} the {fb} ."
            records.append(RawRecord(f"user{u}", f"item{i}", float(rng.integers(1, 6)), text, k))
    return records


def write_corpus(path, records) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            row = {"user_id": r.user_id, "item_id": r.item_id, "rating": r.rating, "review_text": r.review_text}
            if r.timestamp is not None:
                row["timestamp"] = r.timestamp
            fh.write(json.dumps(row) + "\n")
    return path


def write_lexicon(path, words) -> Path:
    path = Path(path)
    path.write_text("".join(f"{w}\n" for w in words), encoding="utf-8")
    return path
