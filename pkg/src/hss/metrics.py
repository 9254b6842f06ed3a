"""Rating and text-generation evaluation metrics.

Token sequences may hold any hashable tokens (ids or strings).  BLEU is
aggregated at corpus level; every ROUGE variant is the mean of per-pair
scores.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Iterable, Sequence

import numpy as np

from . import kernels
from .corpus import tokenize
from .errors import ContractError, DataIOError

Tokens = Sequence[Hashable]

ROUGE_L_BETA = 1.2
SKIP_GAP = 4


@dataclass
class EvalPair:
    candidate: list
    references: list[list]

    def __post_init__(self):
        if not self.references:
            raise ContractError("an evaluation pair needs at least one reference")


def rmse(predicted: Iterable[float], target: Iterable[float]) -> float:
    p = np.asarray(list(predicted), dtype=np.float64)
    t = np.asarray(list(target), dtype=np.float64)
    if p.size == 0:
        raise ContractError("rmse of an empty set")
    if p.shape != t.shape:
        raise ContractError(f"rmse got {p.size} predictions for {t.size} targets")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def f_score(recall: float, precision: float, beta: float = 1.0) -> float:
    b2 = beta * beta
    denom = recall + b2 * precision
    if denom == 0:
        return 0.0
    return (1 + b2) * recall * precision / denom


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


# -- BLEU ---------------------------------------------------------------------------------


def clipped_counts(pairs: Sequence[EvalPair], n: int) -> tuple[int, int]:
    """Corpus totals (clipped matches, candidate n-grams) for order ``n``."""
    num = den = 0
    for pair in pairs:
        cand = ngrams(pair.candidate, n)
        den += sum(cand.values())
        if not cand:
            continue
        best: Counter = Counter()
        for ref in pair.references:
            best |= ngrams(ref, n)
        num += sum(min(c, best[g]) for g, c in cand.items())
    return num, den


def modified_precision(pairs: Sequence[EvalPair], n: int) -> Fraction:
    num, den = clipped_counts(pairs, n)
    return Fraction(num, den) if den else Fraction(0)


def _closest_ref_len(cand_len: int, refs: Sequence[Tokens]) -> int:
    # ties go to the shorter reference
    return min((abs(len(r) - cand_len), len(r)) for r in refs)[1]


def brevity_penalty(pairs: Sequence[EvalPair]) -> float:
    c = sum(len(p.candidate) for p in pairs)
    r = sum(_closest_ref_len(len(p.candidate), p.references) for p in pairs)
    if c == 0:
        return 0.0
    return min(1.0, math.exp(1 - r / c))


def bleu(pairs: Sequence[EvalPair], max_n: int = 4) -> float:
    if not pairs:
        raise ContractError("bleu of an empty candidate set")
    precisions = [modified_precision(pairs, n) for n in range(1, max_n + 1)]
    if any(p == 0 for p in precisions):
        return 0.0
    log_mean = sum(math.log(p) for p in precisions) / max_n
    return brevity_penalty(pairs) * math.exp(log_mean)


# -- ROUGE --------------------------------------------------------------------------------


def _overlap_scores(cand_units: Counter, ref_units: Sequence[Counter]) -> tuple[float, float, float]:
    match = sum(sum(min(c, cand_units[g]) for g, c in ref.items()) for ref in ref_units)
    ref_total = sum(sum(ref.values()) for ref in ref_units)
    cand_total = sum(cand_units.values()) * len(ref_units)
    recall = match / ref_total if ref_total else 0.0
    precision = match / cand_total if cand_total else 0.0
    return recall, precision, f_score(recall, precision)


def rouge_n(pair: EvalPair, n: int) -> tuple[float, float, float]:
    return _overlap_scores(ngrams(pair.candidate, n), [ngrams(r, n) for r in pair.references])


def skip_units(tokens: Tokens, max_gap: int = SKIP_GAP) -> Counter:
    """Unigrams plus ordered pairs with at most ``max_gap`` tokens between them."""
    units = Counter((t,) for t in tokens)
    for i in range(len(tokens)):
        for j in range(i + 1, min(len(tokens), i + max_gap + 2)):
            units[(tokens[i], tokens[j])] += 1
    return units


def rouge_su4(pair: EvalPair) -> tuple[float, float, float]:
    return _overlap_scores(skip_units(pair.candidate), [skip_units(r) for r in pair.references])


def _as_ids(*seqs: Tokens) -> list[list[int]]:
    table: dict = {}
    return [[table.setdefault(t, len(table)) for t in s] for s in seqs]


def rouge_l(pair: EvalPair, beta: float = ROUGE_L_BETA) -> tuple[float, float, float]:
    best = (0.0, 0.0, 0.0)
    for ref in pair.references:
        cand, r = _as_ids(pair.candidate, ref)
        lcs = kernels.lcs_length(cand, r)
        recall = lcs / len(r) if r else 0.0
        precision = lcs / len(cand) if cand else 0.0
        f = f_score(recall, precision, beta)
        if f > best[2]:
            best = (recall, precision, f)
    return best


def mean_scores(pairs: Sequence[EvalPair], fn) -> tuple[float, float, float]:
    if not pairs:
        raise ContractError("rouge of an empty candidate set")
    scores = np.array([fn(p) for p in pairs], dtype=np.float64)
    return tuple(float(x) for x in scores.mean(axis=0))


# -- feature coverage ---------------------------------------------------------------------


def feature_coverage(pairs: Sequence[EvalPair], features: Iterable[Hashable]) -> float | None:
    """Mean over pairs of |R ∩ C| / |R|; pairs whose references name no feature are skipped."""
    feats = set(features)
    scores = []
    for pair in pairs:
        ref = feats.intersection(t for r in pair.references for t in r)
        if not ref:
            continue
        scores.append(len(ref.intersection(pair.candidate)) / len(ref))
    if not scores:
        return None
    return float(np.mean(scores))


# -- report -------------------------------------------------------------------------------


@dataclass
class MetricReport:
    rmse: float | None
    bleu1: float
    bleu4: float
    rouge1: tuple[float, float, float]
    rouge2: tuple[float, float, float]
    rougeL: tuple[float, float, float]
    rougeSU4: tuple[float, float, float]
    feature_coverage: float | None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def pct(x):
            return None if x is None else round(100.0 * x, 2)

        def triple(t):
            return {"recall": pct(t[0]), "precision": pct(t[1]), "f1": pct(t[2])}

        out = {
            "rmse": None if self.rmse is None else round(self.rmse, 4),
            "bleu1": pct(self.bleu1),
            "bleu4": pct(self.bleu4),
            "rouge1": triple(self.rouge1),
            "rouge2": triple(self.rouge2),
            "rougeL": triple(self.rougeL),
            "rougeSU4": triple(self.rougeSU4),
            "feature_coverage": pct(self.feature_coverage),
        }
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def text_report(pairs: Sequence[EvalPair], features: Iterable[Hashable], rmse_value: float | None = None,
                **extra) -> MetricReport:
    return MetricReport(
        rmse=rmse_value,
        bleu1=bleu(pairs, 1),
        bleu4=bleu(pairs, 4),
        rouge1=mean_scores(pairs, lambda p: rouge_n(p, 1)),
        rouge2=mean_scores(pairs, lambda p: rouge_n(p, 2)),
        rougeL=mean_scores(pairs, rouge_l),
        rougeSU4=mean_scores(pairs, rouge_su4),
        feature_coverage=feature_coverage(pairs, features),
        extra=extra,
    )


def read_pair_files(candidate_path, reference_path) -> list[tuple[str, str, EvalPair]]:
    """Align two ``user_id<TAB>item_id<TAB>text`` files line by line."""
    def rows(path):
        try:
            with open(path, encoding="utf-8") as fh:
                lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
        except OSError as exc:
            raise DataIOError(f"cannot read {path}: {exc}") from exc
        out = []
        for lineno, ln in enumerate(lines, 1):
            parts = ln.split("\t", 2)
            if len(parts) != 3:
                raise DataIOError(f"{path}:{lineno}: expected user_id, item_id and text separated by tabs")
            out.append(parts)
        return out

    cands, refs = rows(candidate_path), rows(reference_path)
    if len(cands) != len(refs):
        raise DataIOError(f"{len(cands)} candidate lines but {len(refs)} reference lines")
    pairs = []
    for (cu, ci, ct), (ru, ri, rt) in zip(cands, refs):
        if (cu, ci) != (ru, ri):
            raise DataIOError(f"misaligned files: ({cu}, {ci}) vs ({ru}, {ri})")
        pairs.append((cu, ci, EvalPair(tokenize(ct), [tokenize(rt)])))
    return pairs
