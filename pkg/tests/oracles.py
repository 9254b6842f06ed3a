"""Independent reference implementations used to check the library.

Nothing here imports the code paths it is used to verify.
"""

import itertools
import math
from collections import Counter

import numpy as np


def finite_difference(f, arrays, eps=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arrays`` (mutated in place)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + eps
            fp = f()
            a[i] = old - eps
            fm = f()
            a[i] = old
            g[i] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def rel_error(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)) + np.max(np.abs(b))))


# -- scalar GRU step ------------------------------------------------------------


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def scalar_gru_step(x, h, w_x, w_h, b):
    """Plain-python GRU step with gates [reset, update, candidate] stacked by rows."""
    d = len(h)
    dx = len(x)

    def row(w, k, v):
        return sum(w[k][j] * v[j] for j in range(len(v)))

    r = [_sig(row(w_x, k, x) + row(w_h, k, h) + b[k]) for k in range(d)]
    z = [_sig(row(w_x, d + k, x) + row(w_h, d + k, h) + b[d + k]) for k in range(d)]
    rh = [r[k] * h[k] for k in range(d)]
    g = [math.tanh(row(w_x, 2 * d + k, x) + row(w_h, 2 * d + k, rh) + b[2 * d + k]) for k in range(d)]
    assert dx == len(w_x[0])
    return [z[k] * h[k] + (1 - z[k]) * g[k] for k in range(d)]


# -- metrics ------------------------------------------------------------------------


def brute_ngrams(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def brute_clipped_precision(candidates, references, n):
    """(clipped matches, candidate n-gram total) summed over a corpus."""
    num = den = 0
    for cand, refs in zip(candidates, references):
        grams = brute_ngrams(cand, n)
        den += len(grams)
        for gram in set(grams):
            c = grams.count(gram)
            best = max(brute_ngrams(r, n).count(gram) for r in refs)
            num += min(c, best)
    return num, den


def brute_rouge_n_counts(cand, refs, n):
    """(matches, reference total, candidate total x |refs|)."""
    cgrams = brute_ngrams(cand, n)
    match = total = 0
    for ref in refs:
        rgrams = brute_ngrams(ref, n)
        total += len(rgrams)
        for gram in set(rgrams):
            match += min(rgrams.count(gram), cgrams.count(gram))
    return match, total, len(cgrams) * len(refs)


def brute_skip_units(tokens, max_gap=4):
    units = [(t,) for t in tokens]
    for i, j in itertools.combinations(range(len(tokens)), 2):
        if j - i - 1 <= max_gap:
            units.append((tokens[i], tokens[j]))
    return Counter(units)


def brute_lcs(a, b):
    """Longest common subsequence length by enumerating subsequences of the shorter input."""
    if len(a) > len(b):
        a, b = b, a
    for k in range(len(a), 0, -1):
        for idx in itertools.combinations(range(len(a)), k):
            sub = [a[i] for i in idx]
            it = iter(b)
            if all(any(x == y for y in it) for x in sub):
                return k
    return 0


# -- decoding -------------------------------------------------------------------------


def exhaustive_best(logprob_fn, vocab_size, eos, max_tokens):
    """Best (score, sequence) over all sequences ending in EOS or reaching ``max_tokens``.

    Ties go to the lexicographically smaller sequence.
    """
    best = None
    for length in range(1, max_tokens + 1):
        for seq in itertools.product(range(vocab_size), repeat=length):
            if eos in seq[:-1]:
                continue
            if length < max_tokens and seq[-1] != eos:
                continue
            score = 0.0
            for t in range(length):
                score += logprob_fn(seq[:t])[seq[t]]
            key = (-score, seq)
            if best is None or key < best:
                best = key
    return -best[0], list(best[1])
