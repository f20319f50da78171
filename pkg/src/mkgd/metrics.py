"""Evaluation suite: BLEU-1/2, DISTINCT-1/2, character F1, perplexity,
knowledge-selection accuracy.

BLEU is sentence-level with brevity penalty and no smoothing, averaged over
the corpus; a pair whose highest-order precision is zero contributes zero.
F1 is computed over character multisets (a token-level variant is available
for logging). Perplexity scores teacher-forced responses with prior-fused
knowledge so the response never informs its own score.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ContractError, NumericError


def _as_tokens(x):
    return x.split() if isinstance(x, str) else list(x)


def _ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def sentence_bleu(hypothesis, reference, n):
    hyp = _as_tokens(hypothesis)
    ref = _as_tokens(reference)
    c, r = len(hyp), len(ref)
    if c == 0:
        return 0.0
    precisions = []
    for m in range(1, n + 1):
        hyp_counts = Counter(_ngrams(hyp, m))
        ref_counts = Counter(_ngrams(ref, m))
        total = sum(hyp_counts.values())
        if total == 0:
            continue  # hypothesis shorter than the order; order is undefined
        clipped = sum(min(count, ref_counts[g]) for g, count in hyp_counts.items())
        if clipped == 0:
            return 0.0
        precisions.append(clipped / total)
    if not precisions:
        return 0.0
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    prod = 1.0
    for p in precisions:
        prod *= p
    return bp * prod ** (1.0 / len(precisions))


def bleu_n(hypotheses, references, n):
    """Corpus mean of sentence-level cumulative BLEU-n."""
    if n not in (1, 2):
        raise ContractError(f"bleu order must be 1 or 2, got {n}")
    if len(hypotheses) != len(references):
        raise ContractError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references"
        )
    if not hypotheses:
        return 0.0
    return sum(sentence_bleu(h, r, n) for h, r in zip(hypotheses, references)) / len(hypotheses)


def distinct_n(hypotheses, n):
    """Distinct n-grams over total n-grams, pooled across the corpus."""
    if n not in (1, 2):
        raise ContractError(f"distinct order must be 1 or 2, got {n}")
    unique = set()
    total = 0
    for hyp in hypotheses:
        grams = _ngrams(_as_tokens(hyp), n)
        unique.update(grams)
        total += len(grams)
    return len(unique) / total if total else 0.0


def char_f1(hypothesis, reference):
    """Harmonic mean of precision/recall over character multisets."""
    if not hypothesis or not reference:
        return 0.0
    hyp_counts = Counter(hypothesis)
    ref_counts = Counter(reference)
    common = sum(min(count, ref_counts[ch]) for ch, count in hyp_counts.items())
    return 2.0 * common / (len(hypothesis) + len(reference))


def token_f1(hypothesis, reference):
    """char_f1's token-level sibling; logged alongside but not reported."""
    hyp = _as_tokens(hypothesis)
    ref = _as_tokens(reference)
    if not hyp or not ref:
        return 0.0
    hyp_counts = Counter(hyp)
    ref_counts = Counter(ref)
    common = sum(min(count, ref_counts[t]) for t, count in hyp_counts.items())
    return 2.0 * common / (len(hyp) + len(ref))


def perplexity(model, samples):
    """exp of the corpus mean per-token negative log-likelihood."""
    if not samples:
        raise ContractError("perplexity over zero samples")
    nll_sum = 0.0
    token_sum = 0
    for sample in samples:
        result = model.score(sample)
        nll_sum += result[0]
        token_sum += result[1]
    if not math.isfinite(nll_sum):
        raise NumericError("non-finite NLL while computing perplexity")
    return math.exp(nll_sum / token_sum)


def selection_accuracy(priors, gold_indices):
    """Fraction of samples whose highest-prior triplet is the gold one."""
    if len(priors) != len(gold_indices):
        raise ContractError(
            f"{len(priors)} prior vectors vs {len(gold_indices)} gold indices"
        )
    hits = 0
    for prior, gold in zip(priors, gold_indices):
        prior = np.asarray(prior)
        if not (0 <= gold < prior.shape[0]):
            raise ContractError(f"gold index {gold} outside {prior.shape[0]} triplets")
        hits += int(np.argmax(prior)) == gold
    return hits / len(priors) if priors else 0.0


@dataclass
class EvalReport:
    ppl: float
    f1: float
    bleu1: float
    bleu2: float
    distinct1: float
    distinct2: float
    sel_acc: float
    n_samples: int

    def to_json(self):
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


class Evaluator:
    """Accumulates generation/scoring results across (possibly adapted) models."""

    def __init__(self, max_len=20):
        self.max_len = max_len
        self.hyps = []
        self.refs = []
        self.nll_sum = 0.0
        self.token_sum = 0
        self.priors = []
        self.golds = []
        self.n = 0
        self.token_f1_sum = 0.0

    def add(self, model, samples):
        for sample in samples:
            nll, tokens, prior = model.score(sample)
            self.nll_sum += nll
            self.token_sum += tokens
            hyp_ids, _ = model.generate(sample.history, sample.graph, self.max_len)
            hyp = model.vocab.decode(hyp_ids)
            ref_ids = [i for i in sample.response if i != model.vocab.EOS]
            ref = model.vocab.decode(ref_ids)
            self.hyps.append(hyp)
            self.refs.append(ref)
            self.token_f1_sum += token_f1(hyp, ref)
            if sample.gold_triplet is not None:
                self.priors.append(prior)
                self.golds.append(sample.gold_triplet)
            self.n += 1

    def report(self):
        if self.n == 0:
            raise ContractError("evaluator saw no samples")
        f1 = sum(
            char_f1(" ".join(h), " ".join(r)) for h, r in zip(self.hyps, self.refs)
        ) / self.n
        return EvalReport(
            ppl=math.exp(self.nll_sum / self.token_sum),
            f1=f1,
            bleu1=bleu_n(self.hyps, self.refs, 1),
            bleu2=bleu_n(self.hyps, self.refs, 2),
            distinct1=distinct_n(self.hyps, 1),
            distinct2=distinct_n(self.hyps, 2),
            sel_acc=selection_accuracy(self.priors, self.golds) if self.priors else 0.0,
            n_samples=self.n,
        )

    def mean_token_f1(self):
        return self.token_f1_sum / self.n if self.n else 0.0
