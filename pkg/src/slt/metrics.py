"""Corpus metrics: BLEU-4 with brevity penalty, ROUGE-L F1, token-length
bucket reports, and run-vs-run delta tables.

The BLEU core follows sacreBLEU's arithmetic (clipped modified n-gram
precisions, geometric mean, exponential brevity penalty) on pre-tokenized
input; only the tokenizers differ (whitespace / simple 13a-style
punctuation splitting / characters).
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Optional

from .errors import UsageError

MAX_NGRAM = 4
_13A_RE = re.compile(r"([^\w\s])")

TOKENIZERS = ("whitespace", "simple13a", "char")
SMOOTHINGS = ("none", "floor")


def tokenize(text, tokenizer="whitespace"):
    if tokenizer == "whitespace":
        return text.split()
    if tokenizer == "simple13a":
        return _13A_RE.sub(r" \1 ", text).split()
    if tokenizer == "char":
        return [c for c in text if not c.isspace()]
    raise UsageError(f"unknown tokenizer {tokenizer!r}")


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class BleuResult:
    score: float  # 0..100
    precisions: list  # clipped precisions per order, 0..1
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    tokenizer: str
    smoothing: str


def _bleu_from_stats(correct, total, hyp_len, ref_len, smoothing, smooth_value):
    # orders with no n-grams at all (corpus shorter than n) are skipped, so an
    # identical short corpus still scores 100
    precisions = []
    logs = []
    for n in range(MAX_NGRAM):
        if total[n] == 0:
            precisions.append(0.0)
            continue
        num = correct[n]
        if num == 0:
            if smoothing == "floor":
                num = smooth_value
            else:
                precisions.append(0.0)
                logs.append(float("-inf"))
                continue
        p = num / total[n]
        precisions.append(p)
        logs.append(math.log(p))
    if not logs or any(l == float("-inf") for l in logs):
        bp = math.exp(1.0 - ref_len / hyp_len) if 0 < hyp_len < ref_len else 1.0
        return 0.0, precisions, bp
    if hyp_len == 0:
        return 0.0, precisions, 0.0
    bp = math.exp(1.0 - ref_len / hyp_len) if hyp_len < ref_len else 1.0
    score = 100.0 * bp * math.exp(sum(logs) / len(logs))
    return score, precisions, bp


def bleu(hyps, refs, tokenizer="whitespace", smoothing="none", smooth_value=0.1):
    """Corpus-level BLEU-4 over aligned hypothesis/reference sentence lists."""
    if len(hyps) != len(refs) or len(hyps) == 0:
        raise UsageError("bleu needs equally sized, non-empty corpora")
    if smoothing not in SMOOTHINGS:
        raise UsageError(f"unknown smoothing {smoothing!r}")
    correct = [0] * MAX_NGRAM
    total = [0] * MAX_NGRAM
    hyp_len = ref_len = 0
    for hyp, ref in zip(hyps, refs):
        h = tokenize(hyp, tokenizer)
        r = tokenize(ref, tokenizer)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, MAX_NGRAM + 1):
            hc = _ngrams(h, n)
            rc = _ngrams(r, n)
            correct[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            total[n - 1] += max(len(h) - n + 1, 0)
    score, precisions, bp = _bleu_from_stats(
        correct, total, hyp_len, ref_len, smoothing, smooth_value
    )
    return BleuResult(score, precisions, bp, hyp_len, ref_len, tokenizer, smoothing)


def sentence_bleu(hyp, ref, tokenizer="whitespace", smoothing="floor", smooth_value=0.1):
    """Sentence-level smoothed BLEU with effective n-gram order."""
    h = tokenize(hyp, tokenizer)
    r = tokenize(ref, tokenizer)
    correct = [0] * MAX_NGRAM
    total = [0] * MAX_NGRAM
    for n in range(1, MAX_NGRAM + 1):
        hc = _ngrams(h, n)
        rc = _ngrams(r, n)
        correct[n - 1] = sum(min(c, rc[g]) for g, c in hc.items())
        total[n - 1] = max(len(h) - n + 1, 0)
    score, _, _ = _bleu_from_stats(
        correct, total, len(h), len(r), smoothing, smooth_value
    )
    return score


def _lcs_len(a, b):
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(hyps, refs, tokenizer="whitespace"):
    """Mean sentence-level ROUGE-L F1 on a 0..100 scale."""
    if len(hyps) != len(refs) or len(hyps) == 0:
        raise UsageError("rouge_l needs equally sized, non-empty corpora")
    scores = []
    for hyp, ref in zip(hyps, refs):
        h = tokenize(hyp, tokenizer)
        r = tokenize(ref, tokenizer)
        lcs = _lcs_len(h, r)
        if lcs == 0 or not h or not r:
            scores.append(0.0)
            continue
        p = lcs / len(h)
        rec = lcs / len(r)
        scores.append(200.0 * p * rec / (p + rec))
    return sum(scores) / len(scores)


@dataclass
class MetricReport:
    bleu: float
    precisions: list
    brevity_penalty: float
    rouge_l: float
    sentence_bleu: list
    tokenizer: str
    smoothing: str


def evaluate_corpus(hyps, refs, tokenizer="whitespace", smoothing="none"):
    b = bleu(hyps, refs, tokenizer, smoothing)
    return MetricReport(
        bleu=b.score,
        precisions=b.precisions,
        brevity_penalty=b.brevity_penalty,
        rouge_l=rouge_l(hyps, refs, tokenizer),
        sentence_bleu=[sentence_bleu(h, r, tokenizer) for h, r in zip(hyps, refs)],
        tokenizer=tokenizer,
        smoothing=smoothing,
    )


# ---------------------------------------------------------------------------
# Length-bucket analysis
# ---------------------------------------------------------------------------


@dataclass
class BucketRow:
    lo: int
    hi: int
    count: int
    mean_bleu: float  # nan for empty buckets


def length_bucket_report(hyps, refs, bucket_width, tokenizer="whitespace"):
    """Mean sentence BLEU per reference-length interval [1..w], [w+1..2w], ...

    Buckets jointly cover 1..max observed reference length; every sentence is
    counted exactly once.
    """
    if bucket_width < 1:
        raise UsageError("bucket_width must be >= 1")
    if len(hyps) != len(refs) or len(hyps) == 0:
        raise UsageError("length_bucket_report needs equally sized, non-empty corpora")
    lengths = [len(tokenize(r, tokenizer)) for r in refs]
    scores = [sentence_bleu(h, r, tokenizer) for h, r in zip(hyps, refs)]
    n_buckets = (max(lengths) + bucket_width - 1) // bucket_width
    rows = []
    for k in range(n_buckets):
        lo, hi = k * bucket_width + 1, (k + 1) * bucket_width
        members = [s for s, l in zip(scores, lengths) if lo <= l <= hi]
        rows.append(
            BucketRow(lo=lo, hi=hi, count=len(members),
                      mean_bleu=sum(members) / len(members) if members else float("nan"))
        )
    return rows


def write_bucket_csv(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("lo,hi,count,mean_bleu\n")
        for r in rows:
            fh.write(f"{r.lo},{r.hi},{r.count},{r.mean_bleu!r}\n")


# ---------------------------------------------------------------------------
# Run comparison (individual vs universal, with vs without LID)
# ---------------------------------------------------------------------------


@dataclass
class DeltaRow:
    language: str
    score_a: float
    score_b: float
    delta: float  # b - a


def compare_runs(scores_a, scores_b):
    """Per-language deltas b - a plus an unweighted mean row.

    Key sets must match; row order follows scores_a.
    """
    missing_b = [k for k in scores_a if k not in scores_b]
    missing_a = [k for k in scores_b if k not in scores_a]
    if missing_a or missing_b:
        raise UsageError(
            f"language keys differ: missing in a {missing_a}, missing in b {missing_b}"
        )
    if not scores_a:
        raise UsageError("compare_runs needs at least one language")
    rows = [
        DeltaRow(language=k, score_a=float(scores_a[k]), score_b=float(scores_b[k]),
                 delta=float(scores_b[k]) - float(scores_a[k]))
        for k in scores_a
    ]
    mean_a = sum(r.score_a for r in rows) / len(rows)
    mean_b = sum(r.score_b for r in rows) / len(rows)
    rows.append(DeltaRow(language="mean", score_a=mean_a, score_b=mean_b,
                         delta=mean_b - mean_a))
    return rows


def write_delta_tsv(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("language\tscore_a\tscore_b\tdelta\n")
        for r in rows:
            fh.write(f"{r.language}\t{r.score_a:.2f}\t{r.score_b:.2f}\t{r.delta:.2f}\n")


def read_scores_tsv(path):
    """Two-column 'language<TAB>score' file (header optional) -> dict."""
    scores = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("language\t"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise UsageError(f"{path}: expected 'language<TAB>score' rows")
            scores[parts[0]] = float(parts[1])
    return scores


def write_scores_tsv(path, scores):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("language\tscore\n")
        for k, v in scores.items():
            fh.write(f"{k}\t{v!r}\n")
