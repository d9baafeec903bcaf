"""Corpus-level BLEU-4, ROUGE-L and CIDEr, plus boundary-recovery F1.

Conventions follow the COCO caption evaluation toolkit where it has one:
closest-reference-length brevity penalty, ROUGE-L with beta = 1.2.  CIDEr is
the plain tf-idf cosine form without the length penalty or clipping of
CIDEr-D.  BLEU is unsmoothed.
"""

import math
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List

BETA = 1.2


@dataclass
class EvalCorpus:
    candidates: Dict[str, List[str]]
    references: Dict[str, List[List[str]]]

    def __post_init__(self):
        missing = set(self.candidates) - set(self.references)
        if missing:
            raise ValueError(f"candidates without references: {sorted(missing)[:5]}")
        for vid in self.candidates:
            if not self.references[vid]:
                raise ValueError(f"video {vid!r} has no reference captions")

    def ids(self):
        return sorted(self.candidates)


def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(corpus, max_n=4):
    if not corpus.candidates:
        raise ValueError("BLEU needs at least one candidate")
    matches = [0] * max_n
    totals = [0] * max_n
    cand_len = 0
    ref_len = 0
    for vid in corpus.ids():
        cand = corpus.candidates[vid]
        refs = corpus.references[vid]
        cand_len += len(cand)
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            c = ngrams(cand, n)
            max_ref = Counter()
            for r in refs:
                max_ref |= ngrams(r, n)
            matches[n - 1] += sum(min(k, max_ref[g]) for g, k in c.items())
            totals[n - 1] += max(len(cand) - n + 1, 0)
    if cand_len == 0 or any(m == 0 for m in matches):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_p)


def lcs_length(a, b):
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_pair(cand, ref, beta=BETA):
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    rec = lcs / len(ref)
    prec = lcs / len(cand)
    return ((1 + beta ** 2) * rec * prec) / (rec + beta ** 2 * prec)


def rouge_l(corpus, beta=BETA):
    """Mean over videos of the best ROUGE-L F-measure against any reference.

    An empty candidate scores 0.
    """
    if not corpus.candidates:
        raise ValueError("ROUGE-L needs at least one candidate")
    scores = [max(rouge_l_pair(corpus.candidates[v], r, beta) for r in corpus.references[v])
              for v in corpus.ids()]
    return sum(scores) / len(scores)


def _tfidf(counts, df, log_docs):
    # n-grams absent from every reference set get df clamped to 1, as in COCO
    return {g: k * (log_docs - math.log(max(1.0, df.get(g, 0.0)))) for g, k in counts.items()}


def _cosine(a, b):
    na = math.sqrt(sum(x * x for x in a.values()))
    nb = math.sqrt(sum(x * x for x in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return sum(x * b.get(g, 0.0) for g, x in a.items()) / (na * nb)


def cider(corpus, max_n=4):
    """Per-video CIDEr scores and their mean.

    idf uses the number of videos whose reference set contains the n-gram.
    """
    ids = corpus.ids()
    if len(ids) < 2:
        raise ValueError("CIDEr needs at least two videos to define idf")
    log_docs = math.log(len(ids))
    per_video = {v: 0.0 for v in ids}
    for n in range(1, max_n + 1):
        df = Counter()
        for v in ids:
            seen = set()
            for r in corpus.references[v]:
                seen.update(ngrams(r, n))
            df.update(seen)
        for v in ids:
            cvec = _tfidf(ngrams(corpus.candidates[v], n), df, log_docs)
            refs = corpus.references[v]
            sims = [_cosine(cvec, _tfidf(ngrams(r, n), df, log_docs)) for r in refs]
            per_video[v] += sum(sims) / len(sims) / max_n
    return per_video, sum(per_video.values()) / len(ids)


def boundary_f1(predicted, truth, tolerance=2):
    """Corpus F1 of predicted vs. true boundaries under one-to-one matching.

    ``predicted`` and ``truth`` map video ids to sorted 1-based step lists.
    Each predicted boundary may claim the nearest unclaimed true boundary
    within ``tolerance`` steps.  Returns ``(precision, recall, f1)``.
    """
    tp = n_pred = n_true = 0
    for vid, true_b in truth.items():
        pred_b = predicted.get(vid, [])
        n_pred += len(pred_b)
        n_true += len(true_b)
        free = list(true_b)
        for p in pred_b:
            best = None
            for t in free:
                if abs(t - p) <= tolerance and (best is None or abs(t - p) < abs(best - p)):
                    best = t
            if best is not None:
                free.remove(best)
                tp += 1
    precision = tp / n_pred if n_pred else (1.0 if n_true == 0 else 0.0)
    recall = tp / n_true if n_true else 1.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1
