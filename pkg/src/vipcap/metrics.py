"""Corpus-level caption metrics: BLEU@4 and CIDEr-D.

Tokenization is fixed (lowercase, punctuation stripped, whitespace split)
so scores are reproducible; they are internally consistent but not claimed
comparable to any external toolkit's absolutes.
"""

import math
from collections import Counter, defaultdict
from dataclasses import dataclass

from .constants import CIDER_SIGMA
from .errors import DataError, InputError
from .tokenization import metric_tokenize

MAX_NGRAM = 4


@dataclass
class EvalCorpus:
    """Aligned candidate/reference captions keyed by image id."""

    ids: list
    candidates: dict
    references: dict

    @classmethod
    def from_dicts(cls, candidates: dict, references: dict) -> "EvalCorpus":
        if not candidates:
            raise InputError("corpus is empty")
        if set(candidates) != set(references):
            only_c = sorted(set(candidates) - set(references))
            only_r = sorted(set(references) - set(candidates))
            raise DataError(
                f"candidate/reference ids differ: only-candidates={only_c}, only-refs={only_r}"
            )
        for image_id, refs in references.items():
            if not refs:
                raise DataError(f"image {image_id!r} has no references")
        ids = sorted(candidates)
        return cls(ids=ids, candidates=dict(candidates), references={k: list(v) for k, v in references.items()})


def _ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(corpus: EvalCorpus) -> float:
    """Corpus BLEU with up-to-4-gram precision, geometric mean, brevity
    penalty, and no smoothing. Empty candidates count as zero matches."""
    clipped = [0] * MAX_NGRAM
    guesses = [0] * MAX_NGRAM
    cand_len = 0
    ref_len = 0
    for image_id in corpus.ids:
        cand = metric_tokenize(corpus.candidates[image_id])
        refs = [metric_tokenize(r) for r in corpus.references[image_id]]
        cand_len += len(cand)
        # effective reference length: closest to the candidate, ties shorter
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for n in range(1, MAX_NGRAM + 1):
            counts = _ngram_counts(cand, n)
            max_ref = Counter()
            for r in refs:
                for gram, cnt in _ngram_counts(r, n).items():
                    max_ref[gram] = max(max_ref[gram], cnt)
            clipped[n - 1] += sum(min(cnt, max_ref[gram]) for gram, cnt in counts.items())
            guesses[n - 1] += max(0, len(cand) - n + 1)
    if cand_len == 0:
        return 0.0
    precisions = []
    for n in range(MAX_NGRAM):
        if guesses[n] == 0 or clipped[n] == 0:
            return 0.0
        precisions.append(clipped[n] / guesses[n])
    brevity = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return brevity * math.exp(sum(math.log(p) for p in precisions) / MAX_NGRAM)


def _tfidf_vectors(tokens, doc_freq: dict, log_num_images: float):
    """Per-n TF-IDF vectors, their norms, and the token length."""
    vecs = [defaultdict(float) for _ in range(MAX_NGRAM)]
    norms = [0.0] * MAX_NGRAM
    for n in range(1, MAX_NGRAM + 1):
        for gram, count in _ngram_counts(tokens, n).items():
            idf = log_num_images - math.log(max(1.0, doc_freq[gram]))
            weight = count * idf
            vecs[n - 1][gram] = weight
            norms[n - 1] += weight * weight
    return vecs, [math.sqrt(x) for x in norms], len(tokens)


def cider(corpus: EvalCorpus) -> float:
    """CIDEr-D: clipped TF-IDF cosine per n-gram order with a gaussian
    length penalty, averaged over n and references, scaled by 10."""
    if len(corpus.ids) < 2:
        raise InputError("CIDEr needs at least two images to define document frequencies")
    doc_freq = defaultdict(float)
    for image_id in corpus.ids:
        grams = set()
        for ref in corpus.references[image_id]:
            tokens = metric_tokenize(ref)
            for n in range(1, MAX_NGRAM + 1):
                grams.update(_ngram_counts(tokens, n))
        for gram in grams:
            doc_freq[gram] += 1.0
    log_num = math.log(len(corpus.ids))

    total = 0.0
    for image_id in corpus.ids:
        cand_vecs, cand_norms, cand_len = _tfidf_vectors(
            metric_tokenize(corpus.candidates[image_id]), doc_freq, log_num
        )
        per_n = [0.0] * MAX_NGRAM
        refs = corpus.references[image_id]
        for ref in refs:
            ref_vecs, ref_norms, ref_len = _tfidf_vectors(
                metric_tokenize(ref), doc_freq, log_num
            )
            penalty = math.exp(-((cand_len - ref_len) ** 2) / (2.0 * CIDER_SIGMA**2))
            for n in range(MAX_NGRAM):
                num = 0.0
                for gram, weight in cand_vecs[n].items():
                    num += min(weight, ref_vecs[n][gram]) * ref_vecs[n][gram]
                if cand_norms[n] != 0.0 and ref_norms[n] != 0.0:
                    per_n[n] += penalty * num / (cand_norms[n] * ref_norms[n])
        total += 10.0 * sum(per_n) / (MAX_NGRAM * len(refs))
    return total / len(corpus.ids)
