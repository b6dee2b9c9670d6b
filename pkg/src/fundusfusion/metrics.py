"""Evaluation metrics: classification reports and text-overlap scores.

Text metrics operate on tokenized sequences (lists of string tokens).
BLEU is corpus-level with clipped n-gram precision and the brevity penalty.
ROUGE-L is the LCS F-measure with beta=1.2, max over references per
candidate, mean over the corpus. CIDEr uses per-n TF-IDF cosine similarity
with weights count * ln(Ncorpus / max(1, df)), averaged over n=1..4 and over
references; it deliberately omits the x10 rescaling and the length-gaussian
found in some captioning toolkits, so scores live in [0, 1].
"""

import math
from collections import Counter

import numpy as np


# -- classification --------------------------------------------------------------

def confusion_matrix(y_true, y_pred, classes):
    m = np.zeros((classes, classes), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        m[int(t), int(p)] += 1
    return m


def _prf(tp, fp, fn):
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    return precision, recall, f1


def classification_report(y_true, y_pred, classes):
    """Accuracy, per-class and macro precision/recall/F1 (zero-division -> 0)."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    cm = confusion_matrix(y_true, y_pred, classes)
    per_class = []
    for k in range(classes):
        tp = cm[k, k]
        fp = cm[:, k].sum() - tp
        fn = cm[k, :].sum() - tp
        per_class.append(_prf(tp, fp, fn))
    return {
        "accuracy": float((y_true == y_pred).mean()) if len(y_true) else 0.0,
        "confusion": cm,
        "per_class": per_class,
        "macro_precision": float(np.mean([p for p, _, _ in per_class])),
        "macro_recall": float(np.mean([r for _, r, _ in per_class])),
        "macro_f1": float(np.mean([f for _, _, f in per_class])),
    }


def multilabel_report(y_true, y_pred):
    """Per-bit (Hamming) accuracy plus per-label and macro P/R/F1.

    Both arrays are [n, K] of 0/1.
    """
    y_true = np.asarray(y_true).astype(int)
    y_pred = np.asarray(y_pred).astype(int)
    k = y_true.shape[1]
    per_label = []
    for j in range(k):
        t, p = y_true[:, j], y_pred[:, j]
        tp = int(((t == 1) & (p == 1)).sum())
        fp = int(((t == 0) & (p == 1)).sum())
        fn = int(((t == 1) & (p == 0)).sum())
        per_label.append(_prf(tp, fp, fn))
    return {
        "hamming_accuracy": float((y_true == y_pred).mean()),
        "per_label": per_label,
        "macro_precision": float(np.mean([p for p, _, _ in per_label])),
        "macro_recall": float(np.mean([r for _, r, _ in per_label])),
        "macro_f1": float(np.mean([f for _, _, f in per_label])),
    }


# -- BLEU -------------------------------------------------------------------------

def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_scores(candidates, references, max_n=4):
    """Corpus BLEU-1..max_n.

    candidates: list of token lists; references: list of lists of token
    lists (any number of references per candidate). Empty corpora or a
    zeroed precision give 0 for that order.
    """
    if len(candidates) != len(references):
        raise ValueError("candidate/reference counts disagree")
    matched = np.zeros(max_n)
    total = np.zeros(max_n)
    cand_len = 0
    eff_ref_len = 0
    for cand, refs in zip(candidates, references):
        cand_len += len(cand)
        if refs:
            # closest reference length, ties to the shorter
            eff_ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            cn = _ngrams(cand, n)
            if not cn:
                continue
            best = Counter()
            for r in refs:
                rn = _ngrams(r, n)
                for g, c in rn.items():
                    best[g] = max(best[g], c)
            matched[n - 1] += sum(min(c, best[g]) for g, c in cn.items())
            total[n - 1] += sum(cn.values())
    bp = 1.0 if cand_len > eff_ref_len else (
        math.exp(1.0 - eff_ref_len / cand_len) if cand_len else 0.0)
    out = {}
    for n in range(1, max_n + 1):
        precisions = []
        ok = True
        for i in range(n):
            if total[i] == 0 or matched[i] == 0:
                ok = False
                break
            precisions.append(matched[i] / total[i])
        out[f"bleu{n}"] = (bp * math.exp(sum(math.log(p) for p in precisions) / n)
                           if ok else 0.0)
    return out


# -- ROUGE-L ----------------------------------------------------------------------

def _lcs_len(a, b):
    dp = [0] * (len(b) + 1)
    for x in a:
        prev = 0
        for j, y in enumerate(b, 1):
            cur = dp[j]
            dp[j] = prev + 1 if x == y else max(dp[j], dp[j - 1])
            prev = cur
    return dp[-1]


def rouge_l(candidates, references, beta=1.2):
    """Mean over the corpus of the best-reference LCS F-measure."""
    if len(candidates) != len(references):
        raise ValueError("candidate/reference counts disagree")
    scores = []
    for cand, refs in zip(candidates, references):
        best = 0.0
        for ref in refs:
            if not cand or not ref:
                continue
            lcs = _lcs_len(cand, ref)
            if lcs == 0:
                continue
            prec = lcs / len(cand)
            rec = lcs / len(ref)
            best = max(best, (1 + beta ** 2) * prec * rec /
                       (rec + beta ** 2 * prec))
        scores.append(best)
    return float(np.mean(scores)) if scores else 0.0


# -- CIDEr ------------------------------------------------------------------------

def cider(candidates, references, max_n=4):
    """Corpus mean of TF-IDF n-gram cosine similarity, averaged over n.

    Document frequency of a gram counts the reference sets containing it;
    idf = ln(Ncorpus / max(1, df)).
    """
    if len(candidates) != len(references):
        raise ValueError("candidate/reference counts disagree")
    ndocs = len(candidates)
    if ndocs == 0:
        return 0.0
    df = [Counter() for _ in range(max_n)]
    for refs in references:
        for n in range(1, max_n + 1):
            seen = set()
            for r in refs:
                seen.update(_ngrams(r, n).keys())
            for g in seen:
                df[n - 1][g] += 1

    def vec(tokens, n):
        return {g: c * math.log(ndocs / max(1, df[n - 1][g]))
                for g, c in _ngrams(tokens, n).items()}

    def cos(a, b):
        na = math.sqrt(sum(v * v for v in a.values()))
        nb = math.sqrt(sum(v * v for v in b.values()))
        if na == 0.0 or nb == 0.0:
            return 0.0
        dot = sum(v * b.get(g, 0.0) for g, v in a.items())
        return dot / (na * nb)

    scores = []
    for cand, refs in zip(candidates, references):
        if not refs:
            scores.append(0.0)
            continue
        per_ref = []
        for ref in refs:
            sims = [cos(vec(cand, n), vec(ref, n)) for n in range(1, max_n + 1)]
            per_ref.append(sum(sims) / max_n)
        scores.append(sum(per_ref) / len(per_ref))
    return float(np.mean(scores))


def flatten_report(sentences):
    """Sentences of tokens -> one token stream for corpus metrics."""
    out = []
    for s in sentences:
        out.extend(s)
    return out
