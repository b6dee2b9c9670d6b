"""Task heads: linear classifier and the hierarchical report decoder.

The report decoder runs a two-layer sentence LSTM over the pooled fused
feature concatenated with the previous topic vector. Each step emits a topic
(tanh of affine maps of the hidden state and of the feature) plus a
continue/end distribution. A word LSTM then unrolls each sentence, taking
the topic as its first input and the previous word embedding afterwards.

Joint training loss = lambda1 * classification CE + lambda2 * stop CE summed
over sentence steps + lambda3 * word CE summed over all word positions.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor
from .params import fan_in_param, uniform_param


# -- classification -----------------------------------------------------------

@dataclass
class ClassifierParams:
    w: Tensor   # [F, K]
    b: Tensor   # [K]


def init_classifier(store, prefix, feature_dim, classes, rng):
    return ClassifierParams(
        w=store.add(f"{prefix}.w", fan_in_param(rng, (feature_dim, classes),
                                                feature_dim)),
        b=store.add(f"{prefix}.b", np.zeros(classes)),
    )


def avg_pool_tokens(tokens):
    """[..., N, F] -> [..., F]."""
    return T.tmean(tokens, axis=-2)


def classify(pooled, p):
    """Class probabilities via softmax of an affine map."""
    return T.softmax(T.affine(pooled, p.w, p.b), axis=-1)


def cross_entropy(probs, target):
    """-sum(target * ln p) over the class axis, mean over leading axes.

    target is a plain array (one-hot, multi-hot, or any distribution) with
    the same trailing dim; probabilities are clipped at 1e-12 inside the log.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape != probs.shape:
        raise ShapeError(
            f"target shape {target.shape} != probs shape {probs.shape}")
    nll = T.neg(T.tsum(T.mul(T.log(T.clip_min(probs, 1e-12)), Tensor(target)),
                       axis=-1))
    return T.tmean(nll) if nll.ndim else nll


# -- LSTM cells ----------------------------------------------------------------

@dataclass
class LstmParams:
    wx: Tensor   # [in, 4H]
    wh: Tensor   # [H, 4H]
    b: Tensor    # [4H]
    hidden: int


def init_lstm(store, prefix, in_dim, hidden, rng):
    return LstmParams(
        wx=store.add(f"{prefix}.wx", fan_in_param(rng, (in_dim, 4 * hidden), in_dim)),
        wh=store.add(f"{prefix}.wh", fan_in_param(rng, (hidden, 4 * hidden), hidden)),
        b=store.add(f"{prefix}.b", np.zeros(4 * hidden)),
        hidden=hidden,
    )


def lstm_step(x, h, c, p):
    """One cell update; gate order i, f, g, o. Inputs are [1, dim] rows."""
    hd = p.hidden
    z = T.add(T.add(T.matmul(x, p.wx), T.matmul(h, p.wh)), p.b)
    i = T.sigmoid(z[:, 0 * hd:1 * hd])
    f = T.sigmoid(z[:, 1 * hd:2 * hd])
    g = T.tanh(z[:, 2 * hd:3 * hd])
    o = T.sigmoid(z[:, 3 * hd:4 * hd])
    c2 = T.add(T.mul(f, c), T.mul(i, g))
    h2 = T.mul(o, T.tanh(c2))
    return h2, c2


# -- sentence level -------------------------------------------------------------

@dataclass
class SentenceParams:
    l1: LstmParams
    l2: LstmParams
    h0_1: Tensor
    c0_1: Tensor
    h0_2: Tensor
    c0_2: Tensor
    w_topic_h: Tensor   # [H, E]
    b_topic_h: Tensor
    w_topic_v: Tensor   # [F, E]
    b_topic_v: Tensor
    w_stop: Tensor      # [H, 2]
    b_stop: Tensor


def init_sentence(store, prefix, feature_dim, hidden, rng):
    def state(nm):
        return store.add(f"{prefix}.{nm}", uniform_param(rng, (1, hidden), 0.02))
    return SentenceParams(
        l1=init_lstm(store, f"{prefix}.l1", feature_dim + hidden, hidden, rng),
        l2=init_lstm(store, f"{prefix}.l2", hidden, hidden, rng),
        h0_1=state("h0_1"), c0_1=state("c0_1"),
        h0_2=state("h0_2"), c0_2=state("c0_2"),
        w_topic_h=store.add(f"{prefix}.wth", fan_in_param(rng, (hidden, hidden), hidden)),
        b_topic_h=store.add(f"{prefix}.bth", np.zeros(hidden)),
        w_topic_v=store.add(f"{prefix}.wtv",
                            fan_in_param(rng, (feature_dim, hidden), feature_dim)),
        b_topic_v=store.add(f"{prefix}.btv", np.zeros(hidden)),
        w_stop=store.add(f"{prefix}.wstop", fan_in_param(rng, (hidden, 2), hidden)),
        b_stop=store.add(f"{prefix}.bstop", np.zeros(2)),
    )


def initial_sentence_state(p):
    return (p.h0_1, p.c0_1, p.h0_2, p.c0_2)


def sentence_step(v, prev_topic, state, p):
    """One sentence-LSTM step.

    v: [1, F] pooled feature, prev_topic: [1, E] (zeros before the first
    sentence). Returns (topic [1, E], stop_probs [1, 2] with columns
    (continue, end), next state).
    """
    h1, c1, h2, c2 = state
    x = T.concat([v, prev_topic], axis=-1)
    h1n, c1n = lstm_step(x, h1, c1, p.l1)
    h2n, c2n = lstm_step(h1n, h2, c2, p.l2)
    topic = T.tanh(T.add(T.affine(h2n, p.w_topic_h, p.b_topic_h),
                         T.affine(v, p.w_topic_v, p.b_topic_v)))
    stop = T.softmax(T.affine(h2n, p.w_stop, p.b_stop), axis=-1)
    return topic, stop, (h1n, c1n, h2n, c2n)


# -- word level ------------------------------------------------------------------

@dataclass
class WordParams:
    emb: Tensor     # [vocab, E]
    lstm: LstmParams
    w_out: Tensor   # [H, vocab]
    b_out: Tensor


def init_word(store, prefix, vocab_size, hidden, rng):
    return WordParams(
        emb=store.add(f"{prefix}.emb", uniform_param(rng, (vocab_size, hidden), 0.02)),
        lstm=init_lstm(store, f"{prefix}.lstm", hidden, hidden, rng),
        w_out=store.add(f"{prefix}.wout", fan_in_param(rng, (hidden, vocab_size), hidden)),
        b_out=store.add(f"{prefix}.bout", np.zeros(vocab_size)),
    )


def _word_zero_state(p):
    z = Tensor(np.zeros((1, p.lstm.hidden)))
    return z, z


def word_teacher_dists(topic, targets, p):
    """Teacher-forced word distributions, one [1, vocab] row per target.

    Inputs are the topic, then the embeddings of targets[:-1]; the returned
    list lines up with `targets` (which normally ends with the end id).
    """
    h, c = _word_zero_state(p)
    dists = []
    x = topic
    for t, target in enumerate(targets):
        h, c = lstm_step(x, h, c, p.lstm)
        dists.append(T.softmax(T.affine(h, p.w_out, p.b_out), axis=-1))
        if t + 1 < len(targets):
            x = T.take_rows(p.emb, np.array([target]))
    return dists


def word_greedy(topic, p, end_id, max_words):
    """Greedy decode until the end id or the word cap; returns content ids."""
    h, c = _word_zero_state(p)
    ids = []
    x = topic
    for _ in range(max_words):
        h, c = lstm_step(x, h, c, p.lstm)
        logits = T.affine(h, p.w_out, p.b_out)
        nxt = int(np.argmax(logits.data[0]))
        if nxt == end_id:
            break
        ids.append(nxt)
        x = T.take_rows(p.emb, np.array([nxt]))
    return ids


# -- full decoder ------------------------------------------------------------------

@dataclass
class DecoderParams:
    sent: SentenceParams
    word: WordParams
    hidden: int
    max_sentences: int
    max_words: int


def init_decoder(store, prefix, feature_dim, hidden, vocab_size,
                 max_sentences, max_words, rng):
    return DecoderParams(
        sent=init_sentence(store, f"{prefix}.sent", feature_dim, hidden, rng),
        word=init_word(store, f"{prefix}.word", vocab_size, hidden, rng),
        hidden=hidden,
        max_sentences=max_sentences,
        max_words=max_words,
    )


def generate_report(v, p, end_id):
    """Greedy report: list of sentences (lists of word ids).

    Decoding stops when the end probability exceeds 0.5 after a sentence,
    or at the sentence cap; each sentence stops at the end id or the word
    cap, so total length is bounded by max_sentences * max_words.
    """
    state = initial_sentence_state(p.sent)
    topic_dim = p.hidden
    prev_topic = Tensor(np.zeros((1, topic_dim)))
    sentences = []
    for _ in range(p.max_sentences):
        topic, stop, state = sentence_step(v, prev_topic, state, p.sent)
        sentences.append(word_greedy(topic, p.word, end_id, p.max_words))
        prev_topic = topic
        if stop.data[0, 1] > 0.5:
            break
    return sentences


def report_loss(v, p, sentences, end_id):
    """Teacher-forced stop and word losses for one sample.

    sentences: list of word-id lists (without the end id; it is appended
    per sentence as the final word target). Returns (stop_loss, word_loss)
    scalars, each a plain sum over steps.
    """
    if not sentences:
        raise ShapeError("report_loss needs at least one target sentence")
    if len(sentences) > p.max_sentences:
        raise ShapeError(
            f"{len(sentences)} sentences exceed the cap {p.max_sentences}")
    state = initial_sentence_state(p.sent)
    prev_topic = Tensor(np.zeros((1, p.hidden)))
    stop_loss = None
    word_loss = None
    last = len(sentences) - 1
    for s, sent in enumerate(sentences):
        topic, stop, state = sentence_step(v, prev_topic, state, p.sent)
        prev_topic = topic
        stop_target = np.array([[0.0, 1.0]]) if s == last else np.array([[1.0, 0.0]])
        sl = cross_entropy(stop, stop_target)
        stop_loss = sl if stop_loss is None else T.add(stop_loss, sl)
        targets = list(sent) + [end_id]
        vocab = p.word.emb.shape[0]
        for dist, tgt in zip(word_teacher_dists(topic, targets, p.word), targets):
            onehot = np.zeros((1, vocab))
            onehot[0, tgt] = 1.0
            wl = cross_entropy(dist, onehot)
            word_loss = wl if word_loss is None else T.add(word_loss, wl)
    return stop_loss, word_loss


def joint_loss(class_loss, stop_loss, word_loss, lambdas=(1.0, 1.0, 1.0)):
    """Weighted sum of the three task losses."""
    l1, l2, l3 = lambdas
    return T.add(T.add(T.mul(class_loss, l1), T.mul(stop_loss, l2)),
                 T.mul(word_loss, l3))
