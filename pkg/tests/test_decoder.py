"""Classifier head, LSTM cells, and the hierarchical report decoder."""

import numpy as np
import pytest

from fundusfusion import decoder as D
from fundusfusion import tensor as T
from fundusfusion.params import ParamStore
from fundusfusion.tensor import ShapeError, Tensor


def sigmoid_np(x):
    return 1.0 / (1.0 + np.exp(-x))


def make_decoder(feature_dim=6, hidden=5, vocab=9, max_s=3, max_w=4, seed=0):
    store = ParamStore()
    p = D.init_decoder(store, "dec", feature_dim, hidden, vocab,
                       max_s, max_w, np.random.default_rng(seed))
    return store, p


# -- classifier -------------------------------------------------------------

def test_classifier_rows_are_distributions(rng):
    store = ParamStore()
    p = D.init_classifier(store, "cls", 6, 4, np.random.default_rng(1))
    pooled = Tensor(rng.normal(size=(3, 6)))
    probs = D.classify(pooled, p).data
    assert probs.shape == (3, 4)
    assert np.allclose(probs.sum(axis=-1), 1.0)
    assert np.all(probs > 0)


def test_avg_pool_tokens(rng):
    x = rng.normal(size=(2, 5, 3))
    out = D.avg_pool_tokens(Tensor(x))
    assert np.allclose(out.data, x.mean(axis=-2))


def test_cross_entropy_hand_values():
    probs = Tensor(np.array([[0.5, 0.5], [0.25, 0.75]]))
    target = np.array([[1.0, 0.0], [0.0, 1.0]])
    loss = D.cross_entropy(probs, target)
    # mean of -ln 0.5 and -ln 0.75
    assert np.isclose(loss.item(), (np.log(2) - np.log(0.75)) / 2)


def test_cross_entropy_clips_zero_probabilities():
    probs = Tensor(np.array([[0.0, 1.0]]))
    loss = D.cross_entropy(probs, np.array([[1.0, 0.0]]))
    assert np.isclose(loss.item(), -np.log(1e-12))


def test_cross_entropy_rejects_shape_mismatch():
    with pytest.raises(ShapeError):
        D.cross_entropy(Tensor(np.ones((2, 3)) / 3), np.ones((2, 4)))


# -- LSTM cell ------------------------------------------------------------------

def test_lstm_step_matches_gate_arithmetic(rng):
    store = ParamStore()
    p = D.init_lstm(store, "cell", 4, 3, np.random.default_rng(2))
    x = rng.normal(size=(1, 4))
    h = rng.normal(size=(1, 3))
    c = rng.normal(size=(1, 3))
    h2, c2 = D.lstm_step(Tensor(x), Tensor(h), Tensor(c), p)
    z = x @ p.wx.data + h @ p.wh.data + p.b.data
    i, f, g, o = (z[:, 0:3], z[:, 3:6], z[:, 6:9], z[:, 9:12])
    c_want = sigmoid_np(f) * c + sigmoid_np(i) * np.tanh(g)
    h_want = sigmoid_np(o) * np.tanh(c_want)
    assert np.allclose(c2.data, c_want, atol=1e-13)
    assert np.allclose(h2.data, h_want, atol=1e-13)


def test_lstm_forget_gate_controls_memory():
    # saturate the forget gate off: the new cell state ignores the old one
    store = ParamStore()
    p = D.init_lstm(store, "cell", 2, 2, np.random.default_rng(2))
    p.b.data[2:4] = -50.0          # forget gate strongly closed
    x = Tensor(np.zeros((1, 2)))
    h = Tensor(np.zeros((1, 2)))
    _, c_a = D.lstm_step(x, h, Tensor(np.full((1, 2), 5.0)), p)
    _, c_b = D.lstm_step(x, h, Tensor(np.full((1, 2), -5.0)), p)
    assert np.allclose(c_a.data, c_b.data, atol=1e-12)


# -- sentence level -----------------------------------------------------------------

def test_sentence_step_shapes_and_ranges(rng):
    store = ParamStore()
    p = D.init_sentence(store, "s", 6, 5, np.random.default_rng(3))
    v = Tensor(rng.normal(size=(1, 6)))
    topic, stop, state = D.sentence_step(
        v, Tensor(np.zeros((1, 5))), D.initial_sentence_state(p), p)
    assert topic.shape == (1, 5)
    assert np.all(np.abs(topic.data) < 1.0)    # tanh output
    assert stop.shape == (1, 2)
    assert np.isclose(stop.data.sum(), 1.0)
    assert len(state) == 4


def test_sentence_state_feeds_forward(rng):
    # second step differs from the first because the LSTM state moved
    store = ParamStore()
    p = D.init_sentence(store, "s", 6, 5, np.random.default_rng(3))
    v = Tensor(rng.normal(size=(1, 6)))
    zero = Tensor(np.zeros((1, 5)))
    t1, _, st = D.sentence_step(v, zero, D.initial_sentence_state(p), p)
    t2, _, _ = D.sentence_step(v, zero, st, p)
    assert not np.allclose(t1.data, t2.data)


# -- word level ---------------------------------------------------------------------

def test_word_teacher_dists_align_with_targets(rng):
    store, p = make_decoder()
    topic = Tensor(rng.normal(size=(1, 5)))
    dists = D.word_teacher_dists(topic, [4, 5, 3], p.word)
    assert len(dists) == 3
    for d in dists:
        assert d.shape == (1, 9)
        assert np.isclose(d.data.sum(), 1.0)
    # the first distribution only sees the topic, never the targets
    other = D.word_teacher_dists(topic, [7, 8, 3], p.word)
    assert np.array_equal(dists[0].data, other[0].data)
    assert not np.array_equal(dists[1].data, other[1].data)


def test_word_greedy_terminates_and_excludes_end(rng):
    store, p = make_decoder()
    topic = Tensor(rng.normal(size=(1, 5)))
    ids = D.word_greedy(topic, p.word, end_id=3, max_words=4)
    assert len(ids) <= 4
    assert 3 not in ids


def test_word_greedy_is_deterministic(rng):
    store, p = make_decoder()
    topic = rng.normal(size=(1, 5))
    a = D.word_greedy(Tensor(topic), p.word, 3, 4)
    b = D.word_greedy(Tensor(topic.copy()), p.word, 3, 4)
    assert a == b


# -- full decoder ----------------------------------------------------------------------

def test_generate_report_respects_caps(rng):
    store, p = make_decoder(max_s=3, max_w=4)
    v = Tensor(rng.normal(size=(1, 6)))
    report = D.generate_report(v, p, end_id=3)
    assert 1 <= len(report) <= 3
    assert all(len(s) <= 4 for s in report)


def test_report_loss_assembles_per_step_terms(rng):
    store, p = make_decoder()
    v = Tensor(rng.normal(size=(1, 6)))
    sentences = [[4, 5], [6]]
    stop_loss, word_loss = D.report_loss(v, p, sentences, end_id=3)

    # replay the sentence loop by hand
    state = D.initial_sentence_state(p.sent)
    prev = Tensor(np.zeros((1, 5)))
    stop_want = 0.0
    word_want = 0.0
    for s, sent in enumerate(sentences):
        topic, stop, state = D.sentence_step(v, prev, state, p.sent)
        prev = topic
        col = 1 if s == len(sentences) - 1 else 0
        stop_want += -np.log(stop.data[0, col])
        targets = sent + [3]
        dists = D.word_teacher_dists(topic, targets, p.word)
        for dist, tgt in zip(dists, targets):
            word_want += -np.log(dist.data[0, tgt])
    assert np.isclose(stop_loss.item(), stop_want, atol=1e-12)
    assert np.isclose(word_loss.item(), word_want, atol=1e-12)


def test_report_loss_validations(rng):
    store, p = make_decoder(max_s=2)
    v = Tensor(rng.normal(size=(1, 6)))
    with pytest.raises(ShapeError):
        D.report_loss(v, p, [], end_id=3)
    with pytest.raises(ShapeError):
        D.report_loss(v, p, [[4], [5], [6]], end_id=3)


def test_report_loss_gradient_reaches_all_decoder_parameters(rng):
    store, p = make_decoder()
    v = Tensor(rng.normal(size=(1, 6)), requires_grad=True)
    stop_loss, word_loss = D.report_loss(v, p, [[4, 5], [6]], end_id=3)
    T.add(stop_loss, word_loss).backward()
    for name, t in store.unique():
        assert t.grad is not None, name
    assert v.grad is not None


def test_joint_loss_weighting():
    a, b, c = Tensor(np.array(2.0)), Tensor(np.array(3.0)), Tensor(np.array(5.0))
    out = D.joint_loss(a, b, c, lambdas=(1.0, 0.5, 0.1))
    assert np.isclose(out.item(), 2.0 + 1.5 + 0.5)
