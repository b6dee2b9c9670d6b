"""Synthetic paired-modality dataset with controllable class evidence.

Every sample pairs one colour-fundus image with V angiography views. The
label bits are split across the modalities by construction: the fundus image
carries uniformly random key bits, one angiography view carries the XOR of
the label bits with those key bits, and all backgrounds are seeded noise.
Neither modality alone carries any label information; together they
determine the label exactly (label = key XOR code).

Bits are drawn as visual markers that are invariant under horizontal flips,
vertical flips, and 90-degree rotation, so spatial augmentation cannot
erase the evidence. Reports are templated from the label.

label_mode:
  single  two bit pairs -> class id 0..3, one-hot target
  multi   four independent bits -> multi-hot target over 4 findings
"""

import json
import os
from dataclasses import dataclass

import numpy as np

# marker painters, all symmetric under flips and rot90 about the center
_FINDINGS = ("microaneurysm", "hemorrhage", "exudate", "neovascular")
_REGIONS = ("macula", "periphery", "disc", "arcade")


def _disc(h):
    r = np.arange(h)[:, None] - (h - 1) / 2.0
    c = np.arange(h)[None, :] - (h - 1) / 2.0
    return (r * r + c * c) <= (h / 8.0) ** 2


def _frame(h):
    m = np.zeros((h, h), dtype=bool)
    m[:2, :] = m[-2:, :] = m[:, :2] = m[:, -2:] = True
    return m


def _ring(h):
    r = np.arange(h)[:, None] - (h - 1) / 2.0
    c = np.arange(h)[None, :] - (h - 1) / 2.0
    d = np.sqrt(r * r + c * c)
    return np.abs(d - h / 4.0) <= 1.0


def _cross(h):
    r = np.arange(h)[:, None]
    c = np.arange(h)[None, :]
    return (np.abs(r - c) <= 1) | (np.abs(r + c - (h - 1)) <= 1)


_MARKERS = (_disc, _frame, _ring, _cross)


def marker_mask(kind, h):
    return _MARKERS[kind](h)


@dataclass
class SyntheticDataset:
    cfp: np.ndarray        # [n, C, H, W]
    ffa: np.ndarray        # [n, V, C, H, W]
    labels: np.ndarray     # [n] ints (single) or [n, K] 0/1 (multi)
    reports: list          # per sample: list of sentences (lists of words)
    patterns: list         # per sample: dict of the generating bits
    label_mode: str
    classes: int
    views: int
    seed: int
    marker_view: int = 2
    vocab: "Vocabulary" = None

    def __len__(self):
        return self.cfp.shape[0]


class Vocabulary:
    """Token <-> id map with fixed reserved entries."""

    PAD, UNK, START, END = 0, 1, 2, 3
    RESERVED = ("<pad>", "<unk>", "<start>", "<end>")

    def __init__(self, words):
        self.words = list(self.RESERVED) + sorted(set(words) - set(self.RESERVED))
        self.index = {w: i for i, w in enumerate(self.words)}

    def __len__(self):
        return len(self.words)

    def encode(self, tokens):
        return [self.index.get(t, self.UNK) for t in tokens]

    def decode(self, ids):
        return [self.words[i] for i in ids]


def _report_for(bits, label_mode):
    """Templated report sentences for a label bit vector."""
    active = [i for i, b in enumerate(bits) if b]
    if label_mode == "single":
        klass = bits[0] + 2 * bits[1]
        if klass == 0:
            return [["no", "abnormality", "detected", "."]]
        f, r = _FINDINGS[klass], _REGIONS[klass]
        return [[f, "observed", "in", "the", r, "."],
                ["followup", "is", "advised", "."]]
    if not active:
        return [["no", "abnormality", "detected", "."]]
    return [[_FINDINGS[i], "observed", "in", "the", _REGIONS[i], "."]
            for i in active]


def build_vocab(label_mode="single"):
    words = set()
    for bits in _all_bit_vectors(label_mode):
        for sent in _report_for(bits, label_mode):
            words.update(sent)
    return Vocabulary(sorted(words))


def _all_bit_vectors(label_mode):
    nbits = 2 if label_mode == "single" else 4
    for k in range(2 ** nbits):
        yield [(k >> i) & 1 for i in range(nbits)]


def _paint(img, bits, h, amplitude=1.0):
    for i, b in enumerate(bits):
        if b:
            img[0][marker_mask(i, h)] += amplitude


def generate(n, image_size, views, seed, label_mode="single", noise=0.05,
             marker_view=None):
    """Deterministic dataset of n samples. The code markers are painted on
    one angiography view; by default the third when it exists, else the last.
    """
    if label_mode not in ("single", "multi"):
        raise ValueError(f"label_mode must be single|multi, got {label_mode!r}")
    if marker_view is None:
        marker_view = min(2, views - 1)
    if not 0 <= marker_view < views:
        raise ValueError(
            f"marker view {marker_view} out of range for {views} views")
    rng = np.random.default_rng(seed)
    nbits = 2 if label_mode == "single" else 4
    h = image_size
    cfp = rng.normal(0.0, noise, size=(n, 1, h, h))
    ffa = rng.normal(0.0, noise, size=(n, views, 1, h, h))
    label_bits = rng.integers(0, 2, size=(n, nbits))
    key_bits = rng.integers(0, 2, size=(n, nbits))
    code_bits = label_bits ^ key_bits
    labels = []
    reports = []
    patterns = []
    for s in range(n):
        _paint(cfp[s], key_bits[s], h)
        _paint(ffa[s, marker_view], code_bits[s], h)
        if label_mode == "single":
            labels.append(int(label_bits[s, 0] + 2 * label_bits[s, 1]))
        else:
            labels.append(label_bits[s].astype(np.float64))
        reports.append(_report_for(list(label_bits[s]), label_mode))
        patterns.append({
            "label_bits": [int(b) for b in label_bits[s]],
            "key_bits": [int(b) for b in key_bits[s]],
            "code_bits": [int(b) for b in code_bits[s]],
        })
    labels = np.array(labels)
    return SyntheticDataset(
        cfp=cfp, ffa=ffa, labels=labels, reports=reports, patterns=patterns,
        label_mode=label_mode, classes=4, views=views, seed=seed,
        marker_view=marker_view, vocab=build_vocab(label_mode))


def encode_report(report, vocab):
    """Sentences of words -> sentences of ids."""
    return [vocab.encode(sent) for sent in report]


def one_hot(labels, classes):
    out = np.zeros((len(labels), classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def augment(cfp, ffa, rng):
    """Random flips and a possible quarter turn, one draw per sample,
    applied to every image of the sample. Returns copies."""
    cfp = cfp.copy()
    ffa = ffa.copy()
    if rng.random() < 0.5:
        cfp = cfp[..., ::-1]
        ffa = ffa[..., ::-1]
    if rng.random() < 0.5:
        cfp = cfp[..., ::-1, :]
        ffa = ffa[..., ::-1, :]
    if rng.random() < 0.5:
        cfp = np.rot90(cfp, axes=(-2, -1))
        ffa = np.rot90(ffa, axes=(-2, -1))
    return np.ascontiguousarray(cfp), np.ascontiguousarray(ffa)


# -- serialization ------------------------------------------------------------

def save_dataset(ds, path):
    os.makedirs(path, exist_ok=True)
    np.save(os.path.join(path, "cfp.npy"), ds.cfp)
    np.save(os.path.join(path, "ffa.npy"), ds.ffa)
    np.save(os.path.join(path, "labels.npy"), ds.labels)
    meta = {
        "label_mode": ds.label_mode,
        "classes": ds.classes,
        "views": ds.views,
        "seed": ds.seed,
        "marker_view": ds.marker_view,
        "reports": ds.reports,
        "patterns": ds.patterns,
        "vocab": ds.vocab.words,
    }
    with open(os.path.join(path, "meta.json"), "w") as f:
        json.dump(meta, f, sort_keys=True)


def load_dataset(path):
    with open(os.path.join(path, "meta.json")) as f:
        meta = json.load(f)
    vocab = Vocabulary([])
    vocab.words = list(meta["vocab"])
    vocab.index = {w: i for i, w in enumerate(vocab.words)}
    return SyntheticDataset(
        cfp=np.load(os.path.join(path, "cfp.npy")),
        ffa=np.load(os.path.join(path, "ffa.npy")),
        labels=np.load(os.path.join(path, "labels.npy")),
        reports=meta["reports"],
        patterns=meta["patterns"],
        label_mode=meta["label_mode"],
        classes=meta["classes"],
        views=meta["views"],
        seed=meta["seed"],
        marker_view=meta["marker_view"],
        vocab=vocab)
