"""Training and evaluation loops.

Everything is seeded through numpy Generators: model init from cfg.seed,
the shuffle/augmentation stream from cfg.seed + 1, the dataset from its own
seed. Per-epoch metrics are appended to <out>/metrics.jsonl; the final
parameter state is written to <out>/model.ckpt along with the resolved
config. Identical configs and seeds reproduce checkpoints byte for byte.
"""

import json
import os
import time

import numpy as np

from . import data as D
from . import metrics as M
from .config import dump_config
from .decoder import cross_entropy, joint_loss, generate_report, report_loss
from .model import build_model
from .optim import Adam, PlateauHalver
from .tensor import Tensor


def make_datasets(cfg):
    """Load from cfg.data_dir when set, else generate deterministic splits."""
    if cfg.data_dir:
        train = D.load_dataset(os.path.join(cfg.data_dir, "train"))
        test = D.load_dataset(os.path.join(cfg.data_dir, "test"))
        return train, test
    ds_seed = cfg.resolved_data_seed
    train = D.generate(cfg.train_samples, cfg.image_size, cfg.views,
                       seed=ds_seed, label_mode=cfg.label_mode)
    test = D.generate(cfg.test_samples, cfg.image_size, cfg.views,
                      seed=ds_seed + 1, label_mode=cfg.label_mode)
    return train, test


def _class_targets(ds, idx):
    if ds.label_mode == "single":
        return D.one_hot(ds.labels[idx], ds.classes)
    return ds.labels[idx].astype(np.float64)


def _predict(probs, label_mode, classes):
    if label_mode == "single":
        return np.argmax(probs, axis=-1)
    # softmax mass above half the uniform share marks a finding present
    return (probs >= 0.5 / classes).astype(int)


def classification_metrics(model, ds, batch=32):
    preds = []
    for lo in range(0, len(ds), batch):
        idx = np.arange(lo, min(lo + batch, len(ds)))
        probs = model.class_probs(Tensor(ds.cfp[idx]), Tensor(ds.ffa[idx])).data
        preds.append(_predict(probs, ds.label_mode, ds.classes))
    preds = np.concatenate(preds)
    if ds.label_mode == "single":
        return M.classification_report(ds.labels, preds, ds.classes)
    return M.multilabel_report(ds.labels, preds)


def report_corpus(model, ds, limit=None):
    """Greedy reports for the corpus; returns (candidates, references)."""
    n = len(ds) if limit is None else min(limit, len(ds))
    vocab = ds.vocab
    cands, refs = [], []
    for i in range(n):
        pooled = model.pooled(Tensor(ds.cfp[i]), Tensor(ds.ffa[i]))
        v = pooled.reshape((1, pooled.shape[-1]))
        sentences = generate_report(v, model.decoder, vocab.END)
        cands.append(M.flatten_report([vocab.decode(s) for s in sentences]))
        refs.append([M.flatten_report(ds.reports[i])])
    return cands, refs


def report_metrics(model, ds, limit=None):
    cands, refs = report_corpus(model, ds, limit=limit)
    out = M.bleu_scores(cands, refs)
    out["rouge_l"] = M.rouge_l(cands, refs)
    out["cider"] = M.cider(cands, refs)
    return out


class RunLog:
    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.path = None
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            self.path = os.path.join(out_dir, "metrics.jsonl")
            # truncate any previous run in this directory
            open(self.path, "w").close()

    def append(self, record):
        if self.path:
            with open(self.path, "a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")


def _finish(model, cfg, out_dir):
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        model.store.save(os.path.join(out_dir, "model.ckpt"))
        with open(os.path.join(out_dir, "config.txt"), "w") as f:
            f.write(dump_config(cfg))


def train(cfg, out_dir=None, early_stop=None):
    """Train per cfg.task; returns a summary dict.

    early_stop: optional (metric_name, threshold, every_n_epochs); the
    metric is computed on the test split and training stops once reached.
    """
    train_ds, test_ds = make_datasets(cfg)
    vocab_size = len(train_ds.vocab) if cfg.task == "report" else 0
    model = build_model(cfg.model_config(vocab_size), seed=cfg.seed)
    opt = Adam(model.store, lr=cfg.lr)
    sched = PlateauHalver(opt, patience=cfg.plateau_patience)
    rng = np.random.default_rng(cfg.seed + 1)
    log = RunLog(out_dir)
    batch = cfg.resolved_batch
    n = len(train_ds)
    lambdas = (cfg.lambda_class, cfg.lambda_stop, cfg.lambda_word)
    stopped = None

    for epoch in range(cfg.epochs):
        t0 = time.time()
        order = rng.permutation(n)
        epoch_loss = 0.0
        seen = 0
        for lo in range(0, n, batch):
            idx = order[lo : lo + batch]
            cfp = train_ds.cfp[idx]
            ffa = train_ds.ffa[idx]
            aug_c = np.empty_like(cfp)
            aug_f = np.empty_like(ffa)
            for j in range(len(idx)):
                aug_c[j], aug_f[j] = D.augment(cfp[j], ffa[j], rng)
            targets = _class_targets(train_ds, idx)
            if cfg.task == "classify":
                probs = model.class_probs(Tensor(aug_c), Tensor(aug_f))
                loss = cross_entropy(probs, targets)
            else:
                loss = _report_batch_loss(model, train_ds, idx, aug_c, aug_f,
                                          targets, lambdas)
            loss.backward()
            opt.step()
            opt.zero_grad()
            epoch_loss += loss.item() * len(idx)
            seen += len(idx)
        epoch_loss /= seen
        sched.update(epoch_loss)
        record = {"epoch": epoch, "loss": round(epoch_loss, 6),
                  "lr": opt.lr, "seconds": round(time.time() - t0, 3)}
        if early_stop and (epoch + 1) % early_stop[2] == 0:
            name, threshold, _ = early_stop
            current = _named_metric(model, test_ds, name)
            record[f"test_{name}"] = round(current, 4)
            if current >= threshold:
                stopped = epoch
        log.append(record)
        if stopped is not None:
            break

    summary = {"epochs_run": cfg.epochs if stopped is None else stopped + 1,
               "stopped_early": stopped is not None}
    if cfg.task == "classify":
        summary["test"] = _strip(classification_metrics(model, test_ds))
    else:
        summary["test"] = report_metrics(model, test_ds)
        summary["test_class"] = _strip(classification_metrics(model, test_ds))
    _finish(model, cfg, out_dir)
    summary["model"] = model
    return summary


def _strip(report):
    return {k: v for k, v in report.items()
            if k not in ("confusion", "per_class", "per_label")}


def _named_metric(model, ds, name):
    if name in ("accuracy", "hamming_accuracy"):
        return classification_metrics(model, ds)[name]
    return report_metrics(model, ds)[name]


def _report_batch_loss(model, ds, idx, cfp, ffa, targets, lambdas):
    """Joint loss over one batch: encoder runs batched, decoder per sample."""
    pooled = model.pooled(Tensor(cfp), Tensor(ffa))
    from .decoder import classify  # local import keeps module load light
    probs = classify(pooled, model.classifier)
    class_loss = cross_entropy(probs, targets)
    vocab = ds.vocab
    stop_total = None
    word_total = None
    for j, sample in enumerate(idx):
        v = pooled[j : j + 1]
        sents = [vocab.encode(s) for s in ds.reports[sample]]
        sl, wl = report_loss(v, model.decoder, sents, vocab.END)
        stop_total = sl if stop_total is None else stop_total + sl
        word_total = wl if word_total is None else word_total + wl
    scale = 1.0 / len(idx)
    return joint_loss(class_loss, stop_total * scale, word_total * scale,
                      lambdas)


def evaluate(cfg, checkpoint, split="test"):
    """Metrics for a saved checkpoint on the chosen split."""
    train_ds, test_ds = make_datasets(cfg)
    ds = test_ds if split == "test" else train_ds
    vocab_size = len(ds.vocab) if cfg.task == "report" else 0
    model = build_model(cfg.model_config(vocab_size), seed=cfg.seed)
    model.store.load(checkpoint)
    if cfg.task == "classify":
        return _strip(classification_metrics(model, ds))
    out = report_metrics(model, ds)
    out.update({f"class_{k}": v
                for k, v in _strip(classification_metrics(model, ds)).items()})
    return out


def generate(cfg, checkpoint, split="test", limit=4):
    """Greedy reports with their references, as plain text."""
    train_ds, test_ds = make_datasets(cfg)
    ds = test_ds if split == "test" else train_ds
    model = build_model(cfg.model_config(len(ds.vocab)), seed=cfg.seed)
    model.store.load(checkpoint)
    cands, refs = report_corpus(model, ds, limit=limit)
    return [{"generated": " ".join(c), "reference": " ".join(r[0])}
            for c, r in zip(cands, refs)]
