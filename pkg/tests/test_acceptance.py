"""Acceptance suite: nine go/no-go checks, one verdict line each.

Each test prints `criterion N: PASS|FAIL (detail)`. The two training
criteria share nothing; every run here is seeded and reproducible.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from fundusfusion import metrics as M
from fundusfusion import multiview as MV
from fundusfusion.backbone import ScoreCounter, init_attention
from fundusfusion.config import RunConfig
from fundusfusion.crossmodal import (cross_attention, downsample_tokens,
                                     init_branch, init_cross_attention)
from fundusfusion.gradcheck import run_all
from fundusfusion.multiview import TokenGrid, attention_flops
from fundusfusion.embedding import Modality
from fundusfusion.params import ParamStore
from fundusfusion.tensor import Tensor
from fundusfusion import tensor as T
from fundusfusion.training import (classification_metrics, make_datasets,
                                   report_corpus, train)


def verdict(num, ok, detail):
    line = f"criterion {num}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    assert ok, line


# -- 1. finite-difference gradients across every op -------------------------

def test_criterion_1_gradient_suite():
    t0 = time.time()
    results = run_all(points=20, seed=0, tol=1e-4)
    elapsed = time.time() - t0
    worst = max(r["max_rel_err"] for r in results.values())
    ok = (all(r["passed"] for r in results.values())
          and all(r["points"] >= 20 for r in results.values())
          and worst < 1e-4 and elapsed < 120)
    verdict(1, ok, f"{len(results)} ops, worst rel err {worst:.2e}, "
                   f"{elapsed:.1f}s")


# -- 2. shifted windows equal brute-force masked global attention ------------

def _masked_global(canvas, p, window, shift):
    """Full attention with pairs allowed only when they share a window and
    a boundary region in the cyclically shifted frame."""
    hh, ww, d = canvas.shape
    heads, dh = p.heads, d // p.heads
    x = np.roll(canvas, (-shift, -shift), (0, 1)) if shift else canvas
    flat = x.reshape(hh * ww, d)
    rows, cols = np.indices((hh, ww))
    wid = ((rows // window) * (ww // window) + cols // window).reshape(-1)
    reg = (MV._region_image(hh, ww, window, shift) if shift
           else np.zeros((hh, ww), int)).reshape(-1)
    allow = (wid[:, None] == wid[None, :]) & (reg[:, None] == reg[None, :])
    q, k, v = (flat @ w.data for w in (p.wq, p.wk, p.wv))
    outs = []
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        s = q[:, sl] @ k[:, sl].T / np.sqrt(dh)
        e = np.where(allow, np.exp(s - s.max(axis=-1, keepdims=True)), 0.0)
        outs.append(e / e.sum(axis=-1, keepdims=True) @ v[:, sl])
    out = (np.concatenate(outs, axis=-1) @ p.wo.data).reshape(hh, ww, d)
    return np.roll(out, (shift, shift), (0, 1)) if shift else out


def test_criterion_2_shifted_window_oracle():
    d = 8
    p = init_attention(ParamStore(), "w", d, 2, np.random.default_rng(3))
    rng = np.random.default_rng(17)
    worst, cases = 0.0, 0
    for side in (4, 8):
        for v in (1, 2, 4):
            for m in (2, 4):
                for shift in (0, m // 2):
                    canvas = rng.normal(size=(side, v * side, d))
                    got = MV.window_attention(Tensor(canvas), p, m, shift).data
                    want = _masked_global(canvas, p, m, shift)
                    worst = max(worst, float(np.max(np.abs(got - want))))
                    cases += 1
    verdict(2, cases == 24 and worst < 1e-9,
            f"{cases} (side,V,M,shift) cases, max abs diff {worst:.2e}")


# -- 3. analytic flop counts and linear scaling in views ---------------------

def test_criterion_3_complexity_accounting():
    rep = attention_flops(4, 196, 768, 7)
    exact = (rep.global_attention_flops == 2793799680
             and rep.windowed_attention_flops == 1908695040)

    d, side, m = 32, 4, 2
    store = ParamStore()
    p = MV.init_view_fusion(store, "mv", d, 4, m, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    counts = []
    for v in (1, 2, 4):
        grids = [TokenGrid(tokens=Tensor(rng.normal(size=(side * side, d))),
                           side=side, modality=Modality.FFA)
                 for _ in range(v)]
        mv_pos = Tensor(rng.normal(size=(v * side * side, d)))
        counter = ScoreCounter()
        MV.fuse_views(grids, mv_pos, p, counter=counter)
        counts.append(counter.count)
    linear = counts[1] == 2 * counts[0] and counts[2] == 4 * counts[0]
    verdict(3, exact and linear,
            f"reference ints ok={exact}, counts V=1,2,4 are {counts}")


# -- 4. conv-branch gradient footprints equal the declared fields ------------

def test_criterion_4_receptive_fields():
    side, d = 16, 4
    rng = np.random.default_rng(2)
    declared = {(8, True): 8, (4, True): 4, (2, True): 2,
                (8, False): 4, (4, False): 2, (2, False): 1}
    bad = []
    for (rate, large), rf in declared.items():
        p = init_branch(ParamStore(), "b", d, rate, large, rng)
        x = Tensor(rng.normal(size=(side * side, d)), requires_grad=True)
        out, out_side = downsample_tokens(x, side, p)
        T.tsum(out[0:1, :]).backward()
        got = set(np.nonzero(np.any(x.grad != 0.0, axis=1))[0])
        want = {r * side + c for r in range(rf) for c in range(rf)}
        if got != want:
            bad.append((rate, large))
    verdict(4, not bad, f"6 branches, fields 8/4/2/1 exact, mismatches={bad}")


# -- 5. half the heads read each resolution branch ---------------------------

def test_criterion_5_head_split():
    rng = np.random.default_rng(4)
    ok, details = True, []
    for d, heads, rate, side in ((32, 16, 4, 8), (8, 2, 2, 4)):
        p = init_cross_attention(ParamStore(), "c", d, heads, rate, rng)
        x = Tensor(rng.normal(size=(6, d)))
        y = Tensor(rng.normal(size=(side * side, d)))
        trace = {}
        cross_attention(x, y, side, p, trace=trace)
        want = {i: ("large" if i < heads // 2 else "small")
                for i in range(heads)}
        routed = trace["head_branch"] == want
        coarser = trace["branch_tokens"]["large"] < trace["branch_tokens"]["small"]
        ok = ok and routed and coarser
        details.append(f"h={heads}: routed={routed}")
    verdict(5, ok, ", ".join(details))


# -- 6. the fused model learns the paired task; one modality cannot ----------

def desk_run_config(**kw):
    base = dict(task="classify", image_size=32, patch_size=8, channels=1,
                embed_dim=32, views=4, backbone_layers=2, backbone_heads=4,
                window=2, window_heads=4, cross_heads=4, cross_rates=(8, 4, 2),
                classes=4, hidden=32, lr=3e-3, batch_size=16, epochs=50,
                seed=42, train_samples=512, test_samples=128)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def classify_run():
    cfg = desk_run_config()
    t0 = time.time()
    summary = train(cfg, early_stop=("accuracy", 0.95, 2))
    return cfg, summary, time.time() - t0


def test_criterion_6_end_to_end_learning(classify_run):
    cfg, summary, elapsed = classify_run
    train_ds, _ = make_datasets(cfg)
    train_acc = classification_metrics(summary["model"], train_ds)["accuracy"]
    test_acc = summary["test"]["accuracy"]

    ablation = replace(cfg, fusion="cfp-only", epochs=8)
    ab_acc = train(ablation)["test"]["accuracy"]

    ok = (summary["epochs_run"] <= 50 and elapsed < 900
          and train_acc >= 0.95 and test_acc >= 0.85 and ab_acc <= 0.60)
    verdict(6, ok, f"epochs={summary['epochs_run']}, train={train_acc:.4f}, "
                   f"test={test_acc:.4f}, {elapsed:.0f}s, "
                   f"single-modality test={ab_acc:.4f}")


# -- 7. report generation reaches BLEU-1 0.8 and always terminates -----------

@pytest.fixture(scope="module")
def report_run():
    cfg = desk_run_config(task="report", batch_size=8, lambda_class=3.0,
                          test_samples=64, max_sentences=10, max_words=20)
    t0 = time.time()
    summary = train(cfg, early_stop=("bleu1", 0.82, 2))
    return cfg, summary, time.time() - t0


def test_criterion_7_report_task(report_run):
    cfg, summary, elapsed = report_run
    bleu1 = summary["test"]["bleu1"]
    _, test_ds = make_datasets(cfg)
    cands, _ = report_corpus(summary["model"], test_ds)
    cap = cfg.max_sentences * cfg.max_words
    longest = max(len(c) for c in cands)
    ok = (summary["epochs_run"] <= 50 and bleu1 >= 0.8
          and len(cands) == len(test_ds) and longest <= cap)
    verdict(7, ok, f"epochs={summary['epochs_run']}, bleu1={bleu1:.4f}, "
                   f"longest report {longest} of {cap} tokens, {elapsed:.0f}s")


# -- 8. metric implementations reproduce hand-worked fixtures ----------------

def test_criterion_8_metric_fixtures():
    tol = 1e-9
    cands = [["the", "cat", "sat"], ["the", "the", "dog"]]
    refs = [[["the", "cat", "sat"]], [["the", "dog", "barks"]]]
    bleu = M.bleu_scores(cands, refs)
    checks = [
        abs(bleu["bleu1"] - 5 / 6) <= tol,
        abs(bleu["bleu2"] - 0.7905694150420948329997) <= tol,
        abs(bleu["bleu3"] - (5 / 6 * 3 / 4 * 1 / 2) ** (1 / 3)) <= tol,
        abs(M.bleu_scores([["a", "a", "a"]], [[["a", "b"]]])["bleu1"]
            - 1 / 3) <= tol,
        abs(M.bleu_scores([["a", "b"]], [[["a", "b", "c", "d"]]])["bleu1"]
            - 0.3678794411714423215955) <= tol,
        abs(M.rouge_l([["a", "b", "c", "d"]], [[["a", "c", "d"]]])
            - 0.8798076923076923076923) <= tol,
        abs(M.cider([["a", "b"], ["a", "c"]], [[["a", "b"]], [["c", "d"]]])
            - 0.3125) <= tol,
    ]
    verdict(8, all(checks), f"{sum(checks)}/{len(checks)} fixtures within 1e-9")


# -- 9. identical seeds give bit-identical checkpoints ------------------------

def test_criterion_9_determinism(tmp_path):
    cfg = desk_run_config(embed_dim=8, views=2, backbone_layers=1,
                          backbone_heads=2, window_heads=2, cross_heads=2,
                          hidden=8, epochs=2, batch_size=8, train_samples=16,
                          test_samples=8, seed=11)
    train(cfg, out_dir=str(tmp_path / "a"))
    train(cfg, out_dir=str(tmp_path / "b"))
    a = (tmp_path / "a" / "model.ckpt").read_bytes()
    b = (tmp_path / "b" / "model.ckpt").read_bytes()
    ca = (tmp_path / "a" / "config.txt").read_text()
    cb = (tmp_path / "b" / "config.txt").read_text()
    verdict(9, a == b and len(a) > 0 and ca == cb,
            f"checkpoints {len(a)} bytes, identical={a == b}")
