#!/usr/bin/env python3
"""Smoke test for the nsim_py extension module.

Builds nothing itself: run `cargo build -p nsim-py --release` (or debug)
first, then `python3 python/smoke_test.py`. The script locates the built
cdylib, imports it, and exercises the main surface.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def import_nsim_py():
    candidates = [
        REPO / "target" / "release" / "libnsim_py.so",
        REPO / "target" / "debug" / "libnsim_py.so",
        REPO / "target" / "release" / "libnsim_py.dylib",
        REPO / "target" / "debug" / "libnsim_py.dylib",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("build the extension first: cargo build -p nsim-py --release")
    staging = Path(tempfile.mkdtemp(prefix="nsim_py_"))
    shutil.copy2(built, staging / "nsim_py.so")
    sys.path.insert(0, str(staging))
    import nsim_py

    return nsim_py


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main():
    nsim = import_nsim_py()

    # text cleaning and composition
    assert nsim.clean_text("see https://cloud.google.com/translate now") == "see now"
    assert nsim.clean_text("log at C:\\tmp\\a.txt end") == "log at end"
    assert nsim.compose_document("T", "B") == "T\nB"
    assert nsim.compose_document("", "B") == "B"

    # tokenizer: deterministic, case folding, reserved ids
    ids1 = nsim.tokenize("A a b")
    assert ids1 == nsim.tokenize("A a b")
    assert ids1[0] == ids1[1]
    assert all(i >= 4 for i in ids1)

    # head-tail truncation keeps prefix + suffix
    seq = list(range(4, 304))
    cut = nsim.head_tail_truncate(seq, 200, 56)
    assert len(cut) == 256
    assert cut[:200] == seq[:200] and cut[-56:] == seq[-56:]

    # pair encoding: CLS/SEP layout within the budget
    pair = nsim.encode_pair("one two three", "vier fünf")
    assert pair[0] == 1 and pair.count(2) == 2 and pair[-1] == 2
    long_pair = nsim.encode_pair(" ".join(["w"] * 400), " ".join(["v"] * 400))
    assert len(long_pair) == 3 + 256 + 256

    # loss algebra: the hand-derived two-forward case
    y1 = [0.0] * 7
    y2 = [9.0] * 7
    gold = [1.0] * 7
    y1[4], y2[4], gold[4] = 2.0, 3.0, 2.5
    breakdown = nsim.rdrop_loss([y1, y2], gold, w=1.0, alpha=0.5)
    approx(breakdown["l_r"], 1.0, 1e-12)
    approx(breakdown["l_b"], 0.25, 1e-12)
    approx(breakdown["total"], 0.625, 1e-12)
    loss, per_dim = nsim.multi_label_loss(y1, gold, 1.0)
    approx(loss, 0.25, 1e-12)
    assert len(per_dim) == 7

    # pearson oracle value and error behaviour
    approx(nsim.pearson([1, 2, 3], [1, 2, 4]), 3.0 / math.sqrt(2 * 14 / 3), 1e-12)
    approx(nsim.pearson([1, 2, 3], [3, 2, 1]), -1.0, 1e-12)
    try:
        nsim.pearson([1.0, 1.0], [1.0, 2.0])
        raise AssertionError("zero variance should raise")
    except ValueError:
        pass

    # clipping
    assert nsim.clip_scores([4.3, 0.7, 2.5]) == [4.0, 1.0, 2.5]

    # default augmentation plan arithmetic
    plan_lines = [l for l in nsim.default_plan_jsonl().splitlines() if l.strip()]
    import json

    rows = [json.loads(l) for l in plan_lines]
    emitted = sum(r["quantity"] * len(r["targets"]) for r in rows)
    assert emitted == 4742, emitted
    assert rows[0]["origin"] == "en-en"

    # k-fold split balance and determinism
    ids = [f"{i}_{i + 1000}" for i in range(21)]
    folds = nsim.split_kfold(ids, 7, 42)
    assert folds == nsim.split_kfold(ids, 7, 42)
    sizes = [list(folds.values()).count(f) for f in range(7)]
    assert max(sizes) - min(sizes) <= 1

    # languages
    assert nsim.supported_languages() == ["es", "it", "de", "en", "zh", "ar", "pl", "fr", "tr", "ru"]
    assert nsim.is_supported_language("de") and not nsim.is_supported_language("xx")

    # model: determinism, dropout stochasticity, checkpoint round trip
    small_config = (
        '{"vocab_size":512,"embed_dim":16,"num_layers":1,"num_heads":2,'
        '"ff_dim":32,"dropout_p":0.1,"max_positions":515,'
        '"head_layers":2,"head_activation":true}'
    )
    model = nsim.Model(seed=7, config_json=small_config)
    assert model.num_parameters() > 0
    p1 = model.predict_pair("some words here", "andere worte hier")
    p2 = model.predict_pair("some words here", "andere worte hier")
    assert p1 == p2 and len(p1) == 7
    assert all(math.isfinite(v) for v in p1)

    ids = nsim.encode_pair("some words here", "andere worte hier", vocab_size=512)
    train_a = model.forward_ids(ids, train_mode=True, dropout_seed=1)
    train_b = model.forward_ids(ids, train_mode=True, dropout_seed=2)
    assert train_a != train_b, "dropout seeds should decorrelate forwards"

    with tempfile.TemporaryDirectory() as tmp:
        ckpt = Path(tmp) / "model.ckpt"
        model.save(ckpt)
        loaded = nsim.Model.load(ckpt)
        assert loaded.predict_pair("some words here", "andere worte hier") == p1
        approx(
            nsim.ensemble_predict_pair([ckpt, ckpt], "some words here", "andere worte hier"),
            max(1.0, min(4.0, p1[4])),
            1e-12,
        )

    print("nsim_py smoke test passed")


if __name__ == "__main__":
    main()
