"""Acceptance criteria, one PASS/FAIL line each.

Run on its own with ``pytest tests/test_acceptance.py -s``; the lines are
also printed during a full ``pytest`` run. The paper-scale criteria need the
op-spam corpus, given as a ``text,label`` CSV through ``SPAMGAN_OPSPAM_LABELED``
and an optional one-review-per-line file through ``SPAMGAN_OPSPAM_UNLABELED``.
Without it they report FAIL and are marked as expected failures.
"""

import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

import synthetic_task
from spamgan.corpus import load_corpus
from spamgan.grid import run_base, run_grid, run_spamgan
from spamgan.trainer import TrainConfig

ROOT = Path(__file__).resolve().parent.parent
SEEDS = (0, 1, 2)
LABELED_ENV, UNLABELED_ENV = "SPAMGAN_OPSPAM_LABELED", "SPAMGAN_OPSPAM_UNLABELED"


def report(capsys, criterion: int, passed: bool, detail: str) -> None:
    line = f"ACCEPTANCE criterion {criterion}: {'PASS' if passed else 'FAIL'} - {detail}"
    with capsys.disabled():
        print("\n" + line, flush=True)


@pytest.fixture(scope="module")
def synthetic_runs():
    runs = []
    for seed in SEEDS:
        bundle, src = synthetic_task.task(seed)
        cfg = synthetic_task.config(seed)
        runs.append({
            "seed": seed,
            "spamgan": run_spamgan(cfg, bundle),
            # same number of labeled-data passes as the full pipeline's classifier
            "base_matched": run_base(cfg, bundle)["accuracy"],
            # the pre-training budget alone, since extra passes can overfit 100 labels
            "base_pretrain": run_base(cfg.replace(training_epochs=0), bundle)["accuracy"],
            "source_ppl": src.mixture_perplexity(),
        })
    return runs


def test_criterion_1_synthetic_accuracy(capsys, synthetic_runs):
    acc = [r["spamgan"]["accuracy"] for r in synthetic_runs]
    base_matched = float(np.mean([r["base_matched"] for r in synthetic_runs]))
    base_pretrain = float(np.mean([r["base_pretrain"] for r in synthetic_runs]))
    base = max(base_matched, base_pretrain)
    mean = float(np.mean(acc))
    ok = mean >= 0.90 and mean - base >= 0.03
    report(capsys, 1, ok,
           f"spamGAN 3-seed mean accuracy {mean:.4f} (seeds {', '.join(f'{a:.4f}' for a in acc)}) vs >= 0.90; "
           f"base classifier {base_matched:.4f} (matched budget) / {base_pretrain:.4f} (pre-training budget); "
           f"margin over the stronger base {mean - base:+.4f} vs >= +0.03")
    assert ok


def _paper_scale_available() -> bool:
    return bool(os.environ.get(LABELED_ENV)) and Path(os.environ[LABELED_ENV]).is_file()


def _paper_grid(labeled_fractions, unlabeled_fractions):
    cfg = TrainConfig(labeled_path=os.environ[LABELED_ENV], unlabeled_path=os.environ.get(UNLABELED_ENV))
    labeled, unlabeled, vocab = load_corpus(cfg.labeled_path, cfg.unlabeled_path, cfg.vocab_size, cfg.T)
    return run_grid(cfg, labeled, unlabeled, vocab, labeled_fractions, unlabeled_fractions, SEEDS)


def _cell(report_, model, lf, uf):
    for agg in report_.aggregates():
        if (agg["model"], agg["labeled_fraction"], agg["unlabeled_fraction"]) == (model, lf, uf):
            return agg
    raise KeyError((model, lf, uf))


def test_criterion_2_paper_scale(capsys):
    if not _paper_scale_available():
        report(capsys, 2, False, f"not run: op-spam corpus unavailable (set {LABELED_ENV}); "
                                 "targets base >= 0.78, spamGAN-0 acc/F1 >= 0.82 at 100%, acc >= 0.64 at 10%")
        pytest.xfail("paper-scale corpus not available in this environment")
    grid = _paper_grid([1.0, 0.1], [0.0])
    base = _cell(grid, "base", 1.0, None)["accuracy_mean"]
    full = _cell(grid, "spamgan", 1.0, 0.0)
    low = _cell(grid, "spamgan", 0.1, 0.0)["accuracy_mean"]
    checks = [base is not None and base >= 0.78,
              full["accuracy_mean"] is not None and full["accuracy_mean"] >= 0.82,
              full["f1_mean"] is not None and full["f1_mean"] >= 0.82,
              low is not None and low >= 0.64]
    report(capsys, 2, all(checks), f"base@100% {base}, spamGAN-0@100% acc {full['accuracy_mean']} "
                                   f"F1 {full['f1_mean']}, spamGAN-0@10% acc {low}")
    assert all(checks)


def test_criterion_3_perplexity(capsys, synthetic_runs):
    ratios = [r["spamgan"]["perplexity"] / r["source_ppl"] for r in synthetic_runs]
    synthetic_ok = all(1 / 1.5 <= q <= 1.5 for q in ratios)
    detail = (f"synthetic perplexity / exact source perplexity {', '.join(f'{q:.3f}' for q in ratios)} "
              f"(source {synthetic_runs[0]['source_ppl']:.3f}) vs <= 1.5x: {'PASS' if synthetic_ok else 'FAIL'}")
    if not _paper_scale_available():
        report(capsys, 3, False, detail + f"; paper-scale part (<= 150) not run: op-spam corpus unavailable")
        assert synthetic_ok
        pytest.xfail("paper-scale part needs the op-spam corpus")
    grid = _paper_grid([1.0], [1.0])
    ppl = _cell(grid, "spamgan", 1.0, 1.0)["perplexity_mean"]
    ok = synthetic_ok and ppl is not None and ppl <= 150
    report(capsys, 3, ok, detail + f"; paper-scale spamGAN-100 perplexity {ppl} vs <= 150")
    assert ok


def _run_suite(args, budget_s):
    start = time.monotonic()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *args],
                          cwd=ROOT, capture_output=True, text=True)
    elapsed = time.monotonic() - start
    summary = (proc.stdout.strip().splitlines() or ["no output"])[-1]
    return proc.returncode == 0 and elapsed <= budget_s, elapsed, summary


def test_criterion_4_numerical_properties(capsys):
    files = ["tests/test_corpus.py", "tests/test_generator.py", "tests/test_discriminator.py",
             "tests/test_classifier.py", "tests/test_rl.py"]
    ok, elapsed, summary = _run_suite(files, 300)
    report(capsys, 4, ok, f"gradient, blend, critic-enumeration, bandit and sequence-invariant suites: "
                          f"{summary}; {elapsed:.0f}s vs < 300s")
    assert ok


def test_criterion_5_algorithm_fidelity(capsys):
    selection = "block or accounting or checkpoint or resumed or identity or smoke or determinism"
    ok, elapsed, summary = _run_suite(["tests/test_trainer.py", "-k", selection], 120)
    report(capsys, 5, ok, f"block-coordinate hashes, epoch accounting, checkpoint round-trip, continuation: "
                          f"{summary}; {elapsed:.0f}s vs <= 120s")
    assert ok
