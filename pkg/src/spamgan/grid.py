"""Labeled-fraction x unlabeled-fraction experiment grid and plot tables."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .corpus import Example, Vocabulary, split_and_subsample
from .metrics import accuracy, f1
from .trainer import TrainConfig, adversarial_train, evaluate, predict, pretrain, _Pool

log = logging.getLogger(__name__)

SPAMGAN, BASE = "spamgan", "base"
METRICS = ("accuracy", "f1", "perplexity")


@dataclass
class MetricsReport:
    """Per-run records plus mean/std aggregates per (model, labeled, unlabeled) cell."""

    records: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def ok_records(self, model: Optional[str] = None) -> list:
        return [r for r in self.records if r["status"] == "ok" and (model is None or r["model"] == model)]

    def aggregates(self) -> list:
        cells: dict = {}
        for r in self.records:
            cells.setdefault((r["model"], r["labeled_fraction"], r["unlabeled_fraction"]), []).append(r)
        out = []
        for (model, lf, uf), rows in sorted(cells.items(), key=lambda kv: (kv[0][0], kv[0][1], _key(kv[0][2]))):
            ok = [r for r in rows if r["status"] == "ok"]
            agg = {"model": model, "labeled_fraction": lf, "unlabeled_fraction": uf,
                   "n_runs": len(ok), "n_failed": len(rows) - len(ok)}
            for m in METRICS:
                vals = [r[m] for r in ok if r.get(m) is not None]
                agg[f"{m}_mean"] = float(np.mean(vals)) if vals else None
                # sample standard deviation; undefined for fewer than two runs
                agg[f"{m}_std"] = float(np.std(vals, ddof=1)) if len(vals) >= 2 else None
            out.append(agg)
        return out

    def to_json(self) -> str:
        return json.dumps({"records": self.records, "aggregates": self.aggregates(), "metadata": self.metadata},
                          indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        payload = json.loads(text)
        return cls(payload["records"], payload.get("metadata", {}))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MetricsReport":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _key(value):
    return -1.0 if value is None else value


def base_config(config: TrainConfig) -> TrainConfig:
    """Classifier-only schedule with as many passes over the labeled data as
    the full pipeline gives its classifier (pre-training plus adversarial epochs)."""
    return config.replace(
        pretrain_g=0,
        pretrain_d=0,
        pretrain_c=config.pretrain_c + config.training_epochs * config.c_epochs,
        training_epochs=0,
    )


def run_spamgan(config: TrainConfig, bundle) -> dict:
    state = adversarial_train(config, bundle, pretrain(config, bundle))
    return evaluate(state, bundle.labeled_test)


def run_base(config: TrainConfig, bundle) -> dict:
    """Train the classifier alone on the labeled split; perplexity is not defined."""
    data = type(bundle)(bundle.labeled_train, bundle.labeled_test, (), bundle.vocabulary, bundle.split_seed)
    state = pretrain(base_config(config), data)
    test = _Pool(bundle.labeled_test)
    preds = predict(state, test.ids, test.mask).tolist()
    gold = test.labels.tolist()
    return {"accuracy": accuracy(preds, gold), "f1": f1(preds, gold, config.positive_class), "perplexity": None}


def run_grid(
    config: TrainConfig,
    labeled: Sequence[Example],
    unlabeled: Sequence[Example],
    vocabulary: Vocabulary,
    labeled_fractions: Sequence[float],
    unlabeled_fractions: Sequence[float],
    seeds: Sequence[int],
    include_base: bool = True,
    on_record: Optional[Callable[[dict], None]] = None,
) -> MetricsReport:
    """Train and evaluate one pipeline per (labeled fraction, unlabeled fraction, seed).

    Every cell shares the test split fixed by ``config.split_seed``. The base
    classifier runs once per (labeled fraction, seed) since it ignores
    unlabeled data. A failing run is recorded with its error and the grid
    moves on.
    """
    report = MetricsReport(metadata={
        "config": config.to_dict(),
        "std": "sample standard deviation (ddof=1) of test metrics across seeds",
        "test_split_seed": config.split_seed,
    })

    def add(model, lf, uf, seed, job):
        rec = {"model": model, "labeled_fraction": lf, "unlabeled_fraction": uf, "seed": seed}
        try:
            rec.update(job(), status="ok")
        except Exception as err:  # noqa: BLE001 - one failing cell must not stop the grid
            log.warning("grid cell %s failed: %s", rec, err)
            rec.update({m: None for m in METRICS}, status="failed", error=f"{type(err).__name__}: {err}")
        report.records.append(rec)
        if on_record is not None:
            on_record(rec)

    def split(lf, uf):
        pool = unlabeled if uf else ()
        return split_and_subsample(labeled, config.test_fraction, lf, pool, uf, config.split_seed, vocabulary)

    for lf in labeled_fractions:
        for seed in seeds:
            for uf in unlabeled_fractions:
                cfg = config.replace(seed=seed, labeled_fraction=lf, unlabeled_fraction=uf)
                add(SPAMGAN, lf, uf, seed, lambda: run_spamgan(cfg, split(lf, uf)))
            if include_base:
                cfg = config.replace(seed=seed, labeled_fraction=lf, unlabeled_fraction=0.0)
                add(BASE, lf, None, seed, lambda: run_base(cfg, split(lf, 0.0)))
    return report


# ------------------------------------------------------------------ plot data

# one table per figure: x is the labeled fraction, one series per unlabeled fraction
FIGURES = {
    "fig2_accuracy_vs_labeled": "accuracy",
    "fig3_f1_vs_labeled": "f1",
    "fig4_perplexity_vs_labeled": "perplexity",
}


def _series_name(model: str, uf) -> str:
    if model == BASE:
        return "base"
    return f"spamGAN-{int(round(100 * uf))}"


def plot_tables(report: MetricsReport) -> tuple[dict, list]:
    """Rows ``(series, unlabeled_fraction, x, mean, std)`` per figure, plus warning records."""
    tables: dict = {name: [] for name in FIGURES}
    warnings = []
    for agg in report.aggregates():
        for name, metric in FIGURES.items():
            mean = agg[f"{metric}_mean"]
            if mean is None:
                if not (metric == "perplexity" and agg["model"] == BASE):
                    warnings.append({"figure": name, "model": agg["model"], "labeled_fraction": agg["labeled_fraction"],
                                     "unlabeled_fraction": agg["unlabeled_fraction"],
                                     "warning": "no successful runs; cell omitted"})
                continue
            std = agg[f"{metric}_std"]
            tables[name].append({
                "series": _series_name(agg["model"], agg["unlabeled_fraction"]),
                "unlabeled_fraction": "" if agg["unlabeled_fraction"] is None else agg["unlabeled_fraction"],
                "x": agg["labeled_fraction"],
                "mean": mean,
                "std": "" if std is None else std,
            })
    for rows in tables.values():
        rows.sort(key=lambda r: (r["series"] == "base", r["unlabeled_fraction"] or 0.0, r["x"]))
    return tables, warnings


def emit_plot_data(report: MetricsReport, directory) -> list:
    """Write one CSV per figure into ``directory``; returns the warning records."""
    if not report.records:
        raise ValueError("empty report")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tables, warnings = plot_tables(report)
    for name, rows in tables.items():
        with (directory / f"{name}.csv").open("w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, ["series", "unlabeled_fraction", "x", "mean", "std"], lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    for w in warnings:
        log.warning("plot data: %s", w)
    with (directory / "warnings.jsonl").open("w", encoding="utf-8") as fh:
        for w in warnings:
            fh.write(json.dumps(w, sort_keys=True) + "\n")
    return warnings
