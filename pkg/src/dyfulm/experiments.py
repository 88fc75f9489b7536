"""Run-level orchestration shared by the CLI: preprocessing, single training
runs, the four-variant ablation and run manifests."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from .autodiff import no_grad
from .config import VARIANT_LABELS, VARIANTS, Config
from .data import (
    Record,
    Vocabulary,
    build_vocab,
    dataset_stats,
    generate_synthetic,
    integrity_check,
    load_records,
    load_vocab,
    make_record,
    read_reviews_csv,
    save_records,
    save_vocab,
    split_records,
    tokenize,
    vocab_from_records,
    write_label_histogram_csv,
    write_stats_csv,
)
from .metrics import FULL_SCALE_REFERENCE, MetricsReport, evaluate, format_table, write_report_csv
from .model import DyFuLM
from .training import batch_loss, save_checkpoint, train

logger = logging.getLogger(__name__)

ABLATION_ORDER = ("full", "wo-gf-hg-dl", "wo-hg-dl", "wo-dl")
RECORDS_FILE = "records.jsonl"
VOCAB_FILE = "vocab.json"


@dataclass
class RunManifest:
    run_id: str
    command: str
    seed: int
    config: dict
    toggles: dict
    outputs: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    started_at: str = ""
    duration_s: float = 0.0

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        self.outputs = sorted(set(self.outputs) | {path.name})
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _manifest(command: str, cfg: Config, variant: str | None = None) -> RunManifest:
    variant = variant or cfg.variant
    return RunManifest(
        run_id=f"{command}-{variant}-seed{cfg.train.seed}",
        command=command,
        seed=cfg.train.seed,
        config=replace(cfg, variant=variant).to_dict(),
        toggles=asdict(VARIANTS[variant]),
        started_at=_now(),
    )


# ---------------------------------------------------------------- datasets


def write_dataset(records: list[Record], vocab: Vocabulary, out_dir: Path) -> list[str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    save_records(records, out_dir / RECORDS_FILE)
    save_vocab(vocab, out_dir / VOCAB_FILE)
    stats = dataset_stats(records)
    write_stats_csv(stats, out_dir / "stats.csv")
    write_label_histogram_csv(stats, out_dir / "label_histogram.csv")
    return [RECORDS_FILE, VOCAB_FILE, "stats.csv", "label_histogram.csv"]


def load_dataset(data_dir: Path) -> tuple[list[Record], Vocabulary]:
    records = load_records(data_dir / RECORDS_FILE)
    vocab_path = data_dir / VOCAB_FILE
    vocab = load_vocab(vocab_path) if vocab_path.exists() else vocab_from_records(records)
    return records, vocab


def preprocess(input_csv: Path, cfg: Config, out_dir: Path, allow_dirty: bool = False) -> tuple[int, dict]:
    """Clean, label, tokenize and validate a review CSV. Returns ``(exit_code, report)``."""
    t0 = time.perf_counter()
    manifest = _manifest("preprocess", cfg)
    dc = cfg.data
    rows, dropped = read_reviews_csv(input_csv, dc.schema)
    drafts = [make_record(text, score, year, None, cfg.model.t_max, dc.fine_edges, dc.coarse_edges)
              for text, score, year in rows]
    empty = [r for r in drafts if not r.clean_text]
    drafts = [r for r in drafts if r.clean_text]
    report = integrity_check(drafts, dc.fine_edges, dc.coarse_edges)
    report.dropped_missing = dropped + len(empty)
    valid = [r for r in drafts if 0.0 <= r.score <= 10.0 and r.fine_label >= 0]
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    if valid:
        vocab = build_vocab([r.clean_text for r in valid], dc.min_frequency, dc.max_vocab)
        for r in valid:
            r.token_ids = tokenize(vocab, r.clean_text, cfg.model.t_max)
        outputs += write_dataset(valid, vocab, out_dir)
    payload = report.to_json()
    (out_dir / "integrity.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    outputs.append("integrity.json")
    manifest.outputs = outputs
    manifest.extra = {"input": str(input_csv), "n_rows": len(rows), "n_records": len(valid),
                      "violations": report.violations, "allow_dirty": allow_dirty}
    manifest.duration_s = time.perf_counter() - t0
    manifest.write(out_dir)
    code = 0 if report.ok or allow_dirty else 1
    if not valid and code == 0:
        code = 1
    return code, payload


def synthesize(cfg: Config, out_dir: Path, n: int | None = None) -> RunManifest:
    t0 = time.perf_counter()
    manifest = _manifest("synth", cfg)
    records = generate_synthetic(n or cfg.data.synthetic_n, cfg.data.synthetic_vocab, cfg.train.seed,
                                 cfg.model.t_max)
    vocab = vocab_from_records(records)
    manifest.outputs = write_dataset(records, vocab, out_dir)
    manifest.extra = {"n_records": len(records), "vocab_size": len(vocab)}
    manifest.duration_s = time.perf_counter() - t0
    manifest.write(out_dir)
    return manifest


def dataset_or_synthetic(data_dir: Path | None, cfg: Config) -> tuple[list[Record], Vocabulary]:
    if data_dir is not None:
        return load_dataset(data_dir)
    records = generate_synthetic(cfg.data.synthetic_n, cfg.data.synthetic_vocab, cfg.train.seed, cfg.model.t_max)
    return records, vocab_from_records(records)


# ------------------------------------------------------------------ training


@dataclass
class TrainRun:
    variant: str
    model: DyFuLM
    curve: list[float]
    report: MetricsReport
    initial_loss: float
    initial_unweighted: float


def train_variant(records: list[Record], vocab: Vocabulary, cfg: Config, variant: str,
                  out_dir: Path | None = None) -> TrainRun:
    """Train one variant from scratch on a seeded 80/20 split and evaluate it."""
    t0 = time.perf_counter()
    toggles = VARIANTS[variant]
    model_cfg = replace(cfg.model, vocab_size=len(vocab))
    train_set, val_set = split_records(records, cfg.data.val_fraction, cfg.train.seed)
    if not val_set:
        val_set = train_set
    model = DyFuLM(model_cfg)
    probe = train_set[: cfg.train.batch_size]
    with no_grad():
        total, parts = batch_loss(model, probe, toggles)
    initial_loss = total.item()
    initial_unweighted = sum(p.item() for p in parts)
    model, curve = train(model, train_set, cfg.train, toggles)
    report = evaluate(model, val_set, toggles)
    run = TrainRun(variant, model, curve, report, initial_loss, initial_unweighted)
    if out_dir is not None:
        _write_run(run, replace(cfg, model=model_cfg), out_dir, time.perf_counter() - t0,
                   len(train_set), len(val_set))
    return run


def _write_run(run: TrainRun, cfg: Config, out_dir: Path, seconds: float, n_train: int, n_val: int) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _manifest("train", cfg, run.variant)
    save_checkpoint(run.model, out_dir / "model.json")
    with open(out_dir / "loss_curve.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss"])
        for i, v in enumerate(run.curve, 1):
            w.writerow([i, repr(v)])
    write_report_csv([(manifest.run_id, run.variant, run.report)], out_dir / "metrics.csv")
    manifest.outputs = ["model.json", "model.bin", "loss_curve.csv", "metrics.csv"]
    manifest.extra = {
        "n_train": n_train,
        "n_val": n_val,
        "initial_combined_loss": run.initial_loss,
        "initial_unweighted_sum": run.initial_unweighted,
        "loss_curve": run.curve,
        "metrics": run.report.as_dict(),
    }
    manifest.duration_s = seconds
    manifest.write(out_dir)


def ablate(records: list[Record], vocab: Vocabulary, cfg: Config, out_dir: Path) -> list[TrainRun]:
    """Retrain the four ablation variants with identical settings and write
    ``ablation.csv`` (one row per variant) plus a run directory per variant."""
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    runs = []
    for variant in ABLATION_ORDER:
        logger.info("training variant %s", variant)
        runs.append(train_variant(records, vocab, cfg, variant, out_dir / variant))
    with open(out_dir / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["Experiments", "variant", "Coarse Acc", "Coarse F1", "Fine Acc", "Fine F1", "MAE", "MSE", "R2"])
        for run in runs:
            r = run.report
            w.writerow([VARIANT_LABELS[run.variant], run.variant,
                        *(f"{v:.4f}" for v in (r.coarse_acc, r.coarse_f1, r.fine_acc, r.fine_f1, r.mae, r.mse, r.r2))])
    manifest = _manifest("ablate", cfg, "full")
    manifest.run_id = f"ablate-seed{cfg.train.seed}"
    manifest.toggles = {v: asdict(VARIANTS[v]) for v in ABLATION_ORDER}
    manifest.outputs = ["ablation.csv"] + [f"{v}/manifest.json" for v in ABLATION_ORDER]
    manifest.extra = {
        "gaps_vs_full": ablation_gaps(runs),
        "initial_losses": {run.variant: {"combined": run.initial_loss, "unweighted_sum": run.initial_unweighted}
                           for run in runs},
    }
    manifest.duration_s = time.perf_counter() - t0
    manifest.write(out_dir)
    return runs


def ablation_gaps(runs: list[TrainRun]) -> dict:
    """Coarse/fine accuracy drop of each ablated variant relative to the full model."""
    full = next(r for r in runs if r.variant == "full").report
    return {r.variant: {"coarse_acc_drop": full.coarse_acc - r.report.coarse_acc,
                        "fine_acc_drop": full.fine_acc - r.report.fine_acc}
            for r in runs if r.variant != "full"}


def ablation_table(runs: list[TrainRun]) -> str:
    rows = [(VARIANT_LABELS[r.variant], r.report) for r in runs]
    rows.append(("full-scale reference", FULL_SCALE_REFERENCE))
    return format_table(rows)
