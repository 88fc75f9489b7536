"""Command-line entry point: preprocess, synth, train, eval, ablate, gradcheck.

Settings resolve as flags > config file > built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from .config import VARIANTS, Config, load_config, with_seed
from .experiments import (
    ablate,
    ablation_gaps,
    ablation_table,
    dataset_or_synthetic,
    load_dataset,
    preprocess,
    synthesize,
    train_variant,
)
from .gradsuite import run_suite
from .metrics import evaluate, format_table, write_report_csv
from .training import CheckpointError, load_checkpoint


def _resolve(args) -> Config:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = with_seed(cfg, args.seed)
    if getattr(args, "variant", None) is not None:
        cfg = replace(cfg, variant=args.variant)
    if getattr(args, "schema", None) is not None:
        cfg = replace(cfg, data=replace(cfg.data, schema=args.schema))
    return cfg


def cmd_preprocess(args) -> int:
    cfg = _resolve(args)
    code, report = preprocess(Path(args.input), cfg, Path(args.out), args.allow_dirty)
    print(json.dumps({k: v for k, v in report.items() if k != "problems"}, indent=2))
    for line in report["problems"][:20]:
        print(f"  {line}", file=sys.stderr)
    return code


def cmd_synth(args) -> int:
    cfg = _resolve(args)
    manifest = synthesize(cfg, Path(args.out), args.n)
    print(f"wrote {manifest.extra['n_records']} records (vocab {manifest.extra['vocab_size']}) to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    records, vocab = dataset_or_synthetic(Path(args.data) if args.data else None, cfg)
    run = train_variant(records, vocab, cfg, cfg.variant, Path(args.out))
    for i, v in enumerate(run.curve, 1):
        print(f"epoch {i}: mean loss {v:.6f}")
    print(format_table([(cfg.variant, run.report)]))
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    try:
        model = load_checkpoint(args.checkpoint)
    except (CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    records, _ = load_dataset(Path(args.data))
    report = evaluate(model, records, cfg.toggles)
    run_id = f"eval-{cfg.variant}-{Path(args.checkpoint).stem}"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_report_csv([(run_id, cfg.variant, report)], out / "metrics.csv")
    print(format_table([(cfg.variant, report)]))
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve(args)
    records, vocab = dataset_or_synthetic(Path(args.data) if args.data else None, cfg)
    runs = ablate(records, vocab, cfg, Path(args.out))
    print(ablation_table(runs))
    for variant, gap in ablation_gaps(runs).items():
        print(f"{variant}: coarse acc drop {gap['coarse_acc_drop']:+.4f}, fine acc drop {gap['fine_acc_drop']:+.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    results = run_suite(threshold=args.threshold, seed=args.seed or 0)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  max_rel_error={r.max_rel_error:.3e}  threshold={r.threshold:.0e}  {status}")
    print(f"total {time.perf_counter() - t0:.1f}s")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        rows = [{"name": r.name, "max_rel_error": r.max_rel_error, "threshold": r.threshold, "passed": r.passed}
                for r in results]
        (out / "gradcheck.json").write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dyfulm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", type=Path, help="JSON config with model/train/data/ablation sections")
        p.add_argument("--seed", type=int, help="overrides model and training seeds")
        p.add_argument("--out", type=Path, required=out_required, help="output directory")

    p = sub.add_parser("preprocess", help="clean, label and tokenize a review CSV")
    p.add_argument("input", type=Path)
    p.add_argument("--schema", choices=("generic", "booking"))
    p.add_argument("--allow-dirty", action="store_true", help="exit 0 even when integrity violations are found")
    common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth", help="write a synthetic review dataset")
    p.add_argument("--n", type=int, help="number of records (default from config)")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one variant and evaluate on a held-out split")
    p.add_argument("--data", type=Path, help="dataset directory (default: fresh synthetic data)")
    p.add_argument("--variant", choices=sorted(VARIANTS))
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", type=Path, required=True, help="checkpoint manifest (model.json)")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--variant", choices=sorted(VARIANTS))
    common(p, out_required=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare the four ablation variants")
    p.add_argument("--data", type=Path, help="dataset directory (default: fresh synthetic data)")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every block and the full loss")
    p.add_argument("--threshold", type=float, help="override every tolerance")
    common(p, out_required=False)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
