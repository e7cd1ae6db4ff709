"""Toy zero-shot transfer with ablations, averaged over seeds.

For each seed: generate data, pretrain the decoder, train the encoder, then
evaluate the full model, the zeroed-prefix model (noAT) and the generic-prompt
model (noTA) on the in-domain and cross-task suites.

    python3 scripts/run_transfer.py --config configs/transfer.toml --seeds 17 18 19 --out runs/transfer
"""

import argparse
import json
import logging
from pathlib import Path

import numpy as np

from gtalign import pipeline as P
from gtalign.config import load_config
from gtalign.evalharness import aggregate_scores, zero_shot_eval

VARIANTS = {"full": {}, "noAT": {"zero_align": True}, "noTA": {"generic_prompt": True}}


def one_seed(cfg, out: Path) -> dict:
    data = out / "data"
    data.mkdir(parents=True, exist_ok=True)
    vocab, templates = P.text_assets()
    P.write_datasets(data, P.generate_datasets(cfg))
    decoder, _ = P.run_pretrain(data, cfg, vocab, templates)
    model = P.build_model(cfg, vocab, templates, decoder)
    report, _ = P.run_training(data, cfg, model, vocab, templates)
    report.write(out)
    means = P.train_means(data, cfg)
    reports = {}
    for name, kw in VARIANTS.items():
        for suite in P.SUITES:
            r = zero_shot_eval(model, P.suite_datasets(data, suite, vocab, templates, cfg), seed=cfg.seed,
                               train_means=means, max_new_tokens=cfg.eval.max_new_tokens, **kw)
            r.write(out / f"{name}-{suite}")
            reports[name, suite] = r
    return reports


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/transfer.toml")
    ap.add_argument("--seeds", type=int, nargs="+", default=[17, 18, 19])
    ap.add_argument("--out", default="runs/transfer")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    base = load_config(args.config)
    rows, aggs = {}, {v: [] for v in VARIANTS}
    for seed in args.seeds:
        reps = one_seed(base.with_seed(seed), Path(args.out) / f"seed{seed}")
        for (variant, suite), r in reps.items():
            for ds, m in r.metrics.items():
                for k in ("accuracy", "auc", "mae"):
                    if k in m:
                        rows.setdefault((variant, ds, k), []).append((m[k], m["baseline"]))
        for v, s in aggregate_scores({v: reps[v, "in-domain"] for v in VARIANTS}).items():
            aggs[v].append(s)

    print(f"{'variant':8s} {'dataset':16s} {'metric':9s} {'value':>7s} {'baseline':>9s}")
    for (variant, ds, k), vals in sorted(rows.items()):
        v, b = np.mean(vals, axis=0)
        print(f"{variant:8s} {ds:16s} {k:9s} {v:7.3f} {b:9.3f}")
    summary = {v: float(np.mean(s)) for v, s in aggs.items()}
    print("in-domain aggregate:", "  ".join(f"{v} {s:.3f}" for v, s in summary.items()))
    (Path(args.out) / "summary.json").write_text(json.dumps({"seeds": args.seeds, "aggregate": summary}, indent=2) + "\n")


if __name__ == "__main__":
    main()
