"""Reference toy run: generate data, pretrain the decoder, train the encoder, report probe loss.

    python3 scripts/run_reference.py --config configs/toy.toml --out runs/reference
"""

import argparse
import json
import logging
import time
from pathlib import Path

from gtalign import pipeline as P
from gtalign.config import load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/toy.toml")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default="runs/reference")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config(args.config, args.seed)
    out = Path(args.out)
    data = out / "data"
    data.mkdir(parents=True, exist_ok=True)
    vocab, templates = P.text_assets()
    P.write_datasets(data, P.generate_datasets(cfg))

    t0 = time.perf_counter()
    decoder, pre = P.run_pretrain(data, cfg, vocab, templates)
    P.save_decoder(out / "decoder.ckpt", decoder)
    print(f"decoder perplexity {pre.initial_perplexity:.1f} -> {pre.heldout_perplexity:.3f} ({time.perf_counter() - t0:.0f}s)")

    model = P.build_model(cfg, vocab, templates, decoder)
    t0 = time.perf_counter()
    report, opt = P.run_training(data, cfg, model, vocab, templates)
    elapsed = time.perf_counter() - t0
    P.save_encoder(out / "encoder.ckpt", model, cfg.train.steps, opt, report)
    report.write(out)

    drop = 1 - report.smoothed_final_probe() / report.initial_probe
    summary = {
        "seed": cfg.seed,
        "steps": cfg.train.steps,
        "initial_probe": report.initial_probe,
        "smoothed_final_probe": report.smoothed_final_probe(),
        "reduction": drop,
        "train_seconds": elapsed,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"probe L_total {report.initial_probe:.2f} -> {report.smoothed_final_probe():.2f} ({100 * drop:.1f}% reduction) in {elapsed / 60:.1f} min")


if __name__ == "__main__":
    main()
