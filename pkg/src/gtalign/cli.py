"""Command-line entry points: gen-data, pretrain-decoder, train, eval, report.

Exit codes: 0 success, 1 invalid input (config, paths, checkpoints), 2 failure
while running.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import pipeline as P
from .checkpoint import CheckpointError, file_sha256
from .config import ConfigError, ExperimentConfig, load_config
from .evalharness import EvalReport, MetricSpec, zero_shot_eval

log = logging.getLogger("gtalign")

MISSING = "NA"
ABLATIONS = {"none": {}, "no-align": {"zero_align": True}, "generic-prompt": {"generic_prompt": True}}


class ValidationError(Exception):
    pass


# -- helpers ----------------------------------------------------------------------


def _config(args) -> ExperimentConfig:
    if args.config is None:
        cfg = ExperimentConfig()
        return cfg.with_seed(cfg.seed if args.seed is None else args.seed)
    if not Path(args.config).is_file():
        raise ValidationError(f"config file {args.config} does not exist")
    return load_config(args.config, args.seed)


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise ValidationError(f"output directory {out} is not writable: {e}") from e
    return out


def _existing_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise ValidationError(f"{what} {p} does not exist")
    return p


def _existing_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{what} {p} does not exist")
    return p


def write_manifest(out: Path, command: str, args, cfg: ExperimentConfig, inputs: dict, outputs: Sequence[Path]) -> None:
    manifest = {
        "command": command,
        "config_path": args.config,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "inputs": {k: str(v) for k, v in sorted(inputs.items())},
        "outputs": {p.name: file_sha256(p) for p in sorted(outputs)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# -- commands ---------------------------------------------------------------------


def cmd_gen_data(args) -> None:
    cfg = _config(args)
    out = _out_dir(args.out)
    vocab, _ = P.text_assets()
    paths = P.write_datasets(out, P.generate_datasets(cfg))
    vocab.save(out / "vocab.txt")
    paths.append(out / "vocab.txt")
    write_manifest(out, "gen-data", args, cfg, {}, paths)
    log.info("wrote %d dataset files to %s", len(paths) - 1, out)


def cmd_pretrain_decoder(args) -> None:
    cfg = _config(args)
    data = _existing_dir(args.data, "data directory")
    out = _out_dir(args.out)
    vocab, templates = P.text_assets()
    dec, rep = P.run_pretrain(data, cfg, vocab, templates)
    meta = {"heldout_perplexity": rep.heldout_perplexity, "initial_perplexity": rep.initial_perplexity}
    ckpt = out / "decoder.ckpt"
    P.save_decoder(ckpt, dec, meta)
    log_path = out / "pretrain_log.json"
    log_path.write_text(json.dumps({**meta, "vocab_size": len(vocab), "losses": rep.losses}, indent=2, sort_keys=True) + "\n")
    write_manifest(out, "pretrain-decoder", args, cfg, {"data": data}, [ckpt, log_path])
    log.info("decoder held-out perplexity %.3f (vocab %d)", rep.heldout_perplexity, len(vocab))


def cmd_train(args) -> None:
    cfg = _config(args)
    data = _existing_dir(args.data, "data directory")
    dec_path = _existing_file(args.decoder, "decoder checkpoint")
    resume = _existing_file(args.resume, "resume checkpoint") if args.resume else None
    out = _out_dir(args.out)
    vocab, templates = P.text_assets()
    decoder = P.load_decoder(dec_path, cfg)
    model = P.build_model(cfg, vocab, templates, decoder)
    start, opt, report = 0, None, None
    if resume is not None:
        start, opt, report = P.load_encoder(resume, model.encoder, cfg)
        if start > cfg.train.steps:
            raise ValidationError(f"checkpoint is at step {start}, beyond train.steps={cfg.train.steps}")

    def on_ckpt(step, optimizer, rep):
        P.save_encoder(out / f"encoder.step{step}.ckpt", model, step, optimizer, rep)

    try:
        report, opt = P.run_training(data, cfg, model, vocab, templates, opt, start, report, on_ckpt)
    except FloatingPointError as e:
        raise RuntimeError(f"training aborted: {e}") from e
    ckpt = out / "encoder.ckpt"
    P.save_encoder(ckpt, model, cfg.train.steps, opt, report)
    report.write(out)
    inputs = {"data": data, "decoder": dec_path}
    if resume is not None:
        inputs["resume"] = resume
    write_manifest(out, "train", args, cfg, inputs, [ckpt, out / "train_report.json", out / "loss_curve.csv"])


def cmd_eval(args) -> None:
    cfg = _config(args)
    data = _existing_dir(args.data, "data directory")
    dec_path = _existing_file(args.decoder, "decoder checkpoint")
    enc_path = _existing_file(args.encoder, "encoder checkpoint")
    if args.suite not in P.SUITES:
        raise ValidationError(f"unknown suite {args.suite!r}")
    out = _out_dir(args.out)
    vocab, templates = P.text_assets()
    model = P.build_model(cfg, vocab, templates, P.load_decoder(dec_path, cfg))
    P.load_encoder(enc_path, model.encoder, cfg)
    datasets = P.suite_datasets(data, args.suite, vocab, templates, cfg)
    echo = {"suite": args.suite, "ablation": args.ablation, "encoder_sha256": file_sha256(enc_path), "decoder_sha256": file_sha256(dec_path)}
    report = zero_shot_eval(
        model, datasets, MetricSpec(), cfg.seed, P.train_means(data, cfg), cfg.eval.max_new_tokens, echo, **ABLATIONS[args.ablation]
    )
    report.write(out)
    inputs = {"data": data, "decoder": dec_path, "encoder": enc_path}
    write_manifest(out, "eval", args, cfg, inputs, [out / "eval_report.json", out / "metrics.csv"])
    for ds, k, v in report.rows():
        if k not in ("family", "n"):
            log.info("%-22s %-15s %.4f", ds, k, v)


def merge_reports(reports: Sequence[tuple[str, EvalReport]]) -> tuple[list[str], list[list[str]]]:
    """Rows of (dataset, metric, value per run); absent values are ``NA``."""
    keys = sorted({(ds, k) for _, r in reports for ds, k, _ in r.rows() if k not in ("family",)})
    header = ["dataset", "metric"] + [name for name, _ in reports]
    rows = []
    for ds, k in keys:
        row = [ds, k]
        for _, r in reports:
            v = r.metrics.get(ds, {}).get(k)
            row.append(MISSING if v is None else repr(v))
        rows.append(row)
    return header, rows


def cmd_report(args) -> None:
    if not args.eval_dirs:
        raise ValidationError("report needs at least one evaluation directory")
    loaded = []
    for d in args.eval_dirs:
        p = Path(d) / "eval_report.json"
        if not p.is_file():
            raise ValidationError(f"{d} holds no eval_report.json")
        loaded.append((d, EvalReport.read(p)))
    names = [Path(d).name or d for d, _ in loaded]
    if len(set(names)) != len(names):
        names = [f"{k}:{n}" for k, n in enumerate(names)]
    header, rows = merge_reports([(n, r) for n, (_, r) in zip(names, loaded)])
    out = _out_dir(args.out)
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(str(x).ljust(w) for x, w in zip(r, widths)).rstrip() for r in [header, *rows]]
    text = "\n".join(lines) + "\n"
    (out / "comparison.txt").write_text(text)
    sys.stdout.write(text)


# -- entry ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gtalign", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, data=False):
        p.add_argument("--config", default=None, help="experiment TOML (defaults if omitted)")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out", required=True)
        if data:
            p.add_argument("--data", required=True, help="directory written by gen-data")

    common(sub.add_parser("gen-data", help="generate synthetic task datasets"))
    common(sub.add_parser("pretrain-decoder", help="pretrain and freeze the decoder"), data=True)
    p = sub.add_parser("train", help="instruction-tune the encoder")
    common(p, data=True)
    p.add_argument("--decoder", required=True)
    p.add_argument("--resume", default=None, help="encoder checkpoint to continue from")
    p = sub.add_parser("eval", help="zero-shot evaluation on a held-out suite")
    common(p, data=True)
    p.add_argument("--decoder", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--suite", required=True, choices=P.SUITES)
    p.add_argument("--ablation", default="none", choices=sorted(ABLATIONS))
    p = sub.add_parser("report", help="merge evaluation reports into one table")
    p.add_argument("eval_dirs", nargs="+")
    p.add_argument("--out", required=True)
    return ap


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain-decoder": cmd_pretrain_decoder,
    "train": cmd_train,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ValidationError, ConfigError, CheckpointError, FileNotFoundError) as e:
        log.error("%s", e)
        return 1
    except Exception as e:  # anything else is a failure of the run itself
        log.error("%s: %s", type(e).__name__, e)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
