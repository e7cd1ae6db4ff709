"""End-to-end experiment steps shared by the CLI, scripts and tests."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import TaskInstance, derive_seed, make_instance, read_jsonl, split_counts, write_jsonl
from .decoder import DecoderModel, PretrainReport, pretrain_decoder
from .encoder import GraphTextEncoder
from .graphcore import whole_graph_sample
from .model import GraphTextModel
from .synthetic import LabeledGraph, REGRESSION_FAMILIES, gen_synthetic, random_graph
from .tasktext import Vocab, load_templates, render_graph_description
from .trainer import Adam, TrainReport, make_optimizer, train

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
SUITES = ("in-domain", "cross-domain", "cross-task")


# -- data -------------------------------------------------------------------------


def generate_datasets(cfg: ExperimentConfig) -> dict[tuple[str, str], list[LabeledGraph]]:
    """Every (family, split) list; trained families also get a shifted-distribution split."""
    d = cfg.data
    out = {}
    for fam in d.all_families:
        sizes = split_counts(d.instances_per_family, d.split_ratio)
        lgs = gen_synthetic(fam, d.graphs, derive_seed(cfg.seed, fam), d.instances_per_family)
        start = 0
        for split, size in zip(SPLITS, sizes):
            out[(fam, split)] = lgs[start : start + size]
            start += size
        if fam in d.train_families:
            out[(fam, "shift")] = gen_synthetic(fam, d.shifted_graphs, derive_seed(cfg.seed, fam + "/shift"), sizes[2])
    return out


def dataset_path(data_dir: str | Path, family: str, split: str) -> Path:
    return Path(data_dir) / f"{family}.{split}.jsonl"


def write_datasets(data_dir: str | Path, datasets: Mapping[tuple[str, str], Sequence[LabeledGraph]]) -> list[Path]:
    paths = []
    for (fam, split), items in sorted(datasets.items()):
        p = dataset_path(data_dir, fam, split)
        write_jsonl(p, items)
        paths.append(p)
    return paths


def read_dataset(data_dir: str | Path, family: str, split: str) -> list[LabeledGraph]:
    p = dataset_path(data_dir, family, split)
    if not p.exists():
        raise FileNotFoundError(f"missing dataset file {p}")
    return read_jsonl(p)


def text_assets() -> tuple[Vocab, dict]:
    templates = load_templates()
    return Vocab.build(templates), templates


def instantiate(lgs: Sequence[LabeledGraph], vocab: Vocab, templates, cfg: ExperimentConfig) -> list[TaskInstance]:
    d = cfg.data
    return [make_instance(lg, vocab, templates, d.hop_radius, d.max_subgraph_nodes, d.graphs.num_classes) for lg in lgs]


def load_instances(data_dir, families: Sequence[str], split: str, vocab, templates, cfg) -> dict[str, list[TaskInstance]]:
    return {f: instantiate(read_dataset(data_dir, f, split), vocab, templates, cfg) for f in families}


def train_means(data_dir, cfg: ExperimentConfig) -> dict[str, float]:
    """Mean training target per regression family (the imputation and baseline value)."""
    out = {}
    for fam in cfg.data.all_families:
        if fam in REGRESSION_FAMILIES:
            out[fam] = float(np.mean([lg.label for lg in read_dataset(data_dir, fam, "train")]))
    return out


def suite_datasets(data_dir, suite: str, vocab, templates, cfg: ExperimentConfig) -> dict[str, list[TaskInstance]]:
    d = cfg.data
    if suite == "in-domain":
        pairs = [(f, "test") for f in d.train_families]
    elif suite == "cross-domain":
        pairs = [(f, "shift") for f in d.train_families]
    elif suite == "cross-task":
        pairs = [(f, "test") for f in d.cross_task_families]
    else:
        raise ValueError(f"unknown suite {suite!r}; expected one of {SUITES}")
    if not pairs:
        raise ValueError(f"suite {suite!r} has no datasets under this config")
    out = {}
    for fam, split in pairs:
        items = instantiate(read_dataset(data_dir, fam, split), vocab, templates, cfg)
        if cfg.eval.max_instances:
            items = items[: cfg.eval.max_instances]
        out[f"{fam}/{split}"] = items
    return out


# -- decoder pretraining ----------------------------------------------------------


def pretrain_corpus(instances: Sequence[TaskInstance], vocab: Vocab, extra_graphs: int, seed: int, cfg: ExperimentConfig) -> list[list[int]]:
    """Plain LM sequences: instruction + answer, and graph descriptions."""
    bos = vocab.bos
    seqs = []
    for inst in instances:
        if cfg.pretrain.instruction_pairs:
            seqs.append([bos, *inst.detail_tokens, *inst.target_tokens])
        else:
            seqs.append([bos, *inst.target_tokens])
        seqs.append([bos, *inst.reconstruction_tokens])
    rng = np.random.default_rng(seed)
    g = cfg.data.graphs
    for _ in range(extra_graphs):
        graph = random_graph(rng, g)
        seqs.append([bos, *render_graph_description(vocab, whole_graph_sample(graph, None))])
    return seqs


def run_pretrain(data_dir, cfg: ExperimentConfig, vocab: Vocab, templates) -> tuple[DecoderModel, PretrainReport]:
    fams = cfg.data.all_families
    tr = [i for f, xs in sorted(load_instances(data_dir, fams, "train", vocab, templates, cfg).items()) for i in xs]
    va = [i for f, xs in sorted(load_instances(data_dir, fams, "val", vocab, templates, cfg).items()) for i in xs]
    p = cfg.pretrain
    corpus = pretrain_corpus(tr, vocab, p.graph_descriptions, derive_seed(cfg.seed, "pretrain-graphs"), cfg)
    heldout = pretrain_corpus(va, vocab, 0, 0, cfg)
    return pretrain_decoder(corpus, len(vocab), p.steps, derive_seed(cfg.seed, "pretrain"), cfg.decoder, heldout, p.batch_size, p.lr)


# -- checkpoints ------------------------------------------------------------------


def save_decoder(path, decoder: DecoderModel, meta: Mapping | None = None) -> str:
    return save_checkpoint(path, {"decoder": decoder.snapshot()}, {"vocab_size": decoder.vocab_size, **(meta or {})})


def load_decoder(path, cfg: ExperimentConfig) -> DecoderModel:
    sections, meta = load_checkpoint(path)
    if "decoder" not in sections:
        raise CheckpointError(f"{path} holds no decoder")
    dec = DecoderModel(cfg.decoder, int(meta["vocab_size"]))
    _assign(dec.params, sections["decoder"], "decoder")
    return dec.freeze()


def save_encoder(path, model: GraphTextModel, step: int, optimizer: Adam | None, report: TrainReport | None) -> str:
    enc = model.encoder
    sections = {
        "trainable": {k: v.data for k, v in enc.trainable_params().items()},
        "frozen": {k: v.data for k, v in enc.frozen_params().items()},
    }
    if optimizer is not None:
        sections["optimizer"] = optimizer.state_arrays()
    meta = {"step": step, "report": report.to_json() if report else None}
    return save_checkpoint(path, sections, meta)


def load_encoder(path, encoder: GraphTextEncoder, cfg: ExperimentConfig) -> tuple[int, Adam, TrainReport | None]:
    """Overwrite ``encoder`` in place; returns (step, optimizer, report)."""
    sections, meta = load_checkpoint(path)
    for sec in ("trainable", "frozen"):
        if sec not in sections:
            raise CheckpointError(f"{path} lacks the {sec!r} section")
    _assign(encoder.trainable_params(), sections["trainable"], "trainable")
    _assign(encoder.frozen_params(), sections["frozen"], "frozen")
    opt = make_optimizer(encoder.trainable_params(), cfg.train)
    if "optimizer" in sections:
        opt.load_state_arrays(sections["optimizer"])
    rep = meta.get("report")
    report = TrainReport(**rep) if rep else None
    return int(meta["step"]), opt, report


def _assign(params: Mapping, arrays: Mapping[str, np.ndarray], what: str) -> None:
    if set(params) != set(arrays):
        raise CheckpointError(f"{what} tensors do not match: {sorted(set(params) ^ set(arrays))}")
    for k, t in params.items():
        if t.data.shape != arrays[k].shape:
            raise CheckpointError(f"{what}/{k}: shape {arrays[k].shape} != {t.data.shape}")
        t.data[...] = arrays[k]


# -- model ------------------------------------------------------------------------


def build_model(cfg: ExperimentConfig, vocab: Vocab, templates, decoder: DecoderModel) -> GraphTextModel:
    return GraphTextModel(GraphTextEncoder(cfg.encoder, vocab, templates), decoder)


def run_training(
    data_dir,
    cfg: ExperimentConfig,
    model: GraphTextModel,
    vocab: Vocab,
    templates,
    optimizer: Adam | None = None,
    start_step: int = 0,
    report: TrainReport | None = None,
    on_checkpoint=None,
) -> tuple[TrainReport, Adam]:
    fams = cfg.data.train_families
    datasets = load_instances(data_dir, fams, "train", vocab, templates, cfg)
    val = load_instances(data_dir, fams, "val", vocab, templates, cfg)
    probe = _probe(val, cfg.train.probe_size, cfg.seed)
    return train(cfg.train, datasets, model, probe, optimizer, start_step, report, on_checkpoint)


def _probe(val: Mapping[str, Sequence[TaskInstance]], size: int, seed: int) -> list[TaskInstance]:
    """Fixed validation batch, round-robin over families."""
    rng = np.random.default_rng(derive_seed(seed, "probe"))
    fams = sorted(val)
    order = {f: rng.permutation(len(val[f])) for f in fams}
    return [val[f][order[f][k // len(fams) % len(val[f])]] for k, f in ((k, fams[k % len(fams)]) for k in range(size))]
