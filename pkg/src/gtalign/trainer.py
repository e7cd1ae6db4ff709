"""Multi-task instruction tuning of the encoder's trainable subset."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .numerics import Tensor
from .data import TaskInstance, derive_seed

log = logging.getLogger(__name__)

POSITION_GROUP = ("dist_table", "graph_pos")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 2
    accum_every: int = 2
    clip_max_norm: float = 10.0
    lr_adapters_and_mlp: float = 2e-4
    lr_position_table: float = 2e-3
    seed: int = 0
    mixture: Mapping[str, float] | None = None
    precision: str = "float64"
    probe_size: int = 16
    probe_every: int = 100
    smooth_window: int = 3
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.lr_adapters_and_mlp <= 0 or self.lr_position_table <= 0:
            raise ValueError("learning rates must be positive")
        if self.accum_every < 1 or self.batch_size < 1:
            raise ValueError("batch_size and accum_every must be >= 1")
        if self.mixture is not None:
            w = np.array(list(self.mixture.values()), dtype=float)
            if (w < 0).any() or not np.isclose(w.sum(), 1.0):
                raise ValueError(f"mixture weights must be non-negative and sum to 1, got {dict(self.mixture)}")


def learning_rate(name: str, cfg: TrainConfig) -> float:
    return cfg.lr_position_table if name in POSITION_GROUP else cfg.lr_adapters_and_mlp


class Adam:
    """Adaptive-moment update with a per-parameter learning rate."""

    def __init__(self, lrs: Mapping[str, float], betas=(0.9, 0.999), eps: float = 1e-8):
        self.lrs = dict(lrs)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: Mapping[str, Tensor]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1**self.t, 1.0 - b2**self.t
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= self.lrs[name] * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"m.{k}": v for k, v in self.m.items()}
        out.update({f"v.{k}": v for k, v in self.v.items()})
        out["t"] = np.array([self.t], dtype=np.int64)
        return out

    def load_state_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        self.t = int(arrays["t"][0])
        self.m = {k[2:]: np.array(v) for k, v in arrays.items() if k.startswith("m.")}
        self.v = {k[2:]: np.array(v) for k, v in arrays.items() if k.startswith("v.")}


def make_optimizer(params: Mapping[str, Tensor], cfg: TrainConfig) -> Adam:
    return Adam({name: learning_rate(name, cfg) for name in params})


def sample_batch(
    datasets: Mapping[str, Sequence[TaskInstance]],
    mixture: Mapping[str, float],
    batch_size: int,
    rng: np.random.Generator,
) -> list[TaskInstance]:
    fams = [f for f, w in mixture.items() if w > 0]
    for f in fams:
        if not datasets.get(f):
            raise ValueError(f"family {f!r} has positive weight but no instances")
    w = np.array([mixture[f] for f in fams], dtype=float)
    w = w / w.sum()
    picks = rng.choice(len(fams), size=batch_size, p=w)
    out = []
    for k in picks:
        pool = datasets[fams[k]]
        out.append(pool[int(rng.integers(len(pool)))])
    return out


def default_mixture(datasets: Mapping[str, Sequence]) -> dict[str, float]:
    total = sum(len(v) for v in datasets.values())
    return {f: len(v) / total for f, v in sorted(datasets.items())}


def global_grad_norm(params: Mapping[str, Tensor]) -> float:
    sq = 0.0
    for p in params.values():
        if p.grad is not None:
            sq += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(sq))


def clip_gradients(params: Mapping[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``; returns the factor."""
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    g = global_grad_norm(params)
    if g <= max_norm:
        return 1.0
    factor = max_norm / g
    for p in params.values():
        if p.grad is not None:
            p.grad *= factor
    return factor


def step(optimizer: Adam, params: Mapping[str, Tensor], cfg: TrainConfig, n_instances: int) -> float:
    """Average accumulated gradients over the window, clip, update; returns the clip factor."""
    for p in params.values():
        if p.grad is not None:
            p.grad /= n_instances
    factor = clip_gradients(params, cfg.clip_max_norm)
    optimizer.step(params)
    return factor


@dataclass
class TrainReport:
    config: dict
    seed: int
    loss_curve: list[float] = field(default_factory=list)
    it_curve: list[float] = field(default_factory=list)
    prompt_curve: list[float] = field(default_factory=list)
    probe_steps: list[int] = field(default_factory=list)
    probe_losses: list[float] = field(default_factory=list)

    @property
    def initial_probe(self) -> float:
        return self.probe_losses[0]

    def smoothed_final_probe(self, window: int = 3) -> float:
        return float(np.mean(self.probe_losses[-window:]))

    def to_json(self) -> dict:
        return asdict(self)

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        (out / "train_report.json").write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))
        with open(out / "loss_curve.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "loss_total", "loss_it", "loss_prompt"])
            for i, (a, b, c) in enumerate(zip(self.loss_curve, self.it_curve, self.prompt_curve)):
                w.writerow([i, repr(a), repr(b), repr(c)])


def probe_loss(model, probe: Sequence[TaskInstance]) -> float:
    return float(np.mean([float(model.loss(inst).total.data) for inst in probe]))


def pick_probe(datasets: Mapping[str, Sequence[TaskInstance]], size: int, seed: int) -> list[TaskInstance]:
    rng = np.random.default_rng(derive_seed(seed, "probe"))
    fams = sorted(f for f in datasets if datasets[f])
    out = []
    for k in range(size):
        pool = datasets[fams[k % len(fams)]]
        out.append(pool[int(rng.integers(len(pool)))])
    return out


def train(
    cfg: TrainConfig,
    datasets: Mapping[str, Sequence[TaskInstance]],
    model,
    probe: Sequence[TaskInstance] | None = None,
    optimizer: Adam | None = None,
    start_step: int = 0,
    report: TrainReport | None = None,
    on_checkpoint: Callable[[int, Adam, TrainReport], None] | None = None,
) -> tuple[TrainReport, Adam]:
    """Minimise the summed per-instance L_total over the trainable subset.

    Step ``s`` draws its micro-batches from a generator seeded by
    ``(seed, s)``, so a run resumed at ``start_step`` with the saved optimizer
    state continues exactly like an uninterrupted one.
    """
    if not model.decoder.frozen:
        raise ValueError("the decoder must be pretrained and frozen before instruction tuning")
    params = model.encoder.trainable_params()
    optimizer = optimizer or make_optimizer(params, cfg)
    mixture = dict(cfg.mixture) if cfg.mixture is not None else default_mixture(datasets)
    probe = list(probe) if probe is not None else pick_probe(datasets, cfg.probe_size, cfg.seed)
    report = report or TrainReport(config=_echo(cfg), seed=cfg.seed)
    t0 = time.perf_counter()
    if start_step == 0 and not report.probe_steps:
        report.probe_steps.append(0)
        report.probe_losses.append(probe_loss(model, probe))

    for s in range(start_step, cfg.steps):
        rng = np.random.default_rng([cfg.seed, s])
        tot = it = pr = 0.0
        count = 0
        for _ in range(cfg.accum_every):
            for inst in sample_batch(datasets, mixture, cfg.batch_size, rng):
                L = model.loss(inst)
                if not np.isfinite(L.total.data):
                    raise FloatingPointError(f"non-finite loss at step {s} ({inst.family})")
                L.total.backward()
                tot += float(L.total.data)
                it += L.it
                pr += L.prompt
                count += 1
        step(optimizer, params, cfg, count)
        report.loss_curve.append(tot / count)
        report.it_curve.append(it / count)
        report.prompt_curve.append(pr / count)
        done = s + 1
        if done % cfg.probe_every == 0 or done == cfg.steps:
            report.probe_steps.append(done)
            report.probe_losses.append(probe_loss(model, probe))
            log.info("step %d  loss %.3f  probe %.3f", done, report.loss_curve[-1], report.probe_losses[-1])
        if on_checkpoint and cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
            on_checkpoint(done, optimizer, report)
    log.info("trained %d steps in %.1fs", cfg.steps - start_step, time.perf_counter() - t0)
    return report, optimizer


def _echo(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    if d["mixture"] is not None:
        d["mixture"] = dict(d["mixture"])
    return d
