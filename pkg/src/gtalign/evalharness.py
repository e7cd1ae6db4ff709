"""Answer parsing, metrics and the zero-shot evaluation protocol."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .data import TaskInstance
from .synthetic import BINARY_FAMILIES, FAMILIES, REGRESSION_FAMILIES
from .tasktext import Vocab


class _Illegal:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self) -> str:
        return "ILLEGAL"

    def __reduce__(self):
        return (_Illegal, ())


ILLEGAL = _Illegal()

_NUMERIC = set("0123456789") | {"-", "."}


def parse_answer(tokens: Sequence[int], family: str, vocab: Vocab, candidates: Sequence[str] = ()):
    """Label string, float, or ``ILLEGAL`` for a generated token sequence."""
    words = vocab.decode(tokens)
    if family in REGRESSION_FAMILIES:
        run = []
        for w in words:
            if w not in _NUMERIC:
                break
            run.append(w)
        try:
            return float("".join(run)) if run else ILLEGAL
        except ValueError:
            return ILLEGAL
    if not candidates:
        candidates = ("yes", "no")
    if words and words[0] in candidates:
        return words[0]
    return ILLEGAL


@dataclass(frozen=True)
class MetricSpec:
    metrics: Mapping[str, str] = field(
        default_factory=lambda: {
            "node-cls": "accuracy",
            "CONN": "auc",
            "link-pred": "auc",
            "graph-cls": "auc",
            "SPD": "mae",
            "CN": "mae",
            "CYCLE": "mae",
            "graph-reg": "mae",
        }
    )

    def __post_init__(self):
        for fam in FAMILIES:
            if self.metrics.get(fam) not in ("accuracy", "auc", "mae"):
                raise ValueError(f"family {fam!r} needs exactly one of accuracy/auc/mae")

    def __getitem__(self, family: str) -> str:
        return self.metrics[family]


def accuracy(predictions: Sequence, labels: Sequence) -> float:
    if len(predictions) != len(labels) or not labels:
        raise ValueError("accuracy needs equally many predictions and labels, at least one")
    return float(np.mean([p is not ILLEGAL and p == y for p, y in zip(predictions, labels)]))


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """P(random positive outscores random negative), ties counted 1/2 (rank statistic)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise ValueError(f"scores {s.shape} and labels {y.shape} differ in shape")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative examples")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def mae(predictions: Sequence[float], targets: Sequence[float]) -> float:
    p, t = np.asarray(predictions, dtype=float), np.asarray(targets, dtype=float)
    if p.shape != t.shape or p.size == 0:
        raise ValueError("mae needs equally many predictions and targets, at least one")
    return float(np.mean(np.abs(p - t)))


def normalized_mae(value: float, mae_min: float, mae_max: float) -> float:
    if not mae_max > mae_min:
        raise ValueError(f"degenerate MAE range [{mae_min}, {mae_max}]")
    if not mae_min <= value <= mae_max:
        raise ValueError(f"mae {value} outside [{mae_min}, {mae_max}]")
    return 1.0 - (value - mae_min) / (mae_max - mae_min)


def legality_rate(records: Sequence) -> float:
    """Fraction of records that parsed to something other than ILLEGAL.

    Records may be parsed values, or mappings with a ``legal`` flag.
    """
    if not records:
        raise ValueError("legality rate of an empty record set")
    legal = [bool(r["legal"]) if isinstance(r, Mapping) else r is not ILLEGAL for r in records]
    return sum(legal) / len(legal)


# -- protocol ---------------------------------------------------------------------


@dataclass
class EvalReport:
    metrics: dict[str, dict[str, float]]
    records: list[dict]
    config: dict
    seed: int

    def to_json(self) -> dict:
        return {"metrics": self.metrics, "records": self.records, "config": self.config, "seed": self.seed}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def rows(self) -> list[tuple[str, str, float]]:
        return [(ds, k, v) for ds in sorted(self.metrics) for k, v in sorted(self.metrics[ds].items())]

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval_report.json").write_text(self.dumps() + "\n")
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dataset", "metric", "value"])
            for ds, k, v in self.rows():
                w.writerow([ds, k, repr(v)])

    @classmethod
    def read(cls, path: str | Path) -> "EvalReport":
        p = Path(path)
        if p.is_dir():
            p = p / "eval_report.json"
        d = json.loads(p.read_text())
        return cls(d["metrics"], d["records"], d["config"], d["seed"])


REPORT_SCHEMA = {
    "type": "object",
    "required": ["metrics", "records", "config", "seed"],
    "properties": {
        "seed": {"type": "integer"},
        "config": {"type": "object"},
        "metrics": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["family", "n", "legality_rate", "baseline"],
                "properties": {
                    "family": {"type": "string"},
                    "n": {"type": "integer", "minimum": 1},
                    "legality_rate": {"type": "number", "minimum": 0, "maximum": 1},
                    "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
                    "auc": {"type": "number", "minimum": 0, "maximum": 1},
                    "mae": {"type": "number", "minimum": 0},
                    "baseline": {"type": "number", "minimum": 0},
                },
            },
        },
        "records": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["dataset", "index", "family", "generated", "parsed", "legal", "label"],
                "properties": {
                    "dataset": {"type": "string"},
                    "index": {"type": "integer"},
                    "family": {"type": "string"},
                    "generated": {"type": "array", "items": {"type": "string"}},
                    "parsed": {"type": ["string", "number"]},
                    "legal": {"type": "boolean"},
                    "label": {"type": ["string", "integer"]},
                    "score": {"type": "number"},
                },
            },
        },
    },
}


def _majority_rate(labels: Sequence) -> float:
    _, counts = np.unique(np.asarray([str(y) for y in labels]), return_counts=True)
    return float(counts.max() / len(labels))


def evaluate_dataset(
    model,
    name: str,
    instances: Sequence[TaskInstance],
    spec: MetricSpec,
    train_mean: float | None = None,
    max_new_tokens: int = 4,
    **variant,
) -> tuple[dict[str, float], list[dict]]:
    if not instances:
        raise ValueError(f"held-out dataset {name!r} is empty")
    family = instances[0].family
    if any(inst.family != family for inst in instances):
        raise ValueError(f"dataset {name!r} mixes task families")
    metric = spec[family]
    vocab = model.vocab
    records, parsed = [], []
    for k, inst in enumerate(instances):
        toks = model.generate(inst, max_new_tokens, **variant)
        p = parse_answer(toks, family, vocab, inst.candidates)
        parsed.append(p)
        rec = {
            "dataset": name,
            "index": k,
            "family": family,
            "generated": vocab.decode(toks),
            "parsed": "ILLEGAL" if p is ILLEGAL else p,
            "legal": p is not ILLEGAL,
            "label": inst.label,
        }
        if metric == "auc":
            rec["score"] = model.score_binary(inst, **variant)
        records.append(rec)

    out: dict[str, float] = {"family": family, "n": len(instances), "legality_rate": legality_rate(parsed)}
    labels = [inst.label for inst in instances]
    if metric == "accuracy":
        out["accuracy"] = accuracy(parsed, labels)
        out["baseline"] = _majority_rate(labels)
    elif metric == "auc":
        # an illegal answer gets the most damaging score for its true label
        ys = [1 if y == "yes" else 0 for y in labels]
        scores = [r["score"] if r["legal"] else (-1.0 if y else 2.0) for r, y in zip(records, ys)]
        out["auc"] = auc(scores, ys)
        out["baseline"] = 0.5
    else:
        if train_mean is None:
            raise ValueError(f"regression dataset {name!r} needs the training-set mean target")
        targets = [inst.numeric_target for inst in instances]
        preds = [train_mean if p is ILLEGAL else p for p in parsed]
        out["mae"] = mae(preds, targets)
        out["baseline"] = mae([train_mean] * len(targets), targets)
    return out, records


def zero_shot_eval(
    model,
    datasets: Mapping[str, Sequence[TaskInstance]],
    spec: MetricSpec | None = None,
    seed: int = 0,
    train_means: Mapping[str, float] | None = None,
    max_new_tokens: int = 4,
    config: Mapping | None = None,
    **variant,
) -> EvalReport:
    """Greedy-decode every held-out instance and score each dataset by its family metric.

    ``variant`` is forwarded to the model (``zero_align``, ``generic_prompt``)
    for ablations. Parameters are never touched.
    """
    if not datasets:
        raise ValueError("no held-out datasets given")
    spec = spec or MetricSpec()
    train_means = train_means or {}
    metrics, records = {}, []
    for name in sorted(datasets):
        insts = datasets[name]
        fam = insts[0].family if insts else None
        m, r = evaluate_dataset(model, name, insts, spec, train_means.get(fam), max_new_tokens, **variant)
        metrics[name] = m
        records.extend(r)
    echo = dict(config or {})
    echo["variant"] = {k: bool(v) for k, v in sorted(variant.items())}
    return EvalReport(metrics, records, echo, int(seed))


def primary_value(entry: Mapping[str, float]) -> tuple[str, float]:
    for k in ("accuracy", "auc", "mae"):
        if k in entry:
            return k, float(entry[k])
    raise KeyError("no primary metric in entry")


def aggregate_scores(reports: Mapping[str, EvalReport]) -> dict[str, float]:
    """Mean per-dataset score for each variant, regression MAE normalised across variants.

    Accuracy and AUC enter as-is. For each regression dataset, MAE is mapped
    to [0, 1] using the best and worst MAE among the compared variants; if all
    variants tie the dataset scores 1.0 for everyone.
    """
    names = sorted(next(iter(reports.values())).metrics)
    scores = {v: [] for v in reports}
    for ds in names:
        kinds = {v: primary_value(r.metrics[ds]) for v, r in reports.items()}
        if next(iter(kinds.values()))[0] == "mae":
            vals = [val for _, val in kinds.values()]
            lo, hi = min(vals), max(vals)
            for v, (_, val) in kinds.items():
                scores[v].append(1.0 if hi == lo else normalized_mae(val, lo, hi))
        else:
            for v, (_, val) in kinds.items():
                scores[v].append(val)
    return {v: float(np.mean(s)) for v, s in scores.items()}
