"""Robustness scores for regression forecasts under attack.

Every score lives in [0, 1], where 1 means the attack had no effect:

* ``prs``  - performance robustness: how much worse the forecast got vs. truth.
* ``drs_targeted`` / ``drs_semi_targeted`` - deformation robustness: how far the
  forecast moved toward the attacker's target trajectory or band.
* ``tars`` - F-beta style combination of the two.

Scores are computed per sample, averaged per dataset, then summarized across
datasets (mean and sample standard deviation).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

GAMMA = 1e-10

CSV_COLUMNS = ("sample_id", "dataset_id", "attack", "clean_rmse", "attacked_rmse", "prs", "drs", "tars")
SCORE_NAMES = ("clean_rmse", "attacked_rmse", "prs", "drs", "tars")


def _pair(a, b, what="rmse"):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"{what}: length mismatch {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError(f"{what}: empty input")
    return a, b


def _band(a, b, n):
    a = np.broadcast_to(np.asarray(a, dtype=np.float64), (n,))
    b = np.broadcast_to(np.asarray(b, dtype=np.float64), (n,))
    if np.any(a > b):
        i = int(np.argmax(a > b))
        raise ValueError(f"band lower bound exceeds upper bound at step {i}: {a[i]} > {b[i]}")
    return a, b


def rmse(y_hat, y) -> float:
    y_hat, y = _pair(y_hat, y)
    return float(np.sqrt(np.mean((y_hat - y) ** 2)))


def brmse(y_hat, a, b) -> float:
    """RMSE of the distance from ``y_hat`` to the corridor ``[a, b]`` (0 inside)."""
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    a, b = _band(a, b, y_hat.size)
    below = np.where(y_hat < a, (y_hat - a) ** 2, 0.0)
    above = np.where(y_hat > b, (y_hat - b) ** 2, 0.0)
    return float(np.sqrt(np.mean(below + above)))


def _capped_exp(numerator: float, denominator: float, gamma: float) -> float:
    return min(math.exp(1.0 - numerator / (denominator + gamma)), 1.0)


def prs(y_hat, y_hat_adv, y, gamma: float = GAMMA) -> float:
    return _capped_exp(rmse(y_hat_adv, y), rmse(y_hat, y), gamma)


def drs_targeted(y_hat, y_hat_adv, y_adv, gamma: float = GAMMA) -> float:
    return _capped_exp(rmse(y_hat, y_adv), rmse(y_hat_adv, y_adv), gamma)


def drs_semi_targeted(y_hat, y_hat_adv, a, b, gamma: float = GAMMA) -> float:
    return _capped_exp(brmse(y_hat, a, b), brmse(y_hat_adv, a, b), gamma)


def tars(prs_val: float, drs_val: float, beta: float = 1.0) -> float:
    """Weighted harmonic combination; DRS counts ``beta`` times as much as PRS."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    b2 = beta * beta
    denom = b2 * prs_val + drs_val
    if denom == 0.0:
        return 0.0
    return (1.0 + b2) * prs_val * drs_val / denom


# -- records and aggregation --------------------------------------------------


@dataclass(frozen=True)
class ScoreRecord:
    sample_id: int
    dataset_id: int
    attack: str
    clean_rmse: float
    attacked_rmse: float
    prs: float
    drs: float | None = None
    tars: float | None = None

    def __post_init__(self):
        for name in ("prs", "drs", "tars"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


@dataclass
class AggregateScores:
    """Per-dataset means plus cross-dataset mean and sample std for each score.

    Scores absent from every record (DRS/TARS for untargeted attacks) are
    omitted from all three maps.
    """

    attack: str
    per_dataset: dict[int, dict[str, float]]
    mean: dict[str, float]
    std: dict[str, float]
    n_samples: dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "attack": self.attack,
            "per_dataset": {str(k): v for k, v in self.per_dataset.items()},
            "n_samples": {str(k): v for k, v in self.n_samples.items()},
            "mean": self.mean,
            "std": self.std,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "AggregateScores":
        return cls(
            attack=doc["attack"],
            per_dataset={int(k): dict(v) for k, v in doc["per_dataset"].items()},
            mean=dict(doc["mean"]),
            std=dict(doc["std"]),
            n_samples={int(k): int(v) for k, v in doc.get("n_samples", {}).items()},
        )


def aggregate(records_by_dataset: Mapping[int, Sequence[ScoreRecord]], attack: str | None = None) -> AggregateScores:
    """Two-level aggregation: mean over samples per dataset, then across datasets.

    TARS is averaged as recorded per sample, never recomputed from mean PRS/DRS.
    The cross-dataset spread is the sample standard deviation (ddof=1), and 0
    when there is a single dataset.
    """
    if not records_by_dataset:
        raise ValueError("aggregate: no datasets given")
    per_dataset: dict[int, dict[str, float]] = {}
    counts = {}
    for ds, records in sorted(records_by_dataset.items()):
        if not records:
            raise ValueError(f"aggregate: dataset {ds} has no records")
        if attack is None:
            attack = records[0].attack
        means = {}
        for name in SCORE_NAMES:
            vals = [getattr(r, name) for r in records if getattr(r, name) is not None]
            if vals:
                means[name] = float(np.mean(vals))
        per_dataset[ds] = means
        counts[ds] = len(records)
    names = [n for n in SCORE_NAMES if all(n in m for m in per_dataset.values())]
    mean, std = {}, {}
    for name in names:
        vals = np.array([m[name] for m in per_dataset.values()])
        mean[name] = float(vals.mean())
        std[name] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
    return AggregateScores(attack, per_dataset, mean, std, counts)


def group_by_dataset(records: Iterable[ScoreRecord]) -> dict[int, list[ScoreRecord]]:
    out: dict[int, list[ScoreRecord]] = {}
    for r in sorted(records, key=lambda r: (r.dataset_id, r.sample_id)):
        out.setdefault(r.dataset_id, []).append(r)
    return out


# -- serialization ------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def records_to_csv(records: Iterable[ScoreRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def records_from_csv(text: str) -> list[ScoreRecord]:
    reader = csv.DictReader(io.StringIO(text))
    missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"scores CSV lacks columns {sorted(missing)}")
    out = []
    for row in reader:
        opt = {k: (float(row[k]) if row[k] != "" else None) for k in ("drs", "tars")}
        out.append(ScoreRecord(int(row["sample_id"]), int(row["dataset_id"]), row["attack"],
                               float(row["clean_rmse"]), float(row["attacked_rmse"]),
                               float(row["prs"]), **opt))
    return out


def aggregates_to_json(aggregates: Sequence[AggregateScores]) -> str:
    return json.dumps([a.to_dict() for a in aggregates], indent=2)


def record_as_dict(record: ScoreRecord) -> dict:
    return asdict(record)
