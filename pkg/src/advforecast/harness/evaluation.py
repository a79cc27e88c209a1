"""Robustness evaluation: attack every test sample, score, aggregate, report."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import scores
from ..attacks import (NOISE, SEMI_TARGETED, TARGETED, UNTARGETED, AttackError, AttackResult,
                       AttackSpec, attack_batch)
from ..models import stack_samples
from ..scenarios import catalog_bands, catalog_targets

REPORT_FORMAT_VERSION = 1


def catalog_attack_specs(horizon: int = 8, epsilon: float = 0.15, steps: int = 100,
                         repetitions: int = 100, lam: float = 1000.0,
                         noise_bounds: tuple | None = None) -> list[AttackSpec]:
    """The full evaluation battery: noise, untargeted, 4 targeted, 4 semi-targeted."""
    specs = [
        AttackSpec(NOISE, epsilon, steps, repetitions=repetitions, input_bounds=noise_bounds, name="noise"),
        AttackSpec(UNTARGETED, epsilon, steps, name="untargeted"),
    ]
    for name, target in catalog_targets(horizon).items():
        specs.append(AttackSpec(TARGETED, epsilon, steps, target=target, name=f"targeted:{name}"))
    for name, band in catalog_bands(horizon).items():
        specs.append(AttackSpec(SEMI_TARGETED, epsilon, steps, lam=lam, band=band, name=f"semi:{name}"))
    return specs


def attack_spec_by_name(name: str, horizon: int = 8, epsilon: float = 0.15, steps: int = 100,
                        repetitions: int = 100, lam: float = 1000.0,
                        noise_bounds: tuple | None = None) -> AttackSpec:
    for spec in catalog_attack_specs(horizon, epsilon, steps, repetitions, lam, noise_bounds):
        if spec.name == name:
            return spec
    names = [s.name for s in catalog_attack_specs(horizon)]
    raise AttackError(f"unknown attack {name!r}; expected one of {names}")


@dataclass
class RobustnessReport:
    config: dict
    aggregates: list[scores.AggregateScores]
    records: list[scores.ScoreRecord]
    clean_rmse: dict[int, float]
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": "advforecast-report",
            "version": REPORT_FORMAT_VERSION,
            "config": self.config,
            "clean_rmse": {str(k): v for k, v in self.clean_rmse.items()},
            "attacks": [a.to_dict() for a in self.aggregates],
            "metadata": self.metadata,
        }

    def scores_csv(self) -> str:
        return scores.records_to_csv(self.records)

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rpath, cpath = out / "report.json", out / "scores.csv"
        rpath.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        cpath.write_text(self.scores_csv())
        return rpath, cpath


def load_report(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "advforecast-report":
        raise ValueError(f"{path}: not a robustness report")
    return doc


def score_sample(spec: AttackSpec, sample_id: int, dataset_id: int, y_hat, y_hat_adv, truth,
                 beta: float = 1.0) -> scores.ScoreRecord:
    """Score one attacked forecast; untargeted and noise attacks get PRS only."""
    prs = scores.prs(y_hat, y_hat_adv, truth)
    drs = tars = None
    if spec.kind == TARGETED:
        drs = scores.drs_targeted(y_hat, y_hat_adv, np.asarray(spec.target))
    elif spec.kind == SEMI_TARGETED:
        drs = scores.drs_semi_targeted(y_hat, y_hat_adv, *spec.band)
    if drs is not None:
        tars = scores.tars(prs, drs, beta)
    return scores.ScoreRecord(sample_id, dataset_id, spec.name, scores.rmse(y_hat, truth),
                              scores.rmse(y_hat_adv, truth), prs, drs, tars)


def _check_compatible(model, spec, sample):
    expected = model.horizon
    if sample.exo.shape[0] != expected:
        raise AttackError(f"attack {spec.name}: samples cover {sample.exo.shape[0]} steps, model {expected}")
    if model.kind == "series" and sample.exo.ndim != 1:
        raise AttackError(f"attack {spec.name}: series model cannot take map inputs {sample.exo.shape}")
    if model.kind == "maps" and sample.exo.ndim != 4:
        raise AttackError(f"attack {spec.name}: map model cannot take series inputs {sample.exo.shape}")


def evaluate_dataset(model, samples, spec: AttackSpec, dataset_id: int, beta: float = 1.0,
                     seed: int = 0, batch_size: int = 64) -> list[scores.ScoreRecord]:
    if not samples:
        raise ValueError(f"dataset {dataset_id} has no test samples")
    _check_compatible(model, spec, samples[0])
    records = []
    for s in range(0, len(samples), batch_size):
        chunk = samples[s:s + batch_size]
        hist, exo, truth = stack_samples(chunk)
        rngs = [np.random.default_rng([seed, dataset_id, smp.sample_id]) for smp in chunk]
        x_adv, _ = attack_batch(model, hist, exo, truth, spec, rngs)
        y_hat = model.forward(hist, exo).data
        y_adv = model.forward(hist, x_adv).data
        for i, smp in enumerate(chunk):
            AttackResult(exo[i], x_adv[i], spec.epsilon, input_bounds=spec.input_bounds)
            records.append(score_sample(spec, smp.sample_id, dataset_id, y_hat[i], y_adv[i], truth[i], beta))
    return records


def clean_rmse(model, samples) -> float:
    hist, exo, truth = stack_samples(samples)
    y = model.forward(hist, exo).data
    return float(np.mean([scores.rmse(y[i], truth[i]) for i in range(len(truth))]))


def evaluate_robustness(model, datasets, attacks, beta: float = 1.0, seed: int = 0,
                        config: dict | None = None, batch_size: int = 64) -> RobustnessReport:
    """Run every attack on every test sample of every dataset.

    ``datasets`` maps dataset id to a list of test samples, or is a list of
    Scenario objects; in the latter case a noise attack without explicit
    input bounds is clipped to each dataset's training-split range. Records
    are ordered by attack, then dataset, then sample id, so the CSV is
    deterministic.
    """
    bounds = {}
    if not isinstance(datasets, dict):
        bounds = {sc.dataset: sc.input_bounds for sc in datasets}
        datasets = {sc.dataset: sc.test for sc in datasets}
    if not datasets:
        raise ValueError("evaluation needs at least one dataset")
    names = [a.name for a in attacks]
    if len(set(names)) != len(names):
        raise AttackError(f"attack names must be unique, got {names}")
    start = time.perf_counter()
    records, aggregates = [], []
    for spec in attacks:
        per_ds = {}
        for ds_id, samples in sorted(datasets.items()):
            run = spec
            if spec.kind == NOISE and spec.input_bounds is None and ds_id in bounds:
                run = replace(spec, input_bounds=bounds[ds_id])
            per_ds[ds_id] = sorted(evaluate_dataset(model, samples, run, ds_id, beta, seed, batch_size),
                                   key=lambda r: r.sample_id)
            records.extend(per_ds[ds_id])
        aggregates.append(scores.aggregate(per_ds, spec.name))
    clean = {ds: clean_rmse(model, s) for ds, s in sorted(datasets.items())}
    meta = {"wall_clock_seconds": round(time.perf_counter() - start, 3)}
    cfg = dict(config or {})
    cfg.setdefault("beta", beta)
    cfg.setdefault("attacks", [a.to_dict() for a in attacks])
    return RobustnessReport(cfg, aggregates, records, clean, meta)


def format_report(doc: dict) -> str:
    """Human-readable table of the aggregates in a report document."""
    lines = []
    clean = doc.get("clean_rmse", {})
    if clean:
        vals = np.array(list(clean.values()), dtype=float)
        sd = vals.std(ddof=1) if vals.size > 1 else 0.0
        lines.append(f"clean RMSE: {vals.mean():.4f} +/- {sd:.4f} over {vals.size} dataset(s)")
    header = f"{'attack':<20} {'PRS':>17} {'DRS':>17} {'TARS':>17} {'RMSE adv':>17}"
    lines += [header, "-" * len(header)]
    for a in doc["attacks"]:
        cells = []
        for key in ("prs", "drs", "tars", "attacked_rmse"):
            if key in a["mean"]:
                cells.append(f"{a['mean'][key]:.4f} +/- {a['std'][key]:.4f}")
            else:
                cells.append("-")
        lines.append(f"{a['attack']:<20} " + " ".join(f"{c:>17}" for c in cells))
    return "\n".join(lines)
