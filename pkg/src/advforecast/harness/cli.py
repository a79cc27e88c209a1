"""Command line entry point: ``advforecast {generate,train,attack,evaluate,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import scores
from ..attacks import AttackError, AttackResult, run_attack
from ..models import WeightsFileError, load_weights, predict, save_weights
from ..scenarios import ScenarioConfig, build_scenario, write_series_csv
from .config import ConfigError, ExperimentConfig
from .evaluation import (attack_spec_by_name, catalog_attack_specs, evaluate_robustness,
                         format_report, load_report, score_sample)
from .training import TrainingDiverged, train_adversarial, train_ordinary

log = logging.getLogger("advforecast")


class CliError(Exception):
    pass


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed, scenario=replace(cfg.scenario, seed=args.seed),
                      train=replace(cfg.train, seed=args.seed))
    if getattr(args, "model", None):
        cfg = replace(cfg, model=args.model)
    if getattr(args, "train_mode", None):
        cfg = replace(cfg, train_mode=args.train_mode)
    if getattr(args, "epsilon", None) is not None:
        cfg = replace(cfg, epsilon=args.epsilon)
    if getattr(args, "steps", None) is not None:
        cfg = replace(cfg, steps=args.steps)
    if getattr(args, "beta", None) is not None:
        cfg = replace(cfg, beta=args.beta)
    if getattr(args, "attack", None):
        cfg = replace(cfg, attacks=list(args.attack))
    return cfg


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_file(path, what) -> Path:
    path = Path(path)
    if not path.is_file():
        raise CliError(f"{what} not found: {path}")
    return path


def _attack_specs(cfg: ExperimentConfig, bounds=None):
    horizon = cfg.scenario.horizon
    if cfg.attacks == ["catalog"]:
        return catalog_attack_specs(horizon, cfg.epsilon, cfg.steps, cfg.repetitions, cfg.lam, bounds)
    return [attack_spec_by_name(n, horizon, cfg.epsilon, cfg.steps, cfg.repetitions, cfg.lam, bounds)
            for n in cfg.attacks]


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    data = out / "data"
    data.mkdir(exist_ok=True)
    cfg.scenario.save(out / "scenario.json")
    for ds in range(cfg.scenario.n_datasets):
        sc = build_scenario(cfg.scenario, cfg.model, ds)
        raw = sc.raw
        if cfg.model == "series":
            write_series_csv(data / f"series_dataset{ds}.csv", raw["power"], raw["forecast"])
        else:
            write_series_csv(data / f"maps_dataset{ds}.csv", raw["power"], raw["forecast"].mean(axis=(1, 2)))
            np.save(data / f"maps_dataset{ds}_forecast.npy", raw["forecast"])
    print(f"wrote {cfg.scenario.n_datasets} {cfg.model} dataset(s) to {data}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    scenario = build_scenario(cfg.scenario, cfg.model, 0)
    trainer = train_adversarial if cfg.train_mode == "adversarial" else train_ordinary
    kwargs = cfg.model_kwargs()
    if cfg.train_mode == "adversarial":
        cfg = replace(cfg, train=replace(cfg.train, adv_epsilon=cfg.epsilon))
    result = trainer(cfg.model, scenario, cfg.train, **kwargs)
    path = save_weights(result.model, out / "weights.json")
    (out / "training_curve.json").write_text(json.dumps(
        {"val_mse": result.curve, "lr": result.lrs, "best_epoch": result.best_epoch}, indent=2))
    print(f"trained {cfg.model} model ({cfg.train_mode}); best epoch {result.best_epoch}; weights -> {path}")
    return 0


def cmd_attack(args) -> int:
    cfg = _load_config(args)
    model = load_weights(_require_file(args.weights, "weights file"))
    out = _out_dir(args, cfg)
    scenario = build_scenario(cfg.scenario, model.kind, args.dataset)
    by_id = {s.sample_id: s for s in scenario.test}
    if args.sample_id not in by_id:
        raise CliError(f"sample id {args.sample_id} not in test split (0..{len(by_id) - 1})")
    sample = by_id[args.sample_id]
    name = cfg.attacks[0] if cfg.attacks != ["catalog"] else "untargeted"
    spec = attack_spec_by_name(name, cfg.scenario.horizon, cfg.epsilon, cfg.steps, cfg.repetitions,
                               cfg.lam, scenario.input_bounds)
    rng = np.random.default_rng([cfg.seed, args.dataset, sample.sample_id])
    result: AttackResult = run_attack(model, sample, spec, rng)
    y_hat = predict(model, sample)
    y_adv = predict(model, sample.with_exo(result.x_adv))
    rec = score_sample(spec, sample.sample_id, args.dataset, y_hat, y_adv, sample.truth, cfg.beta)
    dump = {
        "attack": spec.to_dict(),
        "sample_id": sample.sample_id,
        "dataset_id": args.dataset,
        "epsilon_ms": scenario.epsilon_in_ms(spec.epsilon),
        "x": result.x.tolist(),
        "x_adv": result.x_adv.tolist(),
        "delta": result.delta.tolist(),
        "truth": sample.truth.tolist(),
        "y_hat": y_hat.tolist(),
        "y_hat_adv": y_adv.tolist(),
        "loss_trace": result.loss_trace.tolist(),
        "scores": scores.record_as_dict(rec),
    }
    path = out / f"attack_{spec.name.replace(':', '_')}_ds{args.dataset}_s{sample.sample_id}.json"
    path.write_text(json.dumps(dump, indent=2))
    print(f"{spec.name}: PRS {rec.prs:.4f}" + (f", DRS {rec.drs:.4f}, TARS {rec.tars:.4f}" if rec.drs is not None else "")
          + f" -> {path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    model = load_weights(_require_file(args.weights, "weights file"))
    if model.kind != cfg.model:
        cfg = replace(cfg, model=model.kind)
    out = _out_dir(args, cfg)
    scenarios = [build_scenario(cfg.scenario, model.kind, i) for i in range(cfg.scenario.n_datasets)]
    specs = _attack_specs(cfg)
    report = evaluate_robustness(model, scenarios, specs, cfg.beta, cfg.seed, config=cfg.to_dict())
    rpath, cpath = report.write(out)
    print(format_report(report.to_dict()))
    print(f"report -> {rpath}\nscores -> {cpath}")
    return 0


def cmd_report(args) -> int:
    doc = load_report(_require_file(args.report, "report file"))
    print(format_report(doc))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advforecast", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=True):
        p.add_argument("--config", help="experiment (or scenario) config JSON")
        p.add_argument("--seed", type=int, help="overrides every seed in the config")
        p.add_argument("--out", help="output directory")
        if model:
            p.add_argument("--model", choices=("series", "maps"))

    p = sub.add_parser("generate", help="generate synthetic scenario data files")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a forecaster and write weights.json")
    common(p)
    p.add_argument("--train-mode", choices=("ordinary", "adversarial"))
    p.add_argument("--epsilon", type=float, help="budget of the inner PGD for adversarial training")
    p.set_defaults(func=cmd_train)

    attack_opts = (("--epsilon", float), ("--steps", int))
    p = sub.add_parser("attack", help="attack one test sample and dump the perturbation")
    common(p, model=False)
    p.add_argument("--weights", required=True)
    p.add_argument("--sample-id", type=int, default=0)
    p.add_argument("--dataset", type=int, default=0)
    p.add_argument("--attack", action="append", help="attack name, e.g. untargeted, targeted:zigzag")
    for flag, typ in attack_opts:
        p.add_argument(flag, type=typ)
    p.add_argument("--beta", type=float)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("evaluate", help="run the robustness evaluation and write report files")
    common(p, model=False)
    p.add_argument("--weights", required=True)
    p.add_argument("--attack", action="append", help="attack name (repeatable); default: full catalog")
    for flag, typ in attack_opts:
        p.add_argument(flag, type=typ)
    p.add_argument("--beta", type=float)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="print a report.json as a table")
    p.add_argument("--report", required=True, help="path to report.json")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
    except ConfigError as err:
        print(f"error: invalid config: {err}", file=sys.stderr)
    except WeightsFileError as err:
        print(f"error: bad weights file: {err}", file=sys.stderr)
    except AttackError as err:
        print(f"error: bad attack: {err}", file=sys.stderr)
    except TrainingDiverged as err:
        print(f"error: {err}", file=sys.stderr)
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
