"""Ordinary and adversarial training loops.

Both use mini-batch Adam with a reduce-on-plateau learning-rate schedule and
early stopping on validation MSE, returning the best-epoch weights. Adversarial
training replaces every batch by untargeted PGD examples crafted against the
current weights before the gradient step; clean examples never enter the loss.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import autodiff as ad
from ..attacks import UNTARGETED, AttackSpec, pgd_batch
from ..models import build_model, stack_samples

log = logging.getLogger(__name__)

DEFAULT_LR = {"series": 0.01, "maps": 0.001}


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float | None = None
    batch_size: int = 32
    max_epochs: int = 100
    lr_patience: int = 10
    lr_factor: float = 0.1
    early_stop_patience: int = 15
    seed: int = 0
    adv_epsilon: float = 0.15
    adv_steps: int = 10

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingResult:
    model: object
    curve: list[float]
    best_epoch: int
    lrs: list[float] = field(default_factory=list)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads) -> dict:
        self.t += 1
        out = {}
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            out[k] = p - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return out


class ReduceOnPlateau:
    """Relative-threshold plateau detector (threshold 1e-4, no cooldown)."""

    def __init__(self, patience: int, factor: float, threshold: float = 1e-4):
        self.patience = patience
        self.factor = factor
        self.threshold = threshold
        self.best = np.inf
        self.bad = 0

    def __call__(self, value: float, lr: float) -> float:
        if value < self.best * (1.0 - self.threshold):
            self.best = value
            self.bad = 0
        else:
            self.bad += 1
        if self.bad > self.patience:
            self.bad = 0
            return lr * self.factor
        return lr


def mse_and_grads(model, history, exo, truth):
    with ad.Tape() as tape:
        p = {k: tape.watch(v) for k, v in model.params.items()}
        loss = ad.mean(ad.square(model.forward(history, exo, p) - truth))
        grads = tape.backward(loss)
    return loss.item(), {k: grads[t.node].data for k, t in p.items()}


def dataset_mse(model, samples, batch_size=256, inner: AttackSpec | None = None) -> float:
    total, n = 0.0, 0
    for s in range(0, len(samples), batch_size):
        hist, exo, truth = stack_samples(samples[s:s + batch_size])
        if inner is not None:
            exo, _ = pgd_batch(model, hist, exo, truth, inner)
        y = model.forward(hist, exo).data
        total += float(np.sum(np.mean((y - truth) ** 2, axis=1)))
        n += len(truth)
    return total / n


def _fit(model, train, val, cfg: TrainConfig, inner: AttackSpec | None) -> TrainingResult:
    if not train or not val:
        raise ValueError("training needs non-empty train and validation splits")
    rng = np.random.default_rng(cfg.seed)
    lr = cfg.lr if cfg.lr is not None else DEFAULT_LR[model.kind]
    opt = Adam(model.params, lr)
    sched = ReduceOnPlateau(cfg.lr_patience, cfg.lr_factor)
    hist_all, exo_all, truth_all = stack_samples(train)
    best_val = dataset_mse(model, val, inner=inner)
    best_params, best_epoch = model.params, 0
    curve, lrs, stale = [best_val], [lr], 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train))
        try:
            for s in range(0, len(order), cfg.batch_size):
                idx = order[s:s + cfg.batch_size]
                hist, exo, truth = hist_all[idx], exo_all[idx], truth_all[idx]
                if inner is not None:
                    exo, _ = pgd_batch(model, hist, exo, truth, inner)
                loss, grads = mse_and_grads(model, hist, exo, truth)
                if not np.isfinite(loss):
                    raise ad.NonFiniteError("loss is not finite")
                model.params = model.params.replace(opt.step(model.params, grads))
            val_loss = dataset_mse(model, val, inner=inner)
        except ad.NonFiniteError as err:
            raise TrainingDiverged(f"training diverged at epoch {epoch}: {err}") from None
        curve.append(val_loss)
        opt.lr = sched(val_loss, opt.lr)
        lrs.append(opt.lr)
        log.debug("epoch %d val %.6f lr %.2e", epoch, val_loss, opt.lr)
        if val_loss < best_val:
            best_val, best_params, best_epoch, stale = val_loss, model.params, epoch, 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    model.params = best_params
    return TrainingResult(model, curve, best_epoch, lrs)


def train_ordinary(model_kind, scenario, cfg: TrainConfig | None = None, **model_kwargs) -> TrainingResult:
    """Train a fresh model (or the given model instance) on clean data."""
    cfg = cfg or TrainConfig()
    model = _make(model_kind, cfg, model_kwargs)
    return _fit(model, scenario.train, scenario.val, cfg, None)


def train_adversarial(model_kind, scenario, cfg: TrainConfig | None = None,
                      inner: AttackSpec | None = None, **model_kwargs) -> TrainingResult:
    """Train on freshly crafted untargeted PGD examples only.

    ``inner`` defaults to PGD with ``cfg.adv_epsilon`` and ``cfg.adv_steps``
    (alpha = 2*eps/T). Validation uses the same attack, so model selection
    follows the adversarial objective.
    """
    cfg = cfg or TrainConfig()
    if inner is None:
        inner = AttackSpec(UNTARGETED, epsilon=cfg.adv_epsilon, steps=cfg.adv_steps)
    if inner.kind != UNTARGETED:
        raise ValueError(f"adversarial training uses untargeted PGD, got {inner.kind}")
    model = _make(model_kind, cfg, model_kwargs)
    return _fit(model, scenario.train, scenario.val, cfg, inner)


def _make(model_kind, cfg, model_kwargs):
    if isinstance(model_kind, str):
        model_kwargs.setdefault("seed", cfg.seed)
        return build_model(model_kind, **model_kwargs)
    return model_kind
