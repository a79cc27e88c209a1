"""L-infinity bounded attacks on a forecaster's exogenous input.

Four attack kinds are supported:

``noise``
    Repeated Gaussian noise, each draw rescaled to L-inf norm exactly epsilon;
    the draw with the largest MSE against the truth wins.
``pgd-untargeted``
    Sign-gradient ascent on MSE(f(x), y).
``pgd-targeted``
    Sign-gradient descent on MSE(f(x), y_adv).
``pgd-semi-targeted``
    Ascent on MSE(f(x), y) - lambda * band_penalty(f(x), a, b), which pushes
    the forecast away from the truth while keeping it inside the band.

PGD starts from the clean input (no random start) and projects every iterate
back into the epsilon-ball around it. ``sign(0)`` is 0.

The attack functions are batched: they take stacked ``history``/``exo``/
``truth`` arrays and attack every row independently, so a batch result equals
the per-sample results.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .models import ForecastSample

NOISE = "noise"
UNTARGETED = "pgd-untargeted"
TARGETED = "pgd-targeted"
SEMI_TARGETED = "pgd-semi-targeted"
KINDS = (NOISE, UNTARGETED, TARGETED, SEMI_TARGETED)

BUDGET_TOL = 1e-12


class AttackError(ValueError):
    """Invalid attack configuration or an attack that cannot run."""


class BudgetViolation(AssertionError):
    """A perturbation left the epsilon-ball."""


class BudgetAudit:
    """Process-wide tally of every attack result checked against its budget."""

    def __init__(self):
        self._lock = threading.Lock()
        self.reset()

    def reset(self):
        self.checked = 0
        self.violations = 0
        self.worst_excess = -np.inf

    def record(self, excess: float):
        with self._lock:
            self.checked += 1
            self.worst_excess = max(self.worst_excess, excess)
            if excess > BUDGET_TOL:
                self.violations += 1


AUDIT = BudgetAudit()


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    epsilon: float = 0.15
    steps: int = 100
    alpha: float | None = None
    repetitions: int = 100
    lam: float = 1000.0
    target: tuple | None = None
    band: tuple | None = None
    input_bounds: tuple | None = None
    name: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AttackError(f"unknown attack kind {self.kind!r}; expected one of {KINDS}")
        if not self.epsilon >= 0:
            raise AttackError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.steps < 1:
            raise AttackError(f"steps must be >= 1, got {self.steps}")
        if self.alpha is None:
            object.__setattr__(self, "alpha", 2.0 * self.epsilon / self.steps)
        if self.alpha < 0 or (self.alpha == 0 and self.epsilon > 0):
            raise AttackError(f"alpha must be positive, got {self.alpha}")
        if self.repetitions < 1:
            raise AttackError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.kind == TARGETED:
            if self.target is None:
                raise AttackError("targeted attack needs a target trajectory")
            object.__setattr__(self, "target", tuple(float(v) for v in np.ravel(self.target)))
        if self.kind == SEMI_TARGETED:
            if self.band is None:
                raise AttackError("semi-targeted attack needs a band (a, b)")
            lo, hi = (np.asarray(v, dtype=np.float64).ravel() for v in self.band)
            if lo.shape != hi.shape or np.any(lo > hi):
                raise AttackError("band lower bound must not exceed upper bound")
            object.__setattr__(self, "band", (tuple(lo.tolist()), tuple(hi.tolist())))
            if self.lam < 0:
                raise AttackError(f"lambda must be non-negative, got {self.lam}")
        if self.input_bounds is not None:
            lo, hi = self.input_bounds
            if lo > hi:
                raise AttackError(f"input bounds inverted: {lo} > {hi}")
        if self.name is None:
            object.__setattr__(self, "name", self.kind)

    def with_epsilon(self, epsilon: float) -> "AttackSpec":
        """Same attack with a new budget; alpha is re-derived as 2*eps/T."""
        return replace(self, epsilon=epsilon, alpha=None)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


@dataclass(frozen=True)
class AttackResult:
    x: np.ndarray
    x_adv: np.ndarray
    epsilon: float
    loss_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    input_bounds: tuple | None = None

    def __post_init__(self):
        excess = float(np.max(np.abs(self.x_adv - self.x), initial=0.0)) - self.epsilon
        AUDIT.record(excess)
        if excess > BUDGET_TOL:
            raise BudgetViolation(f"perturbation exceeds epsilon={self.epsilon} by {excess:.3e}")
        if self.input_bounds is not None:
            lo, hi = effective_bounds(self.x, self.input_bounds)
            if np.any(self.x_adv < lo) or np.any(self.x_adv > hi):
                raise BudgetViolation(f"perturbed input leaves bounds {self.input_bounds}")

    @property
    def delta(self) -> np.ndarray:
        return self.x_adv - self.x


# -- primitives ---------------------------------------------------------------


def clip_linf(x_prop, x, epsilon: float) -> np.ndarray:
    """Clamp ``x_prop`` elementwise into ``[x - eps, x + eps]``."""
    if epsilon <= 0:
        raise AttackError(f"epsilon must be positive, got {epsilon}")
    x_prop, x = np.asarray(x_prop, dtype=np.float64), np.asarray(x, dtype=np.float64)
    if x_prop.shape != x.shape:
        raise AttackError(f"clip_linf: shape {x_prop.shape} != {x.shape}")
    return np.minimum(np.maximum(x_prop, x - epsilon), x + epsilon)


def effective_bounds(x, bounds):
    """Valid-input range widened to contain ``x`` itself.

    A clean input already outside the training range is never pulled further
    than the perturbation moved it, so clipping cannot break the epsilon-ball.
    """
    lo, hi = bounds
    return np.minimum(lo, x), np.maximum(hi, x)


def clip_to_bounds(x_prop, x, bounds):
    lo, hi = effective_bounds(x, bounds)
    return np.minimum(np.maximum(x_prop, lo), hi)


def band_penalty_loss(y_hat, a, b) -> ad.Tensor:
    """Mean squared hinge distance of ``y_hat`` from the band ``[a, b]``.

    Zero iff every step lies inside the band. A batched (B, H) forecast gives
    one penalty per row.
    """
    y_hat = ad.as_tensor(y_hat)
    under = ad.sub(np.asarray(a, dtype=np.float64), y_hat)
    over = ad.sub(y_hat, np.asarray(b, dtype=np.float64))
    hinge = ad.square(ad.mask_select(under, under.data > 0)) + ad.square(ad.mask_select(over, over.data > 0))
    return ad.mean(hinge, axis=-1)


def _per_sample_mse(y_hat: ad.Tensor, y) -> ad.Tensor:
    return ad.mean(ad.square(ad.sub(y_hat, y)), axis=1)


def adversarial_loss(y_hat: ad.Tensor, truth, spec: AttackSpec) -> ad.Tensor:
    """Per-sample (B,) loss the attacker ascends (descends for targeted)."""
    if spec.kind == TARGETED:
        return _per_sample_mse(y_hat, np.broadcast_to(spec.target, y_hat.shape))
    loss = _per_sample_mse(y_hat, truth)
    if spec.kind == SEMI_TARGETED:
        pen = band_penalty_loss(y_hat, *spec.band)
        loss = ad.sub(loss, ad.mul(pen, spec.lam))
    return loss


def _audit_batch(x_adv, x, epsilon):
    """Record every row of a batched attack with the audit; raise on any excess."""
    rows = np.abs(x_adv - x).reshape(len(x), -1)
    excess = np.max(rows, axis=1, initial=0.0) - epsilon
    for e in excess:
        AUDIT.record(float(e))
    if np.any(excess > BUDGET_TOL):
        raise BudgetViolation(f"perturbation exceeds epsilon={epsilon} by {float(excess.max()):.3e}")


def _check_spec_shape(model, spec, horizon):
    if spec.kind == TARGETED and len(spec.target) != horizon:
        raise AttackError(f"target has {len(spec.target)} steps, model forecasts {horizon}")
    if spec.kind == SEMI_TARGETED and len(spec.band[0]) != horizon:
        raise AttackError(f"band has {len(spec.band[0])} steps, model forecasts {horizon}")


# -- batched attacks ----------------------------------------------------------


def pgd_batch(model, history, exo, truth, spec: AttackSpec):
    """PGD on a batch. Returns ``(x_adv, loss_trace)`` with trace shape (T+1, B)."""
    if spec.kind == NOISE:
        raise AttackError("pgd_batch called with a noise spec")
    exo = np.asarray(exo, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    _check_spec_shape(model, spec, truth.shape[1])
    direction = -1.0 if spec.kind == TARGETED else 1.0
    trace = []
    x0 = exo
    x = exo.copy()
    if spec.epsilon == 0:
        loss = adversarial_loss(model.forward(history, x), truth, spec)
        _audit_batch(x, x0, 0.0)
        return x, np.repeat(loss.data[None], spec.steps + 1, axis=0)
    for _ in range(spec.steps):
        with ad.Tape() as tape:
            xw = tape.watch(x)
            per_sample = adversarial_loss(model.forward(history, xw), truth, spec)
            total = ad.sum_(per_sample)
            if total.node is None:
                raise AttackError("model output does not depend on the exogenous input")
            grad = tape.backward(total)[xw.node].data
        trace.append(per_sample.data.copy())
        x = clip_linf(x + direction * spec.alpha * np.sign(grad), x0, spec.epsilon)
        if spec.input_bounds is not None:
            x = clip_to_bounds(x, x0, spec.input_bounds)
    trace.append(adversarial_loss(model.forward(history, x), truth, spec).data.copy())
    _audit_batch(x, x0, spec.epsilon)
    return x, np.stack(trace)


def noise_candidates(exo_row: np.ndarray, spec: AttackSpec, rng: np.random.Generator) -> np.ndarray:
    """``k`` perturbed copies of one input, each draw scaled to L-inf norm epsilon."""
    draws = rng.standard_normal((spec.repetitions,) + exo_row.shape)
    flat = draws.reshape(spec.repetitions, -1)
    peak = np.max(np.abs(flat), axis=1)
    if np.any(peak == 0):
        raise AttackError("degenerate all-zero noise draw cannot be rescaled")
    delta = (flat * (spec.epsilon / peak)[:, None]).reshape(draws.shape)
    cand = exo_row[None] + delta
    if spec.input_bounds is not None:
        cand = clip_to_bounds(cand, exo_row[None], spec.input_bounds)
    return cand


def noise_batch(model, history, exo, truth, spec: AttackSpec, rngs, chunk: int = 256):
    """Best-of-k noise attack per row. Returns ``(x_adv, losses)`` with losses (k, B)."""
    if spec.kind != NOISE:
        raise AttackError("noise_batch needs a noise spec")
    history = np.asarray(history, dtype=np.float64)
    exo = np.asarray(exo, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if len(rngs) != len(exo):
        raise AttackError(f"need one random stream per sample, got {len(rngs)} for {len(exo)}")
    k = spec.repetitions
    cands = np.stack([noise_candidates(exo[i], spec, rngs[i]) for i in range(len(exo))])  # (B, k, ...)
    flat = cands.reshape((-1,) + exo.shape[1:])
    hist = np.repeat(history, k, axis=0)
    tru = np.repeat(truth, k, axis=0)
    losses = np.empty(len(flat))
    for s in range(0, len(flat), chunk):
        y = model.forward(hist[s:s + chunk], flat[s:s + chunk]).data
        losses[s:s + chunk] = np.mean((y - tru[s:s + chunk]) ** 2, axis=1)
    losses = losses.reshape(len(exo), k)
    best = np.argmax(losses, axis=1)
    x_adv = cands[np.arange(len(exo)), best]
    _audit_batch(x_adv, exo, spec.epsilon)
    return x_adv, losses.T


def attack_batch(model, history, exo, truth, spec: AttackSpec, rngs=None):
    """Dispatch to the right batched attack; returns ``(x_adv, trace)``."""
    if spec.kind == NOISE:
        if rngs is None:
            rngs = [np.random.default_rng([0, i]) for i in range(len(exo))]
        return noise_batch(model, history, exo, truth, spec, rngs)
    return pgd_batch(model, history, exo, truth, spec)


# -- single-sample API --------------------------------------------------------


def _single(model, sample: ForecastSample, spec: AttackSpec, kind: str, rng=None) -> AttackResult:
    if spec.kind != kind:
        raise AttackError(f"expected a {kind} spec, got {spec.kind}")
    hist, exo, tru = sample.history[None], sample.exo[None], sample.truth[None]
    if kind == NOISE:
        rng = rng if rng is not None else np.random.default_rng([0, sample.sample_id])
        x_adv, trace = noise_batch(model, hist, exo, tru, spec, [rng])
    else:
        x_adv, trace = pgd_batch(model, hist, exo, tru, spec)
    return AttackResult(sample.exo.copy(), x_adv[0], spec.epsilon, trace[:, 0], spec.input_bounds)


def noise_attack(model, sample: ForecastSample, spec: AttackSpec, rng=None) -> AttackResult:
    return _single(model, sample, spec, NOISE, rng)


def pgd_untargeted(model, sample: ForecastSample, spec: AttackSpec) -> AttackResult:
    return _single(model, sample, spec, UNTARGETED)


def pgd_targeted(model, sample: ForecastSample, spec: AttackSpec) -> AttackResult:
    return _single(model, sample, spec, TARGETED)


def pgd_semi_targeted(model, sample: ForecastSample, spec: AttackSpec) -> AttackResult:
    return _single(model, sample, spec, SEMI_TARGETED)


def run_attack(model, sample: ForecastSample, spec: AttackSpec, rng=None) -> AttackResult:
    return _single(model, sample, spec, spec.kind, rng)
