"""Differentiable wind-power forecasters.

Both models map ``(history, exo)`` to an H-step power forecast. ``exo`` holds
the standardized wind-speed forecasts and is the only input an attacker may
touch; ``history`` is the measured power of the preceding hours.

* :class:`SeriesForecaster` - LSTM encoder over the power history, LSTM decoder
  that steps through the horizon consuming ``[speed_t, power_{t-1}]``.
* :class:`MapForecaster` - small residual CNN applied independently to each
  step's stack of C speed maps.

All forward passes are batched along a leading sample axis.
"""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

WEIGHTS_FORMAT_VERSION = 1


class WeightsFileError(ValueError):
    """Raised for unreadable, corrupt or mismatched weight files."""


@dataclass(frozen=True)
class ForecastSample:
    """One evaluation window.

    history: (L_hist,) measured power, normalized to capacity.
    exo: (H,) standardized speeds, or (H, C, Hm, Wm) stacked map contexts.
    truth: (H,) power over the horizon, in [0, 1].
    """

    history: np.ndarray
    exo: np.ndarray
    truth: np.ndarray
    sample_id: int = 0

    def __post_init__(self):
        for name in ("history", "exo", "truth"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if len(self.exo) != len(self.truth):
            raise ValueError(f"exo covers {len(self.exo)} steps but truth has {len(self.truth)}")

    @property
    def horizon(self) -> int:
        return len(self.truth)

    def with_exo(self, exo) -> "ForecastSample":
        return ForecastSample(self.history, exo, self.truth, self.sample_id)


def stack_samples(samples):
    """Batch arrays ``(history, exo, truth)`` from a list of samples."""
    return (np.stack([s.history for s in samples]),
            np.stack([s.exo for s in samples]),
            np.stack([s.truth for s in samples]))


class ParameterSet(Mapping):
    """Ordered, name-unique collection of parameter arrays with frozen shapes."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        self._arrays = {}
        for name, arr in arrays.items():
            arr = np.array(arr, dtype=np.float64)
            arr.flags.writeable = False
            self._arrays[name] = arr

    def __getitem__(self, name):
        return self._arrays[name]

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self):
        return len(self._arrays)

    @property
    def count(self) -> int:
        return sum(a.size for a in self._arrays.values())

    def shapes(self) -> dict[str, tuple]:
        return {k: a.shape for k, a in self._arrays.items()}

    def replace(self, arrays: Mapping[str, np.ndarray]) -> "ParameterSet":
        """New set with updated values; names and shapes must match exactly."""
        if set(arrays) != set(self._arrays):
            raise KeyError(f"parameter names differ: {sorted(set(arrays) ^ set(self._arrays))}")
        for name, arr in arrays.items():
            if np.shape(arr) != self._arrays[name].shape:
                raise ValueError(f"parameter {name!r}: shape {np.shape(arr)} != {self._arrays[name].shape}")
        return ParameterSet({k: arrays[k] for k in self._arrays})

    def tensors(self) -> dict[str, Tensor]:
        return {k: Tensor(a, _check=False) for k, a in self._arrays.items()}


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# -- LSTM -------------------------------------------------------------------


def lstm_cell_step(x_t, state, w_x, w_h, b):
    """One LSTM step.

    x_t: (B, I); state: (h, c) each (B, U); w_x: (I, 4U); w_h: (U, 4U); b: (4U,).
    Gate order in the packed weights is input, forget, candidate, output.
    """
    h, c = state
    x_t, h, c = ad.as_tensor(x_t), ad.as_tensor(h), ad.as_tensor(c)
    units = h.shape[-1]
    if w_h.shape != (units, 4 * units) or w_x.shape[1] != 4 * units or x_t.shape[-1] != w_x.shape[0]:
        raise ad.ShapeError(
            f"lstm_cell_step: input {x_t.shape}, state {h.shape}, w_x {w_x.shape}, w_h {w_h.shape}")
    z = x_t @ w_x + h @ w_h + b
    i = ad.sigmoid(z[:, :units])
    f = ad.sigmoid(z[:, units:2 * units])
    g = ad.tanh(z[:, 2 * units:3 * units])
    o = ad.sigmoid(z[:, 3 * units:])
    c_new = f * c + i * g
    h_new = o * ad.tanh(c_new)
    return h_new, c_new


class SeriesForecaster:
    kind = "series"

    def __init__(self, hidden: int = 32, history: int = 12, horizon: int = 8, seed: int = 0):
        self.hidden = hidden
        self.history = history
        self.horizon = horizon
        rng = np.random.default_rng(seed)
        u = hidden
        self.params = ParameterSet({
            "encoder.w_x": _uniform(rng, (1, 4 * u), u),
            "encoder.w_h": _uniform(rng, (u, 4 * u), u),
            "encoder.b": _uniform(rng, (4 * u,), u),
            "decoder.w_x": _uniform(rng, (2, 4 * u), u),
            "decoder.w_h": _uniform(rng, (u, 4 * u), u),
            "decoder.b": _uniform(rng, (4 * u,), u),
            "head.w": _uniform(rng, (u, 1), u),
            "head.b": _uniform(rng, (1,), u),
        })

    def config(self) -> dict:
        return {"hidden": self.hidden, "history": self.history, "horizon": self.horizon}

    def encode(self, history, p=None):
        """Final (h, c) of the encoder, each (B, hidden)."""
        p = p or self.params.tensors()
        history = ad.as_tensor(history)
        if history.ndim != 2 or history.shape[1] != self.history:
            raise ad.ShapeError(f"history must be (B, {self.history}), got {history.shape}")
        zeros = np.zeros((history.shape[0], self.hidden))
        state = (Tensor(zeros, _check=False), Tensor(zeros, _check=False))
        for t in range(self.history):
            state = lstm_cell_step(history[:, t:t + 1], state,
                                   p["encoder.w_x"], p["encoder.w_h"], p["encoder.b"])
        return state

    def forward(self, history, exo, p=None) -> Tensor:
        """Batched forecast (B, H) from history (B, L_hist) and speeds (B, H)."""
        p = p or self.params.tensors()
        history, exo = ad.as_tensor(history), ad.as_tensor(exo)
        if exo.ndim != 2 or exo.shape[1] != self.horizon:
            raise ad.ShapeError(f"exo must be (B, {self.horizon}), got {exo.shape}")
        state = self.encode(history, p)
        prev = history[:, self.history - 1:]
        outputs = []
        for t in range(self.horizon):
            inp = ad.concat([exo[:, t:t + 1], prev], axis=1)
            state = lstm_cell_step(inp, state, p["decoder.w_x"], p["decoder.w_h"], p["decoder.b"])
            prev = ad.leaky_relu(state[0] @ p["head.w"] + p["head.b"])
            outputs.append(prev)
        return ad.concat(outputs, axis=1)


# -- residual CNN -------------------------------------------------------------


class MapForecaster:
    kind = "maps"

    def __init__(self, context: int = 5, height: int = 20, width: int = 17, channels: int = 16,
                 blocks: int = 3, horizon: int = 8, history: int = 12, kernel: int = 3, seed: int = 0):
        self.context = context
        self.height = height
        self.width = width
        self.channels = channels
        self.blocks = blocks
        self.horizon = horizon
        self.history = history
        self.kernel = kernel
        rng = np.random.default_rng(seed)
        k = kernel
        arrays = {
            "stem.w": _uniform(rng, (channels, context, k, k), context * k * k),
            "stem.b": _uniform(rng, (channels,), context * k * k),
        }
        fan = channels * k * k
        for r in range(blocks):
            for j in (1, 2):
                arrays[f"block{r}.conv{j}.w"] = _uniform(rng, (channels, channels, k, k), fan)
                arrays[f"block{r}.conv{j}.b"] = _uniform(rng, (channels,), fan)
        arrays["head.w"] = _uniform(rng, (channels, 1), channels)
        arrays["head.b"] = _uniform(rng, (1,), channels)
        self.params = ParameterSet(arrays)

    def config(self) -> dict:
        return {"context": self.context, "height": self.height, "width": self.width,
                "channels": self.channels, "blocks": self.blocks, "horizon": self.horizon,
                "history": self.history, "kernel": self.kernel}

    def estimate(self, maps, p=None) -> Tensor:
        """Power estimate (N,) for N independent map stacks (N, C, Hm, Wm)."""
        p = p or self.params.tensors()
        h = ad.leaky_relu(ad.conv2d(maps, p["stem.w"], p["stem.b"]))
        for r in range(self.blocks):
            z = ad.leaky_relu(ad.conv2d(h, p[f"block{r}.conv1.w"], p[f"block{r}.conv1.b"]))
            z = ad.conv2d(z, p[f"block{r}.conv2.w"], p[f"block{r}.conv2.b"])
            h = ad.leaky_relu(h + z)
        pooled = ad.mean(h, axis=(2, 3))
        return ad.leaky_relu(pooled @ p["head.w"] + p["head.b"]).reshape(-1)

    def forward(self, history, exo, p=None) -> Tensor:
        """Batched forecast (B, H); ``history`` is accepted for interface parity and unused."""
        exo = ad.as_tensor(exo)
        expected = (self.horizon, self.context, self.height, self.width)
        if exo.ndim != 5 or exo.shape[1:] != expected:
            raise ad.ShapeError(f"exo must be (B, {', '.join(map(str, expected))}), got {exo.shape}")
        b = exo.shape[0]
        flat = exo.reshape(b * self.horizon, *expected[1:])
        return self.estimate(flat, p).reshape(b, self.horizon)


MODEL_KINDS = {"series": SeriesForecaster, "maps": MapForecaster}


def build_model(kind: str, **kwargs):
    try:
        return MODEL_KINDS[kind](**kwargs)
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_KINDS)}") from None


def _predict_one(model, sample: ForecastSample) -> np.ndarray:
    y = model.forward(sample.history[None], sample.exo[None])
    return y.data[0].copy()


def predict_series(model: SeriesForecaster, sample: ForecastSample) -> np.ndarray:
    if sample.exo.shape != (model.horizon,):
        raise ad.ShapeError(f"series sample exo must have shape ({model.horizon},), got {sample.exo.shape}")
    return _predict_one(model, sample)


def predict_maps(model: MapForecaster, sample: ForecastSample) -> np.ndarray:
    if sample.exo.ndim != 4 or sample.exo.shape[1] != model.context:
        raise ad.ShapeError(
            f"map sample exo must be (H, {model.context}, Hm, Wm), got {sample.exo.shape}")
    return _predict_one(model, sample)


def predict(model, sample: ForecastSample) -> np.ndarray:
    return predict_series(model, sample) if model.kind == "series" else predict_maps(model, sample)


# -- weight files -------------------------------------------------------------
#
# JSON document:
#   {"format": "advforecast-weights", "version": 1, "kind": "series"|"maps",
#    "config": {...constructor kwargs...},
#    "params": {name: {"shape": [...], "data": [flat row-major floats]}}}
# Floats are written with repr() precision, so a round trip is bit-exact.


def save_weights(model, path) -> Path:
    path = Path(path)
    doc = {
        "format": "advforecast-weights",
        "version": WEIGHTS_FORMAT_VERSION,
        "kind": model.kind,
        "config": model.config(),
        "params": {name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
                   for name, arr in model.params.items()},
    }
    path.write_text(json.dumps(doc))
    return path


def load_weights(path, model=None):
    """Load a weight file.

    Without ``model`` a new model of the recorded kind is built. With ``model``
    the file must match its kind and every parameter shape, and the model's
    parameters are replaced in place.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise WeightsFileError(f"weights file not found: {path}") from None
    except (OSError, json.JSONDecodeError) as err:
        raise WeightsFileError(f"cannot read weights file {path}: {err}") from None
    if doc.get("format") != "advforecast-weights" or doc.get("version") != WEIGHTS_FORMAT_VERSION:
        raise WeightsFileError(
            f"{path}: unsupported weights format {doc.get('format')!r} version {doc.get('version')!r}")
    kind = doc.get("kind")
    if model is None:
        if kind not in MODEL_KINDS:
            raise WeightsFileError(f"{path}: unknown model kind {kind!r}")
        model = build_model(kind, **doc.get("config", {}))
    elif kind != model.kind:
        raise WeightsFileError(f"{path}: file holds {kind!r} weights, model is {model.kind!r}")
    stored = doc.get("params", {})
    arrays = {}
    for name, shape in model.params.shapes().items():
        if name not in stored:
            raise WeightsFileError(f"{path}: parameter {name!r} missing")
        entry = stored[name]
        if tuple(entry.get("shape", ())) != shape:
            raise WeightsFileError(f"{path}: parameter {name!r} has shape {entry.get('shape')}, expected {list(shape)}")
        data = np.asarray(entry.get("data", []), dtype=np.float64)
        if data.size != int(np.prod(shape)):
            raise WeightsFileError(
                f"{path}: parameter {name!r} holds {data.size} values, expected {int(np.prod(shape))}")
        arrays[name] = data.reshape(shape)
    extra = set(stored) - set(arrays)
    if extra:
        raise WeightsFileError(f"{path}: unexpected parameters {sorted(extra)}")
    model.params = model.params.replace(arrays)
    return model
