"""Small dense autoencoder engine: forward, MSE, backprop, Adam, plateau LR schedule.

Everything works on row batches ``X`` of shape ``(B, L)``.  The loss is the
mean over records *and* elements, ``sum((X - Xhat)**2) / (B * L)``, so
magnitudes are comparable across series lengths.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import make_rng, read_spb, write_spb
from .errors import DivergedError, FormatError, IoError, NumericsError, ShapeError, SpecError

log = logging.getLogger(__name__)

ACTIVATIONS = ("linear", "relu", "tanh")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "linear"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.activation not in ACTIVATIONS:
            raise SpecError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"inconsistent layer shapes {self.weights.shape} / {self.bias.shape}")

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


@dataclass
class AutoencoderModel:
    encoder: list[DenseLayer]
    decoder: list[DenseLayer]
    latent_dim: int

    def __post_init__(self):
        if not self.encoder or not self.decoder:
            raise SpecError("encoder and decoder need at least one layer")
        for stack in (self.encoder, self.decoder):
            for a, b in zip(stack, stack[1:]):
                if a.n_out != b.n_in:
                    raise ShapeError("consecutive layer widths do not match")
        if self.encoder[-1].n_out != self.latent_dim or self.decoder[0].n_in != self.latent_dim:
            raise ShapeError("bottleneck width must equal latent_dim")
        if self.encoder[0].n_in != self.decoder[-1].n_out:
            raise ShapeError("encoder input and decoder output widths differ")

    @property
    def input_dim(self) -> int:
        return self.encoder[0].n_in

    @property
    def layers(self) -> list[DenseLayer]:
        return self.encoder + self.decoder

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.bias]
        return out

    def encode(self, x) -> np.ndarray:
        return _run(self.encoder, _as_batch(x, self.input_dim))

    def decode(self, z) -> np.ndarray:
        return _run(self.decoder, _as_batch(z, self.latent_dim))

    def copy(self) -> "AutoencoderModel":
        return copy.deepcopy(self)


def build_autoencoder(input_dim: int, latent_dim: int, hidden=(256, 64),
                      activation: str = "relu", rng=0) -> AutoencoderModel:
    """Dense autoencoder ``[L -> *hidden -> d]`` with a mirrored decoder.

    Hidden layers use ``activation``; the bottleneck and output are linear.
    Weights are drawn from ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``.
    """
    if input_dim < 1 or latent_dim < 1:
        raise SpecError("widths must be positive")
    rng = make_rng(rng)
    hidden = tuple(int(h) for h in hidden)

    def stack(widths):
        layers = []
        for i, (a, b) in enumerate(zip(widths, widths[1:])):
            bound = 1.0 / math.sqrt(a)
            act = activation if i < len(widths) - 2 else "linear"
            layers.append(DenseLayer(rng.uniform(-bound, bound, (b, a)),
                                     rng.uniform(-bound, bound, b), act))
        return layers

    widths = (input_dim, *hidden, latent_dim)
    return AutoencoderModel(stack(widths), stack(widths[::-1]), latent_dim)


def identity_autoencoder(width: int) -> AutoencoderModel:
    """Single linear layer each way with identity weights (``d == L``)."""
    eye = np.eye(width)
    return AutoencoderModel([DenseLayer(eye, np.zeros(width))],
                            [DenseLayer(eye.copy(), np.zeros(width))], width)


# ---------------------------------------------------------------------------
# forward / loss / backward
# ---------------------------------------------------------------------------

def _as_batch(x, width: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"expected vectors of length {width}, got shape {x.shape}")
    return x


def _activate(h, kind):
    if kind == "relu":
        return np.maximum(h, 0.0)
    if kind == "tanh":
        return np.tanh(h)
    return h


def _run(layers, a):
    for layer in layers:
        a = _activate(a @ layer.weights.T + layer.bias, layer.activation)
    return a


def forward(model: AutoencoderModel, x):
    """Return ``(latent, reconstruction)``; 1-D input gives 1-D outputs."""
    single = np.ndim(x) == 1
    z = model.encode(x)
    xhat = model.decode(z)
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(xhat))):
        raise NumericsError("non-finite activation in forward pass")
    if single:
        return z[0], xhat[0]
    return z, xhat


def mse(xs, xhats) -> float:
    """Mean squared error averaged over records and elements."""
    xs = np.asarray(xs, dtype=np.float64)
    xhats = np.asarray(xhats, dtype=np.float64)
    if xs.size == 0:
        raise SpecError("mse of an empty batch")
    if xs.shape != xhats.shape:
        raise ShapeError(f"shape mismatch {xs.shape} vs {xhats.shape}")
    diff = xs - xhats
    return float(np.mean(diff * diff))


def batch_mse(model: AutoencoderModel, x, chunk: int = 4096) -> float:
    x = _as_batch(x, model.input_dim)
    total = 0.0
    for i in range(0, len(x), chunk):
        part = x[i:i + chunk]
        diff = model.decode(model.encode(part)) - part
        total += float(np.sum(diff * diff))
    return total / x.size


def backward(model: AutoencoderModel, batch):
    """Loss and gradients ``[dW0, db0, dW1, db1, ...]`` in :meth:`parameters` order."""
    x = _as_batch(batch, model.input_dim)
    if len(x) == 0:
        raise SpecError("empty batch")
    layers = model.layers
    acts = [x]
    a = x
    for layer in layers:
        a = _activate(a @ layer.weights.T + layer.bias, layer.activation)
        if not np.all(np.isfinite(a)):
            raise NumericsError("non-finite activation in backward pass")
        acts.append(a)
    diff = acts[-1] - x
    loss = float(np.mean(diff * diff))
    delta = 2.0 * diff / diff.size
    grads: list[np.ndarray] = [None] * (2 * len(layers))
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        out = acts[i + 1]
        if layer.activation == "relu":
            delta = delta * (out > 0.0)
        elif layer.activation == "tanh":
            delta = delta * (1.0 - out * out)
        grads[2 * i] = delta.T @ acts[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i:
            delta = delta @ layer.weights
    return loss, grads


# ---------------------------------------------------------------------------
# Adam and plateau scheduling
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]):
    """One bias-corrected Adam update, applied to ``params`` in place.

    ``eps`` is added outside the square root, as in the common framework
    default.
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


@dataclass
class PlateauScheduler:
    """Multiply the LR by ``factor`` after ``patience`` consecutive stalled epochs.

    An epoch stalls when the monitored loss fails to beat the best seen so far
    by more than ``threshold`` (absolute).
    """

    lr: float
    patience: int = 10
    factor: float = 0.5
    min_lr: float = 1e-6
    threshold: float = 1e-5
    best_loss: float = math.inf
    bad_epochs: int = 0

    def __post_init__(self):
        if not 0.0 < self.factor < 1.0:
            raise SpecError("factor must lie in (0, 1)")
        if self.patience < 1:
            raise SpecError("patience must be at least 1")

    def step(self, loss: float) -> float:
        if loss < self.best_loss - self.threshold:
            self.best_loss = loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 150
    lr: float = 5e-4
    batch_size: int = 64
    seed: int = 0
    patience: int = 10
    factor: float = 0.5
    min_lr: float = 1e-6
    threshold: float = 1e-5
    hidden: tuple[int, ...] = (256, 64)
    activation: str = "relu"
    keep_best: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise SpecError("epochs must be >= 1")
        if self.lr < 0:
            raise SpecError("lr must be non-negative")
        if self.batch_size < 1:
            raise SpecError("batch_size must be >= 1")
        self.hidden = tuple(int(h) for h in self.hidden)

    @classmethod
    def from_json(cls, doc: dict | None) -> "TrainConfig":
        doc = dict(doc or {})
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_json(self) -> dict:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out


def train(model: AutoencoderModel, train_series, val_series, cfg: TrainConfig):
    """Train a copy of ``model`` with Adam and a plateau LR schedule.

    Returns ``(trained_model, history)`` where ``history`` holds per-epoch
    ``train_loss``, ``val_loss`` and ``lr`` lists plus ``best_epoch``.  With
    ``cfg.keep_best`` the returned parameters are those of the epoch with the
    lowest validation loss.
    """
    model = model.copy()
    xtr = _as_batch(train_series, model.input_dim)
    xval = None if val_series is None or len(val_series) == 0 else _as_batch(val_series, model.input_dim)
    if len(xtr) == 0:
        raise SpecError("no training series")
    rng = make_rng(cfg.seed)
    params = model.parameters()
    opt = AdamState(lr=cfg.lr)
    sched = PlateauScheduler(cfg.lr, cfg.patience, cfg.factor, cfg.min_lr, cfg.threshold)
    history = {"train_loss": [], "val_loss": [], "lr": [], "best_epoch": -1}
    best = (math.inf, None)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(xtr))
        total = 0.0
        for start in range(0, len(xtr), cfg.batch_size):
            batch = xtr[order[start:start + cfg.batch_size]]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = backward(model, batch)
            if not math.isfinite(loss):
                raise DivergedError(f"training loss became non-finite at epoch {epoch}")
            total += loss * batch.size
            adam_step(opt, params, grads)
        train_loss = total / xtr.size
        val_loss = batch_mse(model, xval) if xval is not None else train_loss
        if not (math.isfinite(val_loss) and math.isfinite(train_loss)):
            raise DivergedError(f"loss became non-finite at epoch {epoch}")
        history["train_loss"].append(train_loss)
        history["val_loss"].append(val_loss)
        history["lr"].append(opt.lr)
        if val_loss < best[0]:
            best = (val_loss, [p.copy() for p in params])
            history["best_epoch"] = epoch
        opt.lr = sched.step(val_loss)
    if cfg.keep_best and best[1] is not None:
        for p, saved in zip(params, best[1]):
            p[...] = saved
    log.debug("trained %d epochs, best val %.3e at epoch %d",
              cfg.epochs, best[0], history["best_epoch"])
    return model, history


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_model(model: AutoencoderModel, out_dir) -> Path:
    """Write ``model.json`` plus one SPB file per weight matrix / bias row."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = {"latent_dim": model.latent_dim, "encoder": [], "decoder": []}
    for part in ("encoder", "decoder"):
        for i, layer in enumerate(getattr(model, part)):
            wname, bname = f"{part}{i}_w.spb", f"{part}{i}_b.spb"
            write_spb(out_dir / wname, layer.weights)
            write_spb(out_dir / bname, layer.bias.reshape(1, -1))
            header[part].append({"in": layer.n_in, "out": layer.n_out,
                                 "activation": layer.activation,
                                 "weights": wname, "bias": bname})
    path = out_dir / "model.json"
    path.write_text(json.dumps(header, indent=2))
    return path


def load_model(model_dir) -> AutoencoderModel:
    model_dir = Path(model_dir)
    try:
        header = json.loads((model_dir / "model.json").read_text())
        parts = {}
        for part in ("encoder", "decoder"):
            layers = []
            for spec in header[part]:
                w = read_spb(model_dir / spec["weights"])
                b = read_spb(model_dir / spec["bias"]).reshape(-1)
                if w.shape != (spec["out"], spec["in"]):
                    raise FormatError(f"{spec['weights']}: shape {w.shape} disagrees with header")
                layers.append(DenseLayer(w, b, spec["activation"]))
            parts[part] = layers
        return AutoencoderModel(parts["encoder"], parts["decoder"], int(header["latent_dim"]))
    except (KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"{model_dir}: malformed checkpoint ({exc})") from exc
    except FileNotFoundError as exc:
        raise IoError(f"{model_dir}: no checkpoint found ({exc.filename})") from exc
