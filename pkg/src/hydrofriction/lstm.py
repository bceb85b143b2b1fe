"""Stacked LSTM sequence regressor in plain numpy.

Weights live in a flat ``dict`` of arrays keyed ``"l{k}.Wx"``, ``"l{k}.Wh"``,
``"l{k}.b"`` (gate blocks ordered input, forget, candidate, output) plus
``"head.w"`` and ``"head.b"`` for the linear read-out of the last hidden state.
Training minimises the mean absolute error with Adam and stops early on a
chronological hold-out split.
"""

from __future__ import annotations

import copy
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InsufficientData, InvalidArgument, NumericFailure

Params = Dict[str, np.ndarray]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class LstmConfig:
    num_layers: int = 3
    hidden_size: Union[int, Tuple[int, ...]] = 64
    dropout: float = 0.3
    learning_rate: float = 1e-3
    window_length: int = 20
    batch_size: int = 64
    max_epochs: int = 40
    patience: int = 5
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.hidden_size, (list, tuple)):
            self.hidden_size = tuple(int(h) for h in self.hidden_size)
            if len(self.hidden_size) != self.num_layers:
                raise InvalidArgument("one hidden size per layer required")
        if self.num_layers < 1 or min(self.hidden_sizes) < 1:
            raise InvalidArgument("need at least one layer with at least one unit")
        if not 0 <= self.dropout < 1:
            raise InvalidArgument("dropout must be in [0, 1)")
        if self.window_length < 2:
            raise InvalidArgument("window_length must be >= 2")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise InvalidArgument("batch_size and max_epochs must be >= 1, patience >= 0")

    @property
    def hidden_sizes(self) -> Tuple[int, ...]:
        if isinstance(self.hidden_size, tuple):
            return self.hidden_size
        return (int(self.hidden_size),) * self.num_layers

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_size"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LstmConfig":
        d = dict(d)
        d["hidden_size"] = tuple(d["hidden_size"]) if isinstance(d["hidden_size"], list) \
            else d["hidden_size"]
        return cls(**d)


def init_weights(n_features: int, config: LstmConfig, rng: np.random.Generator) -> Params:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases except forget gate = 1."""
    params: Params = {}
    d_in = n_features
    for k, h in enumerate(config.hidden_sizes):
        bound = 1.0 / math.sqrt(d_in + h)
        params[f"l{k}.Wx"] = rng.uniform(-bound, bound, (d_in, 4 * h))
        params[f"l{k}.Wh"] = rng.uniform(-bound, bound, (h, 4 * h))
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0
        params[f"l{k}.b"] = b
        d_in = h
    bound = 1.0 / math.sqrt(d_in)
    params["head.w"] = rng.uniform(-bound, bound, d_in)
    params["head.b"] = np.zeros(1)
    return params


def num_layers(params: Params) -> int:
    return sum(1 for k in params if k.endswith(".Wh"))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def forward(windows, params: Params, train: bool = False, dropout: float = 0.0,
            rng: Optional[np.random.Generator] = None, keep_cache: bool = False):
    """Run the stack over ``windows`` of shape (batch, steps, features) or
    (steps, features).

    Returns ``(prediction, hidden)`` where ``hidden`` is the last layer's final
    hidden state; with ``keep_cache`` a third element holds what
    :func:`backward` needs. Dropout (inverted) is applied to the sequences
    passed between stacked layers, in train mode only.
    """
    X = np.asarray(windows, dtype=float)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3:
        raise InvalidArgument(f"windows must be 2-D or 3-D, got shape {X.shape}")
    n_layers = num_layers(params)
    if X.shape[2] != params["l0.Wx"].shape[0]:
        raise InvalidArgument(f"expected {params['l0.Wx'].shape[0]} features, got {X.shape[2]}")
    B, T, _ = X.shape
    inp = X
    caches = []
    for k in range(n_layers):
        Wx, Wh, b = params[f"l{k}.Wx"], params[f"l{k}.Wh"], params[f"l{k}.b"]
        H = Wh.shape[0]
        mask = None
        if train and dropout > 0 and k > 0:
            mask = (rng.random(inp.shape) >= dropout) / (1.0 - dropout)
            inp = inp * mask
        xproj = (inp.reshape(B * T, -1) @ Wx + b).reshape(B, T, 4 * H)
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        hs = np.empty((B, T, H))
        if keep_cache:
            gates = np.empty((B, T, 4 * H))
            cs = np.empty((B, T, H))
            tcs = np.empty((B, T, H))
        for t in range(T):
            z = xproj[:, t] + h @ Wh
            s = _sigmoid(z)
            i, f, o = s[:, :H], s[:, H:2 * H], s[:, 3 * H:]
            g = np.tanh(z[:, 2 * H:3 * H])
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            hs[:, t] = h
            if keep_cache:
                gates[:, t, :H] = i
                gates[:, t, H:2 * H] = f
                gates[:, t, 2 * H:3 * H] = g
                gates[:, t, 3 * H:] = o
                cs[:, t] = c
                tcs[:, t] = tc
        if keep_cache:
            caches.append({"inp": inp, "mask": mask, "gates": gates, "c": cs, "tc": tcs, "h": hs})
        inp = hs
    hidden = inp[:, -1]
    pred = hidden @ params["head.w"] + params["head.b"][0]
    if single:
        pred, hidden = pred[0], hidden[0]
    if keep_cache:
        return pred, hidden, caches
    return pred, hidden


def backward(pred, targets, params: Params, caches) -> Tuple[Params, float]:
    """Backpropagation through time of the batch-mean absolute error.

    Uses the subgradient ``sign(0) = 0``. Returns ``(grads, loss)``.
    """
    y = np.asarray(targets, dtype=float).reshape(-1)
    pred = np.atleast_1d(pred)
    B = len(y)
    resid = pred - y
    loss = float(np.mean(np.abs(resid)))
    dpred = np.sign(resid) / B
    grads: Params = {}
    top = caches[-1]["h"][:, -1]
    grads["head.w"] = top.T @ dpred
    grads["head.b"] = np.array([dpred.sum()])
    n_layers = len(caches)
    dseq = np.zeros_like(caches[-1]["h"])
    dseq[:, -1] = np.outer(dpred, params["head.w"])
    for k in range(n_layers - 1, -1, -1):
        cache = caches[k]
        Wx, Wh = params[f"l{k}.Wx"], params[f"l{k}.Wh"]
        H = Wh.shape[0]
        gates, cs, tcs, hs = cache["gates"], cache["c"], cache["tc"], cache["h"]
        T = hs.shape[1]
        dz_all = np.empty_like(gates)
        dWh = np.zeros_like(Wh)
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            i, f = gates[:, t, :H], gates[:, t, H:2 * H]
            g, o = gates[:, t, 2 * H:3 * H], gates[:, t, 3 * H:]
            tc = tcs[:, t]
            c_prev = cs[:, t - 1] if t > 0 else np.zeros((B, H))
            h_prev = hs[:, t - 1] if t > 0 else np.zeros((B, H))
            dh = dseq[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = dz_all[:, t]
            dz[:, :H] = dc * g * i * (1.0 - i)
            dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
            dz[:, 3 * H:] = do * o * (1.0 - o)
            dc_next = dc * f
            dWh += h_prev.T @ dz
            dh_next = dz @ Wh.T
        inp = cache["inp"]
        flat = dz_all.reshape(B * T, 4 * H)
        grads[f"l{k}.Wx"] = inp.reshape(B * T, -1).T @ flat
        grads[f"l{k}.Wh"] = dWh
        grads[f"l{k}.b"] = flat.sum(axis=0)
        if k > 0:
            dseq = (flat @ Wx.T).reshape(B, T, -1)
            if cache["mask"] is not None:
                dseq = dseq * cache["mask"]
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericFailure(f"non-finite gradient in {name}")
    return grads, loss


def gradient(windows, targets, params: Params, config: Optional[LstmConfig] = None,
             rng: Optional[np.random.Generator] = None) -> Params:
    """Gradient of the batch-mean absolute error with respect to every weight."""
    dropout = config.dropout if config is not None and rng is not None else 0.0
    pred, _, caches = forward(windows, params, train=dropout > 0, dropout=dropout, rng=rng,
                              keep_cache=True)
    grads, _ = backward(pred, targets, params, caches)
    return grads


def adam_init(params: Params) -> dict:
    return {"m": {k: np.zeros_like(v) for k, v in params.items()},
            "v": {k: np.zeros_like(v) for k, v in params.items()}}


def adam_step(params: Params, grads: Params, moments: dict, t: int, learning_rate: float,
              beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPS):
    """Bias-corrected Adam update, in place. Returns ``(params, moments)``."""
    if t < 1:
        raise InvalidArgument("Adam step index starts at 1")
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for k, g in grads.items():
        m = moments["m"][k]
        v = moments["v"][k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        params[k] -= learning_rate * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, moments


def chronological_split(segment_lengths: Sequence[int], val_fraction: float):
    """Index arrays (train, val): the last ``val_fraction`` of each segment
    (in order) is held out."""
    train, val = [], []
    start = 0
    for n in segment_lengths:
        n_val = int(round(n * val_fraction))
        cut = start + n - n_val
        train.append(np.arange(start, cut))
        val.append(np.arange(cut, start + n))
        start += n
    return np.concatenate(train).astype(int), np.concatenate(val).astype(int)


def predict(windows, params: Params, batch: int = 4096):
    """Inference-mode predictions and last hidden states for many windows."""
    X = np.asarray(windows, dtype=float)
    preds, hidden = [], []
    for s in range(0, len(X), batch):
        p, h = forward(X[s:s + batch], params)
        preds.append(p)
        hidden.append(h)
    return np.concatenate(preds), np.concatenate(hidden)


@dataclass
class TrainLog:
    train_mae: List[float] = field(default_factory=list)
    val_mae: List[float] = field(default_factory=list)
    best_epoch: int = -1
    stopping_epoch: int = -1
    wall_time: float = 0.0
    pruned: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_csv(self) -> str:
        lines = ["epoch,train_mae,val_mae"]
        for e, (tr, va) in enumerate(zip(self.train_mae, self.val_mae), start=1):
            lines.append(f"{e},{tr!r},{va!r}")
        return "\n".join(lines) + "\n"


def train(windows, targets, config: LstmConfig, seed: Optional[int] = None,
          segment_lengths: Optional[Sequence[int]] = None,
          epoch_callback: Optional[Callable[[int, float], bool]] = None):
    """Minibatch Adam on MAE with early stopping on a chronological hold-out.

    ``segment_lengths`` splits the windows into independent chronological
    segments (one per recording); each is split train/validation on its own.
    ``epoch_callback(epoch, val_mae)`` may return True to stop training early
    (used for pruning). Returns the weights of the best validation epoch and
    the :class:`TrainLog`.
    """
    X = np.asarray(windows, dtype=float)
    y = np.asarray(targets, dtype=float)
    seed = config.seed if seed is None else seed
    segments = [len(X)] if segment_lengths is None else list(segment_lengths)
    if sum(segments) != len(X):
        raise InvalidArgument("segment lengths do not cover the windows")
    tr_idx, va_idx = chronological_split(segments, config.val_fraction)
    if len(tr_idx) == 0 or len(va_idx) == 0:
        raise InsufficientData(f"train/validation split of {len(X)} windows leaves an empty part")
    rng = np.random.default_rng(seed)
    params = init_weights(X.shape[2], config, rng)
    moments = adam_init(params)
    log = TrainLog()
    best_val = math.inf
    best_params = copy.deepcopy(params)
    wait = 0
    step_no = 0
    t0 = time.perf_counter()
    X_val, y_val = X[va_idx], y[va_idx]
    for epoch in range(1, config.max_epochs + 1):
        order = tr_idx[rng.permutation(len(tr_idx))]
        total = 0.0
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            pred, _, caches = forward(X[idx], params, train=True, dropout=config.dropout,
                                      rng=rng, keep_cache=True)
            grads, loss = backward(pred, y[idx], params, caches)
            step_no += 1
            adam_step(params, grads, moments, step_no, config.learning_rate)
            total += loss * len(idx)
        log.train_mae.append(total / len(order))
        val_pred, _ = predict(X_val, params)
        val = float(np.mean(np.abs(val_pred - y_val)))
        if not math.isfinite(val):
            raise NumericFailure(f"validation loss non-finite at epoch {epoch}")
        log.val_mae.append(val)
        log.stopping_epoch = epoch
        if val < best_val:
            best_val, wait = val, 0
            best_params = copy.deepcopy(params)
            log.best_epoch = epoch
        else:
            wait += 1
        if epoch_callback is not None and epoch_callback(epoch, val):
            log.pruned = True
            break
        if wait > config.patience:
            break
    log.wall_time = time.perf_counter() - t0
    return best_params, log


class FastLstm:
    """Single-window inference with cached per-sample input projections.

    The first layer's input projection of a sample does not depend on where
    the sample sits in the window, so it is computed once per sample and
    kept in a ring buffer; deeper layers are re-run over the window.
    """

    def __init__(self, params: Params):
        self.n_layers = num_layers(params)
        self.layers = [(params[f"l{k}.Wx"], params[f"l{k}.Wh"], params[f"l{k}.b"])
                       for k in range(self.n_layers)]
        self.head_w = params["head.w"]
        self.head_b = float(params["head.b"][0])

    def project_first(self, x_row: np.ndarray) -> np.ndarray:
        Wx, _, b = self.layers[0]
        return x_row @ Wx + b

    def run(self, first_proj: np.ndarray):
        """``first_proj`` is (steps, 4H0). Returns (prediction, hidden)."""
        xproj = first_proj
        h = None
        for k, (Wx, Wh, b) in enumerate(self.layers):
            if k > 0:
                xproj = hs @ Wx + b
            H = Wh.shape[0]
            T = xproj.shape[0]
            h = np.zeros(H)
            c = np.zeros(H)
            hs = np.empty((T, H))
            for t in range(T):
                z = xproj[t] + h @ Wh
                s = 0.5 * (1.0 + np.tanh(0.5 * z))
                c = s[H:2 * H] * c + s[:H] * np.tanh(z[2 * H:3 * H])
                h = s[3 * H:] * np.tanh(c)
                hs[t] = h
        return float(h @ self.head_w + self.head_b), h
