"""LSTM feature extractor feeding a random-forest regressor.

Stage 1 trains the stacked LSTM end-to-end under its own linear head on
standardized ``[p1, p2, v]`` windows. Stage 2 freezes it and fits the forest
on the last layer's final hidden state (or, with ``stage2_input =
"prediction"``, on the head output alone) against the standardized target.
"""

from __future__ import annotations

import copy
import math
import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import lstm
from .errors import InsufficientData, InvalidArgument, OrderingError
from .forest import ForestConfig, RandomForest, fit_forest
from .inverse import LabeledDataset
from .signals import (ACCEL_WINDOW, POSITION_WINDOW, SAMPLE_DT, StandardizationStats,
                      StreamingPreprocessor, apply_standardization, fit_standardization)

FORMAT_VERSION = 1
STAGE2_INPUTS = ("features", "prediction")


@dataclass
class HybridModel:
    feature_stats: StandardizationStats
    target_stats: StandardizationStats
    lstm_config: lstm.LstmConfig
    params: lstm.Params
    forest: RandomForest
    window_length: int
    dt: float = SAMPLE_DT
    position_window: int = POSITION_WINDOW
    accel_window: int = ACCEL_WINDOW
    stage2_input: str = "features"
    format_version: int = FORMAT_VERSION

    @property
    def warmup(self) -> int:
        """Samples consumed before the first estimate."""
        return self.window_length + self.accel_window

    def stage2_inputs(self, pred, hidden):
        if self.stage2_input == "prediction":
            return np.asarray(pred, dtype=float).reshape(-1, 1)
        return hidden

    def destandardize(self, y):
        return y * self.target_stats.std[0] + self.target_stats.mean[0]

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "window_length": self.window_length,
            "dt": self.dt,
            "position_window": self.position_window,
            "accel_window": self.accel_window,
            "stage2_input": self.stage2_input,
            "feature_stats": self.feature_stats.to_dict(),
            "target_stats": self.target_stats.to_dict(),
            "lstm_config": self.lstm_config.to_dict(),
            "weights": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                        for k, v in self.params.items()},
            "forest": self.forest.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HybridModel":
        cfg = lstm.LstmConfig.from_dict(d["lstm_config"])
        params = {}
        for k, w in d["weights"].items():
            arr = np.asarray(w["data"], dtype=float)
            if arr.size != int(np.prod(w["shape"])):
                raise InvalidArgument(f"weight {k} does not match its declared shape")
            params[k] = arr.reshape(w["shape"])
        expected = set(lstm.init_weights(len(d["feature_stats"]["mean"]), cfg,
                                         np.random.default_rng(0)))
        if set(params) != expected:
            raise InvalidArgument("weight set does not match the LSTM configuration")
        if d["window_length"] != cfg.window_length:
            raise InvalidArgument("window_length disagrees with the LSTM configuration")
        if d.get("stage2_input", "features") not in STAGE2_INPUTS:
            raise InvalidArgument(f"stage2_input must be one of {STAGE2_INPUTS}")
        return cls(StandardizationStats.from_dict(d["feature_stats"]),
                   StandardizationStats.from_dict(d["target_stats"]), cfg, params,
                   RandomForest.from_dict(d["forest"]), int(d["window_length"]),
                   float(d["dt"]), int(d["position_window"]), int(d["accel_window"]),
                   d.get("stage2_input", "features"), int(d["format_version"]))


def window_end_indices(n: int, window_length: int, accel_window: int = ACCEL_WINDOW) -> np.ndarray:
    """End index of every full window whose samples all lie past the warm-up."""
    return np.arange(window_length + accel_window, n)


def build_windows(features: np.ndarray, ends: np.ndarray, window_length: int) -> np.ndarray:
    """Copy of ``features[k - W + 1 : k + 1]`` for every ``k`` in ``ends``."""
    if len(ends) == 0:
        return np.empty((0, window_length, features.shape[1]))
    view = sliding_window_view(features, window_length, axis=0)  # (n-W+1, F, W)
    return np.ascontiguousarray(view[np.asarray(ends) - window_length + 1].transpose(0, 2, 1))


@dataclass
class WindowSet:
    windows: np.ndarray
    targets: np.ndarray  # standardized
    segment_lengths: List[int]
    rows: List[np.ndarray]  # per-segment end indices into each dataset


def make_window_set(datasets: Sequence[LabeledDataset], feature_stats, target_stats,
                    window_length: int, stride: int = 1, accel_window: int = ACCEL_WINDOW,
                    ranges: Optional[Sequence[Tuple[int, int]]] = None) -> WindowSet:
    """Windows ending on labelled (sliding) rows of each dataset.

    ``ranges[i] = (start, stop)`` restricts window ends of dataset ``i``;
    ``stride`` keeps every ``stride``-th eligible end.
    """
    wins, tgts, lens, rows = [], [], [], []
    for i, ds in enumerate(datasets):
        z = apply_standardization(ds.features, feature_stats)
        ends = window_end_indices(len(ds), window_length, accel_window)
        if ranges is not None:
            lo, hi = ranges[i]
            ends = ends[(ends >= lo) & (ends < hi)]
        ends = ends[ds.mask[ends]][::stride]
        wins.append(build_windows(z, ends, window_length))
        tgts.append((ds.f[ends] - target_stats.mean[0]) / target_stats.std[0])
        lens.append(len(ends))
        rows.append(ends)
    return WindowSet(np.concatenate(wins), np.concatenate(tgts), lens, rows)


def _fit_stats(datasets, ranges):
    feats, tgts = [], []
    for i, ds in enumerate(datasets):
        lo, hi = (0, len(ds)) if ranges is None else ranges[i]
        m = ds.mask[lo:hi]
        feats.append(ds.features[lo:hi][m])
        tgts.append(ds.f[lo:hi][m])
    if sum(len(t) for t in tgts) == 0:
        raise InsufficientData("no labelled rows to fit standardization")
    fs = fit_standardization(np.concatenate(feats), ["p1", "p2", "v"])
    ts = fit_standardization(np.concatenate(tgts)[:, None], ["f"])
    return fs, ts


def train_hybrid(datasets, lstm_cfg: lstm.LstmConfig, forest_cfg: ForestConfig,
                 seed: Optional[int] = None, stride: int = 1,
                 ranges: Optional[Sequence[Tuple[int, int]]] = None,
                 stage2_input: str = "features", n_jobs: int = 1, epoch_callback=None):
    """Two-stage training on one or more labelled recordings.

    Each recording is its own chronological segment; the last
    ``lstm_cfg.val_fraction`` of its windows is the validation hold-out.
    Returns ``(model, log)``; ``log.extra`` carries the stage-2 train and
    validation MAE in newtons.
    """
    if isinstance(datasets, LabeledDataset):
        datasets = [datasets]
    if stage2_input not in STAGE2_INPUTS:
        raise InvalidArgument(f"stage2_input must be one of {STAGE2_INPUTS}")
    seed = lstm_cfg.seed if seed is None else seed
    fs, ts = _fit_stats(datasets, ranges)
    ws = make_window_set(datasets, fs, ts, lstm_cfg.window_length, stride, ranges=ranges)
    params, log = lstm.train(ws.windows, ws.targets, lstm_cfg, seed=seed,
                             segment_lengths=ws.segment_lengths, epoch_callback=epoch_callback)
    tr_idx, va_idx = lstm.chronological_split(ws.segment_lengths, lstm_cfg.val_fraction)
    if len(tr_idx) == 0:
        raise InsufficientData("empty training split for stage 2")
    model = HybridModel(fs, ts, lstm_cfg, params, None, lstm_cfg.window_length,
                        stage2_input=stage2_input)
    if log.pruned:
        # a pruned search trial never needs its forest
        return model, log
    t0 = time.perf_counter()
    pred, hidden = lstm.predict(ws.windows, params)
    x2 = model.stage2_inputs(pred, hidden)
    model.forest = fit_forest(x2[tr_idx], ws.targets[tr_idx], forest_cfg, seed=seed, n_jobs=n_jobs)
    out = model.forest.predict(x2)
    scale = float(ts.std[0])
    log.extra.update({
        "stage2_train_mae": float(np.mean(np.abs(out[tr_idx] - ws.targets[tr_idx]))) * scale,
        "stage2_val_mae": float(np.mean(np.abs(out[va_idx] - ws.targets[va_idx]))) * scale,
        "head_train_mae": float(np.mean(np.abs(pred[tr_idx] - ws.targets[tr_idx]))) * scale,
        "head_val_mae": float(np.mean(np.abs(pred[va_idx] - ws.targets[va_idx]))) * scale,
        "n_train_windows": int(len(tr_idx)),
        "n_val_windows": int(len(va_idx)),
        "forest_time": time.perf_counter() - t0,
    })
    return model, log


def estimate(model: HybridModel, window) -> float:
    """Friction (N) for one window of ``[p1, p2, v]`` rows in SI units."""
    w = np.asarray(window, dtype=float)
    if w.shape != (model.window_length, len(model.feature_stats.mean)):
        raise InvalidArgument(f"window must be ({model.window_length}, "
                              f"{len(model.feature_stats.mean)}), got {w.shape}")
    pred, hidden = lstm.forward(apply_standardization(w, model.feature_stats), model.params)
    x2 = model.stage2_inputs(pred, hidden[None])[0]
    return float(model.destandardize(model.forest.predict_one(x2)))


def estimate_series(model: HybridModel, features, batch: int = 2048):
    """Batch path over a whole recording of ``[p1, p2, v]`` rows.

    Returns ``(ends, estimates)``: an estimate for every sample index past
    the warm-up, matching what :class:`StreamingEstimator` emits.
    """
    z = apply_standardization(np.asarray(features, dtype=float), model.feature_stats)
    ends = window_end_indices(len(z), model.window_length, model.accel_window)
    out = np.empty(len(ends))
    for s in range(0, len(ends), batch):
        w = build_windows(z, ends[s:s + batch], model.window_length)
        pred, hidden = lstm.forward(w, model.params)
        out[s:s + batch] = model.forest.predict(model.stage2_inputs(pred, hidden))
    return ends, model.destandardize(out)


class StreamingEstimator:
    """Per-sample estimator from raw ``(t, x_p, p1, p2)``.

    Keeps the causal filters and a ring buffer of first-layer input
    projections (written twice so the current window is one contiguous
    slice); per-call work and memory are fixed after warm-up.
    """

    def __init__(self, model: HybridModel):
        self.model = model
        self.pre = StreamingPreprocessor(model.dt, model.position_window, model.accel_window)
        self.net = lstm.FastLstm(model.params)
        self.mean = model.feature_stats.mean
        self.std = model.feature_stats.std
        W = model.window_length
        self._buf = np.zeros((2 * W, model.params["l0.Wx"].shape[1]))
        self._pos = 0
        self.n_samples = 0
        self._t_mean = float(model.target_stats.mean[0])
        self._t_std = float(model.target_stats.std[0])
        self._by_pred = model.stage2_input == "prediction"

    def push(self, t: float, x_p: float, p1: float, p2: float) -> Optional[float]:
        frame = self.pre.push(t, x_p, p1, p2)
        self.n_samples += 1
        if frame is None:
            return None
        W = self.model.window_length
        row = (np.array([frame[3], frame[4], frame[1]]) - self.mean) / self.std
        proj = self.net.project_first(row)
        i = self._pos
        self._buf[i] = proj
        self._buf[i + W] = proj
        self._pos = (i + 1) % W
        if self.n_samples <= self.model.warmup:
            return None
        pred, hidden = self.net.run(self._buf[self._pos:self._pos + W])
        y = self.model.forest.predict_one([pred] if self._by_pred else hidden)
        return y * self._t_std + self._t_mean


def estimate_stream(model: HybridModel, state: Optional[StreamingEstimator], sample):
    """Functional wrapper: returns ``(state, estimate or None)``."""
    if state is None:
        state = StreamingEstimator(model)
    return state, state.push(*sample)


# ---------------------------------------------------------------- search

@dataclass
class HpoSpace:
    num_layers: Tuple[int, ...] = (3, 4, 5)
    hidden_size: Tuple[int, ...] = (16, 32, 64)
    dropout: Tuple[float, float] = (0.1, 0.5)
    learning_rate: Tuple[float, float] = (1e-5, 1e-3)
    n_estimators: Tuple[int, int] = (32, 100)
    max_depth: Tuple[int, int] = (10, 50)

    def sample(self, rng: np.random.Generator) -> dict:
        lo, hi = self.learning_rate
        return {
            "num_layers": int(self.num_layers[rng.integers(len(self.num_layers))]),
            "hidden_size": int(self.hidden_size[rng.integers(len(self.hidden_size))]),
            "dropout": float(rng.uniform(*self.dropout)),
            "learning_rate": float(math.exp(rng.uniform(math.log(lo), math.log(hi)))),
            "n_estimators": int(rng.integers(self.n_estimators[0], self.n_estimators[1] + 1)),
            "max_depth": int(rng.integers(self.max_depth[0], self.max_depth[1] + 1)),
        }

    def contains(self, p: dict) -> bool:
        return (p["num_layers"] in self.num_layers and p["hidden_size"] in self.hidden_size
                and self.dropout[0] <= p["dropout"] <= self.dropout[1]
                and self.learning_rate[0] <= p["learning_rate"] <= self.learning_rate[1]
                and self.n_estimators[0] <= p["n_estimators"] <= self.n_estimators[1]
                and self.max_depth[0] <= p["max_depth"] <= self.max_depth[1])


@dataclass
class HpoTrial:
    trial: int
    params: dict
    val_mae: float
    status: str  # "completed" or "pruned"
    epochs: int
    intermediate: List[float] = field(default_factory=list)


PARAM_ORDER = ("num_layers", "hidden_size", "dropout", "learning_rate", "n_estimators",
               "max_depth")


def trials_to_csv(trials: Sequence[HpoTrial]) -> str:
    lines = ["trial," + ",".join(PARAM_ORDER) + ",epochs,val_mae,status"]
    for tr in trials:
        vals = ",".join(repr(tr.params[k]) for k in PARAM_ORDER)
        lines.append(f"{tr.trial},{vals},{tr.epochs},{tr.val_mae!r},{tr.status}")
    return "\n".join(lines) + "\n"


def configs_from_trial(params: dict, base: lstm.LstmConfig, base_forest: ForestConfig,
                       max_epochs: Optional[int] = None):
    d = base.to_dict()
    d.update(num_layers=params["num_layers"], hidden_size=params["hidden_size"],
             dropout=params["dropout"], learning_rate=params["learning_rate"])
    if max_epochs is not None:
        d["max_epochs"] = max_epochs
    fd = base_forest.to_dict()
    fd.update(n_estimators=params["n_estimators"], max_depth=params["max_depth"])
    return lstm.LstmConfig.from_dict(d), ForestConfig(**fd)


class MedianPruner:
    """Stop a trial when its best validation MAE so far is worse than the
    median of earlier trials' best-so-far at the same epoch (after
    ``warmup_epochs`` and once ``startup_trials`` trials have finished)."""

    def __init__(self, warmup_epochs: int = 5, startup_trials: int = 5):
        self.warmup_epochs = warmup_epochs
        self.startup_trials = startup_trials
        self.history: List[List[float]] = []

    def should_prune(self, epoch: int, value: float) -> bool:
        if epoch <= self.warmup_epochs or len(self.history) < self.startup_trials:
            return False
        # best-so-far curves, so early-stopped trials still count
        at = [min(h[:epoch]) for h in self.history if len(h) >= 1]
        return value > float(np.median(at))


def hpo_search(datasets, budget: int, seed: int = 0, space: Optional[HpoSpace] = None,
               base_lstm: Optional[lstm.LstmConfig] = None,
               base_forest: Optional[ForestConfig] = None, trial_epochs: int = 30,
               pruner: Optional[MedianPruner] = None, stride: int = 1, ranges=None):
    """Seeded random search; trial ``i`` samples from ``default_rng([seed, i])``
    so a longer search extends a shorter one. Every trial trains with the
    same ``seed`` (identical configs score identically), runs the LSTM for at
    most ``trial_epochs`` and scores the full hybrid's validation MAE (N).

    Returns ``(best_params, trials)``; the best is the lowest validation MAE
    among completed trials, earliest index on ties.
    """
    if budget < 1:
        raise InvalidArgument("budget must be >= 1")
    space = space or HpoSpace()
    base_lstm = base_lstm or lstm.LstmConfig()
    base_forest = base_forest or ForestConfig()
    pruner = pruner or MedianPruner()
    trials: List[HpoTrial] = []
    for i in range(budget):
        rng = np.random.default_rng([seed, i])
        p = space.sample(rng)
        lcfg, fcfg = configs_from_trial(p, base_lstm, base_forest, trial_epochs)
        curve: List[float] = []

        def callback(epoch, val, _curve=curve):
            _curve.append(val)
            return pruner.should_prune(epoch, min(_curve))

        model, log = train_hybrid(datasets, lcfg, fcfg, seed=seed, stride=stride,
                                  ranges=ranges, epoch_callback=callback)
        if log.pruned:
            trials.append(HpoTrial(i, p, float(min(curve) * model.target_stats.std[0]),
                                   "pruned", len(curve), curve))
        else:
            trials.append(HpoTrial(i, p, float(log.extra["stage2_val_mae"]), "completed",
                                   len(curve), curve))
        pruner.history.append(curve)
    done = [t for t in trials if t.status == "completed"]
    best = min(done, key=lambda t: (t.val_mae, t.trial)) if done else \
        min(trials, key=lambda t: (t.val_mae, t.trial))
    return copy.deepcopy(best.params), trials
