"""File formats: CSV datasets, JSON models and reports, INI configs.

Numbers are written with ``repr`` (shortest round-trip form), so every format
reads back bit-exactly. Text is UTF-8 with LF line endings.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .errors import DataError, InvalidArgument, OrderingError, RateError, UnsupportedVersion
from .inverse import REGIMES, LabeledDataset
from .lugre import LuGreParams
from .plant import CylinderGeometry, NoiseConfig, ScenarioConfig
from .signals import DT_TOLERANCE, Frames, TimeSeries

DATASET_HEADER = ("t", "x_p", "p1", "p2")
FRAMES_HEADER = ("t", "x_p", "v", "a", "p1", "p2")
LABELED_HEADER = ("t", "x_p", "p1", "p2", "v", "a", "f", "regime")
MODEL_FORMAT_VERSION = 1
SUPPORTED_MODEL_VERSIONS = (MODEL_FORMAT_VERSION,)
MODEL_KINDS = ("hybrid", "lugre")


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_text(path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _format_rows(columns: Sequence[np.ndarray]) -> str:
    lists = [c.tolist() for c in columns]
    return "".join(",".join(map(repr, row)) + "\n" for row in zip(*lists))


def _read_table(path, headers: Sequence[Tuple[str, ...]], text_cols=()):
    """Parse a CSV file whose header is one of ``headers``.

    Returns (header, columns dict). Errors name the offending line (1-based,
    header is line 1).
    """
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            lines = fh.read().split("\n")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not UTF-8 text ({exc})") from None
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DataError(f"{path}: empty file")
    header = tuple(lines[0].rstrip("\r").split(","))
    if header not in headers:
        expected = " or ".join(",".join(h) for h in headers)
        raise DataError(f"{path}: header {lines[0]!r} does not match expected {expected}")
    text_idx = {header.index(c) for c in text_cols if c in header}
    cols = [[] for _ in header]
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.rstrip("\r").split(",")
        if len(parts) != len(header):
            raise DataError(f"{path}: line {lineno}: expected {len(header)} fields, "
                            f"got {len(parts)}")
        for j, part in enumerate(parts):
            if j in text_idx:
                cols[j].append(part)
                continue
            try:
                val = float(part)
            except ValueError:
                raise DataError(f"{path}: line {lineno}: cannot parse {part!r} as a number") \
                    from None
            if not np.isfinite(val):
                raise DataError(f"{path}: line {lineno}: non-finite value {part!r}")
            cols[j].append(val)
    out = {}
    for j, name in enumerate(header):
        out[name] = cols[j] if j in text_idx else np.array(cols[j], dtype=float)
    return header, out


def _check_time(path, t: np.ndarray, tol: float = DT_TOLERANCE):
    if len(t) < 2:
        return
    d = np.diff(t)
    bad = np.nonzero(d <= 0)[0]
    if len(bad):
        i = int(bad[0]) + 1
        raise OrderingError(f"{path}: line {i + 2}: timestamp {float(t[i])!r} is not after "
                            f"{float(t[i - 1])!r}")
    dt = float(np.median(d))
    off = np.nonzero(np.abs(d - dt) > tol + 1e-9 * abs(dt))[0]
    if len(off):
        i = int(off[0]) + 1
        raise RateError(f"{path}: line {i + 2}: sample step {float(d[i - 1])!r} deviates from "
                        f"the median step {dt!r}")


def write_dataset(series: TimeSeries, path):
    header = list(DATASET_HEADER)
    cols = [series.t, series.x_p, series.p1, series.p2]
    if series.f_true is not None:
        header.append("f_true")
        cols.append(series.f_true)
    _write_text(path, ",".join(header) + "\n" + _format_rows(cols))


def read_dataset(path) -> TimeSeries:
    _, c = _read_table(path, [DATASET_HEADER, DATASET_HEADER + ("f_true",)])
    _check_time(path, c["t"])
    return TimeSeries(c["t"], c["x_p"], c["p1"], c["p2"], c.get("f_true"))


def write_frames(frames: Frames, path, f_true=None):
    header = list(FRAMES_HEADER)
    cols = [getattr(frames, k) for k in FRAMES_HEADER]
    if f_true is not None:
        header.append("f_true")
        cols.append(np.asarray(f_true, dtype=float))
    _write_text(path, ",".join(header) + "\n" + _format_rows(cols))


def read_frames(path):
    """Returns ``(frames, f_true or None)``."""
    _, c = _read_table(path, [FRAMES_HEADER, FRAMES_HEADER + ("f_true",)])
    _check_time(path, c["t"])
    return Frames(*(c[k] for k in FRAMES_HEADER)), c.get("f_true")


def write_labeled(ds: LabeledDataset, path):
    fr = ds.frames
    header = list(LABELED_HEADER)
    lists = [fr.t, fr.x_p, fr.p1, fr.p2, fr.v, fr.a, ds.f]
    rows = [c.tolist() for c in lists]
    names = [REGIMES[int(r)] for r in ds.regime]
    extra = []
    if ds.f_true is not None:
        header.append("f_true")
        extra = [ds.f_true.tolist()]
    body = []
    for i in range(len(ds)):
        vals = [repr(col[i]) for col in rows] + [names[i]] + [repr(col[i]) for col in extra]
        body.append(",".join(vals) + "\n")
    _write_text(path, ",".join(header) + "\n" + "".join(body))


def read_labeled(path) -> LabeledDataset:
    _, c = _read_table(path, [LABELED_HEADER, LABELED_HEADER + ("f_true",)],
                       text_cols=("regime",))
    _check_time(path, c["t"])
    codes = []
    for i, name in enumerate(c["regime"]):
        if name not in REGIMES:
            raise DataError(f"{path}: line {i + 2}: unknown regime {name!r}")
        codes.append(REGIMES.index(name))
    frames = Frames(c["t"], c["x_p"], c["v"], c["a"], c["p1"], c["p2"])
    return LabeledDataset(frames, c["f"], np.array(codes, dtype=np.int8), c.get("f_true"))


def write_estimates(path, t, f_hat, f_label=None):
    header = "t,f_hat" + (",f" if f_label is not None else "")
    cols = [np.asarray(t, float), np.asarray(f_hat, float)]
    if f_label is not None:
        cols.append(np.asarray(f_label, float))
    _write_text(path, header + "\n" + _format_rows(cols))


# ------------------------------------------------------------------ JSON

def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n"


def save_model(model, path, provenance: Optional[dict] = None, extra: Optional[dict] = None):
    """Write a hybrid model or LuGre parameter set as versioned JSON."""
    from .hybrid import HybridModel

    if isinstance(model, HybridModel):
        kind, payload = "hybrid", model.to_dict()
    elif isinstance(model, LuGreParams):
        kind, payload = "lugre", {"params": model.to_dict()}
    else:
        raise InvalidArgument(f"cannot serialize {type(model).__name__}")
    if extra:
        payload.update(extra)
    doc = {"kind": kind, "format_version": MODEL_FORMAT_VERSION,
           "provenance": dict(provenance or {}, toolkit_version=__version__),
           "payload": payload}
    _write_text(path, dumps(doc))


def load_model(path):
    """Returns ``(kind, model, document)``; nothing is returned on any error."""
    from .hybrid import HybridModel

    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: not a valid model file ({exc})") from None
    if not isinstance(doc, dict) or "format_version" not in doc or "kind" not in doc:
        raise DataError(f"{path}: missing kind/format_version")
    if doc["format_version"] not in SUPPORTED_MODEL_VERSIONS:
        raise UnsupportedVersion(f"{path}: format_version {doc['format_version']!r} is not "
                                 f"supported (supported: {list(SUPPORTED_MODEL_VERSIONS)})")
    kind = doc["kind"]
    if kind not in MODEL_KINDS:
        raise DataError(f"{path}: unknown model kind {kind!r}")
    try:
        payload = doc["payload"]
        if kind == "hybrid":
            model = HybridModel.from_dict(payload)
        else:
            model = LuGreParams.from_dict(payload["params"])
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed {kind} payload ({type(exc).__name__}: {exc})") \
            from None
    return kind, model, doc


def save_report(report: dict, path):
    _write_text(path, dumps(report))


# --------------------------------------------------------------- configs

def _coerce(raw: str, like):
    if isinstance(like, bool):
        if raw.strip().lower() in ("1", "true", "yes", "on"):
            return True
        if raw.strip().lower() in ("0", "false", "no", "off"):
            return False
        raise DataError(f"not a boolean: {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, tuple):
        return tuple(float(x) for x in raw.split(","))
    return float(raw)


def _section_into(parser, section, cls, defaults):
    if not parser.has_section(section):
        return cls(**defaults) if defaults else cls()
    fields = {f.name: f for f in dataclasses.fields(cls)}
    proto = cls()
    values = dict(defaults)
    for key, raw in parser.items(section):
        if key not in fields:
            raise DataError(f"[{section}] unknown key {key!r}")
        like = getattr(proto, key)
        try:
            values[key] = None if raw.strip().lower() == "none" else \
                _coerce(raw, like if like is not None else 0.0)
        except ValueError:
            raise DataError(f"[{section}] {key}: cannot parse {raw!r}") from None
    return cls(**values)


def _parser(path):
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise DataError(f"{path}: {exc}") from None
    return parser


def read_scenario_config(path) -> Tuple[ScenarioConfig, CylinderGeometry]:
    """``[scenario]``, optional ``[noise]`` and ``[geometry]`` sections."""
    parser = _parser(path)
    noise = _section_into(parser, "noise", NoiseConfig, {})
    cfg = _section_into(parser, "scenario", ScenarioConfig, {"noise": noise})
    geom = _section_into(parser, "geometry", CylinderGeometry, {})
    return cfg, geom


def read_geometry_config(path):
    """``[geometry]`` plus ``[labeling]`` with ``spring_term`` and ``eps_v``.

    Returns ``(geometry, spring_term, eps_v)``.
    """
    from .inverse import DEFAULT_EPS_V

    parser = _parser(path)
    geom = _section_into(parser, "geometry", CylinderGeometry, {})
    spring, eps_v = True, DEFAULT_EPS_V
    if parser.has_section("labeling"):
        sec = parser["labeling"]
        unknown = set(sec) - {"spring_term", "eps_v"}
        if unknown:
            raise DataError(f"[labeling] unknown keys {sorted(unknown)}")
        try:
            spring = sec.getboolean("spring_term", fallback=True)
            eps_v = sec.getfloat("eps_v", fallback=DEFAULT_EPS_V)
        except ValueError as exc:
            raise DataError(f"[labeling] {exc}") from None
    return geom, spring, eps_v


def write_geometry_config(path, geom: CylinderGeometry, spring_term: bool = True,
                          eps_v: Optional[float] = None):
    from .inverse import DEFAULT_EPS_V

    parser = configparser.ConfigParser()
    parser["geometry"] = {k: repr(v) for k, v in dataclasses.asdict(geom).items()}
    parser["labeling"] = {"spring_term": str(spring_term).lower(),
                          "eps_v": repr(DEFAULT_EPS_V if eps_v is None else eps_v)}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        parser.write(fh)


def write_scenario_config(path, cfg: ScenarioConfig, geom: Optional[CylinderGeometry] = None):
    parser = configparser.ConfigParser()
    d = dataclasses.asdict(cfg)
    noise = d.pop("noise")
    parser["scenario"] = {k: (",".join(map(repr, v)) if isinstance(v, tuple) else
                              str(v).lower() if isinstance(v, bool) else repr(v))
                          for k, v in d.items()}
    parser["noise"] = {k: str(v).lower() if isinstance(v, bool) else repr(v)
                       for k, v in noise.items()}
    if geom is not None:
        parser["geometry"] = {k: repr(v) for k, v in dataclasses.asdict(geom).items()}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        parser.write(fh)
