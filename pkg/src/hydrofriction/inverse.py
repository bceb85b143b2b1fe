"""Friction labels from measured motion via the piston equation of motion.

Sliding right::

    m a = p1 A1 - p2 A2 - K_eq x_p - F_f

Sliding left, the same balance is written in a mirrored (leftward positive)
frame, ``m a_L = p2 A2 - p1 A1 - K_eq x_L - F_L``, with ``x_L = -x_p``,
``a_L = -a``, and ``F_L`` the friction magnitude opposing leftward motion.
Labels are returned as signed forces in the common rightward frame
(``F_f = -F_L`` when sliding left), the same convention the LuGre model uses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import EmptyDataset, InvalidArgument, OutOfRange
from .plant import CylinderGeometry, derived_areas
from .signals import Frames

SLIDING_RIGHT = "sliding_right"
SLIDING_LEFT = "sliding_left"
NEAR_ZERO = "near_zero_velocity"
REGIMES = (SLIDING_RIGHT, SLIDING_LEFT, NEAR_ZERO)
# 1.5 velocity quanta: one 12-bit position step (0.2 m / 4096) through the
# 10-sample position filter at 5 ms moves v by about 9.8e-4 m/s, so a sign
# decided by a single quantum is not a direction of motion
DEFAULT_EPS_V = 1.5e-3


@dataclass(frozen=True)
class StiffnessModel:
    """Fluid-column springs ``K_i = beta A_i / L_i``.

    ``spring_term`` switches the ``K_eq x_p`` term of the force balance; turn it
    off for data whose pressures come from a model (or rig) that already
    carries compressibility in the pressure states.
    """

    bulk_modulus: float
    dead_length_1: float
    dead_length_2: float
    stroke: float
    spring_term: bool = True

    @classmethod
    def from_geometry(cls, geom: CylinderGeometry, spring_term: bool = True) -> "StiffnessModel":
        return cls(geom.bulk_modulus, geom.dead_length_1, geom.dead_length_2, geom.stroke,
                   spring_term)

    def lengths(self, x_p):
        return self.dead_length_1 + x_p, self.dead_length_2 + (self.stroke - x_p)


def equivalent_stiffness(geom: CylinderGeometry, stiff: StiffnessModel, x_p):
    """K1 + K2 at position ``x_p`` (scalar or array), N/m."""
    a1, a2 = derived_areas(geom)
    x = np.asarray(x_p, dtype=float)
    l1, l2 = stiff.lengths(x)
    if np.any(l1 <= 0) or np.any(l2 <= 0):
        raise OutOfRange(f"chamber length non-positive for x_p in [{x.min()!r}, {x.max()!r}]")
    k = stiff.bulk_modulus * a1 / l1 + stiff.bulk_modulus * a2 / l2
    return float(k) if np.ndim(k) == 0 else k


class FrictionLabel(NamedTuple):
    t: float
    f: float
    regime: str


def friction_from_motion(frame, geom: CylinderGeometry, stiff: StiffnessModel,
                         eps_v: float = DEFAULT_EPS_V) -> FrictionLabel:
    """Label one frame. ``frame`` needs attributes t, x_p, v, a, p1, p2."""
    t, x, v, a, p1, p2 = (float(getattr(frame, k)) for k in ("t", "x_p", "v", "a", "p1", "p2"))
    if not np.all(np.isfinite([t, x, v, a, p1, p2])):
        raise InvalidArgument("frame contains non-finite values")
    a1, a2 = derived_areas(geom)
    m = geom.moving_mass
    k = equivalent_stiffness(geom, stiff, x) if stiff.spring_term else 0.0
    if v < -eps_v:
        x_l, a_l = -x, -a
        return FrictionLabel(t, -(p2 * a2 - p1 * a1 - k * x_l - m * a_l), SLIDING_LEFT)
    f = p1 * a1 - p2 * a2 - k * x - m * a
    return FrictionLabel(t, f, SLIDING_RIGHT if v > eps_v else NEAR_ZERO)


def label_frames(frames: Frames, geom: CylinderGeometry, stiff: StiffnessModel,
                 eps_v: float = DEFAULT_EPS_V):
    """Vectorised :func:`friction_from_motion`; returns ``(f, regime codes)``
    where codes index :data:`REGIMES`."""
    a1, a2 = derived_areas(geom)
    m = geom.moving_mass
    x, v, a = frames.x_p, frames.v, frames.a
    cols = np.vstack([x, v, a, frames.p1, frames.p2])
    if not np.all(np.isfinite(cols)):
        raise InvalidArgument("frames contain non-finite values")
    k = equivalent_stiffness(geom, stiff, x) if stiff.spring_term else np.zeros_like(x)
    right = frames.p1 * a1 - frames.p2 * a2 - k * x - m * a
    left = -(frames.p2 * a2 - frames.p1 * a1 - k * (-x) - m * (-a))
    f = np.where(v < -eps_v, left, right)
    regime = np.full(len(x), 2, dtype=np.int8)
    regime[v > eps_v] = 0
    regime[v < -eps_v] = 1
    return f, regime


@dataclass
class LabeledDataset:
    """Frames with friction labels; ``mask`` is True for rows usable as
    training targets (not near zero velocity)."""

    frames: Frames
    f: np.ndarray
    regime: np.ndarray
    f_true: Optional[np.ndarray] = None

    @property
    def mask(self) -> np.ndarray:
        return self.regime != 2

    @property
    def excluded(self) -> np.ndarray:
        return np.nonzero(~self.mask)[0]

    @property
    def features(self) -> np.ndarray:
        """Columns [p1, p2, v] in SI units."""
        return np.column_stack([self.frames.p1, self.frames.p2, self.frames.v])

    @property
    def targets(self) -> np.ndarray:
        return self.f

    def __len__(self):
        return len(self.f)

    def slice(self, start: int, stop: int) -> "LabeledDataset":
        ft = None if self.f_true is None else self.f_true[start:stop]
        return LabeledDataset(self.frames.slice(start, stop), self.f[start:stop],
                              self.regime[start:stop], ft)


FEATURE_NAMES = ("p1", "p2", "v")


def label_dataset(frames: Frames, geom: CylinderGeometry, stiff: StiffnessModel,
                  eps_v: float = DEFAULT_EPS_V, f_true=None) -> LabeledDataset:
    if len(frames) == 0:
        raise EmptyDataset("no frames to label")
    f, regime = label_frames(frames, geom, stiff, eps_v)
    ds = LabeledDataset(frames, f, regime, None if f_true is None else np.asarray(f_true, float))
    if not ds.mask.any():
        raise EmptyDataset(f"every row has |v| <= {eps_v} m/s; nothing to label")
    return ds
