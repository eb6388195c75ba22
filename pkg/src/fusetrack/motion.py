"""Constant-velocity Kalman filter over ``[x, y, z, yaw, h, w, l, vx, vy, vz]``.

Velocities are in meters per frame. Yaw has no rate term and changes only
through measurement updates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from ._kernels_np import wrap_angle
from .constants import EPS_DIM
from .geometry import Box3D

STATE_DIM = 10
OBS_DIM = 7


@dataclass(frozen=True)
class MotionNoise:
    """Diagonal noise settings. Defaults pin one AB3DMOT-style configuration."""

    p0_observed: float = 10.0
    p0_velocity: float = 1000.0
    q_position: float = 1e-2
    q_velocity: float = 1e-2
    q_other: float = 0.0
    r: tuple = field(default=(1.0,) * OBS_DIM)

    def __post_init__(self):
        r = self.r
        if np.isscalar(r):
            r = (float(r),) * OBS_DIM
        r = tuple(float(v) for v in r)
        if len(r) != OBS_DIM:
            raise ValueError(f"measurement noise needs {OBS_DIM} entries")
        if min(r) <= 0.0:
            raise ValueError("measurement noise variances must be positive")
        object.__setattr__(self, "r", r)
        if min(self.p0_observed, self.p0_velocity, self.q_position, self.q_velocity, self.q_other) < 0:
            raise ValueError("noise variances must be non-negative")

    def p0_diag(self) -> np.ndarray:
        return np.array([self.p0_observed] * OBS_DIM + [self.p0_velocity] * 3)

    def q_diag(self) -> np.ndarray:
        q = np.full(STATE_DIM, self.q_other)
        q[0:3] = self.q_position
        q[7:10] = self.q_velocity
        return q

    def r_diag(self) -> np.ndarray:
        return np.array(self.r)

    def to_dict(self) -> dict:
        return {
            "p0_observed": self.p0_observed,
            "p0_velocity": self.p0_velocity,
            "q_position": self.q_position,
            "q_velocity": self.q_velocity,
            "q_other": self.q_other,
            "r": list(self.r),
        }


@dataclass(frozen=True, eq=False)
class FilterState:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[7:10]


def init_filter(obs: Box3D, noise: MotionNoise = MotionNoise()) -> FilterState:
    mean = np.zeros(STATE_DIM)
    mean[:OBS_DIM] = obs.as_array()
    return FilterState(mean, np.diag(noise.p0_diag()))


def predict(s: FilterState, q_diag) -> FilterState:
    """One constant-velocity step. ``q_diag`` is the process-noise diagonal."""
    mean, cov = kernels.kf_predict(s.mean, s.covariance, np.asarray(q_diag, float))
    return FilterState(mean, cov)


def update(s: FilterState, obs: Box3D, r_diag) -> FilterState:
    """Kalman update with a box observation.

    An observed heading more than 90 degrees off the prediction is flipped
    by pi before computing the innovation.
    """
    mean, cov = kernels.kf_update(s.mean, s.covariance, obs.as_array(), np.asarray(r_diag, float))
    return FilterState(mean, cov)


def state_to_box(s: FilterState) -> tuple[Box3D, bool]:
    """Box from the state mean, plus a flag set when a dimension had to be clamped."""
    x, y, z, yaw, h, w, l = s.mean[:7].tolist()
    if not math.isfinite(x + y + z + yaw + h + w + l):
        raise FloatingPointError("filter state is not finite")
    degenerate = h <= 0.0 or w <= 0.0 or l <= 0.0
    if degenerate:
        h, w, l = (d if d > 0.0 else EPS_DIM for d in (h, w, l))
    return Box3D._unchecked((x, y, z), (h, w, l), wrap_angle(yaw)), degenerate
