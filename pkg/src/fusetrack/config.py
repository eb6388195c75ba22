"""Tracker configuration with per-class thresholds and the published presets."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Mapping

from .association import METRICS
from .constants import CLASSES
from .motion import MotionNoise


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ClassParams:
    theta_fusion: float
    theta_3d: float
    theta_2d: float
    age_max: int
    age_2d: int

    def __post_init__(self):
        if min(self.theta_fusion, self.theta_3d, self.theta_2d) < 0:
            raise ConfigError("thresholds must be non-negative")
        if self.age_max < 1 or self.age_2d < 1:
            raise ConfigError("ages must be at least 1")


KITTI_PARAMS = ClassParams(theta_fusion=0.01, theta_3d=0.01, theta_2d=0.3, age_max=3, age_2d=3)

# Class order: car, pedestrian, bicycle, bus, motorcycle, trailer, truck.
_NUSCENES_THETA_3D = (7.5, 1.8, 4.4, 8.15, 7.5, 4.9, 7.5)
_NUSCENES_AGE_2D = (2, 3, 1, 3, 3, 2, 2)


def _nuscenes_classes() -> dict[str, ClassParams]:
    out = {}
    for cls, t3, a2 in zip(CLASSES, _NUSCENES_THETA_3D, _NUSCENES_AGE_2D):
        out[cls] = ClassParams(
            theta_fusion=0.01 if cls == "trailer" else 0.3,
            theta_3d=t3,
            theta_2d=0.5,
            age_max=3,
            age_2d=a2,
        )
    return out


@dataclass(frozen=True)
class TrackerConfig:
    """All tracker knobs.

    ``classes`` holds per-class parameters; classes without an entry use
    ``default``. ``metric`` selects the first-stage cost and decides how
    ``theta_3d`` is read: a distance upper bound for the distance metrics, an
    overlap lower bound for ``iou_3d``.
    """

    classes: Mapping[str, ClassParams] = field(default_factory=lambda: {c: KITTI_PARAMS for c in ("car", "pedestrian")})
    default: ClassParams = KITTI_PARAMS
    metric: str = "iou_3d"
    noise: MotionNoise = MotionNoise()
    no_2d: bool = False
    preset: str = "kitti"

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}; expected one of {METRICS}")
        unknown = set(self.classes) - set(CLASSES)
        if unknown:
            raise ConfigError(f"unknown classes in config: {sorted(unknown)}")

    def params(self, class_id: str) -> ClassParams:
        return self.classes.get(class_id, self.default)

    @classmethod
    def kitti(cls, **kw) -> "TrackerConfig":
        return cls(**kw)

    @classmethod
    def nuscenes(cls, **kw) -> "TrackerConfig":
        base = dict(
            classes=_nuscenes_classes(),
            default=_nuscenes_classes()["car"],
            metric="scaled_distance",
            preset="nuscenes",
        )
        base.update(kw)
        return cls(**base)

    def with_overrides(self, **kw) -> "TrackerConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict[str, Any]:
        return {
            "preset": self.preset,
            "metric": self.metric,
            "no_2d": self.no_2d,
            "default": asdict(self.default),
            "classes": {c: asdict(p) for c, p in sorted(self.classes.items())},
            "motion": self.noise.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "TrackerConfig":
        """Layer a config document over its preset (``kitti`` unless named)."""
        if not isinstance(doc, Mapping):
            raise ConfigError("config must be a JSON object")
        known = {"preset", "metric", "no_2d", "default", "classes", "motion"}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        preset = doc.get("preset", "kitti")
        if preset == "kitti":
            base = cls.kitti()
        elif preset == "nuscenes":
            base = cls.nuscenes()
        else:
            raise ConfigError(f"unknown preset {preset!r}; expected 'kitti' or 'nuscenes'")
        try:
            default = replace(base.default, **doc.get("default", {}))
            classes = dict(base.classes)
            for c, over in doc.get("classes", {}).items():
                classes[c] = replace(classes.get(c, default), **over)
            noise = replace(base.noise, **doc.get("motion", {}))
            return replace(
                base,
                classes=classes,
                default=default,
                metric=doc.get("metric", base.metric),
                no_2d=bool(doc.get("no_2d", base.no_2d)),
                noise=noise,
            )
        except ConfigError:
            raise
        except (TypeError, ValueError, AttributeError, OverflowError) as e:
            raise ConfigError(f"bad config field: {e}") from None


def load_config(path) -> TrackerConfig:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return TrackerConfig.from_dict(doc)
