"""Active kernel backend.

Callers go through this module's attributes (``kernels.iou2d_matrix(...)``)
so that :func:`use_backend` can swap implementations at runtime. The default
is numba unless ``FUSETRACK_NO_NUMBA`` is set or numba is missing.
"""
import numpy as np

from . import _kernels_np
from ._accel import NUMBA_AVAILABLE, USE_NUMBA

KERNELS = (
    "box_corners",
    "project_corners",
    "iou2d_matrix",
    "scaled_distance_matrix",
    "planar_distance_matrix",
    "iou3d_matrix",
    "greedy_scan",
    "kf_predict",
    "kf_update",
)

backend = None


def get_backend_module(name):
    if name == "numpy":
        return _kernels_np
    if name == "numba":
        if not NUMBA_AVAILABLE:
            raise RuntimeError("numba backend requested but numba is not installed")
        from . import _kernels_nb

        return _kernels_nb
    raise ValueError(f"unknown kernel backend {name!r}")


def use_backend(name):
    """Bind every kernel in this module to the ``name`` backend."""
    global backend
    mod = get_backend_module(name)
    for k in KERNELS:
        globals()[k] = getattr(mod, k)
    backend = name


def warmup():
    """Trigger compilation of every kernel on tiny inputs."""
    box = np.array([[0.0, 0.0, 10.0, 0.1, 1.5, 1.6, 3.9]])
    corners = box_corners(box)
    project_corners(corners, np.eye(3), np.zeros(3), np.eye(3), 100.0, 100.0)
    img = np.array([[0.0, 0.0, 10.0, 10.0]])
    iou2d_matrix(img, img)
    scaled_distance_matrix(box, box)
    planar_distance_matrix(box, box, 0, 2)
    iou3d_matrix(box, box)
    greedy_scan(np.zeros((1, 1)), 1.0, False)
    greedy_scan(np.zeros((1, 1)), -1.0, True)
    mean, cov = kf_predict(np.zeros(10), np.eye(10), np.zeros(10))
    kf_update(mean, cov, np.zeros(7), np.ones(7))


use_backend("numba" if USE_NUMBA else "numpy")
