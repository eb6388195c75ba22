"""Frame and box conventions shared by every module.

Tracking frame follows the KITTI camera convention: x right, y down
(vertical), z forward. The ground plane spans x and z.

Box parameter vectors are laid out as ``[x, y, z, yaw, h, w, l]`` where
(x, y, z) is the box center and yaw rotates about the vertical axis. In the
body frame the length runs along x, the height along y and the width along z,
so a box with yaw 0 heads along +x. The heading vector for a given yaw is
``(cos yaw, 0, -sin yaw)``.
"""
import numpy as np

X, Y, Z, YAW, H, W, L = range(7)
BOX_DIM = 7

# Indices of the position+dimension vector used by the scaled distance.
RHO_INDEX = np.array([X, Y, Z, H, W, L])

VERTICAL_AXIS = 1
GROUND_AXES = (0, 2)

# Corner sign table applied to the half extents (l/2, h/2, w/2) in the body
# frame. Corners 0-3 form the bottom face (+y is down), 4-7 the top face, both
# walked in the same order so corner i and i+4 share a vertical edge.
CORNER_SIGNS = np.array(
    [
        [1.0, 1.0, 1.0],
        [1.0, 1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, 1.0, 1.0],
        [1.0, -1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, -1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ]
)

# Projection culls corners closer than this (meters) to the image plane.
EPS_DEPTH = 1e-3
# Filter excursions below this dimension (meters) are clamped.
EPS_DIM = 0.01

CLASSES = ("car", "pedestrian", "bicycle", "bus", "motorcycle", "trailer", "truck")
KITTI_TYPE_NAMES = {
    "car": "Car",
    "pedestrian": "Pedestrian",
    "bicycle": "Cyclist",
    "bus": "Bus",
    "motorcycle": "Motorcycle",
    "trailer": "Trailer",
    "truck": "Truck",
}
