"""Shared synthetic geometry builders for the test suite."""

import numpy as np

from skidometry.geometry import Pose, so3_exp


def plane_cloud(rng, n=800, extent=6.0, jitter=0.0):
    """Points on the z=0 plane, centered at the origin."""
    pts = np.zeros((n, 3))
    pts[:, 0] = rng.uniform(-extent, extent, n)
    pts[:, 1] = rng.uniform(-extent, extent, n)
    if jitter:
        pts[:, 2] = rng.normal(0.0, jitter, n)
    return pts


def box_room_cloud(rng, n_per_wall=400, half=4.0, height=2.5, noise=0.0):
    """Points on the four walls and floor of an axis-aligned box room."""
    walls = []
    for axis, sign in ((0, -1), (0, 1), (1, -1), (1, 1)):
        pts = np.zeros((n_per_wall, 3))
        other = 1 - axis
        pts[:, axis] = sign * half
        pts[:, other] = rng.uniform(-half, half, n_per_wall)
        pts[:, 2] = rng.uniform(0.0, height, n_per_wall)
        walls.append(pts)
    floor = np.zeros((n_per_wall, 3))
    floor[:, 0] = rng.uniform(-half, half, n_per_wall)
    floor[:, 1] = rng.uniform(-half, half, n_per_wall)
    walls.append(floor)
    pts = np.vstack(walls)
    if noise:
        pts = pts + rng.normal(0.0, noise, pts.shape)
    return pts


def corridor_cloud(rng, n_per_wall=600, length=12.0, width=2.5, height=2.5,
                   noise=0.0):
    """Two parallel walls plus floor: the classic sliding-degenerate geometry."""
    parts = []
    for y in (0.0, width):
        pts = np.zeros((n_per_wall, 3))
        pts[:, 0] = rng.uniform(-length / 2, length / 2, n_per_wall)
        pts[:, 1] = y
        pts[:, 2] = rng.uniform(0.0, height, n_per_wall)
        parts.append(pts)
    floor = np.zeros((n_per_wall, 3))
    floor[:, 0] = rng.uniform(-length / 2, length / 2, n_per_wall)
    floor[:, 1] = rng.uniform(0.0, width, n_per_wall)
    parts.append(floor)
    pts = np.vstack(parts)
    if noise:
        pts = pts + rng.normal(0.0, noise, pts.shape)
    return pts


def yaw_pose(yaw, x=0.0, y=0.0, z=0.0):
    return Pose(so3_exp(np.array([0.0, 0.0, yaw])), np.array([x, y, z], dtype=float))
