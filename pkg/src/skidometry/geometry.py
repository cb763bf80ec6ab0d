"""Minimal SO(3)/SE(3) toolbox used by the residuals, the optimizer and the simulator.

Conventions:
    * Rotations are 3x3 orthonormal numpy arrays (det = +1).
    * A 6-vector twist is ordered [rotation (rad), translation (m)].
    * Pose retraction is right-multiplicative: T <- T * se3_exp(delta).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Below this rotation angle the closed forms degenerate to 0/0; switch to
# second-order Taylor expansions.
SMALL_ANGLE = 1e-8

# Re-orthonormalize a rotation after this many compositions to stop
# round-off drift accumulating over long runs.
RENORM_EVERY = 100


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix [v]x such that [v]x w = v x w."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues exponential map from a rotation vector to a rotation matrix."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    W = skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * (W @ W)
    s, c = np.sin(theta), np.cos(theta)
    return np.eye(3) + (s / theta) * W + ((1.0 - c) / theta**2) * (W @ W)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of R. Requires the rotation angle to be below pi."""
    cos_theta = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    theta = np.arccos(cos_theta)
    axial = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < SMALL_ANGLE:
        # log(R) ~ axial part for small angles (second-order accurate)
        return axial * (1.0 + theta**2 / 6.0)
    if theta > np.pi - 1e-6:
        raise ValueError(f"so3_log undefined near pi (angle={theta:.9f})")
    return axial * (theta / np.sin(theta))


def so3_left_jacobian(w: np.ndarray) -> np.ndarray:
    """Left Jacobian J_l of SO(3); maps tangent translations in se3_exp."""
    theta = np.linalg.norm(w)
    W = skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * W + (W @ W) / 6.0
    s, c = np.sin(theta), np.cos(theta)
    return (
        np.eye(3)
        + ((1.0 - c) / theta**2) * W
        + ((theta - s) / theta**3) * (W @ W)
    )


def so3_left_jacobian_inv(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    W = skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * W + (W @ W) / 12.0
    half = 0.5 * theta
    cot_term = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) - 0.5 * W + cot_term * (W @ W)


def so3_right_jacobian(w: np.ndarray) -> np.ndarray:
    """Right Jacobian J_r(w) = J_l(-w)."""
    return so3_left_jacobian(-np.asarray(w, dtype=float))


def so3_right_jacobian_inv(w: np.ndarray) -> np.ndarray:
    return so3_left_jacobian_inv(-np.asarray(w, dtype=float))


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix via polar decomposition (det forced to +1)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.linalg.det(U @ Vt)])
    return U @ D @ Vt


@dataclass
class Pose:
    """Rigid transform on SE(3): x_world = R @ x_local + t."""

    R: np.ndarray
    t: np.ndarray
    # composition count since last re-orthonormalization; bookkeeping only
    gen: int = field(default=0, compare=False)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    @staticmethod
    def from_matrix(T: np.ndarray) -> "Pose":
        return Pose(np.array(T[:3, :3], dtype=float), np.array(T[:3, 3], dtype=float))

    def apply(self, p: np.ndarray) -> np.ndarray:
        """Transform one point or an (N, 3) array of points."""
        p = np.asarray(p, dtype=float)
        return p @ self.R.T + self.t

    def copy(self) -> "Pose":
        return Pose(self.R.copy(), self.t.copy(), self.gen)


def pose_compose(a: Pose, b: Pose) -> Pose:
    R = a.R @ b.R
    t = a.R @ b.t + a.t
    gen = max(a.gen, b.gen) + 1
    if gen >= RENORM_EVERY:
        R = orthonormalize(R)
        gen = 0
    return Pose(R, t, gen)


def pose_inverse(a: Pose) -> Pose:
    Rt = a.R.T
    return Pose(Rt, -(Rt @ a.t), a.gen)


def se3_exp(xi: np.ndarray) -> Pose:
    """Exponential map of a twist [w, v] to a pose (t = J_l(w) v)."""
    xi = np.asarray(xi, dtype=float)
    w, v = xi[:3], xi[3:]
    return Pose(so3_exp(w), so3_left_jacobian(w) @ v)


def se3_log(T: Pose) -> np.ndarray:
    """Inverse of se3_exp. Raises on rotation angles at or beyond pi."""
    w = so3_log(T.R)
    v = so3_left_jacobian_inv(w) @ T.t
    return np.concatenate([w, v])


def se3_adjoint(T: Pose) -> np.ndarray:
    """Adjoint Ad_T mapping twists: exp(Ad_T xi) = T exp(xi) T^-1."""
    Ad = np.zeros((6, 6))
    Ad[:3, :3] = T.R
    Ad[3:, 3:] = T.R
    Ad[3:, :3] = skew(T.t) @ T.R
    return Ad


def se3_ad(xi: np.ndarray) -> np.ndarray:
    """Small adjoint ad_xi of se(3) for the twist [w, v]."""
    w, v = xi[:3], xi[3:]
    ad = np.zeros((6, 6))
    ad[:3, :3] = skew(w)
    ad[3:, 3:] = skew(w)
    ad[3:, :3] = skew(v)
    return ad


def se3_right_jacobian(xi: np.ndarray, terms: int = 30) -> np.ndarray:
    """Right Jacobian of SE(3) via the ad-series; exact to ~1e-15 for |xi| < pi.

    J_r(xi) = sum_k (-ad_xi)^k / (k+1)!
    """
    A = -se3_ad(np.asarray(xi, dtype=float))
    J = np.eye(6)
    term = np.eye(6)
    for k in range(1, terms):
        term = term @ A / (k + 1)
        J = J + term
        if np.max(np.abs(term)) < 1e-18:
            break
    return J


def se3_right_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    return np.linalg.inv(se3_right_jacobian(xi))


def rotation_angle_deg(R: np.ndarray) -> float:
    """Rotation angle of R in degrees (always >= 0)."""
    c = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))
