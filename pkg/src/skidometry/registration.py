"""Voxelized distribution-to-distribution scan matching and degeneracy analysis.

Per-point Gaussians come from k-nearest-neighbor covariances with plane-friendly
eigenvalue flooring. The target side is voxelized (arithmetic mean of member
means/covariances per cell) and looked up by spatial hash. Matching minimizes
the summed Mahalanobis distance with Gauss-Newton + Levenberg damping.

Twist order everywhere is [rotation, translation]; pose perturbations are
right-multiplicative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose, pose_compose, se3_exp, skew

# Scans with fewer points than this are treated as absent (no matching).
MIN_SCAN_POINTS = 100

# Plane-friendly regularization: eigenvalues are normalized to the largest
# one and floored, so every point carries the same unit-scale ellipsoid with
# anisotropy capped at 1:1000. Keeps D2D denominators invertible and makes
# the degeneracy spectrum scale-free.
COV_EIG_FLOOR = 1e-3

# Default minimum-eigenvalue threshold of the unit-scaled matching Hessian
# below which a scan pairing counts as degenerate (tuned on the simulator).
DEFAULT_DEGENERACY_THRESHOLD = 2000.0

_HASH_OFFSET = np.int64(1) << 20
_HASH_MASK = (np.int64(1) << 21) - 1


@dataclass
class ScanFrame:
    """One timestamped LiDAR sweep in the sensor frame."""

    t: float
    points: np.ndarray  # (N, 3)

    @property
    def absent(self) -> bool:
        return len(self.points) < MIN_SCAN_POINTS


@dataclass
class GaussianPoint:
    mu: np.ndarray
    C: np.ndarray


@dataclass
class GaussianCloud:
    """Array-of-Gaussians form of a scan: means (N,3) and covariances (N,3,3)."""

    mus: np.ndarray
    covs: np.ndarray

    def __len__(self) -> int:
        return len(self.mus)

    def point(self, i: int) -> GaussianPoint:
        return GaussianPoint(self.mus[i], self.covs[i])


@dataclass
class VoxelMap:
    voxel_size: float
    keys: np.ndarray    # sorted packed cell keys (M,)
    mus: np.ndarray     # (M, 3)
    covs: np.ndarray    # (M, 3, 3)
    counts: np.ndarray  # (M,)

    def __len__(self) -> int:
        return len(self.keys)

    def lookup(self, points: np.ndarray) -> np.ndarray:
        """Map points to voxel row indices; -1 where the cell is unoccupied."""
        q = _pack_cells(np.floor(points / self.voxel_size).astype(np.int64))
        pos = np.searchsorted(self.keys, q)
        pos = np.clip(pos, 0, len(self.keys) - 1)
        hit = self.keys[pos] == q
        if len(self.keys) == 0:
            return np.full(len(points), -1)
        return np.where(hit, pos, -1)


@dataclass
class MatchResult:
    cost: float
    gradient: np.ndarray      # (6,)
    hessian: np.ndarray       # (6, 6) Gauss-Newton approximation
    inliers: int
    converged: bool = True
    iterations: int = 0
    # (cost before step, cost after accepted step) per iteration, both
    # evaluated on that iteration's correspondence set; acceptance guarantees
    # after <= before
    cost_trace: list = field(default_factory=list)


class RegistrationError(RuntimeError):
    pass


def _pack_cells(cells: np.ndarray) -> np.ndarray:
    c = cells + _HASH_OFFSET
    if np.any((c < 0) | (c > _HASH_MASK)):
        raise ValueError("point outside hashable voxel range")
    return (c[..., 0] << 42) | (c[..., 1] << 21) | c[..., 2]


def estimate_point_covariances(scan: ScanFrame, k: int = 20) -> GaussianCloud:
    """Per-point covariance from the k nearest neighbors, eigenvalue-floored.

    The covariance shape comes from the neighborhood; its eigenvalues are
    normalized to the largest and floored at 1e-3 (plane-friendly).
    """
    pts = np.asarray(scan.points, dtype=float)
    if k < 4:
        raise ValueError("k must be >= 4")
    if len(pts) < k:
        raise ValueError(f"scan has {len(pts)} points, need at least {k}")
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k)
    nb = pts[idx]                              # (N, k, 3)
    mean = nb.mean(axis=1)
    centered = nb - mean[:, None, :]
    covs = np.einsum("nki,nkj->nij", centered, centered) / k
    lam, vec = np.linalg.eigh(covs)
    lam = lam / np.maximum(lam[:, -1:], 1e-12)
    lam = np.clip(lam, COV_EIG_FLOOR, 1.0)
    covs = np.einsum("nij,nj,nkj->nik", vec, lam, vec)
    return GaussianCloud(pts.copy(), covs)


def build_voxel_map(cloud: GaussianCloud, voxel_size: float) -> VoxelMap:
    """Aggregate per-point Gaussians into voxels (mean of means and covariances)."""
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    cells = np.floor(cloud.mus / voxel_size).astype(np.int64)
    keys = _pack_cells(cells)
    uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    mus = np.zeros((len(uniq), 3))
    covs = np.zeros((len(uniq), 3, 3))
    np.add.at(mus, inverse, cloud.mus)
    np.add.at(covs, inverse, cloud.covs)
    mus /= counts[:, None]
    covs /= counts[:, None, None]
    return VoxelMap(voxel_size, uniq, mus, covs, counts)


def _accumulate(source: GaussianCloud, target: VoxelMap, T: Pose,
                pair_idx: np.ndarray | None = None,
                exact_gradient: bool = False):
    """Cost, gradient, GN Hessian and inlier count of the D2D sum at T.

    pair_idx pins correspondences (source row -> voxel row, -1 to skip);
    otherwise each transformed source point is matched to its containing voxel.

    By default the combined covariance is treated as fixed at T when
    differentiating (the usual GICP reweighted-least-squares linearization).
    exact_gradient adds the covariance-rotation term so the gradient is the
    true derivative of the evaluated cost.
    """
    R, t = T.R, T.t
    q = source.mus @ R.T + t
    idx = target.lookup(q) if pair_idx is None else pair_idx
    valid = idx >= 0
    n_in = int(valid.sum())
    if n_in == 0:
        return 0.0, np.zeros(6), np.zeros((6, 6)), 0
    mu = source.mus[valid]
    C = source.covs[valid]
    mu_t = target.mus[idx[valid]]
    C_t = target.covs[idx[valid]]
    RC = np.einsum("ab,nbc->nac", R, C)
    M = C_t + np.einsum("nab,cb->nac", RC, R)
    Minv = np.linalg.inv(M)
    d = mu_t - q[valid]
    u = np.einsum("nab,nb->na", Minv, d)
    cost = float(np.einsum("na,na->", d, u))
    a = u @ R                                   # R^T u per point
    grad = np.zeros(6)
    grad[:3] = -2.0 * np.cross(mu, a).sum(axis=0)
    if exact_gradient:
        Ca = np.einsum("nab,nb->na", C, a)
        grad[:3] -= 2.0 * np.cross(Ca, a).sum(axis=0)
    grad[3:] = -2.0 * a.sum(axis=0)
    J = np.zeros((n_in, 3, 6))
    Sk = np.zeros((n_in, 3, 3))
    Sk[:, 0, 1], Sk[:, 0, 2] = -mu[:, 2], mu[:, 1]
    Sk[:, 1, 0], Sk[:, 1, 2] = mu[:, 2], -mu[:, 0]
    Sk[:, 2, 0], Sk[:, 2, 1] = -mu[:, 1], mu[:, 0]
    J[:, :, :3] = np.einsum("ab,nbc->nac", R, Sk)
    J[:, :, 3:] = -R
    H = 2.0 * np.einsum("nia,nij,njb->ab", J, Minv, J)
    return cost, grad, H, n_in


def d2d_residual(p: GaussianPoint, voxel: GaussianPoint, T_ij: Pose):
    """Single-pair D2D cost with its exact gradient and GN Hessian contribution."""
    cloud = GaussianCloud(p.mu[None, :], p.C[None, :, :])
    vmap = VoxelMap(1.0, np.array([0], dtype=np.int64), voxel.mu[None, :],
                    voxel.C[None, :, :], np.array([1]))
    cost, grad, H, n_in = _accumulate(cloud, vmap, T_ij,
                                      pair_idx=np.array([0]),
                                      exact_gradient=True)
    if n_in == 0:
        raise RegistrationError("combined covariance not invertible")
    return cost, grad, H


def match(source: GaussianCloud, target: VoxelMap, T_init: Pose,
          max_iterations: int = 50, update_tol: float = 1e-6) -> tuple[Pose, MatchResult]:
    """Align source Gaussians to the target voxel map starting from T_init.

    Gauss-Newton with Levenberg damping; correspondences are re-looked-up by
    source-point cell at every iteration. Raises RegistrationError when no
    correspondence exists at all.
    """
    if len(source) == 0 or len(target) == 0:
        raise RegistrationError("empty source or target")
    T = T_init.copy()
    lam = 1e-8
    trace = []
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        # correspondences re-looked-up once per iteration, then held fixed
        # while accepting/rejecting the damped step on that objective
        idx = target.lookup(source.mus @ T.R.T + T.t)
        cost, grad, H, n_in = _accumulate(source, target, T, pair_idx=idx)
        if n_in == 0:
            if iterations == 1:
                raise RegistrationError("no correspondences at initial pose")
            break
        accepted = False
        for _ in range(12):
            delta = np.linalg.solve(H + lam * np.eye(6), -grad)
            T_new = pose_compose(T, se3_exp(delta))
            cost_new = _accumulate(source, target, T_new, pair_idx=idx)[0]
            if cost_new <= cost:
                trace.append((cost, cost_new))
                T = T_new
                lam = max(lam / 3.0, 1e-10)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged = True  # no descent left on the current pairing
            break
        if np.linalg.norm(delta) < update_tol:
            converged = True
            break
    cost, grad, H, n_in = _accumulate(source, target, T)
    return T, MatchResult(cost, grad, H, n_in, converged, iterations, trace)


def overlap_ratio(source: GaussianCloud, target: VoxelMap, T: Pose) -> float:
    """Fraction of transformed source points whose cell is occupied in target."""
    if len(source) == 0:
        raise ValueError("empty source")
    q = source.mus @ T.R.T + T.t
    return float((target.lookup(q) >= 0).mean())


def scaled_eigenvalues(hessian: np.ndarray, rot_scale_length: float = 1.0) -> np.ndarray:
    """Eigenvalues of the Hessian with the rotation block converted to the
    translation unit via a characteristic length (rotation of theta displaces
    points by ~length*theta)."""
    s = np.concatenate([np.full(3, 1.0 / rot_scale_length), np.ones(3)])
    return np.linalg.eigvalsh(hessian * np.outer(s, s))


def degeneracy_check(hessian: np.ndarray, threshold: float,
                     rot_scale_length: float = 1.0) -> bool:
    """True when the scan geometry under-constrains registration.

    Degenerate iff the minimum eigenvalue of the unit-scaled Hessian falls
    below the threshold.
    """
    return bool(scaled_eigenvalues(hessian, rot_scale_length)[0] < threshold)
