import numpy as np
import pytest

from helpers import box_room_cloud, corridor_cloud, plane_cloud, yaw_pose
from skidometry.geometry import Pose, pose_compose, pose_inverse, rotation_angle_deg, se3_exp
from skidometry.registration import (
    GaussianCloud,
    GaussianPoint,
    RegistrationError,
    ScanFrame,
    build_voxel_map,
    d2d_residual,
    degeneracy_check,
    estimate_point_covariances,
    match,
    overlap_ratio,
    scaled_eigenvalues,
)


class TestPointCovariances:
    def test_planar_cloud_normal_direction(self):
        rng = np.random.default_rng(0)
        scan = ScanFrame(0.0, plane_cloud(rng, n=500))
        cloud = estimate_point_covariances(scan, k=20)
        lam, vec = np.linalg.eigh(cloud.covs)
        normals = vec[:, :, 0]  # smallest-eigenvalue direction
        angles = np.degrees(np.arccos(np.clip(np.abs(normals[:, 2]), 0, 1)))
        assert np.max(angles) < 1.0

    def test_duplicate_points_stay_invertible(self):
        pts = np.tile(np.array([[1.0, 2.0, 3.0]]), (50, 1))
        cloud = estimate_point_covariances(ScanFrame(0.0, pts), k=10)
        assert np.all(np.linalg.det(cloud.covs) > 0)

    def test_too_few_points_raises(self):
        with pytest.raises(ValueError):
            estimate_point_covariances(ScanFrame(0.0, np.zeros((5, 3))), k=20)

    def test_floor_keeps_covariance_positive_definite(self):
        rng = np.random.default_rng(1)
        scan = ScanFrame(0.0, plane_cloud(rng, n=300))
        cloud = estimate_point_covariances(scan, k=20)
        lam = np.linalg.eigvalsh(cloud.covs)
        assert np.all(lam > 0)
        # floored smallest eigenvalue tracks the plane-friendly ratio
        assert np.all(lam[:, 0] >= 1e-3 * lam[:, 2] - 1e-15)


class TestVoxelMap:
    def test_single_point(self):
        cloud = GaussianCloud(np.array([[0.3, 0.4, 0.5]]), np.eye(3)[None] * 0.01)
        vm = build_voxel_map(cloud, 1.0)
        assert len(vm) == 1
        np.testing.assert_allclose(vm.mus[0], [0.3, 0.4, 0.5])

    def test_two_points_one_cell_midpoint(self):
        mus = np.array([[0.2, 0.2, 0.2], [0.6, 0.6, 0.6]])
        cloud = GaussianCloud(mus, np.tile(np.eye(3) * 0.01, (2, 1, 1)))
        vm = build_voxel_map(cloud, 1.0)
        assert len(vm) == 1
        np.testing.assert_allclose(vm.mus[0], [0.4, 0.4, 0.4])
        assert vm.counts[0] == 2

    def test_voxel_count_matches_bucketing_oracle(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(-10, 10, size=(2000, 3))
        cloud = GaussianCloud(pts, np.tile(np.eye(3) * 0.01, (2000, 1, 1)))
        vm = build_voxel_map(cloud, 0.7)
        cells = {tuple(c) for c in np.floor(pts / 0.7).astype(int)}
        assert len(vm) == len(cells)

    def test_aggregation_order_independent(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform(-3, 3, size=(500, 3))
        covs = rng.normal(size=(500, 3, 3))
        covs = covs @ covs.transpose(0, 2, 1) + np.eye(3) * 0.01
        cloud = GaussianCloud(pts, covs)
        vm1 = build_voxel_map(cloud, 0.5)
        perm = rng.permutation(500)
        vm2 = build_voxel_map(GaussianCloud(pts[perm], covs[perm]), 0.5)
        np.testing.assert_allclose(vm1.mus, vm2.mus, atol=1e-12)
        np.testing.assert_allclose(vm1.covs, vm2.covs, atol=1e-12)

    def test_bad_voxel_size(self):
        cloud = GaussianCloud(np.zeros((1, 3)), np.eye(3)[None])
        with pytest.raises(ValueError):
            build_voxel_map(cloud, 0.0)


class TestD2DResidual:
    def test_coincident_means_zero_cost(self):
        rng = np.random.default_rng(4)
        C = rng.normal(size=(3, 3))
        C = C @ C.T + np.eye(3) * 0.1
        mu = rng.normal(size=3)
        cost, grad, hess = d2d_residual(GaussianPoint(mu, C),
                                        GaussianPoint(mu, C), Pose.identity())
        assert cost == pytest.approx(0.0, abs=1e-12)

    def test_isotropic_half_covariances_reduce_to_euclidean(self):
        mu = np.array([1.0, 2.0, 3.0])
        d = np.array([0.3, -0.2, 0.5])
        p = GaussianPoint(mu, 0.5 * np.eye(3))
        v = GaussianPoint(mu + d, 0.5 * np.eye(3))
        cost, _, _ = d2d_residual(p, v, Pose.identity())
        assert cost == pytest.approx(np.dot(d, d), rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(100):
            A = rng.normal(size=(3, 3))
            C = A @ A.T + np.eye(3) * 0.05
            B = rng.normal(size=(3, 3))
            Cp = B @ B.T + np.eye(3) * 0.05
            p = GaussianPoint(rng.normal(size=3), C)
            v = GaussianPoint(rng.normal(size=3), Cp)
            T = pose_compose(yaw_pose(rng.uniform(-1, 1)),
                             Pose(np.eye(3), rng.normal(size=3)))
            _, grad, _ = d2d_residual(p, v, T)
            h = 1e-6
            fd = np.zeros(6)
            for k in range(6):
                e = np.zeros(6)
                e[k] = h
                cp, _, _ = d2d_residual(p, v, pose_compose(T, se3_exp(e)))
                cm, _, _ = d2d_residual(p, v, pose_compose(T, se3_exp(-e)))
                fd[k] = (cp - cm) / (2 * h)
            rel = np.max(np.abs(grad - fd)) / max(np.max(np.abs(fd)), 1e-9)
            worst = max(worst, rel)
        assert worst < 1e-5

    def test_hessian_symmetric_psd(self):
        rng = np.random.default_rng(6)
        A = rng.normal(size=(3, 3))
        p = GaussianPoint(rng.normal(size=3), A @ A.T + np.eye(3) * 0.1)
        v = GaussianPoint(rng.normal(size=3), np.eye(3) * 0.2)
        _, _, H = d2d_residual(p, v, Pose.identity())
        np.testing.assert_allclose(H, H.T, atol=1e-10)
        assert np.min(np.linalg.eigvalsh(H)) > -1e-9


def _cloud_and_map(points, voxel=0.25, k=20):
    cloud = estimate_point_covariances(ScanFrame(0.0, points), k=k)
    return cloud, build_voxel_map(cloud, voxel)


class TestMatch:
    def test_identity_on_identical_clouds(self):
        rng = np.random.default_rng(7)
        cloud, vm = _cloud_and_map(box_room_cloud(rng, n_per_wall=250, noise=0.01))
        T, res = match(cloud, vm, Pose.identity())
        assert np.linalg.norm(T.t) < 1e-3
        assert rotation_angle_deg(T.R) < 0.01
        # cost at the optimum is negligible next to a misaligned pose
        from skidometry.registration import _accumulate
        off_cost, _, _, off_n = _accumulate(cloud, vm, Pose(np.eye(3), np.array([0.2, 0, 0])))
        assert res.cost / res.inliers < 1e-2 * off_cost / off_n

    def test_recovers_known_perturbation(self):
        rng = np.random.default_rng(8)
        cloud, vm = _cloud_and_map(box_room_cloud(rng, n_per_wall=400, noise=0.01))
        T0 = yaw_pose(np.radians(5.0), x=0.2, y=-0.1)
        T, res = match(cloud, vm, T0)
        assert res.converged
        assert np.linalg.norm(T.t) < 1e-3
        assert rotation_angle_deg(T.R) < 0.01

    def test_cost_non_increasing_over_accepted_iterations(self):
        rng = np.random.default_rng(9)
        cloud, vm = _cloud_and_map(box_room_cloud(rng, n_per_wall=300, noise=0.01))
        _, res = match(cloud, vm, yaw_pose(np.radians(4.0), x=0.15))
        assert len(res.cost_trace) > 1
        for before, after in res.cost_trace:
            assert after <= before + 1e-12

    def test_no_correspondences_raises(self):
        rng = np.random.default_rng(10)
        cloud, vm = _cloud_and_map(box_room_cloud(rng, n_per_wall=200))
        far = Pose(np.eye(3), np.array([1e4, 1e4, 0.0]))
        with pytest.raises(RegistrationError):
            match(cloud, vm, far)

    def test_corridor_converges_in_constrained_directions_only(self):
        rng = np.random.default_rng(11)
        cloud, vm = _cloud_and_map(corridor_cloud(rng, noise=0.01))
        T, res = match(cloud, vm, Pose(np.eye(3), np.array([0.0, 0.05, 0.02])))
        # wall-normal (y) and floor-normal (z) recovered
        assert abs(T.t[1]) < 1e-3 and abs(T.t[2]) < 1e-3
        ev = scaled_eigenvalues(res.hessian)
        assert ev[0] < 1e-3 * ev[-1]  # sliding along the corridor is unconstrained


class TestOverlap:
    def test_self_overlap_is_one(self):
        rng = np.random.default_rng(12)
        cloud, vm = _cloud_and_map(box_room_cloud(rng, n_per_wall=200))
        assert overlap_ratio(cloud, vm, Pose.identity()) == 1.0

    def test_disjoint_clouds_zero(self):
        rng = np.random.default_rng(13)
        cloud, vm = _cloud_and_map(box_room_cloud(rng, n_per_wall=200))
        T = Pose(np.eye(3), np.array([500.0, 0.0, 0.0]))
        assert overlap_ratio(cloud, vm, T) == 0.0

    def test_matches_counting_oracle_on_shifted_corridor(self):
        rng = np.random.default_rng(14)
        pts = corridor_cloud(rng)
        cloud, vm = _cloud_and_map(pts, voxel=0.5)
        T = Pose(np.eye(3), np.array([6.0, 0.0, 0.0]))
        got = overlap_ratio(cloud, vm, T)
        occupied = {tuple(c) for c in np.floor(pts / 0.5).astype(int)}
        moved = pts + T.t
        hits = sum(tuple(c) in occupied for c in np.floor(moved / 0.5).astype(int))
        assert got == pytest.approx(hits / len(pts))


class TestDegeneracy:
    def test_identity_hessian_healthy(self):
        assert degeneracy_check(np.eye(6), threshold=0.5) is False

    def test_rank5_hessian_degenerate(self):
        H = np.diag([3.0, 2.0, 1.0, 0.0, 5.0, 4.0])
        assert degeneracy_check(H, threshold=1e-12) is True

    def test_plane_scan_has_three_dim_planar_nullspace(self):
        rng = np.random.default_rng(15)
        pts = plane_cloud(rng, n=1200, extent=8.0)
        cloud, vm = _cloud_and_map(pts, voxel=0.5)
        from skidometry.registration import _accumulate
        _, _, H, _ = _accumulate(cloud, vm, Pose.identity())
        # compare rotation/translation on a common unit via the RMS lever arm
        length = float(np.sqrt(np.mean(np.sum(pts**2, axis=1))))
        s = np.concatenate([np.full(3, 1.0 / length), np.ones(3)])
        ev, vec = np.linalg.eigh(H * np.outer(s, s))
        # clear spectral gap between the 3 planar motions and the rest
        assert ev[2] * 100 < ev[3]
        # weak subspace spans {rot_z, t_x, t_y} for the z=0 plane
        planar = np.zeros((6, 3))
        planar[2, 0] = 1.0  # rotation about the normal
        planar[3, 1] = 1.0  # in-plane translation x
        planar[4, 2] = 1.0  # in-plane translation y
        proj = planar.T @ vec[:, :3]
        sv = np.linalg.svd(proj, compute_uv=False)
        assert np.min(sv) > 0.99  # principal angles below ~8 degrees

    def test_rotation_scaling_applies(self):
        H = np.diag([4.0, 4.0, 4.0, 1.0, 1.0, 1.0])
        ev = scaled_eigenvalues(H, rot_scale_length=2.0)
        assert ev[0] == pytest.approx(1.0)
        np.testing.assert_allclose(sorted(ev), [1, 1, 1, 1, 1, 1], atol=1e-12)
