"""Residual and Jacobian definitions for every constraint in the odometry objective:
prior, IMU preintegration, kinematic-network pose/velocity, constant online
parameters, parameter/bias fixation, and the bias random walk.

Residuals are weighted as cost = r^T W r with W the information matrix.
Jacobian dictionaries are keyed by the factor's natural blocks ('T_i', 'v_i',
'b_i', 'P', ...); the graph maps blocks onto its state layout. Pose blocks are
6 columns w.r.t. the right-multiplicative twist [rot, trans].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import network as net
from .geometry import (
    Pose,
    pose_compose,
    pose_inverse,
    se3_adjoint,
    se3_exp,
    se3_log,
    se3_right_jacobian,
    se3_right_jacobian_inv,
    skew,
    so3_exp,
    so3_log,
    so3_right_jacobian,
    so3_right_jacobian_inv,
)

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass
class RobotState:
    """Pose, world-frame velocity, and IMU bias [accel (3), gyro (3)]."""

    T: Pose
    v: np.ndarray
    b: np.ndarray

    @staticmethod
    def origin() -> "RobotState":
        return RobotState(Pose.identity(), np.zeros(3), np.zeros(6))

    def copy(self) -> "RobotState":
        return RobotState(self.T.copy(), self.v.copy(), self.b.copy())

    def retract(self, delta: np.ndarray) -> "RobotState":
        """Apply a 15-dim local update [twist (6), dv (3), db (6)]."""
        return RobotState(
            pose_compose(self.T, se3_exp(delta[:6])),
            self.v + delta[6:9],
            self.b + delta[9:15],
        )


@dataclass
class ImuSample:
    t: float
    a: np.ndarray  # m/s^2, specific force in the sensor frame
    w: np.ndarray  # rad/s


@dataclass
class PreintegratedImu:
    """Gravity-free relative motion accumulated over one frame interval."""

    delta_R: np.ndarray
    delta_p: np.ndarray
    delta_v: np.ndarray
    dt: float
    cov: np.ndarray       # 9x9 over rows [rot, trans, vel]
    bias0: np.ndarray     # linearization bias
    dR_dbg: np.ndarray
    dp_dba: np.ndarray
    dp_dbg: np.ndarray
    dv_dba: np.ndarray
    dv_dbg: np.ndarray

    def information(self) -> np.ndarray:
        return np.linalg.inv(self.cov + np.eye(9) * 1e-12)


@dataclass
class FactorResidual:
    r: np.ndarray
    jacobians: dict[str, np.ndarray] = field(default_factory=dict)
    weight: np.ndarray | None = None  # information matrix (n,n) or diagonal (n,)

    def information(self) -> np.ndarray:
        if self.weight is None:
            return np.eye(len(self.r))
        if self.weight.ndim == 1:
            return np.diag(self.weight)
        return self.weight


def imu_preintegrate(samples, bias: np.ndarray, t_start: float,
                     gyro_noise_std: float = 2e-3,
                     accel_noise_std: float = 3e-2) -> PreintegratedImu:
    """Euler-integrate IMU samples over (t_start, t_end] with gravity excluded.

    Noise stds are per discrete sample. First-order bias Jacobians are
    accumulated alongside so the factor can correct for bias changes.
    """
    if len(samples) == 0:
        raise ValueError("empty IMU interval")
    ba, bg = bias[:3], bias[3:]
    dR = np.eye(3)
    dp = np.zeros(3)
    dv = np.zeros(3)
    cov = np.zeros((9, 9))
    dR_dbg = np.zeros((3, 3))
    dp_dba = np.zeros((3, 3))
    dp_dbg = np.zeros((3, 3))
    dv_dba = np.zeros((3, 3))
    dv_dbg = np.zeros((3, 3))
    t_prev = t_start
    noise = np.diag([gyro_noise_std**2] * 3 + [accel_noise_std**2] * 3)
    for s in samples:
        dt = s.t - t_prev
        if dt <= 0:
            raise ValueError("non-monotonic IMU timestamps")
        if dt > 0.1:
            raise ValueError(f"IMU sample gap {dt:.3f}s exceeds 0.1s")
        t_prev = s.t
        w_hat = s.w - bg
        a_hat = s.a - ba
        R_inc = so3_exp(w_hat * dt)
        Jr = so3_right_jacobian(w_hat * dt)
        aS = skew(a_hat)

        A = np.eye(9)
        A[0:3, 0:3] = R_inc.T
        A[3:6, 0:3] = -0.5 * dR @ aS * dt**2
        A[3:6, 6:9] = np.eye(3) * dt
        A[6:9, 0:3] = -dR @ aS * dt
        B = np.zeros((9, 6))
        B[0:3, 0:3] = Jr * dt
        B[3:6, 3:6] = 0.5 * dR * dt**2
        B[6:9, 3:6] = dR * dt
        cov = A @ cov @ A.T + B @ noise @ B.T

        dp_dba = dp_dba + dv_dba * dt - 0.5 * dR * dt**2
        dp_dbg = dp_dbg + dv_dbg * dt - 0.5 * dR @ aS @ dR_dbg * dt**2
        dv_dba = dv_dba - dR * dt
        dv_dbg = dv_dbg - dR @ aS @ dR_dbg * dt
        dR_dbg = R_inc.T @ dR_dbg - Jr * dt

        dp = dp + dv * dt + 0.5 * dR @ a_hat * dt**2
        dv = dv + dR @ a_hat * dt
        dR = dR @ R_inc
    return PreintegratedImu(dR, dp, dv, t_prev - t_start, cov, bias.copy(),
                            dR_dbg, dp_dba, dp_dbg, dv_dba, dv_dbg)


def imu_factor(x_i: RobotState, x_j: RobotState, pre: PreintegratedImu,
               gravity: np.ndarray = GRAVITY) -> FactorResidual:
    """9-dim preintegration residual [rot, trans, vel] with a first-order
    bias correction around the preintegration's linearization bias."""
    dba = x_i.b[:3] - pre.bias0[:3]
    dbg = x_i.b[3:] - pre.bias0[3:]
    bg_rot = pre.dR_dbg @ dbg
    dR_corr = pre.delta_R @ so3_exp(bg_rot)
    dp_corr = pre.delta_p + pre.dp_dba @ dba + pre.dp_dbg @ dbg
    dv_corr = pre.delta_v + pre.dv_dba @ dba + pre.dv_dbg @ dbg

    R_i, t_i, v_i = x_i.T.R, x_i.T.t, x_i.v
    R_j, t_j, v_j = x_j.T.R, x_j.T.t, x_j.v
    dt = pre.dt

    E = dR_corr.T @ R_i.T @ R_j
    r_R = so3_log(E)
    s = t_j - t_i - v_i * dt - 0.5 * gravity * dt**2
    r_p = dp_corr - R_i.T @ s
    u = v_j - v_i - gravity * dt
    r_v = dv_corr - R_i.T @ u

    Jri = so3_right_jacobian_inv(r_R)
    J_i = np.zeros((9, 15))
    J_j = np.zeros((9, 15))
    # rotation rows
    J_i[0:3, 0:3] = -Jri @ R_j.T @ R_i
    J_i[0:3, 12:15] = -Jri @ E.T @ so3_right_jacobian(bg_rot) @ pre.dR_dbg
    J_j[0:3, 0:3] = Jri
    # translation rows
    J_i[3:6, 0:3] = -skew(R_i.T @ s)
    J_i[3:6, 3:6] = np.eye(3)
    J_i[3:6, 6:9] = R_i.T * dt
    J_i[3:6, 9:12] = pre.dp_dba
    J_i[3:6, 12:15] = pre.dp_dbg
    J_j[3:6, 3:6] = -R_i.T @ R_j
    # velocity rows
    J_i[6:9, 0:3] = -skew(R_i.T @ u)
    J_i[6:9, 6:9] = R_i.T
    J_i[6:9, 9:12] = pre.dv_dba
    J_i[6:9, 12:15] = pre.dv_dbg
    J_j[6:9, 6:9] = -R_i.T

    r = np.concatenate([r_R, r_p, r_v])
    return FactorResidual(r, {"x_i": J_i, "x_j": J_j}, pre.information())


# twist (vx, vy, wz) -> 6-DoF twist [rot, trans] with z/roll/pitch zeroed
_TWIST_EMBED = np.zeros((6, 3))
_TWIST_EMBED[2, 2] = 1.0  # wz
_TWIST_EMBED[3, 0] = 1.0  # vx
_TWIST_EMBED[4, 1] = 1.0  # vy


def nn_pose_residual(T_prev: Pose, T_cur: Pose, P: np.ndarray,
                     model: net.NetworkModel, window: np.ndarray,
                     dt: float, sigma_rot: float = 0.005,
                     sigma_trans: float = 0.01,
                     twist_override: np.ndarray | None = None) -> FactorResidual:
    """Relative-pose residual against the network's integrated planar twist.

    r = log(T_prev^-1 T_cur exp(xi_6dof dt)^-1). twist_override substitutes a
    model-free twist (e.g. ideal kinematics) and drops the P Jacobian.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if twist_override is None:
        xi = net.forward(model, P, window)
        J_net = net.jacobian_wrt_params(model, P, window)
    else:
        xi = np.asarray(twist_override, dtype=float)
        J_net = None
    eta = (_TWIST_EMBED @ xi) * dt
    B = pose_inverse(se3_exp(eta))
    M = pose_compose(pose_compose(pose_inverse(T_prev), T_cur), B)
    r = se3_log(M)
    Jr_inv = se3_right_jacobian_inv(r)
    jac = {
        "T_prev": -Jr_inv @ se3_adjoint(pose_inverse(M)),
        "T_cur": Jr_inv @ se3_adjoint(pose_inverse(B)),
    }
    if J_net is not None:
        d_eta = -Jr_inv @ se3_adjoint(se3_exp(eta)) @ se3_right_jacobian(eta)
        jac["P"] = d_eta @ (_TWIST_EMBED * dt) @ J_net
    weight = np.concatenate([np.full(3, sigma_rot**-2), np.full(3, sigma_trans**-2)])
    return FactorResidual(r, jac, weight)


def nn_velocity_residual(T_prev: Pose, v_prev: np.ndarray, P: np.ndarray,
                         model: net.NetworkModel, window: np.ndarray,
                         sigma: float = 1e-3,
                         twist_override: np.ndarray | None = None) -> FactorResidual:
    """World-frame velocity residual r = v_prev - R_prev * (vx, vy, 0)."""
    if twist_override is None:
        xi = net.forward(model, P, window)
        J_net = net.jacobian_wrt_params(model, P, window)
    else:
        xi = np.asarray(twist_override, dtype=float)
        J_net = None
    v_nn = np.array([xi[0], xi[1], 0.0])
    r = v_prev - T_prev.R @ v_nn
    jac = {
        "T_prev": np.hstack([T_prev.R @ skew(v_nn), np.zeros((3, 3))]),
        "v_prev": np.eye(3),
    }
    if J_net is not None:
        sel = np.diag([1.0, 1.0, 0.0])
        jac["P"] = -T_prev.R @ sel @ J_net
    return FactorResidual(r, jac, np.full(3, sigma**-2))


def constant_param_factor(P_prev: np.ndarray, P_cur: np.ndarray,
                          sigma: float = 1e-3) -> FactorResidual:
    """Random-walk tie between consecutive online parameter vectors."""
    if len(P_prev) != net.N_ONLINE_PARAMS or len(P_cur) != net.N_ONLINE_PARAMS:
        raise ValueError("parameter vectors must have length 100")
    r = P_cur - P_prev
    jac = {"P_cur": np.eye(net.N_ONLINE_PARAMS),
           "P_prev": -np.eye(net.N_ONLINE_PARAMS)}
    return FactorResidual(r, jac, np.full(net.N_ONLINE_PARAMS, sigma**-2))


def fixation_factor(P_cur: np.ndarray, P_frozen: np.ndarray,
                    active: bool, information: float = 1e12) -> FactorResidual | None:
    """Hard tie of the online parameters to their last pre-degeneration value.

    Inactive frames contribute nothing (None). The frozen reference is a
    constant, never a variable.
    """
    if not active:
        return None
    r = np.asarray(P_cur) - np.asarray(P_frozen)
    return FactorResidual(r, {"P_cur": np.eye(len(r))},
                          np.full(len(r), information))


def bias_fixation_factor(b_cur: np.ndarray, b_frozen: np.ndarray,
                         active: bool, information: float = 1e12) -> FactorResidual | None:
    """Same contract as fixation_factor, applied to the 6-dim IMU bias."""
    if not active:
        return None
    r = np.asarray(b_cur) - np.asarray(b_frozen)
    J = np.zeros((6, 15))
    J[:, 9:15] = np.eye(6)
    return FactorResidual(r, {"x_i": J}, np.full(6, information))


def bias_random_walk_factor(x_i: RobotState, x_j: RobotState,
                            sigma_accel: float = 1e-4,
                            sigma_gyro: float = 1e-5) -> FactorResidual:
    r = x_j.b - x_i.b
    J_i = np.zeros((6, 15))
    J_i[:, 9:15] = -np.eye(6)
    J_j = np.zeros((6, 15))
    J_j[:, 9:15] = np.eye(6)
    weight = np.concatenate([np.full(3, sigma_accel**-2), np.full(3, sigma_gyro**-2)])
    return FactorResidual(r, {"x_i": J_i, "x_j": J_j}, weight)


def prior_factor(x1: RobotState, prior: RobotState,
                 information: np.ndarray) -> FactorResidual:
    """Anchors the first robot state to the reference frame.

    r = [log(T_prior^-1 T_1), v_1 - v_prior, b_1 - b_prior], 15-dim.
    """
    r6 = se3_log(pose_compose(pose_inverse(prior.T), x1.T))
    r = np.concatenate([r6, x1.v - prior.v, x1.b - prior.b])
    J = np.zeros((15, 15))
    J[0:6, 0:6] = se3_right_jacobian_inv(r6)
    J[6:9, 6:9] = np.eye(3)
    J[9:15, 9:15] = np.eye(6)
    return FactorResidual(r, {"x_i": J}, information)
