"""Deterministic skid-steer simulator: ground truth over terrain zones with
nonlinear slip, plus wheel-encoder, IMU, and wall-scan synthesis.

The slip distortion is intentionally synthetic and strictly nonlinear in the
commanded speeds, so that no linear kinematic model can fit it:

    vx <- vx_ideal * (1 - s_long)
    wz <- wz_ideal * k_rot * (1 - k_nl * tanh(|wz_ideal * vx|))
    vy <- k_lat * wz * vx

Everything is a pure function of (world, script, seed); one stream of a
seeded PCG64 generator drives all noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .factors import ImuSample
from .geometry import Pose, so3_exp
from .registration import MIN_SCAN_POINTS, ScanFrame

GRAVITY = np.array([0.0, 0.0, -9.81])


class SimulationError(RuntimeError):
    pass


@dataclass
class SlipParams:
    s_long: float = 0.0      # longitudinal slip ratio [0, 1)
    k_lat: float = 0.0       # lateral (centrifugal-style) slip gain
    k_rot: float = 1.0       # rotational efficiency (0, 1]
    k_nl: float = 0.0        # nonlinearity gain on fast turns
    roughness: float = 0.0   # twist jitter std while moving


@dataclass
class TerrainZone:
    name: str
    polygon: np.ndarray      # (M, 2) vertices, counter-clockwise
    slip: SlipParams


@dataclass
class RobotParams:
    wheel_radius: float = 0.09
    wheelbase: float = 0.35
    max_wheel_speed: float = 36.0  # rad/s


@dataclass
class WorldMap:
    """2.5D world: extruded wall segments over a z=0 floor, tiled by zones."""

    name: str
    walls: np.ndarray          # (S, 4): x1, y1, x2, y2
    wall_height: float
    zones: list[TerrainZone]
    default_slip: SlipParams
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax

    def zone_at(self, x: float, y: float) -> SlipParams:
        for z in self.zones:
            if _point_in_polygon(x, y, z.polygon):
                return z.slip
        return self.default_slip


@dataclass
class LidarConfig:
    mount_yaw: float = np.pi / 2   # narrow FOV pointed toward +Y (side)
    mount_height: float = 0.4
    fov_azimuth: float = np.radians(70.0)
    fov_elevation: float = np.radians(40.0)
    n_azimuth: int = 56
    n_elevation: int = 12
    min_range: float = 1.0
    max_range: float = 15.0
    range_noise_std: float = 0.008


@dataclass
class SimConfig:
    sim_rate: float = 1000.0
    imu_rate: float = 200.0
    encoder_rate: float = 60.0
    scan_rate: float = 10.0
    wheel_time_constant: float = 0.15
    encoder_noise_std: float = 0.05
    gyro_noise_std: float = 2e-3
    accel_noise_std: float = 3e-2
    gyro_bias_init_std: float = 2e-3
    accel_bias_init_std: float = 2e-2
    gyro_bias_walk_std: float = 1e-5   # per sqrt(s)
    accel_bias_walk_std: float = 1e-4
    roughness_time_constant: float = 0.12


@dataclass
class EncoderSample:
    t: float
    w_lf: float
    w_lh: float
    w_rh: float
    w_rf: float


@dataclass
class WaypointPlan:
    """Closed-loop alternative to an open-loop command timeline.

    actions: sequence of
        ("goto", x, y, speed)    pure-pursuit drive to the point
        ("pivot", dpsi, rate)    turn in place by dpsi at |rate| rad/s
        ("pause", duration)      hold zero commands
    The plan runs until its actions complete or `duration` elapses,
    whichever comes first; afterwards the robot holds still.
    """

    actions: list
    duration: float
    lookahead: float = 1.0
    capture_radius: float = 0.45
    max_turn_rate: float = 3.5


class _PlanFollower:
    def __init__(self, plan: WaypointPlan, robot: RobotParams):
        self.plan = plan
        self.robot = robot
        self.idx = 0
        self.pivot_target = None
        self.pause_until = None

    def commands(self, t: float, x: float, y: float, psi: float) -> tuple[float, float]:
        plan = self.plan
        while self.idx < len(plan.actions):
            act = plan.actions[self.idx]
            kind = act[0]
            if kind == "pause":
                if self.pause_until is None:
                    self.pause_until = t + act[1]
                if t < self.pause_until:
                    return 0.0, 0.0
                self.pause_until = None
                self.idx += 1
                continue
            if kind == "pivot":
                if self.pivot_target is None:
                    self.pivot_target = psi + act[1]
                err = self.pivot_target - psi
                if abs(err) < 0.06:
                    self.pivot_target = None
                    self.idx += 1
                    continue
                rate = np.sign(err) * abs(act[2])
                return wheel_commands_for(0.0, rate, self.robot)
            if kind == "goto":
                gx, gy, speed = act[1], act[2], act[3]
                dx, dy = gx - x, gy - y
                dist = np.hypot(dx, dy)
                if dist < plan.capture_radius:
                    self.idx += 1
                    continue
                bearing = np.arctan2(dy, dx)
                alpha = (bearing - psi + np.pi) % (2 * np.pi) - np.pi
                if abs(alpha) > 1.1:
                    return wheel_commands_for(
                        0.0, np.sign(alpha) * plan.max_turn_rate * 0.7, self.robot)
                la = min(plan.lookahead, dist)
                curvature = 2.0 * np.sin(alpha) / la
                v = speed * max(0.35, np.cos(alpha))
                wz = np.clip(v * curvature, -plan.max_turn_rate, plan.max_turn_rate)
                return wheel_commands_for(v, wz, self.robot)
            raise ValueError(f"unknown plan action {kind!r}")
        return 0.0, 0.0


@dataclass
class GroundTruthFrame:
    t: float
    pose: Pose
    v_world: np.ndarray
    twist_body: np.ndarray        # (vx, vy, wz)
    scan_label: str               # healthy | degenerate | absent (by construction)


@dataclass
class SimResult:
    gt: list[GroundTruthFrame]
    encoders: list[EncoderSample]
    imu: list[ImuSample]
    scans: list[ScanFrame]
    meta: dict = field(default_factory=dict)


def _point_in_polygon(x: float, y: float, poly: np.ndarray) -> bool:
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_cross:
                inside = not inside
    return inside


def ideal_twist(w_left: float, w_right: float, robot: RobotParams) -> np.ndarray:
    """Slip-free differential-drive kinematics: v = J w."""
    r, b = robot.wheel_radius, robot.wheelbase
    return np.array([
        0.5 * r * (w_left + w_right),
        0.0,
        r * (w_right - w_left) / b,
    ])


def true_twist(w_left: float, w_right: float, slip: SlipParams,
               robot: RobotParams) -> np.ndarray:
    """Ideal kinematics followed by the declared nonlinear slip distortion."""
    vx, _, wz = ideal_twist(w_left, w_right, robot)
    vx = vx * (1.0 - slip.s_long)
    wz = wz * slip.k_rot * (1.0 - slip.k_nl * np.tanh(abs(wz * vx)))
    vy = slip.k_lat * wz * vx
    return np.array([vx, vy, wz])


def wheel_commands_for(v: float, wz: float, robot: RobotParams) -> tuple[float, float]:
    """Invert the ideal kinematics; clipped to the wheel speed limit."""
    r, b = robot.wheel_radius, robot.wheelbase
    wl = (v - 0.5 * wz * b) / r
    wr = (v + 0.5 * wz * b) / r
    m = robot.max_wheel_speed
    return float(np.clip(wl, -m, m)), float(np.clip(wr, -m, m))


def _planar_step(x, y, psi, twist, dt):
    """Exact SE(2) exponential step under a constant body twist."""
    vx, vy, wz = twist
    th = wz * dt
    if abs(th) < 1e-9:
        dx_b = vx * dt
        dy_b = vy * dt
    else:
        s, c = np.sin(th), np.cos(th)
        a = s / th
        b = (1.0 - c) / th
        dx_b = (a * vx - b * vy) * dt
        dy_b = (b * vx + a * vy) * dt
    cp, sp = np.cos(psi), np.sin(psi)
    return (x + cp * dx_b - sp * dy_b,
            y + sp * dx_b + cp * dy_b,
            psi + th)


def _segment_hits_wall(p0, p1, walls) -> bool:
    """True when the 2D motion segment p0->p1 crosses any wall segment."""
    d = p1 - p0
    a = walls[:, 0:2]
    e = walls[:, 2:4] - a
    denom = d[0] * e[:, 1] - d[1] * e[:, 0]
    ok = np.abs(denom) > 1e-12
    ao = a - p0
    t = np.where(ok, (ao[:, 0] * e[:, 1] - ao[:, 1] * e[:, 0]) / np.where(ok, denom, 1.0), -1.0)
    u = np.where(ok, (ao[:, 0] * d[1] - ao[:, 1] * d[0]) / np.where(ok, denom, 1.0), -1.0)
    return bool(np.any(ok & (t > 0.0) & (t < 1.0) & (u >= 0.0) & (u <= 1.0)))


def _ray_directions(lidar: LidarConfig) -> np.ndarray:
    az = np.linspace(-lidar.fov_azimuth / 2, lidar.fov_azimuth / 2, lidar.n_azimuth)
    el = np.linspace(-lidar.fov_elevation / 2, lidar.fov_elevation / 2, lidar.n_elevation)
    azg, elg = np.meshgrid(az, el, indexing="ij")
    azf, elf = azg.ravel(), elg.ravel()
    return np.stack([np.cos(elf) * np.cos(azf),
                     np.cos(elf) * np.sin(azf),
                     np.sin(elf)], axis=1)


def _cast_scan(origin: np.ndarray, R_sensor: np.ndarray, world: WorldMap,
               lidar: LidarConfig, dirs_local: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
    """Ray-cast one sweep. Returns (noisy points in sensor frame, hit plane
    ids). Plane ids: wall index, or -1 for the floor. Rays shorter than
    min_range or beyond max_range are dropped.
    """
    dirs = dirs_local @ R_sensor.T
    n_rays = len(dirs)
    best_t = np.full(n_rays, np.inf)
    best_id = np.full(n_rays, -2, dtype=int)

    a = world.walls[:, 0:2]
    e = world.walls[:, 2:4] - a
    d2 = dirs[:, :2]
    denom = d2[:, 0:1] * e[None, :, 1] - d2[:, 1:2] * e[None, :, 0]  # (R, S)
    ao = a[None, :, :] - origin[None, None, :2]
    ao = ao[0]
    cross_ae = ao[None, :, 0] * e[None, :, 1] - ao[None, :, 1] * e[None, :, 0]
    ok = np.abs(denom) > 1e-12
    t = np.where(ok, cross_ae / np.where(ok, denom, 1.0), np.inf)
    u_num = ao[None, :, 0] * d2[:, 1:2] - ao[None, :, 1] * d2[:, 0:1]
    u = np.where(ok, u_num / np.where(ok, denom, 1.0), -1.0)
    z_hit = origin[2] + t * dirs[:, 2:3]
    valid = ok & (t > 1e-6) & (u >= 0.0) & (u <= 1.0) \
        & (z_hit >= 0.0) & (z_hit <= world.wall_height)
    t = np.where(valid, t, np.inf)
    seg_min = np.argmin(t, axis=1)
    t_wall = t[np.arange(n_rays), seg_min]
    hit = t_wall < best_t
    best_t[hit] = t_wall[hit]
    best_id[hit] = seg_min[hit]

    down = dirs[:, 2] < -1e-9
    t_floor = np.where(down, -origin[2] / np.where(down, dirs[:, 2], 1.0), np.inf)
    hit = t_floor < best_t
    best_t[hit] = t_floor[hit]
    best_id[hit] = -1

    in_range = (best_t >= lidar.min_range) & (best_t <= lidar.max_range)
    ranges = best_t[in_range] + rng.normal(0.0, lidar.range_noise_std,
                                           int(in_range.sum()))
    pts_world = origin + dirs[in_range] * ranges[:, None]
    pts_sensor = (pts_world - origin) @ R_sensor
    pts_true = dirs[in_range] * best_t[in_range][:, None] @ R_sensor
    return pts_sensor, best_id[in_range], pts_true


def _plane_normals(plane_ids: np.ndarray, world: WorldMap,
                   R_sensor: np.ndarray) -> np.ndarray:
    """Unit normal (sensor frame) of the plane each ray hit."""
    normals = np.zeros((len(plane_ids), 3))
    floor = plane_ids == -1
    normals[floor] = [0.0, 0.0, 1.0]
    for pid in np.unique(plane_ids[~floor]):
        x1, y1, x2, y2 = world.walls[pid]
        n = np.array([y1 - y2, x2 - x1, 0.0])
        normals[plane_ids == pid] = n / np.linalg.norm(n)
    return normals @ R_sensor


def _label_scan(pts_true: np.ndarray, plane_ids: np.ndarray, world: WorldMap,
                R_sensor: np.ndarray, threshold: float,
                min_points_per_plane: int = 30) -> str:
    """Degeneracy label from the true hit geometry.

    Builds the idealized registration Hessian from the exact hit points and
    plane normals (unit-scale plane-friendly weights, same convention as the
    matching pipeline) and applies the detector's eigenvalue test to it.
    Planes observed by fewer than min_points_per_plane rays are grazing
    slivers that registration cannot anchor on; they are excluded.
    """
    from .registration import COV_EIG_FLOOR, scaled_eigenvalues

    if len(plane_ids) < MIN_SCAN_POINTS:
        return "absent"
    ids, cnts = np.unique(plane_ids, return_counts=True)
    keep = np.isin(plane_ids, ids[cnts >= min_points_per_plane])
    pts_true = pts_true[keep]
    plane_ids = plane_ids[keep]
    if len(plane_ids) == 0:
        return "degenerate"
    normals = _plane_normals(plane_ids, world, R_sensor)
    # per-hit constraint rows a_d = [p x d, d] weighted 1/(2*eig) along the
    # normal (eig = floor) and in-plane (eig = 1)
    H = np.zeros((6, 6))
    w_n = 1.0 / (2.0 * COV_EIG_FLOOR)
    w_t = 0.5
    a_n = np.concatenate([np.cross(pts_true, normals), normals], axis=1)
    H += 2.0 * (w_n - w_t) * a_n.T @ a_n
    # isotropic in-plane part via sum over the orthonormal frame:
    # rows of B = [-skew(p), I] are the per-axis constraint rows
    B = np.zeros((len(pts_true), 3, 6))
    p = pts_true
    B[:, 0, 1], B[:, 0, 2] = p[:, 2], -p[:, 1]
    B[:, 1, 0], B[:, 1, 2] = -p[:, 2], p[:, 0]
    B[:, 2, 0], B[:, 2, 1] = p[:, 1], -p[:, 0]
    B[:, :, 3:] = np.tile(np.eye(3), (len(pts_true), 1, 1))
    H += 2.0 * w_t * np.einsum("nia,nib->ab", B, B)
    ev = scaled_eigenvalues(H)
    return "healthy" if ev[0] >= threshold else "degenerate"


def simulate(world: WorldMap, script, seed: int,
             robot: RobotParams | None = None,
             sim: SimConfig | None = None,
             lidar: LidarConfig | None = None,
             degeneracy_threshold: float | None = None,
             start_pose: tuple[float, float, float] = (0.0, 0.0, 0.0)) -> SimResult:
    """Run the scripted commands and synthesize all sensor streams.

    script: either a list of (duration_s, w_left_cmd, w_right_cmd) held
    piecewise constant, or a WaypointPlan followed closed-loop; actual wheel
    speeds follow a first-order lag either way.
    """
    from .registration import DEFAULT_DEGENERACY_THRESHOLD

    robot = robot or RobotParams()
    sim = sim or SimConfig()
    lidar = lidar or LidarConfig()
    if degeneracy_threshold is None:
        degeneracy_threshold = DEFAULT_DEGENERACY_THRESHOLD
    rng = np.random.default_rng(seed)

    dt = 1.0 / sim.sim_rate
    if isinstance(script, WaypointPlan):
        follower = _PlanFollower(script, robot)
        total = script.duration
        command_at = follower.commands
    else:
        durations = np.array([s[0] for s in script], dtype=float)
        cmd_l = np.array([s[1] for s in script], dtype=float)
        cmd_r = np.array([s[2] for s in script], dtype=float)
        t_edges = np.cumsum(durations)
        total = float(t_edges[-1])

        def command_at(t, x, y, psi, _e=t_edges, _l=cmd_l, _r=cmd_r):
            i = min(np.searchsorted(_e, t, side="right"), len(_l) - 1)
            return _l[i], _r[i]

    n_steps = int(round(total * sim.sim_rate))

    # pre-draw sensor noise state
    bias_a = rng.normal(0.0, sim.accel_bias_init_std, 3)
    bias_g = rng.normal(0.0, sim.gyro_bias_init_std, 3)

    x, y, psi = start_pose
    wl, wr = 0.0, 0.0
    ou = np.zeros(3)
    tau_r = sim.roughness_time_constant
    slip = world.zone_at(x, y)
    zone_pos = (x, y)

    psis = np.empty(n_steps + 1)
    xs = np.empty(n_steps + 1)
    ys = np.empty(n_steps + 1)
    twists = np.empty((n_steps + 1, 3))
    wl_trace = np.empty(n_steps + 1)
    wr_trace = np.empty(n_steps + 1)
    psis[0], xs[0], ys[0] = psi, x, y
    wl_trace[0], wr_trace[0] = wl, wr

    check_prev = np.array([x, y])
    alpha = dt / sim.wheel_time_constant
    for k in range(n_steps):
        t = k * dt
        if k % 10 == 0:  # 100 Hz command update
            cl, cr = command_at(t, x, y, psi)
        wl += (cl - wl) * alpha
        wr += (cr - wr) * alpha
        wl = np.clip(wl, -robot.max_wheel_speed, robot.max_wheel_speed)
        wr = np.clip(wr, -robot.max_wheel_speed, robot.max_wheel_speed)
        wl_trace[k + 1], wr_trace[k + 1] = wl, wr

        if (x - zone_pos[0])**2 + (y - zone_pos[1])**2 > 0.05**2:
            slip = world.zone_at(x, y)
            zone_pos = (x, y)

        twist = true_twist(wl, wr, slip, robot)
        if slip.roughness > 0.0:
            ou += (-ou / tau_r) * dt + slip.roughness * np.sqrt(2 * dt / tau_r) \
                * rng.normal(size=3)
            motion = min(1.0, abs(twist[0]) / 0.5 + abs(twist[2]) / 1.0)
            twist = twist + ou * motion * np.array([1.0, 0.5, 1.0])
        twists[k] = twist
        x, y, psi = _planar_step(x, y, psi, twist, dt)
        xs[k + 1], ys[k + 1], psis[k + 1] = x, y, psi

        if k % 10 == 9:
            p_now = np.array([x, y])
            if _segment_hits_wall(check_prev, p_now, world.walls) or not (
                    world.bounds[0] < x < world.bounds[2]
                    and world.bounds[1] < y < world.bounds[3]):
                frame = int(t * sim.scan_rate)
                raise SimulationError(
                    f"robot left the world at t={t:.2f}s (frame {frame})")
            check_prev = p_now
    twists[n_steps] = twists[n_steps - 1]

    # world-frame velocity from the analytic twist, acceleration by central
    # differences at the simulation rate
    cp, sp = np.cos(psis), np.sin(psis)
    vw = np.stack([cp * twists[:, 0] - sp * twists[:, 1],
                   sp * twists[:, 0] + cp * twists[:, 1],
                   np.zeros(n_steps + 1)], axis=1)
    aw = np.zeros_like(vw)
    aw[1:-1] = (vw[2:] - vw[:-2]) / (2 * dt)
    aw[0] = (vw[1] - vw[0]) / dt
    aw[-1] = (vw[-1] - vw[-2]) / dt

    def yaw_R(p):
        c, s = np.cos(p), np.sin(p)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    # IMU stream (samples at k/imu_rate for k >= 1)
    imu = []
    n_imu = int(total * sim.imu_rate)
    dt_imu = 1.0 / sim.imu_rate
    for k in range(1, n_imu + 1):
        t = k * dt_imu
        i = min(int(round(t * sim.sim_rate)), n_steps)
        R = yaw_R(psis[i])
        bias_a = bias_a + rng.normal(0.0, sim.accel_bias_walk_std * np.sqrt(dt_imu), 3)
        bias_g = bias_g + rng.normal(0.0, sim.gyro_bias_walk_std * np.sqrt(dt_imu), 3)
        a_meas = R.T @ (aw[i] - GRAVITY) + bias_a \
            + rng.normal(0.0, sim.accel_noise_std, 3)
        w_meas = np.array([0.0, 0.0, twists[i, 2]]) + bias_g \
            + rng.normal(0.0, sim.gyro_noise_std, 3)
        imu.append(ImuSample(t, a_meas, w_meas))

    # encoder stream (left pair and right pair share the true wheel speed)
    encoders = []
    n_enc = int(total * sim.encoder_rate)
    for k in range(n_enc + 1):
        t = k / sim.encoder_rate
        i = min(int(round(t * sim.sim_rate)), n_steps)
        n4 = rng.normal(0.0, sim.encoder_noise_std, 4)
        encoders.append(EncoderSample(t,
                                      wl_trace[i] + n4[0], wl_trace[i] + n4[1],
                                      wr_trace[i] + n4[2], wr_trace[i] + n4[3]))

    # scans and ground-truth frames at the scan rate
    dirs_local = _ray_directions(lidar)
    mount_R = so3_exp(np.array([0.0, 0.0, lidar.mount_yaw]))
    scans = []
    gt = []
    n_scan = int(total * sim.scan_rate)
    for k in range(n_scan + 1):
        t = k / sim.scan_rate
        i = min(int(round(t * sim.sim_rate)), n_steps)
        R = yaw_R(psis[i])
        pose = Pose(R, np.array([xs[i], ys[i], 0.0]))
        R_sensor = R @ mount_R
        origin = pose.t + np.array([0.0, 0.0, lidar.mount_height])
        pts, plane_ids, pts_true = _cast_scan(origin, R_sensor, world, lidar,
                                              dirs_local, rng)
        label = _label_scan(pts_true, plane_ids, world, R_sensor,
                            degeneracy_threshold)
        scans.append(ScanFrame(t, pts))
        gt.append(GroundTruthFrame(t, pose, vw[i].copy(), twists[i].copy(), label))

    meta = {
        "seed": int(seed),
        "world": world.name,
        "rates": {"sim": sim.sim_rate, "imu": sim.imu_rate,
                  "encoder": sim.encoder_rate, "scan": sim.scan_rate},
        "duration": float(total),
        "start_pose": [float(v) for v in start_pose],
        "robot": {"wheel_radius": robot.wheel_radius,
                  "wheelbase": robot.wheelbase,
                  "max_wheel_speed": robot.max_wheel_speed},
    }
    return SimResult(gt, encoders, imu, scans, meta)


def omni_lidar(noise: float = 0.008) -> LidarConfig:
    """Omnidirectional sweep used on the feature-rich training worlds."""
    return LidarConfig(mount_yaw=0.0, fov_azimuth=2 * np.pi - 1e-6,
                       fov_elevation=np.radians(40.0), n_azimuth=100,
                       n_elevation=10, range_noise_std=noise)
