"""Named simulation scenarios: three evaluation runs (corridor drifting, flat
zone transitions, hard-to-soft transition) and eight small flat-patch worlds
for offline training.

Terrain parameter sets are synthetic but ordered like their namesakes: hard
flat floors slip little, grass is soft, rough and slippery.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .simulator import (
    LidarConfig,
    SimConfig,
    SimResult,
    SlipParams,
    TerrainZone,
    WaypointPlan,
    WorldMap,
    omni_lidar,
    simulate,
)

TERRAINS = {
    "flat_hard":    SlipParams(s_long=0.03, k_lat=0.02, k_rot=0.95, k_nl=0.08, roughness=0.000),
    "wood_tiles":   SlipParams(s_long=0.05, k_lat=0.04, k_rot=0.92, k_nl=0.12, roughness=0.004),
    "bricks":       SlipParams(s_long=0.08, k_lat=0.06, k_rot=0.87, k_nl=0.20, roughness=0.010),
    "stone_tiles":  SlipParams(s_long=0.06, k_lat=0.05, k_rot=0.90, k_nl=0.15, roughness=0.006),
    "cement_tiles": SlipParams(s_long=0.07, k_lat=0.05, k_rot=0.89, k_nl=0.16, roughness=0.008),
    "grass":        SlipParams(s_long=0.22, k_lat=0.16, k_rot=0.62, k_nl=0.55, roughness=0.030),
    "dry_asphalt":  SlipParams(s_long=0.04, k_lat=0.03, k_rot=0.93, k_nl=0.10, roughness=0.003),
    "wet_asphalt":  SlipParams(s_long=0.13, k_lat=0.10, k_rot=0.76, k_nl=0.38, roughness=0.012),
}
TRAINING_WORLD_NAMES = tuple(TERRAINS)

# scenario-1 floor: polished and slippery, clearly off the flat_hard training point
SLICK_FLOOR = SlipParams(s_long=0.15, k_lat=0.12, k_rot=0.72, k_nl=0.45, roughness=0.005)
ZERO_SLIP = SlipParams()


@dataclass
class Scenario:
    name: str
    world: WorldMap
    plan: WaypointPlan
    lidar: LidarConfig
    start_pose: tuple[float, float, float] = (0.0, 0.0, 0.0)
    sim: SimConfig = field(default_factory=SimConfig)

    def run(self, seed: int) -> SimResult:
        return simulate(self.world, self.plan, seed, sim=self.sim,
                        lidar=self.lidar, start_pose=self.start_pose)


def _rect_walls(x0, y0, x1, y1):
    return [[x0, y0, x1, y0], [x1, y0, x1, y1], [x1, y1, x0, y1], [x0, y1, x0, y0]]


def _rect_poly(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def training_world(terrain: str, half: float = 6.0) -> WorldMap:
    slip = TERRAINS[terrain]
    return WorldMap(
        name=f"train_{terrain}",
        walls=np.array(_rect_walls(-half, -half, half, half), dtype=float),
        wall_height=2.5,
        zones=[TerrainZone(terrain, _rect_poly(-half, -half, half, half), slip)],
        default_slip=slip,
        bounds=(-half, -half, half, half),
    )


def training_plan(seed: int, duration: float = 90.0, half: float = 6.0) -> WaypointPlan:
    """Seeded mixture of straights, curves and pivot turns at 0..3 m/s."""
    rng = np.random.default_rng(10_000 + seed)
    actions = []
    for k in range(60):
        x = rng.uniform(-half + 1.6, half - 1.6)
        y = rng.uniform(-half + 1.6, half - 1.6)
        speed = float(rng.uniform(0.4, 3.0))
        actions.append(("goto", float(x), float(y), speed))
        if k % 6 == 5:
            actions.append(("pivot", float(rng.uniform(-np.pi, np.pi)),
                            float(rng.uniform(1.0, 3.0))))
    return WaypointPlan(actions, duration)


def _scenario_corridor_drift() -> Scenario:
    """Rectangular corridor loop with a feature-rich staging room.

    The robot warms the online parameters up in the room, then laps the loop
    with fast (drifting) corner turns; one close pass along a wall per lap
    blanks the scans entirely.
    """
    walls = []
    # outer boundary with a doorway (x 11..15) into the staging room
    walls += [[0, 0, 11, 0], [15, 0, 26, 0], [26, 0, 26, 16], [26, 16, 0, 16],
              [0, 16, 0, 0]]
    # inner block
    walls += _rect_walls(4, 4, 22, 12)
    # staging room below the doorway
    walls += [[11, 0, 11, -9], [11, -9, 15.5, -9], [15.5, -9, 19, -6],
              [19, -6, 19, 0], [19, 0, 15, 0]]
    world = WorldMap(
        name="corridor_drift",
        walls=np.array(walls, dtype=float),
        wall_height=2.5,
        zones=[],
        default_slip=SLICK_FLOOR,
        bounds=(-0.5, -9.5, 26.5, 16.5),
    )
    lap = [
        ("goto", 20.0, 2.0, 2.8),
        ("goto", 24.0, 3.5, 2.6),   # drift into the east corridor
        ("goto", 24.0, 12.0, 2.8),
        ("goto", 23.5, 14.2, 2.6),
        ("goto", 6.0, 14.0, 2.8),
        ("goto", 2.0, 12.5, 2.6),
        # hug the inner block southbound: the side-facing sweep goes blind
        ("goto", 3.42, 9.5, 1.3),
        ("goto", 3.42, 6.5, 1.3),
        ("goto", 2.0, 3.8, 2.4),
        ("goto", 12.0, 2.0, 2.8),
    ]
    actions = [
        # warm-up in the staging room: corners in view, moderate speeds
        ("goto", 17.0, -4.0, 1.4),
        ("goto", 16.0, -7.0, 1.6),
        ("goto", 12.8, -6.5, 1.6),
        ("pivot", 2.4, 2.0),
        ("goto", 13.0, -3.0, 1.6),
        ("goto", 16.5, -5.5, 1.8),
        ("goto", 14.0, -1.5, 1.4),
        # exit into the loop
        ("goto", 13.0, 2.0, 1.6),
    ]
    actions += lap + lap
    world_plan = WaypointPlan(actions, duration=86.0)
    return Scenario("corridor_drift", world, world_plan, LidarConfig(),
                    start_pose=(13.0, -5.0, 1.57))


def _scenario_zone_transitions() -> Scenario:
    """Three flat-hard zones (bricks, stone, cement) joined by two narrow
    corridors; degeneracy strikes inside the corridors."""
    walls = []
    # hall A (0..10 x 0..10), corridor A->B (10..20 x 4..6.5)
    walls += [[0, 0, 10, 0], [10, 0, 10, 4], [10, 4, 20, 4],
              [20, 4, 20, 0], [20, 0, 30, 0],
              [30, 0, 30, 4], [30, 4, 40, 4], [40, 4, 40, 0],
              [40, 0, 50, 0], [50, 0, 50, 10],
              [50, 10, 40, 10], [40, 10, 40, 6.5], [40, 6.5, 30, 6.5],
              [30, 6.5, 30, 10], [30, 10, 20, 10], [20, 10, 20, 6.5],
              [20, 6.5, 10, 6.5], [10, 6.5, 10, 10], [10, 10, 0, 10],
              [0, 10, 0, 0]]
    zones = [
        TerrainZone("bricks", _rect_poly(-1, -1, 15, 11), TERRAINS["bricks"]),
        TerrainZone("stone_tiles", _rect_poly(15, -1, 35, 11), TERRAINS["stone_tiles"]),
        TerrainZone("cement_tiles", _rect_poly(35, -1, 51, 11), TERRAINS["cement_tiles"]),
    ]
    world = WorldMap("zone_transitions", np.array(walls, dtype=float), 2.5,
                     zones, TERRAINS["bricks"], (-0.5, -0.5, 50.5, 10.5))
    actions = [
        ("goto", 7.5, 7.5, 1.8),
        ("goto", 2.5, 7.0, 1.8),
        ("goto", 2.5, 2.5, 2.0),
        ("goto", 7.5, 2.8, 2.2),
        ("goto", 9.0, 5.2, 1.4),
        ("goto", 19.0, 5.2, 1.6),   # corridor 1 (degenerate)
        ("goto", 23.0, 3.0, 1.8),
        ("goto", 27.5, 7.5, 2.0),
        ("goto", 22.5, 7.0, 1.8),
        ("goto", 23.0, 2.5, 2.0),
        ("goto", 28.5, 3.0, 1.8),
        ("goto", 29.2, 5.2, 1.4),
        ("goto", 39.0, 5.2, 1.6),   # corridor 2 (degenerate)
        ("goto", 43.0, 3.0, 1.8),
        ("goto", 47.5, 7.5, 2.0),
        ("goto", 42.5, 7.0, 1.8),
        ("goto", 43.0, 2.5, 2.0),
        ("goto", 47.0, 2.5, 1.8),
    ]
    plan = WaypointPlan(actions, duration=78.0)
    return Scenario("zone_transitions", world, plan, LidarConfig(),
                    start_pose=(4.0, 4.0, 0.0))


def _scenario_hard_to_soft() -> Scenario:
    """Asphalt staging hall opening onto a walled grass field; long wall-following
    stretches on the grass degenerate the side-facing scans."""
    walls = []
    # hall 0..12 x 0..18 with a doorway (y 7..11) in the x=12 wall
    walls += [[0, 0, 12, 0], [12, 0, 12, 7], [12, 11, 12, 18], [12, 18, 0, 18],
              [0, 18, 0, 0]]
    # field 12..44 x 0..18
    walls += [[12, 0, 44, 0], [44, 0, 44, 18], [44, 18, 12, 18]]
    zones = [
        TerrainZone("dry_asphalt", _rect_poly(-1, -1, 12, 19), TERRAINS["dry_asphalt"]),
        TerrainZone("grass", _rect_poly(12, -1, 45, 19), TERRAINS["grass"]),
    ]
    world = WorldMap("hard_to_soft", np.array(walls, dtype=float), 2.5,
                     zones, TERRAINS["dry_asphalt"], (-0.5, -0.5, 44.5, 18.5))
    actions = [
        # staging maneuvers on asphalt
        ("goto", 8.5, 13.0, 1.6),
        ("goto", 3.0, 14.5, 1.8),
        ("goto", 3.0, 4.0, 2.0),
        ("goto", 8.5, 3.5, 1.8),
        ("goto", 9.5, 9.0, 1.4),
        # through the door onto grass
        ("goto", 14.0, 9.0, 1.4),
        ("goto", 17.0, 14.0, 1.8),
        # follow the north wall east (left side faces the wall: degenerate)
        ("goto", 40.0, 15.4, 2.0),
        ("goto", 41.5, 10.0, 1.8),  # corner turn (healthy glimpse)
        ("goto", 40.0, 3.0, 1.8),
        # back west along the south wall
        ("goto", 17.0, 2.6, 2.0),
        ("goto", 14.5, 8.0, 1.6),
        # return to the hall
        ("goto", 9.0, 9.5, 1.4),
        ("goto", 4.0, 9.0, 1.6),
    ]
    plan = WaypointPlan(actions, duration=68.0)
    return Scenario("hard_to_soft", world, plan, LidarConfig(),
                    start_pose=(6.0, 9.0, 0.0))


def _scenario_calibration_room() -> Scenario:
    """Zero-noise, zero-slip feature-rich room for consistency checks."""
    world = WorldMap(
        name="calibration_room",
        walls=np.array(_rect_walls(-7, -7, 7, 7), dtype=float),
        wall_height=2.5,
        zones=[TerrainZone("ideal", _rect_poly(-7, -7, 7, 7), ZERO_SLIP)],
        default_slip=ZERO_SLIP,
        bounds=(-7, -7, 7, 7),
    )
    sim = SimConfig(encoder_noise_std=0.0, gyro_noise_std=0.0,
                    accel_noise_std=0.0, gyro_bias_init_std=0.0,
                    accel_bias_init_std=0.0, gyro_bias_walk_std=0.0,
                    accel_bias_walk_std=0.0)
    rng = np.random.default_rng(77)
    actions = []
    for _ in range(24):
        actions.append(("goto", float(rng.uniform(-4.5, 4.5)),
                        float(rng.uniform(-4.5, 4.5)),
                        float(rng.uniform(0.5, 1.8))))
    plan = WaypointPlan(actions, duration=60.0)
    return Scenario("calibration_room", world, plan, omni_lidar(noise=0.0),
                    sim=sim)


def scenario_library() -> dict[str, Scenario]:
    """All named scenarios, evaluation runs first."""
    lib = {
        "corridor_drift": _scenario_corridor_drift(),
        "zone_transitions": _scenario_zone_transitions(),
        "hard_to_soft": _scenario_hard_to_soft(),
        "calibration_room": _scenario_calibration_room(),
    }
    for k, terrain in enumerate(TRAINING_WORLD_NAMES):
        lib[f"train_{terrain}"] = Scenario(
            f"train_{terrain}", training_world(terrain),
            training_plan(seed=k), omni_lidar())
    return lib
