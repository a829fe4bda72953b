"""Rule-based synthetic highway traffic with interaction-driven lane changes.

Longitudinal motion follows an IDM-style car-following law integrated at
10 Hz (semi-implicit Euler). A lane change starts when an incentive
criterion fires: the achievable acceleration in an adjacent lane beats the
current one by a configurable gain (with a politeness term and a safety
check on the new follower), plus a small random-exploration channel.
During a change the lateral position follows a quintic polynomial from the
source position to the target lane center, which makes fast vehicles stuck
behind slow leaders brake or merge away, exactly the causal pattern the
interaction features are supposed to pick up.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .datamodel import LCL, LCR, LK, RoadGeometry, Scene, Track
from .features import build_samples

log = logging.getLogger("vbin.simulator")

DT = 0.1
HARD_GAP = 1.0          # absolute rear-end floor, meters


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DriverParams:
    """Car-following and lane-change behavior of one driver."""

    desired_speed: float
    max_accel: float = 1.5
    comfortable_decel: float = 2.0
    max_decel: float = 6.0
    time_headway: float = 1.2
    jam_distance: float = 2.0
    lc_accel_gain: float = 0.2      # required advantage, m/s^2
    politeness: float = 0.3
    lc_duration: float = 4.0        # lateral maneuver time, seconds
    accel_noise_std: float = 0.25
    lateral_noise_std: float = 0.02

    def __post_init__(self):
        positive = ("desired_speed", "max_accel", "comfortable_decel",
                    "max_decel", "time_headway", "jam_distance",
                    "lc_accel_gain", "politeness", "lc_duration")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"DriverParams.{name} must be positive")
        if not 3.0 <= self.lc_duration <= 5.0:
            raise ValueError("lc_duration must lie in [3.0, 5.0] s")
        if self.accel_noise_std < 0 or self.lateral_noise_std < 0:
            raise ValueError("noise std devs must be non-negative")


@dataclass(frozen=True)
class SimConfig:
    lane_count: int = 3
    lane_width: float = 3.7
    lane_length: float = 1000.0     # spawn region
    vehicle_count: int = 20
    duration_frames: int = 600
    speed_min: float = 20.0
    speed_max: float = 34.0
    spawn_min_gap: float = 25.0
    spawn_attempts: int = 500
    explore_prob: float = 2e-5      # spontaneous safe lane change, per frame
    lc_cooldown_s: float = 3.0
    safe_decel: float = 3.0         # max braking imposed on the new follower
    min_lc_gap: float = 5.0
    driver: DriverParams = field(
        default_factory=lambda: DriverParams(desired_speed=30.0))


@dataclass(frozen=True)
class SpawnSpec:
    lane: int
    x_long: float
    speed: float
    driver: DriverParams


def idm_acceleration(p: DriverParams, v: float, gap: float | None,
                     leader_v: float | None) -> float:
    """IDM acceleration toward the desired speed with leader interaction."""
    free = 1.0 - (max(v, 0.0) / p.desired_speed) ** 4
    if gap is None:
        return p.max_accel * free
    s_star = (p.jam_distance + v * p.time_headway
              + v * (v - leader_v) / (2.0 * math.sqrt(p.max_accel
                                                      * p.comfortable_decel)))
    s_star = max(s_star, p.jam_distance)
    return p.max_accel * (free - (s_star / max(gap, 0.1)) ** 2)


def _quintic(progress: float) -> float:
    """Smooth 0->1 profile with zero slope and curvature at both ends."""
    t = min(max(progress, 0.0), 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


@dataclass
class _VehicleSim:
    vid: int
    params: DriverParams
    x: float
    v: float
    x_lat: float
    target_lane: int
    lc_start_frame: int = -1
    lc_from_lat: float = 0.0
    lc_to_lane: int = -1
    cooldown_until: int = 0

    @property
    def changing(self) -> bool:
        return self.lc_to_lane >= 0


def run_simulation(config: SimConfig, spawns: list[SpawnSpec], seed: int,
                   ident: int = 0) -> Scene:
    """Integrate explicit initial conditions; deterministic given the seed."""
    road = RoadGeometry(config.lane_count, config.lane_width)
    rng = np.random.default_rng(seed)
    n_frames = config.duration_frames
    cooldown = int(round(config.lc_cooldown_s / DT))

    cars = [_VehicleSim(i, sp.driver, sp.x_long, sp.speed,
                        road.lane_center(sp.lane), sp.lane)
            for i, sp in enumerate(spawns)]
    hist_x = np.empty((len(cars), n_frames))
    hist_lat = np.empty((len(cars), n_frames))
    hist_v = np.empty((len(cars), n_frames))

    def lane_of(car: _VehicleSim) -> int:
        return road.lane_of(car.x_lat)

    def leader_in(lane: int, x: float, exclude: int) -> _VehicleSim | None:
        best = None
        for c in cars:
            if c.vid == exclude or lane_of(c) != lane or c.x < x:
                continue
            if best is None or (c.x, c.vid) < (best.x, best.vid):
                best = c
        return best

    def follower_in(lane: int, x: float, exclude: int) -> _VehicleSim | None:
        best = None
        for c in cars:
            if c.vid == exclude or lane_of(c) != lane or c.x >= x:
                continue
            if best is None or (c.x, -c.vid) > (best.x, -best.vid):
                best = c
        return best

    def accel_wrt(car: _VehicleSim, leader: _VehicleSim | None) -> float:
        if leader is None:
            return idm_acceleration(car.params, car.v, None, None)
        return idm_acceleration(car.params, car.v, leader.x - car.x, leader.v)

    for frame in range(n_frames):
        for c in cars:
            hist_x[c.vid, frame] = c.x
            hist_lat[c.vid, frame] = c.x_lat
            hist_v[c.vid, frame] = c.v

        # accelerations from the current snapshot
        accels = np.empty(len(cars))
        for c in cars:
            ref_lane = c.lc_to_lane if c.changing else lane_of(c)
            a = accel_wrt(c, leader_in(ref_lane, c.x, c.vid))
            a += c.params.accel_noise_std * rng.standard_normal()
            accels[c.vid] = min(max(a, -c.params.max_decel), c.params.max_accel)

        # lane-change decisions
        for c in cars:
            explore_draw = rng.random()
            if c.changing or frame < c.cooldown_until:
                continue
            cur_lane = lane_of(c)
            a_now = accel_wrt(c, leader_in(cur_lane, c.x, c.vid))
            best_lane, best_adv = -1, -math.inf
            for cand in (cur_lane + 1, cur_lane - 1):
                if not 0 <= cand < config.lane_count:
                    continue
                new_leader = leader_in(cand, c.x, c.vid)
                new_follower = follower_in(cand, c.x, c.vid)
                front_gap = new_leader.x - c.x if new_leader else math.inf
                rear_gap = c.x - new_follower.x if new_follower else math.inf
                if front_gap < config.min_lc_gap or rear_gap < config.min_lc_gap:
                    continue
                if new_follower is not None:
                    imposed = idm_acceleration(new_follower.params,
                                               new_follower.v, rear_gap, c.v)
                    if imposed < -config.safe_decel:
                        continue
                    before = accel_wrt(new_follower,
                                       leader_in(cand, new_follower.x,
                                                 new_follower.vid))
                    follower_term = imposed - before
                else:
                    follower_term = 0.0
                a_new = accel_wrt(c, new_leader)
                adv = a_new - a_now + c.params.politeness * follower_term
                explored = explore_draw < config.explore_prob
                if (adv > c.params.lc_accel_gain or explored) and adv > best_adv:
                    best_lane, best_adv = cand, adv
            if best_lane >= 0:
                c.lc_start_frame = frame
                c.lc_from_lat = c.x_lat
                c.lc_to_lane = best_lane

        # longitudinal integration (semi-implicit Euler)
        prev_x = [c.x for c in cars]
        for c in cars:
            c.v = max(c.v + accels[c.vid] * DT, 0.0)
            c.x = c.x + c.v * DT

        # rear-end floor: clamp followers, keep velocity consistent with
        # the realized displacement
        by_lane: dict[int, list[_VehicleSim]] = {}
        for c in cars:
            by_lane.setdefault(lane_of(c), []).append(c)
        for group in by_lane.values():
            group.sort(key=lambda c: (-c.x, c.vid))
            for ahead, behind in zip(group, group[1:]):
                if ahead.x - behind.x < HARD_GAP:
                    behind.x = ahead.x - HARD_GAP
                    behind.v = max((behind.x - prev_x[behind.vid]) / DT, 0.0)

        # lateral motion
        for c in cars:
            noise_draw = rng.standard_normal()
            if c.changing:
                lc_frames = c.params.lc_duration / DT
                progress = (frame + 1 - c.lc_start_frame) / lc_frames
                target = road.lane_center(c.lc_to_lane)
                c.x_lat = c.lc_from_lat + (target - c.lc_from_lat) * _quintic(progress)
                if progress >= 1.0:
                    c.x_lat = target
                    c.target_lane = c.lc_to_lane
                    c.lc_to_lane = -1
                    c.cooldown_until = frame + 1 + cooldown
            else:
                center = road.lane_center(c.target_lane)
                c.x_lat += (0.5 * (center - c.x_lat) * DT
                            + c.params.lateral_noise_std * noise_draw
                            * math.sqrt(DT))
                limit = 0.35 * config.lane_width
                c.x_lat = min(max(c.x_lat, center - limit), center + limit)

    tracks = []
    for c in cars:
        x = hist_x[c.vid]
        lat = hist_lat[c.vid]
        v = hist_v[c.vid]
        d = np.diff(lat) * (1.0 / DT)
        v_lat = np.concatenate((d[:1], d)) if n_frames >= 2 else np.zeros(n_frames)
        theta = np.arctan2(v_lat, np.maximum(v, 0.1))
        tracks.append(Track(c.vid, 0, x.copy(), lat.copy(), v.copy(),
                            v_lat, theta))
    return Scene(RoadGeometry(config.lane_count, config.lane_width), tracks,
                 ident=ident)


def spawn_vehicles(config: SimConfig, rng: np.random.Generator) -> list[SpawnSpec]:
    """Random initial placement with a per-lane minimum gap.

    Resamples an overlapping position up to ``spawn_attempts`` times, then
    raises SimulationError.
    """
    placed: dict[int, list[float]] = {}
    spawns = []
    for _ in range(config.vehicle_count):
        for attempt in range(config.spawn_attempts + 1):
            lane = int(rng.integers(0, config.lane_count))
            x = float(rng.uniform(0.0, config.lane_length))
            if all(abs(x - other) >= config.spawn_min_gap
                   for other in placed.get(lane, [])):
                break
            if attempt == config.spawn_attempts:
                raise SimulationError(
                    f"could not place vehicle after {config.spawn_attempts} "
                    "attempts; road too dense")
        placed.setdefault(lane, []).append(x)
        desired = float(rng.uniform(config.speed_min, config.speed_max))
        speed = desired * float(rng.uniform(0.85, 1.0))
        spawns.append(SpawnSpec(lane, x, speed,
                                replace(config.driver, desired_speed=desired)))
    return spawns


def simulate_scene(config: SimConfig, seed: int, ident: int = 0) -> Scene:
    """Spawn and integrate one scene; bit-deterministic in (config, seed)."""
    rng = np.random.default_rng(seed)
    spawns = spawn_vehicles(config, rng)
    sim_seed = int(rng.integers(0, 2 ** 63 - 1))
    return run_simulation(config, spawns, sim_seed, ident=ident)


@dataclass
class DatasetStats:
    n_scenes: int = 0
    n_skipped: int = 0
    n_lc_events: int = 0
    n_samples: int = 0
    n_lk: int = 0
    n_lcl: int = 0
    n_lcr: int = 0

    def summary(self) -> str:
        return (f"{self.n_scenes} scenes ({self.n_skipped} skipped), "
                f"{self.n_lc_events} LC events, {self.n_samples} samples "
                f"(LK {self.n_lk} / LCL {self.n_lcl} / LCR {self.n_lcr})")


def generate_dataset(config: SimConfig, n_scenes: int, seed: int,
                     lk_ratio: float = 1.0):
    """Simulate scenes and assemble labeled samples.

    Scene seeds are spawned from one seed sequence, so the whole dataset is
    reproducible from (config, n_scenes, seed). Returns (samples, scenes,
    stats); scenes too short to fit any window are skipped and counted.
    """
    children = np.random.SeedSequence(seed).spawn(n_scenes)
    samples = []
    scenes = []
    stats = DatasetStats()
    for i, child in enumerate(children):
        scene_seed = int(child.generate_state(1)[0])
        scene = simulate_scene(config, scene_seed, ident=i)
        scenes.append(scene)
        scene_samples = build_samples(scene, lk_ratio=lk_ratio)
        if not scene_samples:
            stats.n_skipped += 1
            continue
        stats.n_scenes += 1
        events = {s.event_key() for s in scene_samples if s.event_direction != 0}
        stats.n_lc_events += len(events)
        for s in scene_samples:
            if s.label == LK:
                stats.n_lk += 1
            elif s.label == LCL:
                stats.n_lcl += 1
            elif s.label == LCR:
                stats.n_lcr += 1
        samples.extend(scene_samples)
    stats.n_samples = len(samples)
    log.info("generated dataset: %s", stats.summary())
    return samples, scenes, stats
