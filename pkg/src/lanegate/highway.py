"""Deterministic multi-lane highway simulator.

Straight road, kinematic-bicycle vehicles with first-order actuator lag,
scripted or rule-driven background traffic, a 21-value ego observation,
and a four-part shaped reward. Stepping is fully deterministic; all
randomness is consumed in reset().

Conventions: x runs along the road, y across it. Lane i is centered at
y = i * lane_width, lane index grows to the left. Headings are radians
counterclockwise from the road axis. All relative quantities in the
observation are neighbor minus ego; longitudinal distances between
vehicles are center-to-center unless a gap is explicitly named.
"""

from dataclasses import dataclass, field

import numpy as np

from .driver_models import (
    EgoView,
    IdmParams,
    LaneView,
    MobilParams,
    PlannerState,
    rule_policy,
    steering_command,
)

__all__ = [
    "RoadConfig",
    "ScenarioSpec",
    "RewardParams",
    "VehicleState",
    "Action",
    "StepResult",
    "HighwayWorld",
    "TrajectoryRecorder",
    "scenario_by_name",
    "reset",
    "SCENARIO_NAMES",
    "OBS_DIM",
    "EGO_ACCEL_RANGE",
    "EGO_STEER_RANGE",
]

OBS_DIM = 21
NEIGHBOR_RANGE = 150.0          # m, sensing horizon
EGO_ACCEL_RANGE = (-5.0, 2.0)   # m/s^2
EGO_STEER_RANGE = (-0.7, 0.7)   # rad
BG_ACCEL_RANGE = (-9.0, 3.0)    # scripted vehicles may brake harder than the ego
ACTUATOR_TAU = 0.2              # s, first-order lag on both commands

CAR_LENGTH, CAR_WIDTH, CAR_WHEELBASE = 4.5, 1.8, 2.7
TRUCK_LENGTH, TRUCK_WIDTH, TRUCK_WHEELBASE = 12.0, 2.5, 7.0

# observation slot order: ego triple, then six neighbor triples
SLOT_NAMES = ("front", "rear", "front_left", "rear_left", "front_right", "rear_right")


@dataclass
class RoadConfig:
    lanes: int = 3
    lane_width: float = 3.5       # m
    length: float = 2000.0        # m, extent used for spawning
    speed_limit: float = 120.0 / 3.6   # m/s

    def lane_center(self, lane: int) -> float:
        return lane * self.lane_width

    @property
    def y_min(self) -> float:
        return -self.lane_width / 2.0

    @property
    def y_max(self) -> float:
        return (self.lanes - 1) * self.lane_width + self.lane_width / 2.0


@dataclass
class RewardParams:
    """Weights and thresholds of the shaped step reward."""
    w_efficiency: float = 1.5
    w_jerk: float = -0.05
    w_steer: float = -2.0
    w_front_risk: float = -0.5
    w_rear_risk: float = -0.5
    w_collision: float = -20.0
    jerk_threshold: float = 2.0    # m/s^3
    steer_threshold: float = 0.30  # rad


@dataclass
class ScenarioSpec:
    """A named traffic situation plus its script parameters."""
    kind: str
    episode_steps: int
    dt: float = 0.1
    base_speed: float = 20.0        # m/s, nominal start speed (emergent cases)
    speed_jitter: float = 2.0       # m/s, +- uniform on the start speed
    # cut_in
    cut_in_gap: float = 15.0        # m, bumper gap of the truck at reset
    trigger_gap: float = 15.0       # m, gap at which the cut-in starts
    speed_drop: float = 5.0         # m/s, how much slower the truck drives
    # emergency_brake
    brake_gap: float = 10.0         # m, bumper gap of the braking leader
    brake_rate: float = -8.0        # m/s^2
    trigger_time: float = 1.0       # s, brake onset
    # daily_cruise
    demand: float = 2000.0          # veh/h/lane
    desired_speed_band: tuple[float, float] = (90.0 / 3.6, 120.0 / 3.6)
    distance_goal: float = 1000.0   # m, episode ends once traveled


SCENARIO_NAMES = ("cut_in", "emergency_brake", "daily_cruise")
_DEFAULT_STEPS = {"cut_in": 300, "emergency_brake": 300, "daily_cruise": 600}


def scenario_by_name(name: str, episode_steps: int | None = None, **overrides) -> ScenarioSpec:
    """Catalog lookup; overrides replace individual script parameters."""
    if name not in SCENARIO_NAMES:
        raise ValueError(f"unknown scenario {name!r}, expected one of {SCENARIO_NAMES}")
    steps = episode_steps if episode_steps is not None else _DEFAULT_STEPS[name]
    spec = ScenarioSpec(kind=name, episode_steps=steps)
    for key, value in overrides.items():
        if not hasattr(spec, key):
            raise ValueError(f"unknown scenario parameter {key!r}")
        setattr(spec, key, value)
    return spec


@dataclass
class VehicleState:
    x: float
    y: float
    v: float
    psi: float = 0.0          # heading, rad
    accel: float = 0.0        # realized longitudinal acceleration
    delta_f: float = 0.0      # realized front-wheel angle
    length: float = CAR_LENGTH
    width: float = CAR_WIDTH
    wheelbase: float = CAR_WHEELBASE
    lane: int = 0
    vid: int = 0
    kind: str = "car"


@dataclass
class Action:
    accel_cmd: float          # desired acceleration, m/s^2
    steer_cmd: float          # desired front-wheel angle, rad


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    r_eff: float
    r_comf: float
    r_risk: float
    r_coll: float
    done: bool
    collided: bool
    info: dict = field(default_factory=dict)


class _ScriptedCutIn:
    """Truck that swings into the ego lane once the gap closes."""

    def __init__(self, trigger_gap: float, road: RoadConfig):
        self.trigger_gap = trigger_gap
        self.road = road
        self.target_lane: int | None = None

    def command(self, world: "HighwayWorld", veh: VehicleState) -> tuple[float, float]:
        ego = world.vehicles[0]
        if self.target_lane is None:
            bumper_gap = (veh.x - veh.length / 2.0) - (ego.x + ego.length / 2.0)
            if bumper_gap <= self.trigger_gap:
                self.target_lane = ego.lane
        lane = self.target_lane if self.target_lane is not None else veh.lane
        return 0.0, steering_command(veh.y, veh.psi, self.road.lane_center(lane))


class _ScriptedBrake:
    """Leader that brakes hard at a fixed time and then stays put."""

    def __init__(self, brake_rate: float, trigger_time: float, road: RoadConfig):
        self.brake_rate = brake_rate
        self.trigger_time = trigger_time
        self.road = road

    def command(self, world: "HighwayWorld", veh: VehicleState) -> tuple[float, float]:
        a_cmd = 0.0
        if world.time >= self.trigger_time and veh.v > 0.0:
            a_cmd = self.brake_rate
        return a_cmd, steering_command(veh.y, veh.psi, self.road.lane_center(veh.lane))


class _RuleController:
    """Background vehicle driven by the rule planner."""

    def __init__(self, desired_speed: float, lane: int,
                 idm: IdmParams, mobil: MobilParams):
        self.desired_speed = desired_speed
        self.idm = idm
        self.mobil = mobil
        self.state = PlannerState(target_lane=lane)

    def command(self, world: "HighwayWorld", veh: VehicleState) -> tuple[float, float]:
        view = world.ego_view(veh.vid, self.desired_speed)
        return rule_policy(view, self.idm, self.mobil, self.state, world.dt)


class HighwayWorld:
    """Mutable simulation state. Build via reset(), advance via step()."""

    def __init__(self, road: RoadConfig, spec: ScenarioSpec, reward: RewardParams,
                 vehicles: list[VehicleState], controllers: dict):
        self.road = road
        self.spec = spec
        self.reward_params = reward
        self.vehicles = vehicles
        self.controllers = controllers
        self.dt = spec.dt
        self.t_step = 0
        self.done = False
        self.collided = False
        self.start_x = vehicles[0].x
        self.lane_changes = 0
        self._prev_ego_accel = vehicles[0].accel
        for veh in self.vehicles:
            veh.lane = self._nearest_lane(veh.y)

    # ---- geometry helpers -------------------------------------------------

    @property
    def time(self) -> float:
        return self.t_step * self.dt

    @property
    def ego(self) -> VehicleState:
        return self.vehicles[0]

    @property
    def distance(self) -> float:
        return self.ego.x - self.start_x

    def _nearest_lane(self, y: float) -> int:
        return int(np.clip(round(y / self.road.lane_width), 0, self.road.lanes - 1))

    def neighbor_slots(self, idx: int) -> dict[str, int | None]:
        """Nearest vehicle index per slot within the sensing horizon."""
        me = self.vehicles[idx]
        slots: dict[str, int | None] = {name: None for name in SLOT_NAMES}
        best: dict[str, float] = {}
        lane_of = {"front": me.lane, "rear": me.lane,
                   "front_left": me.lane + 1, "rear_left": me.lane + 1,
                   "front_right": me.lane - 1, "rear_right": me.lane - 1}
        for j, other in enumerate(self.vehicles):
            if j == idx:
                continue
            dx = other.x - me.x
            if abs(dx) > NEIGHBOR_RANGE:
                continue
            for name in SLOT_NAMES:
                if other.lane != lane_of[name]:
                    continue
                if name.startswith("front") and dx <= 0.0:
                    continue
                if name.startswith("rear") and dx > 0.0:
                    continue
                if name in best and abs(dx) >= best[name]:
                    continue
                slots[name] = j
                best[name] = abs(dx)
        if me.lane + 1 > self.road.lanes - 1:
            slots["front_left"] = slots["rear_left"] = None
        if me.lane - 1 < 0:
            slots["front_right"] = slots["rear_right"] = None
        return slots

    def _lane_view(self, me: VehicleState, front_idx: int | None, rear_idx: int | None) -> LaneView:
        view = LaneView()
        if front_idx is not None:
            lead = self.vehicles[front_idx]
            view.leader_speed = lead.v
            view.leader_gap = (lead.x - me.x) - (lead.length + me.length) / 2.0
        if rear_idx is not None:
            rear = self.vehicles[rear_idx]
            view.follower_speed = rear.v
            view.follower_gap = (me.x - rear.x) - (rear.length + me.length) / 2.0
            view.follower_desired_speed = self.desired_speed_of(rear.vid)
        return view

    def desired_speed_of(self, vid: int) -> float:
        ctl = self.controllers.get(vid)
        if isinstance(ctl, _RuleController):
            return ctl.desired_speed
        for veh in self.vehicles:
            if veh.vid == vid:
                return max(veh.v, 0.1)
        return 0.1

    def ego_view(self, vid: int, desired_speed: float) -> EgoView:
        """Planner view around an arbitrary vehicle (by id)."""
        idx = next(i for i, veh in enumerate(self.vehicles) if veh.vid == vid)
        me = self.vehicles[idx]
        slots = self.neighbor_slots(idx)
        has_left = me.lane + 1 <= self.road.lanes - 1
        has_right = me.lane - 1 >= 0
        return EgoView(
            v=me.v, y=me.y, psi=me.psi, lane=me.lane, length=me.length,
            desired_speed=desired_speed,
            current=self._lane_view(me, slots["front"], slots["rear"]),
            left=self._lane_view(me, slots["front_left"], slots["rear_left"]) if has_left else None,
            right=self._lane_view(me, slots["front_right"], slots["rear_right"]) if has_right else None,
            y_center_current=self.road.lane_center(me.lane),
            y_center_left=self.road.lane_center(me.lane + 1) if has_left else None,
            y_center_right=self.road.lane_center(me.lane - 1) if has_right else None,
        )

    # ---- observation and reward -------------------------------------------

    def observe(self) -> np.ndarray:
        """21 values: ego (x, y, v) then six neighbor slots of relative
        (dx, dy, dv). Absent slots read (+range, 0, 0) ahead of the ego
        and (-range, 0, 0) behind it."""
        ego = self.ego
        obs = np.zeros(OBS_DIM)
        obs[0], obs[1], obs[2] = ego.x, ego.y, ego.v
        slots = self.neighbor_slots(0)
        for k, name in enumerate(SLOT_NAMES):
            base = 3 + 3 * k
            j = slots[name]
            if j is None:
                obs[base] = NEIGHBOR_RANGE if name.startswith("front") else -NEIGHBOR_RANGE
                obs[base + 1] = 0.0
                obs[base + 2] = 0.0
            else:
                other = self.vehicles[j]
                obs[base] = other.x - ego.x
                obs[base + 1] = other.y - ego.y
                obs[base + 2] = other.v - ego.v
        return obs

    def compute_reward(self, prev_accel: float, collided: bool) -> tuple[float, float, float, float, float]:
        """(total, efficiency, comfort, risk, collision) for the post-step state."""
        ego = self.ego
        p = self.reward_params
        r_eff = p.w_efficiency * ego.v / self.road.speed_limit
        jerk = (ego.accel - prev_accel) / self.dt
        zeta_jerk = abs(jerk) if abs(jerk) >= p.jerk_threshold else 0.0
        zeta_steer = abs(ego.delta_f) if abs(ego.delta_f) >= p.steer_threshold else 0.0
        r_comf = p.w_jerk * zeta_jerk + p.w_steer * zeta_steer
        slots = self.neighbor_slots(0)
        r_risk = 0.0
        if slots["front"] is not None and ego.v > 0.0:
            dx = self.vehicles[slots["front"]].x - ego.x
            r_risk += p.w_front_risk * np.exp(-abs(dx) / ego.v)
        if slots["rear"] is not None:
            rear = self.vehicles[slots["rear"]]
            if rear.v > 0.0:
                dx = rear.x - ego.x
                r_risk += p.w_rear_risk * np.exp(-abs(dx) / rear.v)
        r_coll = p.w_collision if collided else 0.0
        total = r_eff + r_comf + r_risk + r_coll
        return float(total), float(r_eff), float(r_comf), float(r_risk), float(r_coll)

    # ---- dynamics ----------------------------------------------------------

    def _integrate(self, veh: VehicleState, a_cmd: float, steer_cmd: float) -> None:
        blend = self.dt / ACTUATOR_TAU
        veh.accel += (a_cmd - veh.accel) * blend
        veh.delta_f += (steer_cmd - veh.delta_f) * blend
        veh.x += veh.v * np.cos(veh.psi) * self.dt
        veh.y += veh.v * np.sin(veh.psi) * self.dt
        veh.psi += veh.v * np.tan(veh.delta_f) / veh.wheelbase * self.dt
        veh.v = float(np.clip(veh.v + veh.accel * self.dt, 0.0, self.road.speed_limit))
        if veh.v == 0.0 and veh.accel < 0.0:
            veh.accel = 0.0

    def _overlap(self, a: VehicleState, b: VehicleState) -> bool:
        return (abs(a.x - b.x) < (a.length + b.length) / 2.0
                and abs(a.y - b.y) < (a.width + b.width) / 2.0)

    def step(self, action: Action | tuple[float, float]) -> StepResult:
        """Advance one time step under the given ego command."""
        if self.done:
            raise RuntimeError("step() called on a finished episode")
        if isinstance(action, Action):
            a_des, steer_des = action.accel_cmd, action.steer_cmd
        else:
            a_des, steer_des = float(action[0]), float(action[1])
        a_des = float(np.clip(a_des, *EGO_ACCEL_RANGE))
        steer_des = float(np.clip(steer_des, *EGO_STEER_RANGE))

        # all decisions read the pre-step state, then every vehicle moves
        commands = [(a_des, steer_des)]
        for veh in self.vehicles[1:]:
            a_cmd, s_cmd = self.controllers[veh.vid].command(self, veh)
            a_cmd = float(np.clip(a_cmd, *BG_ACCEL_RANGE))
            s_cmd = float(np.clip(s_cmd, *EGO_STEER_RANGE))
            commands.append((a_cmd, s_cmd))

        prev_accel = self.ego.accel
        prev_lane = self.ego.lane
        for veh, (a_cmd, s_cmd) in zip(self.vehicles, commands):
            self._integrate(veh, a_cmd, s_cmd)
        for veh in self.vehicles:
            veh.lane = self._nearest_lane(veh.y)

        ego = self.ego
        collided = any(self._overlap(ego, other) for other in self.vehicles[1:])
        if ego.y - ego.width / 2.0 < self.road.y_min or ego.y + ego.width / 2.0 > self.road.y_max:
            collided = True

        self.t_step += 1
        lane_changed = ego.lane != prev_lane
        if lane_changed:
            self.lane_changes += 1

        total, r_eff, r_comf, r_risk, r_coll = self.compute_reward(prev_accel, collided)
        self._prev_ego_accel = ego.accel
        self.collided = self.collided or collided
        horizon = self.t_step >= self.spec.episode_steps
        reached = self.spec.kind == "daily_cruise" and self.distance >= self.spec.distance_goal
        self.done = collided or horizon or reached

        return StepResult(
            obs=self.observe(), reward=total,
            r_eff=r_eff, r_comf=r_comf, r_risk=r_risk, r_coll=r_coll,
            done=self.done, collided=collided,
            info={"speed": ego.v, "lane": ego.lane, "lane_changed": lane_changed,
                  "distance": self.distance, "time": self.time},
        )

    def success(self) -> bool:
        """Episode-level outcome for evaluation summaries."""
        if self.collided:
            return False
        if self.spec.kind == "daily_cruise":
            return self.distance >= self.spec.distance_goal
        return self.done


# ---- scenario construction -------------------------------------------------


def _spawn_cruise_traffic(road: RoadConfig, spec: ScenarioSpec, rng: np.random.Generator,
                          ego: VehicleState, idm: IdmParams, mobil: MobilParams,
                          vehicles: list[VehicleState], controllers: dict) -> None:
    if spec.demand <= 0.0:
        return
    mean_headway = 3600.0 / spec.demand       # s between arrivals in one lane
    lo, hi = spec.desired_speed_band
    vid = 1
    for lane in range(road.lanes):
        x = ego.x - 300.0 + rng.uniform(0.0, mean_headway * lo)
        while x < ego.x + 1300.0:
            desired = rng.uniform(lo, hi)
            headway = rng.exponential(mean_headway)
            x += max(desired * headway, CAR_LENGTH + 8.0)
            if x >= ego.x + 1300.0:
                break
            close_to_ego = lane == ego.lane and abs(x - ego.x) < 30.0
            overlapping = abs(x - ego.x) < 12.0
            if close_to_ego or overlapping:
                continue
            veh = VehicleState(x=x, y=road.lane_center(lane), v=min(desired, road.speed_limit),
                               lane=lane, vid=vid, kind="car")
            vehicles.append(veh)
            controllers[vid] = _RuleController(desired, lane, idm, mobil)
            vid += 1


def reset(spec: ScenarioSpec, seed: int, road: RoadConfig | None = None,
          reward: RewardParams | None = None, idm: IdmParams | None = None,
          mobil: MobilParams | None = None) -> tuple[HighwayWorld, np.ndarray]:
    """Build the world for a scenario. Identical (spec, seed) pairs give
    bit-identical worlds; all stochastic choices happen here."""
    road = road or RoadConfig()
    reward = reward or RewardParams()
    idm = idm or IdmParams()
    mobil = mobil or MobilParams()
    rng = np.random.default_rng(seed)
    mid = (road.lanes - 1) // 2

    if spec.kind in ("cut_in", "emergency_brake"):
        v0 = spec.base_speed + rng.uniform(-spec.speed_jitter, spec.speed_jitter)
        v0 = float(np.clip(v0, 1.0, road.speed_limit))
        ego = VehicleState(x=100.0, y=road.lane_center(mid), v=v0, lane=mid, vid=0, kind="ego")
        vehicles = [ego]
        controllers: dict = {}
        if spec.kind == "cut_in":
            truck_x = ego.x + spec.cut_in_gap + (CAR_LENGTH + TRUCK_LENGTH) / 2.0
            truck = VehicleState(x=truck_x, y=road.lane_center(mid + 1),
                                 v=max(v0 - spec.speed_drop, 0.0),
                                 length=TRUCK_LENGTH, width=TRUCK_WIDTH,
                                 wheelbase=TRUCK_WHEELBASE,
                                 lane=mid + 1, vid=1, kind="truck")
            vehicles.append(truck)
            controllers[1] = _ScriptedCutIn(spec.trigger_gap, road)
        else:
            lead_x = ego.x + spec.brake_gap + CAR_LENGTH
            lead = VehicleState(x=lead_x, y=road.lane_center(mid), v=v0,
                                lane=mid, vid=1, kind="car")
            vehicles.append(lead)
            controllers[1] = _ScriptedBrake(spec.brake_rate, spec.trigger_time, road)
    elif spec.kind == "daily_cruise":
        v0 = float(rng.uniform(25.0, 30.0))
        ego = VehicleState(x=200.0, y=road.lane_center(mid), v=v0, lane=mid, vid=0, kind="ego")
        vehicles = [ego]
        controllers = {}
        _spawn_cruise_traffic(road, spec, rng, ego, idm, mobil, vehicles, controllers)
    else:
        raise ValueError(f"unknown scenario kind {spec.kind!r}")

    world = HighwayWorld(road, spec, reward, vehicles, controllers)
    return world, world.observe()


# ---- trajectory logging ------------------------------------------------------

EGO_TRAJECTORY_HEADER = "t,x_e,y_e,v_e,a,delta_f,lane,reward,r_eff,r_comf,r_risk,r_coll,collision"
BG_TRAJECTORY_HEADER = "t,x,y,v,a,delta_f,lane"


def _fmt(value: float) -> str:
    return repr(float(value))


class TrajectoryRecorder:
    """Accumulates per-step rows for the ego and every background vehicle.

    Rows are post-step states; t counts steps from 1. write() emits
    <tag>_ego.csv plus one <tag>_veh<id>.csv per background vehicle.
    """

    def __init__(self, world: HighwayWorld):
        self.ego_rows: list[str] = []
        self.bg_rows: dict[int, list[str]] = {veh.vid: [] for veh in world.vehicles[1:]}

    def record(self, world: HighwayWorld, result: StepResult) -> None:
        ego = world.ego
        self.ego_rows.append(",".join([
            str(world.t_step), _fmt(ego.x), _fmt(ego.y), _fmt(ego.v), _fmt(ego.accel),
            _fmt(ego.delta_f), str(ego.lane), _fmt(result.reward), _fmt(result.r_eff),
            _fmt(result.r_comf), _fmt(result.r_risk), _fmt(result.r_coll),
            str(int(result.collided)),
        ]))
        for veh in world.vehicles[1:]:
            self.bg_rows[veh.vid].append(",".join([
                str(world.t_step), _fmt(veh.x), _fmt(veh.y), _fmt(veh.v),
                _fmt(veh.accel), _fmt(veh.delta_f), str(veh.lane),
            ]))

    def write(self, directory, tag: str) -> list[str]:
        """Write CSV files; returns the file names created."""
        import os
        os.makedirs(directory, exist_ok=True)
        names = []
        ego_name = f"{tag}_ego.csv"
        with open(os.path.join(directory, ego_name), "w", newline="\n") as fh:
            fh.write(EGO_TRAJECTORY_HEADER + "\n")
            fh.write("\n".join(self.ego_rows))
            if self.ego_rows:
                fh.write("\n")
        names.append(ego_name)
        for vid in sorted(self.bg_rows):
            name = f"{tag}_veh{vid}.csv"
            with open(os.path.join(directory, name), "w", newline="\n") as fh:
                fh.write(BG_TRAJECTORY_HEADER + "\n")
                fh.write("\n".join(self.bg_rows[vid]))
                if self.bg_rows[vid]:
                    fh.write("\n")
            names.append(name)
        return names
