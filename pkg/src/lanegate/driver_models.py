"""Rule-based longitudinal and lateral driving models.

idm_accel is the intelligent-driver car-following law, mobil_decision the
politeness-weighted lane-change criterion, and rule_policy composes both
with a proportional steering law into a complete fallback planner.

All gaps are bumper-to-bumper distances in meters, speeds in m/s.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "IdmParams",
    "MobilParams",
    "LaneView",
    "EgoView",
    "PlannerState",
    "idm_accel",
    "equilibrium_gap",
    "mobil_decision",
    "steering_command",
    "rule_policy",
]


@dataclass
class IdmParams:
    time_headway: float = 1.5      # s
    min_gap: float = 2.0           # m
    a_max: float = 2.0             # m/s^2
    b_comfort: float = 2.0         # m/s^2, comfortable braking
    exponent: float = 4.0
    floor: float = -5.0            # m/s^2, hard-braking clamp


@dataclass
class MobilParams:
    politeness: float = 0.3
    threshold: float = 0.2         # m/s^2 advantage needed to move
    b_safe: float = 4.0            # m/s^2 braking imposed on the new follower
    cooldown: float = 2.0          # s between lane changes


def idm_accel(v: float, desired_speed: float, leader_speed: float | None,
              gap: float | None, p: IdmParams) -> float:
    """Longitudinal acceleration command.

    leader_speed and gap are None when the lane ahead is free. A
    non-positive gap with a leader present returns the clamp floor.
    """
    if v < 0:
        raise ValueError("speed must be non-negative")
    if desired_speed <= 0:
        raise ValueError("desired_speed must be positive")
    free = 1.0 - (v / desired_speed) ** p.exponent
    if leader_speed is None or gap is None:
        a = p.a_max * free
    else:
        if gap <= 0.0:
            return p.floor
        dv = v - leader_speed
        s_star = p.min_gap + v * p.time_headway + v * dv / (2.0 * np.sqrt(p.a_max * p.b_comfort))
        s_star = max(s_star, 0.0)
        a = p.a_max * (free - (s_star / gap) ** 2)
    return float(np.clip(a, p.floor, p.a_max))


def equilibrium_gap(v: float, desired_speed: float, p: IdmParams) -> float:
    """Steady-state gap behind a leader moving at the same speed v."""
    if v >= desired_speed:
        raise ValueError("no equilibrium at or above the desired speed")
    s_star = p.min_gap + v * p.time_headway
    return s_star / np.sqrt(1.0 - (v / desired_speed) ** p.exponent)


@dataclass
class LaneView:
    """What a vehicle sees in one lane: nearest leader and follower."""
    leader_speed: float | None = None
    leader_gap: float | None = None
    follower_speed: float | None = None
    follower_gap: float | None = None
    follower_desired_speed: float | None = None


@dataclass
class EgoView:
    """Situation summary handed to the rule planner for one vehicle."""
    v: float
    y: float
    psi: float
    lane: int
    length: float
    desired_speed: float
    current: LaneView
    left: LaneView | None          # None when there is no lane to the left
    right: LaneView | None
    y_center_current: float
    y_center_left: float | None
    y_center_right: float | None


def _follower_gain(ego_v: float, ego_len: float, view: LaneView, p: IdmParams,
                   joining: bool) -> tuple[float, float]:
    """(a_new, a_old) of the follower in a lane the ego joins or leaves."""
    if view.follower_speed is None or view.follower_gap is None:
        return 0.0, 0.0
    fv = view.follower_speed
    fdes = view.follower_desired_speed if view.follower_desired_speed is not None else fv + 1.0
    fdes = max(fdes, 0.1)
    if view.leader_gap is not None:
        through_gap = view.follower_gap + ego_len + view.leader_gap
        through_speed = view.leader_speed
    else:
        through_gap = None
        through_speed = None
    behind_ego = idm_accel(fv, fdes, ego_v, view.follower_gap, p)
    behind_leader = idm_accel(fv, fdes, through_speed, through_gap, p)
    if joining:
        return behind_ego, behind_leader
    return behind_leader, behind_ego


def mobil_decision(ego: EgoView, idm_p: IdmParams, mobil_p: MobilParams) -> str:
    """Return "keep", "left" or "right".

    A move must be safe for the new follower (braking no harder than
    b_safe) and must beat the politeness-weighted incentive threshold.
    """
    a_self_old = idm_accel(ego.v, ego.desired_speed,
                           ego.current.leader_speed, ego.current.leader_gap, idm_p)
    a_old_f_new, a_old_f_old = _follower_gain(ego.v, ego.length, ego.current, idm_p, joining=False)
    old_follower_term = a_old_f_new - a_old_f_old

    def incentive(target: LaneView | None) -> float | None:
        if target is None:
            return None
        if target.follower_gap is not None and target.follower_gap <= 0.0:
            return None
        if target.leader_gap is not None and target.leader_gap <= 0.0:
            return None
        a_new_f_new, a_new_f_old = _follower_gain(ego.v, ego.length, target, idm_p, joining=True)
        if a_new_f_new < -mobil_p.b_safe:
            return None  # unsafe for the vehicle behind
        a_self_new = idm_accel(ego.v, ego.desired_speed,
                               target.leader_speed, target.leader_gap, idm_p)
        gain = (a_self_new - a_self_old) + mobil_p.politeness * (
            (a_new_f_new - a_new_f_old) + old_follower_term)
        return gain

    inc_left = incentive(ego.left)
    inc_right = incentive(ego.right)
    best = "keep"
    best_gain = mobil_p.threshold
    if inc_left is not None and inc_left > best_gain:
        best, best_gain = "left", inc_left
    if inc_right is not None and inc_right > best_gain:
        best, best_gain = "right", inc_right
    if inc_left is not None and inc_right is not None and inc_left == inc_right:
        # exact tie between both sides: stay put to keep mirror symmetry
        if best != "keep" and inc_left > mobil_p.threshold:
            best = "keep"
    return best


# Proportional steering gains: lateral error (rad/m) and heading (rad/rad).
STEER_GAIN_Y = 0.05
STEER_GAIN_PSI = 0.5


def steering_command(y: float, psi: float, y_target: float, limit: float = 0.7) -> float:
    """delta = k1 (y_target - y) - k2 psi, clamped to the steering range."""
    delta = STEER_GAIN_Y * (y_target - y) + STEER_GAIN_PSI * (-psi)
    return float(np.clip(delta, -limit, limit))


@dataclass
class PlannerState:
    """Persistent lane intent of one rule-controlled vehicle."""
    target_lane: int
    cooldown_s: float = 0.0


def rule_policy(ego: EgoView, idm_p: IdmParams, mobil_p: MobilParams,
                state: PlannerState, dt: float) -> tuple[float, float]:
    """One planning step: (accel command, steering command).

    Longitudinal control follows the current-lane leader. Lane changes
    are initiated by mobil_decision when the previous change has
    completed and the cooldown has elapsed; the steering law then tracks
    the target lane center.
    """
    state.cooldown_s = max(0.0, state.cooldown_s - dt)
    mid_change = state.target_lane != ego.lane
    if not mid_change and state.cooldown_s <= 0.0:
        move = mobil_decision(ego, idm_p, mobil_p)
        if move == "left" and ego.y_center_left is not None:
            state.target_lane = ego.lane + 1
            state.cooldown_s = mobil_p.cooldown
        elif move == "right" and ego.y_center_right is not None:
            state.target_lane = ego.lane - 1
            state.cooldown_s = mobil_p.cooldown
    if state.target_lane == ego.lane:
        y_target = ego.y_center_current
    elif state.target_lane > ego.lane:
        y_target = ego.y_center_left if ego.y_center_left is not None else ego.y_center_current
    else:
        y_target = ego.y_center_right if ego.y_center_right is not None else ego.y_center_current
    a_cmd = idm_accel(ego.v, ego.desired_speed,
                      ego.current.leader_speed, ego.current.leader_gap, idm_p)
    delta_cmd = steering_command(ego.y, ego.psi, y_target)
    return a_cmd, delta_cmd
