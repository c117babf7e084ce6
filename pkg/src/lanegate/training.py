"""Improvement-loop trainer and evaluation harness.

Each cycle collects a fixed number of trajectories under the frozen
current policy, splits them 1:2 into train and held-out sets, refines a
candidate on the train side, and asks the confidence gate whether the
candidate may replace the current policy. Buffers persist across
rejected cycles and are cleared on acceptance; the rejected candidate's
parameters are kept as the warm start for the next cycle.

All randomness is drawn from streams derived structurally from
(master seed, purpose, cycle, index), so reruns are bit-identical and
the collection order never depends on batching.
"""

import logging
import os
import time
from dataclasses import dataclass

import numpy as np

from . import gate as gate_mod
from .checkpoint import save_checkpoint
from .config import RunConfig
from .driver_models import IdmParams, MobilParams, PlannerState, rule_policy
from .highway import (
    EGO_ACCEL_RANGE,
    EGO_STEER_RANGE,
    NEIGHBOR_RANGE,
    OBS_DIM,
    HighwayWorld,
    TrajectoryRecorder,
    reset,
)
from .nets import OptimizerState
from .policy import (
    GaussianPolicy,
    ReplayBuffer,
    Trajectory,
    ValueFunction,
    nstep_advantages,
    train_candidate,
)

__all__ = [
    "Trainer",
    "EpisodeResult",
    "EvalSummary",
    "evaluate",
    "eval_seed_list",
    "hybrid_select",
    "rl_action_factory",
    "rule_action_factory",
    "default_obs_scale",
    "METRICS_HEADER",
    "GATE_LOG_HEADER",
]

log = logging.getLogger(__name__)

# purpose codes for derived random streams
_P_INIT, _P_ENV, _P_ACT, _P_TRAIN, _P_GATE, _P_EVAL = 0, 1, 2, 3, 4, 5

HIDDEN_DIMS = [256, 256]

METRICS_HEADER = ("cycle,m_paper,m_env,n_test,accepted,adopted,rho_lower,rho_cur,"
                  "cand_return,cand_return_norm,policy_return,policy_return_norm,"
                  "policy_r_eff,policy_r_comf,policy_r_risk,policy_r_coll,"
                  "policy_success,policy_avg_speed,policy_lane_changes,deployed")
GATE_LOG_HEADER = ("cycle,n,rho_lower,rho_cur,delta,accepted,"
                   "log_omega_min,log_omega_max,clamp_count")


def _fmt(value: float) -> str:
    return repr(float(value))


def _fmt_bool(value: bool) -> str:
    return "true" if value else "false"


def eval_seed_list(master_seed: int, n: int) -> list[int]:
    """Matched evaluation seeds; a pure function of the master seed so
    separate invocations compare policies on identical episodes."""
    return [int(s) for s in
            np.random.SeedSequence([master_seed, _P_EVAL]).generate_state(n)]


def default_obs_scale() -> np.ndarray:
    """Fixed diagonal scaling that brings every observation entry to
    roughly unit magnitude before it enters a network."""
    scale = np.empty(OBS_DIM)
    scale[0] = 1.0 / 1000.0          # ego longitudinal position
    scale[1] = 1.0 / 10.0            # ego lateral position
    scale[2] = 1.0 / 40.0            # ego speed
    for k in range(6):
        base = 3 + 3 * k
        scale[base] = 1.0 / NEIGHBOR_RANGE
        scale[base + 1] = 1.0 / 10.0
        scale[base + 2] = 1.0 / 40.0
    return scale


STEER_RAW_UNIT = 0.02   # rad of front-wheel angle per raw policy unit


def action_mapping() -> tuple[np.ndarray, np.ndarray]:
    """(center, half range) mapping raw policy units onto physical commands.

    One raw unit of acceleration spans half the physical range, so the
    whole range sits within about one unit of output. Steering uses a
    much smaller unit: at highway speed a fraction of a radian is a
    violent input, and exploration noise (sigma 0.5 raw) must not throw
    the vehicle off the road before learning starts. Raw outputs are
    unbounded, so the full physical range stays reachable; the
    environment clamp is the final authority either way."""
    center = np.array([(EGO_ACCEL_RANGE[0] + EGO_ACCEL_RANGE[1]) / 2.0, 0.0])
    half = np.array([(EGO_ACCEL_RANGE[1] - EGO_ACCEL_RANGE[0]) / 2.0, STEER_RAW_UNIT])
    return center, half


# ---- evaluation --------------------------------------------------------------


@dataclass
class EpisodeResult:
    seed: int
    steps: int
    ret: float                 # discounted reward sum
    ret_norm: float            # same, mapped into [-1, 1]
    r_eff: float
    r_comf: float
    r_risk: float
    r_coll: float
    success: bool
    collided: bool
    avg_speed: float
    lane_changes: int
    distance: float


@dataclass
class EvalSummary:
    episodes: list[EpisodeResult]

    @property
    def n(self) -> int:
        return len(self.episodes)

    @property
    def mean_return(self) -> float:
        return float(np.mean([e.ret for e in self.episodes]))

    @property
    def mean_return_norm(self) -> float:
        return float(np.mean([e.ret_norm for e in self.episodes]))

    @property
    def success_rate(self) -> float:
        return float(np.mean([1.0 if e.success else 0.0 for e in self.episodes]))

    @property
    def mean_components(self) -> tuple[float, float, float, float]:
        return (float(np.mean([e.r_eff for e in self.episodes])),
                float(np.mean([e.r_comf for e in self.episodes])),
                float(np.mean([e.r_risk for e in self.episodes])),
                float(np.mean([e.r_coll for e in self.episodes])))

    @property
    def mean_speed(self) -> float:
        return float(np.mean([e.avg_speed for e in self.episodes]))

    @property
    def mean_lane_changes(self) -> float:
        return float(np.mean([e.lane_changes for e in self.episodes]))


def rl_action_factory(policy: GaussianPolicy):
    """Deterministic evaluation behavior: the Gaussian mean, mapped to
    physical units. The environment applies its own clamps."""
    def make():
        def act(world: HighwayWorld, obs: np.ndarray) -> tuple[float, float]:
            phys = policy.to_physical(policy.mean_raw(obs))
            return float(phys[0]), float(phys[1])
        return act
    return make


def rule_action_factory(idm: IdmParams, mobil: MobilParams, desired_speed: float):
    """Rule planner as an ego behavior; fresh lane intent per episode."""
    def make():
        state: dict = {}

        def act(world: HighwayWorld, obs: np.ndarray) -> tuple[float, float]:
            if "planner" not in state:
                state["planner"] = PlannerState(target_lane=world.ego.lane)
            view = world.ego_view(0, desired_speed)
            return rule_policy(view, idm, mobil, state["planner"], world.dt)
        return act
    return make


def evaluate(action_factory, cfg: RunConfig, seeds: list[int],
             scenario: str | None = None, record_dir: str | None = None) -> EvalSummary:
    """Run one episode per seed and summarize the outcomes.

    action_factory() must return a fresh callable (world, obs) -> command
    pair for each episode. With record_dir set, full trajectory CSVs are
    written there, one tag per episode.
    """
    spec = cfg.scenario_spec(scenario)
    road, reward = cfg.road_config(), cfg.reward_params()
    idm, mobil = cfg.idm_params(), cfg.mobil_params()
    gamma = cfg["rl"]["gamma"]
    bounds = cfg.bounds()
    episodes = []
    for j, seed in enumerate(seeds):
        world, obs = reset(spec, int(seed), road=road, reward=reward, idm=idm, mobil=mobil)
        act = action_factory()
        recorder = TrajectoryRecorder(world) if record_dir else None
        rewards, comps = [], []
        while not world.done:
            result = world.step(act(world, obs))
            obs = result.obs
            rewards.append(result.reward)
            comps.append((result.r_eff, result.r_comf, result.r_risk, result.r_coll))
            if recorder:
                recorder.record(world, result)
        rewards = np.asarray(rewards)
        comps = np.asarray(comps)
        disc = gamma ** np.arange(len(rewards))
        ret = float(rewards @ disc)
        ret_norm, _ = gate_mod.normalized_return(rewards, gamma, bounds)
        elapsed = world.t_step * world.dt
        episodes.append(EpisodeResult(
            seed=int(seed), steps=world.t_step, ret=ret, ret_norm=ret_norm,
            r_eff=float(comps[:, 0] @ disc), r_comf=float(comps[:, 1] @ disc),
            r_risk=float(comps[:, 2] @ disc), r_coll=float(comps[:, 3] @ disc),
            success=world.success(), collided=world.collided,
            avg_speed=world.distance / elapsed if elapsed > 0 else 0.0,
            lane_changes=world.lane_changes, distance=world.distance))
        if recorder:
            recorder.write(record_dir, f"ep{j:03d}")
    return EvalSummary(episodes)


def write_eval_csv(path, summary: EvalSummary) -> None:
    header = ("episode,seed,steps,return,return_norm,r_eff,r_comf,r_risk,r_coll,"
              "success,collided,avg_speed,lane_changes,distance")
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for j, e in enumerate(summary.episodes):
            fh.write(",".join([
                str(j), str(e.seed), str(e.steps), _fmt(e.ret), _fmt(e.ret_norm),
                _fmt(e.r_eff), _fmt(e.r_comf), _fmt(e.r_risk), _fmt(e.r_coll),
                _fmt_bool(e.success), _fmt_bool(e.collided), _fmt(e.avg_speed),
                str(e.lane_changes), _fmt(e.distance),
            ]) + "\n")


def hybrid_select(rl_summary: EvalSummary | None, rule_summary: EvalSummary,
                  currently_deployed: str) -> str:
    """Deploy whichever behavior scored the higher mean normalized
    return on matched seeds; an exact tie keeps the incumbent."""
    if rl_summary is None:
        return "rule"
    if rl_summary.mean_return_norm > rule_summary.mean_return_norm:
        return "rl"
    if rl_summary.mean_return_norm < rule_summary.mean_return_norm:
        return "rule"
    return currently_deployed


# ---- the trainer ---------------------------------------------------------------


@dataclass
class IterationReport:
    cycle: int
    m_paper: float
    m_env: int
    n_test: int
    gate: gate_mod.GateDecision
    adopted: bool
    cand_eval: EvalSummary
    policy_eval: EvalSummary
    deployed: str
    wall_time: float
    failed: bool = False


class Trainer:
    """Owns the policies, buffers, counters and run-directory artifacts."""

    def __init__(self, cfg: RunConfig, out_dir: str):
        self.cfg = cfg
        self.out_dir = out_dir
        self.master_seed = cfg.seed
        self.spec = cfg.scenario_spec()
        self.road = cfg.road_config()
        self.reward = cfg.reward_params()
        self.idm = cfg.idm_params()
        self.mobil = cfg.mobil_params()
        self.rl = cfg.rl_config()
        self.bounds = cfg.bounds()
        self.gate_cfg = cfg["gate"]
        self.trainer_cfg = cfg["trainer"]

        os.makedirs(out_dir, exist_ok=False)
        os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
        with open(os.path.join(out_dir, "config.resolved"), "w") as fh:
            fh.write(cfg.as_yaml())

        obs_scale = default_obs_scale()
        center, half = action_mapping()
        rng_init = self._rng(_P_INIT)
        dims = [OBS_DIM] + HIDDEN_DIMS
        self.candidate = GaussianPolicy.create(dims + [2], rng_init, obs_scale=obs_scale,
                                               act_center=center, act_half=half,
                                               sigma_init=self.rl.sigma_init)
        self.critic = ValueFunction.create(dims + [1], rng_init, obs_scale=obs_scale)
        self.policy_cur = self.candidate.copy()
        self.opt_actor = OptimizerState(self.candidate.parameters(), lr=self.rl.lr_actor)
        self.opt_critic = OptimizerState(self.critic.net.parameters(), lr=self.rl.lr_critic)

        self.train_buffer = ReplayBuffer()
        self.test_buffer = ReplayBuffer()
        self.cycle = 0
        self.m_paper = 0.0
        self.m_env = 0
        self.policy_version = 0
        self.deployed = "rule"
        self._cur_eval: EvalSummary | None = None
        self._rule_eval: EvalSummary | None = None
        self.eval_seeds = eval_seed_list(self.master_seed,
                                         self.trainer_cfg["eval_episodes"])

        self._metrics = open(os.path.join(out_dir, "metrics.csv"), "w", newline="\n")
        self._metrics.write(METRICS_HEADER + "\n")
        self._gate_log = open(os.path.join(out_dir, "gate_log.csv"), "w", newline="\n")
        self._gate_log.write(GATE_LOG_HEADER + "\n")
        self._timing = open(os.path.join(out_dir, "timing.csv"), "w", newline="\n")
        self._timing.write("cycle,wall_time_s\n")

    def _rng(self, purpose: int, *extra: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.master_seed, purpose, *extra]))

    def close(self) -> None:
        for fh in (self._metrics, self._gate_log, self._timing):
            if not fh.closed:
                fh.close()

    # ---- collection ------------------------------------------------------------

    def collect(self, cycle: int) -> list[Trajectory]:
        """Roll out one batch of trajectories under the current policy.

        Environments advance in lockstep so the actor means can be
        computed in one batched forward pass; every trajectory draws its
        actions from its own derived stream, which keeps the result
        independent of the batching."""
        beta = self.trainer_cfg["beta"]
        env_seeds = np.random.SeedSequence([self.master_seed, _P_ENV, cycle]).generate_state(beta)
        act_rngs = [self._rng(_P_ACT, cycle, i) for i in range(beta)]
        worlds = []
        obs_list, act_list, logp_list, rew_list = [], [], [], []
        for i in range(beta):
            world, obs = reset(self.spec, int(env_seeds[i]), road=self.road,
                               reward=self.reward, idm=self.idm, mobil=self.mobil)
            worlds.append(world)
            obs_list.append([obs])
            act_list.append([])
            logp_list.append([])
            rew_list.append([])
        active = list(range(beta))
        while active:
            batch = np.stack([obs_list[i][-1] for i in active])
            means = self.policy_cur.mean_raw(batch)
            still = []
            for row, i in enumerate(active):
                raw, logp = self.policy_cur.sample_given_mean(means[row], act_rngs[i])
                phys = self.policy_cur.to_physical(raw)
                result = worlds[i].step((float(phys[0]), float(phys[1])))
                act_list[i].append(raw)
                logp_list[i].append(logp)
                rew_list[i].append(result.reward)
                obs_list[i].append(result.obs)
                if not result.done:
                    still.append(i)
            active = still
        trajectories = []
        for i in range(beta):
            trajectories.append(Trajectory(
                obs=np.stack(obs_list[i]),
                actions=np.stack(act_list[i]),
                log_probs=np.asarray(logp_list[i]),
                rewards=np.asarray(rew_list[i]),
                terminal=True, collided=worlds[i].collided,
                policy_tag=self.policy_version, seed=int(env_seeds[i])))
        return trajectories

    def split_append(self, trajectories: list[Trajectory]) -> None:
        """Deterministic 1:2 split: indices 0, 3, 6, ... go to the train
        side, the rest to the held-out side."""
        for i, traj in enumerate(trajectories):
            if i % 3 == 0:
                self.train_buffer.append(traj)
            else:
                self.test_buffer.append(traj)

    # ---- evaluation helpers -------------------------------------------------------

    def _eval_policy(self, policy: GaussianPolicy) -> EvalSummary:
        return evaluate(rl_action_factory(policy), self.cfg, self.eval_seeds)

    def _eval_rule(self) -> EvalSummary:
        if self._rule_eval is None:
            factory = rule_action_factory(self.idm, self.mobil, self.road.speed_limit)
            self._rule_eval = evaluate(factory, self.cfg, self.eval_seeds)
        return self._rule_eval

    def _checkpoint(self, name: str) -> None:
        counters = {"cycle": self.cycle, "m_paper": self.m_paper, "m_env": self.m_env,
                    "policy_version": self.policy_version,
                    "scenario": self.spec.kind}
        save_checkpoint(os.path.join(self.out_dir, "checkpoints", name),
                        self.policy_cur, self.critic, self.opt_actor, self.opt_critic,
                        counters, self.cfg.digest())

    # ---- one improvement cycle ----------------------------------------------------

    def training_cycle(self) -> IterationReport:
        t_start = time.perf_counter()
        cycle = self.cycle
        trajectories = self.collect(cycle)
        for traj in trajectories:
            traj.advantages = nstep_advantages(traj, self.critic, self.rl.gamma,
                                               self.rl.lookahead_T)
        self.split_append(trajectories)
        # the budget counter charges the nominal episode length even when
        # episodes terminate early; realized steps are tracked separately
        realized = sum(len(t) for t in trajectories)
        self.m_env += realized
        self.m_paper += self.trainer_cfg["beta"] * self.spec.episode_steps / 3.0

        tags = set(self.train_buffer.policy_tags()) | set(self.test_buffer.policy_tags())
        if tags != {self.policy_version}:
            raise RuntimeError(f"buffer holds trajectories from policies {sorted(tags)}, "
                               f"expected only version {self.policy_version}")
        data = self.train_buffer.flatten()
        train_rng = self._rng(_P_TRAIN, cycle)
        tstats = train_candidate(self.candidate, self.critic, data, self.rl,
                                 self.opt_actor, self.opt_critic, train_rng)

        gate_rng = self._rng(_P_GATE, cycle)
        decision = gate_mod.improvement_gate(
            self.test_buffer.trajectories, self.candidate, self.rl.gamma,
            self.bounds, self.gate_cfg["delta"], self.gate_cfg["bootstrap_samples"],
            gate_rng, clamp=self.gate_cfg["log_weight_clamp"])
        self._write_gate_row(cycle, decision)

        mode = self.gate_cfg["mode"]
        adopted = decision.accepted if mode == "gated" else True

        cand_eval = self._eval_policy(self.candidate)
        if adopted:
            self.policy_cur = self.candidate.copy()
            self.policy_version += 1
            self.train_buffer.clear()
            self.test_buffer.clear()
            self._cur_eval = cand_eval
            self._checkpoint(f"accept_{cycle:05d}.json")
        elif self._cur_eval is None:
            self._cur_eval = self._eval_policy(self.policy_cur)
        policy_eval = self._cur_eval

        self.deployed = hybrid_select(policy_eval, self._eval_rule(), self.deployed)
        self.cycle += 1
        if self.cycle % self.trainer_cfg["checkpoint_every"] == 0:
            self._checkpoint(f"cycle_{self.cycle:05d}.json")

        report = IterationReport(
            cycle=cycle, m_paper=self.m_paper, m_env=self.m_env,
            n_test=len(self.test_buffer), gate=decision, adopted=adopted,
            cand_eval=cand_eval, policy_eval=policy_eval, deployed=self.deployed,
            wall_time=time.perf_counter() - t_start)
        self._write_metrics_row(report)
        log.info("cycle %d: m=%.1f gate=%s adopted=%s rho_lower=%.4f rho_cur=%.4f "
                 "policy_return_norm=%.4f success=%.2f deployed=%s "
                 "batches=%d kl=%.4f%s (%.1fs)",
                 cycle, self.m_paper, decision.accepted, adopted, decision.rho_lower,
                 decision.rho_cur, policy_eval.mean_return_norm,
                 policy_eval.success_rate, self.deployed, tstats.batches,
                 tstats.approx_kl, " kl-stop" if tstats.kl_stopped else "",
                 report.wall_time)
        return report

    def _write_gate_row(self, cycle: int, d: gate_mod.GateDecision) -> None:
        self._gate_log.write(",".join([
            str(cycle), str(d.n), _fmt(d.rho_lower), _fmt(d.rho_cur), _fmt(d.delta),
            _fmt_bool(d.accepted), _fmt(d.log_omega_min), _fmt(d.log_omega_max),
            str(d.clamp_count)]) + "\n")
        self._gate_log.flush()

    def _write_metrics_row(self, r: IterationReport) -> None:
        comps = r.policy_eval.mean_components
        self._metrics.write(",".join([
            str(r.cycle), _fmt(r.m_paper), str(r.m_env), str(r.n_test),
            _fmt_bool(r.gate.accepted), _fmt_bool(r.adopted),
            _fmt(r.gate.rho_lower), _fmt(r.gate.rho_cur),
            _fmt(r.cand_eval.mean_return), _fmt(r.cand_eval.mean_return_norm),
            _fmt(r.policy_eval.mean_return), _fmt(r.policy_eval.mean_return_norm),
            _fmt(comps[0]), _fmt(comps[1]), _fmt(comps[2]), _fmt(comps[3]),
            _fmt(r.policy_eval.success_rate), _fmt(r.policy_eval.mean_speed),
            _fmt(r.policy_eval.mean_lane_changes), r.deployed]) + "\n")
        self._metrics.flush()
        self._timing.write(f"{r.cycle},{_fmt(r.wall_time)}\n")
        self._timing.flush()

    # ---- full runs -------------------------------------------------------------

    def run(self) -> None:
        """Train until the step budget is exhausted, then finalize."""
        if self.gate_cfg["mode"] == "rule_only":
            self._run_rule_only()
            return
        max_steps = self.trainer_cfg["M"]
        budget = self.trainer_cfg["max_wall_time"]
        t_start = time.perf_counter()
        consecutive_failures = 0
        while self.m_paper <= max_steps:
            if budget is not None and time.perf_counter() - t_start >= budget:
                log.info("wall-time budget of %.0fs reached at cycle %d", budget, self.cycle)
                break
            try:
                self.training_cycle()
                consecutive_failures = 0
            except Exception:
                log.exception("cycle %d failed; keeping the current policy", self.cycle)
                consecutive_failures += 1
                self.cycle += 1
                if consecutive_failures >= 5:
                    raise
        self._finalize()

    def _run_rule_only(self) -> None:
        factory = rule_action_factory(self.idm, self.mobil, self.road.speed_limit)
        summary = evaluate(factory, self.cfg, self.eval_seeds,
                           record_dir=os.path.join(self.out_dir, "trajectories"))
        write_eval_csv(os.path.join(self.out_dir, "eval_final.csv"), summary)
        self._write_manifest(policy="rule")
        self.close()

    def _finalize(self) -> None:
        self._checkpoint("final.json")
        summary = evaluate(rl_action_factory(self.policy_cur), self.cfg, self.eval_seeds,
                           record_dir=os.path.join(self.out_dir, "trajectories"))
        write_eval_csv(os.path.join(self.out_dir, "eval_final.csv"), summary)
        self._write_manifest(policy="rl")
        self.close()

    def _write_manifest(self, policy: str) -> None:
        import json
        manifest = {
            "policy": policy,
            "scenario": self.spec.kind,
            "eval_seeds": self.eval_seeds,
            "checkpoint": "checkpoints/final.json" if policy == "rl" else None,
        }
        with open(os.path.join(self.out_dir, "trajectories", "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=1)
