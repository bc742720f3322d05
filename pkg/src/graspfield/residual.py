"""Residual grasping policy trained on top of the frozen score field.

The score field proposes a primitive joint action a^p; the policy reads
the observation (normalized joints, the last five wrist poses, the object
feature and a^p itself) and outputs a scaling action a^s in (0, 2) plus a
residual action a^r.  The executed command is clip(a^p * a^s + a^r, -1, 1).
Training is clipped-surrogate policy optimization with generalized
advantage estimation on full-episode rollouts; the score-field parameters
stay frozen throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .approx import (
    Adam, MlpSpec, SetEncoderSpec, accumulate, load_params, mlp_backward,
    mlp_forward, mlp_init, save_params, set_encode, set_encode_backward,
    set_encoder_init,
)
from .env import ACTION_SCALE, HORIZON, Hand2DEnv, ScriptedSource
from .hand import N_JOINTS, HandModel
from .scorefield import ScoreModel, primitive_action
from .trajgen import sample_trajectory

HISTORY = 5
OBS_DIM = N_JOINTS + 3 * HISTORY + N_JOINTS  # joints + wrist history + a^p
RAW_DIM = 2 * N_JOINTS                       # scale half + residual half

LOG2PI = float(np.log(2.0 * np.pi))


@dataclass
class RewardConfig:
    lambda_s: float = 1.0
    lambda_a: float = 0.09
    lambda_h: float = 0.5
    sim_frequency: int = 5
    fingertip_coeff: float = 1.0  # dense-distance reward scale (no-gf mode)

    def __post_init__(self):
        if min(self.lambda_s, self.lambda_a, self.lambda_h) < 0:
            raise ValueError("reward weights must be >= 0")


@dataclass
class PpoConfig:
    gamma: float = 0.99
    clip: float = 0.2
    gae_decay: float = 0.95
    nsteps: int = HORIZON
    epochs: int = 2
    minibatch: int = 64
    n_envs: int = 64
    lr: float = 3e-4
    entropy_coeff: float = 0.003
    value_coeff: float = 0.5

    def __post_init__(self):
        if self.nsteps != HORIZON:
            raise ValueError("rollouts must cover whole episodes")


@dataclass
class AblationFlags:
    no_gf: bool = False
    no_rl: bool = False
    no_scale: bool = False
    no_residual: bool = False
    no_collision: bool = False

    def __post_init__(self):
        if self.no_gf and self.no_rl:
            raise ValueError("no_gf and no_rl are mutually exclusive")

    def as_dict(self) -> dict:
        return {"no_gf": self.no_gf, "no_rl": self.no_rl, "no_scale": self.no_scale,
                "no_residual": self.no_residual, "no_collision": self.no_collision}


# -- action composition ---------------------------------------------------------------


def scale_map(raw: np.ndarray) -> np.ndarray:
    """Speed scaling in (0, 2): 1 + tanh(raw); raw 0 is neutral."""
    return 1.0 + np.tanh(raw)


def combine_action(a_p: np.ndarray, a_s: np.ndarray, a_r: np.ndarray) -> np.ndarray:
    return np.clip(a_p * a_s + a_r, -1.0, 1.0)


# -- rewards -------------------------------------------------------------------------


def sim_reward(a_p: np.ndarray, delta_j: np.ndarray, cfg: RewardConfig) -> float:
    """Similarity shaping term: projection of joint motion onto a^p."""
    norm = float(np.linalg.norm(a_p))
    if norm == 0.0:
        return 0.0
    return cfg.lambda_a * float(np.dot(a_p / norm, delta_j))


def terminal_reward(outcome, cfg: RewardConfig) -> float:
    if outcome.success:
        return cfg.lambda_s
    return cfg.lambda_h * outcome.delta_h


def compute_reward(t: int, a_p: np.ndarray, delta_j: np.ndarray, outcome,
                   cfg: RewardConfig) -> float:
    """Per-step reward: sparse shaping every sim_frequency steps, terminal bonus.

    ``t`` is the 1-based step index; ``outcome`` must be the LiftOutcome at
    t = HORIZON and None elsewhere.
    """
    if not 1 <= t <= HORIZON:
        raise ValueError("t must lie in [1, horizon]")
    r = 0.0
    if t % cfg.sim_frequency == 0:
        r += sim_reward(a_p, delta_j, cfg)
    if t == HORIZON:
        if outcome is None:
            raise ValueError("terminal step needs a lift outcome")
        r += terminal_reward(outcome, cfg)
    elif outcome is not None:
        raise ValueError("lift outcome before the terminal step")
    return r


def fingertip_distance(fingertips: np.ndarray, cloud_world: np.ndarray) -> float:
    """Mean distance from each fingertip to its nearest object-cloud point."""
    d = np.linalg.norm(fingertips[:, None, :] - cloud_world[None, :, :], axis=2)
    return float(d.min(axis=1).mean())


def compute_reward_no_gf(t: int, fingertips: np.ndarray, cloud_world: np.ndarray,
                         outcome, cfg: RewardConfig) -> float:
    """Dense fingertip-proximity reward used when no score field is available."""
    if not 1 <= t <= HORIZON:
        raise ValueError("t must lie in [1, horizon]")
    r = -cfg.fingertip_coeff * fingertip_distance(fingertips, cloud_world)
    if t == HORIZON:
        if outcome is None:
            raise ValueError("terminal step needs a lift outcome")
        r += terminal_reward(outcome, cfg)
    return r


def gae_advantages(rewards: np.ndarray, values: np.ndarray, gamma: float,
                   decay: float):
    """Generalized advantage estimation over full episodes.

    rewards/values: (n_episodes, T).  Episodes end at T (no bootstrap).
    Returns (advantages, returns), both (n_episodes, T), unnormalized.
    """
    rewards = np.atleast_2d(rewards)
    values = np.atleast_2d(values)
    n, T = rewards.shape
    adv = np.zeros((n, T))
    last = np.zeros(n)
    for t in reversed(range(T)):
        next_v = values[:, t + 1] if t + 1 < T else np.zeros(n)
        delta = rewards[:, t] + gamma * next_v - values[:, t]
        last = delta + gamma * decay * last
        adv[:, t] = last
    return adv, adv + values


# -- policy --------------------------------------------------------------------------


@dataclass
class ResidualPolicy:
    enc_spec: SetEncoderSpec
    actor_spec: MlpSpec
    critic_spec: MlpSpec
    params: dict

    @classmethod
    def create(cls, rng: np.random.Generator, feat: int = 64, hidden: int = 128,
               log_std_init: float = -0.5):
        enc_spec = SetEncoderSpec((2, feat, feat))
        actor_spec = MlpSpec((feat + OBS_DIM, hidden, hidden, RAW_DIM))
        critic_spec = MlpSpec((feat + OBS_DIM, hidden, hidden, 1))
        params = {}
        params.update(set_encoder_init(enc_spec, rng, "enc."))
        params.update(mlp_init(actor_spec, rng, "actor."))
        params.update(mlp_init(critic_spec, rng, "critic."))
        # small last actor layer keeps early actions near the primitive
        params["actor.W2"] *= 0.01
        params["log_std"] = np.full(RAW_DIM, log_std_init)
        return cls(enc_spec, actor_spec, critic_spec, params)

    def forward(self, obs: np.ndarray, clouds: np.ndarray):
        """Returns (action mean (B, 12), value (B,), cache)."""
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        clouds = np.asarray(clouds, dtype=float)
        if clouds.ndim == 2:
            clouds = clouds[None]
        feat, ecache = set_encode(self.enc_spec, self.params, clouds, "enc.")
        x = np.concatenate([feat, obs], axis=1)
        mean, acache = mlp_forward(self.actor_spec, self.params, x, "actor.")
        value, ccache = mlp_forward(self.critic_spec, self.params, x, "critic.")
        cache = {"enc": ecache, "actor": acache, "critic": ccache,
                 "feat_width": feat.shape[1]}
        return mean, value[:, 0], cache

    def backward(self, cache: dict, gmean: np.ndarray, gvalue: np.ndarray) -> dict:
        ga, gxa = mlp_backward(self.actor_spec, self.params, cache["actor"], gmean)
        gc, gxc = mlp_backward(self.critic_spec, self.params, cache["critic"],
                               gvalue[:, None])
        f = cache["feat_width"]
        genc, _ = set_encode_backward(self.enc_spec, self.params, cache["enc"],
                                      gxa[:, :f] + gxc[:, :f])
        grads = {}
        accumulate(grads, ga)
        accumulate(grads, gc)
        accumulate(grads, genc)
        return grads

    def log_prob(self, mean: np.ndarray, raw: np.ndarray) -> np.ndarray:
        log_std = self.params["log_std"]
        z = (raw - mean) / np.exp(log_std)
        return -0.5 * np.sum(z * z, axis=1) - np.sum(log_std) \
            - 0.5 * RAW_DIM * LOG2PI

    def sample(self, mean: np.ndarray, rng: np.random.Generator):
        raw = mean + np.exp(self.params["log_std"]) * rng.standard_normal(mean.shape)
        return raw, self.log_prob(mean, raw)

    def entropy(self) -> float:
        return float(np.sum(self.params["log_std"])
                     + 0.5 * RAW_DIM * (1.0 + LOG2PI))

    def save(self, path, flags: AblationFlags | None = None, extra: dict | None = None):
        meta = {"kind": "residual-policy",
                "feat": self.enc_spec.point_widths[1],
                "hidden": self.actor_spec.widths[1],
                "flags": (flags or AblationFlags()).as_dict()}
        meta.update(extra or {})
        save_params(path, self.params, meta)

    @classmethod
    def load(cls, path):
        params, meta = load_params(path)
        if meta.get("kind") != "residual-policy":
            raise ValueError(f"not a residual-policy checkpoint: {meta.get('kind')!r}")
        pol = cls.create(np.random.default_rng(0), meta["feat"], meta["hidden"])
        pol.params = params
        return pol, AblationFlags(**meta["flags"])


def split_raw(raw: np.ndarray, flags: AblationFlags):
    """Map the raw actor output to (a^s, a^r) honoring ablation flags."""
    raw = np.asarray(raw, dtype=float)
    a_s = scale_map(raw[..., :N_JOINTS])
    a_r = np.tanh(raw[..., N_JOINTS:])
    if flags.no_scale:
        a_s = np.ones_like(a_s)
    if flags.no_residual:
        a_r = np.zeros_like(a_r)
    return a_s, a_r


# -- rollout collection ---------------------------------------------------------------


@dataclass
class Rollout:
    """Full-episode batch: leading dims (n_envs, nsteps)."""

    obs: np.ndarray
    clouds: np.ndarray
    a_p: np.ndarray
    raw: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    outcomes: list
    sim_trace: np.ndarray  # per-step <a^p/|a^p|, dJ> diagnostic

    @property
    def n_env_steps(self) -> int:
        return self.obs.shape[0] * self.obs.shape[1]

    def success_rate(self) -> float:
        return float(np.mean([o.success for o in self.outcomes]))


class EpisodeSampler:
    """Draws (object, grasp target, trajectory) tuples for rollouts.

    Keeps a per-environment memory of the last grasp target and resamples
    until the new target differs whenever the object offers a choice.
    """

    def __init__(self, examples: list, objects: dict, patterns: list,
                 x_noise: float = 0.1):
        if not examples:
            raise ValueError("sampler needs at least one grasp example")
        self.examples = examples
        self.objects = objects
        self.patterns = patterns
        self.x_noise = x_noise
        self._last = {}

    def draw(self, env_id: int, rng: np.random.Generator):
        from .geometry import WristPose
        from .graspdata import GraspExample

        ex = self.examples[rng.integers(len(self.examples))]
        if len(self.examples) > 1:
            while ex is self._last.get(env_id):
                ex = self.examples[rng.integers(len(self.examples))]
        self._last[env_id] = ex
        obj = self.objects[ex.object_id].copy()
        dx = rng.uniform(-self.x_noise, self.x_noise) if self.x_noise else 0.0
        obj.pose[0] += dx
        wrist = WristPose(ex.wrist.x + dx, ex.wrist.y, ex.wrist.theta)
        target = GraspExample(ex.object_id, wrist, ex.joints,
                              ex.fingertip_centroid + [dx, 0.0], ex.quality)
        traj = sample_trajectory(target, self.patterns, rng)
        return obj, target, traj


def collect_rollouts(gf: ScoreModel | None, policy: ResidualPolicy,
                     sampler: EpisodeSampler, flags: AblationFlags,
                     rng: np.random.Generator, ppo_cfg: PpoConfig,
                     reward_cfg: RewardConfig,
                     hand: HandModel | None = None) -> Rollout:
    """Run one on-policy batch of full episodes in lockstep."""
    if gf is None and not flags.no_gf:
        raise ValueError("a trained score field is required unless no_gf is set")
    hand = hand or HandModel()
    n, T = ppo_cfg.n_envs, ppo_cfg.nsteps
    envs = [Hand2DEnv(hand, collisions=not flags.no_collision) for _ in range(n)]
    states, trackers = [], []
    for i, env in enumerate(envs):
        obj, target, traj = sampler.draw(i, rng)
        st = env.reset(obj, ScriptedSource(traj.poses), init_joints=None)
        states.append(st)
        trackers.append([st.wrist] * HISTORY)

    n_cloud = states[0].object.boundary_local.shape[0]
    obs = np.zeros((n, T, OBS_DIM))
    clouds = np.zeros((n, T, n_cloud, 2))
    a_ps = np.zeros((n, T, N_JOINTS))
    raws = np.zeros((n, T, RAW_DIM))
    lps = np.zeros((n, T))
    vals = np.zeros((n, T))
    rews = np.zeros((n, T))
    sim_trace = np.zeros((n, T))
    outcomes = [None] * n

    for t in range(T):
        for i, env in enumerate(envs):
            st = env.state
            cw = st.object.boundary_world()
            local = st.wrist.to_local(cw)
            if flags.no_gf:
                a_p = np.zeros(N_JOINTS)
            else:
                a_p = primitive_action(gf, st.joints, cw, st.wrist, hand)
            hist = np.concatenate([[p.x, p.y, p.theta] for p in trackers[i]])
            obs[i, t] = np.concatenate([hand.normalize_joints(st.joints), hist, a_p])
            clouds[i, t] = local
            a_ps[i, t] = a_p
        mean, value, _ = policy.forward(obs[:, t], clouds[:, t])
        raw, lp = policy.sample(mean, rng)
        raws[:, t] = raw
        lps[:, t] = lp
        vals[:, t] = value

        for i, env in enumerate(envs):
            st = env.state
            q_before = st.joints.copy()
            if flags.no_rl:
                act = np.clip(a_ps[i, t], -1.0, 1.0)
            else:
                a_s, a_r = split_raw(raw[i], flags)
                if flags.no_gf:
                    act = np.clip(a_r, -1.0, 1.0)
                else:
                    act = combine_action(a_ps[i, t], a_s, a_r)
            st = env.step(act)
            trackers[i] = trackers[i][1:] + [st.wrist]
            delta_j = st.joints - q_before
            norm = np.linalg.norm(a_ps[i, t])
            sim_trace[i, t] = (np.dot(a_ps[i, t] / norm, delta_j) if norm > 0 else 0.0)
            outcome = None
            if t + 1 == T:
                outcome = env.terminal_squeeze_and_lift()
                outcomes[i] = outcome
            if flags.no_gf:
                from .hand import forward_kinematics
                fk = forward_kinematics(hand, st.wrist, st.joints, check_limits=False)
                rews[i, t] = compute_reward_no_gf(t + 1, fk.fingertips,
                                                  st.object.boundary_world(),
                                                  outcome, reward_cfg)
            else:
                rews[i, t] = compute_reward(t + 1, a_ps[i, t], delta_j, outcome,
                                            reward_cfg)

    return Rollout(obs, clouds, a_ps, raws, lps, vals, rews, outcomes, sim_trace)


# -- optimization ---------------------------------------------------------------------


def ppo_update(policy: ResidualPolicy, rollout: Rollout, cfg: PpoConfig,
               rng: np.random.Generator, opt: Adam,
               frozen_gf: ScoreModel | None = None) -> dict:
    """Clipped-surrogate update over the rollout batch.

    Returns summary stats.  If ``frozen_gf`` is given its parameter bytes
    are asserted unchanged (the score field must never train here).
    """
    gf_before = None
    if frozen_gf is not None:
        gf_before = {k: v.tobytes() for k, v in frozen_gf.params.items()}

    adv, ret = gae_advantages(rollout.rewards, rollout.values, cfg.gamma,
                              cfg.gae_decay)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    n_total = rollout.n_env_steps
    obs = rollout.obs.reshape(n_total, -1)
    clouds = rollout.clouds.reshape(n_total, *rollout.clouds.shape[2:])
    raw = rollout.raw.reshape(n_total, -1)
    lp_old = rollout.log_probs.reshape(n_total)
    adv = adv.reshape(n_total)
    ret = ret.reshape(n_total)

    stats = {"actor_loss": 0.0, "value_loss": 0.0, "clip_frac": 0.0, "n_mb": 0}
    for _ in range(cfg.epochs):
        order = rng.permutation(n_total)
        for s in range(0, n_total, cfg.minibatch):
            idx = order[s:s + cfg.minibatch]
            b = len(idx)
            mean, value, cache = policy.forward(obs[idx], clouds[idx])
            log_std = policy.params["log_std"]
            std = np.exp(log_std)
            z = (raw[idx] - mean) / std
            lp = -0.5 * np.sum(z * z, axis=1) - np.sum(log_std) \
                - 0.5 * RAW_DIM * LOG2PI
            ratio = np.exp(lp - lp_old[idx])
            a = adv[idx]
            unclipped = ratio * a
            clipped = np.clip(ratio, 1 - cfg.clip, 1 + cfg.clip) * a
            actor_loss = -np.mean(np.minimum(unclipped, clipped))
            value_loss = np.mean((value - ret[idx]) ** 2)
            if not np.isfinite(actor_loss) or not np.isfinite(value_loss):
                raise FloatingPointError("non-finite loss in policy update")

            # the clipped branch contributes no gradient
            active = unclipped <= clipped
            glp = np.where(active, -ratio * a, 0.0) / b
            gmean = glp[:, None] * (z / std)
            glog_std = (glp[:, None] * (z * z - 1.0)).sum(axis=0)
            glog_std -= cfg.entropy_coeff          # entropy bonus gradient
            gvalue = cfg.value_coeff * 2.0 * (value - ret[idx]) / b

            grads = policy.backward(cache, gmean, gvalue)
            grads["log_std"] = glog_std
            opt.step(policy.params, grads)

            stats["actor_loss"] += actor_loss
            stats["value_loss"] += value_loss
            stats["clip_frac"] += float(np.mean(~active))
            stats["n_mb"] += 1

    for k in ("actor_loss", "value_loss", "clip_frac"):
        stats[k] /= max(stats["n_mb"], 1)
    stats["mean_reward"] = float(rollout.rewards.sum(axis=1).mean())
    stats["success_rate"] = rollout.success_rate()

    if gf_before is not None:
        for k, v in frozen_gf.params.items():
            if v.tobytes() != gf_before[k]:
                raise AssertionError("score-field parameters changed during update")
    return stats


def train_residual(examples: list, objects: dict, patterns: list,
                   gf: ScoreModel | None, flags: AblationFlags,
                   n_iterations: int, seed: int = 0,
                   ppo_cfg: PpoConfig | None = None,
                   reward_cfg: RewardConfig | None = None,
                   hand: HandModel | None = None,
                   curve_path=None, log=None):
    """Alternate rollout collection and policy updates.

    Returns (policy, curve) where curve rows are (iteration, env steps,
    mean episode reward, success rate).
    """
    ppo_cfg = ppo_cfg or PpoConfig()
    reward_cfg = reward_cfg or RewardConfig()
    hand = hand or HandModel()
    rng = np.random.default_rng(seed)
    policy = ResidualPolicy.create(rng)
    opt = Adam(lr=ppo_cfg.lr)
    sampler = EpisodeSampler(examples, objects, patterns)
    curve = []
    steps = 0
    for it in range(n_iterations):
        rollout = collect_rollouts(gf, policy, sampler, flags, rng, ppo_cfg,
                                   reward_cfg, hand)
        if flags.no_rl:
            stats = {"mean_reward": float(rollout.rewards.sum(axis=1).mean()),
                     "success_rate": rollout.success_rate()}
        else:
            stats = ppo_update(policy, rollout, ppo_cfg, rng, opt, frozen_gf=gf)
        steps += rollout.n_env_steps
        curve.append((it, steps, stats["mean_reward"], stats["success_rate"]))
        if log:
            log(f"iter {it} steps {steps} reward {stats['mean_reward']:.3f} "
                f"success {stats['success_rate']:.3f}")
    curve = np.array(curve)
    if curve_path is not None:
        with open(curve_path, "w") as fh:
            fh.write("iteration env_steps mean_reward success_rate\n")
            for row in curve:
                fh.write(f"{int(row[0])} {int(row[1])} {row[2]:.6f} {row[3]:.6f}\n")
    return policy, curve
