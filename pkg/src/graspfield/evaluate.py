"""Episode evaluation: success / posture / stability metrics and reports.

Rolls trained policy bundles over dataset splits, records per-episode
metrics, and aggregates them into a text report with per-seed spread and
an adaptability histogram (fraction of objects succeeding on k of their
5 grasp targets).  Wrist observation noise, when requested, perturbs only
what the policy sees; the simulated wrist is unaffected.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .env import HORIZON, Hand2DEnv, LiftOutcome, ScriptedSource
from .geometry import WristPose
from .graspdata import GraspExample, diversity_filter
from .hand import N_JOINTS, HandModel, forward_kinematics
from .residual import (
    HISTORY, AblationFlags, ResidualPolicy, combine_action, split_raw,
)
from .scorefield import ScoreModel, primitive_action

N_TARGETS = 5


@dataclass(frozen=True)
class NoiseModel:
    """Clipped-Gaussian wrist observation noise (sd in degrees / centimeters)."""

    theta_sd_deg: float
    pos_sd_cm: float

    def __post_init__(self):
        if self.theta_sd_deg < 0 or self.pos_sd_cm < 0:
            raise ValueError("noise standard deviations must be >= 0")

    @property
    def is_zero(self) -> bool:
        return self.theta_sd_deg == 0.0 and self.pos_sd_cm == 0.0

    def perturb(self, wrist: WristPose, rng: np.random.Generator) -> WristPose:
        if self.is_zero:
            return wrist
        s_pos = self.pos_sd_cm / 100.0
        s_th = math.radians(self.theta_sd_deg)
        dx, dy = np.clip(rng.normal(0.0, s_pos, 2), -s_pos, s_pos) if s_pos else (0, 0)
        dth = float(np.clip(rng.normal(0.0, s_th), -s_th, s_th)) if s_th else 0.0
        return WristPose(wrist.x + dx, wrist.y + dy, wrist.theta + dth)


@dataclass
class EpisodeTrace:
    """Per-step state history of one episode (approach phase)."""

    wrist: np.ndarray        # (T+1, 3)
    joints: np.ndarray       # (T+1, 6)
    object_pose: np.ndarray  # (T+1, 3)
    a_p: np.ndarray          # (T, 6)
    sim_trace: np.ndarray    # (T,) per-step <a^p/|a^p|, dJ>


@dataclass
class EpisodeRecord:
    object_id: str
    target_id: int
    seed: int
    success: bool
    posture: float
    stability_trans: float
    stability_rot: float
    trace: EpisodeTrace | None = None

    def __post_init__(self):
        if self.posture < 0 or self.stability_trans < 0 or self.stability_rot < 0:
            raise ValueError("metrics must be >= 0")


@dataclass
class MetricsReport:
    """Per-split mean/sd over seeds plus the adaptability histogram."""

    splits: dict = field(default_factory=dict)     # tag -> {metric: (mean, sd)}
    histograms: dict = field(default_factory=dict)  # tag -> fractions over k/5
    config_hash: str = "unconfigured"


@dataclass
class PolicyBundle:
    """Everything needed to act: score field, residual policy, ablation flags."""

    gf: ScoreModel | None
    policy: ResidualPolicy | None
    flags: AblationFlags

    def __post_init__(self):
        if self.gf is None and not self.flags.no_gf:
            raise ValueError("bundle needs a score field unless no_gf is set")
        if self.policy is None and not self.flags.no_rl:
            raise ValueError("bundle needs a residual policy unless no_rl is set")


# -- metric primitives ------------------------------------------------------------


def posture_metric(final_joints: np.ndarray, target: GraspExample) -> float:
    """Joint-space Euclidean distance (radians) to the episode's grasp target."""
    return float(np.linalg.norm(np.asarray(final_joints) - target.joints))


def stability_metric(trace: EpisodeTrace) -> tuple[float, float]:
    """Object disturbance over the approach phase: (translation m, 1 - cos dtheta)."""
    p0, pT = trace.object_pose[0], trace.object_pose[-1]
    trans = float(np.linalg.norm(pT[:2] - p0[:2]))
    rot = float(1.0 - math.cos(pT[2] - p0[2]))
    return trans, rot


# -- single-episode rollout -------------------------------------------------------


class ActionDriver:
    """Stateful per-step action computation for one episode.

    Shared by the batch evaluator and the interactive session server so
    that both produce bit-identical commands for the same wrist inputs.
    """

    def __init__(self, bundle: PolicyBundle, hand: HandModel,
                 initial_obs_wrist: WristPose):
        self.bundle = bundle
        self.hand = hand
        self.tracker = [initial_obs_wrist] * HISTORY

    def compute(self, st, obs_wrist: WristPose):
        """Returns (executed action, a_p, a_s, a_r) for the current state."""
        flags = self.bundle.flags
        cw = st.object.boundary_world()
        if flags.no_gf:
            a_p = np.zeros(N_JOINTS)
        else:
            a_p = primitive_action(self.bundle.gf, st.joints, cw, obs_wrist,
                                   self.hand)
        if flags.no_rl:
            a_s, a_r = np.ones(N_JOINTS), np.zeros(N_JOINTS)
            act = np.clip(a_p, -1.0, 1.0)
        else:
            self.tracker = self.tracker[1:] + [obs_wrist]
            hist = np.concatenate([[p.x, p.y, p.theta] for p in self.tracker])
            obs = np.concatenate(
                [self.hand.normalize_joints(st.joints), hist, a_p])
            mean, _, _ = self.bundle.policy.forward(obs, obs_wrist.to_local(cw))
            a_s, a_r = split_raw(mean[0], flags)
            act = np.clip(a_r, -1, 1) if flags.no_gf \
                else combine_action(a_p, a_s, a_r)
        return act, a_p, a_s, a_r


def run_episode(bundle: PolicyBundle, obj, target: GraspExample, traj,
                hand: HandModel | None = None, noise: NoiseModel | None = None,
                rng: np.random.Generator | None = None,
                keep_trace: bool = True) -> tuple[LiftOutcome, EpisodeTrace]:
    """Roll one episode with the deterministic (mean) policy action.

    ``noise`` corrupts only the wrist pose the policy observes; the
    environment always steps the true wrist.  ``rng`` is only consumed by
    the noise model.
    """
    hand = hand or HandModel()
    flags = bundle.flags
    env = Hand2DEnv(hand, collisions=not flags.no_collision)
    st = env.reset(obj, ScriptedSource(traj.poses))

    obs_wrist = st.wrist if noise is None else noise.perturb(st.wrist, rng)
    driver = ActionDriver(bundle, hand, obs_wrist)
    T = HORIZON
    wr = np.zeros((T + 1, 3))
    jq = np.zeros((T + 1, N_JOINTS))
    op = np.zeros((T + 1, 3))
    aps = np.zeros((T, N_JOINTS))
    sim = np.zeros(T)
    wr[0] = (st.wrist.x, st.wrist.y, st.wrist.theta)
    jq[0] = st.joints
    op[0] = st.object.pose

    for t in range(T):
        st = env.state
        obs_wrist = st.wrist if noise is None else noise.perturb(st.wrist, rng)
        act, a_p, _, _ = driver.compute(st, obs_wrist)
        q_before = st.joints.copy()
        st = env.step(act)
        norm = np.linalg.norm(a_p)
        sim[t] = np.dot(a_p / norm, st.joints - q_before) if norm > 0 else 0.0
        aps[t] = a_p
        wr[t + 1] = (st.wrist.x, st.wrist.y, st.wrist.theta)
        jq[t + 1] = st.joints
        op[t + 1] = st.object.pose

    outcome = env.terminal_squeeze_and_lift()
    trace = EpisodeTrace(wr, jq, op, aps, sim) if keep_trace else None
    return outcome, trace


# -- evaluation protocol ----------------------------------------------------------


def select_targets(examples: list, object_id: str,
                   n: int = N_TARGETS) -> list:
    """The object's n most diverse grasp targets, in a stable order."""
    mine = [e for e in examples if e.object_id == object_id]
    return diversity_filter(mine, n) if mine else []


def evaluate_split(bundle: PolicyBundle, examples: list, objects: dict,
                   patterns: list, seeds=(0, 1, 2, 3, 4), repeats: int = 5,
                   noise: NoiseModel | None = None,
                   hand: HandModel | None = None,
                   keep_traces: bool = False) -> list[EpisodeRecord]:
    """Roll every object x N_TARGETS targets x repeats x seeds; returns records.

    Objects with fewer than N_TARGETS grasp examples are skipped with a
    warning so the adaptability histogram stays well defined.
    """
    from .trajgen import sample_trajectory

    hand = hand or HandModel()
    if noise is not None and noise.is_zero:
        noise = None
    records = []
    for oid in sorted(objects):
        targets = select_targets(examples, oid)
        if len(targets) < N_TARGETS:
            warnings.warn(f"{oid}: only {len(targets)} grasp targets, skipping")
            continue
        for seed in seeds:
            rng = np.random.default_rng(seed)
            for tid, target in enumerate(targets):
                for _ in range(repeats):
                    traj = sample_trajectory(target, patterns, rng)
                    outcome, trace = run_episode(
                        bundle, objects[oid], target, traj, hand, noise, rng,
                        keep_trace=True)
                    trans, rot = stability_metric(trace)
                    records.append(EpisodeRecord(
                        oid, tid, seed, outcome.success,
                        posture_metric(trace.joints[-1], target), trans, rot,
                        trace if keep_traces else None))
    return records


def adaptability_histogram(records: list[EpisodeRecord]) -> np.ndarray:
    """Fraction of objects whose grasp targets succeed k of 5 times, k = 0..5.

    A target counts as succeeded when any of its episodes (across repeats
    and seeds) lifted the object.
    """
    by_obj: dict[str, dict[int, bool]] = {}
    for r in records:
        by_obj.setdefault(r.object_id, {}).setdefault(r.target_id, False)
        by_obj[r.object_id][r.target_id] |= r.success
    fractions = np.zeros(N_TARGETS + 1)
    for oid, targets in by_obj.items():
        if len(targets) != N_TARGETS:
            raise ValueError(f"{oid}: expected {N_TARGETS} targets, "
                             f"saw {len(targets)}")
        fractions[sum(targets.values())] += 1
    if by_obj:
        fractions /= len(by_obj)
    return fractions


_METRICS = ("success", "posture", "stability_trans", "stability_rot")


def _per_seed_means(records: list[EpisodeRecord]) -> dict:
    seeds = sorted({r.seed for r in records})
    out = {m: [] for m in _METRICS}
    for s in seeds:
        rs = [r for r in records if r.seed == s]
        out["success"].append(np.mean([r.success for r in rs]))
        out["posture"].append(np.mean([r.posture for r in rs]))
        out["stability_trans"].append(np.mean([r.stability_trans for r in rs]))
        out["stability_rot"].append(np.mean([r.stability_rot for r in rs]))
    return out


def build_report(records_by_split: dict, config_hash: str = "unconfigured"
                 ) -> MetricsReport:
    """Aggregate stored records into per-split mean/sd and histograms.

    Pure function of the records: re-running it reproduces the report.
    """
    report = MetricsReport(config_hash=config_hash)
    for tag, records in records_by_split.items():
        if not records:
            continue
        per_seed = _per_seed_means(records)
        report.splits[tag] = {
            m: (float(np.mean(v)), float(np.std(v))) for m, v in per_seed.items()}
        report.histograms[tag] = adaptability_histogram(records)
    return report


def evaluate(bundle: PolicyBundle, dataset, objects: dict, patterns: list,
             seeds=(0, 1, 2, 3, 4), repeats: int = 5,
             noise: NoiseModel | None = None, hand: HandModel | None = None,
             config_hash: str = "unconfigured") -> MetricsReport:
    """Full protocol over every split of a dataset; see evaluate_split."""
    from .graspdata import SPLIT_TAGS

    records = {}
    for tag in SPLIT_TAGS:
        exs = dataset.by_tag(tag)
        if not exs:
            continue
        objs = {e.object_id: objects[e.object_id] for e in exs}
        records[tag] = evaluate_split(bundle, exs, objs, patterns, seeds,
                                      repeats, noise, hand)
    return build_report(records, config_hash)


# -- report and trace files -------------------------------------------------------

_REPORT_MAGIC = "graspfield-report v1"


def save_report(report: MetricsReport, path) -> None:
    lines = [f"{_REPORT_MAGIC} config={report.config_hash}"]
    for tag in sorted(report.splits):
        lines.append(f"[split {tag}]")
        for m in _METRICS:
            mean, sd = report.splits[tag][m]
            lines.append(f"{m} {mean:.6f} {sd:.6f}")
        hist = " ".join(f"{v:.6f}" for v in report.histograms[tag])
        lines.append(f"adaptability {hist}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_report(path) -> MetricsReport:
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    if not lines or not lines[0].startswith(_REPORT_MAGIC):
        raise ValueError(f"{path}: not a metrics report (bad header)")
    report = MetricsReport(config_hash=lines[0].split("config=", 1)[1])
    tag = None
    for ln in lines[1:]:
        if ln.startswith("[split "):
            tag = ln[len("[split "):-1]
            report.splits[tag] = {}
            continue
        key, rest = ln.split(" ", 1)
        if key == "adaptability":
            report.histograms[tag] = np.array([float(v) for v in rest.split()])
        else:
            mean, sd = rest.split()
            report.splits[tag][key] = (float(mean), float(sd))
    return report


def save_trace(trace: EpisodeTrace, path) -> None:
    """Line-delimited state trace: t, wrist(3), joints(6), object pose(3)."""
    with open(path, "w") as f:
        f.write("graspfield-trace v1\n")
        for t in range(trace.wrist.shape[0]):
            row = np.concatenate([trace.wrist[t], trace.joints[t],
                                  trace.object_pose[t]])
            f.write(f"{t} " + " ".join(f"{v!r}" for v in row) + "\n")


# -- plots ------------------------------------------------------------------------


def render_training_curve(curve: np.ndarray, path) -> None:
    """Curve rows: (iteration, env_steps, mean_reward, success_rate)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    curve = np.atleast_2d(np.asarray(curve, dtype=float))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.plot(curve[:, 1], curve[:, 2])
    ax1.set_xlabel("env steps")
    ax1.set_ylabel("mean episode reward")
    ax2.plot(curve[:, 1], curve[:, 3])
    ax2.set_xlabel("env steps")
    ax2.set_ylabel("success rate")
    ax2.set_ylim(-0.02, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_step_traces(traces: list[EpisodeTrace], path) -> None:
    """Per-step diagnostics: mean |a^p| and the directional shaping signal."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ap = np.mean([np.linalg.norm(tr.a_p, axis=1) for tr in traces], axis=0)
    sim = np.mean([tr.sim_trace for tr in traces], axis=0)
    ax1.plot(ap)
    ax1.set_xlabel("step")
    ax1.set_ylabel("mean |a^p|")
    ax2.plot(sim)
    ax2.set_xlabel("step")
    ax2.set_ylabel("mean <a^p/|a^p|, dJ>")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
