"""Conditional time-dependent score model over grasp joint configurations.

The model learns, by denoising score matching, the gradient of the log
density of successful grasp joints conditioned on the object boundary
cloud (expressed in the wrist frame) and a noise time t.  The network
itself predicts the sigma-scaled score (the O(1) denoising direction
(J* - J~)/sigma); divide by sigma(t) to obtain the score proper.  The
primitive action used by the residual policy is the raw network output at
the small inference time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .approx import (
    Adam, MlpSpec, SetEncoderSpec, mlp_backward, mlp_forward, mlp_init,
    save_params, load_params, set_encode, set_encode_backward, set_encoder_init,
)
from .hand import N_JOINTS, HandModel

TIME_FEATURES = 8


@dataclass(frozen=True)
class NoiseSchedule:
    beta_min: float = 0.1
    beta_max: float = 10.0
    t_min: float = 1e-5
    t_max: float = 1.0
    t_inference: float = 0.005

    def __post_init__(self):
        if not 0 < self.t_min < self.t_inference < self.t_max:
            raise ValueError("need 0 < t_min < t_inference < t_max")

    def sigma(self, t):
        """Noise level at time t: 1 - exp(-t^2 (bmax - bmin)/2 - t bmin)."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.t_max):
            raise ValueError("t outside [0, t_max]")
        expo = -0.5 * t * t * (self.beta_max - self.beta_min) - t * self.beta_min
        return 1.0 - np.exp(expo)


def time_features(t) -> np.ndarray:
    """Sinusoidal expansion of the scalar noise time."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    freqs = 2.0 ** np.arange(TIME_FEATURES // 2) * np.pi
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def perturb(j_star: np.ndarray, t, schedule: NoiseSchedule,
            rng: np.random.Generator):
    """Gaussian-perturb joints: J~ = J* + sigma(t) z.  Returns (J~, z)."""
    j_star = np.asarray(j_star, dtype=float)
    z = rng.standard_normal(j_star.shape)
    sig = schedule.sigma(t)
    sig = np.asarray(sig, dtype=float)
    if sig.ndim == 1:
        sig = sig[:, None]
    return j_star + sig * z, z


@dataclass
class ScoreModel:
    """Set encoder + joint/time embeddings + trunk, hand-differentiated."""

    schedule: NoiseSchedule
    joint_dim: int = N_JOINTS
    enc_spec: SetEncoderSpec = SetEncoderSpec((2, 64, 64))
    joint_spec: MlpSpec = None
    time_spec: MlpSpec = None
    trunk_spec: MlpSpec = None
    params: dict = field(default_factory=dict)

    @classmethod
    def create(cls, rng: np.random.Generator, schedule: NoiseSchedule | None = None,
               joint_dim: int = N_JOINTS, feat: int = 64, hidden: int = 128):
        schedule = schedule or NoiseSchedule()
        enc_spec = SetEncoderSpec((2, feat, feat))
        joint_spec = MlpSpec((joint_dim, 32))
        time_spec = MlpSpec((TIME_FEATURES, 32))
        trunk_spec = MlpSpec((feat + 64, hidden, hidden, joint_dim))
        params = {}
        params.update(set_encoder_init(enc_spec, rng, "enc."))
        params.update(mlp_init(joint_spec, rng, "joint."))
        params.update(mlp_init(time_spec, rng, "time."))
        params.update(mlp_init(trunk_spec, rng, "trunk."))
        return cls(schedule, joint_dim, enc_spec, joint_spec, time_spec,
                   trunk_spec, params)

    # -- forward / backward ---------------------------------------------------------

    def forward(self, joints: np.ndarray, clouds: np.ndarray, t):
        """Network output (sigma-scaled score) for a batch.

        joints: (B, joint_dim) in normalized space; clouds: (B, N, 2) in the
        wrist frame; t: (B,) noise times.
        """
        joints = np.atleast_2d(np.asarray(joints, dtype=float))
        clouds = np.asarray(clouds, dtype=float)
        if clouds.ndim == 2:
            clouds = clouds[None]
        t = np.atleast_1d(np.asarray(t, dtype=float))
        feat, ecache = set_encode(self.enc_spec, self.params, clouds, "enc.")
        jemb, jcache = mlp_forward(self.joint_spec, self.params, joints, "joint.")
        temb, tcache = mlp_forward(self.time_spec, self.params,
                                   time_features(t), "time.")
        trunk_in = np.concatenate([feat, jemb, temb], axis=1)
        out, trcache = mlp_forward(self.trunk_spec, self.params, trunk_in, "trunk.")
        cache = {"enc": ecache, "joint": jcache, "time": tcache, "trunk": trcache,
                 "feat_width": feat.shape[1]}
        return out, cache

    def backward(self, cache: dict, gout: np.ndarray) -> dict:
        grads, gin = mlp_backward(self.trunk_spec, self.params, cache["trunk"], gout)
        f = cache["feat_width"]
        je = self.joint_spec.widths[-1]
        gfeat, gj, gt = gin[:, :f], gin[:, f:f + je], gin[:, f + je:]
        genc, _ = set_encode_backward(self.enc_spec, self.params, cache["enc"], gfeat)
        gjoint, _ = mlp_backward(self.joint_spec, self.params, cache["joint"], gj)
        gtime, _ = mlp_backward(self.time_spec, self.params, cache["time"], gt)
        grads.update(genc)
        grads.update(gjoint)
        grads.update(gtime)
        return grads

    def score(self, joints: np.ndarray, clouds: np.ndarray, t) -> np.ndarray:
        """Score of the perturbed conditional density: network / sigma(t)."""
        out, _ = self.forward(joints, clouds, t)
        sig = np.atleast_1d(self.schedule.sigma(t))
        return out / sig[:, None]

    # -- persistence ---------------------------------------------------------------

    def save(self, path, extra: dict | None = None):
        meta = {"kind": "score-model", "joint_dim": self.joint_dim,
                "feat": self.enc_spec.point_widths[1],
                "hidden": self.trunk_spec.widths[1],
                "beta_min": self.schedule.beta_min, "beta_max": self.schedule.beta_max,
                "t_min": self.schedule.t_min, "t_max": self.schedule.t_max,
                "t_inference": self.schedule.t_inference}
        meta.update(extra or {})
        save_params(path, self.params, meta)

    @classmethod
    def load(cls, path):
        params, meta = load_params(path)
        if meta.get("kind") != "score-model":
            raise ValueError(f"not a score-model checkpoint: {meta.get('kind')!r}")
        schedule = NoiseSchedule(meta["beta_min"], meta["beta_max"], meta["t_min"],
                                 meta["t_max"], meta["t_inference"])
        model = cls.create(np.random.default_rng(0), schedule, meta["joint_dim"],
                           meta["feat"], meta["hidden"])
        model.params = params
        return model


def dsm_loss(model: ScoreModel, j_star: np.ndarray, j_tilde: np.ndarray,
             clouds: np.ndarray, t: np.ndarray):
    """Denoising score-matching loss and parameter gradients.

    With lambda(t) = sigma^2(t) and the network predicting the
    sigma-scaled score, the weighted objective reduces to
    mean ||net - (J* - J~)/sigma||^2.
    """
    j_star = np.atleast_2d(j_star)
    j_tilde = np.atleast_2d(j_tilde)
    if len(j_star) == 0:
        raise ValueError("empty batch")
    sig = np.atleast_1d(model.schedule.sigma(t))[:, None]
    target = (j_star - j_tilde) / sig
    out, cache = model.forward(j_tilde, clouds, t)
    diff = out - target
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    grads = model.backward(cache, 2.0 * diff / len(j_star))
    return loss, grads


@dataclass
class GfTrainConfig:
    n_updates: int = 3000
    lr: float = 2e-4
    batch_divisor: int = 5  # batch size = n_examples / divisor
    feat: int = 64
    hidden: int = 128
    seed: int = 0
    # Fraction of each batch conditioned on a cloud seen from a wrist pose
    # sampled along the approach path instead of the grasp pose itself.
    # Off by default: the baseline conditions on grasp wrists only, which
    # leaves mid-approach queries out of distribution.
    approach_aug: float = 0.0
    # Final learning rate for a linear decay over the run; None keeps the
    # rate constant.  Small batches make the late updates noisy enough to
    # walk a converged model back out of its optimum, so decaying the rate
    # makes the final checkpoint quality much less dependent on where
    # training happens to stop.
    lr_final: float | None = None


def wrist_frame_cloud(obj, wrist) -> np.ndarray:
    """Object boundary cloud rigidly projected into the wrist frame."""
    return wrist.to_local(obj.boundary_world())


def _approach_wrist(example, rng: np.random.Generator):
    """A wrist pose uniformly along a sampled approach to the grasp pose."""
    from .geometry import WristPose, angle_diff, wrap_angle
    from .trajgen import sample_initial_wrist

    init = sample_initial_wrist(example, rng)
    tgt = example.wrist
    u = rng.uniform()
    return WristPose(init.x + u * (tgt.x - init.x),
                     init.y + u * (tgt.y - init.y),
                     wrap_angle(init.theta + u * angle_diff(tgt.theta,
                                                            init.theta)))


def train_gf(examples: list, objects: dict, hand: HandModel | None = None,
             config: GfTrainConfig | None = None,
             schedule: NoiseSchedule | None = None):
    """Train the score model on verified grasp examples.

    ``objects`` maps object_id to ObjectShape at its rest pose; each
    example's cloud is conditioned in its own wrist frame.  Returns
    (model, loss trace).
    """
    if not examples:
        raise ValueError("empty training set")
    hand = hand or HandModel()
    config = config or GfTrainConfig()
    if not 0.0 <= config.approach_aug <= 1.0:
        raise ValueError("approach_aug must lie in [0, 1]")
    schedule = schedule or NoiseSchedule()
    rng = np.random.default_rng(config.seed)

    j_star = np.stack([hand.normalize_joints(e.joints) for e in examples])
    clouds = np.stack([wrist_frame_cloud(objects[e.object_id], e.wrist)
                       for e in examples])

    model = ScoreModel.create(rng, schedule, joint_dim=j_star.shape[1],
                              feat=config.feat, hidden=config.hidden)
    opt = Adam(lr=config.lr)
    batch = min(len(examples), max(2, len(examples) // config.batch_divisor))
    aug_n = int(round(config.approach_aug * batch))
    trace = []
    for step in range(config.n_updates):
        if config.lr_final is not None and config.n_updates > 1:
            frac = step / (config.n_updates - 1)
            opt.lr = config.lr + frac * (config.lr_final - config.lr)
        idx = rng.choice(len(examples), size=batch, replace=False)
        t = rng.uniform(schedule.t_min, schedule.t_max, size=batch)
        jt, _ = perturb(j_star[idx], t, schedule, rng)
        cl = clouds[idx]
        if aug_n:
            cl = cl.copy()
            for row in rng.choice(batch, size=aug_n, replace=False):
                e = examples[idx[row]]
                cl[row] = wrist_frame_cloud(objects[e.object_id],
                                            _approach_wrist(e, rng))
        loss, grads = dsm_loss(model, j_star[idx], jt, cl, t)
        opt.step(model.params, grads)
        trace.append(loss)
    return model, np.array(trace)


def primitive_action(model: ScoreModel, joints: np.ndarray, cloud_world: np.ndarray,
                     wrist, hand: HandModel | None = None) -> np.ndarray:
    """Denoising direction toward the grasp manifold at the inference time.

    Joints are normalized, the world-frame cloud is projected into the
    wrist frame, and the network is evaluated at t_inference.  The output
    is the sigma-scaled score: same direction as the score, O(1) scale.
    """
    hand = hand or HandModel()
    jn = hand.normalize_joints(np.asarray(joints, dtype=float))
    local = wrist.to_local(np.asarray(cloud_world, dtype=float))
    out, _ = model.forward(jn[None], local[None],
                           np.array([model.schedule.t_inference]))
    return out[0]
